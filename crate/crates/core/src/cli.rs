//! Command-line surface: `gen`, `outline`, `metrics`, `localize`, `ddm-sim`
//! and `pipeline`.
//!
//! Exit codes: 0 on success, 1 on a runtime error, 2 on a usage error. Logs
//! and the resolved configuration go to stderr; results go to files or
//! stdout.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::ddm::{self, Conditioning, ConditionEcho, Denoiser, GaussianOracle, StepSchedule, TruthOracle};
use crate::error::{Error, Result};
use crate::grid::{amplitude_from_power, BsConfig, EnvironmentMap, Grid, OutlineMask, ScalarField, UnitTag};
use crate::helmholtz::{indicator_map, outline_mask, persistence_mask_with};
use crate::io::{self, Format};
use crate::localization::{build_db, evaluate_localization, LocalizationConfig};
use crate::metrics::MetricReport;
use crate::pipeline::run_two_stage;
use crate::synth::{self, Reflector};

macro_rules! overrides {
    ($($field:ident => $key:literal),* $(,)?) => {
        /// Flags mirroring every configuration key.
        #[derive(Args, Debug, Default, Clone)]
        #[command(next_help_heading = "Configuration")]
        pub struct Overrides {
            /// key=value configuration file; flags override it
            #[arg(long, global = true, value_name = "FILE")]
            pub config: Option<PathBuf>,
            $(
                #[arg(long = $key, global = true, value_name = "VALUE")]
                pub $field: Option<String>,
            )*
        }

        impl Overrides {
            fn pairs(&self) -> Vec<(&'static str, Option<&str>)> {
                vec![$(($key, self.$field.as_deref())),*]
            }
        }
    };
}

overrides! {
    seed => "seed", out_dir => "out-dir", format => "format", eps => "eps", eps_rel => "eps-rel",
    sigma => "sigma", scales => "scales", boundary => "boundary", threshold => "threshold",
    indicator => "indicator", persistence => "persistence", gray_mode => "gray-mode",
    p_min_db => "p-min-db", p_max_db => "p-max-db", gamma => "gamma", k => "k",
    wall_loss_db => "wall-loss-db", floor_db => "floor-db", reflection_order => "reflection-order",
    tx_power_dbm => "tx-power-dbm", carrier_hz => "carrier-hz", bs_height => "bs-height",
    rx_height => "rx-height", lambdas => "lambdas", steps => "steps", runs => "runs", mu0 => "mu0",
    var0 => "var0", tol => "tol", dynamic_range => "dynamic-range", peak => "peak", knn_k => "knn-k",
    n_queries => "n-queries", stride => "stride", bs_count => "bs-count", noise_db => "noise-db",
}

#[derive(Parser, Debug)]
#[command(name = "k2map", version, about = "Curvature outlines, diffusion sampling checks and radio-map evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic map for an environment and base station
    Gen(GenArgs),
    /// Extract curvature maps and outline masks from gain images
    Outline(OutlineArgs),
    /// Compare predicted maps against ground truth
    Metrics(MetricsArgs),
    /// Fingerprint localization error of predicted maps
    Localize(LocalizeArgs),
    /// Validate the reverse sampler against the Gaussian oracle
    DdmSim(DdmSimArgs),
    /// Two-stage outline + map sampling on a synthetic scene
    Pipeline(PipelineArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Model {
    FreeSpace,
    DominantPath,
    Evanescent,
    Multipath,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, value_enum, default_value = "dominant-path")]
    pub model: Model,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    /// Building mask image (bright = building); sets the grid size
    #[arg(long)]
    pub building: Option<PathBuf>,
    /// Dynamic-obstacle mask image
    #[arg(long)]
    pub dynamic: Option<PathBuf>,
    /// Base station x in meters (default: grid center)
    #[arg(long)]
    pub bs_x: Option<f64>,
    /// Base station y in meters (default: grid center)
    #[arg(long)]
    pub bs_y: Option<f64>,
    /// Output file
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct OutlineArgs {
    /// Directory of gain images
    #[arg(long, conflicts_with = "manifest")]
    pub input: Option<PathBuf>,
    /// Manifest of gain_image,building_image,antenna_file lines
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Individual gain images
    pub files: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Also score outlines (maps thresholded at 0.5) with DTC and DTIoU
    #[arg(long)]
    pub contours: bool,
}

#[derive(Args, Debug)]
pub struct LocalizeArgs {
    /// Directory of per-base-station truth maps
    #[arg(long, requires = "pred")]
    pub truth: Option<PathBuf>,
    /// Directory of per-base-station predicted maps (same basenames)
    #[arg(long, requires = "truth")]
    pub pred: Option<PathBuf>,
    /// Grid size of the synthetic scene used when no directories are given
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Std in dB of the perturbation applied to synthetic predicted maps
    #[arg(long, default_value_t = 2.0)]
    pub perturb_db: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OracleKind {
    /// Posterior-mean predictions
    Mean,
    /// Predictions from one posterior draw
    Sample,
}

#[derive(Args, Debug)]
pub struct DdmSimArgs {
    #[arg(long, value_enum, default_value = "mean")]
    pub oracle: OracleKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StageKind {
    /// Knows the stage's clean target
    Truth,
    /// Gaussian prior oracle, ignores conditions
    Gaussian,
    /// Returns the outline condition as the map
    Echo,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, value_enum, default_value = "truth")]
    pub stage1: StageKind,
    #[arg(long, value_enum, default_value = "truth")]
    pub stage2: StageKind,
    /// Building mask image instead of a random scene
    #[arg(long)]
    pub building: Option<PathBuf>,
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let cfg = match resolve_config(&cli.overrides) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return 2;
        }
    };
    eprint!("# resolved configuration\n{}", cfg.to_text());
    match execute(&cli.command, &cfg) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn resolve_config(o: &Overrides) -> std::result::Result<RunConfig, String> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &o.config {
        cfg.apply_file(path).map_err(|e| e.to_string())?;
    }
    for (key, value) in o.pairs() {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn execute(cmd: &Command, cfg: &RunConfig) -> Result<()> {
    match cmd {
        Command::Gen(a) => cmd_gen(a, cfg),
        Command::Outline(a) => cmd_outline(a, cfg),
        Command::Metrics(a) => cmd_metrics(a, cfg),
        Command::Localize(a) => cmd_localize(a, cfg),
        Command::DdmSim(a) => cmd_ddm_sim(a, cfg),
        Command::Pipeline(a) => cmd_pipeline(a, cfg),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn stdout_line(s: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{s}");
}

fn format_for(path: &Path, fallback: Format) -> Format {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => Format::Csv,
        Some("png") => Format::Png8,
        _ => fallback,
    }
}

fn bs_for(grid: Grid, x: Option<f64>, y: Option<f64>, cfg: &RunConfig) -> Result<BsConfig> {
    let (ex, ey) = grid.extent();
    BsConfig {
        x: x.unwrap_or(ex / 2.0),
        y: y.unwrap_or(ey / 2.0),
        z: cfg.bs_height,
        tx_power_dbm: cfg.tx_power_dbm,
        carrier_hz: cfg.carrier_hz,
    }
    .validated(grid)
}

fn cmd_gen(a: &GenArgs, cfg: &RunConfig) -> Result<()> {
    let env = match &a.building {
        Some(b) => io::load_environment(b, a.dynamic.as_deref())?,
        None => EnvironmentMap::empty(Grid::square(a.width, a.height)?),
    };
    let grid = env.grid();
    let bs = bs_for(grid, a.bs_x, a.bs_y, cfg)?;
    let params = cfg.propagation();
    let field = match a.model {
        Model::FreeSpace => synth::free_space_power(&env, &bs, &params)?,
        Model::DominantPath => synth::dominant_path_power(&env, &bs, &params)?,
        Model::Evanescent => synth::evanescent_field(grid, (bs.x, bs.y), &params)?,
        Model::Multipath => synth::multipath_toy(&env, &bs, &params, &Reflector::grid_boundary(grid))?.power(),
    };
    io::save_field(&a.out, &field, format_for(&a.out, cfg.format))?;
    log::info!("wrote {}", a.out.display());
    Ok(())
}

/// Stage-0 outline of a power map.
pub fn outline_of_power(power: &ScalarField, cfg: &RunConfig) -> Result<(ScalarField, OutlineMask)> {
    let amplitude = amplitude_from_power(power, 0.0)?;
    let params = cfg.helmholtz();
    let k2 = indicator_map(&amplitude, &params, cfg.indicator)?;
    let mask = if cfg.persistence {
        persistence_mask_with(&amplitude, &params, cfg.indicator)?
    } else {
        outline_mask(&k2, cfg.threshold)?
    };
    Ok((k2, mask))
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "map".into(), |s| s.to_string_lossy().into_owned())
}

fn cmd_outline(a: &OutlineArgs, cfg: &RunConfig) -> Result<()> {
    let mut inputs: Vec<PathBuf> = a.files.clone();
    if let Some(dir) = &a.input {
        inputs.extend(io::list_files(dir, &["png", "csv"])?);
    }
    if let Some(m) = &a.manifest {
        inputs.extend(io::load_manifest(m)?.into_iter().map(|e| e.gain_image));
    }
    if inputs.is_empty() {
        return Err(Error::Empty("no input maps (use --input, --manifest or file arguments)"));
    }
    ensure_dir(&cfg.out_dir)?;
    let results: Vec<Result<usize>> = inputs
        .par_iter()
        .map(|path| {
            let gray = io::load_field(path, UnitTag::NormalizedGray)?.with_unit(UnitTag::NormalizedGray);
            let power = io::gray_to_linear_power(&gray, cfg.gray())?;
            let (k2, mask) = outline_of_power(&power, cfg)?;
            let name = stem(path);
            io::save_field(&cfg.out_dir.join(format!("{name}_k2.csv")), &k2, Format::Csv)?;
            io::save_mask(&cfg.out_dir.join(format!("{name}_outline.png")), &mask, Format::Png8)?;
            Ok(mask.count())
        })
        .collect();
    for (path, r) in inputs.iter().zip(results) {
        let n = r?;
        stdout_line(&format!("{}\t{n}", path.display()));
    }
    Ok(())
}

fn paired_files(pred: &Path, truth: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let index = |dir: &Path| -> Result<BTreeMap<String, PathBuf>> {
        Ok(io::list_files(dir, &["png", "csv"])?
            .into_iter()
            .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), p))
            .collect())
    };
    let (p, t) = (index(pred)?, index(truth)?);
    if let Some(k) = p.keys().find(|k| !t.contains_key(*k)) {
        return Err(Error::param("pred", format!("`{k}` has no ground-truth counterpart")));
    }
    if let Some(k) = t.keys().find(|k| !p.contains_key(*k)) {
        return Err(Error::param("truth", format!("`{k}` has no prediction counterpart")));
    }
    if p.is_empty() {
        return Err(Error::Empty("no maps to compare"));
    }
    Ok(p.into_iter().map(|(k, pp)| {
        let tp = t[&k].clone();
        (k, pp, tp)
    }).collect())
}

fn num_value(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v > 0.0 {
        json!("+inf")
    } else if v < 0.0 {
        json!("-inf")
    } else {
        json!("nan")
    }
}

fn report_json(name: &str, r: &MetricReport) -> Value {
    let mut m = serde_json::Map::new();
    m.insert("map".into(), json!(name));
    m.insert("nmse".into(), num_value(r.nmse));
    m.insert("rmse".into(), num_value(r.rmse));
    m.insert("ssim".into(), num_value(r.ssim));
    m.insert("psnr".into(), num_value(r.psnr));
    if let Some(v) = r.dtc {
        m.insert("dtc".into(), num_value(v));
    }
    if let Some(v) = r.dtiou {
        m.insert("dtiou".into(), num_value(v));
    }
    Value::Object(m)
}

fn mean_report(rows: &[MetricReport]) -> MetricReport {
    let n = rows.len() as f64;
    let avg = |f: &dyn Fn(&MetricReport) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let avg_opt = |f: &dyn Fn(&MetricReport) -> Option<f64>| {
        rows.iter().map(f).collect::<Option<Vec<f64>>>().map(|v| v.iter().sum::<f64>() / n)
    };
    MetricReport {
        nmse: avg(&|r| r.nmse),
        rmse: avg(&|r| r.rmse),
        ssim: avg(&|r| r.ssim),
        psnr: avg(&|r| r.psnr),
        dtc: avg_opt(&|r| r.dtc),
        dtiou: avg_opt(&|r| r.dtiou),
    }
}

fn mask_of(field: &ScalarField) -> Result<OutlineMask> {
    OutlineMask::new(field.width(), field.height(), field.data().iter().map(|&v| v > 0.5).collect())
}

fn cmd_metrics(a: &MetricsArgs, cfg: &RunConfig) -> Result<()> {
    let pairs = paired_files(&a.pred, &a.truth)?;
    let rows: Vec<Result<MetricReport>> = pairs
        .par_iter()
        .map(|(_, p, t)| {
            let pred = io::load_field(p, UnitTag::NormalizedGray)?;
            let truth = io::load_field(t, UnitTag::NormalizedGray)?;
            let mut r = MetricReport::compare(&pred, &truth, cfg.dynamic_range, cfg.peak)?;
            if a.contours {
                r = r.with_contours(&mask_of(&pred)?, &mask_of(&truth)?, cfg.tol)?;
            }
            Ok(r)
        })
        .collect();
    let rows: Vec<MetricReport> = rows.into_iter().collect::<Result<_>>()?;
    let agg = mean_report(&rows);

    ensure_dir(&cfg.out_dir)?;
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let header = ["map", "nmse", "rmse", "ssim", "psnr", "dtc", "dtiou"];
    let _ = wtr.write_record(header);
    let fmt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let mut json_rows = Vec::new();
    for ((name, _, _), r) in pairs.iter().map(|p| (p.0.as_str(), (), ())).zip(rows.iter()).chain(std::iter::once((("mean", (), ()), &agg))) {
        let _ = wtr.write_record([
            name.to_string(),
            r.nmse.to_string(),
            r.rmse.to_string(),
            r.ssim.to_string(),
            r.psnr.to_string(),
            fmt(r.dtc),
            fmt(r.dtiou),
        ]);
        json_rows.push(report_json(name, r));
    }
    let csv_bytes = wtr.into_inner().map_err(|e| Error::Format {
        path: cfg.out_dir.join("metrics.csv"),
        message: e.to_string(),
    })?;
    io::write_atomic(&cfg.out_dir.join("metrics.csv"), &csv_bytes)?;
    let json_text = serde_json::to_string_pretty(&Value::Array(json_rows)).expect("json values serialize");
    io::write_atomic(&cfg.out_dir.join("metrics.json"), json_text.as_bytes())?;
    stdout_line(&format!(
        "mean nmse={} rmse={} ssim={} psnr={}",
        agg.nmse, agg.rmse, agg.ssim, agg.psnr
    ));
    Ok(())
}

fn to_db(power: &ScalarField) -> ScalarField {
    power.map(UnitTag::LinearPower, |p| 10.0 * p.log10())
}

fn cmd_localize(a: &LocalizeArgs, cfg: &RunConfig) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (truth, pred, env) = match (&a.truth, &a.pred) {
        (Some(t), Some(p)) => {
            let pairs = paired_files(p, t)?;
            let mut truth = Vec::new();
            let mut pred = Vec::new();
            for (_, pp, tp) in &pairs {
                pred.push(io::load_field(pp, UnitTag::NormalizedGray)?);
                truth.push(io::load_field(tp, UnitTag::NormalizedGray)?);
            }
            (truth, pred, None)
        }
        _ => {
            let grid = Grid::square(a.size, a.size)?;
            let env = synth::random_environment(grid, (a.size / 12).max(1), (a.size / 16).max(1), &mut rng);
            let params = cfg.propagation();
            let mut truth = Vec::new();
            for _ in 0..cfg.bs_count {
                let (px, py) = (rng.random_range(0..a.size), rng.random_range(0..a.size));
                let (px, py) = synth::nearest_free_pixel(&env, px, py).ok_or(Error::Empty("free pixel"))?;
                let bs = BsConfig::at_pixel(px, py, grid)?;
                truth.push(to_db(&synth::dominant_path_power(&env, &bs, &params)?));
            }
            let noise = rand_distr::Normal::new(0.0, a.perturb_db.max(0.0))
                .map_err(|e| Error::param("perturb-db", e.to_string()))?;
            let mut pred = Vec::with_capacity(truth.len());
            for m in &truth {
                let data = m.data().iter().map(|v| v + rand_distr::Distribution::sample(&noise, &mut rng)).collect();
                pred.push(ScalarField::new(m.grid(), data, m.unit())?);
            }
            (truth, pred, Some(env))
        }
    };
    let db_truth = build_db(&truth, cfg.stride, env.as_ref())?;
    let db_pred = build_db(&pred, cfg.stride, env.as_ref())?;
    let loc = LocalizationConfig {
        n_queries: cfg.n_queries,
        k: cfg.knn_k,
        noise_std: (cfg.noise_db > 0.0).then_some(cfg.noise_db),
    };
    let err = evaluate_localization(&db_pred, &db_truth, &loc, &mut rng)?;
    ensure_dir(&cfg.out_dir)?;
    let report = json!({ "mean_loc_error_m": num_value(err), "n_queries": loc.n_queries, "k": loc.k, "fingerprints": db_truth.len(), "m": db_truth.m() });
    io::write_atomic(&cfg.out_dir.join("localization.json"), serde_json::to_string_pretty(&report).unwrap().as_bytes())?;
    stdout_line(&format!("mean_loc_error_m={err}"));
    Ok(())
}

fn moments(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Largest error of exact-predictor recovery: one-step reconstruction at
/// `t = 0.1, ..., 1.0` and a full `steps`-step chain driven by the truth.
pub fn exact_recovery_error(cfg: &RunConfig, n: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let prior = rand_distr::Normal::new(cfg.mu0, cfg.var0.sqrt()).map_err(|e| Error::param("var0", e.to_string()))?;
    let x0: Vec<f64> = (0..n).map(|_| rand_distr::Distribution::sample(&prior, &mut rng)).collect();
    let mut worst: f64 = 0.0;
    for i in 1..=10 {
        let t = i as f64 / 10.0;
        let (state, eps) = ddm::forward_sample(&x0, t, &mut rng)?;
        let pred = ddm::PredictorOutput {
            f_hat: x0.iter().map(|v| -v).collect(),
            eps_hat: eps,
        };
        let rec = ddm::one_step_reconstruct(&state, &pred)?;
        worst = rec.iter().zip(&x0).fold(worst, |w, (a, b)| w.max((a - b).abs()));
    }
    let truth = TruthOracle { x0: x0.clone() };
    let out = ddm::sample(&truth, n, &StepSchedule::uniform(cfg.steps)?, &Conditioning::none(), &mut rng)?;
    Ok(out.iter().zip(&x0).fold(worst, |w, (a, b)| w.max((a - b).abs())))
}

fn cmd_ddm_sim(a: &DdmSimArgs, cfg: &RunConfig) -> Result<()> {
    let mut oracle = GaussianOracle::new(cfg.mu0, cfg.var0)?;
    if a.oracle == OracleKind::Sample {
        oracle = oracle.sampling(cfg.seed);
    }
    let schedule = StepSchedule::uniform(cfg.steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let runs = cfg.runs.max(2);
    let x = ddm::sample(&oracle, runs, &schedule, &Conditioning::none(), &mut rng)?;
    let (mean, var) = moments(&x);
    let n = runs as f64;
    let se_mean = (var / n).sqrt();
    let se_var = var * (2.0 / (n - 1.0)).sqrt();
    let (pred_mean, pred_var) = oracle.terminal_moments(&schedule);
    let recovery = exact_recovery_error(cfg, 1000)?;
    let report = json!({
        "oracle": format!("{:?}", a.oracle).to_lowercase(),
        "steps": cfg.steps,
        "runs": runs,
        "mean": mean,
        "var": var,
        "se_mean": se_mean,
        "se_var": se_var,
        "target_mean": cfg.mu0,
        "target_var": cfg.var0,
        "mean_within_3se": (mean - cfg.mu0).abs() <= 3.0 * se_mean,
        "var_within_3se": (var - cfg.var0).abs() <= 3.0 * se_var,
        "predicted_chain_mean": pred_mean,
        "predicted_chain_var": pred_var,
        "exact_recovery_max_err": recovery,
        "exact_recovery_ok": recovery <= 1e-10,
    });
    stdout_line(&serde_json::to_string_pretty(&report).unwrap());
    Ok(())
}

/// Clean targets for a synthetic scene: the outline mask of the
/// dominant-path power and the map as normalized dB gray levels.
pub fn scene_targets(env: &EnvironmentMap, bs: &BsConfig, cfg: &RunConfig) -> Result<(OutlineMask, ScalarField)> {
    let power = synth::dominant_path_power(env, bs, &cfg.propagation())?;
    let (_, outline) = outline_of_power(&power, cfg)?;
    let span = cfg.p_max_db - cfg.p_min_db;
    let gray = power.map(UnitTag::NormalizedGray, |p| ((10.0 * p.log10() - cfg.p_min_db) / span).clamp(0.0, 1.0));
    Ok((outline, gray))
}

fn fnv1a(bytes: &[u8], mut h: u64) -> u64 {
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Stable digest of an outline/map pair.
pub fn digest(outline: &OutlineMask, map: &ScalarField) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325;
    for b in outline.bits() {
        h = fnv1a(&[*b as u8], h);
    }
    for v in map.data() {
        h = fnv1a(&v.to_bits().to_le_bytes(), h);
    }
    h
}

fn stage(kind: StageKind, target: Vec<f64>, cfg: &RunConfig) -> Result<Box<dyn Denoiser>> {
    Ok(match kind {
        StageKind::Truth => Box::new(TruthOracle { x0: target }),
        StageKind::Gaussian => Box::new(GaussianOracle::new(cfg.mu0, cfg.var0)?),
        StageKind::Echo => Box::new(ConditionEcho {
            channel: Conditioning::OUTLINE.to_string(),
        }),
    })
}

fn cmd_pipeline(a: &PipelineArgs, cfg: &RunConfig) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let env = match &a.building {
        Some(b) => io::load_environment(b, None)?,
        None => {
            let grid = Grid::square(a.size, a.size)?;
            synth::random_environment(grid, (a.size / 12).max(1), (a.size / 16).max(1), &mut rng)
        }
    };
    let grid = env.grid();
    let (cx, cy) = (grid.width / 2, grid.height / 2);
    let (px, py) = synth::nearest_free_pixel(&env, cx, cy).ok_or(Error::Empty("free pixel for the base station"))?;
    let bs = bs_for(grid, Some(grid.center(px, py).0), Some(grid.center(px, py).1), cfg)?;

    let (true_outline, true_map) = scene_targets(&env, &bs, cfg)?;
    let outline_target = true_outline.to_field(grid)?.into_data();
    let stage1 = stage(a.stage1, outline_target, cfg)?;
    let stage2 = stage(a.stage2, true_map.data().to_vec(), cfg)?;

    let (outline, map) = run_two_stage(&env, &bs, stage1.as_ref(), stage2.as_ref(), cfg.steps, &mut rng)?;
    let map = ScalarField::new(grid, map.into_data(), UnitTag::NormalizedGray)?;

    ensure_dir(&cfg.out_dir)?;
    io::save_mask(&cfg.out_dir.join("outline.png"), &outline, Format::Png8)?;
    io::save_field(&cfg.out_dir.join("map.csv"), &map, Format::Csv)?;
    io::save_field(&cfg.out_dir.join("map.png"), &map, Format::Png8)?;

    let report = MetricReport::compare(&map, &true_map, cfg.dynamic_range, cfg.peak)
        .and_then(|r| r.with_contours(&outline, &true_outline, cfg.tol));
    let d = digest(&outline, &map);
    let mut summary = json!({
        "digest": format!("{d:016x}"),
        "outline_pixels": outline.count(),
        "bs": [bs.x, bs.y],
    });
    if let Ok(r) = report {
        summary["metrics"] = report_json("pipeline", &r);
    }
    io::write_atomic(&cfg.out_dir.join("pipeline.json"), serde_json::to_string_pretty(&summary).unwrap().as_bytes())?;
    stdout_line(&format!("digest={d:016x}"));
    Ok(())
}
