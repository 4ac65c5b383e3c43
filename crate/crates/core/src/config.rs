//! Run configuration: defaults, `key=value` config files and CLI overrides.
//!
//! Keys use the same kebab-case spelling as the command-line flags. A file is
//! applied first, then any flag given on the command line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::ddm::LossWeights;
use crate::error::{Error, Result};
use crate::helmholtz::{Boundary, Epsilon, HelmholtzParams, Indicator};
use crate::io::{Format, GrayMode};
use crate::synth::PropagationParams;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub format: Format,
    // helmholtz
    pub eps: Option<f64>,
    pub eps_rel: f64,
    pub sigma: f64,
    pub scales: Vec<f64>,
    pub boundary: Boundary,
    pub threshold: f64,
    pub indicator: Indicator,
    pub persistence: bool,
    // gray ingestion
    pub gray_mode: String,
    pub p_min_db: f64,
    pub p_max_db: f64,
    // synthgen
    pub gamma: f64,
    pub k: f64,
    pub wall_loss_db: f64,
    pub floor_db: f64,
    pub reflection_order: usize,
    pub tx_power_dbm: f64,
    pub carrier_hz: f64,
    pub bs_height: f64,
    pub rx_height: f64,
    // ddm
    pub lambdas: LossWeights,
    pub steps: usize,
    pub runs: usize,
    pub mu0: f64,
    pub var0: f64,
    // metrics
    pub tol: f64,
    pub dynamic_range: f64,
    pub peak: f64,
    // localization
    pub knn_k: usize,
    pub n_queries: usize,
    pub stride: usize,
    pub bs_count: usize,
    pub noise_db: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let h = HelmholtzParams::default();
        let p = PropagationParams::default();
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("out"),
            format: Format::Png8,
            eps: None,
            eps_rel: 1e-6,
            sigma: h.sigma,
            scales: h.scales,
            boundary: h.boundary,
            threshold: 0.0,
            indicator: Indicator::KEff,
            persistence: false,
            gray_mode: "direct".into(),
            p_min_db: -100.0,
            p_max_db: 0.0,
            gamma: p.gamma,
            k: p.k,
            wall_loss_db: p.wall_loss_db,
            floor_db: p.floor_db,
            reflection_order: p.reflection_order,
            tx_power_dbm: 23.0,
            carrier_hz: 5.9e9,
            bs_height: 25.0,
            rx_height: 1.5,
            lambdas: LossWeights::default(),
            steps: 100,
            runs: 10_000,
            mu0: 2.0,
            var0: 1.0,
            tol: crate::metrics::DEFAULT_TOLERANCE_PX,
            dynamic_range: 1.0,
            peak: 1.0,
            knn_k: 5,
            n_queries: 3000,
            stride: 1,
            bs_count: 5,
            noise_db: 0.0,
        }
    }
}

/// Every recognized key, in echo order.
pub const KEYS: &[&str] = &[
    "seed", "out-dir", "format", "eps", "eps-rel", "sigma", "scales", "boundary", "threshold", "indicator",
    "persistence", "gray-mode", "p-min-db", "p-max-db", "gamma", "k", "wall-loss-db", "floor-db",
    "reflection-order", "tx-power-dbm", "carrier-hz", "bs-height", "rx-height", "lambdas", "steps", "runs",
    "mu0", "var0", "tol", "dynamic-range", "peak", "knn-k", "n-queries", "stride", "bs-count", "noise-db",
];

fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| format!("{key}: `{value}`: {e}"))
}

fn list(key: &str, value: &str) -> std::result::Result<Vec<f64>, String> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| num::<f64>(key, s))
        .collect()
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "seed" => self.seed = num(key, value)?,
            "out-dir" => self.out_dir = PathBuf::from(value.trim()),
            "format" => self.format = value.trim().parse()?,
            "eps" => {
                self.eps = match value.trim() {
                    "" | "auto" => None,
                    v => Some(num(key, v)?),
                }
            }
            "eps-rel" => self.eps_rel = num(key, value)?,
            "sigma" => self.sigma = num(key, value)?,
            "scales" => self.scales = list(key, value)?,
            "boundary" => self.boundary = value.trim().parse()?,
            "threshold" => self.threshold = num(key, value)?,
            "indicator" => self.indicator = value.trim().parse()?,
            "persistence" => self.persistence = num(key, value)?,
            "gray-mode" => {
                let v = value.trim();
                if v != "direct" && v != "db" {
                    return Err(format!("gray-mode: `{v}` (direct|db)"));
                }
                self.gray_mode = v.to_string();
            }
            "p-min-db" => self.p_min_db = num(key, value)?,
            "p-max-db" => self.p_max_db = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "k" => self.k = num(key, value)?,
            "wall-loss-db" => self.wall_loss_db = num(key, value)?,
            "floor-db" => self.floor_db = num(key, value)?,
            "reflection-order" => self.reflection_order = num(key, value)?,
            "tx-power-dbm" => self.tx_power_dbm = num(key, value)?,
            "carrier-hz" => self.carrier_hz = num(key, value)?,
            "bs-height" => self.bs_height = num(key, value)?,
            "rx-height" => self.rx_height = num(key, value)?,
            "lambdas" => {
                let l = list(key, value)?;
                if l.len() != 3 {
                    return Err(format!("lambdas: expected 3 values, got {}", l.len()));
                }
                self.lambdas = LossWeights {
                    drift: l[0],
                    noise: l[1],
                    recon: l[2],
                };
            }
            "steps" => self.steps = num(key, value)?,
            "runs" => self.runs = num(key, value)?,
            "mu0" => self.mu0 = num(key, value)?,
            "var0" => self.var0 = num(key, value)?,
            "tol" => self.tol = num(key, value)?,
            "dynamic-range" => self.dynamic_range = num(key, value)?,
            "peak" => self.peak = num(key, value)?,
            "knn-k" => self.knn_k = num(key, value)?,
            "n-queries" => self.n_queries = num(key, value)?,
            "stride" => self.stride = num(key, value)?,
            "bs-count" => self.bs_count = num(key, value)?,
            "noise-db" => self.noise_db = num(key, value)?,
            other => return Err(format!("unknown config key `{other}`")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "seed" => self.seed.to_string(),
            "out-dir" => self.out_dir.display().to_string(),
            "format" => self.format.extension().replace("png", "png8"),
            "eps" => self.eps.map_or("auto".into(), |e| e.to_string()),
            "eps-rel" => self.eps_rel.to_string(),
            "sigma" => self.sigma.to_string(),
            "scales" => join(&self.scales),
            "boundary" => self.boundary.to_string(),
            "threshold" => self.threshold.to_string(),
            "indicator" => self.indicator.to_string(),
            "persistence" => self.persistence.to_string(),
            "gray-mode" => self.gray_mode.clone(),
            "p-min-db" => self.p_min_db.to_string(),
            "p-max-db" => self.p_max_db.to_string(),
            "gamma" => self.gamma.to_string(),
            "k" => self.k.to_string(),
            "wall-loss-db" => self.wall_loss_db.to_string(),
            "floor-db" => self.floor_db.to_string(),
            "reflection-order" => self.reflection_order.to_string(),
            "tx-power-dbm" => self.tx_power_dbm.to_string(),
            "carrier-hz" => self.carrier_hz.to_string(),
            "bs-height" => self.bs_height.to_string(),
            "rx-height" => self.rx_height.to_string(),
            "lambdas" => join(&[self.lambdas.drift, self.lambdas.noise, self.lambdas.recon]),
            "steps" => self.steps.to_string(),
            "runs" => self.runs.to_string(),
            "mu0" => self.mu0.to_string(),
            "var0" => self.var0.to_string(),
            "tol" => self.tol.to_string(),
            "dynamic-range" => self.dynamic_range.to_string(),
            "peak" => self.peak.to_string(),
            "knn-k" => self.knn_k.to_string(),
            "n-queries" => self.n_queries.to_string(),
            "stride" => self.stride.to_string(),
            "bs-count" => self.bs_count.to_string(),
            "noise-db" => self.noise_db.to_string(),
            _ => return None,
        })
    }

    /// Applies `key=value` lines; blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> std::result::Result<(), String> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key=value", n + 1))?;
            self.set(k.trim(), v.trim()).map_err(|e| format!("line {}: {e}", n + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.apply_text(&text).map_err(|message| Error::Format {
            path: path.to_path_buf(),
            message,
        })
    }

    /// Resolved configuration as `key=value` lines, loadable by
    /// [`RunConfig::apply_text`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let _ = writeln!(s, "{key}={}", self.get(key).unwrap_or_default());
        }
        s
    }

    pub fn helmholtz(&self) -> HelmholtzParams {
        HelmholtzParams {
            eps: match self.eps {
                Some(e) => Epsilon::Absolute(e),
                None => Epsilon::RelativeToMax(self.eps_rel),
            },
            sigma: self.sigma,
            scales: self.scales.clone(),
            boundary: self.boundary,
        }
    }

    pub fn propagation(&self) -> PropagationParams {
        PropagationParams {
            gamma: self.gamma,
            k: self.k,
            wall_loss_db: self.wall_loss_db,
            floor_db: self.floor_db,
            reflection_order: self.reflection_order,
        }
    }

    pub fn gray(&self) -> GrayMode {
        if self.gray_mode == "db" {
            GrayMode::DbRange {
                p_min_db: self.p_min_db,
                p_max_db: self.p_max_db,
            }
        } else {
            GrayMode::Direct
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.helmholtz().validate()?;
        self.propagation().validate()?;
        if self.steps == 0 {
            return Err(Error::param("steps", "must be >= 1"));
        }
        if self.knn_k == 0 {
            return Err(Error::param("knn-k", "must be >= 1"));
        }
        if self.stride == 0 {
            return Err(Error::param("stride", "must be >= 1"));
        }
        if !(self.var0 > 0.0) {
            return Err(Error::param("var0", "must be > 0"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::param("tol", "must be >= 0"));
        }
        if self.gray_mode == "db" && !(self.p_max_db > self.p_min_db) {
            return Err(Error::param("p-max-db", "must exceed p-min-db"));
        }
        Ok(())
    }
}
