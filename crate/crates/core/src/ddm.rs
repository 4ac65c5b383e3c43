//! Decoupled diffusion with a constant drift.
//!
//! The forward law attenuates the clean sample linearly to zero while noise
//! variance grows linearly: `x_t = (1 - t) x0 + sqrt(t) eps`, `t in [0, 1]`,
//! which is `x0 + int_0^t f dtau + sqrt(t) eps` with `f = -x0`. A predictor
//! supplies `(f_hat, eps_hat)`; the reverse update samples
//! `N(x_t - dt f_hat - dt / sqrt(t) eps_hat, dt (t - dt) / t)`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionState {
    pub t: f64,
    pub x: Vec<f64>,
    pub rng_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictorOutput {
    /// Predicted drift; the target is `-x0`.
    pub f_hat: Vec<f64>,
    /// Predicted standardized noise.
    pub eps_hat: Vec<f64>,
}

impl PredictorOutput {
    /// Predictions implied by a clean-sample estimate at state `(x_t, t)`.
    pub fn from_x0(x0: &[f64], x_t: &[f64], t: f64) -> Self {
        let st = t.sqrt();
        PredictorOutput {
            f_hat: x0.iter().map(|v| -v).collect(),
            eps_hat: x_t.iter().zip(x0).map(|(x, z)| (x - (1.0 - t) * z) / st).collect(),
        }
    }
}

/// Named condition channels handed to a denoiser.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Conditioning {
    channels: Vec<(String, Vec<f64>)>,
}

impl Conditioning {
    pub const STATIC: &'static str = "static";
    pub const DYNAMIC: &'static str = "dynamic";
    pub const BS: &'static str = "bs";
    pub const OUTLINE: &'static str = "outline";

    pub fn none() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, values: Vec<f64>) -> Self {
        self.insert(name, values);
        self
    }

    pub fn insert(&mut self, name: &str, values: Vec<f64>) {
        match self.channels.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = values,
            None => self.channels.push((name.to_string(), values)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.channels.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.channels.iter().map(|(n, _)| n.as_str())
    }
}

/// A predictor of `(f_hat, eps_hat)`. Implementations must be deterministic
/// for fixed inputs.
pub trait Denoiser: Sync {
    fn predict(&self, x_t: &[f64], t: f64, cond: &Conditioning) -> Result<PredictorOutput>;
}

impl<F> Denoiser for F
where
    F: Fn(&[f64], f64, &Conditioning) -> Result<PredictorOutput> + Sync,
{
    fn predict(&self, x_t: &[f64], t: f64, cond: &Conditioning) -> Result<PredictorOutput> {
        self(x_t, t, cond)
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::TimeOutOfRange { t });
    }
    Ok(())
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::dims(format!("{expected} elements"), format!("{actual} elements")));
    }
    Ok(())
}

/// Draws `x_t = (1 - t) x0 + sqrt(t) eps`. Returns the state and the noise.
pub fn forward_sample<R: Rng + ?Sized>(x0: &[f64], t: f64, rng: &mut R) -> Result<(DiffusionState, Vec<f64>)> {
    check_time(t)?;
    let noise: Vec<f64> = (0..x0.len()).map(|_| rng.sample(StandardNormal)).collect();
    let x = forward_with_noise(x0, t, &noise)?;
    Ok((
        DiffusionState {
            t,
            x,
            rng_seed: 0,
        },
        noise,
    ))
}

/// Deterministic forward map for a given noise draw.
pub fn forward_with_noise(x0: &[f64], t: f64, noise: &[f64]) -> Result<Vec<f64>> {
    check_time(t)?;
    check_len(x0.len(), noise.len())?;
    let st = t.sqrt();
    Ok(x0.iter().zip(noise).map(|(z, e)| (1.0 - t) * z + st * e).collect())
}

/// Variance of one reverse step from `t` to `t - dt`.
#[inline]
pub fn reverse_variance(t: f64, dt: f64) -> f64 {
    dt * (t - dt) / t
}

/// One reverse update from `t` to `t - dt`.
pub fn reverse_step<R: Rng + ?Sized>(
    state: &DiffusionState,
    pred: &PredictorOutput,
    dt: f64,
    rng: &mut R,
) -> Result<DiffusionState> {
    let t = state.t;
    check_time(t)?;
    if !(dt > 0.0 && dt <= t) {
        return Err(Error::InvalidStep { t, dt });
    }
    let n = state.x.len();
    check_len(n, pred.f_hat.len())?;
    check_len(n, pred.eps_hat.len())?;

    let var = reverse_variance(t, dt);
    let sd = var.max(0.0).sqrt();
    let c = dt / t.sqrt();
    let x = state
        .x
        .iter()
        .zip(&pred.f_hat)
        .zip(&pred.eps_hat)
        .map(|((x, f), e)| {
            let mean = x - dt * f - c * e;
            if sd > 0.0 {
                mean + sd * rng.sample::<f64, _>(StandardNormal)
            } else {
                mean
            }
        })
        .collect();
    let next_t = if dt == t { 0.0 } else { t - dt };
    Ok(DiffusionState {
        t: next_t,
        x,
        rng_seed: state.rng_seed,
    })
}

/// Clean-sample estimate `z_t - t f_hat - sqrt(t) eps_hat`.
pub fn one_step_reconstruct(state: &DiffusionState, pred: &PredictorOutput) -> Result<Vec<f64>> {
    let t = state.t;
    check_time(t)?;
    if t == 0.0 {
        return Err(Error::InvalidStep { t, dt: t });
    }
    check_len(state.x.len(), pred.f_hat.len())?;
    check_len(state.x.len(), pred.eps_hat.len())?;
    let st = t.sqrt();
    Ok(state
        .x
        .iter()
        .zip(&pred.f_hat)
        .zip(&pred.eps_hat)
        .map(|((z, f), e)| z - t * f - st * e)
        .collect())
}

fn mean_sq(a: &[f64], b: &[f64], op: impl Fn(f64, f64) -> f64) -> Result<f64> {
    check_len(a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::Empty("loss over an empty tensor"));
    }
    Ok(a.iter().zip(b).map(|(x, y)| op(*x, *y).powi(2)).sum::<f64>() / a.len() as f64)
}

/// Mean of `(f_hat + z0)^2`.
pub fn loss_drift(f_hat: &[f64], z0: &[f64]) -> Result<f64> {
    mean_sq(f_hat, z0, |f, z| f + z)
}

/// Mean of `(eps_hat - eps)^2`.
pub fn loss_noise(eps_hat: &[f64], eps: &[f64]) -> Result<f64> {
    mean_sq(eps_hat, eps, |a, b| a - b)
}

/// Mean of `(z0_hat - z0)^2`.
pub fn loss_recon(z0_hat: &[f64], z0: &[f64]) -> Result<f64> {
    mean_sq(z0_hat, z0, |a, b| a - b)
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub drift: f64,
    pub noise: f64,
    pub recon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            drift: 1.0,
            noise: 1.0,
            recon: 1.0,
        }
    }
}

pub fn loss_total(drift: f64, noise: f64, recon: f64, w: LossWeights) -> f64 {
    w.drift * drift + w.noise * noise + w.recon * recon
}

/// DDPM score `-eps_hat / sqrt(1 - alpha_bar)`.
pub fn ddpm_score_from_denoiser(eps_hat: &[f64], alpha_bar: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&alpha_bar) {
        return Err(Error::param("alpha_bar", format!("must lie in [0, 1), got {alpha_bar}")));
    }
    let s = (1.0 - alpha_bar).sqrt();
    Ok(eps_hat.iter().map(|e| -e / s).collect())
}

/// How the Gaussian oracle turns the posterior over `x0` into predictions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleMode {
    /// Use `E[x0 | x_t]`.
    PosteriorMean,
    /// Use one draw from `p(x0 | x_t)`, seeded from the inputs and `seed`.
    PosteriorSample { seed: u64 },
}

/// Exact predictors for data `x0 ~ N(mu0, var0)` per coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianOracle {
    pub mu0: f64,
    pub var0: f64,
    pub mode: OracleMode,
}

impl GaussianOracle {
    pub fn new(mu0: f64, var0: f64) -> Result<Self> {
        if !(var0 > 0.0) {
            return Err(Error::param("var0", format!("must be > 0, got {var0}")));
        }
        Ok(GaussianOracle {
            mu0,
            var0,
            mode: OracleMode::PosteriorMean,
        })
    }

    pub fn sampling(mut self, seed: u64) -> Self {
        self.mode = OracleMode::PosteriorSample { seed };
        self
    }

    /// Posterior precision of `x0` given `x_t`.
    pub fn posterior_precision(&self, t: f64) -> f64 {
        1.0 / self.var0 + (1.0 - t).powi(2) / t
    }

    /// `E[x0 | x_t]`.
    pub fn posterior_mean(&self, x_t: f64, t: f64) -> f64 {
        (self.mu0 / self.var0 + (1.0 - t) * x_t / t) / self.posterior_precision(t)
    }

    /// Mean and variance of the reverse chain's output when started from
    /// `x_1 ~ N(0, 1)` and driven by this oracle.
    ///
    /// Each step is affine in `x_t` plus independent Gaussian noise, so the
    /// moments follow an exact recursion. In posterior-mean mode the chain
    /// drops the posterior spread of `x0` at every step and ends with a
    /// variance below `var0`. In sampling mode it matches `(mu0, var0)`.
    pub fn terminal_moments(&self, schedule: &StepSchedule) -> (f64, f64) {
        let (mut mean, mut var) = (0.0, 1.0);
        for (t, dt) in schedule.steps() {
            let p = self.posterior_precision(t);
            let w = dt / t;
            let a = (1.0 - w) + w * (1.0 - t) / (t * p);
            let b = w * (self.mu0 / self.var0) / p;
            let extra = match self.mode {
                OracleMode::PosteriorMean => 0.0,
                OracleMode::PosteriorSample { .. } => w * w / p,
            };
            mean = a * mean + b;
            var = a * a * var + reverse_variance(t, dt) + extra;
        }
        (mean, var)
    }
}

/// Builds the Gaussian oracle as a [`Denoiser`] in posterior-mean mode.
pub fn gaussian_oracle_denoiser(mu0: f64, var0: f64) -> Result<GaussianOracle> {
    GaussianOracle::new(mu0, var0)
}

/// SplitMix64 finalizer; keyed draws for the sampling oracle.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn keyed_normal(key: u64) -> f64 {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(key);
    rng.sample(StandardNormal)
}

impl Denoiser for GaussianOracle {
    fn predict(&self, x_t: &[f64], t: f64, _cond: &Conditioning) -> Result<PredictorOutput> {
        check_time(t)?;
        if t == 0.0 {
            return Err(Error::InvalidStep { t, dt: 0.0 });
        }
        let x0: Vec<f64> = match self.mode {
            OracleMode::PosteriorMean => x_t.iter().map(|&x| self.posterior_mean(x, t)).collect(),
            OracleMode::PosteriorSample { seed } => {
                let sd = self.posterior_precision(t).recip().sqrt();
                x_t.iter()
                    .enumerate()
                    .map(|(i, &x)| {
                        let key = mix(seed ^ mix(t.to_bits() ^ mix(x.to_bits() ^ mix(i as u64))));
                        self.posterior_mean(x, t) + sd * keyed_normal(key)
                    })
                    .collect()
            }
        };
        Ok(PredictorOutput::from_x0(&x0, x_t, t))
    }
}

/// Predictors that know the clean target exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthOracle {
    pub x0: Vec<f64>,
}

impl Denoiser for TruthOracle {
    fn predict(&self, x_t: &[f64], t: f64, _cond: &Conditioning) -> Result<PredictorOutput> {
        check_len(self.x0.len(), x_t.len())?;
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::TimeOutOfRange { t });
        }
        Ok(PredictorOutput::from_x0(&self.x0, x_t, t))
    }
}

/// Treats a named condition channel as the clean target.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionEcho {
    pub channel: String,
}

impl Denoiser for ConditionEcho {
    fn predict(&self, x_t: &[f64], t: f64, cond: &Conditioning) -> Result<PredictorOutput> {
        let x0 = cond
            .get(&self.channel)
            .ok_or_else(|| Error::param("conditioning", format!("missing channel `{}`", self.channel)))?;
        TruthOracle { x0: x0.to_vec() }.predict(x_t, t, cond)
    }
}

/// Reverse-time step sizes that sum to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct StepSchedule {
    times: Vec<f64>,
}

impl StepSchedule {
    /// `steps` equal steps from `t = 1` to `t = 0`.
    pub fn uniform(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::param("steps", "need at least one step"));
        }
        let n = steps as f64;
        Ok(StepSchedule {
            times: (0..=steps).map(|k| (steps - k) as f64 / n).collect(),
        })
    }

    /// Explicit decreasing time grid starting at 1 and ending at 0.
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        let ok = times.len() >= 2
            && times[0] == 1.0
            && *times.last().unwrap() == 0.0
            && times.windows(2).all(|w| w[1] < w[0]);
        if !ok {
            return Err(Error::param("schedule", "times must decrease strictly from 1 to 0"));
        }
        Ok(StepSchedule { times })
    }

    pub fn len(&self) -> usize {
        self.times.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(t, dt)` pairs in sampling order. The last `dt` equals its `t`.
    pub fn steps(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.windows(2).map(|w| {
            let dt = if w[1] == 0.0 { w[0] } else { w[0] - w[1] };
            (w[0], dt)
        })
    }
}

/// Runs the reverse chain from `x_1 ~ N(0, I)` down to `t = 0`.
pub fn sample<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    len: usize,
    schedule: &StepSchedule,
    cond: &Conditioning,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let x: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
    sample_from(denoiser, DiffusionState { t: 1.0, x, rng_seed: 0 }, schedule, cond, rng)
}

/// Runs the reverse chain from a given state at `t = 1`.
pub fn sample_from<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    mut state: DiffusionState,
    schedule: &StepSchedule,
    cond: &Conditioning,
    rng: &mut R,
) -> Result<Vec<f64>> {
    for (t, dt) in schedule.steps() {
        state.t = t;
        let pred = denoiser.predict(&state.x, t, cond)?;
        state = reverse_step(&state, &pred, dt, rng)?;
    }
    Ok(state.x)
}
