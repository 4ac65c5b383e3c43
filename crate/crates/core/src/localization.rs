//! Fingerprint localization by K nearest neighbours in pathloss space.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::{Cell, EnvironmentMap, ScalarField};

#[derive(Clone, Debug, PartialEq)]
pub struct FingerprintDb {
    positions: Vec<(f64, f64)>,
    vectors: Vec<Vec<f64>>,
    m: usize,
    hx: f64,
    hy: f64,
}

impl FingerprintDb {
    pub fn new(positions: Vec<(f64, f64)>, vectors: Vec<Vec<f64>>, hx: f64, hy: f64) -> Result<Self> {
        if positions.len() != vectors.len() {
            return Err(Error::dims(
                format!("{} vectors", positions.len()),
                format!("{} vectors", vectors.len()),
            ));
        }
        let m = vectors.first().map_or(0, Vec::len);
        if let Some(v) = vectors.iter().find(|v| v.len() != m) {
            return Err(Error::dims(format!("length {m}"), format!("length {}", v.len())));
        }
        Ok(FingerprintDb {
            positions,
            vectors,
            m,
            hx,
            hy,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
    /// Number of base-station maps per fingerprint.
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn positions(&self) -> &[(f64, f64)] {
        &self.positions
    }
    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }
    pub fn spacing(&self) -> (f64, f64) {
        (self.hx, self.hy)
    }

    /// Same positions, vectors transformed elementwise.
    pub fn map_vectors(&self, f: impl Fn(usize, &[f64]) -> Vec<f64>) -> Result<Self> {
        let vectors = self.vectors.iter().enumerate().map(|(i, v)| f(i, v)).collect();
        FingerprintDb::new(self.positions.clone(), vectors, self.hx, self.hy)
    }
}

/// One fingerprint per `stride`-sampled pixel; static cells of `env` are
/// skipped when given.
pub fn build_db(maps: &[ScalarField], stride: usize, env: Option<&EnvironmentMap>) -> Result<FingerprintDb> {
    let first = maps.first().ok_or(Error::Empty("no maps for the fingerprint database"))?;
    if stride == 0 {
        return Err(Error::param("stride", "must be >= 1"));
    }
    let grid = first.grid();
    for m in &maps[1..] {
        m.require_same_shape(grid)?;
    }
    if let Some(env) = env {
        first.require_same_shape(env.grid())?;
    }
    let mut positions = Vec::new();
    let mut vectors = Vec::new();
    for y in (0..grid.height).step_by(stride) {
        for x in (0..grid.width).step_by(stride) {
            if env.is_some_and(|e| e.cell(x, y) == Cell::Static) {
                continue;
            }
            positions.push(grid.center(x, y));
            vectors.push(maps.iter().map(|m| m.get(x, y)).collect());
        }
    }
    FingerprintDb::new(positions, vectors, grid.hx, grid.hy)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` nearest fingerprints, ties broken by lower index.
pub fn nearest(db: &FingerprintDb, query: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::param("k", "must be >= 1"));
    }
    if k > db.len() {
        return Err(Error::KTooLarge { k, size: db.len() });
    }
    if query.len() != db.m {
        return Err(Error::dims(format!("length {}", db.m), format!("length {}", query.len())));
    }
    let mut scored: Vec<(f64, usize)> = db
        .vectors
        .iter()
        .enumerate()
        .map(|(i, v)| (sq_dist(v, query), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_unstable_by(cmp);
    Ok(scored.into_iter().map(|(_, i)| i).collect())
}

/// Unweighted mean position of the `k` nearest fingerprints.
pub fn knn_locate(db: &FingerprintDb, query: &[f64], k: usize) -> Result<(f64, f64)> {
    let idx = nearest(db, query, k)?;
    let (sx, sy) = idx
        .iter()
        .fold((0.0, 0.0), |(sx, sy), &i| (sx + db.positions[i].0, sy + db.positions[i].1));
    Ok((sx / k as f64, sy / k as f64))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalizationConfig {
    pub n_queries: usize,
    pub k: usize,
    /// Std of Gaussian noise added to each query entry, in map units.
    pub noise_std: Option<f64>,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        LocalizationConfig {
            n_queries: 3000,
            k: 5,
            noise_std: None,
        }
    }
}

/// Mean Euclidean error in meters when querying `db_pred` with vectors taken
/// from `db_truth` at uniformly drawn fingerprint positions.
pub fn evaluate_localization<R: Rng + ?Sized>(
    db_pred: &FingerprintDb,
    db_truth: &FingerprintDb,
    cfg: &LocalizationConfig,
    rng: &mut R,
) -> Result<f64> {
    if db_truth.is_empty() || db_pred.is_empty() {
        return Err(Error::Empty("fingerprint database"));
    }
    if db_pred.positions != db_truth.positions {
        return Err(Error::param("db_pred", "positions differ from db_truth"));
    }
    if cfg.n_queries == 0 {
        return Err(Error::param("n_queries", "must be >= 1"));
    }
    let noise = match cfg.noise_std {
        Some(s) if s > 0.0 => Some(Normal::new(0.0, s).map_err(|e| Error::param("noise_std", e.to_string()))?),
        _ => None,
    };
    let mut total = 0.0;
    for _ in 0..cfg.n_queries {
        let i = rng.random_range(0..db_truth.len());
        let mut query = db_truth.vectors[i].clone();
        if let Some(n) = &noise {
            for q in &mut query {
                *q += n.sample(rng);
            }
        }
        let (ex, ey) = knn_locate(db_pred, &query, cfg.k)?;
        let (tx, ty) = db_truth.positions[i];
        total += ((ex - tx).powi(2) + (ey - ty).powi(2)).sqrt();
    }
    Ok(total / cfg.n_queries as f64)
}
