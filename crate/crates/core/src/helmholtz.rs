//! Curvature operators on radio-map envelopes.
//!
//! Everything here works on the observable envelope `A = sqrt(I)` (or its
//! logarithm): mild Gaussian smoothing, an anisotropic 5-point Laplacian, the
//! effective wavenumber `k2_eff = -lap(A) / (A + eps)`, the gain-invariant
//! `k_log = -lap(log(A + eps))`, sign-based outline masks and their
//! cross-scale intersection. For complex fields the amplitude/phase split
//! `k^2 = |grad phi|^2 - lap(A) / A` is available, along with a residual check
//! of the radial Helmholtz equation.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ComplexField, OutlineMask, ScalarField, UnitTag};

/// How samples outside the grid are filled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Clamp to the nearest edge sample.
    #[default]
    Replicate,
    /// Reflect about the edge sample without repeating it.
    Mirror,
    /// Treat outside samples as 0.
    Zero,
}

impl std::str::FromStr for Boundary {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "replicate" => Ok(Boundary::Replicate),
            "mirror" => Ok(Boundary::Mirror),
            "zero" => Ok(Boundary::Zero),
            other => Err(format!("unknown boundary `{other}` (replicate|mirror|zero)")),
        }
    }
}

impl std::fmt::Display for Boundary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Boundary::Replicate => "replicate",
            Boundary::Mirror => "mirror",
            Boundary::Zero => "zero",
        })
    }
}

impl Boundary {
    /// Maps a possibly out-of-range index to a valid one, or `None` for a
    /// zero sample.
    #[inline]
    fn resolve(self, i: isize, n: usize) -> Option<usize> {
        let last = n as isize - 1;
        if (0..=last).contains(&i) {
            return Some(i as usize);
        }
        match self {
            Boundary::Zero => None,
            Boundary::Replicate => Some(i.clamp(0, last) as usize),
            Boundary::Mirror => {
                if last == 0 {
                    return Some(0);
                }
                let period = 2 * last;
                let mut j = i.rem_euclid(period);
                if j > last {
                    j = period - j;
                }
                Some(j as usize)
            }
        }
    }
}

/// The regularizer added to the envelope before dividing or taking logs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Epsilon {
    Absolute(f64),
    /// Fraction of the maximum of the differentiated field.
    RelativeToMax(f64),
}

impl Default for Epsilon {
    fn default() -> Self {
        Epsilon::RelativeToMax(1e-6)
    }
}

impl Epsilon {
    pub fn resolve(self, field: &ScalarField) -> f64 {
        match self {
            Epsilon::Absolute(e) => e,
            Epsilon::RelativeToMax(f) => {
                let m = field.max();
                if m.is_finite() && m > 0.0 {
                    f * m
                } else {
                    0.0
                }
            }
        }
    }

    fn validate(self) -> Result<()> {
        let v = match self {
            Epsilon::Absolute(e) | Epsilon::RelativeToMax(e) => e,
        };
        if !(v >= 0.0) {
            return Err(Error::param("eps", format!("must be >= 0, got {v}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HelmholtzParams {
    pub eps: Epsilon,
    /// Gaussian smoothing std in pixels.
    pub sigma: f64,
    /// Smoothing scales for cross-scale persistence.
    pub scales: Vec<f64>,
    pub boundary: Boundary,
}

impl Default for HelmholtzParams {
    fn default() -> Self {
        HelmholtzParams {
            eps: Epsilon::default(),
            sigma: 1.0,
            scales: vec![0.5, 1.0, 2.0],
            boundary: Boundary::Replicate,
        }
    }
}

impl HelmholtzParams {
    pub fn validate(&self) -> Result<()> {
        self.eps.validate()?;
        if !(self.sigma >= 0.0) {
            return Err(Error::param("sigma", format!("must be >= 0, got {}", self.sigma)));
        }
        if let Some(s) = self.scales.iter().find(|s| !(**s >= 0.0)) {
            return Err(Error::param("scales", format!("must be >= 0, got {s}")));
        }
        Ok(())
    }
}

/// Which curvature indicator drives an outline.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Indicator {
    #[default]
    KEff,
    KLog,
}

impl std::str::FromStr for Indicator {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "k-eff" | "k_eff" | "keff" => Ok(Indicator::KEff),
            "k-log" | "k_log" | "klog" => Ok(Indicator::KLog),
            other => Err(format!("unknown indicator `{other}` (k-eff|k-log)")),
        }
    }
}

impl std::fmt::Display for Indicator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Indicator::KEff => "k-eff",
            Indicator::KLog => "k-log",
        })
    }
}

/// Normalized Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|j| (-((j * j) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|w| w / total).collect()
}

fn convolve_rows(data: &[f64], width: usize, height: usize, taps: &[f64], boundary: Boundary) -> Vec<f64> {
    let radius = (taps.len() / 2) as isize;
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        let row = &data[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (t, w) in taps.iter().enumerate() {
                if let Some(i) = boundary.resolve(x as isize + t as isize - radius, width) {
                    acc += w * row[i];
                }
            }
            out[y * width + x] = acc;
        }
    }
    out
}

fn convolve_cols(data: &[f64], width: usize, height: usize, taps: &[f64], boundary: Boundary) -> Vec<f64> {
    let radius = (taps.len() / 2) as isize;
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        for (t, w) in taps.iter().enumerate() {
            let Some(src) = boundary.resolve(y as isize + t as isize - radius, height) else {
                continue;
            };
            let src_row = &data[src * width..(src + 1) * width];
            let dst_row = &mut out[y * width..(y + 1) * width];
            for (d, s) in dst_row.iter_mut().zip(src_row) {
                *d += w * s;
            }
        }
    }
    out
}

/// Separable Gaussian blur with `sigma` in pixels; `sigma = 0` is the
/// identity.
pub fn gaussian_smooth(field: &ScalarField, sigma: f64, boundary: Boundary) -> Result<ScalarField> {
    if !(sigma >= 0.0) {
        return Err(Error::param("sigma", format!("must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(field.clone());
    }
    let taps = gaussian_kernel(sigma);
    let (w, h) = (field.width(), field.height());
    let rows = convolve_rows(field.data(), w, h, &taps, boundary);
    let both = convolve_cols(&rows, w, h, &taps, boundary);
    ScalarField::new(field.grid(), both, field.unit())
}

/// `d2/dx2 + d2/dy2` with the 3-point stencil on each axis, scaled by `h_x`
/// and `h_y` respectively.
pub fn laplacian_5pt(field: &ScalarField, boundary: Boundary) -> Result<ScalarField> {
    let (w, h) = (field.width(), field.height());
    if w < 3 || h < 3 {
        return Err(Error::GridTooSmall {
            width: w,
            height: h,
            min: 3,
        });
    }
    let (ix2, iy2) = (1.0 / (field.hx() * field.hx()), 1.0 / (field.hy() * field.hy()));
    let d = field.data();
    let mut out = vec![0.0; d.len()];

    let at = |x: isize, y: isize| -> f64 {
        match (boundary.resolve(x, w), boundary.resolve(y, h)) {
            (Some(x), Some(y)) => d[y * w + x],
            _ => 0.0,
        }
    };

    for y in 0..h {
        let interior_row = y > 0 && y + 1 < h;
        for x in 0..w {
            let c = d[y * w + x];
            let (l, r, u, dn) = if interior_row && x > 0 && x + 1 < w {
                (d[y * w + x - 1], d[y * w + x + 1], d[(y - 1) * w + x], d[(y + 1) * w + x])
            } else {
                let (xi, yi) = (x as isize, y as isize);
                (at(xi - 1, yi), at(xi + 1, yi), at(xi, yi - 1), at(xi, yi + 1))
            };
            out[y * w + x] = (l - 2.0 * c + r) * ix2 + (u - 2.0 * c + dn) * iy2;
        }
    }
    ScalarField::new(field.grid(), out, field.unit())
}

fn require_amplitude(amplitude: &ScalarField) -> Result<()> {
    amplitude.require_unit(UnitTag::Amplitude)?;
    amplitude.require_non_negative(0.0)
}

/// Effective wavenumber `-lap(A) / (A + eps)` of the smoothed envelope.
pub fn k_eff_map(amplitude: &ScalarField, params: &HelmholtzParams) -> Result<ScalarField> {
    params.validate()?;
    require_amplitude(amplitude)?;
    let smooth = gaussian_smooth(amplitude, params.sigma, params.boundary)?;
    let eps = params.eps.resolve(&smooth);
    let lap = laplacian_5pt(&smooth, params.boundary)?;
    lap.zip_map(&smooth, UnitTag::KSquared, |l, a| -l / (a + eps))
}

/// Log-curvature `-lap(log(A + eps))`. Smoothing is applied to the log
/// envelope, which keeps the result independent of a global gain.
pub fn k_log_map(amplitude: &ScalarField, params: &HelmholtzParams) -> Result<ScalarField> {
    params.validate()?;
    require_amplitude(amplitude)?;
    let eps = params.eps.resolve(amplitude);
    let log_a = amplitude.map(UnitTag::LogAmplitude, |a| (a + eps).ln());
    let smooth = gaussian_smooth(&log_a, params.sigma, params.boundary)?;
    let lap = laplacian_5pt(&smooth, params.boundary)?;
    Ok(lap.map(UnitTag::KSquared, |l| -l))
}

/// Dispatches to [`k_eff_map`] or [`k_log_map`].
pub fn indicator_map(amplitude: &ScalarField, params: &HelmholtzParams, indicator: Indicator) -> Result<ScalarField> {
    match indicator {
        Indicator::KEff => k_eff_map(amplitude, params),
        Indicator::KLog => k_log_map(amplitude, params),
    }
}

/// Pixels where the indicator is strictly below `threshold`. NaN never
/// qualifies.
pub fn outline_mask(k2: &ScalarField, threshold: f64) -> Result<OutlineMask> {
    k2.require_unit(UnitTag::KSquared)?;
    OutlineMask::new(
        k2.width(),
        k2.height(),
        k2.data().iter().map(|&v| v < threshold).collect(),
    )
}

/// Pixels whose `k_log` is negative at every scale in `params.scales`.
pub fn persistence_mask(amplitude: &ScalarField, params: &HelmholtzParams) -> Result<OutlineMask> {
    persistence_mask_with(amplitude, params, Indicator::KLog)
}

pub fn persistence_mask_with(
    amplitude: &ScalarField,
    params: &HelmholtzParams,
    indicator: Indicator,
) -> Result<OutlineMask> {
    if params.scales.is_empty() {
        return Err(Error::param("scales", "persistence needs at least one scale"));
    }
    let mut acc: Option<OutlineMask> = None;
    for &sigma in &params.scales {
        let at_scale = HelmholtzParams {
            sigma,
            ..params.clone()
        };
        let mask = outline_mask(&indicator_map(amplitude, &at_scale, indicator)?, 0.0)?;
        acc = Some(match acc {
            None => mask,
            Some(prev) => prev.and(&mask)?,
        });
    }
    Ok(acc.expect("scales is non-empty"))
}

/// Central-difference phase gradient with each difference wrapped into
/// `(-pi, pi]`. One-sided at the grid edges.
pub fn phase_gradient(u: &ComplexField) -> (ScalarField, ScalarField) {
    let grid = u.grid();
    let (w, h) = (grid.width, grid.height);
    let dphi = |a: Complex64, b: Complex64| (b * a.conj()).arg();
    let gx = ScalarField::from_fn(grid, UnitTag::KSquared, |x, y| {
        let (lo, hi) = (x.saturating_sub(1), (x + 1).min(w - 1));
        if lo == hi {
            return 0.0;
        }
        dphi(u.get(lo, y), u.get(hi, y)) / ((hi - lo) as f64 * grid.hx)
    });
    let gy = ScalarField::from_fn(grid, UnitTag::KSquared, |x, y| {
        let (lo, hi) = (y.saturating_sub(1), (y + 1).min(h - 1));
        if lo == hi {
            return 0.0;
        }
        dphi(u.get(x, lo), u.get(x, hi)) / ((hi - lo) as f64 * grid.hy)
    });
    (gx, gy)
}

/// Result of the amplitude/phase split.
#[derive(Clone, Debug, PartialEq)]
pub struct AmpPhaseK2 {
    /// `phase_term + curvature_term`; NaN where invalid.
    pub k2: ScalarField,
    /// Discrete `|grad phi|^2`.
    pub phase_term: ScalarField,
    /// `-lap(A) / (A + eps)`.
    pub curvature_term: ScalarField,
    /// Pixels whose modulus and stencil neighbours clear `10 * eps`.
    pub valid: OutlineMask,
}

impl AmpPhaseK2 {
    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.k2
            .data()
            .iter()
            .zip(self.valid.bits())
            .filter_map(|(v, ok)| ok.then_some(*v))
    }
}

/// `k^2 = |grad phi|^2 - lap(A) / (A + eps)` for `u = A e^{i phi}`.
///
/// The squared phase gradient on each axis is the mean of the forward and
/// backward chord terms `(2 - 2 cos(dphi)) / h^2`, which is insensitive to
/// phase wrapping and equals the 5-point dispersion relation exactly for a
/// plane wave.
pub fn k2_from_amp_phase(u: &ComplexField, params: &HelmholtzParams) -> Result<AmpPhaseK2> {
    params.validate()?;
    let grid = u.grid();
    let (w, h) = (grid.width, grid.height);
    if w < 3 || h < 3 {
        return Err(Error::GridTooSmall {
            width: w,
            height: h,
            min: 3,
        });
    }
    let amplitude = gaussian_smooth(&u.modulus(), params.sigma, params.boundary)?;
    let eps = params.eps.resolve(&amplitude);
    let lap = laplacian_5pt(&amplitude, params.boundary)?;
    let curvature_term = lap.zip_map(&amplitude, UnitTag::KSquared, |l, a| -l / (a + eps))?;

    let floor = 10.0 * eps;
    let ok = |z: Complex64| {
        let m = z.norm();
        if floor > 0.0 {
            m >= floor
        } else {
            m > 0.0
        }
    };
    let chord = |a: Complex64, b: Complex64| 2.0 - 2.0 * (b * a.conj()).arg().cos();
    let axis_term = |c: Complex64, prev: Option<Complex64>, next: Option<Complex64>, h2: f64| {
        let mut sum = 0.0;
        let mut n = 0.0;
        for nb in [prev, next].into_iter().flatten() {
            sum += chord(c, nb);
            n += 1.0;
        }
        sum / (n * h2)
    };
    let (hx2, hy2) = (grid.hx * grid.hx, grid.hy * grid.hy);

    let mut phase = Vec::with_capacity(grid.len());
    let mut valid = Vec::with_capacity(grid.len());
    for y in 0..h {
        for x in 0..w {
            let c = u.get(x, y);
            let left = (x > 0).then(|| u.get(x - 1, y));
            let right = (x + 1 < w).then(|| u.get(x + 1, y));
            let up = (y > 0).then(|| u.get(x, y - 1));
            let down = (y + 1 < h).then(|| u.get(x, y + 1));
            let all_ok = ok(c) && [left, right, up, down].into_iter().flatten().all(ok);
            valid.push(all_ok);
            phase.push(axis_term(c, left, right, hx2) + axis_term(c, up, down, hy2));
        }
    }
    let phase_term = ScalarField::new(grid, phase, UnitTag::KSquared)?;
    let valid = OutlineMask::new(w, h, valid)?;
    let k2_data = phase_term
        .data()
        .iter()
        .zip(curvature_term.data())
        .zip(valid.bits())
        .map(|((p, c), ok)| if *ok { p + c } else { f64::NAN })
        .collect();
    Ok(AmpPhaseK2 {
        k2: ScalarField::new(grid, k2_data, UnitTag::KSquared)?,
        phase_term,
        curvature_term,
        valid,
    })
}

/// Largest `|u'' + (2/r) u' + k^2 u|` over interior samples, with
/// three-point derivatives on a possibly non-uniform radial grid.
pub fn helmholtz_radial_residual(r: &[f64], u: &[Complex64], k: f64) -> Result<f64> {
    if r.len() < 3 {
        return Err(Error::Empty("radial residual needs at least 3 samples"));
    }
    if r.len() != u.len() {
        return Err(Error::dims(format!("{} values", r.len()), format!("{} values", u.len())));
    }
    if !(r[0] > 0.0) || r.windows(2).any(|p| !(p[1] > p[0])) {
        return Err(Error::param("r_samples", "must be positive and strictly increasing"));
    }
    let k2 = k * k;
    let mut worst: f64 = 0.0;
    for i in 1..r.len() - 1 {
        let (h1, h2) = (r[i] - r[i - 1], r[i + 1] - r[i]);
        let s = h1 + h2;
        let d1 = u[i - 1] * (-h2 / (h1 * s)) + u[i] * ((h2 - h1) / (h1 * h2)) + u[i + 1] * (h1 / (h2 * s));
        let d2 = (u[i - 1] / (h1 * s) - u[i] / (h1 * h2) + u[i + 1] / (h2 * s)) * 2.0;
        let res = d2 + d1 * (2.0 / r[i]) + u[i] * k2;
        worst = worst.max(res.norm());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn field(w: usize, h: usize, unit: UnitTag, f: impl FnMut(usize, usize) -> f64) -> ScalarField {
        ScalarField::from_fn(Grid::square(w, h).unwrap(), unit, f)
    }

    #[test]
    fn boundary_resolution() {
        assert_eq!(Boundary::Replicate.resolve(-2, 5), Some(0));
        assert_eq!(Boundary::Replicate.resolve(7, 5), Some(4));
        assert_eq!(Boundary::Mirror.resolve(-1, 5), Some(1));
        assert_eq!(Boundary::Mirror.resolve(5, 5), Some(3));
        assert_eq!(Boundary::Mirror.resolve(-9, 5), Some(1));
        assert_eq!(Boundary::Mirror.resolve(3, 1), Some(0));
        assert_eq!(Boundary::Zero.resolve(-1, 5), None);
    }

    #[test]
    fn kernel_is_normalized_and_truncated() {
        let k = gaussian_kernel(1.0);
        assert_eq!(k.len(), 7);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(gaussian_kernel(0.4).len(), 5);
        assert_eq!(gaussian_kernel(0.0), vec![1.0]);
    }

    #[test]
    fn smoothing_constant_and_identity() {
        let f = field(9, 7, UnitTag::Amplitude, |_, _| 3.5);
        for b in [Boundary::Replicate, Boundary::Mirror] {
            let s = gaussian_smooth(&f, 1.3, b).unwrap();
            assert!(s.data().iter().all(|v| (v - 3.5).abs() < 1e-14));
        }
        let g = field(5, 5, UnitTag::Amplitude, |x, y| (x * 7 + y) as f64);
        assert_eq!(gaussian_smooth(&g, 0.0, Boundary::Zero).unwrap(), g);
        assert!(gaussian_smooth(&g, -1.0, Boundary::Zero).is_err());
    }

    #[test]
    fn laplacian_impulse_and_constant() {
        let imp = field(5, 5, UnitTag::Amplitude, |x, y| if (x, y) == (2, 2) { 1.0 } else { 0.0 });
        let l = laplacian_5pt(&imp, Boundary::Zero).unwrap();
        assert_eq!(l.get(2, 2), -4.0);
        for (x, y) in [(1, 2), (3, 2), (2, 1), (2, 3)] {
            assert_eq!(l.get(x, y), 1.0);
        }
        assert_eq!(l.get(1, 1), 0.0);
        let c = field(4, 4, UnitTag::Amplitude, |_, _| 2.0);
        assert!(laplacian_5pt(&c, Boundary::Replicate).unwrap().data().iter().all(|&v| v == 0.0));
        let tiny = field(2, 5, UnitTag::Amplitude, |_, _| 1.0);
        assert!(matches!(laplacian_5pt(&tiny, Boundary::Zero), Err(Error::GridTooSmall { .. })));
    }

    #[test]
    fn laplacian_anisotropic_spacing() {
        let grid = Grid::new(7, 7, 0.5, 2.0).unwrap();
        // x^2 + y^2 in physical units has Laplacian 4
        let f = ScalarField::from_fn(grid, UnitTag::Amplitude, |x, y| {
            let (px, py) = grid.center(x, y);
            px * px + py * py
        });
        let l = laplacian_5pt(&f, Boundary::Replicate).unwrap();
        assert!((l.get(3, 3) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn outline_strict_inequality() {
        let k = ScalarField::new(Grid::square(3, 1).unwrap(), vec![-1.0, 0.0, 1.0], UnitTag::KSquared).unwrap();
        assert_eq!(outline_mask(&k, 0.0).unwrap().bits(), &[true, false, false]);
        let pos = field(4, 4, UnitTag::KSquared, |_, _| 0.5);
        assert_eq!(outline_mask(&pos, 0.0).unwrap().count(), 0);
        let wrong = field(4, 4, UnitTag::Amplitude, |_, _| 0.5);
        assert!(outline_mask(&wrong, 0.0).is_err());
    }

    #[test]
    fn constant_envelope_has_no_curvature() {
        let a = field(8, 8, UnitTag::Amplitude, |_, _| 0.7);
        let p = HelmholtzParams::default();
        assert!(k_eff_map(&a, &p).unwrap().data().iter().all(|v| v.abs() < 1e-12));
        assert!(k_log_map(&a, &p).unwrap().data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn persistence_needs_scales() {
        let a = field(8, 8, UnitTag::Amplitude, |_, _| 0.7);
        let p = HelmholtzParams {
            scales: vec![],
            ..Default::default()
        };
        assert!(persistence_mask(&a, &p).is_err());
    }

    #[test]
    fn radial_residual_errors() {
        let z = Complex64::new(0.0, 0.0);
        assert!(helmholtz_radial_residual(&[1.0, 2.0], &[z, z], 1.0).is_err());
        assert!(helmholtz_radial_residual(&[1.0, 1.0, 2.0], &[z, z, z], 1.0).is_err());
        assert!(helmholtz_radial_residual(&[0.0, 1.0, 2.0], &[z, z, z], 1.0).is_err());
        assert_eq!(helmholtz_radial_residual(&[1.0, 2.0, 3.0], &[z, z, z], 1.0).unwrap(), 0.0);
    }
}
