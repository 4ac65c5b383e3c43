//! Image-level error metrics and distance-tolerant contour scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{OutlineMask, ScalarField};

/// PSNR of identical images.
pub const PSNR_IDENTICAL: f64 = f64::INFINITY;

pub const DEFAULT_TOLERANCE_PX: f64 = 3.0;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub nmse: f64,
    pub rmse: f64,
    pub ssim: f64,
    pub psnr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dtc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dtiou: Option<f64>,
}

impl MetricReport {
    /// `nmse`, `rmse`, `ssim` and `psnr` of `pred` against `gt`.
    pub fn compare(pred: &ScalarField, gt: &ScalarField, dynamic_range: f64, peak: f64) -> Result<Self> {
        Ok(MetricReport {
            nmse: nmse(pred, gt)?,
            rmse: rmse(pred, gt)?,
            ssim: ssim_global(pred, gt, dynamic_range)?,
            psnr: psnr(pred, gt, peak)?,
            dtc: None,
            dtiou: None,
        })
    }

    pub fn with_contours(mut self, pred: &OutlineMask, gt: &OutlineMask, tol: f64) -> Result<Self> {
        self.dtc = Some(dtc(pred, gt, tol)?);
        self.dtiou = Some(dtiou(pred, gt, tol)?);
        Ok(self)
    }
}

fn pairs<'a>(pred: &'a ScalarField, gt: &'a ScalarField) -> Result<impl Iterator<Item = (f64, f64)> + 'a> {
    pred.require_same_shape(gt.grid())?;
    Ok(pred.data().iter().copied().zip(gt.data().iter().copied()))
}

fn mse(pred: &ScalarField, gt: &ScalarField) -> Result<f64> {
    let n = pred.data().len() as f64;
    Ok(pairs(pred, gt)?.map(|(p, g)| (p - g) * (p - g)).sum::<f64>() / n)
}

/// `sum (pred - gt)^2 / sum gt^2`.
pub fn nmse(pred: &ScalarField, gt: &ScalarField) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for (p, g) in pairs(pred, gt)? {
        num += (p - g) * (p - g);
        den += g * g;
    }
    if den == 0.0 {
        return Err(Error::ZeroEnergy);
    }
    Ok(num / den)
}

pub fn rmse(pred: &ScalarField, gt: &ScalarField) -> Result<f64> {
    Ok(mse(pred, gt)?.sqrt())
}

/// Single-window SSIM over the whole image with population statistics and
/// `C1 = (0.01 L)^2`, `C2 = (0.03 L)^2`.
pub fn ssim_global(pred: &ScalarField, gt: &ScalarField, dynamic_range: f64) -> Result<f64> {
    if !(dynamic_range > 0.0) {
        return Err(Error::param("dynamic_range", format!("must be > 0, got {dynamic_range}")));
    }
    pred.require_same_shape(gt.grid())?;
    let n = pred.data().len() as f64;
    let (x, y) = (pred.data(), gt.data());
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        vx += dx * dx;
        vy += dy * dy;
        cov += dx * dy;
    }
    let (vx, vy, cov) = (vx / n, vy / n, cov / n);
    let c1 = (0.01 * dynamic_range).powi(2);
    let c2 = (0.03 * dynamic_range).powi(2);
    Ok(((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
}

/// `10 log10(peak^2 / MSE)`; identical inputs give [`PSNR_IDENTICAL`].
pub fn psnr(pred: &ScalarField, gt: &ScalarField, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::param("peak", format!("must be > 0, got {peak}")));
    }
    let m = mse(pred, gt)?;
    if m == 0.0 {
        return Ok(PSNR_IDENTICAL);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

/// Cells within Euclidean distance `tol` (in pixels) of any set cell.
pub fn within_tolerance(mask: &OutlineMask, tol: f64) -> OutlineMask {
    let (w, h) = (mask.width(), mask.height());
    let mut out = OutlineMask::empty(w, h);
    let r = tol.floor() as isize;
    let tol2 = tol * tol;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|&(dx, dy)| ((dx * dx + dy * dy) as f64) <= tol2)
        .collect();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            for &(dx, dy) in &offsets {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                    out.set(nx as usize, ny as usize, true);
                }
            }
        }
    }
    out
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol >= 0.0) {
        return Err(Error::param("tol", format!("must be >= 0, got {tol}")));
    }
    Ok(())
}

/// Fraction of ground-truth outline cells with a predicted cell within `tol`.
/// An empty ground truth scores 1.
pub fn dtc(pred: &OutlineMask, gt: &OutlineMask, tol: f64) -> Result<f64> {
    check_tol(tol)?;
    pred.require_same_shape(gt)?;
    let total = gt.count();
    if total == 0 {
        return Ok(1.0);
    }
    let near_pred = within_tolerance(pred, tol);
    let hit = gt
        .bits()
        .iter()
        .zip(near_pred.bits())
        .filter(|(g, n)| **g && **n)
        .count();
    Ok(hit as f64 / total as f64)
}

/// Matched cells of `pred ∪ gt` over `|pred ∪ gt|`, where a predicted cell
/// matches if some truth cell is within `tol` and vice versa. Two empty masks
/// score 1.
pub fn dtiou(pred: &OutlineMask, gt: &OutlineMask, tol: f64) -> Result<f64> {
    check_tol(tol)?;
    pred.require_same_shape(gt)?;
    let near_pred = within_tolerance(pred, tol);
    let near_gt = within_tolerance(gt, tol);
    let (mut union, mut matched) = (0usize, 0usize);
    for i in 0..pred.bits().len() {
        let (p, g) = (pred.bits()[i], gt.bits()[i]);
        if p || g {
            union += 1;
            if (p && near_gt.bits()[i]) || (g && near_pred.bits()[i]) {
                matched += 1;
            }
        }
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(matched as f64 / union as f64)
}
