//! Two-stage inference: an outline stage conditioned on the environment and
//! base station, then a map stage that additionally sees the outline.

use rand::Rng;

use crate::ddm::{sample, Conditioning, Denoiser, StepSchedule};
use crate::error::Result;
use crate::grid::{BsConfig, EnvironmentMap, OutlineMask, ScalarField, UnitTag};

/// Stage-1 output above this value counts as outline.
pub const OUTLINE_LEVEL: f64 = 0.5;

fn mask_values(mask: &OutlineMask) -> Vec<f64> {
    mask.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

/// Condition channels shared by both stages.
pub fn scene_conditioning(env: &EnvironmentMap, bs: &BsConfig) -> Result<Conditioning> {
    let grid = env.grid();
    let bs = bs.validated(grid)?;
    let mut one_hot = vec![0.0; grid.len()];
    if let Some((x, y)) = bs.pixel(grid) {
        one_hot[grid.index(x, y)] = 1.0;
    }
    Ok(Conditioning::none()
        .with(Conditioning::STATIC, mask_values(env.static_mask()))
        .with(Conditioning::DYNAMIC, mask_values(env.dynamic_mask()))
        .with(Conditioning::BS, one_hot))
}

/// Samples an outline with `stage1`, thresholds it, then samples the map with
/// `stage2` given the outline as an extra condition.
pub fn run_two_stage<R: Rng + ?Sized>(
    env: &EnvironmentMap,
    bs: &BsConfig,
    stage1: &dyn Denoiser,
    stage2: &dyn Denoiser,
    steps: usize,
    rng: &mut R,
) -> Result<(OutlineMask, ScalarField)> {
    let schedule = StepSchedule::uniform(steps)?;
    run_two_stage_with(env, bs, stage1, stage2, &schedule, rng)
}

pub fn run_two_stage_with<R: Rng + ?Sized>(
    env: &EnvironmentMap,
    bs: &BsConfig,
    stage1: &dyn Denoiser,
    stage2: &dyn Denoiser,
    schedule: &StepSchedule,
    rng: &mut R,
) -> Result<(OutlineMask, ScalarField)> {
    let grid = env.grid();
    let mut cond = scene_conditioning(env, bs)?;

    let outline_field = sample(stage1, grid.len(), schedule, &cond, rng)?;
    let outline = OutlineMask::new(
        grid.width,
        grid.height,
        outline_field.iter().map(|&v| v > OUTLINE_LEVEL).collect(),
    )?;

    cond.insert(Conditioning::OUTLINE, mask_values(&outline));
    let map = sample(stage2, grid.len(), schedule, &cond, rng)?;
    Ok((outline, ScalarField::new(grid, map, UnitTag::NormalizedGray)?))
}
