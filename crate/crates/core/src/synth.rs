//! Synthetic ground-truth fields: free space, a straight-ray dominant-path
//! surrogate, evanescent decay, plane waves and a toy image-source multipath
//! model with axis-aligned mirrors.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BsConfig, Cell, ComplexField, EnvironmentMap, Grid, ScalarField, UnitTag};

pub const MAX_REFLECTION_ORDER: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationParams {
    /// Evanescent decay rate in 1/m.
    pub gamma: f64,
    /// Wavenumber in rad/m.
    pub k: f64,
    /// Loss per dynamic-obstacle cell crossed.
    pub wall_loss_db: f64,
    /// Power assigned to shielded cells.
    pub floor_db: f64,
    pub reflection_order: usize,
}

impl Default for PropagationParams {
    fn default() -> Self {
        PropagationParams {
            gamma: 0.1,
            k: 0.5,
            wall_loss_db: 10.0,
            floor_db: -150.0,
            reflection_order: 2,
        }
    }
}

impl PropagationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) {
            return Err(Error::param("gamma", format!("must be >= 0, got {}", self.gamma)));
        }
        if !(self.k > 0.0) {
            return Err(Error::param("k", format!("must be > 0, got {}", self.k)));
        }
        if self.reflection_order > MAX_REFLECTION_ORDER {
            return Err(Error::param(
                "reflection_order",
                format!("at most {MAX_REFLECTION_ORDER}, got {}", self.reflection_order),
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn floor_linear(&self) -> f64 {
        db_to_linear(self.floor_db)
    }
}

#[inline]
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[inline]
pub fn linear_to_db(p: f64) -> f64 {
    10.0 * p.log10()
}

/// Visits every cell crossed by the segment between two physical points, in
/// order, starting with the cell holding `from` and ending with the cell
/// holding `to`. A segment passing exactly through a cell corner steps
/// diagonally, so each visited cell is reported once.
pub fn cells_on_segment(
    grid: Grid,
    from: (f64, f64),
    to: (f64, f64),
    mut visit: impl FnMut(usize, usize) -> bool,
) {
    let (Some(start), Some(end)) = (grid.cell_of(from.0, from.1), grid.cell_of(to.0, to.1)) else {
        return;
    };
    let (px, py) = (from.0 / grid.hx, from.1 / grid.hy);
    let (dx, dy) = (to.0 / grid.hx - px, to.1 / grid.hy - py);
    let (mut cx, mut cy) = (start.0 as i64, start.1 as i64);
    let (ex, ey) = (end.0 as i64, end.1 as i64);

    let step_x = if dx > 0.0 { 1 } else { -1 };
    let step_y = if dy > 0.0 { 1 } else { -1 };
    let mut t_max_x = if dx > 0.0 {
        (cx as f64 + 1.0 - px) / dx
    } else if dx < 0.0 {
        (px - cx as f64) / -dx
    } else {
        f64::INFINITY
    };
    let mut t_max_y = if dy > 0.0 {
        (cy as f64 + 1.0 - py) / dy
    } else if dy < 0.0 {
        (py - cy as f64) / -dy
    } else {
        f64::INFINITY
    };
    let t_delta_x = if dx != 0.0 { 1.0 / dx.abs() } else { f64::INFINITY };
    let t_delta_y = if dy != 0.0 { 1.0 / dy.abs() } else { f64::INFINITY };

    let budget = (ex - cx).abs() + (ey - cy).abs() + 1;
    for _ in 0..=budget {
        if !visit(cx as usize, cy as usize) || (cx == ex && cy == ey) {
            return;
        }
        if t_max_x < t_max_y {
            cx += step_x;
            t_max_x += t_delta_x;
        } else if t_max_y < t_max_x {
            cy += step_y;
            t_max_y += t_delta_y;
        } else {
            cx += step_x;
            cy += step_y;
            t_max_x += t_delta_x;
            t_max_y += t_delta_y;
        }
        if cx < 0 || cy < 0 || cx as usize >= grid.width || cy as usize >= grid.height {
            return;
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Crossings {
    dynamic: usize,
    blocked: bool,
}

/// Obstacles met on the way from `from` to `to`, excluding the source cell.
fn crossings(env: &EnvironmentMap, from: (f64, f64), to: (f64, f64)) -> Crossings {
    let mut acc = Crossings::default();
    let mut first = true;
    cells_on_segment(env.grid(), from, to, |x, y| {
        if first {
            first = false;
            return true;
        }
        match env.cell(x, y) {
            Cell::Static => {
                acc.blocked = true;
                return false;
            }
            Cell::Dynamic => acc.dynamic += 1,
            Cell::Free => {}
        }
        true
    });
    acc
}

#[inline]
fn clamped_distance(grid: Grid, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (a.0 - b.0, a.1 - b.1);
    (dx * dx + dy * dy).sqrt().max(grid.hx.min(grid.hy))
}

fn par_field(grid: Grid, unit: UnitTag, f: impl Fn(usize, usize) -> f64 + Sync) -> ScalarField {
    let data: Vec<f64> = (0..grid.height)
        .into_par_iter()
        .flat_map_iter(|y| {
            let f = &f;
            (0..grid.width).map(move |x| f(x, y))
        })
        .collect();
    ScalarField::new(grid, data, unit).expect("row-major fill has grid length")
}

/// Inverse-square power normalized to 1 at 1 m; static interiors hold the
/// floor power.
pub fn free_space_power(
    env: &EnvironmentMap,
    bs: &BsConfig,
    params: &PropagationParams,
) -> Result<ScalarField> {
    let grid = env.grid();
    bs.validated(grid)?;
    let floor = params.floor_linear();
    let src = (bs.x, bs.y);
    Ok(par_field(grid, UnitTag::LinearPower, |x, y| {
        if env.cell(x, y) == Cell::Static {
            return floor;
        }
        let r = clamped_distance(grid, grid.center(x, y), src);
        1.0 / (r * r)
    }))
}

/// Straight-ray surrogate of a dominant-path model: free-space power minus
/// `wall_loss_db` per dynamic cell crossed, floor power behind any static
/// cell.
pub fn dominant_path_power(
    env: &EnvironmentMap,
    bs: &BsConfig,
    params: &PropagationParams,
) -> Result<ScalarField> {
    let grid = env.grid();
    bs.validated(grid)?;
    let floor = params.floor_linear();
    let src = (bs.x, bs.y);
    Ok(par_field(grid, UnitTag::LinearPower, |x, y| {
        if env.cell(x, y) == Cell::Static {
            return floor;
        }
        let dst = grid.center(x, y);
        let hits = crossings(env, src, dst);
        if hits.blocked {
            return floor;
        }
        let r = clamped_distance(grid, dst, src);
        let fs = 1.0 / (r * r);
        if hits.dynamic == 0 {
            fs
        } else {
            (fs * db_to_linear(-params.wall_loss_db * hits.dynamic as f64)).max(floor)
        }
    }))
}

/// Amplitude `e^{-gamma r} / r` around `center`.
pub fn evanescent_field(grid: Grid, center: (f64, f64), params: &PropagationParams) -> Result<ScalarField> {
    if !(params.gamma >= 0.0) {
        return Err(Error::param("gamma", format!("must be >= 0, got {}", params.gamma)));
    }
    let gamma = params.gamma;
    Ok(par_field(grid, UnitTag::Amplitude, |x, y| {
        let r = clamped_distance(grid, grid.center(x, y), center);
        (-gamma * r).exp() / r
    }))
}

/// Unit-modulus plane wave `e^{i (kx x + ky y)}` sampled at pixel centers.
pub fn plane_wave(grid: Grid, k_vec: (f64, f64)) -> ComplexField {
    ComplexField::from_fn(grid, |x, y| {
        let (px, py) = grid.center(x, y);
        Complex64::from_polar(1.0, k_vec.0 * px + k_vec.1 * py)
    })
}

/// Infinite, axis-aligned, perfectly reflecting wall.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Reflector {
    /// The line `x = c` (meters).
    Vertical(f64),
    /// The line `y = c` (meters).
    Horizontal(f64),
}

impl Reflector {
    /// The four outer edges of the grid.
    pub fn grid_boundary(grid: Grid) -> Vec<Reflector> {
        let (ex, ey) = grid.extent();
        vec![
            Reflector::Vertical(0.0),
            Reflector::Vertical(ex),
            Reflector::Horizontal(0.0),
            Reflector::Horizontal(ey),
        ]
    }

    pub fn mirror(&self, p: (f64, f64)) -> (f64, f64) {
        match *self {
            Reflector::Vertical(c) => (2.0 * c - p.0, p.1),
            Reflector::Horizontal(c) => (p.0, 2.0 * c - p.1),
        }
    }

    /// `p` moved exactly onto the wall line.
    fn snap(&self, p: (f64, f64)) -> (f64, f64) {
        match *self {
            Reflector::Vertical(c) => (c, p.1),
            Reflector::Horizontal(c) => (p.0, c),
        }
    }

    /// Signed offset of `p` from the wall line.
    fn side(&self, p: (f64, f64)) -> f64 {
        match *self {
            Reflector::Vertical(c) => p.0 - c,
            Reflector::Horizontal(c) => p.1 - c,
        }
    }

    /// Parameter `s` in (0, 1) where the segment `a -> b` meets the wall.
    fn hit(&self, a: (f64, f64), b: (f64, f64)) -> Option<f64> {
        let (sa, sb) = (self.side(a), self.side(b));
        let denom = sa - sb;
        if denom == 0.0 {
            return None;
        }
        let s = sa / denom;
        (s > 0.0 && s < 1.0).then_some(s)
    }

    fn separates(&self, a: (f64, f64), b: (f64, f64)) -> bool {
        let (sa, sb) = (self.side(a), self.side(b));
        (sa < 0.0 && sb > 0.0) || (sa > 0.0 && sb < 0.0)
    }
}

/// An image source and the wall sequence that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSource {
    pub position: (f64, f64),
    pub walls: Vec<usize>,
}

/// All image sources up to `order` reflections, direct source first. A wall
/// never reflects twice in a row.
pub fn image_sources(source: (f64, f64), reflectors: &[Reflector], order: usize) -> Vec<ImageSource> {
    let mut out = vec![ImageSource {
        position: source,
        walls: Vec::new(),
    }];
    let mut frontier = 0..1;
    for _ in 0..order {
        let start = out.len();
        for i in frontier.clone() {
            for (w, wall) in reflectors.iter().enumerate() {
                if out[i].walls.last() == Some(&w) {
                    continue;
                }
                let mut walls = out[i].walls.clone();
                walls.push(w);
                let position = wall.mirror(out[i].position);
                out.push(ImageSource { position, walls });
            }
        }
        frontier = start..out.len();
    }
    out
}

/// Reflection points of the path from `source` to `receiver` through the
/// image's wall sequence, or `None` when the geometry admits no such path.
fn unfold_path(
    source: (f64, f64),
    receiver: (f64, f64),
    image: &ImageSource,
    reflectors: &[Reflector],
) -> Option<Vec<(f64, f64)>> {
    // images[j] is the source mirrored through the first j walls.
    let mut images = Vec::with_capacity(image.walls.len() + 1);
    images.push(source);
    for &w in &image.walls {
        let last = *images.last().unwrap();
        images.push(reflectors[w].mirror(last));
    }
    let mut points = vec![receiver];
    let mut from = receiver;
    for (j, &w) in image.walls.iter().enumerate().rev() {
        let target = images[j + 1];
        let s = reflectors[w].hit(from, target)?;
        let p = reflectors[w].snap((from.0 + s * (target.0 - from.0), from.1 + s * (target.1 - from.1)));
        points.push(p);
        from = p;
    }
    points.push(source);
    Some(points)
}

fn path_is_clear(env: &EnvironmentMap, points: &[(f64, f64)], reflectors: &[Reflector]) -> bool {
    let grid = env.grid();
    let (ex, ey) = grid.extent();
    let inside = |p: (f64, f64)| p.0 >= 0.0 && p.1 >= 0.0 && p.0 <= ex && p.1 <= ey;
    points.windows(2).all(|seg| {
        let (a, b) = (seg[0], seg[1]);
        if !inside(a) || !inside(b) {
            return false;
        }
        if reflectors.iter().any(|r| r.separates(a, b)) {
            return false;
        }
        // Clamp points sitting on the far grid edge back into the last cell.
        let pull = |p: (f64, f64)| (p.0.min(ex * (1.0 - 1e-12)), p.1.min(ey * (1.0 - 1e-12)));
        let mut clear = true;
        cells_on_segment(grid, pull(a), pull(b), |x, y| {
            clear = env.cell(x, y) != Cell::Static;
            clear
        });
        clear
    })
}

/// Coherent sum of `e^{i k r_s} / r_s` over the direct source and all image
/// sources up to `params.reflection_order`, keeping only paths that are
/// unobstructed by static cells and by the mirrors themselves. Walls reflect
/// with coefficient +1.
pub fn multipath_toy(
    env: &EnvironmentMap,
    bs: &BsConfig,
    params: &PropagationParams,
    reflectors: &[Reflector],
) -> Result<ComplexField> {
    params.validate()?;
    let grid = env.grid();
    bs.validated(grid)?;
    let source = (bs.x, bs.y);
    let images = image_sources(source, reflectors, params.reflection_order);
    let floor_amp = params.floor_linear().sqrt();
    let k = params.k;

    let data: Vec<Complex64> = (0..grid.height)
        .into_par_iter()
        .flat_map_iter(|y| {
            let images = &images;
            (0..grid.width).map(move |x| {
                if env.cell(x, y) == Cell::Static {
                    return Complex64::new(floor_amp, 0.0);
                }
                let rx = grid.center(x, y);
                images
                    .iter()
                    .filter_map(|img| {
                        let points = unfold_path(source, rx, img, reflectors)?;
                        path_is_clear(env, &points, reflectors).then(|| {
                            let r = clamped_distance(grid, rx, img.position);
                            Complex64::from_polar(1.0 / r, k * r)
                        })
                    })
                    .sum()
            })
        })
        .collect();
    ComplexField::new(grid, data)
}

/// Environment with `buildings` static and `obstacles` dynamic axis-aligned
/// rectangles at random positions.
pub fn random_environment<R: rand::Rng + ?Sized>(
    grid: Grid,
    buildings: usize,
    obstacles: usize,
    rng: &mut R,
) -> EnvironmentMap {
    let (w, h) = (grid.width, grid.height);
    let mut static_mask = crate::grid::OutlineMask::empty(w, h);
    let mut dynamic_mask = crate::grid::OutlineMask::empty(w, h);
    let max_side = (w.min(h) / 5).max(2);
    let mut place = |mask: &mut crate::grid::OutlineMask, other: &crate::grid::OutlineMask, min_side: usize, max_side: usize| {
        let rw = rng.random_range(min_side..=max_side).min(w);
        let rh = rng.random_range(min_side..=max_side).min(h);
        let x0 = rng.random_range(0..=w - rw);
        let y0 = rng.random_range(0..=h - rh);
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                if !other.get(x, y) {
                    mask.set(x, y, true);
                }
            }
        }
    };
    let none = crate::grid::OutlineMask::empty(w, h);
    for _ in 0..buildings {
        place(&mut static_mask, &none, 2.min(max_side), max_side);
    }
    for _ in 0..obstacles {
        place(&mut dynamic_mask, &static_mask, 1, 2.min(max_side));
    }
    EnvironmentMap::new(grid, static_mask, dynamic_mask).expect("masks built disjoint on the grid")
}

/// Free pixel nearest to `(px, py)` in Chebyshev rings.
pub fn nearest_free_pixel(env: &EnvironmentMap, px: usize, py: usize) -> Option<(usize, usize)> {
    let grid = env.grid();
    let reach = grid.width.max(grid.height);
    for r in 0..reach as isize {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx.abs().max(dy.abs()) != r {
                    continue;
                }
                let (x, y) = (px as isize + dx, py as isize + dy);
                if x >= 0 && y >= 0 && (x as usize) < grid.width && (y as usize) < grid.height {
                    let (x, y) = (x as usize, y as usize);
                    if env.cell(x, y) == Cell::Free {
                        return Some((x, y));
                    }
                }
            }
        }
    }
    None
}
