//! Grid value types shared by every stage of the pipeline.
//!
//! Storage is row-major with the origin at the top-left corner: `x` grows to
//! the right, `y` grows downward. Sample `(x, y)` represents the pixel whose
//! center sits at `((x + 0.5) * h_x, (y + 0.5) * h_y)` meters.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensions and spacing of a rectangular grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    /// Meters per pixel along x.
    pub hx: f64,
    /// Meters per pixel along y.
    pub hy: f64,
}

impl Grid {
    pub fn new(width: usize, height: usize, hx: f64, hy: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::dims("non-empty grid", format!("{width}x{height}")));
        }
        if !(hx > 0.0 && hx.is_finite()) {
            return Err(Error::param("h_x", format!("must be positive, got {hx}")));
        }
        if !(hy > 0.0 && hy.is_finite()) {
            return Err(Error::param("h_y", format!("must be positive, got {hy}")));
        }
        Ok(Grid { width, height, hx, hy })
    }

    /// Unit-spaced grid.
    pub fn square(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, 1.0, 1.0)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    /// Physical coordinates of a pixel center.
    #[inline]
    pub fn center(&self, x: usize, y: usize) -> (f64, f64) {
        ((x as f64 + 0.5) * self.hx, (y as f64 + 0.5) * self.hy)
    }

    /// Physical extent `(width * h_x, height * h_y)`.
    pub fn extent(&self) -> (f64, f64) {
        (self.width as f64 * self.hx, self.height as f64 * self.hy)
    }

    /// Pixel containing a physical point, if inside the grid.
    pub fn cell_of(&self, px: f64, py: f64) -> Option<(usize, usize)> {
        let (ex, ey) = self.extent();
        if !(px >= 0.0 && py >= 0.0 && px < ex && py < ey) {
            return None;
        }
        let x = ((px / self.hx).floor() as usize).min(self.width - 1);
        let y = ((py / self.hy).floor() as usize).min(self.height - 1);
        Some((x, y))
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.width == other.width && self.height == other.height
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::dims(
                format!("{} samples ({}x{})", self.len(), self.width, self.height),
                format!("{len} samples"),
            ));
        }
        Ok(())
    }
}

/// What the numbers in a [`ScalarField`] mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitTag {
    LinearPower,
    Amplitude,
    NormalizedGray,
    KSquared,
    LogAmplitude,
}

impl UnitTag {
    pub fn is_non_negative(self) -> bool {
        matches!(self, UnitTag::LinearPower | UnitTag::Amplitude)
    }
}

/// Real-valued grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    data: Vec<f64>,
    unit: UnitTag,
}

impl ScalarField {
    /// Builds a field, rejecting a sample count that does not match the grid.
    pub fn new(grid: Grid, data: Vec<f64>, unit: UnitTag) -> Result<Self> {
        grid.check_len(data.len())?;
        Ok(ScalarField { grid, data, unit })
    }

    pub fn filled(grid: Grid, value: f64, unit: UnitTag) -> Self {
        ScalarField {
            grid,
            data: vec![value; grid.len()],
            unit,
        }
    }

    /// Evaluates `f(x, y)` at every pixel index.
    pub fn from_fn(grid: Grid, unit: UnitTag, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for y in 0..grid.height {
            for x in 0..grid.width {
                data.push(f(x, y));
            }
        }
        ScalarField { grid, data, unit }
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.grid.width
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.grid.height
    }
    #[inline]
    pub fn hx(&self) -> f64 {
        self.grid.hx
    }
    #[inline]
    pub fn hy(&self) -> f64 {
        self.grid.hy
    }
    #[inline]
    pub fn unit(&self) -> UnitTag {
        self.unit
    }
    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[self.grid.index(x, y)]
    }

    pub fn with_unit(mut self, unit: UnitTag) -> Self {
        self.unit = unit;
        self
    }

    /// Pointwise map; the caller names the unit of the result.
    pub fn map(&self, unit: UnitTag, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            grid: self.grid,
            data: self.data.iter().map(|&v| f(v)).collect(),
            unit,
        }
    }

    /// Pointwise combination of two fields of identical shape.
    pub fn zip_map(
        &self,
        other: &ScalarField,
        unit: UnitTag,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<ScalarField> {
        self.require_same_shape(other.grid)?;
        Ok(ScalarField {
            grid: self.grid,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            unit,
        })
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub(crate) fn require_unit(&self, expected: UnitTag) -> Result<()> {
        if self.unit != expected {
            return Err(Error::UnitMismatch {
                expected,
                actual: self.unit,
            });
        }
        Ok(())
    }

    pub(crate) fn require_same_shape(&self, other: Grid) -> Result<()> {
        if !self.grid.same_shape(&other) {
            return Err(Error::dims(
                format!("{}x{}", self.grid.width, self.grid.height),
                format!("{}x{}", other.width, other.height),
            ));
        }
        Ok(())
    }

    /// Rejects samples below `-tol` (and NaN).
    pub(crate) fn require_non_negative(&self, tol: f64) -> Result<()> {
        match self.data.iter().position(|v| !(*v >= -tol)) {
            Some(index) => Err(Error::NegativeValue {
                index,
                value: self.data[index],
            }),
            None => Ok(()),
        }
    }
}

/// Pointwise map over a field.
pub fn field_map(field: &ScalarField, unit: UnitTag, f: impl Fn(f64) -> f64) -> ScalarField {
    field.map(unit, f)
}

/// Envelope `A = sqrt(I)` of a linear power map.
///
/// Values in `[-eps, 0)` are treated as round-off and clamp to zero; anything
/// more negative is rejected.
pub fn amplitude_from_power(power: &ScalarField, eps: f64) -> Result<ScalarField> {
    if !(eps >= 0.0) {
        return Err(Error::param("eps", format!("must be >= 0, got {eps}")));
    }
    power.require_unit(UnitTag::LinearPower)?;
    power.require_non_negative(eps)?;
    Ok(power.map(UnitTag::Amplitude, |v| v.max(0.0).sqrt()))
}

/// Complex grid `u = A e^{i phi}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexField {
    grid: Grid,
    data: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(grid: Grid, data: Vec<Complex64>) -> Result<Self> {
        grid.check_len(data.len())?;
        if let Some(index) = data.iter().position(|z| !z.norm().is_finite()) {
            return Err(Error::param(
                "data",
                format!("non-finite modulus at index {index}"),
            ));
        }
        Ok(ComplexField { grid, data })
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for y in 0..grid.height {
            for x in 0..grid.width {
                data.push(f(x, y));
            }
        }
        ComplexField { grid, data }
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }
    #[inline]
    pub fn data(&self) -> &[Complex64] {
        &self.data
    }
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Complex64 {
        self.data[self.grid.index(x, y)]
    }

    /// `|u|` as an amplitude field.
    pub fn modulus(&self) -> ScalarField {
        ScalarField {
            grid: self.grid,
            data: self.data.iter().map(|z| z.norm()).collect(),
            unit: UnitTag::Amplitude,
        }
    }

    /// `|u|^2` as a linear power field.
    pub fn power(&self) -> ScalarField {
        ScalarField {
            grid: self.grid,
            data: self.data.iter().map(|z| z.norm_sqr()).collect(),
            unit: UnitTag::LinearPower,
        }
    }

    /// Principal phase `arg u` in `(-pi, pi]`.
    pub fn phase(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.arg()).collect()
    }
}

/// Boolean grid. Used for outline masks and for obstacle masks.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct OutlineMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl OutlineMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::dims(
                format!("{} cells ({width}x{height})", width * height),
                format!("{} cells", bits.len()),
            ));
        }
        Ok(OutlineMask { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        OutlineMask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        OutlineMask { width, height, bits }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn same_shape(&self, other: &OutlineMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn require_same_shape(&self, other: &OutlineMask) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::dims(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ));
        }
        Ok(())
    }

    pub fn and(&self, other: &OutlineMask) -> Result<OutlineMask> {
        self.require_same_shape(other)?;
        Ok(OutlineMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect(),
        })
    }

    /// `{false, true} -> {0.0, 1.0}` on the given grid.
    pub fn to_field(&self, grid: Grid) -> Result<ScalarField> {
        if grid.width != self.width || grid.height != self.height {
            return Err(Error::dims(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", grid.width, grid.height),
            ));
        }
        ScalarField::new(
            grid,
            self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            UnitTag::NormalizedGray,
        )
    }
}

/// Static and dynamic obstacles over a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentMap {
    grid: Grid,
    static_mask: OutlineMask,
    dynamic_mask: OutlineMask,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cell {
    Free,
    Static,
    Dynamic,
}

impl EnvironmentMap {
    pub fn new(grid: Grid, static_mask: OutlineMask, dynamic_mask: OutlineMask) -> Result<Self> {
        for mask in [&static_mask, &dynamic_mask] {
            if mask.width != grid.width || mask.height != grid.height {
                return Err(Error::dims(
                    format!("{}x{}", grid.width, grid.height),
                    format!("{}x{}", mask.width, mask.height),
                ));
            }
        }
        if let Some(i) = static_mask
            .bits
            .iter()
            .zip(&dynamic_mask.bits)
            .position(|(s, d)| *s && *d)
        {
            return Err(Error::param(
                "environment",
                format!(
                    "cell ({}, {}) is both static and dynamic",
                    i % grid.width,
                    i / grid.width
                ),
            ));
        }
        Ok(EnvironmentMap {
            grid,
            static_mask,
            dynamic_mask,
        })
    }

    /// Obstacle-free environment.
    pub fn empty(grid: Grid) -> Self {
        EnvironmentMap {
            grid,
            static_mask: OutlineMask::empty(grid.width, grid.height),
            dynamic_mask: OutlineMask::empty(grid.width, grid.height),
        }
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }
    pub fn static_mask(&self) -> &OutlineMask {
        &self.static_mask
    }
    pub fn dynamic_mask(&self) -> &OutlineMask {
        &self.dynamic_mask
    }

    #[inline]
    pub fn cell(&self, x: usize, y: usize) -> Cell {
        if self.static_mask.get(x, y) {
            Cell::Static
        } else if self.dynamic_mask.get(x, y) {
            Cell::Dynamic
        } else {
            Cell::Free
        }
    }
}

/// Base-station placement and radio settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BsConfig {
    /// Meters from the left edge.
    pub x: f64,
    /// Meters from the top edge.
    pub y: f64,
    /// Antenna height in meters.
    pub z: f64,
    pub tx_power_dbm: f64,
    pub carrier_hz: f64,
}

impl BsConfig {
    pub const DEFAULT_TX_POWER_DBM: f64 = 23.0;
    pub const DEFAULT_CARRIER_HZ: f64 = 5.9e9;
    pub const DEFAULT_HEIGHT_M: f64 = 25.0;

    pub fn new(x: f64, y: f64, grid: Grid) -> Result<Self> {
        Self {
            x,
            y,
            z: Self::DEFAULT_HEIGHT_M,
            tx_power_dbm: Self::DEFAULT_TX_POWER_DBM,
            carrier_hz: Self::DEFAULT_CARRIER_HZ,
        }
        .validated(grid)
    }

    /// Base station at the center of pixel `(px, py)`.
    pub fn at_pixel(px: usize, py: usize, grid: Grid) -> Result<Self> {
        let (x, y) = grid.center(px, py);
        Self::new(x, y, grid)
    }

    pub fn validated(self, grid: Grid) -> Result<Self> {
        if grid.cell_of(self.x, self.y).is_none() {
            return Err(Error::param(
                "bs",
                format!("position ({}, {}) outside the grid", self.x, self.y),
            ));
        }
        if !(self.carrier_hz > 0.0) {
            return Err(Error::param(
                "carrier_hz",
                format!("must be positive, got {}", self.carrier_hz),
            ));
        }
        Ok(self)
    }

    pub fn pixel(&self, grid: Grid) -> Option<(usize, usize)> {
        grid.cell_of(self.x, self.y)
    }
}
