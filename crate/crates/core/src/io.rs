//! Grid and mask serialization, gray-image ingestion and dataset manifests.
//!
//! The CSV grid format is a `width,height,h_x,h_y` header line, one line with
//! those four values, then `height` rows of `width` comma-separated samples.
//! Samples are written in shortest round-trip form, so a save/load cycle is
//! lossless.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BsConfig, EnvironmentMap, Grid, OutlineMask, ScalarField, UnitTag};

pub const CSV_HEADER: &str = "width,height,h_x,h_y";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Png8,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "png" | "png8" => Ok(Format::Png8),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown format `{other}` (png8|csv)")),
        }
    }
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Png8 => "png",
            Format::Csv => "csv",
        }
    }
}

/// How normalized gray levels map to linear power.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrayMode {
    /// Gray level is the power.
    #[default]
    Direct,
    /// Gray level spans `[p_min_db, p_max_db]` linearly in dB.
    DbRange { p_min_db: f64, p_max_db: f64 },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Writes via a temporary sibling file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| format_err(path, "not a file path"))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    drop(f);
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Loads an 8- or 16-bit grayscale image scaled to `[0, 1]`, 1 m per pixel.
pub fn load_gray_image(path: &Path) -> Result<ScalarField> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        other => {
            return Err(format_err(
                path,
                format!("expected an 8/16-bit grayscale image, found {:?}", other.color()),
            ))
        }
    };
    ScalarField::new(Grid::square(w, h)?, data, UnitTag::NormalizedGray)
}

pub fn gray_to_linear_power(field: &ScalarField, mode: GrayMode) -> Result<ScalarField> {
    field.require_unit(UnitTag::NormalizedGray)?;
    match mode {
        GrayMode::Direct => Ok(field.clone().with_unit(UnitTag::LinearPower)),
        GrayMode::DbRange { p_min_db, p_max_db } => {
            if !(p_max_db > p_min_db) {
                return Err(Error::param(
                    "db_range",
                    format!("p_max_db ({p_max_db}) must exceed p_min_db ({p_min_db})"),
                ));
            }
            let span = p_max_db - p_min_db;
            Ok(field.map(UnitTag::LinearPower, |g| 10f64.powf((g * span + p_min_db) / 10.0)))
        }
    }
}

/// Min-max normalized 8-bit levels; a flat or all-NaN field maps to 0.
fn to_levels(data: &[f64]) -> Vec<u8> {
    let finite = data.iter().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    data.iter()
        .map(|&v| {
            if !v.is_finite() || !(span > 0.0) {
                0
            } else {
                (255.0 * (v - lo) / span).round().clamp(0.0, 255.0) as u8
            }
        })
        .collect()
}

fn png_bytes(width: usize, height: usize, levels: Vec<u8>) -> Result<Vec<u8>> {
    let img: GrayImage = ImageBuffer::<Luma<u8>, _>::from_raw(width as u32, height as u32, levels)
        .expect("level buffer matches dimensions");
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).map_err(|source| Error::Image {
        path: PathBuf::from("<memory>"),
        source,
    })?;
    Ok(out.into_inner())
}

pub fn field_to_csv(field: &ScalarField) -> String {
    let mut s = String::with_capacity(field.data().len() * 20);
    s.push_str(CSV_HEADER);
    s.push('\n');
    s.push_str(&format!("{},{},{},{}\n", field.width(), field.height(), field.hx(), field.hy()));
    for row in field.data().chunks(field.width()) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

pub fn save_field(path: &Path, field: &ScalarField, format: Format) -> Result<()> {
    match format {
        Format::Csv => write_atomic(path, field_to_csv(field).as_bytes()),
        Format::Png8 => write_atomic(path, &png_bytes(field.width(), field.height(), to_levels(field.data()))?),
    }
}

pub fn save_mask(path: &Path, mask: &OutlineMask, format: Format) -> Result<()> {
    let grid = Grid::square(mask.width(), mask.height())?;
    match format {
        Format::Csv => save_field(path, &mask.to_field(grid)?, Format::Csv),
        Format::Png8 => {
            let levels = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
            write_atomic(path, &png_bytes(mask.width(), mask.height(), levels)?)
        }
    }
}

pub fn parse_field_csv(text: &str, unit: UnitTag, path: &Path) -> Result<ScalarField> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CSV_HEADER) {
        return Err(format_err(path, format!("missing `{CSV_HEADER}` header")));
    }
    let meta: Vec<&str> = lines
        .next()
        .ok_or_else(|| format_err(path, "missing dimension line"))?
        .split(',')
        .map(str::trim)
        .collect();
    if meta.len() != 4 {
        return Err(format_err(path, "dimension line needs 4 values"));
    }
    let parse_usize = |s: &str| s.parse::<usize>().map_err(|e| format_err(path, format!("`{s}`: {e}")));
    let parse_f64 = |s: &str| s.parse::<f64>().map_err(|e| format_err(path, format!("`{s}`: {e}")));
    let grid = Grid::new(parse_usize(meta[0])?, parse_usize(meta[1])?, parse_f64(meta[2])?, parse_f64(meta[3])?)?;
    let mut data = Vec::with_capacity(grid.len());
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let before = data.len();
        for tok in line.split(',') {
            data.push(parse_f64(tok.trim())?);
        }
        if data.len() - before != grid.width {
            return Err(format_err(path, format!("row of {} values, expected {}", data.len() - before, grid.width)));
        }
    }
    ScalarField::new(grid, data, unit)
}

pub fn load_field_csv(path: &Path, unit: UnitTag) -> Result<ScalarField> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_field_csv(&text, unit, path)
}

/// Loads a mask image; levels above mid-gray are set.
pub fn load_mask(path: &Path) -> Result<OutlineMask> {
    let g = load_gray_image(path)?;
    OutlineMask::new(g.width(), g.height(), g.data().iter().map(|&v| v > 0.5).collect())
}

/// Loads a field from `.csv` (grid format) or any gray image.
pub fn load_field(path: &Path, unit_for_csv: UnitTag) -> Result<ScalarField> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => load_field_csv(path, unit_for_csv),
        _ => load_gray_image(path),
    }
}

/// Transmitter coordinates, one `x y` or `x,y` pair per line; `#` starts a
/// comment.
pub fn load_antenna_file(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let nums: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format_err(path, format!("line {}: {e}", n + 1)))?;
        if nums.len() != 2 {
            return Err(format_err(path, format!("line {}: expected 2 numbers, found {}", n + 1, nums.len())));
        }
        out.push((nums[0], nums[1]));
    }
    Ok(out)
}

/// One dataset sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub gain_image: PathBuf,
    pub building_image: Option<PathBuf>,
    pub antenna_file: Option<PathBuf>,
}

/// Reads `gain_image[,building_image[,antenna_file]]` lines. Relative paths
/// resolve against the manifest's directory; every referenced file must exist.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |s: &str| -> Result<Option<PathBuf>> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(None);
        }
        let p = base.join(s);
        if !p.exists() {
            return Err(format_err(path, format!("referenced file {} does not exist", p.display())));
        }
        Ok(Some(p))
    };
    let mut entries = Vec::new();
    for raw in text.lines() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() > 3 {
            return Err(format_err(path, format!("too many columns in `{line}`")));
        }
        let gain_image = resolve(cols[0])?.ok_or_else(|| format_err(path, "empty gain image column"))?;
        entries.push(ManifestEntry {
            gain_image,
            building_image: cols.get(1).map(|c| resolve(c)).transpose()?.flatten(),
            antenna_file: cols.get(2).map(|c| resolve(c)).transpose()?.flatten(),
        });
    }
    Ok(entries)
}

/// Environment from a building image (bright = building) and an optional
/// dynamic-obstacle image.
pub fn load_environment(building: &Path, dynamic: Option<&Path>) -> Result<EnvironmentMap> {
    let s = load_mask(building)?;
    let grid = Grid::square(s.width(), s.height())?;
    let d = match dynamic {
        Some(p) => {
            let d = load_mask(p)?;
            OutlineMask::from_fn(d.width(), d.height(), |x, y| d.get(x, y) && !s.get(x, y))
        }
        None => OutlineMask::empty(s.width(), s.height()),
    };
    EnvironmentMap::new(grid, s, d)
}

/// Base stations for the transmitters listed in an antenna file.
pub fn antennas_to_bs(coords: &[(f64, f64)], grid: Grid) -> Result<Vec<BsConfig>> {
    coords.iter().map(|&(x, y)| BsConfig::new(x, y, grid)).collect()
}

/// Sorted regular files in `dir` with one of the given extensions.
pub fn list_files(dir: &Path, extensions: &[&str]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let p = entry.map_err(io_err(dir))?.path();
        let ok = p.is_file()
            && p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| extensions.iter().any(|x| x.eq_ignore_ascii_case(e)));
        if ok {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_modes() {
        let g = ScalarField::new(Grid::square(3, 1).unwrap(), vec![0.25, 1.0, 0.5], UnitTag::NormalizedGray).unwrap();
        assert_eq!(gray_to_linear_power(&g, GrayMode::Direct).unwrap().get(0, 0), 0.25);
        let db = gray_to_linear_power(&g, GrayMode::DbRange { p_min_db: -100.0, p_max_db: 0.0 }).unwrap();
        assert_eq!(db.get(1, 0), 1.0);
        assert!((db.get(2, 0) - 1e-5).abs() < 1e-20);
        assert!(gray_to_linear_power(&g, GrayMode::DbRange { p_min_db: 0.0, p_max_db: 0.0 }).is_err());
    }

    #[test]
    fn levels_minmax() {
        assert_eq!(to_levels(&[0.0, 0.5, 1.0]), vec![0, 128, 255]);
        assert_eq!(to_levels(&[2.0, 2.0]), vec![0, 0]);
        assert_eq!(to_levels(&[f64::NAN, 1.0, 3.0]), vec![0, 0, 255]);
    }

    #[test]
    fn csv_rejects_short_rows() {
        let p = Path::new("x.csv");
        let bad = "width,height,h_x,h_y\n2,2,1,1\n1,2\n3\n";
        assert!(parse_field_csv(bad, UnitTag::Amplitude, p).is_err());
        assert!(parse_field_csv("nope\n", UnitTag::Amplitude, p).is_err());
        let short = "width,height,h_x,h_y\n2,2,1,1\n1,2\n";
        assert!(matches!(parse_field_csv(short, UnitTag::Amplitude, p), Err(Error::Dimension { .. })));
    }
}
