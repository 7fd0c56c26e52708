//! Binary portable graymap (P5) output.

use std::fs;
use std::path::Path;

use fragto::{Result, ScalarField};

/// Offset added before taking the logarithm of an energy field.
pub const LOG_OFFSET: f64 = 1e-8;

/// Density rendering: 0 is white, 1 is black.
pub fn density_pixels(field: &ScalarField) -> Vec<u8> {
    field
        .as_slice()
        .iter()
        .map(|&x| (255.0 * (1.0 - x.clamp(0.0, 1.0))).round() as u8)
        .collect()
}

/// `log(U + 1e-8)` linearly rescaled to `[0, 255]`. Returns the pixels and
/// the log-domain minimum and maximum.
pub fn energy_pixels(field: &ScalarField) -> (Vec<u8>, f64, f64) {
    let logs: Vec<f64> = field
        .as_slice()
        .iter()
        .map(|&u| (u.max(0.0) + LOG_OFFSET).ln())
        .collect();
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let pixels = logs
        .iter()
        .map(|&v| {
            if span > 0.0 {
                (255.0 * (v - lo) / span).round() as u8
            } else {
                0
            }
        })
        .collect();
    (pixels, lo, hi)
}

pub fn pgm_bytes(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Density,
    Energy,
}

impl std::str::FromStr for FieldKind {
    type Err = fragto::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "density" => Ok(FieldKind::Density),
            "energy" => Ok(FieldKind::Energy),
            other => Err(fragto::Error::Config(format!("unknown field kind `{other}`"))),
        }
    }
}

/// Writes `out` and, for energy fields, a sidecar `<out>.txt` holding the
/// log-domain range.
pub fn render_to(field: &ScalarField, kind: FieldKind, out: &Path) -> Result<()> {
    let (rows, cols) = field.shape();
    match kind {
        FieldKind::Density => fs::write(out, pgm_bytes(rows, cols, &density_pixels(field)))?,
        FieldKind::Energy => {
            let (px, lo, hi) = energy_pixels(field);
            fs::write(out, pgm_bytes(rows, cols, &px))?;
            let mut side = out.as_os_str().to_owned();
            side.push(".txt");
            fs::write(
                side,
                format!("transform=log(U+{LOG_OFFSET:e})\nmin={lo:e}\nmax={hi:e}\n"),
            )?;
        }
    }
    Ok(())
}
