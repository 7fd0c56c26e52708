use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::DensityField;

/// Cone-weighted neighbourhood `(dr, dc, max(0, r - dist))` inside the disc.
fn cone(radius: f64) -> Vec<(isize, isize, f64)> {
    let reach = radius.ceil() as isize;
    let mut out = Vec::new();
    for dr in -reach..=reach {
        for dc in -reach..=reach {
            let w = radius - ((dr * dr + dc * dc) as f64).sqrt();
            if w > 0.0 {
                out.push((dr, dc, w));
            }
        }
    }
    out
}

/// Weighted neighbourhood average with per-element weights `w_i` times the
/// cone kernel. Elements whose weight is zero contribute nothing; elements
/// whose whole neighbourhood has zero weight keep their raw value.
pub(crate) fn weighted_average(raw: &ScalarField, radius: f64, weights: &[f64]) -> Result<ScalarField> {
    if !(radius >= 1.0) {
        return Err(Error::Config(format!("filter radius {radius} < 1")));
    }
    let (rows, cols) = raw.shape();
    debug_assert_eq!(weights.len(), rows * cols);
    let kernel = cone(radius);
    let src = raw.as_slice();
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let (mut num, mut den) = (0.0, 0.0);
            for &(dr, dc, h) in &kernel {
                let (rr, cc) = (r as isize + dr, c as isize + dc);
                if rr < 0 || cc < 0 || rr >= rows as isize || cc >= cols as isize {
                    continue;
                }
                let k = rr as usize * cols + cc as usize;
                let hw = h * weights[k];
                num += hw * src[k];
                den += hw;
            }
            let i = r * cols + c;
            out[i] = if den > 0.0 { num / den } else { src[i] };
        }
    }
    ScalarField::from_vec(rows, cols, out)
}

/// Mesh-independency filter: each element becomes the average of its
/// neighbours within `radius`, weighted by `max(0, radius - dist)` and by
/// their density. Passive elements carry zero weight.
pub fn sensitivity_filter(raw: &ScalarField, radius: f64, density: &DensityField) -> Result<ScalarField> {
    let d = density.domain();
    raw.check_shape(d.height(), d.width())?;
    let weights: Vec<f64> = density
        .values()
        .as_slice()
        .iter()
        .zip(d.passive_mask())
        .map(|(&x, &p)| if p { 0.0 } else { x })
        .collect();
    weighted_average(raw, radius, &weights)
}

/// Cone filter without density weighting (used by BESO, whose two-valued
/// densities would otherwise suppress sensitivity spreading into voids).
pub(crate) fn unweighted_filter(raw: &ScalarField, radius: f64, density: &DensityField) -> Result<ScalarField> {
    let weights: Vec<f64> = density
        .domain()
        .passive_mask()
        .iter()
        .map(|&p| if p { 0.0 } else { 1.0 })
        .collect();
    weighted_average(raw, radius, &weights)
}
