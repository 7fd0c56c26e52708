//! Coarsening, fragmentation into aligned coarse/fine patches,
//! defragmentation with overlap averaging, and field normalization.

use std::fmt;

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::DensityField;

/// Fine and coarse grid sizes related by an integer ratio per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScaleSpec {
    pub fine_w: usize,
    pub fine_h: usize,
    pub coarse_w: usize,
    pub coarse_h: usize,
    pub ratio: usize,
}

pub const DEFAULT_RATIO: usize = 16;

impl ScaleSpec {
    pub fn new(fine_w: usize, fine_h: usize, ratio: usize) -> Result<Self> {
        if ratio == 0 {
            return Err(Error::Config("coarsening ratio must be positive".into()));
        }
        for len in [fine_w, fine_h] {
            if len == 0 || len % ratio != 0 {
                return Err(Error::NotDivisible { len, by: ratio });
            }
        }
        Ok(Self {
            fine_w,
            fine_h,
            coarse_w: fine_w / ratio,
            coarse_h: fine_h / ratio,
            ratio,
        })
    }
}

/// Fragment geometry shared by training and inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FragmentSpec {
    /// Fragments per axis (along the coarse width) without overlap.
    pub crop_scale: usize,
    pub coarse_patch: usize,
    pub fine_patch: usize,
    pub overlap: bool,
    pub stride_coarse: usize,
}

impl FragmentSpec {
    /// Geometry from a crop scale: `coarse_patch = coarse_w / crop_scale`.
    pub fn new(scale: &ScaleSpec, crop_scale: usize, overlap: bool) -> Result<Self> {
        if crop_scale == 0 || !scale.coarse_w.is_multiple_of(crop_scale) {
            return Err(Error::NotDivisible {
                len: scale.coarse_w,
                by: crop_scale,
            });
        }
        Self::with_patch(scale, scale.coarse_w / crop_scale, overlap)
    }

    /// Geometry from an explicit coarse patch side.
    pub fn with_patch(scale: &ScaleSpec, coarse_patch: usize, overlap: bool) -> Result<Self> {
        if coarse_patch == 0 || coarse_patch > scale.coarse_w.min(scale.coarse_h) {
            return Err(Error::Config(format!(
                "coarse patch {coarse_patch} does not fit a {}x{} coarse grid",
                scale.coarse_w, scale.coarse_h
            )));
        }
        if !overlap {
            for len in [scale.coarse_w, scale.coarse_h] {
                if len % coarse_patch != 0 {
                    return Err(Error::NotDivisible { len, by: coarse_patch });
                }
            }
        }
        Ok(Self {
            crop_scale: scale.coarse_w / coarse_patch,
            coarse_patch,
            fine_patch: coarse_patch * scale.ratio,
            overlap,
            stride_coarse: if overlap { 1 } else { coarse_patch },
        })
    }

    /// Fine elements per coarse element.
    pub fn ratio(&self) -> usize {
        self.fine_patch / self.coarse_patch
    }

    /// Patch origins along one coarse axis of length `len`.
    pub fn axis_origins(&self, len: usize) -> Vec<usize> {
        if len < self.coarse_patch {
            return Vec::new();
        }
        (0..=len - self.coarse_patch).step_by(self.stride_coarse).collect()
    }

    /// Fragments per sample on a `coarse_w`×`coarse_h` grid.
    pub fn fragment_count(&self, coarse_w: usize, coarse_h: usize) -> usize {
        self.axis_origins(coarse_w).len() * self.axis_origins(coarse_h).len()
    }

    /// Short text identifying the geometry, stored in model files.
    pub fn fingerprint(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for FragmentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "coarse_patch={} fine_patch={} overlap={}",
            self.coarse_patch, self.fine_patch, self.overlap as u8
        )
    }
}

/// Aligned patch triples. Origins are `(row, col)` on the coarse grid and
/// are unique within one sample; batches built by [`FragmentBatch::extend`]
/// repeat them once per sample.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FragmentBatch {
    pub coarse: Vec<ScalarField>,
    pub density: Vec<ScalarField>,
    pub fine: Option<Vec<ScalarField>>,
    pub origins: Vec<(usize, usize)>,
}

impl FragmentBatch {
    pub fn len(&self) -> usize {
        self.coarse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coarse.is_empty()
    }

    /// Appends another batch. Targets are kept only if both carry them.
    pub fn extend(&mut self, other: FragmentBatch) {
        let was_empty = self.is_empty();
        self.fine = match (self.fine.take(), other.fine) {
            (Some(mut a), Some(b)) => {
                a.extend(b);
                Some(a)
            }
            (None, Some(b)) if was_empty => Some(b),
            _ => None,
        };
        self.coarse.extend(other.coarse);
        self.density.extend(other.density);
        self.origins.extend(other.origins);
    }

    /// Subset in the given order.
    pub fn select(&self, indices: &[usize]) -> FragmentBatch {
        FragmentBatch {
            coarse: indices.iter().map(|&i| self.coarse[i].clone()).collect(),
            density: indices.iter().map(|&i| self.density[i].clone()).collect(),
            fine: self
                .fine
                .as_ref()
                .map(|f| indices.iter().map(|&i| f[i].clone()).collect()),
            origins: indices.iter().map(|&i| self.origins[i]).collect(),
        }
    }
}

/// Block mean over `ratio`×`ratio` tiles.
pub fn block_mean(field: &ScalarField, ratio: usize) -> Result<ScalarField> {
    let (rows, cols) = field.shape();
    if ratio == 0 || rows % ratio != 0 || cols % ratio != 0 {
        return Err(Error::NotDivisible {
            len: if ratio != 0 && rows % ratio != 0 { rows } else { cols },
            by: ratio,
        });
    }
    let (cr, cc) = (rows / ratio, cols / ratio);
    let mut out = vec![0.0; cr * cc];
    let src = field.as_slice();
    for r in 0..rows {
        let orow = (r / ratio) * cc;
        let line = &src[r * cols..(r + 1) * cols];
        for (c, &v) in line.iter().enumerate() {
            out[orow + c / ratio] += v;
        }
    }
    let inv = 1.0 / (ratio * ratio) as f64;
    for v in &mut out {
        *v *= inv;
    }
    ScalarField::from_vec(cr, cc, out)
}

/// Coarse design whose elements are the means of their fine blocks.
pub fn coarsen_density(fine: &DensityField, scale: &ScaleSpec) -> Result<DensityField> {
    fine.values().check_shape(scale.fine_h, scale.fine_w)?;
    let domain = fine.domain().coarsen(scale.ratio)?;
    let values = block_mean(fine.values(), scale.ratio)?.map(|v| v.clamp(0.0, 1.0));
    DensityField::new(domain.into(), values)
}

fn check_fragment_inputs(
    coarse: &ScalarField,
    density: &ScalarField,
    fine: Option<&ScalarField>,
    fspec: &FragmentSpec,
) -> Result<()> {
    let (ch, cw) = coarse.shape();
    let r = fspec.ratio();
    density.check_shape(ch * r, cw * r)?;
    if let Some(f) = fine {
        f.check_shape(ch * r, cw * r)?;
    }
    if !fspec.overlap {
        for len in [cw, ch] {
            if len % fspec.coarse_patch != 0 {
                return Err(Error::NotDivisible {
                    len,
                    by: fspec.coarse_patch,
                });
            }
        }
    }
    Ok(())
}

/// Cuts aligned patches from a coarse field, the fine density and, when
/// given, the fine target field. Ordering is row-major by origin.
pub fn fragment(
    coarse_field: &ScalarField,
    fine_density: &ScalarField,
    fine_field: Option<&ScalarField>,
    fspec: &FragmentSpec,
) -> Result<FragmentBatch> {
    check_fragment_inputs(coarse_field, fine_density, fine_field, fspec)?;
    let (ch, cw) = coarse_field.shape();
    let r = fspec.ratio();
    let mut batch = FragmentBatch {
        fine: fine_field.map(|_| Vec::new()),
        ..Default::default()
    };
    for &row in &fspec.axis_origins(ch) {
        for &col in &fspec.axis_origins(cw) {
            batch.coarse.push(coarse_field.window(row, col, fspec.coarse_patch));
            batch
                .density
                .push(fine_density.window(row * r, col * r, fspec.fine_patch));
            if let (Some(f), Some(out)) = (fine_field, batch.fine.as_mut()) {
                out.push(f.window(row * r, col * r, fspec.fine_patch));
            }
            batch.origins.push((row, col));
        }
    }
    Ok(batch)
}

/// Number of patches covering each fine pixel.
pub fn cover_counts(origins: &[(usize, usize)], fspec: &FragmentSpec, out_w: usize, out_h: usize) -> Vec<u32> {
    let r = fspec.ratio();
    let mut count = vec![0u32; out_w * out_h];
    for &(row, col) in origins {
        for fr in row * r..(row * r + fspec.fine_patch).min(out_h) {
            for fc in col * r..(col * r + fspec.fine_patch).min(out_w) {
                count[fr * out_w + fc] += 1;
            }
        }
    }
    count
}

/// Reassembles fine patches, averaging where they overlap.
pub fn defragment(
    patches: &[ScalarField],
    origins: &[(usize, usize)],
    fspec: &FragmentSpec,
    out_w: usize,
    out_h: usize,
) -> Result<ScalarField> {
    if patches.len() != origins.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} patches", origins.len()),
            got: format!("{} patches", patches.len()),
        });
    }
    let r = fspec.ratio();
    let p = fspec.fine_patch;
    let mut sum = vec![0.0; out_w * out_h];
    let mut count = vec![0u32; out_w * out_h];
    for (patch, &(row, col)) in patches.iter().zip(origins) {
        patch.check_shape(p, p)?;
        let (r0, c0) = (row * r, col * r);
        if r0 + p > out_h || c0 + p > out_w {
            return Err(Error::DimensionMismatch {
                expected: format!("patch inside {out_w}x{out_h}"),
                got: format!("origin ({row}, {col})"),
            });
        }
        for i in 0..p {
            let dst = (r0 + i) * out_w + c0;
            let src = &patch.as_slice()[i * p..(i + 1) * p];
            for (j, &v) in src.iter().enumerate() {
                sum[dst + j] += v;
                count[dst + j] += 1;
            }
        }
    }
    for (k, (s, &n)) in sum.iter_mut().zip(&count).enumerate() {
        if n == 0 {
            return Err(Error::CoverageHole {
                row: k / out_w,
                col: k % out_w,
            });
        }
        if n > 1 {
            *s /= n as f64;
        }
    }
    ScalarField::from_vec(out_h, out_w, sum)
}

/// Scale factors dividing the coarse network input and the fine output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationFactors {
    pub coarse: f64,
    pub fine: f64,
}

impl NormalizationFactors {
    pub fn new(coarse: f64, fine: f64) -> Result<Self> {
        check_factor(coarse)?;
        check_factor(fine)?;
        Ok(Self { coarse, fine })
    }
}

fn check_factor(f: f64) -> Result<()> {
    if f > 0.0 && f.is_finite() {
        Ok(())
    } else {
        Err(Error::BadFactor(f))
    }
}

/// Nearest-rank percentile of a nonempty sorted slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// `10^round(log10(p95))` over the pooled nonzero values.
pub fn estimate_normalization(fields: &[ScalarField]) -> Result<f64> {
    if fields.is_empty() {
        return Err(Error::Empty("fields"));
    }
    let mut values: Vec<f64> = fields
        .iter()
        .flat_map(|f| f.as_slice().iter().map(|v| v.abs()))
        .filter(|&v| v > 0.0 && v.is_finite())
        .collect();
    if values.is_empty() {
        return Err(Error::AllZero);
    }
    values.sort_by(f64::total_cmp);
    let p95 = percentile(&values, 0.95);
    Ok(10f64.powf(p95.log10().round()))
}

pub fn normalize(field: &ScalarField, factor: f64) -> Result<ScalarField> {
    check_factor(factor)?;
    Ok(field.map(|v| v / factor))
}

pub fn denormalize(field: &ScalarField, factor: f64) -> Result<ScalarField> {
    check_factor(factor)?;
    Ok(field.map(|v| v * factor))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::grid::DomainSpec;

    fn spec(coarse: usize, ratio: usize, patch: usize, overlap: bool) -> (ScaleSpec, FragmentSpec) {
        let s = ScaleSpec::new(coarse * ratio, coarse * ratio, ratio).unwrap();
        let f = FragmentSpec::with_patch(&s, patch, overlap).unwrap();
        (s, f)
    }

    #[test]
    fn full_scale_counts() {
        let s = ScaleSpec::new(512, 512, 16).unwrap();
        let f = FragmentSpec::new(&s, 16, false).unwrap();
        assert_eq!((f.coarse_patch, f.fine_patch), (2, 32));
        assert_eq!(f.fragment_count(32, 32), 256);
        let o = FragmentSpec::new(&s, 16, true).unwrap();
        assert_eq!(o.fragment_count(32, 32), 31 * 31);
        let b = ScaleSpec::new(768, 384, 16).unwrap();
        let bo = FragmentSpec::with_patch(&b, 2, true).unwrap();
        assert_eq!((b.coarse_w, b.coarse_h), (48, 24));
        assert_eq!(bo.axis_origins(48).len(), 47);
        assert_eq!(bo.axis_origins(24).len(), 23);
    }

    #[test]
    fn coarsen_examples() {
        let d = Arc::new(DomainSpec::new(4, 4).unwrap());
        let ones = DensityField::new(d.clone(), ScalarField::filled(4, 4, 1.0)).unwrap();
        let s = ScaleSpec::new(4, 4, 2).unwrap();
        assert!(coarsen_density(&ones, &s)
            .unwrap()
            .values()
            .as_slice()
            .iter()
            .all(|&v| v == 1.0));
        let checker = ScalarField::from_fn(4, 4, |r, c| ((r + c) % 2) as f64);
        let x = DensityField::new(d, checker).unwrap();
        assert!(coarsen_density(&x, &s)
            .unwrap()
            .values()
            .as_slice()
            .iter()
            .all(|&v| v == 0.5));
    }

    #[test]
    fn non_overlap_roundtrip_is_exact() {
        let (_, f) = spec(4, 4, 2, false);
        let coarse = ScalarField::from_fn(4, 4, |r, c| (r * 4 + c) as f64);
        let fine = ScalarField::from_fn(16, 16, |r, c| ((r * 31 + c * 17) % 13) as f64 * 0.1);
        let b = fragment(&coarse, &fine, Some(&fine), &f).unwrap();
        assert_eq!(b.len(), 4);
        assert_eq!(b.origins, vec![(0, 0), (0, 2), (2, 0), (2, 2)]);
        let back = defragment(b.fine.as_ref().unwrap(), &b.origins, &f, 16, 16).unwrap();
        assert_eq!(back, fine);
    }

    #[test]
    fn two_cover_average() {
        let (_, f) = spec(3, 2, 2, true);
        let zero = ScalarField::zeros(4, 4);
        let one = ScalarField::filled(4, 4, 1.0);
        let out = defragment(&[zero, one], &[(0, 0), (0, 1)], &f, 6, 4).unwrap();
        assert_eq!(out.get(1, 1), 0.0);
        assert_eq!(out.get(1, 2), 0.5);
        assert_eq!(out.get(1, 3), 0.5);
        assert_eq!(out.get(1, 4), 1.0);
    }

    #[test]
    fn missing_patch_is_a_hole() {
        let (_, f) = spec(4, 2, 2, false);
        let p = ScalarField::zeros(4, 4);
        assert!(matches!(
            defragment(&[p.clone(), p.clone(), p], &[(0, 0), (0, 2), (2, 0)], &f, 8, 8),
            Err(Error::CoverageHole { row: 4, col: 4 })
        ));
    }

    #[test]
    fn non_overlap_needs_divisibility() {
        let s = ScaleSpec::new(12, 12, 4).unwrap();
        assert!(FragmentSpec::with_patch(&s, 2, false).is_err());
        assert!(FragmentSpec::with_patch(&s, 2, true).is_ok());
    }

    #[test]
    fn normalization_examples() {
        let v: Vec<f64> = (0..100).map(|k| if k < 94 { 1e-5 } else { 8.3e-5 }).collect();
        let f = ScalarField::from_vec(10, 10, v).unwrap();
        assert_eq!(estimate_normalization(std::slice::from_ref(&f)).unwrap(), 1e-4);
        assert_eq!(estimate_normalization(&[ScalarField::filled(3, 3, 1.0)]).unwrap(), 1.0);
        assert!(matches!(
            estimate_normalization(&[ScalarField::zeros(2, 2)]),
            Err(Error::AllZero)
        ));
        let n = normalize(&ScalarField::filled(2, 2, 2e-4), 1e-4).unwrap();
        assert!(n.as_slice().iter().all(|&x| (x - 2.0).abs() < 1e-15));
        assert!(normalize(&n, 0.0).is_err());
        let t = normalize(&ScalarField::filled(1, 2, 10.0), 5.0).unwrap();
        assert_eq!(t.as_slice(), &[2.0, 2.0]);
    }
}
