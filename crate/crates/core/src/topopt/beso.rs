use std::cmp::Ordering;

use super::filter::unweighted_filter;
use super::OptimizerConfig;
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::DensityField;

/// Soft-kill density of removed elements. With penalization 3 this is a
/// relative stiffness of 1e-6.
pub const BESO_X_MIN: f64 = 0.01;

/// Volume target for the next iteration: shrink by the evolution rate until
/// the final target is reached.
pub fn next_target_volume(current: f64, final_target: f64, rate: f64) -> f64 {
    (current * (1.0 - rate)).max(final_target)
}

/// Number of solid elements whose soft-kill design has the given volume.
pub fn solid_count(target_volume: f64, active: usize) -> usize {
    let n = (target_volume - BESO_X_MIN * active as f64) / (1.0 - BESO_X_MIN);
    (n.round().max(0.0) as usize).min(active)
}

/// Ranks the already stabilized sensitivities and keeps the top elements
/// solid. Ties prefer the currently denser element, then the lower index.
pub fn threshold_design(density: &DensityField, alpha: &ScalarField, target_volume: f64) -> DensityField {
    let d = density.domain().clone();
    let x = density.values().as_slice();
    let a = alpha.as_slice();
    let passive = d.passive_mask();
    let mut active: Vec<usize> = (0..x.len()).filter(|&i| !passive[i]).collect();
    let n_solid = solid_count(target_volume, active.len());
    active.sort_by(|&i, &j| {
        a[j].partial_cmp(&a[i])
            .unwrap_or(Ordering::Equal)
            .then(x[j].partial_cmp(&x[i]).unwrap_or(Ordering::Equal))
            .then(i.cmp(&j))
    });
    let mut values = vec![0.0; x.len()];
    for (rank, &i) in active.iter().enumerate() {
        values[i] = if rank < n_solid { 1.0 } else { BESO_X_MIN };
    }
    DensityField::from_parts(
        d.clone(),
        ScalarField::from_vec(d.height(), d.width(), values).expect("domain shape"),
    )
}

/// One BESO update. The sensitivity of an element is its energy, filtered
/// and averaged with the previous iteration's value. Returns the new design
/// and that stabilized sensitivity, which the caller passes back as
/// `previous` on the next iteration.
pub fn beso_step(
    density: &DensityField,
    energy: &ScalarField,
    previous: Option<&ScalarField>,
    target_volume: f64,
    cfg: &OptimizerConfig,
) -> Result<(DensityField, ScalarField)> {
    let d = density.domain();
    energy.check_shape(d.height(), d.width())?;
    let mut alpha = unweighted_filter(energy, cfg.filter_radius, density)?;
    if let Some(prev) = previous {
        prev.check_shape(d.height(), d.width())?;
        for (a, p) in alpha.as_mut_slice().iter_mut().zip(prev.as_slice()) {
            *a = 0.5 * (*a + p);
        }
    }
    if alpha.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("non-finite sensitivity".into()));
    }
    Ok((threshold_design(density, &alpha, target_volume), alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_problem, uniform_density, InitialDensity, ProblemKind};
    use crate::topopt::Method;

    #[test]
    fn equal_sensitivities_keep_the_design() {
        let p = make_problem(ProblemKind::CantileverSingle, 8, 8, 1).unwrap();
        let mut v = ScalarField::filled(8, 8, BESO_X_MIN);
        for i in [3, 9, 17, 30, 31, 50] {
            v.as_mut_slice()[i] = 1.0;
        }
        let x = DensityField::new(p.domain.clone(), v).unwrap();
        let cfg = OptimizerConfig::new(Method::Beso, 8);
        let energy = ScalarField::filled(8, 8, 2.0);
        let (y, _) = beso_step(&x, &energy, None, x.volume(), &cfg).unwrap();
        assert_eq!(y.values(), x.values());
    }

    #[test]
    fn full_target_is_all_solid() {
        let p = make_problem(ProblemKind::CantileverSingle, 8, 8, 1).unwrap();
        let x = uniform_density(&p, InitialDensity::Beso);
        let cfg = OptimizerConfig::new(Method::Beso, 8);
        let e = ScalarField::from_fn(8, 8, |r, c| (r + c) as f64);
        let (y, _) = beso_step(&x, &e, None, 64.0, &cfg).unwrap();
        assert!(y.values().as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn schedule_shrinks_then_holds() {
        assert!((next_target_volume(100.0, 40.0, 0.02) - 98.0).abs() < 1e-12);
        assert_eq!(next_target_volume(40.5, 40.0, 0.02), 40.0);
        assert_eq!(solid_count(64.0, 64), 64);
        assert_eq!(solid_count(0.64, 64), 0);
    }
}
