use super::filter::sensitivity_filter;
use super::OptimizerConfig;
use crate::error::{Error, Result};
use crate::fem::{interpolated_stiffness, VOID_STIFFNESS};
use crate::field::ScalarField;
use crate::grid::DensityField;

/// Lower bound on SIMP design densities.
pub const SIMP_FLOOR: f64 = 1e-3;

const OC_DAMPING: f64 = 0.5;

/// Compliance derivative `dC/dx_e` from the element energy at the current
/// design. Energy is `s(x) q_e` with `s` the interpolated stiffness, so the
/// derivative is `-s'(x) q_e = -s'(x) energy / s(x)`.
pub fn compliance_sensitivity(density: &DensityField, energy: &ScalarField, penal: f64) -> ScalarField {
    let x = density.values().as_slice();
    let data = x
        .iter()
        .zip(energy.as_slice())
        .map(|(&xe, &en)| {
            let ds = penal * xe.powf(penal - 1.0) * (1.0 - VOID_STIFFNESS);
            -ds * en / interpolated_stiffness(xe, penal)
        })
        .collect();
    ScalarField::from_vec(energy.rows(), energy.cols(), data).expect("shape taken from energy")
}

/// One optimality-criteria update towards `target_volume`.
pub fn simp_step(
    density: &DensityField,
    energy: &ScalarField,
    target_volume: f64,
    cfg: &OptimizerConfig,
) -> Result<DensityField> {
    let d = density.domain().clone();
    energy.check_shape(d.height(), d.width())?;
    let raw = compliance_sensitivity(density, energy, cfg.penal);
    let dc = sensitivity_filter(&raw, cfg.filter_radius, density)?;

    let x = density.values().as_slice();
    let passive = d.passive_mask();
    let active: Vec<usize> = (0..x.len()).filter(|&i| !passive[i]).collect();
    if active.is_empty() {
        return Err(Error::Empty("active elements"));
    }
    // Only descent directions can satisfy the OC rule.
    let b: Vec<f64> = active.iter().map(|&i| (-dc.as_slice()[i]).max(0.0)).collect();
    if b.iter().all(|&v| v == 0.0) || b.iter().any(|v| !v.is_finite()) {
        return Err(Error::BracketFailure);
    }

    let update = |lambda: f64, out: &mut [f64]| -> f64 {
        let mut vol = 0.0;
        for (k, &i) in active.iter().enumerate() {
            let xe = x[i];
            let lo = (xe - cfg.move_limit).max(SIMP_FLOOR);
            let hi = (xe + cfg.move_limit).min(1.0);
            let v = (xe * (b[k] / lambda).powf(OC_DAMPING)).clamp(lo, hi);
            out[k] = v;
            vol += v;
        }
        vol
    };

    let mut trial = vec![0.0; active.len()];
    // Volume decreases monotonically in lambda; bracket in log space.
    let b_max = b.iter().cloned().fold(0.0, f64::max);
    let mut lo = b_max * 1e-30;
    let mut hi = b_max * 1e30;
    if update(lo, &mut trial) < target_volume || update(hi, &mut trial) > target_volume {
        return Err(Error::BracketFailure);
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if update(mid, &mut trial) > target_volume {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-15 {
            break;
        }
    }
    let vol = update((lo * hi).sqrt(), &mut trial);
    if (vol - target_volume).abs() > 1e-6 * target_volume {
        return Err(Error::BracketFailure);
    }
    let mut values = vec![0.0; x.len()];
    for (k, &i) in active.iter().enumerate() {
        values[i] = trial[k];
    }
    Ok(DensityField::from_parts(
        d.clone(),
        ScalarField::from_vec(d.height(), d.width(), values)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_problem, uniform_density, InitialDensity, ProblemKind};
    use crate::topopt::Method;

    #[test]
    fn uniform_energy_is_a_fixed_point() {
        let p = make_problem(ProblemKind::CantileverSingle, 16, 8, 1).unwrap();
        let x = uniform_density(&p, InitialDensity::Simp);
        let cfg = OptimizerConfig::new(Method::Simp, 16);
        let energy = ScalarField::filled(8, 16, 0.7);
        let y = simp_step(&x, &energy, p.target_volume(), &cfg).unwrap();
        assert!(y.values().max_abs_diff(x.values()) < 1e-9);
    }

    #[test]
    fn hits_the_volume_target() {
        let p = make_problem(ProblemKind::LBeam, 16, 16, 1).unwrap();
        let x = uniform_density(&p, InitialDensity::Simp);
        let cfg = OptimizerConfig::new(Method::Simp, 16);
        let energy = ScalarField::from_fn(16, 16, |r, c| ((r * 7 + c * 3) % 11) as f64 + 0.1);
        let target = p.target_volume();
        let y = simp_step(&x, &energy, target, &cfg).unwrap();
        assert!((y.volume() - target).abs() <= 1e-6 * target);
        for r in 0..16 {
            for c in 0..16 {
                if p.domain.is_passive(r, c) {
                    assert_eq!(y.get(r, c), 0.0);
                } else {
                    assert!((SIMP_FLOOR..=1.0).contains(&y.get(r, c)));
                }
            }
        }
    }

    #[test]
    fn zero_energy_cannot_bracket() {
        let p = make_problem(ProblemKind::CantileverSingle, 8, 8, 1).unwrap();
        let x = uniform_density(&p, InitialDensity::Simp);
        let cfg = OptimizerConfig::new(Method::Simp, 8);
        assert!(matches!(
            simp_step(&x, &ScalarField::zeros(8, 8), p.target_volume(), &cfg),
            Err(Error::BracketFailure)
        ));
    }
}
