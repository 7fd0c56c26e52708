use std::time::Instant;

use crate::error::{Error, Result};
use crate::fem::FemSolver;
use crate::fragmap::{coarsen_density, defragment, denormalize, fragment, normalize, FragmentSpec, ScaleSpec};
use crate::grid::{DensityField, TOProblem};
use crate::mapnet::MapNetModel;
use crate::topopt::{EnergyEvaluation, EnergyProvider};

/// Energy provider that never touches the fine mesh: coarsen, solve on the
/// coarse mesh, fragment, map every fragment with the network, reassemble.
pub struct LiftedProvider {
    model: MapNetModel,
    scale: ScaleSpec,
    coarse: FemSolver,
    penal: f64,
    last: Option<Vec<f64>>,
}

impl LiftedProvider {
    pub fn new(
        model: MapNetModel,
        problem: &TOProblem,
        scale: &ScaleSpec,
        fspec: &FragmentSpec,
        penal: f64,
    ) -> Result<Self> {
        let have = model.fspec();
        if have.coarse_patch != fspec.coarse_patch
            || have.fine_patch != fspec.fine_patch
            || have.overlap != fspec.overlap
        {
            return Err(Error::FingerprintMismatch {
                model: have.fingerprint(),
                requested: fspec.fingerprint(),
            });
        }
        if fspec.ratio() != scale.ratio {
            return Err(Error::Config(format!(
                "fragment ratio {} does not match coarsening ratio {}",
                fspec.ratio(),
                scale.ratio
            )));
        }
        let d = &problem.domain;
        if (d.width(), d.height()) != (scale.fine_w, scale.fine_h) {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", scale.fine_w, scale.fine_h),
                got: format!("{}x{}", d.width(), d.height()),
            });
        }
        Ok(Self {
            model,
            scale: *scale,
            coarse: FemSolver::new(&problem.coarsened(scale.ratio)?)?,
            penal,
            last: None,
        })
    }

    pub fn model(&self) -> &MapNetModel {
        &self.model
    }
}

impl EnergyProvider for LiftedProvider {
    fn name(&self) -> &str {
        "mapnet"
    }

    fn evaluate(&mut self, density: &DensityField) -> Result<EnergyEvaluation> {
        let norm = self.model.norm();
        let fspec = *self.model.fspec();

        let t = Instant::now();
        let cx = coarsen_density(density, &self.scale)?;
        let sol = self.coarse.solve_with_guess(&cx, self.penal, self.last.as_deref())?;
        let coarse_time = t.elapsed();

        let t = Instant::now();
        let batch = fragment(
            &normalize(&sol.element_energy, norm.coarse)?,
            density.values(),
            None,
            &fspec,
        )?;
        let mut fragment_time = t.elapsed();

        let t = Instant::now();
        let patches = self.model.forward_batch(&batch)?;
        let forward_time = t.elapsed();

        let t = Instant::now();
        let lifted = defragment(&patches, &batch.origins, &fspec, self.scale.fine_w, self.scale.fine_h)?;
        let energy = denormalize(&lifted, norm.fine)?;
        fragment_time += t.elapsed();

        self.last = Some(sol.nodal);
        Ok(EnergyEvaluation {
            compliance: energy.sum(),
            energy,
            coarse_energy: Some(sol.element_energy),
            coarse_compliance: Some(sol.compliance),
            phases: vec![
                ("coarse_fem", coarse_time),
                ("fragmentation", fragment_time),
                ("forward", forward_time),
            ],
        })
    }
}
