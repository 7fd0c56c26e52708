//! Finite element analysis on regular quad meshes: plane-stress elasticity
//! (`K U = F`) and steady conduction (`K_c T = F`).
//!
//! Element stiffness is interpolated as `E_min + x^p (1 - E_min)` with
//! `E_min = VOID_STIFFNESS`. Reported elastic compliance is `½ UᵀKU` and the
//! element energy is `½ u_eᵀ k_e u_e`, so the energies sum to the compliance.
//! Thermal compliance is `TᵀK_cT` with element energy `t_eᵀ k_e t_e`.

mod cholesky;
mod element;
mod sparse;

pub use element::{element_stiffness, ElementMatrix};
pub use sparse::{pcg, CsrMatrix, PcgStats};

use std::fmt;
use std::str::FromStr;

use cholesky::CholeskySolver;

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::{DensityField, Direction, LoadSpec, Physics, TOProblem};

/// Relative stiffness of fully void material.
pub const VOID_STIFFNESS: f64 = 1e-9;
/// Relative residual at which the conjugate gradient solve stops.
pub const SOLVER_TOLERANCE: f64 = 1e-8;

const FIXED: u32 = u32::MAX;

/// Linear solver used for the reduced system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinearSolver {
    /// Jacobi-preconditioned conjugate gradient, iteration cap 10·DOFs.
    Pcg,
    /// Supernodal sparse Cholesky with a cached symbolic analysis; falls back
    /// to warm-started PCG if the residual check fails.
    #[default]
    Cholesky,
}

impl LinearSolver {
    pub fn as_str(self) -> &'static str {
        match self {
            LinearSolver::Pcg => "pcg",
            LinearSolver::Cholesky => "cholesky",
        }
    }
}

impl fmt::Display for LinearSolver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LinearSolver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pcg" => Ok(LinearSolver::Pcg),
            "cholesky" => Ok(LinearSolver::Cholesky),
            other => Err(Error::Config(format!("unknown linear solver `{other}`"))),
        }
    }
}

/// Penalized stiffness multiplier for density `x`.
#[inline]
pub fn interpolated_stiffness(x: f64, penal: f64) -> f64 {
    VOID_STIFFNESS + x.powf(penal) * (1.0 - VOID_STIFFNESS)
}

#[derive(Debug, Clone)]
pub struct FemSolution {
    /// Full nodal vector, fixed DOFs included (at their prescribed zero).
    pub nodal: Vec<f64>,
    pub compliance: f64,
    pub element_energy: ScalarField,
    pub iterations: usize,
}

/// Sum of densities over active elements.
pub fn total_volume(density: &DensityField) -> f64 {
    density.volume()
}

/// Reusable assembly layout for one problem: DOF numbering, the sparsity
/// pattern of the reduced system and the load vector.
#[derive(Debug, Clone)]
pub struct FemSolver {
    physics: Physics,
    width: usize,
    height: usize,
    ke: ElementMatrix,
    /// Full DOF index of each element's local DOFs.
    element_dofs: Vec<u32>,
    /// CSR value slot for each element's local matrix entries.
    element_slots: Vec<u32>,
    /// Full DOF -> reduced index.
    reduced: Vec<u32>,
    matrix: CsrMatrix,
    rhs_full: Vec<f64>,
    rhs: Vec<f64>,
    backend: LinearSolver,
    cholesky: Option<CholeskySolver>,
}

impl FemSolver {
    pub fn new(problem: &TOProblem) -> Result<Self> {
        let d = &problem.domain;
        let physics = problem.physics;
        let dpn = physics.dofs_per_node();
        let (w, h) = (d.width(), d.height());
        let n_full = d.node_count() * dpn;

        if problem.bc.is_empty() {
            return Err(Error::Singular("no fixed degrees of freedom".into()));
        }
        let mut reduced = vec![0u32; n_full];
        for f in problem.bc.fixed() {
            let node = d.node_id(f.row, f.col);
            let dof = match f.direction {
                Direction::Horizontal | Direction::Temperature => node * dpn,
                Direction::Vertical => node * dpn + 1,
            };
            reduced[dof] = FIXED;
        }
        let mut n_free = 0u32;
        for r in reduced.iter_mut() {
            if *r != FIXED {
                *r = n_free;
                n_free += 1;
            }
        }

        let local = 4 * dpn;
        let mut element_dofs = Vec::with_capacity(w * h * local);
        for er in 0..h {
            for ec in 0..w {
                let nodes = [
                    d.node_id(er + 1, ec),
                    d.node_id(er + 1, ec + 1),
                    d.node_id(er, ec + 1),
                    d.node_id(er, ec),
                ];
                for n in nodes {
                    for k in 0..dpn {
                        element_dofs.push((n * dpn + k) as u32);
                    }
                }
            }
        }

        let mut rows: Vec<Vec<u32>> = vec![Vec::with_capacity(9 * dpn); n_free as usize];
        for dofs in element_dofs.chunks_exact(local) {
            for &i in dofs {
                let ri = reduced[i as usize];
                if ri == FIXED {
                    continue;
                }
                for &j in dofs {
                    let rj = reduced[j as usize];
                    if rj != FIXED {
                        rows[ri as usize].push(rj);
                    }
                }
            }
        }
        for r in rows.iter_mut() {
            r.sort_unstable();
            r.dedup();
        }
        let matrix = CsrMatrix::from_pattern(rows);

        let mut element_slots = Vec::with_capacity(element_dofs.len() * local);
        for dofs in element_dofs.chunks_exact(local) {
            for &i in dofs {
                for &j in dofs {
                    let (ri, rj) = (reduced[i as usize], reduced[j as usize]);
                    let slot = if ri == FIXED || rj == FIXED {
                        FIXED
                    } else {
                        matrix
                            .slot(ri as usize, rj as usize)
                            .expect("pattern covers element coupling") as u32
                    };
                    element_slots.push(slot);
                }
            }
        }

        let mut rhs_full = vec![0.0; n_full];
        match &problem.loads {
            LoadSpec::Nodal(entries) => {
                for p in entries {
                    let node = d.node_id(p.row, p.col);
                    let dof = match p.direction {
                        Direction::Vertical => node * dpn + 1,
                        _ => node * dpn,
                    };
                    rhs_full[dof] += p.magnitude;
                }
            }
            LoadSpec::Volumetric(src) => {
                // Unit-area elements: a quarter of the source to each node.
                for (e, dofs) in element_dofs.chunks_exact(local).enumerate() {
                    let q = 0.25 * src.as_slice()[e];
                    for &i in dofs {
                        rhs_full[i as usize] += q;
                    }
                }
            }
        }
        let rhs = (0..n_full)
            .filter(|&i| reduced[i] != FIXED)
            .map(|i| rhs_full[i])
            .collect();

        Ok(Self {
            physics,
            width: w,
            height: h,
            ke: element_stiffness(physics),
            element_dofs,
            element_slots,
            reduced,
            matrix,
            rhs_full,
            rhs,
            backend: LinearSolver::default(),
            cholesky: None,
        })
    }

    pub fn with_backend(mut self, backend: LinearSolver) -> Self {
        self.backend = backend;
        self
    }

    pub fn backend(&self) -> LinearSolver {
        self.backend
    }

    pub fn physics(&self) -> Physics {
        self.physics
    }

    pub fn dof_count(&self) -> usize {
        self.reduced.len()
    }

    pub fn free_dof_count(&self) -> usize {
        self.rhs.len()
    }

    /// Full load vector.
    pub fn load_vector(&self) -> &[f64] {
        &self.rhs_full
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn reduced_rhs(&self) -> &[f64] {
        &self.rhs
    }

    /// Writes `Σ_e s_e k_e` into the reduced matrix.
    pub fn assemble(&mut self, stiffness: &[f64]) {
        let local = self.ke.size();
        let ke = self.ke.entries();
        let vals = self.matrix.values_mut();
        vals.fill(0.0);
        for (e, slots) in self.element_slots.chunks_exact(local * local).enumerate() {
            let s = stiffness[e];
            for (k, &slot) in slots.iter().enumerate() {
                if slot != FIXED {
                    vals[slot as usize] += s * ke[k];
                }
            }
        }
    }

    pub fn solve(&mut self, density: &DensityField, penal: f64) -> Result<FemSolution> {
        self.solve_with_guess(density, penal, None)
    }

    /// Solves for the given design, optionally warm-starting the conjugate
    /// gradient iteration from a previous full nodal vector.
    pub fn solve_with_guess(
        &mut self,
        density: &DensityField,
        penal: f64,
        guess: Option<&[f64]>,
    ) -> Result<FemSolution> {
        density.values().check_shape(self.height, self.width)?;
        if !(penal >= 1.0) {
            return Err(Error::Config(format!("penalization {penal} < 1")));
        }
        let x = density.values().as_slice();
        if x.iter().all(|&v| v == 0.0) {
            return Err(Error::Singular("all-void density".into()));
        }
        let stiffness: Vec<f64> = x.iter().map(|&v| interpolated_stiffness(v, penal)).collect();
        self.assemble(&stiffness);

        let n_free = self.free_dof_count();
        let mut u = vec![0.0; n_free];
        if let Some(g) = guess {
            if g.len() == self.dof_count() {
                for (i, &r) in self.reduced.iter().enumerate() {
                    if r != FIXED {
                        u[r as usize] = g[i];
                    }
                }
            }
        }
        let cap = 10 * self.dof_count();
        let iterations = match self.backend {
            LinearSolver::Pcg => pcg(&self.matrix, &self.rhs, &mut u, SOLVER_TOLERANCE, cap)?.iterations,
            LinearSolver::Cholesky => {
                if self.cholesky.is_none() {
                    self.cholesky = Some(CholeskySolver::analyze(&self.matrix)?);
                }
                u.copy_from_slice(&self.rhs);
                self.cholesky
                    .as_ref()
                    .expect("analysis cached above")
                    .solve(&self.matrix, &mut u)?;
                // Residual check; polishes with PCG from the direct solution
                // in the rare case of a poor factorization.
                pcg(&self.matrix, &self.rhs, &mut u, SOLVER_TOLERANCE, cap)?.iterations
            }
        };

        let mut nodal = vec![0.0; self.dof_count()];
        for (i, &r) in self.reduced.iter().enumerate() {
            if r != FIXED {
                nodal[i] = u[r as usize];
            }
        }

        let local = self.ke.size();
        let half = match self.physics {
            Physics::Elastic => 0.5,
            Physics::Thermal => 1.0,
        };
        let mut ue = vec![0.0; local];
        let mut energy = Vec::with_capacity(stiffness.len());
        for (e, dofs) in self.element_dofs.chunks_exact(local).enumerate() {
            for (k, &i) in dofs.iter().enumerate() {
                ue[k] = nodal[i as usize];
            }
            energy.push((half * stiffness[e] * self.ke.quadratic_form(&ue)).max(0.0));
        }
        let work: f64 = nodal.iter().zip(&self.rhs_full).map(|(a, b)| a * b).sum();
        Ok(FemSolution {
            nodal,
            compliance: half * work,
            element_energy: ScalarField::from_vec(self.height, self.width, energy)?,
            iterations,
        })
    }
}

/// One-shot assembly and solve.
pub fn assemble_and_solve(problem: &TOProblem, density: &DensityField, penal: f64) -> Result<FemSolution> {
    FemSolver::new(problem)?.solve(density, penal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_problem, uniform_density, BoundaryCondition, DomainSpec, InitialDensity, ProblemKind};

    #[test]
    fn compliance_matches_element_energy_sum() {
        let p = make_problem(ProblemKind::CantileverSingle, 16, 16, 1).unwrap();
        let x = uniform_density(&p, InitialDensity::Simp);
        let sol = assemble_and_solve(&p, &x, 3.0).unwrap();
        let sum = sol.element_energy.sum();
        assert!((sum - sol.compliance).abs() / sol.compliance < 1e-8);
        assert!(sol.element_energy.as_slice().iter().all(|&e| e >= 0.0));
    }

    #[test]
    fn thermal_compliance_matches_energy_sum() {
        let p = make_problem(ProblemKind::ThermalSmallSink, 16, 16, 1).unwrap();
        let x = uniform_density(&p, InitialDensity::Simp);
        let sol = assemble_and_solve(&p, &x, 3.0).unwrap();
        assert!((sol.element_energy.sum() - sol.compliance).abs() / sol.compliance < 1e-8);
    }

    #[test]
    fn load_scaling_is_quadratic() {
        let p = make_problem(ProblemKind::CantileverSingle, 8, 8, 1).unwrap();
        let mut q = p.clone();
        q.loads = p.loads.scaled(3.0);
        let x = uniform_density(&p, InitialDensity::Beso);
        let a = assemble_and_solve(&p, &x, 3.0).unwrap();
        let b = assemble_and_solve(&q, &x, 3.0).unwrap();
        assert!((b.compliance / a.compliance - 9.0).abs() < 1e-7);
        for (ua, ub) in a.nodal.iter().zip(&b.nodal) {
            assert!((3.0 * ua - ub).abs() <= 1e-7 * ub.abs().max(1e-6));
        }
    }

    #[test]
    fn singular_inputs_are_rejected() {
        let p = make_problem(ProblemKind::CantileverSingle, 8, 8, 1).unwrap();
        let void = DensityField::new(p.domain.clone(), ScalarField::zeros(8, 8)).unwrap();
        assert!(matches!(assemble_and_solve(&p, &void, 3.0), Err(Error::Singular(_))));
        let free = TOProblem {
            bc: BoundaryCondition::new(vec![]),
            ..p.clone()
        };
        let x = uniform_density(&free, InitialDensity::Beso);
        assert!(matches!(assemble_and_solve(&free, &x, 3.0), Err(Error::Singular(_))));
    }

    #[test]
    fn rejects_mismatched_density() {
        let p = make_problem(ProblemKind::CantileverSingle, 8, 8, 1).unwrap();
        let other = std::sync::Arc::new(DomainSpec::new(4, 4).unwrap());
        let x = DensityField::new(other, ScalarField::filled(4, 4, 1.0)).unwrap();
        assert!(matches!(
            assemble_and_solve(&p, &x, 3.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn total_volume_examples() {
        let d = std::sync::Arc::new(DomainSpec::new(10, 10).unwrap());
        let x = DensityField::new(d.clone(), ScalarField::filled(10, 10, 0.4)).unwrap();
        assert!((total_volume(&x) - 40.0).abs() < 1e-12);
        let x = DensityField::new(d, ScalarField::zeros(10, 10)).unwrap();
        assert_eq!(total_volume(&x), 0.0);
        let p = make_problem(ProblemKind::LBeam, 16, 16, 1).unwrap();
        let x = uniform_density(&p, InitialDensity::Beso);
        assert_eq!(total_volume(&x), 192.0);
    }
}
