//! SIMP and BESO compliance minimization.
//!
//! The loop in [`run_to_with`] only sees an [`EnergyProvider`], so the same
//! code drives optimization on direct fine-scale FEM or on a lifted field.

mod beso;
mod filter;
mod simp;

pub use beso::{beso_step, next_target_volume, solid_count, threshold_design, BESO_X_MIN};
pub use filter::sensitivity_filter;
pub use simp::{compliance_sensitivity, simp_step, SIMP_FLOOR};

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::fem::{FemSolver, LinearSolver};
use crate::field::ScalarField;
use crate::grid::{uniform_density, DensityField, InitialDensity, TOProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Simp,
    Beso,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Simp => "simp",
            Method::Beso => "beso",
        }
    }

    pub fn initial_density(self) -> InitialDensity {
        match self {
            Method::Simp => InitialDensity::Simp,
            Method::Beso => InitialDensity::Beso,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simp" => Ok(Method::Simp),
            "beso" => Ok(Method::Beso),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub method: Method,
    pub penal: f64,
    /// In element widths.
    pub filter_radius: f64,
    pub move_limit: f64,
    pub beso_evolution_rate: f64,
    pub max_iters: usize,
    /// Relative change between successive 5-iteration compliance means at
    /// which the run stops. Zero disables the check.
    pub convergence_tol: f64,
}

/// Iterations per convergence window.
pub const CONVERGENCE_WINDOW: usize = 5;

impl OptimizerConfig {
    /// Defaults for a design `width` elements wide. The filter radius scales
    /// as `width / 32`.
    pub fn new(method: Method, width: usize) -> Self {
        Self {
            method,
            penal: 3.0,
            filter_radius: (width as f64 / 32.0).max(1.0),
            move_limit: 0.2,
            beso_evolution_rate: 0.02,
            max_iters: 200,
            convergence_tol: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.penal >= 1.0) {
            return bad("penal must be at least 1");
        }
        if !(self.filter_radius >= 1.0) {
            return bad("filter_radius must be at least 1");
        }
        if !(self.move_limit > 0.0 && self.move_limit <= 1.0) {
            return bad("move_limit must lie in (0, 1]");
        }
        if !(self.beso_evolution_rate > 0.0 && self.beso_evolution_rate < 1.0) {
            return bad("beso_evolution_rate must lie in (0, 1)");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        if !(self.convergence_tol >= 0.0) {
            return bad("convergence_tol must be nonnegative");
        }
        Ok(())
    }
}

/// Result of one energy-field evaluation.
#[derive(Debug, Clone)]
pub struct EnergyEvaluation {
    /// Fine-scale elementwise energy driving the update.
    pub energy: ScalarField,
    /// Sum of `energy`.
    pub compliance: f64,
    pub coarse_energy: Option<ScalarField>,
    pub coarse_compliance: Option<f64>,
    /// Named wall-time phases of the evaluation.
    pub phases: Vec<(&'static str, Duration)>,
}

/// Source of the elementwise energy field for a fine design.
pub trait EnergyProvider {
    fn name(&self) -> &str;

    fn evaluate(&mut self, density: &DensityField) -> Result<EnergyEvaluation>;
}

/// Direct fine-scale FEM.
pub struct FemProvider {
    solver: FemSolver,
    penal: f64,
    last: Option<Vec<f64>>,
}

impl FemProvider {
    pub fn new(problem: &TOProblem, penal: f64) -> Result<Self> {
        Ok(Self {
            solver: FemSolver::new(problem)?,
            penal,
            last: None,
        })
    }

    pub fn with_backend(mut self, backend: LinearSolver) -> Self {
        self.solver = self.solver.with_backend(backend);
        self
    }
}

impl EnergyProvider for FemProvider {
    fn name(&self) -> &str {
        "fem"
    }

    fn evaluate(&mut self, density: &DensityField) -> Result<EnergyEvaluation> {
        let t = Instant::now();
        let sol = self
            .solver
            .solve_with_guess(density, self.penal, self.last.as_deref())?;
        let elapsed = t.elapsed();
        self.last = Some(sol.nodal);
        Ok(EnergyEvaluation {
            energy: sol.element_energy,
            compliance: sol.compliance,
            coarse_energy: None,
            coarse_compliance: None,
            phases: vec![("fine_fem", elapsed)],
        })
    }
}

#[derive(Debug, Clone)]
pub struct TraceRecord {
    /// 1-based; iteration 1 evaluates the starting design.
    pub iteration: usize,
    pub compliance: f64,
    pub volume_fraction: f64,
    pub coarse_compliance: Option<f64>,
    pub provider_time: Duration,
    /// Time of the design update that followed this evaluation (zero for the
    /// last record).
    pub update_time: Duration,
    pub density: Option<DensityField>,
    pub energy: Option<ScalarField>,
    pub coarse_energy: Option<ScalarField>,
}

#[derive(Debug, Clone)]
pub struct TOTrace {
    pub problem: String,
    pub method: Method,
    pub engine: String,
    pub records: Vec<TraceRecord>,
    pub converged: bool,
    /// Design of the last record.
    pub final_density: DensityField,
}

impl TOTrace {
    pub fn final_compliance(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.compliance)
    }

    pub fn final_volume_fraction(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.volume_fraction)
    }

    pub fn mean_iteration_time(&self) -> Duration {
        let n = self.records.len().max(1) as u32;
        self.records
            .iter()
            .map(|r| r.provider_time + r.update_time)
            .sum::<Duration>()
            / n
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Store density and energy fields on every record.
    pub keep_snapshots: bool,
    /// Overrides the uniform starting design.
    pub initial: Option<DensityField>,
}

pub fn run_to(problem: &TOProblem, cfg: &OptimizerConfig, engine: &mut dyn EnergyProvider) -> Result<TOTrace> {
    run_to_with(problem, cfg, engine, &RunOptions::default())
}

fn window_converged(records: &[TraceRecord], tol: f64) -> bool {
    let n = records.len();
    if tol <= 0.0 || n < 2 * CONVERGENCE_WINDOW {
        return false;
    }
    let mean = |s: &[TraceRecord]| s.iter().map(|r| r.compliance).sum::<f64>() / s.len() as f64;
    let recent = mean(&records[n - CONVERGENCE_WINDOW..]);
    let before = mean(&records[n - 2 * CONVERGENCE_WINDOW..n - CONVERGENCE_WINDOW]);
    ((recent - before) / before).abs() < tol
}

pub fn run_to_with(
    problem: &TOProblem,
    cfg: &OptimizerConfig,
    engine: &mut dyn EnergyProvider,
    options: &RunOptions,
) -> Result<TOTrace> {
    cfg.validate()?;
    let target = problem.target_volume();
    let mut x = match &options.initial {
        Some(x0) => {
            if **x0.domain() != *problem.domain {
                return Err(Error::Config("initial design does not match the problem domain".into()));
            }
            x0.clone()
        }
        None => uniform_density(problem, cfg.method.initial_density()),
    };
    let mut beso_target = x.volume();
    let mut stabilized: Option<ScalarField> = None;
    let mut records: Vec<TraceRecord> = Vec::new();
    let mut converged = false;

    for iteration in 1..=cfg.max_iters {
        let t = Instant::now();
        let eval = engine.evaluate(&x)?;
        let provider_time = t.elapsed();
        let volume_fraction = x.volume_fraction();
        records.push(TraceRecord {
            iteration,
            compliance: eval.compliance,
            volume_fraction,
            coarse_compliance: eval.coarse_compliance,
            provider_time,
            update_time: Duration::ZERO,
            density: options.keep_snapshots.then(|| x.clone()),
            energy: options.keep_snapshots.then(|| eval.energy.clone()),
            coarse_energy: if options.keep_snapshots {
                eval.coarse_energy.clone()
            } else {
                None
            },
        });
        let at_target = (volume_fraction - problem.volume_fraction).abs() <= 1e-3;
        if at_target && window_converged(&records, cfg.convergence_tol) {
            converged = true;
            break;
        }
        if iteration == cfg.max_iters {
            break;
        }
        let t = Instant::now();
        x = match cfg.method {
            Method::Simp => simp_step(&x, &eval.energy, target, cfg)?,
            Method::Beso => {
                beso_target = next_target_volume(beso_target, target, cfg.beso_evolution_rate);
                let (y, alpha) = beso_step(&x, &eval.energy, stabilized.as_ref(), beso_target, cfg)?;
                stabilized = Some(alpha);
                y
            }
        };
        records.last_mut().expect("pushed above").update_time = t.elapsed();
    }

    Ok(TOTrace {
        problem: problem.name.clone(),
        method: cfg.method,
        engine: engine.name().to_string(),
        records,
        converged,
        final_density: x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_problem, ProblemKind};

    #[test]
    fn config_validation() {
        let mut cfg = OptimizerConfig::new(Method::Simp, 64);
        assert_eq!(cfg.filter_radius, 2.0);
        assert!(cfg.validate().is_ok());
        cfg.beso_evolution_rate = 1.0;
        assert!(cfg.validate().is_err());
        assert_eq!(OptimizerConfig::new(Method::Beso, 16).filter_radius, 1.0);
        assert_eq!("beso".parse::<Method>().unwrap(), Method::Beso);
        assert!("mma".parse::<Method>().is_err());
    }

    #[test]
    fn simp_descends_on_small_cantilever() {
        let p = make_problem(ProblemKind::CantileverSingle, 8, 8, 1).unwrap();
        let mut cfg = OptimizerConfig::new(Method::Simp, 8);
        cfg.max_iters = 4;
        let mut fem = FemProvider::new(&p, cfg.penal).unwrap();
        let trace = run_to(&p, &cfg, &mut fem).unwrap();
        let c: Vec<f64> = trace.records.iter().map(|r| r.compliance).collect();
        assert!(c.windows(2).all(|w| w[1] < w[0]), "{c:?}");
        for r in &trace.records {
            assert!((r.volume_fraction - 0.4).abs() < 1e-6);
        }
    }

    #[test]
    fn beso_stays_two_valued() {
        let p = make_problem(ProblemKind::CantileverSingle, 16, 16, 1).unwrap();
        let mut cfg = OptimizerConfig::new(Method::Beso, 16);
        cfg.max_iters = 60;
        let mut fem = FemProvider::new(&p, cfg.penal).unwrap();
        let opts = RunOptions {
            keep_snapshots: true,
            initial: None,
        };
        let trace = run_to_with(&p, &cfg, &mut fem, &opts).unwrap();
        for r in &trace.records {
            let x = r.density.as_ref().unwrap();
            assert!(x.values().as_slice().iter().all(|&v| v == 1.0 || v == BESO_X_MIN));
        }
        assert!((trace.final_volume_fraction() - 0.4).abs() <= 1e-3);
    }
}
