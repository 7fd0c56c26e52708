//! Dataset harvesting, training, the lifted energy provider, and evaluation.

mod dataset;
mod eval;
mod provider;

pub use dataset::{Dataset, Sample};
pub use eval::{
    ablation_suite, detect_nonuniqueness, evaluate, paper_mse, AblationPlan, AblationRow, ErrorMetrics, EvalReport,
    ABLATION_CSV_HEADER, DEFAULT_NONUNIQUE_TOL,
};
pub use provider::LiftedProvider;

use std::ops::Range;

use crate::error::{Error, Result};
use crate::fem::{assemble_and_solve, FemSolver};
use crate::fragmap::{
    coarsen_density, estimate_normalization, fragment, normalize, FragmentBatch, FragmentSpec, NormalizationFactors,
    ScaleSpec,
};
use crate::grid::{DensityField, TOProblem};
use crate::mapnet::{build_model, train, TrainConfig, TrainOutcome, DEFAULT_CHANNELS};
use crate::topopt::{run_to_with, FemProvider, OptimizerConfig, RunOptions, TOTrace};

/// Samples used to estimate normalization factors.
pub const NORMALIZATION_SAMPLES: usize = 5;

/// Runs fine-scale FEM-TO for exactly `n_iters` iterations and records, for
/// every iteration, the design, its fine energy, and the energy of the
/// block-averaged design solved on the coarse mesh.
pub fn generate_dataset(
    problem: &TOProblem,
    cfg: &OptimizerConfig,
    n_iters: usize,
    scale: &ScaleSpec,
) -> Result<Dataset> {
    Ok(generate_dataset_with_trace(problem, cfg, n_iters, scale)?.0)
}

/// [`generate_dataset`] that also returns the underlying FEM trace.
pub fn generate_dataset_with_trace(
    problem: &TOProblem,
    cfg: &OptimizerConfig,
    n_iters: usize,
    scale: &ScaleSpec,
) -> Result<(Dataset, TOTrace)> {
    if n_iters == 0 || n_iters > cfg.max_iters {
        return Err(Error::Config(format!(
            "n_iters must lie in 1..={}, got {n_iters}",
            cfg.max_iters
        )));
    }
    let d = &problem.domain;
    if (d.width(), d.height()) != (scale.fine_w, scale.fine_h) {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", scale.fine_w, scale.fine_h),
            got: format!("{}x{}", d.width(), d.height()),
        });
    }
    let mut run_cfg = cfg.clone();
    run_cfg.max_iters = n_iters;
    run_cfg.convergence_tol = 0.0;
    let mut fem = FemProvider::new(problem, cfg.penal)?;
    let opts = RunOptions {
        keep_snapshots: true,
        initial: None,
    };
    let mut trace = run_to_with(problem, &run_cfg, &mut fem, &opts)?;

    let mut coarse = FemSolver::new(&problem.coarsened(scale.ratio)?)?;
    let mut last: Option<Vec<f64>> = None;
    let mut samples = Vec::with_capacity(trace.records.len());
    for rec in &mut trace.records {
        let density = rec.density.take().expect("snapshots requested");
        let fine_energy = rec.energy.take().expect("snapshots requested");
        let cx = coarsen_density(&density, scale)?;
        let sol = coarse.solve_with_guess(&cx, cfg.penal, last.as_deref())?;
        last = Some(sol.nodal);
        rec.coarse_compliance = Some(sol.compliance);
        samples.push(Sample {
            iteration: rec.iteration,
            coarse_energy: sol.element_energy,
            density,
            fine_energy,
        });
    }
    let data = Dataset {
        problem: problem.name.clone(),
        method: cfg.method,
        scale: *scale,
        samples,
        norm: None,
    };
    Ok((data, trace))
}

/// Factors from the coarse and fine energies of the first five samples.
pub fn estimate_factors(data: &Dataset) -> Result<NormalizationFactors> {
    let head = &data.samples[..data.len().min(NORMALIZATION_SAMPLES)];
    if head.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let coarse: Vec<_> = head.iter().map(|s| s.coarse_energy.clone()).collect();
    let fine: Vec<_> = head.iter().map(|s| s.fine_energy.clone()).collect();
    NormalizationFactors::new(estimate_normalization(&coarse)?, estimate_normalization(&fine)?)
}

/// Normalizes and fragments every sample, in sample order.
pub fn fragment_dataset(data: &Dataset, fspec: &FragmentSpec, norm: &NormalizationFactors) -> Result<FragmentBatch> {
    let mut out = FragmentBatch::default();
    for s in &data.samples {
        let c = normalize(&s.coarse_energy, norm.coarse)?;
        let f = normalize(&s.fine_energy, norm.fine)?;
        out.extend(fragment(&c, s.density.values(), Some(&f), fspec)?);
    }
    if out.fine.is_none() {
        out.fine = Some(Vec::new());
    }
    Ok(out)
}

/// Builds a model seeded from `tcfg.seed` and trains it on every fragment of
/// `data`. Factors come from `norm`, else from the dataset, else from its
/// first samples.
pub fn train_mapnet(
    data: &Dataset,
    fspec: &FragmentSpec,
    tcfg: &TrainConfig,
    norm: Option<NormalizationFactors>,
) -> Result<TrainOutcome> {
    train_mapnet_with_channels(data, fspec, tcfg, norm, DEFAULT_CHANNELS)
}

pub fn train_mapnet_with_channels(
    data: &Dataset,
    fspec: &FragmentSpec,
    tcfg: &TrainConfig,
    norm: Option<NormalizationFactors>,
    channels_base: usize,
) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if fspec.ratio() != data.scale.ratio {
        return Err(Error::Config(format!(
            "fragment ratio {} does not match dataset ratio {}",
            fspec.ratio(),
            data.scale.ratio
        )));
    }
    let norm = match norm.or(data.norm) {
        Some(n) => n,
        None => estimate_factors(data)?,
    };
    let batch = fragment_dataset(data, fspec, &norm)?;
    let model = build_model(fspec, channels_base, norm, tcfg.seed)?;
    train(&model, &batch, tcfg)
}

/// Normalization from a short fine-FEM probe: the first five iterations of
/// the problem are run and their fields estimated as in training.
pub fn probe_normalization(
    problem: &TOProblem,
    cfg: &OptimizerConfig,
    scale: &ScaleSpec,
) -> Result<NormalizationFactors> {
    let mut probe = cfg.clone();
    probe.max_iters = probe.max_iters.max(NORMALIZATION_SAMPLES);
    estimate_factors(&generate_dataset(problem, &probe, NORMALIZATION_SAMPLES, scale)?)
}

/// Compliance of a design from a direct fine-scale solve.
pub fn fine_compliance(problem: &TOProblem, density: &DensityField, penal: f64) -> Result<f64> {
    Ok(assemble_and_solve(problem, density, penal)?.compliance)
}

/// Per-iteration optimization history, without timings so that repeated
/// runs produce identical files.
pub const TRACE_CSV_HEADER: &str = "iteration,compliance,volume_fraction,coarse_compliance";

pub fn trace_csv(trace: &TOTrace) -> String {
    let mut out = String::from(TRACE_CSV_HEADER);
    out.push('\n');
    for r in &trace.records {
        let coarse = r.coarse_compliance.map(|c| format!("{c:e}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{:e},{:e},{}\n",
            r.iteration, r.compliance, r.volume_fraction, coarse
        ));
    }
    out
}

pub const TIMING_CSV_HEADER: &str = "iteration,provider_seconds,update_seconds";

pub fn timing_csv(trace: &TOTrace) -> String {
    let mut out = String::from(TIMING_CSV_HEADER);
    out.push('\n');
    for r in &trace.records {
        out.push_str(&format!(
            "{},{:.6},{:.6}\n",
            r.iteration,
            r.provider_time.as_secs_f64(),
            r.update_time.as_secs_f64()
        ));
    }
    out
}

/// Samples whose iteration lies in `range` (1-based, half-open).
pub(crate) fn iteration_window(data: &Dataset, range: Range<usize>) -> Dataset {
    Dataset {
        samples: data
            .samples
            .iter()
            .filter(|s| range.contains(&s.iteration))
            .cloned()
            .collect(),
        ..data.clone_header()
    }
}
