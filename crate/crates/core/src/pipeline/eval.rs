use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::fragmap::{defragment, normalize, FragmentBatch, FragmentSpec, ScaleSpec};
use crate::grid::{make_problem, ProblemKind};
use crate::mapnet::{MapNetModel, TrainConfig};
use crate::topopt::{Method, OptimizerConfig};

use super::{fragment_dataset, generate_dataset, train_mapnet_with_channels, Dataset};

/// `(1/N)·√(Σ squared errors)` with `N` the number of patches or fields and
/// the sum running over all of their pixels.
pub fn paper_mse(pred: &[ScalarField], target: &[ScalarField]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let sq: f64 = pred.iter().zip(target).map(|(p, t)| squared_error(p, t)).sum();
    sq.sqrt() / pred.len() as f64
}

fn squared_error(a: &ScalarField, b: &ScalarField) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

fn plain_mse(pred: &[ScalarField], target: &[ScalarField]) -> f64 {
    let pixels: usize = pred.iter().map(ScalarField::len).sum();
    if pixels == 0 {
        return 0.0;
    }
    pred.iter().zip(target).map(|(p, t)| squared_error(p, t)).sum::<f64>() / pixels as f64
}

/// Errors on normalized values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMetrics {
    pub paper_mse: f64,
    pub plain_mse: f64,
}

impl ErrorMetrics {
    pub fn of(pred: &[ScalarField], target: &[ScalarField]) -> Self {
        Self {
            paper_mse: paper_mse(pred, target),
            plain_mse: plain_mse(pred, target),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    /// Over individual fragments, `N` = fragment count.
    pub fragments: ErrorMetrics,
    /// Over reassembled fields, `N` = sample count.
    pub fields: ErrorMetrics,
    /// Plain MSE of each reassembled field.
    pub per_sample: Vec<f64>,
    pub fragment_count: usize,
    pub sample_count: usize,
    pub phases: Vec<(&'static str, Duration)>,
    pub total: Duration,
}

/// Maps every fragment of `held_out` and compares against its fine FEM
/// energy, both patch by patch and after reassembly.
pub fn evaluate(model: &MapNetModel, held_out: &Dataset, fspec: &FragmentSpec) -> Result<EvalReport> {
    if held_out.is_empty() {
        return Err(Error::Empty("held-out dataset"));
    }
    let start = Instant::now();
    let norm = model.norm();
    let (fw, fh) = (held_out.scale.fine_w, held_out.scale.fine_h);

    let t = Instant::now();
    let batch = fragment_dataset(held_out, fspec, &norm)?;
    let fine_targets: Vec<ScalarField> = held_out
        .samples
        .iter()
        .map(|s| normalize(&s.fine_energy, norm.fine))
        .collect::<Result<_>>()?;
    let fragment_time = t.elapsed();

    let t = Instant::now();
    let pred = model.forward_batch(&batch)?;
    let forward_time = t.elapsed();

    let t = Instant::now();
    let per = batch.len() / held_out.len();
    let fields: Vec<ScalarField> = pred
        .chunks(per)
        .zip(batch.origins.chunks(per))
        .map(|(p, o)| defragment(p, o, fspec, fw, fh))
        .collect::<Result<_>>()?;
    let defragment_time = t.elapsed();

    let t = Instant::now();
    let targets = batch.fine.as_deref().expect("fragmented with targets");
    let fragments = ErrorMetrics::of(&pred, targets);
    let field_metrics = ErrorMetrics::of(&fields, &fine_targets);
    let per_sample = fields
        .iter()
        .zip(&fine_targets)
        .map(|(p, t)| squared_error(p, t) / p.len() as f64)
        .collect();
    let metrics_time = t.elapsed();

    Ok(EvalReport {
        fragments,
        fields: field_metrics,
        per_sample,
        fragment_count: batch.len(),
        sample_count: held_out.len(),
        phases: vec![
            ("fragmentation", fragment_time),
            ("forward", forward_time),
            ("defragmentation", defragment_time),
            ("metrics", metrics_time),
        ],
        total: start.elapsed(),
    })
}

/// Identity tolerance on normalized values.
pub const DEFAULT_NONUNIQUE_TOL: f64 = 1e-12;

fn within(a: &ScalarField, b: &ScalarField, tol: f64) -> bool {
    a.shape() == b.shape() && a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| (x - y).abs() <= tol)
}

/// Index pairs `(i, j)`, `i < j`, whose coarse and density patches agree
/// within `tol` everywhere while their fine targets differ by more than
/// `tol` somewhere. Sorted by `(i, j)`.
pub fn detect_nonuniqueness(batch: &FragmentBatch, tol: f64) -> Vec<(usize, usize)> {
    let Some(fine) = batch.fine.as_ref() else {
        return Vec::new();
    };
    let key = |i: usize| batch.coarse[i].as_slice().first().copied().unwrap_or(0.0);
    let mut order: Vec<usize> = (0..batch.len()).collect();
    order.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
    let mut pairs = Vec::new();
    for (k, &i) in order.iter().enumerate() {
        for &j in &order[k + 1..] {
            if key(j) - key(i) > tol {
                break;
            }
            if within(&batch.coarse[i], &batch.coarse[j], tol)
                && within(&batch.density[i], &batch.density[j], tol)
                && !within(&fine[i], &fine[j], tol)
            {
                pairs.push((i.min(j), i.max(j)));
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Shared settings of an ablation grid.
#[derive(Debug, Clone)]
pub struct AblationPlan {
    pub method: Method,
    pub ratio: usize,
    pub overlap: bool,
    pub train: TrainConfig,
    pub channels_base: usize,
    /// Held-out iterations, inclusive.
    pub test_first: usize,
    pub test_last: usize,
    pub nonunique_tol: f64,
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub fine_size: usize,
    pub crop_scale: usize,
    pub coarse_patch: usize,
    pub n_train: usize,
    pub overlap: bool,
    pub train_fragments: usize,
    pub test_fragments: usize,
    pub fragment_paper_mse: f64,
    pub field_paper_mse: f64,
    pub field_plain_mse: f64,
    pub collisions: usize,
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

pub const ABLATION_CSV_HEADER: &str = "fine_size,crop_scale,coarse_patch,n_train,overlap,train_fragments,test_fragments,fragment_paper_mse,field_paper_mse,field_plain_mse,collisions,train_seconds,eval_seconds";

impl AblationRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:e},{:e},{:e},{},{:.3},{:.3}",
            self.fine_size,
            self.crop_scale,
            self.coarse_patch,
            self.n_train,
            self.overlap as u8,
            self.train_fragments,
            self.test_fragments,
            self.fragment_paper_mse,
            self.field_paper_mse,
            self.field_plain_mse,
            self.collisions,
            self.train_seconds,
            self.eval_seconds
        )
    }
}

/// Trains and evaluates one model per `(size, crop, n)` combination. Each
/// size harvests one run long enough for the largest `n` and the test
/// window; training uses its first `n` iterations.
pub fn ablation_suite(
    problem: ProblemKind,
    sizes: &[usize],
    crops: &[usize],
    ns: &[usize],
    plan: &AblationPlan,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    if sizes.is_empty() || crops.is_empty() || ns.is_empty() {
        return Ok(rows);
    }
    if plan.test_first == 0 || plan.test_first > plan.test_last {
        return Err(Error::Config("empty test window".into()));
    }
    let horizon = plan.test_last.max(ns.iter().copied().max().unwrap_or(0));
    for &size in sizes {
        let p = make_problem(problem, size, size, plan.ratio)?;
        let scale = ScaleSpec::new(size, size, plan.ratio)?;
        let mut cfg = OptimizerConfig::new(plan.method, size);
        cfg.max_iters = horizon;
        let full = generate_dataset(&p, &cfg, horizon, &scale)?;
        let test = full.iterations(plan.test_first, plan.test_last);
        for &crop in crops {
            let fspec = FragmentSpec::new(&scale, crop, plan.overlap)?;
            for &n in ns {
                let train = full.iterations(1, n);
                let t = Instant::now();
                let outcome = train_mapnet_with_channels(&train, &fspec, &plan.train, None, plan.channels_base)?;
                let train_seconds = t.elapsed().as_secs_f64();
                let norm = outcome.model.norm();
                let collisions =
                    detect_nonuniqueness(&fragment_dataset(&train, &fspec, &norm)?, plan.nonunique_tol).len();
                let report = evaluate(&outcome.model, &test, &fspec)?;
                rows.push(AblationRow {
                    fine_size: size,
                    crop_scale: fspec.crop_scale,
                    coarse_patch: fspec.coarse_patch,
                    n_train: train.len(),
                    overlap: plan.overlap,
                    train_fragments: train.len() * fspec.fragment_count(scale.coarse_w, scale.coarse_h),
                    test_fragments: report.fragment_count,
                    fragment_paper_mse: report.fragments.paper_mse,
                    field_paper_mse: report.fields.paper_mse,
                    field_plain_mse: report.fields.plain_mse,
                    collisions,
                    train_seconds,
                    eval_seconds: report.total.as_secs_f64(),
                });
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fragmap::NormalizationFactors;
    use crate::grid::make_problem;
    use crate::mapnet::build_model;

    fn field(v: &[f64], side: usize) -> ScalarField {
        ScalarField::from_vec(side, side, v.to_vec()).unwrap()
    }

    #[test]
    fn paper_mse_matches_hand_value() {
        let p = vec![field(&[1.0, 0.0, 0.0, 0.0], 2), field(&[0.0; 4], 2)];
        let t = vec![field(&[0.0; 4], 2), field(&[0.0, 0.0, 0.0, 2.0], 2)];
        // sqrt(1 + 4) / 2
        assert!((paper_mse(&p, &t) - 5f64.sqrt() / 2.0).abs() < 1e-15);
        assert!((plain_mse(&p, &t) - 5.0 / 8.0).abs() < 1e-15);
        assert_eq!(paper_mse(&p, &p), 0.0);
        assert_eq!(plain_mse(&p, &p), 0.0);
    }

    fn planted(collide: bool) -> FragmentBatch {
        let c = |v: f64| field(&[v], 1);
        let d = |v: f64| field(&[v; 4], 2);
        FragmentBatch {
            coarse: vec![c(0.5), c(0.25), c(if collide { 0.5 } else { 0.75 })],
            density: vec![d(1.0), d(1.0), d(1.0)],
            fine: Some(vec![d(0.1), d(0.2), d(0.3)]),
            origins: vec![(0, 0), (0, 1), (1, 0)],
        }
    }

    #[test]
    fn planted_collision_is_found() {
        assert_eq!(detect_nonuniqueness(&planted(true), 1e-12), vec![(0, 2)]);
        assert!(detect_nonuniqueness(&planted(false), 1e-12).is_empty());
    }

    #[test]
    fn identical_targets_are_not_collisions() {
        let mut b = planted(true);
        b.fine.as_mut().unwrap()[2] = b.fine.as_ref().unwrap()[0].clone();
        assert!(detect_nonuniqueness(&b, 1e-12).is_empty());
    }

    #[test]
    fn evaluation_of_a_model_on_its_own_outputs() {
        let p = make_problem(ProblemKind::CantileverSingle, 32, 32, 8).unwrap();
        let s = ScaleSpec::new(32, 32, 8).unwrap();
        let f = FragmentSpec::with_patch(&s, 2, true).unwrap();
        let mut d = generate_dataset(&p, &OptimizerConfig::new(Method::Beso, 32), 2, &s).unwrap();
        let norm = NormalizationFactors::new(1.0, 1.0).unwrap();
        let m = build_model(&f, 4, norm, 1).unwrap();
        // Replace targets by the model's own reassembled prediction.
        for smp in &mut d.samples {
            let b = crate::fragmap::fragment(&smp.coarse_energy, smp.density.values(), None, &f).unwrap();
            let pred = m.forward_batch(&b).unwrap();
            smp.fine_energy = defragment(&pred, &b.origins, &f, 32, 32).unwrap();
        }
        let r = evaluate(&m, &d, &f).unwrap();
        assert_eq!(r.fields.paper_mse, 0.0);
        assert_eq!(r.fragment_count, 2 * 9);
        assert_eq!(r.per_sample.len(), 2);
        let phases: Duration = r.phases.iter().map(|p| p.1).sum();
        assert!(phases <= r.total);
    }

    #[test]
    fn empty_grid_gives_empty_table() {
        let plan = AblationPlan {
            method: Method::Beso,
            ratio: 8,
            overlap: false,
            train: TrainConfig::default(),
            channels_base: 4,
            test_first: 1,
            test_last: 2,
            nonunique_tol: DEFAULT_NONUNIQUE_TOL,
        };
        assert!(ablation_suite(ProblemKind::CantileverSingle, &[], &[2], &[1], &plan)
            .unwrap()
            .is_empty());
    }
}
