use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use fragto::fragmap::{FragmentSpec, ScaleSpec};
use fragto::grid::{make_problem, uniform_density, DensityField, TOProblem};
use fragto::io::{load_grid, save_grid, Manifest};
use fragto::mapnet::{build_model, load_model, save_model, MapNetModel};
use fragto::pipeline::{
    ablation_suite, detect_nonuniqueness, estimate_factors, evaluate, fine_compliance, fragment_dataset,
    generate_dataset, probe_normalization, timing_csv, trace_csv, train_mapnet_with_channels, AblationPlan, Dataset,
    LiftedProvider, ABLATION_CSV_HEADER, DEFAULT_NONUNIQUE_TOL,
};
use fragto::topopt::{
    beso_step, next_target_volume, run_to, simp_step, EnergyProvider, FemProvider, Method, OptimizerConfig,
};
use fragto::{Error, Result};

use crate::config::RunConfig;
use crate::render::{render_to, FieldKind};

/// Directory of an output file, created if missing.
fn parent_dir(file: &Path) -> Result<PathBuf> {
    let dir = match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_manifest(cfg: &RunConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    cfg.manifest().save(&dir.join("manifest.txt"))
}

fn smoothed(losses: &[f64], head: bool) -> f64 {
    let w = (losses.len() / 20).clamp(1, 50);
    let s = if head {
        &losses[..w]
    } else {
        &losses[losses.len() - w..]
    };
    s.iter().sum::<f64>() / s.len() as f64
}

pub fn gen_data(mut cfg: RunConfig) -> Result<()> {
    let kind = cfg.problem()?;
    let scale = cfg.scale()?;
    let iters: usize = cfg.require("iters")?;
    if iters == 0 {
        return Err(Error::Config("--iters must be positive".into()));
    }
    let default_max = OptimizerConfig::new(Method::Beso, scale.fine_w).max_iters.max(iters);
    cfg.set_default("max_iters", default_max)?;
    let opt = cfg.optimizer(scale.fine_w)?;
    let out = cfg.path("out")?;
    let problem = make_problem(kind, scale.fine_w, scale.fine_h, scale.ratio)?;
    let mut data = generate_dataset(&problem, &opt, iters, &scale)?;
    data.norm = cfg.norm_override()?;
    data.save(&out)?;
    // One manifest holds both the dataset description and the run settings.
    let path = out.join("manifest.txt");
    let mut m = Manifest::load(&path)?;
    for (k, v) in cfg.manifest().entries() {
        m.set(k, v);
    }
    m.save(&path)?;
    println!("wrote {} samples to {}", data.len(), out.display());
    Ok(())
}

pub fn train(mut cfg: RunConfig) -> Result<()> {
    let data = Dataset::load(&cfg.path("data")?)?;
    let scale = data.scale;
    cfg.set_default("size", format!("{}x{}", scale.fine_w, scale.fine_h))?;
    cfg.set_default("ratio", scale.ratio)?;
    let fspec = cfg.fragments(&scale)?;
    let tcfg = cfg.training()?;
    let channels = cfg.channels()?;
    let norm = cfg.norm_override()?;
    let out = cfg.path("out")?;
    let outcome = train_mapnet_with_channels(&data, &fspec, &tcfg, norm, channels)?;
    parent_dir(&out)?;
    save_model(&outcome.model, &out)?;
    write_manifest(&cfg, &parent_dir(&out)?)?;
    println!(
        "trained {} steps on {} samples ({}); smoothed loss {:.4e} -> {:.4e}",
        tcfg.steps,
        data.len(),
        fspec,
        smoothed(&outcome.losses, true),
        smoothed(&outcome.losses, false)
    );
    Ok(())
}

/// Loads the model named by `model`, checking its geometry against any
/// fragment settings in the configuration.
fn configured_model(cfg: &mut RunConfig, scale: &ScaleSpec) -> Result<MapNetModel> {
    let path = cfg
        .path("model")
        .map_err(|_| Error::Config("the mapnet engine needs --model".into()))?;
    let expected = if cfg.get("crop_scale").is_some() {
        Some(cfg.fragments(scale)?)
    } else {
        None
    };
    load_model(&path, expected.as_ref())
}

pub fn optimize(mut cfg: RunConfig) -> Result<()> {
    let engine: String = cfg.or("engine", "fem".to_string())?;
    if engine != "fem" && engine != "mapnet" {
        return Err(Error::Config(format!("unknown engine `{engine}`")));
    }
    let kind = cfg.problem()?;
    let scale = cfg.scale()?;
    let opt = cfg.optimizer(scale.fine_w)?;
    let out = cfg.path("out")?;
    let problem = make_problem(kind, scale.fine_w, scale.fine_h, scale.ratio)?;
    let mut provider: Box<dyn EnergyProvider> = if engine == "fem" {
        Box::new(FemProvider::new(&problem, opt.penal)?)
    } else {
        let mut model = configured_model(&mut cfg, &scale)?;
        if let Some(n) = cfg.norm_override()? {
            model.set_norm(n);
        } else if cfg.flag("auto_norm")? {
            let n = probe_normalization(&problem, &opt, &scale)?;
            eprintln!(
                "auto-norm: ran {} fine FEM iterations, factors coarse {:e} fine {:e}",
                fragto::pipeline::NORMALIZATION_SAMPLES,
                n.coarse,
                n.fine
            );
            model.set_norm(n);
        }
        let fspec = *model.fspec();
        Box::new(LiftedProvider::new(model, &problem, &scale, &fspec, opt.penal)?)
    };
    let trace = run_to(&problem, &opt, provider.as_mut())?;
    fs::create_dir_all(&out)?;
    fs::write(out.join("trace.csv"), trace_csv(&trace))?;
    fs::write(out.join("timing.csv"), timing_csv(&trace))?;
    save_grid(trace.final_density.values(), &out.join("final_density.grid"))?;
    render_to(
        trace.final_density.values(),
        FieldKind::Density,
        &out.join("final_density.pgm"),
    )?;
    let mut summary = Manifest::new();
    summary.set("engine", &engine);
    summary.set("iterations", trace.records.len());
    summary.set("converged", trace.converged);
    summary.set("final_compliance", format!("{:e}", trace.final_compliance()));
    summary.set("final_volume_fraction", format!("{:e}", trace.final_volume_fraction()));
    if engine == "mapnet" {
        // Checked after the run; the loop itself never solved the fine mesh.
        let c = fine_compliance(&problem, &trace.final_density, opt.penal)?;
        summary.set("fine_fem_compliance", format!("{c:e}"));
    }
    summary.save(&out.join("summary.txt"))?;
    write_manifest(&cfg, &out)?;
    println!(
        "{engine}: {} iterations, compliance {:.6e}, volume fraction {:.4}",
        trace.records.len(),
        trace.final_compliance(),
        trace.final_volume_fraction()
    );
    Ok(())
}

pub fn eval(mut cfg: RunConfig) -> Result<()> {
    let data = Dataset::load(&cfg.path("data")?)?;
    let scale = data.scale;
    let model = configured_model(&mut cfg, &scale)?;
    let last_iter = data.samples.last().map_or(0, |s| s.iteration);
    let first = cfg.or("test_first", 1usize)?;
    let last = cfg.or("test_last", last_iter)?;
    let held_out = data.iterations(first, last);
    let report = evaluate(&model, &held_out, model.fspec())?;
    let mut m = Manifest::new();
    m.set("samples", report.sample_count);
    m.set("fragments", report.fragment_count);
    m.set("fragment_paper_mse", format!("{:e}", report.fragments.paper_mse));
    m.set("fragment_plain_mse", format!("{:e}", report.fragments.plain_mse));
    m.set("field_paper_mse", format!("{:e}", report.fields.paper_mse));
    m.set("field_plain_mse", format!("{:e}", report.fields.plain_mse));
    for (name, t) in &report.phases {
        m.set(format!("seconds_{name}"), format!("{:.6}", t.as_secs_f64()));
    }
    m.set("seconds_total", format!("{:.6}", report.total.as_secs_f64()));
    print!("{}", m.render());
    if let Some(out) = cfg.get("out").map(PathBuf::from) {
        fs::create_dir_all(&out)?;
        m.save(&out.join("report.txt"))?;
        let mut csv = String::from("iteration,field_plain_mse\n");
        for (s, e) in held_out.samples.iter().zip(&report.per_sample) {
            csv.push_str(&format!("{},{e:e}\n", s.iteration));
        }
        fs::write(out.join("per_sample.csv"), csv)?;
        write_manifest(&cfg, &out)?;
    }
    Ok(())
}

pub fn ablate(mut cfg: RunConfig) -> Result<()> {
    let kind = cfg.problem()?;
    let (w, _) = cfg.size()?;
    cfg.set_default("sizes", w)?;
    let sizes = cfg.list("sizes")?;
    let crops = cfg.list("crops")?;
    let ns = cfg.list("ns")?;
    let method = cfg.method()?;
    let ratio = cfg.ratio()?;
    let overlap = cfg.flag("overlap")?;
    let train = cfg.training()?;
    let channels = cfg.channels()?;
    let test_first: usize = cfg.require("test_first")?;
    let test_last: usize = cfg.require("test_last")?;
    let tol = cfg.or("tol", DEFAULT_NONUNIQUE_TOL)?;
    let out = cfg.path("out")?;
    let plan = AblationPlan {
        method,
        ratio,
        overlap,
        train,
        channels_base: channels,
        test_first,
        test_last,
        nonunique_tol: tol,
    };
    let rows = ablation_suite(kind, &sizes, &crops, &ns, &plan)?;
    let mut csv = String::from(ABLATION_CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.csv());
        csv.push('\n');
    }
    parent_dir(&out)?;
    fs::write(&out, &csv)?;
    write_manifest(&cfg, &parent_dir(&out)?)?;
    print!("{csv}");
    Ok(())
}

pub fn detect_nonunique(mut cfg: RunConfig) -> Result<()> {
    let data = Dataset::load(&cfg.path("data")?)?;
    let scale = data.scale;
    let fspec = cfg.fragments(&scale)?;
    let tol = cfg.or("tol", DEFAULT_NONUNIQUE_TOL)?;
    if !(tol > 0.0) {
        return Err(Error::Config("--tol must be positive".into()));
    }
    let norm = match cfg.norm_override()?.or(data.norm) {
        Some(n) => n,
        None => estimate_factors(&data)?,
    };
    let batch = fragment_dataset(&data, &fspec, &norm)?;
    let pairs = detect_nonuniqueness(&batch, tol);
    println!(
        "{} colliding pairs among {} fragments ({fspec})",
        pairs.len(),
        batch.len()
    );
    if let Some(out) = cfg.get("out").map(PathBuf::from) {
        let per = fspec.fragment_count(scale.coarse_w, scale.coarse_h);
        let mut csv = String::from("first,second,first_sample,second_sample\n");
        for (i, j) in &pairs {
            csv.push_str(&format!(
                "{i},{j},{},{}\n",
                data.samples[i / per].iteration,
                data.samples[j / per].iteration
            ));
        }
        parent_dir(&out)?;
        fs::write(&out, csv)?;
        write_manifest(&cfg, &parent_dir(&out)?)?;
    }
    Ok(())
}

pub fn render(mut cfg: RunConfig) -> Result<()> {
    let input = cfg.path("input")?;
    let kind: FieldKind = cfg.or("kind", "density".to_string())?.parse()?;
    let out = cfg.path("out")?;
    let field = load_grid(&input)?;
    parent_dir(&out)?;
    render_to(&field, kind, &out)?;
    write_manifest(&cfg, &parent_dir(&out)?)?;
    Ok(())
}

/// Phase rows reported for every engine.
pub const BENCH_PHASES: [&str; 6] = ["coarse_fem", "fine_fem", "fragmentation", "forward", "update", "total"];

pub const BENCH_CSV_HEADER: &str = "engine,phase,median_seconds,repeats";

pub fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    }
}

fn update_once(
    x: &DensityField,
    energy: &fragto::ScalarField,
    problem: &TOProblem,
    opt: &OptimizerConfig,
) -> Result<Duration> {
    let t = Instant::now();
    match opt.method {
        Method::Simp => {
            simp_step(x, energy, problem.target_volume(), opt)?;
        }
        Method::Beso => {
            let target = next_target_volume(x.volume(), problem.target_volume(), opt.beso_evolution_rate);
            beso_step(x, energy, None, target, opt)?;
        }
    }
    Ok(t.elapsed())
}

/// Per-phase samples of one optimization iteration, `repeats` times.
fn bench_engine(
    provider: &mut dyn EnergyProvider,
    problem: &TOProblem,
    opt: &OptimizerConfig,
    repeats: usize,
) -> Result<Vec<Vec<f64>>> {
    let x = uniform_density(problem, opt.method.initial_density());
    let mut samples = vec![Vec::with_capacity(repeats); BENCH_PHASES.len()];
    for _ in 0..repeats {
        let eval = provider.evaluate(&x)?;
        let update = update_once(&x, &eval.energy, problem, opt)?;
        let mut row = [0.0; BENCH_PHASES.len()];
        for (name, t) in &eval.phases {
            if let Some(k) = BENCH_PHASES.iter().position(|p| p == name) {
                row[k] += t.as_secs_f64();
            }
        }
        row[4] = update.as_secs_f64();
        row[5] = row[..5].iter().sum();
        for (s, v) in samples.iter_mut().zip(row) {
            s.push(v);
        }
    }
    Ok(samples)
}

pub fn bench(mut cfg: RunConfig) -> Result<()> {
    let kind = cfg.problem()?;
    let scale = cfg.scale()?;
    let opt = cfg.optimizer(scale.fine_w)?;
    let repeats = cfg.or("repeats", 5usize)?;
    if repeats == 0 {
        return Err(Error::Config("--repeats must be positive".into()));
    }
    let out = cfg.path("out")?;
    let problem = make_problem(kind, scale.fine_w, scale.fine_h, scale.ratio)?;
    let model = if cfg.get("model").is_some() {
        configured_model(&mut cfg, &scale)?
    } else {
        // Timing does not depend on the weights.
        let fspec: FragmentSpec = cfg.fragments(&scale)?;
        let channels = cfg.channels()?;
        let seed = cfg.or("seed", 0u64)?;
        build_model(
            &fspec,
            channels,
            fragto::fragmap::NormalizationFactors::new(1.0, 1.0)?,
            seed,
        )?
    };
    let fspec = *model.fspec();
    let mut fem = FemProvider::new(&problem, opt.penal)?;
    let mut lifted = LiftedProvider::new(model, &problem, &scale, &fspec, opt.penal)?;
    let mut csv = String::from(BENCH_CSV_HEADER);
    csv.push('\n');
    for (name, provider) in [("fem", &mut fem as &mut dyn EnergyProvider), ("mapnet", &mut lifted)] {
        let samples = bench_engine(provider, &problem, &opt, repeats)?;
        for (phase, mut s) in BENCH_PHASES.iter().zip(samples) {
            csv.push_str(&format!("{name},{phase},{:.6e},{repeats}\n", median(&mut s)));
        }
    }
    parent_dir(&out)?;
    fs::write(&out, &csv)?;
    write_manifest(&cfg, &parent_dir(&out)?)?;
    print!("{csv}");
    Ok(())
}
