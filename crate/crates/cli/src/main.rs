//! `ritz`: batch runner for gradient checks, training, rate studies, POU sweeps
//! and theoretical bounds.

mod config;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use ritz::metrics::{median, write_rate_csv, RateRow};
use ritz::optimizer::{theoretical_hyperparams, train_guarded, SafeStep};
use ritz::pou::{self, PouConfig};
use ritz::problems::{derive_seed, eval_seed};
use ritz::{gradcheck, RitzError};
use ritz::{complexity_bounds, empirical_rate, init_params, mc_h1_error, NetParams, ProjectionSpec, SampleSet, TrainTrace};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "ritz", version, about = "Deep Ritz solver experiments")]
struct Cli {
    /// TOML run configuration; defaults are used for anything missing.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Finite-difference gradient, projection and convexity suites.
    GradCheck,
    /// One guarded PGD solve; writes trace.csv, error.json and params.bin.
    Train,
    /// Trains over `study.n_list` and fits the error rate; writes rate.csv.
    Study,
    /// Partition-of-unity bounds and local fit rates; writes pou.csv and fits.csv.
    PouCheck,
    /// Theoretical hyperparameter exponents and C¹ bounds; writes bounds.json.
    Bounds,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.override_seed(s);
    }
    if let Some(o) = cli.out {
        cfg.output.dir = o;
    }
    fs::create_dir_all(&cfg.output.dir).with_context(|| format!("creating {}", cfg.output.dir.display()))?;
    match cli.command {
        Command::GradCheck => grad_check(&cfg),
        Command::Train => train(&cfg),
        Command::Study => study(&cfg),
        Command::PouCheck => pou_check(&cfg),
        Command::Bounds => bounds(&cfg),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn grad_check(cfg: &RunConfig) -> Result<bool> {
    let c = &cfg.check;
    let seed = cfg.train.seed;
    let grads = gradcheck::run_gradient_suite(c.configs, seed, c.tolerance, c.corrupt_gradient)?;
    let proj = gradcheck::run_projection_suite(c.projection_pairs, seed)?;
    let conv = gradcheck::run_convexity_suite(c.convexity_directions, seed)?;

    println!("gradient suite ({} configurations, tolerance {:e})", c.configs, c.tolerance);
    for (name, err) in &grads.max_by_block {
        println!("  {name:<7} max relative error {err:.3e}");
    }
    println!("  {}", verdict(grads.passed));
    println!(
        "projection suite ({} pairs): idempotence {:.1e}, violation {:.1e}, expansion {:.1e}, l1 oracle {:.1e}  {}",
        proj.pairs,
        proj.max_idempotence_gap,
        proj.max_violation,
        proj.max_expansion,
        proj.max_l1_oracle_gap,
        verdict(proj.passed)
    );
    println!(
        "convexity suite ({} directions): min second difference {:.3e}  {}",
        conv.directions,
        conv.min_second_difference,
        verdict(conv.passed)
    );

    #[derive(Serialize)]
    struct Report<'a> {
        gradient: &'a gradcheck::GradSuiteReport,
        projection: &'a gradcheck::ProjectionSuiteReport,
        convexity: &'a gradcheck::ConvexitySuiteReport,
    }
    write_json(
        &cfg.output.dir.join("gradcheck.json"),
        &Report {
            gradient: &grads,
            projection: &proj,
            convexity: &conv,
        },
    )?;
    Ok(grads.passed && proj.passed && conv.passed)
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

struct Solved {
    params: NetParams,
    trace: TrainTrace,
    safe: SafeStep,
}

/// Draws samples, initialises, and runs guarded PGD. A non-finite loss comes
/// back as `Err` with the partial trace inside.
fn solve(cfg: &RunConfig, n: usize, m: usize, init_seed: u64, samples_seed: u64) -> Result<std::result::Result<Solved, TrainTrace>> {
    let prob = cfg.problem()?;
    let samples = SampleSet::draw(cfg.domain(), n, m, samples_seed)?;
    let tc = cfg.train_config(init_seed);
    let p0 = init_params(&tc, cfg.dims()?)?;
    let spec = ProjectionSpec::around(&p0, cfg.train.inner_radius, cfg.train.outer_budget)?;
    match train_guarded(&p0, &prob, &samples, &tc, &spec, cfg.train.guard_trials) {
        Ok((safe, params, trace)) => Ok(Ok(Solved { params, trace, safe })),
        Err(RitzError::NonFinite { trace, .. }) => Ok(Err(*trace)),
        Err(e) => Err(e.into()),
    }
}

fn train(cfg: &RunConfig) -> Result<bool> {
    let seed = cfg.train.seed;
    let dir = &cfg.output.dir;
    let solved = match solve(cfg, cfg.train.n, cfg.boundary_count(), seed, derive_seed(seed, 0, 0))? {
        Ok(s) => s,
        Err(partial) => {
            partial.write_csv(create(&dir.join("trace.csv"))?)?;
            eprintln!("non-finite loss after {} entries; partial trace written", partial.entries.len());
            return Ok(false);
        }
    };
    solved.trace.write_csv(create(&dir.join("trace.csv"))?)?;
    if cfg.output.params {
        fs::write(dir.join("params.bin"), solved.params.to_le_bytes())?;
    }
    let exact = cfg.exact()?;
    let err = mc_h1_error(&solved.params, Some(&exact), &cfg.domain(), cfg.train.eval_points, eval_seed(seed))?;

    #[derive(Serialize)]
    struct TrainReport {
        error: ritz::ErrorReport,
        eta: f64,
        halvings: u32,
        iterations: usize,
        initial_loss: f64,
        final_loss: f64,
        monotone: bool,
    }
    let losses = solved.trace.losses();
    let report = TrainReport {
        error: err,
        eta: solved.safe.eta,
        halvings: solved.safe.halvings,
        iterations: losses.len() - 1,
        initial_loss: losses[0],
        final_loss: *losses.last().expect("trace has the initial entry"),
        monotone: solved.trace.is_monotone(),
    };
    write_json(&dir.join("error.json"), &report)?;
    println!(
        "eta {} ({} halvings), loss {:.6} -> {:.6}, H1 error {:.4e} ± {:.1e}, L2 {:.4e}, monotone {}",
        report.eta,
        report.halvings,
        report.initial_loss,
        report.final_loss,
        err.h1,
        err.mc_stderr,
        err.l2,
        report.monotone
    );
    Ok(true)
}

fn study(cfg: &RunConfig) -> Result<bool> {
    let st = &cfg.study;
    if st.n_list.len() < 3 || st.reps == 0 {
        anyhow::bail!("study needs at least three values of n and one repetition");
    }
    let seed = cfg.train.seed;
    let exact = cfg.exact()?;
    let theory = theoretical_hyperparams(st.n_list[0].max(2) as u64, cfg.problem.d)?;
    let mut rows = Vec::new();
    let mut medians = Vec::new();
    for &n in &st.n_list {
        let m = if cfg.train.m == 0 { n } else { cfg.train.m };
        let mut h1s = Vec::new();
        for rep in 0..st.reps {
            // initialisation shared across n, samples fresh for every (n, rep)
            let solved = match solve(cfg, n, m, seed.wrapping_add(rep as u64), derive_seed(seed, n, rep))? {
                Ok(s) => s,
                Err(_) => anyhow::bail!("non-finite loss at n = {n}, rep {rep}"),
            };
            let err = mc_h1_error(&solved.params, Some(&exact), &cfg.domain(), cfg.train.eval_points, eval_seed(seed))?;
            println!("n {n:>6} rep {rep}: H1 {:.4e} ± {:.1e}", err.h1, err.mc_stderr);
            h1s.push(err.h1);
            rows.push(RateRow {
                n,
                rep,
                l2: err.l2,
                h1: err.h1,
                stderr: err.mc_stderr,
            });
        }
        medians.push(median(&h1s));
    }
    write_rate_csv(&rows, -theory.rate_exp, create(&cfg.output.dir.join("rate.csv"))?)?;
    let pairs: Vec<(f64, f64)> = st.n_list.iter().map(|&n| n as f64).zip(medians.iter().copied()).collect();
    let slope = empirical_rate(&pairs).ok();
    match slope {
        Some(s) => println!("fitted slope {s:.4} (theoretical exponent {:.6})", -theory.rate_exp),
        None => println!("fitted slope n/a (errors vanish); theoretical exponent {:.6}", -theory.rate_exp),
    }

    #[derive(Serialize)]
    struct StudyReport {
        n: Vec<usize>,
        median_h1: Vec<f64>,
        slope: Option<f64>,
        theory_exponent: f64,
    }
    write_json(
        &cfg.output.dir.join("study.json"),
        &StudyReport {
            n: st.n_list.clone(),
            median_h1: medians,
            slope,
            theory_exponent: -theory.rate_exp,
        },
    )?;
    Ok(true)
}

fn pou_check(cfg: &RunConfig) -> Result<bool> {
    let p = &cfg.pou;
    let seed = cfg.train.seed;
    let mut rows = Vec::new();
    for &d in &p.d_list {
        for &n in &p.n_list {
            for &eps in &p.eps_list {
                let pc = PouConfig::new(n, p.k, eps)?;
                let r = pou::check_pou_bounds(&pc, d, p.samples, seed)?;
                println!(
                    "d {d} N {n:>3} eps {eps:<5}: deficit {:.2e} (<= {:.2e}), far {:.2e} (<= {eps}), sum dev {:.1e}  {}",
                    r.sup_deficit,
                    d as f64 * eps,
                    r.sup_far,
                    r.global_sum_dev,
                    verdict(r.bound_ok)
                );
                rows.push(r);
            }
        }
    }
    pou::write_pou_csv(&rows, create(&cfg.output.dir.join("pou.csv"))?)?;
    let bounds_ok = rows.iter().all(|r| r.bound_ok && r.global_sum_dev <= 1e-12 && r.consistency <= 1e-12);

    let f = |x: &[f64]| (2.0 * std::f64::consts::PI * x[0]).sin();
    let mut fits = Vec::new();
    let mut fits_ok = true;
    for &s in &p.fit_orders {
        let r = pou::fit_rate(&f, 1, s, &p.fit_grids)?;
        let ok = (-r.slope - s as f64).abs() <= p.slope_tolerance;
        println!("local fits s {s}: slope {:.3} (target -{s})  {}", r.slope, verdict(ok));
        fits_ok &= ok;
        fits.push(r);
    }
    pou::write_fits_csv(&fits, create(&cfg.output.dir.join("fits.csv"))?)?;
    Ok(bounds_ok && fits_ok)
}

fn bounds(cfg: &RunConfig) -> Result<bool> {
    let b = &cfg.bounds;
    let def = ritz::NetDims::default_for(b.d);
    let m1 = if b.m1 == 0 { def.m1 } else { b.m1 };
    let m2 = if b.m2 == 0 { def.m2 } else { b.m2 };
    let theory = theoretical_hyperparams(b.n, b.d)?;
    let cb = complexity_bounds(m1, m2, b.d, b.b_inn, b.b_out)?;

    #[derive(Serialize)]
    struct BoundsReport {
        m1: usize,
        m2: usize,
        b_inn: f64,
        b_out: f64,
        theory: ritz::optimizer::TheoryReport,
        complexity: ritz::metrics::ComplexityBounds,
    }
    let report = BoundsReport {
        m1,
        m2,
        b_inn: b.b_inn,
        b_out: b.b_out,
        theory,
        complexity: cb,
    };
    write_json(&cfg.output.dir.join("bounds.json"), &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(true)
}
