//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any failed.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ritz::gradcheck::{self, variable_coefficient};
use ritz::loss::energy_excess;
use ritz::metrics::{empirical_rate, h1_distance_1d, mc_h1_error, median};
use ritz::optimizer::{theoretical_hyperparams, train_guarded, SafeStep};
use ritz::pou::{self, PouConfig};
use ritz::problems::{self, constant_field, derive_seed, eval_seed, BoundaryCondition, Domain, ProblemSpec, SampleSet};
use ritz::{init_params, NetDims, NetParams, ProjectionSpec, TrainConfig, TrainMode, TrainTrace};

const SEED: u64 = 1;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

/// Settings of a practical run on the 1D Robin benchmark.
#[derive(Clone, Copy)]
struct RunSettings {
    subnets: usize,
    n: usize,
    iterations: usize,
    eta: f64,
    init_bound: f64,
    inner_radius: f64,
    outer_budget: f64,
}

const SOLVE: RunSettings = RunSettings {
    subnets: 16,
    n: 2048,
    iterations: 500,
    eta: 1.0,
    init_bound: 1.0,
    inner_radius: 1.0,
    outer_budget: 10.0,
};

const RATE: RunSettings = RunSettings {
    subnets: 2,
    n: 0,
    iterations: 6000,
    ..SOLVE
};

const RATE_SIZES: [usize; 3] = [256, 1024, 4096];
const RATE_REPS: usize = 3;
const H1_THRESHOLD: f64 = 0.05;
const EVAL_POINTS: usize = 10_000;

/// `-u'' + u = 1` on (0,1) with `u + u_n = 0`.
fn robin_benchmark() -> ProblemSpec {
    let exact = problems::exact_robin_1d(1.0, 1.0, 1.0).unwrap().to_exact();
    problems::manufacture(Domain::hypercube(1), exact, constant_field(1.0), BoundaryCondition::Robin, 1.0).unwrap()
}

struct Run {
    safe: SafeStep,
    params: NetParams,
    trace: TrainTrace,
    h1: f64,
}

fn practical_run(prob: &ProblemSpec, s: RunSettings, init_seed: u64, sample_seed: u64) -> Run {
    let domain = Domain::hypercube(1);
    let samples = SampleSet::draw(domain, s.n, s.n, sample_seed).unwrap();
    let cfg = TrainConfig {
        eta: s.eta,
        iterations: s.iterations,
        subnets: s.subnets,
        init_bound: s.init_bound,
        seed: init_seed,
        mode: TrainMode::Practical,
    };
    let p0 = init_params(&cfg, NetDims::default_for(1)).unwrap();
    let spec = ProjectionSpec::around(&p0, s.inner_radius, s.outer_budget).unwrap();
    let (safe, params, trace) = train_guarded(&p0, prob, &samples, &cfg, &spec, 20).unwrap();
    let h1 = mc_h1_error(&params, prob.exact.as_ref(), &domain, EVAL_POINTS, eval_seed(SEED)).unwrap().h1;
    Run { safe, params, trace, h1 }
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let r = gradcheck::run_gradient_suite(20, SEED, 1e-5, false).unwrap();
    let worst = r.max_by_block.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let elapsed = start.elapsed();
    outcome(
        r.passed && elapsed < Duration::from_secs(60),
        format!("20 configurations, max relative error {worst:.2e} (< 1e-5), {elapsed:.1?}"),
    )
}

fn partition_identity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = 0.0f64;
    for n in [2, 4, 8, 16] {
        let cfg = PouConfig::new(n, 1, 0.01).unwrap();
        for d in [1, 2] {
            let indices: Vec<Vec<usize>> = pou::multi_indices(n, d).collect();
            for _ in 0..1000 {
                let x: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
                let total: f64 = indices.iter().map(|j| pou::Phi(j, &cfg, &x).unwrap()).sum();
                worst = worst.max((total - 1.0).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-12 && elapsed < Duration::from_secs(10),
        format!("max |sum - 1| = {worst:.1e} (<= 1e-12), {elapsed:.1?}"),
    )
}

fn partition_bounds() -> Outcome {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for n in [4, 8] {
        for eps in [0.1, 0.01] {
            let cfg = PouConfig::new(n, 1, eps).unwrap();
            for d in [1, 2] {
                let r = pou::check_pou_bounds(&cfg, d, 100, SEED).unwrap();
                ok &= r.sup_deficit <= d as f64 * eps && r.sup_far <= eps;
                parts.push(format!("{:.1e}", (r.sup_deficit / (d as f64 * eps)).max(r.sup_far / eps)));
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        ok && elapsed < Duration::from_secs(60),
        format!("worst bound usage per case [{}], {elapsed:.1?}", parts.join(" ")),
    )
}

fn projection_suite() -> Outcome {
    let r = gradcheck::run_projection_suite(1000, SEED).unwrap();
    outcome(
        r.passed,
        format!(
            "1000 pairs: idempotence {:.1e}, violation {:.1e}, expansion {:.1e}, l1 oracle {:.1e}",
            r.max_idempotence_gap, r.max_violation, r.max_expansion, r.max_l1_oracle_gap
        ),
    )
}

fn convexity() -> Outcome {
    let r = gradcheck::run_convexity_suite(1000, SEED).unwrap();
    outcome(
        r.passed,
        format!("1000 directions, min second difference {:.3e} (>= -1e-10)", r.min_second_difference),
    )
}

fn monotone_descent(run: &Run) -> Outcome {
    let losses = run.trace.losses();
    let worst = losses.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    outcome(
        losses.len() == SOLVE.iterations + 1 && worst <= 1e-10 && run.trace.is_monotone(),
        format!(
            "T = {}, guarded eta = {} after {} halvings, largest increase {worst:.1e}, loss {:.6} -> {:.6}",
            SOLVE.iterations,
            run.safe.eta,
            run.safe.halvings,
            losses[0],
            losses[losses.len() - 1]
        ),
    )
}

fn energy_identity(trained: &NetParams) -> Outcome {
    let robin = robin_benchmark();
    let d2 = Domain::hypercube(2);
    let variable = problems::manufacture(d2, problems::sin_product(2), variable_coefficient(), BoundaryCondition::Robin, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let random2: Vec<f64> = (0..NetDims::default_for(2).subnet_len() * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
    let random2 = NetParams::from_flat(NetDims::default_for(2), &random2).unwrap();
    let cases: [(&NetParams, &ProblemSpec, Domain); 2] = [(trained, &robin, Domain::hypercube(1)), (&random2, &variable, d2)];

    let mut shared_gap = 0.0f64;
    let mut worst_z = 0.0f64;
    for (k, (params, prob, domain)) in cases.into_iter().enumerate() {
        let a = SampleSet::draw(domain, EVAL_POINTS, EVAL_POINTS, derive_seed(SEED, k, 0)).unwrap();
        let b = SampleSet::draw(domain, EVAL_POINTS, EVAL_POINTS, derive_seed(SEED, k, 1)).unwrap();
        let ea = energy_excess(params, prob, &a).unwrap();
        let eb = energy_excess(params, prob, &b).unwrap();
        shared_gap = shared_gap.max((ea.lhs - (ea.rhs + ea.cross)).abs());
        shared_gap = shared_gap.max((eb.lhs - (eb.rhs + eb.cross)).abs());
        for (l, r) in [(&ea, &eb), (&eb, &ea)] {
            let se = l.lhs_stderr.hypot(r.rhs_stderr);
            worst_z = worst_z.max((l.lhs - r.rhs).abs() / se);
        }
    }
    outcome(
        shared_gap <= 1e-10 && worst_z <= 3.0,
        format!("shared |lhs - (rhs + cross)| = {shared_gap:.1e}, independent samples within {worst_z:.2} standard errors"),
    )
}

fn quantitative_solve(run: &Run, elapsed: Duration) -> Outcome {
    outcome(
        run.h1 <= H1_THRESHOLD && elapsed < Duration::from_secs(300),
        format!(
            "A = {}, n = m = {}, T = {}: H1 error {:.4} (<= {H1_THRESHOLD}), {elapsed:.1?}",
            SOLVE.subnets, SOLVE.n, SOLVE.iterations, run.h1
        ),
    )
}

fn rate_trend(prob: &ProblemSpec) -> Outcome {
    let start = Instant::now();
    let mut medians = Vec::new();
    let mut cells = Vec::new();
    for n in RATE_SIZES {
        let h1s: Vec<f64> = (0..RATE_REPS)
            .map(|rep| practical_run(prob, RunSettings { n, ..RATE }, SEED + rep as u64, derive_seed(SEED, n, rep)).h1)
            .collect();
        let med = median(&h1s);
        cells.push(format!("n={n}: {}", h1s.iter().map(|h| format!("{h:.4}")).collect::<Vec<_>>().join("/")));
        medians.push(med);
    }
    let pairs: Vec<(f64, f64)> = RATE_SIZES.iter().zip(&medians).map(|(&n, &e)| (n as f64, e)).collect();
    let slope = empirical_rate(&pairs).unwrap();
    let theory = -theoretical_hyperparams(RATE_SIZES[0] as u64, 1).unwrap().rate_exp;
    let nonincreasing = medians.windows(2).all(|w| w[1] <= w[0]);
    outcome(
        nonincreasing && slope < 0.0,
        format!(
            "medians {:.4}/{:.4}/{:.4}, slope {slope:.3} (theory {theory:.5}); {}; {:.1?}",
            medians[0],
            medians[1],
            medians[2],
            cells.join(", "),
            start.elapsed()
        ),
    )
}

fn penalty_scaling() -> Outcome {
    let start = Instant::now();
    let dirichlet = problems::exact_dirichlet_1d(1.0, 1.0).unwrap();
    let dist: Vec<f64> = [0.1, 0.05, 0.025]
        .iter()
        .map(|&beta| h1_distance_1d(&problems::exact_robin_1d(1.0, 1.0, beta).unwrap(), &dirichlet, 4000))
        .collect();
    let ratios = [dist[0] / dist[1], dist[1] / dist[2]];
    let elapsed = start.elapsed();
    outcome(
        ratios.iter().all(|r| (1.6..=2.4).contains(r)) && elapsed < Duration::from_secs(1),
        format!("distances {:.4e}/{:.4e}/{:.4e}, ratios {:.3} {:.3}", dist[0], dist[1], dist[2], ratios[0], ratios[1]),
    )
}

fn local_fits() -> Outcome {
    let f = |x: &[f64]| (2.0 * std::f64::consts::PI * x[0]).sin();
    let mut ok = true;
    let mut parts = Vec::new();
    for s in [2, 3] {
        let r = pou::fit_rate(&f, 1, s, &[4, 8, 16, 32]).unwrap();
        ok &= (-r.slope - s as f64).abs() <= 0.5;
        parts.push(format!("s={s}: slope {:.3}", r.slope));
    }
    outcome(ok, parts.join(", "))
}

fn main() -> ExitCode {
    let prob = robin_benchmark();
    let start = Instant::now();
    let solve_run = practical_run(&prob, SOLVE, SEED, derive_seed(SEED, 0, 0));
    let solve_time = start.elapsed();

    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("gradient suite", Box::new(gradient_suite)),
        ("exact partition of unity", Box::new(partition_identity)),
        ("partition bounds", Box::new(partition_bounds)),
        ("projection suite", Box::new(projection_suite)),
        ("outer-layer convexity", Box::new(convexity)),
        ("monotone descent", Box::new(|| monotone_descent(&solve_run))),
        ("energy-excess identity", Box::new(|| energy_identity(&solve_run.params))),
        ("quantitative solve", Box::new(|| quantitative_solve(&solve_run, solve_time))),
        ("rate trend", Box::new(|| rate_trend(&prob))),
        ("Dirichlet penalty scaling", Box::new(penalty_scaling)),
        ("local polynomial fits", Box::new(local_fits)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        if !o.passed {
            failed += 1;
        }
        println!("{:>2} {} {name}: {}", i + 1, if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
