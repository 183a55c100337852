//! Projected gradient descent on the constraint set
//! `C = {‖W_s^l - W0_s^l‖_F ≤ r (l = 1, 2), ‖outer‖_1 ≤ B_out}`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, RitzError};
use crate::loss;
use crate::network::{NetDims, NetParams, SubnetParams};
use crate::problems::{ProblemSpec, SampleSet};

/// Per-step loss increase tolerated before a step counts as non-monotone.
pub const DESCENT_TOLERANCE: f64 = 1e-10;

/// Centres, radius and outer budget describing `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSpec {
    /// Only the inner blocks (W1, b1, W2, b2) of these are used.
    pub inner_centers: NetParams,
    pub inner_radius: f64,
    pub outer_budget: f64,
}

impl ProjectionSpec {
    /// Centres the inner balls on a snapshot of `params`.
    pub fn around(params: &NetParams, inner_radius: f64, outer_budget: f64) -> Result<Self> {
        if !(inner_radius >= 0.0) || !(outer_budget >= 0.0) {
            return Err(invalid("radius and budget must be nonnegative"));
        }
        Ok(Self {
            inner_centers: params.clone(),
            inner_radius,
            outer_budget,
        })
    }

    fn conforms(&self, params: &NetParams) -> bool {
        self.inner_centers.dims == params.dims && self.inner_centers.num_subnets() == params.num_subnets()
    }

    /// Largest constraint violation (positive means outside `C`).
    pub fn violation(&self, params: &NetParams) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for (s, c) in params.subnets.iter().zip(&self.inner_centers.subnets) {
            for k in 0..4 {
                worst = worst.max(block_dist(s.blocks()[k], c.blocks()[k]) - self.inner_radius);
            }
        }
        worst.max(outer_l1(params) - self.outer_budget)
    }
}

fn block_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn outer_l1(params: &NetParams) -> f64 {
    params
        .subnets
        .iter()
        .map(|s| s.w3.iter().map(|v| v.abs()).sum::<f64>() + s.b3.abs())
        .sum()
}

/// Concatenation `[W3_1, b3_1, W3_2, b3_2, …]`.
pub fn outer_vector(params: &NetParams) -> Vec<f64> {
    let mut out = Vec::with_capacity(params.num_subnets() * (params.dims.m2 + 1));
    for s in &params.subnets {
        out.extend(s.w3.iter());
        out.push(s.b3);
    }
    out
}

fn set_outer_vector(params: &mut NetParams, v: &[f64]) {
    let stride = params.dims.m2 + 1;
    for (s, chunk) in params.subnets.iter_mut().zip(v.chunks_exact(stride)) {
        s.w3.as_mut_slice().copy_from_slice(&chunk[..stride - 1]);
        s.b3 = chunk[stride - 1];
    }
}

/// Euclidean projection onto `{y : ‖y‖_1 ≤ radius}` by sorting and soft-thresholding.
/// Returns `v` unchanged when it is already inside.
pub fn project_l1_ball(v: &[f64], radius: f64) -> Vec<f64> {
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= radius {
        return v.to_vec();
    }
    if radius <= 0.0 {
        return vec![0.0; v.len()];
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &u) in mags.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - radius) / (k + 1) as f64;
        if u > t {
            theta = t;
        } else {
            break;
        }
    }
    v.iter().map(|&x| x.signum() * (x.abs() - theta).max(0.0)).collect()
}

/// Which parts of `C` were active in a projection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionActivity {
    pub inner: bool,
    pub outer: bool,
}

fn project_ball(block: &mut [f64], center: &[f64], radius: f64) -> bool {
    let dist = block_dist(block, center);
    if dist <= radius {
        return false;
    }
    if radius == 0.0 {
        block.copy_from_slice(center);
    } else {
        let scale = radius / dist;
        for (b, c) in block.iter_mut().zip(center) {
            *b = c + scale * (*b - c);
        }
    }
    true
}

/// Euclidean projection onto `C`; the set is a product, so blocks are projected independently.
pub fn project(params: &NetParams, spec: &ProjectionSpec) -> Result<NetParams> {
    Ok(project_with_activity(params, spec)?.0)
}

pub fn project_with_activity(params: &NetParams, spec: &ProjectionSpec) -> Result<(NetParams, ProjectionActivity)> {
    if !spec.conforms(params) {
        return Err(invalid("projection centres do not match the parameter shape"));
    }
    let mut out = params.clone();
    let mut act = ProjectionActivity::default();
    for (s, c) in out.subnets.iter_mut().zip(&spec.inner_centers.subnets) {
        let centers = c.blocks();
        let blocks = s.blocks_mut();
        for k in 0..4 {
            act.inner |= project_ball(blocks[k], centers[k], spec.inner_radius);
        }
    }
    let outer = outer_vector(&out);
    let l1: f64 = outer.iter().map(|v| v.abs()).sum();
    if l1 > spec.outer_budget {
        act.outer = true;
        set_outer_vector(&mut out, &project_l1_ball(&outer, spec.outer_budget));
    }
    Ok((out, act))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    Practical,
    /// Iteration count tied to the step size as `T = round(1/η)`.
    TheoryReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub eta: f64,
    pub iterations: usize,
    pub subnets: usize,
    pub init_bound: f64,
    pub seed: u64,
    pub mode: TrainMode,
}

impl TrainConfig {
    pub fn effective_iterations(&self) -> usize {
        match self.mode {
            TrainMode::Practical => self.iterations,
            TrainMode::TheoryReport => (1.0 / self.eta).round().max(1.0) as usize,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(invalid("eta must be finite and nonnegative"));
        }
        if self.mode == TrainMode::TheoryReport && self.eta == 0.0 {
            return Err(invalid("theory-report mode needs a positive eta"));
        }
        if self.effective_iterations() == 0 {
            return Err(invalid("at least one iteration is required"));
        }
        if self.subnets == 0 {
            return Err(invalid("at least one subnetwork is required"));
        }
        Ok(())
    }
}

/// Zero outer layer, inner entries i.i.d. `U[-init_bound, init_bound]`.
pub fn init_params(cfg: &TrainConfig, dims: NetDims) -> Result<NetParams> {
    if !(cfg.init_bound > 0.0) {
        return Err(invalid("init_bound must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = NetParams::zeros(dims, cfg.subnets)?;
    let b = cfg.init_bound;
    for s in &mut params.subnets {
        fill_uniform(s, &mut rng, b);
    }
    Ok(params)
}

fn fill_uniform(s: &mut SubnetParams, rng: &mut ChaCha8Rng, b: f64) {
    // row-major draw order for the matrices, matching the flat layout
    for m in [&mut s.w1, &mut s.w2] {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                m[(i, j)] = rng.random_range(-b..=b);
            }
        }
    }
    for v in [&mut s.b1, &mut s.b2] {
        for e in v.iter_mut() {
            *e = rng.random_range(-b..=b);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub loss: f64,
    pub grad_norm: f64,
    /// Distance moved by the step taken from this iterate (0 for the last entry).
    pub step_norm: f64,
    pub projection: ProjectionActivity,
    /// The loss rose by more than [`DESCENT_TOLERANCE`] relative to the previous entry.
    pub guard_flag: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub eta: f64,
    pub entries: Vec<TraceEntry>,
}

impl TrainTrace {
    pub fn losses(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.loss).collect()
    }

    pub fn guard_violations(&self) -> usize {
        self.entries.iter().filter(|e| e.guard_flag).count()
    }

    pub fn is_monotone(&self) -> bool {
        self.guard_violations() == 0
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# schema=1")?;
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["iter", "loss", "grad_norm", "step_norm", "guard_flag"])?;
        for e in &self.entries {
            wr.write_record([
                e.iter.to_string(),
                e.loss.to_string(),
                e.grad_norm.to_string(),
                e.step_norm.to_string(),
                u8::from(e.guard_flag).to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Runs `T` full-batch steps `W ← proj_C(W - η ∇L̂(W))` from `proj_C(params0)`.
pub fn train(
    params0: &NetParams,
    prob: &ProblemSpec,
    samples: &SampleSet,
    cfg: &TrainConfig,
    spec: &ProjectionSpec,
) -> Result<(NetParams, TrainTrace)> {
    cfg.validate()?;
    run_pgd(params0, prob, samples, cfg.eta, cfg.effective_iterations(), spec)
}

fn run_pgd(
    params0: &NetParams,
    prob: &ProblemSpec,
    samples: &SampleSet,
    eta: f64,
    iterations: usize,
    spec: &ProjectionSpec,
) -> Result<(NetParams, TrainTrace)> {
    let mut params = project(params0, spec)?;
    let mut trace = TrainTrace {
        eta,
        entries: Vec::with_capacity(iterations + 1),
    };
    let mut prev_loss: Option<f64> = None;
    for t in 0..=iterations {
        let (l, g) = loss::loss_and_gradient(&params, prob, samples)?;
        let grad_norm = g.norm();
        let guard_flag = prev_loss.is_some_and(|p| l.total > p + DESCENT_TOLERANCE);
        if !l.total.is_finite() || !g.is_finite() {
            trace.entries.push(TraceEntry {
                iter: t,
                loss: l.total,
                grad_norm,
                step_norm: 0.0,
                projection: ProjectionActivity::default(),
                guard_flag,
            });
            return Err(RitzError::NonFinite {
                iteration: t,
                trace: Box::new(trace),
            });
        }
        let mut entry = TraceEntry {
            iter: t,
            loss: l.total,
            grad_norm,
            step_norm: 0.0,
            projection: ProjectionActivity::default(),
            guard_flag,
        };
        if t < iterations {
            let (next, act) = project_with_activity(&params.offset(-eta, &g), spec)?;
            debug_assert!(spec.violation(&next) <= 1e-12);
            entry.step_norm = next.distance(&params);
            entry.projection = act;
            params = next;
        }
        trace.entries.push(entry);
        prev_loss = Some(l.total);
    }
    Ok((params, trace))
}

/// Outcome of the step-halving search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafeStep {
    pub eta: f64,
    pub halvings: u32,
}

/// Halves `eta0` until `trials` consecutive PGD steps from `params0` never raise
/// the loss by more than [`DESCENT_TOLERANCE`].
pub fn find_safe_step(
    params0: &NetParams,
    prob: &ProblemSpec,
    samples: &SampleSet,
    spec: &ProjectionSpec,
    eta0: f64,
    trials: usize,
) -> Result<SafeStep> {
    const MAX_HALVINGS: u32 = 60;
    if !(eta0 > 0.0) {
        return Err(invalid("initial step must be positive"));
    }
    let mut eta = eta0;
    for halvings in 0..=MAX_HALVINGS {
        match run_pgd(params0, prob, samples, eta, trials, spec) {
            Ok((_, trace)) if trace.is_monotone() => return Ok(SafeStep { eta, halvings }),
            Ok(_) | Err(RitzError::NonFinite { .. }) => eta *= 0.5,
            Err(e) => return Err(e),
        }
    }
    Err(invalid(format!("no monotone step found below {eta0} after {MAX_HALVINGS} halvings")))
}

/// [`find_safe_step`] from `cfg.eta`, then [`train`] with the step it returns.
pub fn train_guarded(
    params0: &NetParams,
    prob: &ProblemSpec,
    samples: &SampleSet,
    cfg: &TrainConfig,
    spec: &ProjectionSpec,
    trials: usize,
) -> Result<(SafeStep, NetParams, TrainTrace)> {
    cfg.validate()?;
    let safe = if cfg.eta == 0.0 {
        SafeStep { eta: 0.0, halvings: 0 }
    } else {
        find_safe_step(params0, prob, samples, spec, cfg.eta, trials)?
    };
    let run = TrainConfig { eta: safe.eta, ..cfg.clone() };
    let (params, trace) = train(params0, prob, samples, &run, spec)?;
    Ok((safe, params, trace))
}

/// Exponents of `n` in the hyperparameter prescriptions that guarantee the
/// `n^{-1/(288d³+4)}` rate, with base-10 magnitudes (constants `C(d, coe, Ω)` taken as 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub n: u64,
    pub d: usize,
    /// `A = n^{a_exp}`
    pub a_exp: f64,
    /// `B_inn ∝ n^{b_inn_exp}`; also the half-width of the initialisation range.
    pub b_inn_exp: f64,
    /// `B_out ∝ n^{b_out_exp}`
    pub b_out_exp: f64,
    /// Inner-ball radius `½ n^{inner_radius_exp}`.
    pub inner_radius_exp: f64,
    /// `η ∝ n^{eta_exp}` after dividing by `A`.
    pub eta_exp: f64,
    /// The error decays like `n^{-rate_exp}`.
    pub rate_exp: f64,
    /// `288d³ + 4`
    pub rate_denominator: u64,
    pub log10_a: f64,
    pub log10_eta: f64,
    /// `T = 1/η`
    pub log10_iterations: f64,
    pub infeasible: bool,
}

/// Above this many subnetworks the prescription is reported as infeasible.
pub const FEASIBLE_LOG10_A: f64 = 12.0;

pub fn theoretical_hyperparams(n: u64, d: usize) -> Result<TheoryReport> {
    if n < 2 || d == 0 {
        return Err(invalid("need n >= 2 and d >= 1"));
    }
    let df = d as f64;
    let d3 = df.powi(3);
    let den = 288.0 * d3 + 4.0;
    let half_den = 144.0 * d3 + 2.0;
    let a_exp = 415.0 * df.powi(4) * (df + 3.0) * 5f64.powi(d as i32 + 2) / den;
    let eta_exp = -103.0 * d3 / half_den - a_exp;
    let log_n = (n as f64).log10();
    let log10_a = a_exp * log_n;
    Ok(TheoryReport {
        n,
        d,
        a_exp,
        b_inn_exp: 10.0 * d3 / half_den,
        b_out_exp: 11.0 * d3 / half_den,
        inner_radius_exp: -83.0 * d3 / den,
        eta_exp,
        rate_exp: 1.0 / den,
        rate_denominator: 288 * (d as u64).pow(3) + 4,
        log10_a,
        log10_eta: eta_exp * log_n,
        log10_iterations: -eta_exp * log_n,
        infeasible: log10_a > FEASIBLE_LOG10_A,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::forward;

    fn cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            eta: 0.01,
            iterations: 10,
            subnets: 3,
            init_bound: 1.0,
            seed,
            mode: TrainMode::Practical,
        }
    }

    #[test]
    fn init_has_zero_outer_layer_and_is_reproducible() {
        let dims = NetDims::new(2, 4, 3).unwrap();
        let p = init_params(&cfg(5), dims).unwrap();
        assert_eq!(forward(&p, &[0.3, 0.8]).unwrap(), 0.0);
        assert_eq!(p, init_params(&cfg(5), dims).unwrap());
        assert_ne!(p, init_params(&cfg(6), dims).unwrap());
        let bad = TrainConfig { init_bound: 0.0, ..cfg(1) };
        assert!(init_params(&bad, dims).is_err());
    }

    #[test]
    fn init_entries_are_uniform() {
        let dims = NetDims::new(10, 50, 40).unwrap();
        let c = TrainConfig { subnets: 40, ..cfg(2) };
        let p = init_params(&c, dims).unwrap();
        let inner: Vec<f64> = p
            .subnets
            .iter()
            .flat_map(|s| s.blocks()[..4].iter().flat_map(|b| b.to_vec()).collect::<Vec<_>>())
            .collect();
        assert!(inner.len() >= 100_000);
        let mean = inner.iter().sum::<f64>() / inner.len() as f64;
        assert!(mean.abs() < 0.02);
        assert!(inner.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn l1_projection_examples() {
        assert_eq!(project_l1_ball(&[3.0, 0.0, 0.0], 1.0), vec![1.0, 0.0, 0.0]);
        assert_eq!(project_l1_ball(&[0.2, -0.3], 1.0), vec![0.2, -0.3]);
        let p = project_l1_ball(&[1.0, -1.0, 0.5], 1.0);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] + 0.5).abs() < 1e-15 && p[2] == 0.0);
        assert_eq!(project_l1_ball(&[1.0, 2.0], 0.0), vec![0.0, 0.0]);
    }

    #[test]
    fn members_are_returned_unchanged() {
        let dims = NetDims::new(1, 2, 2).unwrap();
        let p = init_params(&cfg(3), dims).unwrap();
        let spec = ProjectionSpec::around(&p, 0.5, 1.0).unwrap();
        let q = project(&p, &spec).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn inner_block_is_pulled_back_radially() {
        let dims = NetDims::new(2, 2, 2).unwrap();
        let center = init_params(&cfg(4), dims).unwrap();
        let r = 0.25;
        let spec = ProjectionSpec::around(&center, r, 10.0).unwrap();
        let mut p = center.clone();
        // displacement of Frobenius norm 2r in W2 of subnet 1
        let dir = [0.6, -0.8, 0.0, 0.0];
        for (k, v) in p.subnets[1].w2.as_mut_slice().iter_mut().enumerate() {
            *v += 2.0 * r * dir[k];
        }
        let (q, act) = project_with_activity(&p, &spec).unwrap();
        assert!(act.inner && !act.outer);
        let moved: Vec<f64> = q.subnets[1]
            .w2
            .iter()
            .zip(center.subnets[1].w2.iter())
            .map(|(a, b)| a - b)
            .collect();
        for k in 0..4 {
            assert!((moved[k] - r * dir[k]).abs() < 1e-15);
        }
        assert_eq!(q.subnets[0], center.subnets[0]);
    }

    #[test]
    fn eta_zero_keeps_parameters() {
        let dims = NetDims::new(1, 2, 2).unwrap();
        let p = init_params(&cfg(1), dims).unwrap();
        let prob = crate::problems::manufacture(
            crate::problems::Domain::hypercube(1),
            crate::problems::exact_robin_1d(1.0, 1.0, 1.0).unwrap().to_exact(),
            crate::problems::constant_field(1.0),
            crate::problems::BoundaryCondition::Robin,
            1.0,
        )
        .unwrap();
        let s = SampleSet::draw(crate::problems::Domain::hypercube(1), 64, 64, 1).unwrap();
        let spec = ProjectionSpec::around(&p, 1.0, 10.0).unwrap();
        let c = TrainConfig { eta: 0.0, ..cfg(1) };
        let (q, trace) = train(&p, &prob, &s, &c, &spec).unwrap();
        assert_eq!(p, q);
        assert_eq!(trace.entries.len(), 11);
        assert!(trace.entries.iter().all(|e| e.loss == trace.entries[0].loss));
    }

    #[test]
    fn theory_mode_ties_iterations_to_step() {
        let c = TrainConfig {
            eta: 0.004,
            mode: TrainMode::TheoryReport,
            ..cfg(1)
        };
        assert_eq!(c.effective_iterations(), 250);
    }

    #[test]
    fn theory_exponents() {
        let r1 = theoretical_hyperparams(100, 1).unwrap();
        assert_eq!(r1.rate_denominator, 292);
        assert!((r1.rate_exp - 1.0 / 292.0).abs() < 1e-15);
        assert!((r1.log10_a - 415.0 * 4.0 * 125.0 / 292.0 * 2.0).abs() < 1e-9);
        assert!((r1.log10_a - 1421.2).abs() < 0.1);
        assert!(r1.infeasible);
        let r2 = theoretical_hyperparams(100, 2).unwrap();
        assert_eq!(r2.rate_denominator, 2308);
        assert!((r2.rate_exp - 1.0 / 2308.0).abs() < 1e-15);
        assert!(theoretical_hyperparams(1, 1).is_err());
    }

    #[test]
    fn trace_csv_layout() {
        let t = TrainTrace {
            eta: 0.1,
            entries: vec![TraceEntry {
                iter: 0,
                loss: -0.5,
                grad_norm: 1.0,
                step_norm: 0.1,
                projection: ProjectionActivity::default(),
                guard_flag: false,
            }],
        };
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "# schema=1\niter,loss,grad_norm,step_norm,guard_flag\n0,-0.5,1,0.1,0\n"
        );
    }
}
