//! Finite-difference and brute-force oracles, and the property suites built on them.
//!
//! Nothing here calls the analytic gradient code except to compare against it:
//! derivatives come from central differences of `forward`, `grad_x` and the
//! loss, and the ℓ1 projection is checked against exhaustive support enumeration.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::loss;
use crate::network::{self, NetDims, NetParams, ParamGrad, BLOCK_NAMES};
use crate::optimizer::{self, outer_vector, ProjectionSpec};
use crate::problems::{self, BoundaryCondition, Domain, ProblemSpec, SampleSet, ScalarField};

/// Step for all central differences.
pub const FD_STEP: f64 = 1e-5;

/// `(f(x+h) - f(x-h)) / 2h` in every coordinate of `x`.
pub fn central_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|k| {
            xp[k] = x[k] + h;
            let fp = f(&xp);
            xp[k] = x[k] - h;
            let fm = f(&xp);
            xp[k] = x[k];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a - b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(floor)
}

/// Relative error per parameter block (pooled over subnets). Blocks whose
/// gradient is small compared with the whole vector are measured against
/// `1e-3 · ‖whole‖` instead of their own norm.
pub fn block_errors(analytic: &ParamGrad, numeric_flat: &[f64], dims: NetDims) -> [f64; 6] {
    block_errors_with_floor(analytic, numeric_flat, dims, 1e-12)
}

/// [`block_errors`] with a caller-chosen absolute floor, for parameters whose
/// differences carry rounding noise well above `1e-12`.
pub fn block_errors_with_floor(analytic: &ParamGrad, numeric_flat: &[f64], dims: NetDims, min_floor: f64) -> [f64; 6] {
    let numeric = NetParams::from_flat(dims, numeric_flat).expect("shape from the same params");
    let whole = norm(&analytic.to_flat()).max(norm(numeric_flat));
    let floor = (1e-3 * whole).max(min_floor);
    let mut out = [0.0; 6];
    for (k, slot) in out.iter_mut().enumerate() {
        let a: Vec<f64> = analytic.subnets.iter().flat_map(|s| s.blocks()[k].to_vec()).collect();
        let b: Vec<f64> = numeric.subnets.iter().flat_map(|s| s.blocks()[k].to_vec()).collect();
        *slot = relative_error(&a, &b, floor);
    }
    out
}

fn perturbed_scalar(params: &NetParams, f: impl Fn(&NetParams) -> f64) -> Vec<f64> {
    let flat = params.to_flat();
    central_gradient(
        |theta| f(&NetParams::from_flat(params.dims, theta).expect("same shape")),
        &flat,
        FD_STEP,
    )
}

/// Relative error of `grad_x` against differences of `forward`.
pub fn check_grad_x(params: &NetParams, x: &[f64]) -> Result<f64> {
    let analytic = network::grad_x(params, x)?;
    let numeric = central_gradient(|y| network::forward(params, y).expect("checked dims"), x, FD_STEP);
    Ok(relative_error(&analytic, &numeric, 1e-12))
}

/// Per-block errors of `grad_params` against differences of `forward` in θ.
pub fn check_grad_params(params: &NetParams, x: &[f64]) -> Result<[f64; 6]> {
    let analytic = network::grad_params(params, x)?;
    let numeric = perturbed_scalar(params, |p| network::forward(p, x).expect("checked dims"));
    Ok(block_errors(&analytic, &numeric, params.dims))
}

/// Per-block errors of `grad_params_of_spatial` against differences of `grad_x[axis]` in θ.
pub fn check_grad_params_of_spatial(params: &NetParams, x: &[f64], axis: usize) -> Result<[f64; 6]> {
    let analytic = network::grad_params_of_spatial(params, x, axis)?;
    let numeric = perturbed_scalar(params, |p| network::grad_x(p, x).expect("checked dims")[axis]);
    Ok(block_errors(&analytic, &numeric, params.dims))
}

/// Per-block errors of `loss_gradient`, optionally with the W2 block deliberately skewed.
pub fn check_loss_gradient(
    params: &NetParams,
    prob: &ProblemSpec,
    samples: &SampleSet,
    corrupt: bool,
) -> Result<[f64; 6]> {
    let mut analytic = loss::loss_gradient(params, prob, samples)?;
    if corrupt {
        for s in &mut analytic.subnets {
            s.w2 *= 1.01;
        }
    }
    let numeric = perturbed_scalar(params, |p| loss::discrete_loss(p, prob, samples).expect("valid inputs").total);
    Ok(block_errors(&analytic, &numeric, params.dims))
}

fn random_params(rng: &mut ChaCha8Rng, dims: NetDims, subnets: usize, scale: f64) -> NetParams {
    let len = dims.subnet_len() * subnets;
    let flat: Vec<f64> = (0..len).map(|_| rng.random_range(-scale..=scale)).collect();
    NetParams::from_flat(dims, &flat).expect("consistent length")
}

/// `w(x) = 1 + ½|x|²`.
pub fn variable_coefficient() -> ScalarField {
    Arc::new(|x: &[f64]| 1.0 + 0.5 * x.iter().map(|v| v * v).sum::<f64>())
}

/// One randomly drawn gradient-check configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCaseReport {
    pub d: usize,
    pub subnets: usize,
    pub m1: usize,
    pub m2: usize,
    pub bc: BoundaryCondition,
    pub grad_x: f64,
    pub grad_params: [f64; 6],
    pub grad_params_of_spatial: [f64; 6],
    pub loss_gradient: [f64; 6],
}

impl GradCaseReport {
    pub fn worst(&self) -> f64 {
        self.grad_params
            .iter()
            .chain(&self.grad_params_of_spatial)
            .chain(&self.loss_gradient)
            .fold(self.grad_x, |a, &b| a.max(b))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradSuiteReport {
    pub tolerance: f64,
    pub cases: Vec<GradCaseReport>,
    /// Max relative error per block name over all cases and all checks.
    pub max_by_block: Vec<(String, f64)>,
    pub passed: bool,
}

/// Gradient suite over `configs` random networks with `d ∈ {1,2,3}`,
/// `A ∈ {1,2,4}` and widths in `1..=4`.
pub fn run_gradient_suite(configs: usize, seed: u64, tolerance: f64, corrupt: bool) -> Result<GradSuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::with_capacity(configs);
    for c in 0..configs {
        let d = [1, 2, 3][c % 3];
        let subnets = [1, 2, 4][(c / 3) % 3];
        let dims = NetDims::new(d, rng.random_range(1..=4), rng.random_range(1..=4))?;
        let params = random_params(&mut rng, dims, subnets, 1.5);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
        let axis = rng.random_range(0..d);
        let bc = if c % 2 == 0 { BoundaryCondition::Robin } else { BoundaryCondition::Neumann };
        let domain = if c % 4 == 3 { Domain::ball(d) } else { Domain::hypercube(d) };
        let exact = if bc == BoundaryCondition::Robin {
            problems::sin_product(d)
        } else {
            problems::cos_product(d)
        };
        let beta = rng.random_range(0.2..2.0);
        let prob = problems::manufacture(domain, exact, variable_coefficient(), bc, beta)?;
        let samples = SampleSet::draw(domain, 24, 12, rng.random())?;

        cases.push(GradCaseReport {
            d,
            subnets,
            m1: dims.m1,
            m2: dims.m2,
            bc,
            grad_x: check_grad_x(&params, &x)?,
            grad_params: check_grad_params(&params, &x)?,
            grad_params_of_spatial: check_grad_params_of_spatial(&params, &x, axis)?,
            loss_gradient: check_loss_gradient(&params, &prob, &samples, corrupt)?,
        });
    }
    let mut max_by_block: Vec<(String, f64)> = BLOCK_NAMES.iter().map(|n| (n.to_string(), 0.0)).collect();
    for case in &cases {
        for k in 0..6 {
            let m = case.grad_params[k].max(case.grad_params_of_spatial[k]).max(case.loss_gradient[k]);
            max_by_block[k].1 = max_by_block[k].1.max(m);
        }
    }
    max_by_block.push((
        "grad_x".to_string(),
        cases.iter().map(|c| c.grad_x).fold(0.0, f64::max),
    ));
    let passed = cases.iter().all(|c| c.worst() < tolerance);
    Ok(GradSuiteReport {
        tolerance,
        cases,
        max_by_block,
        passed,
    })
}

/// Exhaustive ℓ1-ball projection for short vectors: the projection is the
/// closest of the soft-thresholded candidates over every support set.
pub fn brute_force_l1_projection(v: &[f64], radius: f64) -> Vec<f64> {
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= radius {
        return v.to_vec();
    }
    let k = v.len();
    assert!(k <= 16, "exhaustive search is for short vectors");
    let mut best = vec![0.0; k];
    let mut best_dist = norm(v);
    for mask in 1u32..(1 << k) {
        let support: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let theta = (support.iter().map(|&i| v[i].abs()).sum::<f64>() - radius) / support.len() as f64;
        if theta < 0.0 || support.iter().any(|&i| v[i].abs() < theta) {
            continue;
        }
        let mut y = vec![0.0; k];
        for &i in &support {
            y[i] = v[i].signum() * (v[i].abs() - theta);
        }
        let dist = norm(&v.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>());
        if dist < best_dist {
            best_dist = dist;
            best = y;
        }
    }
    best
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectionSuiteReport {
    pub pairs: usize,
    pub max_idempotence_gap: f64,
    pub max_violation: f64,
    /// `max(‖P z - P z'‖ - ‖z - z'‖)`; must stay below the slack.
    pub max_expansion: f64,
    pub max_l1_oracle_gap: f64,
    pub passed: bool,
}

pub const PROJECTION_SLACK: f64 = 1e-12;
pub const L1_ORACLE_TOLERANCE: f64 = 1e-9;

fn flat_distance(a: &NetParams, b: &NetParams) -> f64 {
    a.distance(b)
}

/// Idempotence, membership and nonexpansiveness on `pairs` random pairs, plus
/// agreement of the ℓ1 projection with the exhaustive oracle.
pub fn run_projection_suite(pairs: usize, seed: u64) -> Result<ProjectionSuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idem = 0.0f64;
    let mut viol = f64::NEG_INFINITY;
    let mut expansion = f64::NEG_INFINITY;
    for i in 0..pairs {
        let dims = NetDims::new(1 + i % 3, 1 + i % 4, 1 + (i / 4) % 3)?;
        let subnets = 1 + i % 3;
        let center = random_params(&mut rng, dims, subnets, 1.0);
        let spec = ProjectionSpec::around(
            &center,
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..2.0),
        )?;
        let z = random_params(&mut rng, dims, subnets, 2.0);
        let z2 = if i % 2 == 0 {
            random_params(&mut rng, dims, subnets, 2.0)
        } else {
            // nearby pair exercises the regime where both are clipped the same way
            let bump = random_params(&mut rng, dims, subnets, 0.05);
            NetParams::from_flat(dims, &z.to_flat().iter().zip(bump.to_flat()).map(|(a, b)| a + b).collect::<Vec<_>>())?
        };
        let pz = optimizer::project(&z, &spec)?;
        let pz2 = optimizer::project(&z2, &spec)?;
        let ppz = optimizer::project(&pz, &spec)?;
        idem = idem.max(flat_distance(&ppz, &pz));
        viol = viol.max(spec.violation(&pz)).max(spec.violation(&pz2));
        expansion = expansion.max(flat_distance(&pz, &pz2) - flat_distance(&z, &z2));
    }

    let mut oracle_gap = 0.0f64;
    for len in 1..=6 {
        for _ in 0..50 {
            let v: Vec<f64> = (0..len).map(|_| rng.random_range(-3.0..3.0)).collect();
            for budget in [0.0, 0.1, 0.5, 1.0, 2.0, 4.0, 8.0] {
                let fast = optimizer::project_l1_ball(&v, budget);
                let slow = brute_force_l1_projection(&v, budget);
                let gap = fast.iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                oracle_gap = oracle_gap.max(gap);
            }
        }
    }
    let passed = idem <= PROJECTION_SLACK
        && viol <= PROJECTION_SLACK
        && expansion <= PROJECTION_SLACK
        && oracle_gap <= L1_ORACLE_TOLERANCE;
    Ok(ProjectionSuiteReport {
        pairs,
        max_idempotence_gap: idem,
        max_violation: viol,
        max_expansion: expansion,
        max_l1_oracle_gap: oracle_gap,
        passed,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvexitySuiteReport {
    pub directions: usize,
    pub step: f64,
    pub min_second_difference: f64,
    pub passed: bool,
}

pub const CONVEXITY_TOLERANCE: f64 = -1e-10;

/// Second differences of the Robin loss along random outer-layer directions.
pub fn run_convexity_suite(directions: usize, seed: u64) -> Result<ConvexitySuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-3;
    let mut min_sd = f64::INFINITY;
    let per_problem = 50;
    let mut done = 0;
    let mut round = 0;
    while done < directions {
        let d = 1 + round % 3;
        let dims = NetDims::default_for(d);
        let subnets = 1 + round % 4;
        let params = random_params(&mut rng, dims, subnets, 1.0);
        let domain = Domain::hypercube(d);
        let beta = rng.random_range(0.05..2.0);
        let prob = problems::manufacture(domain, problems::sin_product(d), variable_coefficient(), BoundaryCondition::Robin, beta)?;
        let samples = SampleSet::draw(domain, 64, 32, rng.random())?;
        let base = loss::discrete_loss_robin(&params, &prob, &samples)?.total;
        for _ in 0..per_problem.min(directions - done) {
            let mut dir = ParamGrad::zeros_like(&params);
            for s in &mut dir.subnets {
                for v in s.w3.iter_mut() {
                    *v = rng.random_range(-1.0..1.0);
                }
                s.b3 = rng.random_range(-1.0..1.0);
            }
            let n = dir.norm();
            dir.scale(1.0 / n);
            let plus = loss::discrete_loss_robin(&params.offset(h, &dir), &prob, &samples)?.total;
            let minus = loss::discrete_loss_robin(&params.offset(-h, &dir), &prob, &samples)?.total;
            min_sd = min_sd.min(plus - 2.0 * base + minus);
            done += 1;
        }
        round += 1;
    }
    Ok(ConvexitySuiteReport {
        directions,
        step: h,
        min_second_difference: min_sd,
        passed: min_sd >= CONVEXITY_TOLERANCE,
    })
}

/// The outer vector of `params`, exposed for tests that perturb only `W3`/`b3`.
pub fn outer_of(params: &NetParams) -> Vec<f64> {
    outer_vector(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_gradient_of_quadratic() {
        let g = central_gradient(|v| v[0] * v[0] + 3.0 * v[1], &[2.0, 1.0], 1e-5);
        assert!((g[0] - 4.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn brute_force_matches_textbook_cases() {
        assert_eq!(brute_force_l1_projection(&[3.0, 0.0, 0.0], 1.0), vec![1.0, 0.0, 0.0]);
        let p = brute_force_l1_projection(&[2.0, 1.0], 1.0);
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1].abs() < 1e-15);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let good = run_gradient_suite(3, 1, 1e-5, false).unwrap();
        assert!(good.passed, "{:?}", good.max_by_block);
        let bad = run_gradient_suite(3, 1, 1e-5, true).unwrap();
        assert!(!bad.passed);
    }
}
