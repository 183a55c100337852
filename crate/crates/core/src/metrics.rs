//! Monte Carlo error norms, generalisation gap, the C¹ bounds of the loss
//! integrand classes, and log-log rate fits.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::loss::{self, mean_and_stderr};
use crate::network::{NetParams, TrialFunction};
use crate::problems::{sample_interior, Domain, Exact1d, ExactSolution, ProblemSpec, SampleSet};

/// Monte Carlo estimate of `‖u - u*‖` in L², the H¹ seminorm, and H¹.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub l2: f64,
    pub h1_semi: f64,
    pub h1: f64,
    /// Standard error of the `h1` estimate (delta method on `h1²`).
    pub mc_stderr: f64,
    pub n_eval: usize,
}

impl ErrorReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain numeric record")
    }
}

pub fn mc_h1_error(
    params: &NetParams,
    exact: Option<&ExactSolution>,
    domain: &Domain,
    n_eval: usize,
    seed: u64,
) -> Result<ErrorReport> {
    let exact = exact.ok_or(crate::error::RitzError::MissingExact)?;
    mc_h1_error_of(params, exact, domain, n_eval, seed)
}

/// [`mc_h1_error`] for any trial function.
pub fn mc_h1_error_of<U: TrialFunction + ?Sized>(
    u: &U,
    exact: &ExactSolution,
    domain: &Domain,
    n_eval: usize,
    seed: u64,
) -> Result<ErrorReport> {
    if n_eval < 100 {
        return Err(invalid("n_eval must be at least 100"));
    }
    let (vol, _) = domain.measures();
    let pts = sample_interior(domain, n_eval, seed)?;
    let mut sq_val = Vec::with_capacity(n_eval);
    let mut sq_grad = Vec::with_capacity(n_eval);
    let mut sq_both = Vec::with_capacity(n_eval);
    for x in pts.chunks_exact(domain.d) {
        let (v, g) = u.value_and_gradient(x);
        let e = v - (exact.value)(x);
        let ge: f64 = g
            .iter()
            .zip((exact.gradient)(x))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        sq_val.push(e * e);
        sq_grad.push(ge);
        sq_both.push(e * e + ge);
    }
    let (mv, _) = mean_and_stderr(&sq_val);
    let (mg, _) = mean_and_stderr(&sq_grad);
    let (_, se_both) = mean_and_stderr(&sq_both);
    let l2_sq = vol * mv;
    let semi_sq = vol * mg;
    let h1 = (l2_sq + semi_sq).sqrt();
    let mc_stderr = if h1 > 0.0 { vol * se_both / (2.0 * h1) } else { 0.0 };
    Ok(ErrorReport {
        l2: l2_sq.sqrt(),
        h1_semi: semi_sq.sqrt(),
        h1,
        mc_stderr,
        n_eval,
    })
}

/// `|L̂(train) - L̂(eval)|` at fixed parameters.
pub fn generalization_gap(
    params: &NetParams,
    prob: &ProblemSpec,
    train: &SampleSet,
    eval: &SampleSet,
) -> Result<f64> {
    let a = loss::discrete_loss(params, prob, train)?.total;
    let b = loss::discrete_loss(params, prob, eval)?.total;
    Ok((a - b).abs())
}

/// Radii of the C¹ balls containing the five integrand classes
/// (`|∇f_W|²`, `f_W²`, `f_W`, boundary `f_W²`, boundary `f_W`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityBounds {
    pub b_f1: f64,
    pub b_f2: f64,
    pub b_f3: f64,
    pub b_f4: f64,
    pub b_f5: f64,
}

/// `max(sup|tanh|, 1)`, `max(sup|tanh'|, 1)`, `max(sup|tanh''|, 1)`.
pub fn tanh_constants() -> (f64, f64, f64) {
    // sup |tanh''| = 4/(3√3) < 1, so all three clamp to 1
    let raw_second = 4.0 / (3.0 * 3f64.sqrt());
    (1.0, 1.0, raw_second.max(1.0))
}

pub fn complexity_bounds(m1: usize, m2: usize, d: usize, b_inn: f64, b_out: f64) -> Result<ComplexityBounds> {
    if m1 == 0 || m2 == 0 || d == 0 || !(b_inn > 0.0) || !(b_out > 0.0) {
        return Err(invalid("complexity bounds need positive inputs"));
    }
    let (bs, bs1, bs2) = tanh_constants();
    let (m1, m2, df) = (m1 as f64, m2 as f64, d as f64);
    let b_f1 = 2.0 * df * m2 * m2 * m1.powf(1.5) * bs1.powi(4) * bs2 * b_inn.powi(5) * b_out * b_out;
    let b_f2 = 2.0 * m2 * m2 * m1.sqrt() * bs * bs * bs1 * bs1 * b_inn * b_out * b_out;
    let b_f3 = m2 * m1.sqrt() * bs * bs1 * bs1 * b_inn * b_out;
    Ok(ComplexityBounds {
        b_f1,
        b_f2,
        b_f3,
        b_f4: b_f2,
        b_f5: b_f3,
    })
}

/// Least-squares slope of `ln(error)` against `ln(n)`.
pub fn empirical_rate(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 3 {
        return Err(invalid("need at least three (n, error) pairs"));
    }
    if pairs.iter().any(|&(n, e)| !(n > 0.0) || !(e > 0.0)) {
        return Err(invalid("rate fit needs positive n and error"));
    }
    Ok(log_log_slope(pairs))
}

pub(crate) fn log_log_slope(pairs: &[(f64, f64)]) -> f64 {
    let k = pairs.len() as f64;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// One trained model in a rate study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub rep: usize,
    pub l2: f64,
    pub h1: f64,
    pub stderr: f64,
}

/// CSV with columns `n,rep,l2,h1,stderr,theory_exponent`.
pub fn write_rate_csv<W: Write>(rows: &[RateRow], theory_exponent: f64, mut w: W) -> Result<()> {
    writeln!(w, "# schema=1")?;
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["n", "rep", "l2", "h1", "stderr", "theory_exponent"])?;
    for r in rows {
        wr.write_record([
            r.n.to_string(),
            r.rep.to_string(),
            r.l2.to_string(),
            r.h1.to_string(),
            r.stderr.to_string(),
            theory_exponent.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Median of `values`; mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k == 0 {
        return f64::NAN;
    }
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// `‖u - v‖_{H¹(0,1)}` for closed-form 1D solutions, by composite Simpson
/// quadrature on `intervals` (rounded up to even) subintervals.
pub fn h1_distance_1d(u: &Exact1d, v: &Exact1d, intervals: usize) -> f64 {
    let n = intervals.max(2).div_ceil(2) * 2;
    let h = 1.0 / n as f64;
    let sum: f64 = (0..=n)
        .map(|i| {
            let x = i as f64 * h;
            let e = u.value(x) - v.value(x);
            let de = u.derivative(x) - v.derivative(x);
            let weight = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            weight * (e * e + de * de)
        })
        .sum();
    (sum * h / 3.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetDims;
    use crate::problems::{constant_solution, exact_dirichlet_1d, exact_robin_1d};
    use std::sync::Arc;

    #[test]
    fn simpson_distance_matches_closed_form() {
        // e = A e^{kx} + B e^{-kx}, so ∫ e² + e'² has a closed form
        let u = exact_robin_1d(1.0, 2.0, 0.3).unwrap();
        let v = exact_dirichlet_1d(1.0, 2.0).unwrap();
        let (a, b, k) = (u.c1 - v.c1, u.c2 - v.c2, u.rate);
        let sq = (1.0 + k * k) * (a * a * ((2.0 * k).exp() - 1.0) + b * b * (1.0 - (-2.0 * k).exp())) / (2.0 * k)
            + 2.0 * a * b * (1.0 - k * k);
        assert!((h1_distance_1d(&u, &v, 2000) - sq.sqrt()).abs() < 1e-12);
        assert_eq!(h1_distance_1d(&v, &v, 10), 0.0);
    }

    #[test]
    fn network_against_itself_is_zero() {
        let mut p = NetParams::zeros(NetDims::new(2, 2, 2).unwrap(), 1).unwrap();
        p.subnets[0].w1.fill(0.4);
        p.subnets[0].w3.fill(1.5);
        let q = p.clone();
        let exact = ExactSolution {
            dim: 2,
            value: Arc::new(move |x| crate::network::forward(&q, x).unwrap()),
            gradient: {
                let q = p.clone();
                Arc::new(move |x| crate::network::grad_x(&q, x).unwrap())
            },
            laplacian: None,
        };
        let r = mc_h1_error(&p, Some(&exact), &Domain::hypercube(2), 500, 1).unwrap();
        assert_eq!((r.l2, r.h1_semi, r.h1), (0.0, 0.0, 0.0));
        assert!(mc_h1_error(&p, None, &Domain::hypercube(2), 500, 1).is_err());
        assert!(mc_h1_error(&p, Some(&exact), &Domain::hypercube(2), 99, 1).is_err());
    }

    #[test]
    fn zero_net_against_constant() {
        let p = NetParams::zeros(NetDims::new(3, 2, 2).unwrap(), 1).unwrap();
        let r = mc_h1_error(&p, Some(&constant_solution(3, 1.0)), &Domain::hypercube(3), 1000, 2).unwrap();
        assert_eq!(r.l2, 1.0);
        assert_eq!(r.h1_semi, 0.0);
        assert_eq!(r.h1 * r.h1, r.l2 * r.l2 + r.h1_semi * r.h1_semi);
    }

    #[test]
    fn zero_net_against_identity() {
        let p = NetParams::zeros(NetDims::new(1, 2, 2).unwrap(), 1).unwrap();
        let exact = ExactSolution {
            dim: 1,
            value: Arc::new(|x| x[0]),
            gradient: Arc::new(|_| vec![1.0]),
            laplacian: Some(Arc::new(|_| 0.0)),
        };
        let r = mc_h1_error(&p, Some(&exact), &Domain::hypercube(1), 100_000, 3).unwrap();
        assert!((r.l2 * r.l2 - 1.0 / 3.0).abs() < 4.0 * 0.3 / (100_000f64).sqrt());
        assert_eq!(r.h1_semi, 1.0);
        assert!((r.h1 - (4.0f64 / 3.0).sqrt()).abs() < 4.0 * r.mc_stderr.max(1e-3));
    }

    #[test]
    fn complexity_bound_values() {
        let b = complexity_bounds(1, 1, 1, 1.0, 1.0).unwrap();
        assert_eq!(b.b_f3, 1.0);
        let b = complexity_bounds(10, 10, 2, 2.0, 3.0).unwrap();
        assert!((b.b_f3 - 10.0 * 10f64.sqrt() * 6.0).abs() < 1e-12);
        assert!((b.b_f3 - 189.7).abs() < 0.05);
        assert_eq!(b.b_f2, b.b_f4);
        assert_eq!(b.b_f3, b.b_f5);
        let (_, _, s2) = tanh_constants();
        assert_eq!(s2, 1.0);
    }

    #[test]
    fn rate_fits() {
        let exact: Vec<(f64, f64)> = [10.0, 100.0, 1000.0, 1e4].iter().map(|&n: &f64| (n, 3.0 * n.powf(-0.5))).collect();
        assert!((empirical_rate(&exact).unwrap() + 0.5).abs() < 1e-10);
        let flat = [(10.0, 2.0), (20.0, 2.0), (40.0, 2.0)];
        assert_eq!(empirical_rate(&flat).unwrap(), 0.0);
        // closed-form regression: slope = Σ(x-x̄)(y-ȳ)/Σ(x-x̄)² with x = ln 10·(1,2,3)
        let pts = [(10.0, 1.0), (100.0, 0.3), (1000.0, 0.1)];
        let expected = (0.1f64.ln() - 1.0f64.ln()) / (2.0 * 10f64.ln());
        assert!((empirical_rate(&pts).unwrap() - expected).abs() < 1e-12);
        assert!((expected + 0.5).abs() < 0.01);
        assert!(empirical_rate(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]).is_err());
        assert!(empirical_rate(&[(1.0, 1.0), (2.0, 1.0)]).is_err());
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
