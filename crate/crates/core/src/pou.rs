//! Approximate partition of unity built from tanh ramps, and the localized
//! polynomial approximant `f̃ = Σ_j Φ_j p_j` that it glues together.
//!
//! Cells are indexed from 1 as in the usual presentation: `I_j` is
//! `Π ((j_i-1)/N, j_i/N)` and the fitting patch `J_j` is `Π ((j_i-2)/N, (j_i+1)/N)`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, RitzError};
use crate::metrics::log_log_slope;
use crate::network::binomial;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PouConfig {
    pub n: usize,
    pub k: usize,
    pub eps: f64,
    pub alpha: f64,
}

/// `N ln((2k)^{k+1} (Nk)^k / (e^k ε))` with no range checks. Evaluated in log form.
pub fn alpha_raw(n: usize, k: usize, eps: f64) -> f64 {
    let (n, k) = (n as f64, k as f64);
    n * ((k + 1.0) * (2.0 * k).ln() + k * (n * k).ln() - k - eps.ln())
}

/// Sharpness of the ramps for grid size `n`, order `k ≥ 1` and accuracy `0 < eps < 1/4`.
pub fn alpha(n: usize, k: usize, eps: f64) -> Result<f64> {
    if n < 1 {
        return Err(invalid("N must be at least 1"));
    }
    if k == 0 {
        return Err(invalid("k = 0 makes (2k)^(k+1) vanish; use k >= 1"));
    }
    if !(eps > 0.0 && eps < 0.25) {
        return Err(invalid(format!("eps must lie in (0, 1/4), got {eps}")));
    }
    Ok(alpha_raw(n, k, eps))
}

impl PouConfig {
    pub fn new(n: usize, k: usize, eps: f64) -> Result<Self> {
        if n < 2 {
            return Err(invalid("N must be at least 2"));
        }
        Ok(PouConfig {
            n,
            k,
            eps,
            alpha: alpha(n, k, eps)?,
        })
    }

    /// Same grid with a hand-picked sharpness (for reproducing worked examples).
    pub fn with_alpha(n: usize, alpha: f64) -> Result<Self> {
        if n < 2 || !alpha.is_finite() {
            return Err(invalid("need N >= 2 and finite alpha"));
        }
        Ok(PouConfig { n, k: 1, eps: f64::NAN, alpha })
    }
}

/// One-dimensional bump `φ_j(y)`, `1 ≤ j ≤ N`.
pub fn phi(j: usize, cfg: &PouConfig, y: f64) -> Result<f64> {
    if j < 1 || j > cfg.n {
        return Err(invalid(format!("bump index {j} outside 1..={}", cfg.n)));
    }
    Ok(phi_unchecked(j, cfg, y))
}

fn ramp(cfg: &PouConfig, y: f64, i: usize) -> f64 {
    (cfg.alpha * (y - i as f64 / cfg.n as f64)).tanh()
}

fn phi_unchecked(j: usize, cfg: &PouConfig, y: f64) -> f64 {
    let n = cfg.n;
    if j == 1 {
        0.5 - 0.5 * ramp(cfg, y, 1)
    } else if j == n {
        0.5 * ramp(cfg, y, n - 1) + 0.5
    } else {
        0.5 * ramp(cfg, y, j - 1) - 0.5 * ramp(cfg, y, j)
    }
}

/// Tensor bump `Φ_j(x) = Π φ_{j_i}(x_i)`.
#[allow(non_snake_case)]
pub fn Phi(j: &[usize], cfg: &PouConfig, x: &[f64]) -> Result<f64> {
    if j.len() != x.len() {
        return Err(RitzError::DimensionMismatch {
            expected: j.len(),
            got: x.len(),
        });
    }
    j.iter().zip(x).map(|(&ji, &xi)| phi(ji, cfg, xi)).product()
}

/// All 1D bump values at `y`, index 0 holding `φ_1`.
fn phi_table(cfg: &PouConfig, y: f64) -> Vec<f64> {
    (1..=cfg.n).map(|j| phi_unchecked(j, cfg, y)).collect()
}

/// Iterates over `{1..N}^d` in lexicographic order (last index fastest).
pub fn multi_indices(n: usize, d: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = n.pow(d as u32);
    (0..total).map(move |mut flat| {
        let mut j = vec![0; d];
        for slot in j.iter_mut().rev() {
            *slot = flat % n + 1;
            flat /= n;
        }
        j
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PouBoundsReport {
    pub n: usize,
    pub eps: f64,
    pub d: usize,
    pub alpha: f64,
    /// `sup |Σ_{v∈V} Φ_{j+v} - 1|` over points of `I_j`.
    pub sup_deficit: f64,
    /// `sup Φ_{j+v}` over `‖v‖_∞ ≥ 2`.
    pub sup_far: f64,
    pub bound_ok: bool,
    /// `sup |(1 - near) - Σ far|`; zero up to rounding.
    pub consistency: f64,
    /// `sup |Σ_j Φ_j - 1|`.
    pub global_sum_dev: f64,
}

/// Order-0 numerical check of the approximate-partition bounds: `sample_count`
/// uniform points in every cell `I_j`.
pub fn check_pou_bounds(cfg: &PouConfig, d: usize, sample_count: usize, seed: u64) -> Result<PouBoundsReport> {
    if d == 0 {
        return Err(invalid("dimension must be positive"));
    }
    let n = cfg.n;
    let h = 1.0 / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut deficit, mut far, mut consistency, mut global) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut x = vec![0.0; d];
    for cell in multi_indices(n, d) {
        for _ in 0..sample_count {
            for (xi, &ji) in x.iter_mut().zip(&cell) {
                *xi = (ji as f64 - 1.0 + rng.random::<f64>()) * h;
            }
            let tables: Vec<Vec<f64>> = x.iter().map(|&xi| phi_table(cfg, xi)).collect();
            let (mut near_sum, mut far_sum, mut total) = (0.0, 0.0, 0.0);
            for other in multi_indices(n, d) {
                let value: f64 = other.iter().enumerate().map(|(i, &oi)| tables[i][oi - 1]).product();
                let dist = other.iter().zip(&cell).map(|(&a, &b)| a.abs_diff(b)).max().unwrap_or(0);
                total += value;
                if dist <= 1 {
                    near_sum += value;
                } else {
                    far_sum += value;
                    far = far.max(value);
                }
            }
            deficit = deficit.max((near_sum - 1.0f64).abs());
            consistency = consistency.max(((1.0 - near_sum) - far_sum).abs());
            global = global.max((total - 1.0f64).abs());
        }
    }
    let bound_ok = deficit <= d as f64 * cfg.eps && far <= cfg.eps;
    Ok(PouBoundsReport {
        n,
        eps: cfg.eps,
        d,
        alpha: cfg.alpha,
        sup_deficit: deficit,
        sup_far: far,
        bound_ok,
        consistency,
        global_sum_dev: global,
    })
}

/// Exponents of all monomials in `d` variables with total degree `≤ degree`,
/// graded and then lexicographic.
pub fn monomial_exponents(d: usize, degree: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for total in 0..=degree {
        let mut current = vec![0u32; d];
        push_compositions(total as u32, 0, &mut current, &mut out);
    }
    out
}

fn push_compositions(left: u32, pos: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if pos + 1 == current.len() {
        current[pos] = left;
        out.push(current.clone());
        return;
    }
    for e in (0..=left).rev() {
        current[pos] = e;
        push_compositions(left - e, pos + 1, current, out);
    }
    current[pos] = 0;
}

/// Least-squares polynomial of total degree `degree` on one patch. The
/// monomials are in local coordinates `t = (x - centre) / half_width ∈ [-1, 1]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalFit {
    pub cell: Vec<usize>,
    pub degree: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub exponents: Vec<Vec<u32>>,
    pub coefficients: Vec<f64>,
}

impl LocalFit {
    pub fn local_coords(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&xi, (&lo, &hi))| (2.0 * xi - lo - hi) / (hi - lo))
            .collect()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let t = self.local_coords(x);
        self.exponents
            .iter()
            .zip(&self.coefficients)
            .map(|(e, c)| c * monomial(&t, e))
            .sum()
    }
}

fn monomial(t: &[f64], e: &[u32]) -> f64 {
    t.iter().zip(e).map(|(ti, &ei)| ti.powi(ei as i32)).product()
}

/// `J_j ∩ (0,1)^d` as per-axis bounds.
pub fn patch_bounds(cell: &[usize], n: usize) -> (Vec<f64>, Vec<f64>) {
    let h = 1.0 / n as f64;
    let lower = cell.iter().map(|&j| ((j as f64 - 2.0) * h).max(0.0)).collect();
    let upper = cell.iter().map(|&j| ((j as f64 + 1.0) * h).min(1.0)).collect();
    (lower, upper)
}

/// Tensor grid of cell midpoints, `per_axis` points per axis.
fn midpoint_grid(lower: &[f64], upper: &[f64], per_axis: usize) -> Vec<Vec<f64>> {
    let d = lower.len();
    multi_indices(per_axis, d)
        .map(|idx| {
            idx.iter()
                .enumerate()
                .map(|(i, &k)| lower[i] + (k as f64 - 0.5) / per_axis as f64 * (upper[i] - lower[i]))
                .collect()
        })
        .collect()
}

/// Default fitting resolution: four times the coefficient count per axis.
pub fn default_grid_points(d: usize, degree: usize) -> usize {
    4 * binomial(degree + d, d)
}

/// Least-squares fit of `f` on `J_cell ∩ (0,1)^d` over a `per_axis^d` midpoint grid.
pub fn local_poly_fit(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    cell: &[usize],
    n: usize,
    degree: usize,
    per_axis: usize,
) -> Result<LocalFit> {
    let d = cell.len();
    if d == 0 || cell.iter().any(|&j| j < 1 || j > n) {
        return Err(invalid(format!("cell {cell:?} outside the {n}-grid")));
    }
    let exponents = monomial_exponents(d, degree);
    let ncoef = exponents.len();
    let (lower, upper) = patch_bounds(cell, n);
    let points = midpoint_grid(&lower, &upper, per_axis);
    if points.len() < ncoef {
        return Err(RitzError::RankDeficient {
            rank: points.len(),
            columns: ncoef,
        });
    }
    let mut fit = LocalFit {
        cell: cell.to_vec(),
        degree,
        lower,
        upper,
        exponents,
        coefficients: vec![0.0; ncoef],
    };
    let design = DMatrix::from_fn(points.len(), ncoef, |r, c| {
        monomial(&fit.local_coords(&points[r]), &fit.exponents[c])
    });
    let rhs = DVector::from_iterator(points.len(), points.iter().map(|p| f(p)));
    let svd = design.svd(true, true);
    let tol = 1e-12 * svd.singular_values.max();
    let rank = svd.rank(tol);
    if rank < ncoef {
        return Err(RitzError::RankDeficient { rank, columns: ncoef });
    }
    let coef = svd.solve(&rhs, tol).map_err(|e| invalid(e.to_string()))?;
    fit.coefficients = coef.iter().copied().collect();
    Ok(fit)
}

/// Fits on every patch of the `N`-grid, in `multi_indices` order.
pub fn fit_all_cells(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    n: usize,
    d: usize,
    degree: usize,
) -> Result<Vec<LocalFit>> {
    let per_axis = default_grid_points(d, degree);
    let cells: Vec<Vec<usize>> = multi_indices(n, d).collect();
    cells
        .par_iter()
        .map(|cell| local_poly_fit(f, cell, n, degree, per_axis))
        .collect()
}

/// Root-mean-square misfit of a fit over a finer midpoint grid on its patch.
pub fn fit_rms_error(f: &(dyn Fn(&[f64]) -> f64 + Sync), fit: &LocalFit, per_axis: usize) -> f64 {
    let pts = midpoint_grid(&fit.lower, &fit.upper, per_axis);
    let ss: f64 = pts.iter().map(|p| (f(p) - fit.eval(p)).powi(2)).sum();
    (ss / pts.len() as f64).sqrt()
}

/// `f̃(x) = Σ_j Φ_j(x) p_j(x)` with exact products.
pub struct LocalizedApproximant {
    pub cfg: PouConfig,
    pub d: usize,
    fits: Vec<LocalFit>,
}

pub fn assemble_localized_approximant(cfg: &PouConfig, d: usize, fits: Vec<LocalFit>) -> Result<LocalizedApproximant> {
    let expected: Vec<Vec<usize>> = multi_indices(cfg.n, d).collect();
    if fits.len() != expected.len() {
        return Err(invalid(format!("{} fits for {} cells", fits.len(), expected.len())));
    }
    if let Some((want, _)) = expected.iter().zip(&fits).find(|(c, f)| **c != f.cell) {
        return Err(invalid(format!("missing fit for cell {want:?}")));
    }
    Ok(LocalizedApproximant { cfg: *cfg, d, fits })
}

impl LocalizedApproximant {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let tables: Vec<Vec<f64>> = x.iter().map(|&xi| phi_table(&self.cfg, xi)).collect();
        self.fits
            .iter()
            .map(|fit| {
                let w: f64 = fit.cell.iter().enumerate().map(|(i, &j)| tables[i][j - 1]).product();
                w * fit.eval(x)
            })
            .sum()
    }

    pub fn fits(&self) -> &[LocalFit] {
        &self.fits
    }
}

/// Largest per-patch RMS misfit for each grid size, and the log-log slope of
/// that error against `N` (close to `-(degree+1)` for smooth `f`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRateReport {
    pub d: usize,
    pub s: usize,
    pub grids: Vec<usize>,
    pub max_errors: Vec<f64>,
    pub slope: f64,
}

/// `s` is the approximation order, so the fitted degree is `s - 1`.
pub fn fit_rate(f: &(dyn Fn(&[f64]) -> f64 + Sync), d: usize, s: usize, grids: &[usize]) -> Result<FitRateReport> {
    if s == 0 || grids.len() < 2 {
        return Err(invalid("need s >= 1 and at least two grid sizes"));
    }
    let mut max_errors = Vec::with_capacity(grids.len());
    for &n in grids {
        let fits = fit_all_cells(f, n, d, s - 1)?;
        let check = 2 * default_grid_points(d, s - 1) + 1;
        max_errors.push(fits.iter().map(|fit| fit_rms_error(f, fit, check)).fold(0.0, f64::max));
    }
    if max_errors.iter().any(|&e| !(e > 0.0)) {
        return Err(invalid("slope undefined for zero errors"));
    }
    let pairs: Vec<(f64, f64)> = grids.iter().map(|&n| n as f64).zip(max_errors.iter().copied()).collect();
    let slope = log_log_slope(&pairs);
    Ok(FitRateReport {
        d,
        s,
        grids: grids.to_vec(),
        max_errors,
        slope,
    })
}

/// Sup error of the assembled approximant over `points` uniform samples.
pub fn approximant_sup_error(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    approx: &LocalizedApproximant,
    points: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; approx.d];
    let mut worst = 0.0f64;
    for _ in 0..points {
        for xi in x.iter_mut() {
            *xi = rng.random::<f64>();
        }
        worst = worst.max((f(&x) - approx.eval(&x)).abs());
    }
    worst
}

pub fn write_pou_csv<W: Write>(rows: &[PouBoundsReport], w: W) -> Result<()> {
    let mut w = w;
    writeln!(w, "# schema=1")?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["N", "eps", "d", "alpha", "sup_deficit", "sup_far", "bound_ok", "consistency", "global_sum_dev"])?;
    for r in rows {
        out.write_record([
            r.n.to_string(),
            r.eps.to_string(),
            r.d.to_string(),
            r.alpha.to_string(),
            r.sup_deficit.to_string(),
            r.sup_far.to_string(),
            r.bound_ok.to_string(),
            r.consistency.to_string(),
            r.global_sum_dev.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_fits_csv<W: Write>(rows: &[FitRateReport], w: W) -> Result<()> {
    let mut w = w;
    writeln!(w, "# schema=1")?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["d", "s", "N", "max_rms_error", "slope"])?;
    for r in rows {
        for (n, e) in r.grids.iter().zip(&r.max_errors) {
            out.write_record([r.d.to_string(), r.s.to_string(), n.to_string(), e.to_string(), r.slope.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}
