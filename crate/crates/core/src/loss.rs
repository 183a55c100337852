//! Monte Carlo Ritz energies for the Robin and Neumann problems and their exact
//! parameter gradients.
//!
//! Samples are processed in fixed-size chunks; chunks may run in parallel but
//! their partial sums are always combined in index order, so results do not
//! depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RitzError};
use crate::network::{add_interior_grad, NetParams, ParamGrad, Scratch, TrialFunction};
use crate::problems::{BoundaryCondition, ProblemSpec, SampleSet};

const CHUNK: usize = 128;

/// The discrete loss split into its five sums.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// `|Ω|/n Σ ½|∇u|²`
    pub grad_energy: f64,
    /// `|Ω|/n Σ ½ w u²`
    pub mass: f64,
    /// `-|Ω|/n Σ f u`
    pub source: f64,
    /// `|∂Ω|/(βm) Σ ½ u²` (zero for Neumann)
    pub bdry_mass: f64,
    /// `-|∂Ω|/(βm) Σ g u`, or `-|∂Ω|/m Σ g u` for Neumann
    pub bdry_source: f64,
    /// Monte Carlo standard error of `total`.
    #[serde(skip)]
    pub stderr: f64,
}

impl LossBreakdown {
    pub fn terms(&self) -> [f64; 5] {
        [
            self.grad_energy,
            self.mass,
            self.source,
            self.bdry_mass,
            self.bdry_source,
        ]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain numeric record")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Robin,
    Neumann,
}

fn boundary_scale(prob: &ProblemSpec, kind: Kind) -> Result<f64> {
    match kind {
        Kind::Neumann => Ok(1.0),
        Kind::Robin => {
            if prob.beta == 0.0 {
                Err(RitzError::ZeroBeta)
            } else {
                Ok(1.0 / prob.beta)
            }
        }
    }
}

fn check_inputs(prob: &ProblemSpec, samples: &SampleSet, d: usize) -> Result<()> {
    if samples.n_interior() == 0 || samples.n_boundary() == 0 {
        return Err(RitzError::EmptySamples);
    }
    for dim in [samples.dim(), prob.domain.d] {
        if dim != d {
            return Err(RitzError::DimensionMismatch { expected: d, got: dim });
        }
    }
    Ok(())
}

fn kind_for(prob: &ProblemSpec, want: Kind) -> Result<Kind> {
    let ok = match want {
        Kind::Robin => matches!(prob.bc, BoundaryCondition::Robin | BoundaryCondition::Dirichlet),
        Kind::Neumann => prob.bc == BoundaryCondition::Neumann,
    };
    if ok {
        Ok(want)
    } else {
        Err(crate::error::invalid(format!(
            "{:?} problem passed to the {:?} loss",
            prob.bc, want
        )))
    }
}

/// Running sums of per-sample contributions plus their squares for the standard error.
#[derive(Debug, Clone, Copy, Default)]
struct Sums {
    grad_energy: f64,
    mass: f64,
    source: f64,
    bdry_mass: f64,
    bdry_source: f64,
    interior_sq: f64,
    boundary_sq: f64,
}

impl Sums {
    fn merge(mut self, o: Sums) -> Sums {
        self.grad_energy += o.grad_energy;
        self.mass += o.mass;
        self.source += o.source;
        self.bdry_mass += o.bdry_mass;
        self.bdry_source += o.bdry_source;
        self.interior_sq += o.interior_sq;
        self.boundary_sq += o.boundary_sq;
        self
    }
}

fn interior_sums<U: TrialFunction + ?Sized>(u: &U, prob: &ProblemSpec, samples: &SampleSet) -> Sums {
    let d = samples.dim();
    let partial: Vec<Sums> = samples
        .interior
        .par_chunks(CHUNK * d)
        .map(|chunk| {
            let mut s = Sums::default();
            for x in chunk.chunks_exact(d) {
                let (v, g) = u.value_and_gradient(x);
                let ge = 0.5 * g.iter().map(|t| t * t).sum::<f64>();
                let ma = 0.5 * (prob.w)(x) * v * v;
                let so = -(prob.f)(x) * v;
                s.grad_energy += ge;
                s.mass += ma;
                s.source += so;
                let tot = ge + ma + so;
                s.interior_sq += tot * tot;
            }
            s
        })
        .collect();
    partial.into_iter().fold(Sums::default(), Sums::merge)
}

fn boundary_sums<U: TrialFunction + ?Sized>(
    u: &U,
    prob: &ProblemSpec,
    samples: &SampleSet,
    kind: Kind,
) -> Sums {
    let d = samples.dim();
    let partial: Vec<Sums> = samples
        .boundary
        .par_chunks(CHUNK * d)
        .zip(samples.normals.par_chunks(CHUNK * d))
        .map(|(pts, nrm)| {
            let mut s = Sums::default();
            for (y, n) in pts.chunks_exact(d).zip(nrm.chunks_exact(d)) {
                let v = u.value(y);
                let ma = if kind == Kind::Robin { 0.5 * v * v } else { 0.0 };
                let so = -(prob.g)(y, n) * v;
                s.bdry_mass += ma;
                s.bdry_source += so;
                s.boundary_sq += (ma + so) * (ma + so);
            }
            s
        })
        .collect();
    partial.into_iter().fold(Sums::default(), Sums::merge)
}

fn sample_stderr(sum: f64, sum_sq: f64, count: usize, scale: f64) -> f64 {
    if count < 2 {
        return 0.0;
    }
    let n = count as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    scale * (var / n).sqrt()
}

fn evaluate<U: TrialFunction + ?Sized>(
    u: &U,
    prob: &ProblemSpec,
    samples: &SampleSet,
    kind: Kind,
) -> Result<LossBreakdown> {
    check_inputs(prob, samples, u.dim())?;
    let bscale = boundary_scale(prob, kind)?;
    let n = samples.n_interior();
    let m = samples.n_boundary();
    let wi = samples.interior_weight / n as f64;
    let wb = samples.boundary_weight * bscale / m as f64;

    let si = interior_sums(u, prob, samples);
    let sb = boundary_sums(u, prob, samples, kind);

    let grad_energy = wi * si.grad_energy;
    let mass = wi * si.mass;
    let source = wi * si.source;
    let bdry_mass = wb * sb.bdry_mass;
    let bdry_source = wb * sb.bdry_source;
    let se_i = sample_stderr(si.grad_energy + si.mass + si.source, si.interior_sq, n, samples.interior_weight);
    let se_b = sample_stderr(
        sb.bdry_mass + sb.bdry_source,
        sb.boundary_sq,
        m,
        samples.boundary_weight * bscale.abs(),
    );
    Ok(LossBreakdown {
        total: grad_energy + mass + source + bdry_mass + bdry_source,
        grad_energy,
        mass,
        source,
        bdry_mass,
        bdry_source,
        stderr: (se_i * se_i + se_b * se_b).sqrt(),
    })
}

/// `L̂_R`; Dirichlet problems are accepted and treated as Robin with their penalty `β`.
pub fn discrete_loss_robin(params: &NetParams, prob: &ProblemSpec, samples: &SampleSet) -> Result<LossBreakdown> {
    evaluate(params, prob, samples, kind_for(prob, Kind::Robin)?)
}

/// `L̂_N`.
pub fn discrete_loss_neumann(params: &NetParams, prob: &ProblemSpec, samples: &SampleSet) -> Result<LossBreakdown> {
    evaluate(params, prob, samples, kind_for(prob, Kind::Neumann)?)
}

fn kind_of(prob: &ProblemSpec) -> Kind {
    match prob.bc {
        BoundaryCondition::Neumann => Kind::Neumann,
        _ => Kind::Robin,
    }
}

/// The loss matching `prob.bc`, for any trial function.
pub fn ritz_loss<U: TrialFunction + ?Sized>(u: &U, prob: &ProblemSpec, samples: &SampleSet) -> Result<LossBreakdown> {
    evaluate(u, prob, samples, kind_of(prob))
}

/// The loss matching `prob.bc` evaluated at the network.
pub fn discrete_loss(params: &NetParams, prob: &ProblemSpec, samples: &SampleSet) -> Result<LossBreakdown> {
    ritz_loss(params, prob, samples)
}

/// Exact gradient of [`discrete_loss`] with respect to all parameters.
pub fn loss_gradient(params: &NetParams, prob: &ProblemSpec, samples: &SampleSet) -> Result<ParamGrad> {
    Ok(loss_and_gradient(params, prob, samples)?.1)
}

/// Loss and gradient from one pass over the samples.
pub fn loss_and_gradient(
    params: &NetParams,
    prob: &ProblemSpec,
    samples: &SampleSet,
) -> Result<(LossBreakdown, ParamGrad)> {
    let kind = kind_of(prob);
    check_inputs(prob, samples, params.dims.d)?;
    let bscale = boundary_scale(prob, kind)?;
    let d = samples.dim();
    let n = samples.n_interior();
    let m = samples.n_boundary();
    let wi = samples.interior_weight / n as f64;
    let wb = samples.boundary_weight * bscale / m as f64;

    // Per sample: Σ_j ∂_j f ∇_θ(∂_j f) + (w f - f_src) ∇_θ f in the interior,
    // (f - g) ∇_θ f (Robin) or -g ∇_θ f (Neumann) on the boundary.
    let interior: Vec<(Sums, ParamGrad)> = samples
        .interior
        .par_chunks(CHUNK * d)
        .map(|chunk| {
            let mut s = Sums::default();
            let mut g = ParamGrad::zeros_like(params);
            let mut sc = Scratch::new(params);
            for x in chunk.chunks_exact(d) {
                let v = sc.eval(params, x);
                let w = (prob.w)(x);
                let src = (prob.f)(x);
                let ge = 0.5 * sc.grad.iter().map(|t| t * t).sum::<f64>();
                s.grad_energy += ge;
                s.mass += 0.5 * w * v * v;
                s.source -= src * v;
                let tot = ge + 0.5 * w * v * v - src * v;
                s.interior_sq += tot * tot;
                add_interior_grad(&mut sc, params, x, w * v - src, &mut g);
            }
            (s, g)
        })
        .collect();

    let boundary: Vec<(Sums, ParamGrad)> = samples
        .boundary
        .par_chunks(CHUNK * d)
        .zip(samples.normals.par_chunks(CHUNK * d))
        .map(|(pts, nrm)| {
            let mut s = Sums::default();
            let mut g = ParamGrad::zeros_like(params);
            let mut sc = Scratch::new(params);
            for (y, nv) in pts.chunks_exact(d).zip(nrm.chunks_exact(d)) {
                let v = sc.eval(params, y);
                let gy = (prob.g)(y, nv);
                let (ma, coef) = match kind {
                    Kind::Robin => (0.5 * v * v, v - gy),
                    Kind::Neumann => (0.0, -gy),
                };
                s.bdry_mass += ma;
                s.bdry_source -= gy * v;
                s.boundary_sq += (ma - gy * v) * (ma - gy * v);
                sc.add_value_grad(params, y, coef, &mut g);
            }
            (s, g)
        })
        .collect();

    let mut si = Sums::default();
    let mut gi = ParamGrad::zeros_like(params);
    for (s, g) in interior {
        si = si.merge(s);
        gi.add_scaled(1.0, &g);
    }
    let mut sb = Sums::default();
    let mut gb = ParamGrad::zeros_like(params);
    for (s, g) in boundary {
        sb = sb.merge(s);
        gb.add_scaled(1.0, &g);
    }
    gi.scale(wi);
    gi.add_scaled(wb, &gb);

    let grad_energy = wi * si.grad_energy;
    let mass = wi * si.mass;
    let source = wi * si.source;
    let bdry_mass = wb * sb.bdry_mass;
    let bdry_source = wb * sb.bdry_source;
    let se_i = sample_stderr(si.grad_energy + si.mass + si.source, si.interior_sq, n, samples.interior_weight);
    let se_b = sample_stderr(
        sb.bdry_mass + sb.bdry_source,
        sb.boundary_sq,
        m,
        samples.boundary_weight * bscale.abs(),
    );
    let loss = LossBreakdown {
        total: grad_energy + mass + source + bdry_mass + bdry_source,
        grad_energy,
        mass,
        source,
        bdry_mass,
        bdry_source,
        stderr: (se_i * se_i + se_b * se_b).sqrt(),
    };
    Ok((loss, gi))
}

/// Both sides of the energy-excess identity `L(u) - L(u*) = ½‖∇v‖² + ½‖√w v‖² + (1/2β)‖v‖²_∂Ω`,
/// `v = u - u*`, estimated on one sample set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyExcess {
    /// `L̂(u) - L̂(u*)`
    pub lhs: f64,
    /// Quadratic form in `v`; nonnegative for `w > 0`, `β > 0`.
    pub rhs: f64,
    /// Sample estimate of the weak-form residual of `u*` tested against `v`.
    /// Zero in expectation; on a finite sample `lhs = rhs + cross` exactly.
    pub cross: f64,
    pub lhs_stderr: f64,
    pub rhs_stderr: f64,
}

/// Energy excess of the network over the attached exact solution.
pub fn energy_excess(params: &NetParams, prob: &ProblemSpec, eval: &SampleSet) -> Result<EnergyExcess> {
    energy_excess_of(params, prob, eval)
}

/// Generic form of [`energy_excess`].
pub fn energy_excess_of<U: TrialFunction + ?Sized>(
    u: &U,
    prob: &ProblemSpec,
    eval: &SampleSet,
) -> Result<EnergyExcess> {
    let exact = prob.exact.as_ref().ok_or(RitzError::MissingExact)?;
    check_inputs(prob, eval, u.dim())?;
    let kind = kind_of(prob);
    let bscale = boundary_scale(prob, kind)?;
    let d = eval.dim();
    let n = eval.n_interior();
    let m = eval.n_boundary();

    // Per-sample values: lhs integrand, quadratic part and cross part.
    let mut li = Vec::with_capacity(n);
    let mut qi = Vec::with_capacity(n);
    let mut ci = Vec::with_capacity(n);
    for x in eval.interior.chunks_exact(d) {
        let (un, gn) = u.value_and_gradient(x);
        let us = (exact.value)(x);
        let gs = (exact.gradient)(x);
        let w = (prob.w)(x);
        let f = (prob.f)(x);
        let v = un - us;
        let gv: Vec<f64> = gn.iter().zip(&gs).map(|(a, b)| a - b).collect();
        let lhs = 0.5 * (sq(&gn) - sq(&gs)) + 0.5 * w * (un * un - us * us) - f * v;
        let quad = 0.5 * sq(&gv) + 0.5 * w * v * v;
        let cross = dotp(&gs, &gv) + (w * us - f) * v;
        li.push(lhs);
        qi.push(quad);
        ci.push(cross);
    }
    let mut lb = Vec::with_capacity(m);
    let mut qb = Vec::with_capacity(m);
    let mut cb = Vec::with_capacity(m);
    for (y, nv) in eval.boundary.chunks_exact(d).zip(eval.normals.chunks_exact(d)) {
        let un = u.value(y);
        let us = (exact.value)(y);
        let g = (prob.g)(y, nv);
        let v = un - us;
        match kind {
            Kind::Robin => {
                lb.push(0.5 * (un * un - us * us) - g * v);
                qb.push(0.5 * v * v);
                cb.push((us - g) * v);
            }
            Kind::Neumann => {
                lb.push(-g * v);
                qb.push(0.0);
                cb.push(-g * v);
            }
        }
    }
    let vol = eval.interior_weight;
    let surf = eval.boundary_weight * bscale;
    let (lm_i, ls_i) = mean_and_stderr(&li);
    let (lm_b, ls_b) = mean_and_stderr(&lb);
    let (qm_i, qs_i) = mean_and_stderr(&qi);
    let (qm_b, qs_b) = mean_and_stderr(&qb);
    let (cm_i, _) = mean_and_stderr(&ci);
    let (cm_b, _) = mean_and_stderr(&cb);
    Ok(EnergyExcess {
        lhs: vol * lm_i + surf * lm_b,
        rhs: vol * qm_i + surf * qm_b,
        cross: vol * cm_i + surf * cm_b,
        lhs_stderr: ((vol * ls_i).powi(2) + (surf * ls_b).powi(2)).sqrt(),
        rhs_stderr: ((vol * qs_i).powi(2) + (surf * qs_b).powi(2)).sqrt(),
    })
}

fn sq(v: &[f64]) -> f64 {
    v.iter().map(|t| t * t).sum()
}

fn dotp(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetDims;
    use crate::problems::{constant_field, Domain};
    use std::sync::Arc;

    fn scalar_chain() -> NetParams {
        let mut p = NetParams::zeros(NetDims::new(1, 1, 1).unwrap(), 1).unwrap();
        p.subnets[0].w1[(0, 0)] = 1.0;
        p.subnets[0].w2[(0, 0)] = 1.0;
        p.subnets[0].w3[0] = 1.0;
        p
    }

    fn two_point_samples() -> SampleSet {
        SampleSet {
            domain: Domain::hypercube(1),
            interior: vec![0.5],
            boundary: vec![0.0],
            normals: vec![-1.0],
            interior_weight: 1.0,
            boundary_weight: 2.0,
            seed: 0,
        }
    }

    fn constant_problem(bc: BoundaryCondition, g: f64) -> ProblemSpec {
        ProblemSpec {
            bc,
            beta: 1.0,
            domain: Domain::hypercube(1),
            w: constant_field(1.0),
            f: constant_field(1.0),
            g: Arc::new(move |_, _| g),
            exact: None,
        }
    }

    #[test]
    fn zero_network_has_zero_loss() {
        let p = NetParams::zeros(NetDims::new(2, 3, 2).unwrap(), 3).unwrap();
        let s = SampleSet::draw(Domain::hypercube(2), 50, 20, 1).unwrap();
        let mut prob = constant_problem(BoundaryCondition::Robin, 1.0);
        prob.domain = Domain::hypercube(2);
        let l = discrete_loss_robin(&p, &prob, &s).unwrap();
        assert_eq!(l.total, 0.0);
        assert!(l.terms().iter().all(|&t| t == 0.0));
        prob.bc = BoundaryCondition::Neumann;
        assert_eq!(discrete_loss_neumann(&p, &prob, &s).unwrap().total, 0.0);
    }

    #[test]
    fn two_point_robin_hand_value() {
        let p = scalar_chain();
        let l = discrete_loss_robin(&p, &constant_problem(BoundaryCondition::Robin, 0.0), &two_point_samples()).unwrap();
        let v = 0.5f64.tanh().tanh();
        let g = (1.0 - v * v) * (1.0 - 0.5f64.tanh().powi(2));
        let expected = 0.5 * g * g + 0.5 * v * v - v;
        assert!((l.total - expected).abs() < 1e-15);
        assert!((l.total + 0.1339).abs() < 1e-4);
        assert_eq!(l.bdry_mass, 0.0);
        let sum: f64 = l.terms().iter().sum();
        assert_eq!(l.total, sum);
    }

    #[test]
    fn two_point_neumann_boundary_term_vanishes() {
        let p = scalar_chain();
        let l = discrete_loss_neumann(&p, &constant_problem(BoundaryCondition::Neumann, 1.0), &two_point_samples())
            .unwrap();
        assert_eq!(l.bdry_source, 0.0);
        assert_eq!(l.bdry_mass, 0.0);
    }

    #[test]
    fn negating_data_flips_linear_terms_only() {
        let mut p = scalar_chain();
        p.subnets[0].b3 = 0.3;
        let s = SampleSet::draw(Domain::hypercube(1), 40, 40, 3).unwrap();
        let prob = constant_problem(BoundaryCondition::Robin, 0.7);
        let a = discrete_loss_robin(&p, &prob, &s).unwrap();
        let b = discrete_loss_robin(&p, &prob.negated_data(), &s).unwrap();
        assert_eq!(a.grad_energy, b.grad_energy);
        assert_eq!(a.mass, b.mass);
        assert_eq!(a.bdry_mass, b.bdry_mass);
        assert_eq!(a.source, -b.source);
        assert_eq!(a.bdry_source, -b.bdry_source);
    }

    #[test]
    fn wrong_condition_and_empty_samples_are_errors() {
        let p = scalar_chain();
        let s = two_point_samples();
        assert!(discrete_loss_neumann(&p, &constant_problem(BoundaryCondition::Robin, 0.0), &s).is_err());
        let mut prob = constant_problem(BoundaryCondition::Robin, 0.0);
        prob.beta = 0.0;
        assert!(matches!(discrete_loss_robin(&p, &prob, &s), Err(RitzError::ZeroBeta)));
        let mut empty = s.clone();
        empty.interior.clear();
        assert!(matches!(
            discrete_loss_robin(&p, &constant_problem(BoundaryCondition::Robin, 0.0), &empty),
            Err(RitzError::EmptySamples)
        ));
    }

    #[test]
    fn zero_data_zero_network_has_zero_gradient() {
        let mut p = NetParams::zeros(NetDims::new(1, 2, 2).unwrap(), 2).unwrap();
        p.subnets[0].w1.fill(0.5);
        p.subnets[1].w2.fill(-0.4);
        let mut prob = constant_problem(BoundaryCondition::Robin, 0.0);
        prob.f = constant_field(0.0);
        let s = SampleSet::draw(Domain::hypercube(1), 30, 30, 2).unwrap();
        let g = loss_gradient(&p, &prob, &s).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn loss_and_gradient_agrees_with_loss() {
        let mut p = scalar_chain();
        p.subnets[0].b1[0] = 0.2;
        let s = SampleSet::draw(Domain::hypercube(1), 300, 100, 8).unwrap();
        let prob = constant_problem(BoundaryCondition::Robin, 0.5);
        let (a, _) = loss_and_gradient(&p, &prob, &s).unwrap();
        let b = discrete_loss_robin(&p, &prob, &s).unwrap();
        assert!((a.total - b.total).abs() < 1e-14);
        assert!((a.stderr - b.stderr).abs() < 1e-14);
    }

    #[test]
    fn energy_excess_of_exact_solution_is_zero() {
        let sol = crate::problems::exact_robin_1d(1.0, 1.0, 1.0).unwrap().to_exact();
        let prob = crate::problems::manufacture(
            Domain::hypercube(1),
            sol.clone(),
            constant_field(1.0),
            BoundaryCondition::Robin,
            1.0,
        )
        .unwrap();
        let s = SampleSet::draw(Domain::hypercube(1), 200, 200, 1).unwrap();
        let e = energy_excess_of(&sol, &prob, &s).unwrap();
        assert_eq!((e.lhs, e.rhs, e.cross), (0.0, 0.0, 0.0));

        let no_exact = ProblemSpec { exact: None, ..prob };
        let p = scalar_chain();
        assert!(matches!(energy_excess(&p, &no_exact, &s), Err(RitzError::MissingExact)));
    }

    #[test]
    fn loss_json_has_exact_keys() {
        let l = LossBreakdown {
            total: 1.0,
            grad_energy: 0.5,
            mass: 0.25,
            source: 0.25,
            bdry_mass: 0.0,
            bdry_source: 0.0,
            stderr: 0.1,
        };
        let v: serde_json::Value = serde_json::from_str(&l.to_json()).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["bdry_mass", "bdry_source", "grad_energy", "mass", "source", "total"]);
    }
}
