//! Sum-of-subnetworks model `f_W(x) = Σ_s W3_s tanh(W2_s tanh(W1_s x + b1_s) + b2_s) + b3_s`
//! with closed-form spatial and parameter gradients.
//!
//! Every gradient is written out by hand (no tape). Mixed derivatives of the
//! form `∂(∂f/∂x_j)/∂θ` are needed by the Ritz loss, whose integrand contains
//! `|∇f|²`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RitzError};

/// Layer sizes shared by every subnetwork: input dimension and the two hidden widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetDims {
    pub d: usize,
    pub m1: usize,
    pub m2: usize,
}

impl NetDims {
    pub fn new(d: usize, m1: usize, m2: usize) -> Result<Self> {
        if d == 0 || m1 == 0 || m2 == 0 {
            return Err(crate::error::invalid("network dimensions must be positive"));
        }
        Ok(Self { d, m1, m2 })
    }

    /// `m1 = 5d`, `m2 = C(2d+1, d+1)`.
    pub fn default_for(d: usize) -> Self {
        Self {
            d,
            m1: 5 * d,
            m2: binomial(2 * d + 1, d + 1),
        }
    }

    /// Scalar count of one subnetwork.
    pub fn subnet_len(&self) -> usize {
        self.m1 * self.d + self.m1 + self.m2 * self.m1 + self.m2 + self.m2 + 1
    }
}

pub(crate) fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Weights and biases of one three-layer subnetwork.
///
/// `w3` is stored as a column vector but plays the role of the `1 × m2` output row.
#[derive(Debug, Clone, PartialEq)]
pub struct SubnetParams {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
    pub w3: DVector<f64>,
    pub b3: f64,
}

/// Names of the six parameter blocks, in storage order.
pub const BLOCK_NAMES: [&str; 6] = ["W1", "b1", "W2", "b2", "W3", "b3"];

impl SubnetParams {
    pub fn zeros(dims: NetDims) -> Self {
        Self {
            w1: DMatrix::zeros(dims.m1, dims.d),
            b1: DVector::zeros(dims.m1),
            w2: DMatrix::zeros(dims.m2, dims.m1),
            b2: DVector::zeros(dims.m2),
            w3: DVector::zeros(dims.m2),
            b3: 0.0,
        }
    }

    fn conforms(&self, dims: NetDims) -> bool {
        self.w1.shape() == (dims.m1, dims.d)
            && self.b1.len() == dims.m1
            && self.w2.shape() == (dims.m2, dims.m1)
            && self.b2.len() == dims.m2
            && self.w3.len() == dims.m2
    }

    /// Appends the subnet in block order W1, b1, W2, b2, W3, b3 (matrices row-major).
    fn extend_flat(&self, out: &mut Vec<f64>) {
        push_row_major(&self.w1, out);
        out.extend(self.b1.iter());
        push_row_major(&self.w2, out);
        out.extend(self.b2.iter());
        out.extend(self.w3.iter());
        out.push(self.b3);
    }

    fn read_flat(dims: NetDims, src: &[f64]) -> Self {
        let mut pos = 0;
        let mut take = |len: usize| {
            let s = &src[pos..pos + len];
            pos += len;
            s
        };
        let w1 = DMatrix::from_row_slice(dims.m1, dims.d, take(dims.m1 * dims.d));
        let b1 = DVector::from_column_slice(take(dims.m1));
        let w2 = DMatrix::from_row_slice(dims.m2, dims.m1, take(dims.m2 * dims.m1));
        let b2 = DVector::from_column_slice(take(dims.m2));
        let w3 = DVector::from_column_slice(take(dims.m2));
        let b3 = take(1)[0];
        Self {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
        }
    }

    /// Block views in storage order; matrices are column-major slices here.
    pub fn blocks(&self) -> [&[f64]; 6] {
        [
            self.w1.as_slice(),
            self.b1.as_slice(),
            self.w2.as_slice(),
            self.b2.as_slice(),
            self.w3.as_slice(),
            std::slice::from_ref(&self.b3),
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.w2.as_mut_slice(),
            self.b2.as_mut_slice(),
            self.w3.as_mut_slice(),
            std::slice::from_mut(&mut self.b3),
        ]
    }

    fn axpy(&mut self, a: f64, other: &SubnetParams) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (y, x) in dst.iter_mut().zip(src) {
                *y += a * x;
            }
        }
    }
}

fn push_row_major(m: &DMatrix<f64>, out: &mut Vec<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
}

/// Full parameter set `W = {(W_s^l, b_s^l)}` of the ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub subnets: Vec<SubnetParams>,
    pub dims: NetDims,
}

impl NetParams {
    pub fn zeros(dims: NetDims, subnets: usize) -> Result<Self> {
        if subnets == 0 {
            return Err(crate::error::invalid("at least one subnetwork is required"));
        }
        Ok(Self {
            subnets: vec![SubnetParams::zeros(dims); subnets],
            dims,
        })
    }

    pub fn new(dims: NetDims, subnets: Vec<SubnetParams>) -> Result<Self> {
        let params = Self { subnets, dims };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.subnets.is_empty() {
            return Err(crate::error::invalid("at least one subnetwork is required"));
        }
        if let Some(bad) = self.subnets.iter().position(|s| !s.conforms(self.dims)) {
            return Err(crate::error::invalid(format!(
                "subnetwork {bad} does not match dims {:?}",
                self.dims
            )));
        }
        if !self.to_flat().iter().all(|v| v.is_finite()) {
            return Err(crate::error::invalid("non-finite parameter"));
        }
        Ok(())
    }

    pub fn num_subnets(&self) -> usize {
        self.subnets.len()
    }

    pub fn len(&self) -> usize {
        self.subnets.len() * self.dims.subnet_len()
    }

    pub fn is_empty(&self) -> bool {
        self.subnets.is_empty()
    }

    /// Flat copy in block order W1, b1, W2, b2, W3, b3 per subnet, matrices row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for s in &self.subnets {
            s.extend_flat(&mut out);
        }
        out
    }

    pub fn from_flat(dims: NetDims, values: &[f64]) -> Result<Self> {
        let per = dims.subnet_len();
        if values.is_empty() || values.len() % per != 0 {
            return Err(RitzError::DimensionMismatch {
                expected: per,
                got: values.len(),
            });
        }
        let subnets = values
            .chunks(per)
            .map(|c| SubnetParams::read_flat(dims, c))
            .collect();
        Ok(Self { subnets, dims })
    }

    /// Little-endian `f64` stream in [`NetParams::to_flat`] order.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.to_flat().iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(dims: NetDims, bytes: &[u8]) -> Result<Self> {
        if bytes.len() % 8 != 0 {
            return Err(RitzError::Parse(format!(
                "parameter file length {} is not a multiple of 8",
                bytes.len()
            )));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Self::from_flat(dims, &values)
    }

    /// `self + a * dir`.
    pub fn offset(&self, a: f64, dir: &ParamGrad) -> NetParams {
        let mut out = self.clone();
        for (s, g) in out.subnets.iter_mut().zip(&dir.subnets) {
            s.axpy(a, g);
        }
        out
    }

    /// Euclidean distance over all parameters.
    pub fn distance(&self, other: &NetParams) -> f64 {
        self.subnets
            .iter()
            .zip(&other.subnets)
            .flat_map(|(a, b)| {
                a.blocks()
                    .into_iter()
                    .zip(b.blocks())
                    .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)))
                    .collect::<Vec<_>>()
            })
            .sum::<f64>()
            .sqrt()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dims.d {
            return Err(RitzError::DimensionMismatch {
                expected: self.dims.d,
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// Gradient of a scalar with respect to every parameter block; same layout as [`NetParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub subnets: Vec<SubnetParams>,
}

impl ParamGrad {
    pub fn zeros_like(params: &NetParams) -> Self {
        Self {
            subnets: vec![SubnetParams::zeros(params.dims); params.subnets.len()],
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for s in &self.subnets {
            s.extend_flat(&mut out);
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, other: &ParamGrad) -> f64 {
        let mut acc = 0.0;
        for (a, b) in self.subnets.iter().zip(&other.subnets) {
            for (x, y) in a.blocks().into_iter().zip(b.blocks()) {
                acc += x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
            }
        }
        acc
    }

    /// `self += a * other`.
    pub fn add_scaled(&mut self, a: f64, other: &ParamGrad) {
        for (s, o) in self.subnets.iter_mut().zip(&other.subnets) {
            s.axpy(a, o);
        }
    }

    pub fn scale(&mut self, a: f64) {
        for s in &mut self.subnets {
            for block in s.blocks_mut() {
                block.iter_mut().for_each(|v| *v *= a);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.subnets
            .iter()
            .all(|s| s.blocks().iter().all(|b| b.iter().all(|v| v.is_finite())))
    }
}

/// Pre- and post-activation vectors of one subnet at one point.
#[derive(Debug, Clone)]
pub struct SubnetTrace {
    pub f1org: DVector<f64>,
    pub f1: DVector<f64>,
    pub f2org: DVector<f64>,
    pub f2: DVector<f64>,
}

impl SubnetTrace {
    pub fn sigma1(&self) -> DVector<f64> {
        self.f1.map(|t| 1.0 - t * t)
    }

    pub fn sigma2(&self) -> DVector<f64> {
        self.f2.map(|t| 1.0 - t * t)
    }
}

/// Cached forward pass: per-subnet activations, the network value and its spatial gradient.
#[derive(Debug, Clone)]
pub struct EvalTrace {
    pub subnets: Vec<SubnetTrace>,
    pub value: f64,
    pub grad_x: Vec<f64>,
}

/// Runs the forward pass once and keeps every intermediate vector.
pub fn trace(params: &NetParams, x: &[f64]) -> Result<EvalTrace> {
    params.check_point(x)?;
    let mut sc = Scratch::new(params);
    let value = sc.eval(params, x);
    let NetDims { m1, m2, .. } = params.dims;
    let subnets = params
        .subnets
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let f1 = DVector::from_column_slice(sc.f1(k, m1, m2));
            let f2 = DVector::from_column_slice(sc.f2(k, m1, m2));
            let xv = DVector::from_column_slice(x);
            let f1org = &s.w1 * xv + &s.b1;
            let f2org = &s.w2 * &f1 + &s.b2;
            SubnetTrace { f1org, f1, f2org, f2 }
        })
        .collect();
    Ok(EvalTrace {
        subnets,
        value,
        grad_x: sc.grad.clone(),
    })
}

/// Reusable buffers for one point: per-subnet `f1, f2, u, v, z` and temporaries.
///
/// `u = W3 ⊙ σ'(f2org)`, `v = W2ᵀ u`, `z = σ'(f1org) ⊙ v`, so `∇_x f = Σ W1ᵀ z`.
pub(crate) struct Scratch {
    per: Vec<f64>,
    stride: usize,
    pub(crate) grad: Vec<f64>,
    c: Vec<f64>,
    r: Vec<f64>,
    p: Vec<f64>,
    e: Vec<f64>,
    t: Vec<f64>,
}

impl Scratch {
    pub(crate) fn new(params: &NetParams) -> Self {
        let NetDims { d, m1, m2 } = params.dims;
        let stride = 3 * m1 + 2 * m2;
        Scratch {
            per: vec![0.0; stride * params.subnets.len()],
            stride,
            grad: vec![0.0; d],
            c: vec![0.0; m1],
            r: vec![0.0; m1],
            p: vec![0.0; m2],
            e: vec![0.0; m2],
            t: vec![0.0; m1],
        }
    }

    // layout within a subnet block: f1 | v | z (m1 each), f2 | u (m2 each)
    fn f1(&self, k: usize, m1: usize, _m2: usize) -> &[f64] {
        &self.per[k * self.stride..k * self.stride + m1]
    }

    fn f2(&self, k: usize, m1: usize, m2: usize) -> &[f64] {
        let o = k * self.stride + 3 * m1;
        &self.per[o..o + m2]
    }

    /// Forward pass and spatial gradient; returns `f_W(x)` and fills `grad`.
    pub(crate) fn eval(&mut self, params: &NetParams, x: &[f64]) -> f64 {
        let NetDims { d, m1, m2 } = params.dims;
        self.grad.iter_mut().for_each(|g| *g = 0.0);
        let mut value = 0.0;
        for (k, s) in params.subnets.iter().enumerate() {
            let block = &mut self.per[k * self.stride..(k + 1) * self.stride];
            let (f1, rest) = block.split_at_mut(m1);
            let (v, rest) = rest.split_at_mut(m1);
            let (z, rest) = rest.split_at_mut(m1);
            let (f2, u) = rest.split_at_mut(m2);
            let w1 = s.w1.as_slice();
            let w2 = s.w2.as_slice();
            f1.copy_from_slice(s.b1.as_slice());
            for (j, &xj) in x.iter().enumerate() {
                for (fi, wij) in f1.iter_mut().zip(&w1[j * m1..(j + 1) * m1]) {
                    *fi += wij * xj;
                }
            }
            f1.iter_mut().for_each(|t| *t = t.tanh());
            f2.copy_from_slice(s.b2.as_slice());
            for (i, &fi) in f1.iter().enumerate() {
                for (fk, wki) in f2.iter_mut().zip(&w2[i * m2..(i + 1) * m2]) {
                    *fk += wki * fi;
                }
            }
            f2.iter_mut().for_each(|t| *t = t.tanh());
            value += s.b3;
            for ((uk, &fk), &w3k) in u.iter_mut().zip(f2.iter()).zip(s.w3.iter()) {
                value += w3k * fk;
                *uk = w3k * (1.0 - fk * fk);
            }
            for i in 0..m1 {
                let col = &w2[i * m2..(i + 1) * m2];
                v[i] = col.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
                z[i] = (1.0 - f1[i] * f1[i]) * v[i];
            }
            for j in 0..d {
                self.grad[j] += w1[j * m1..(j + 1) * m1].iter().zip(z.iter()).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        value
    }

    /// `out += coef * ∂f_W/∂θ` at the point last passed to [`Scratch::eval`].
    pub(crate) fn add_value_grad(&self, params: &NetParams, x: &[f64], coef: f64, out: &mut ParamGrad) {
        let NetDims { m1, m2, .. } = params.dims;
        for (k, g) in out.subnets.iter_mut().enumerate() {
            let block = &self.per[k * self.stride..(k + 1) * self.stride];
            let f1 = &block[..m1];
            let z = &block[2 * m1..3 * m1];
            let f2 = &block[3 * m1..3 * m1 + m2];
            let u = &block[3 * m1 + m2..];

            let gw3 = g.w3.as_mut_slice();
            let gb2 = g.b2.as_mut_slice();
            for kk in 0..m2 {
                gw3[kk] += coef * f2[kk];
                gb2[kk] += coef * u[kk];
            }
            g.b3 += coef;
            let gw2 = g.w2.as_mut_slice();
            for i in 0..m1 {
                let a = coef * f1[i];
                let col = &mut gw2[i * m2..(i + 1) * m2];
                for kk in 0..m2 {
                    col[kk] += a * u[kk];
                }
            }
            let gb1 = g.b1.as_mut_slice();
            for i in 0..m1 {
                gb1[i] += coef * z[i];
            }
            let gw1 = g.w1.as_mut_slice();
            for (j, &xj) in x.iter().enumerate() {
                let a = coef * xj;
                let col = &mut gw1[j * m1..(j + 1) * m1];
                for i in 0..m1 {
                    col[i] += a * z[i];
                }
            }
        }
    }

    /// `out += ∂(dir · ∇_x f_W)/∂θ` at the point last passed to [`Scratch::eval`].
    ///
    /// Linear in `dir`, so `dir = e_j` gives the mixed derivative for axis `j` and
    /// `dir = ∇_x f_W` gives `∇_θ (½|∇_x f_W|²)`.
    pub(crate) fn add_directional_grad(&mut self, params: &NetParams, x: &[f64], dir: &[f64], out: &mut ParamGrad) {
        let NetDims { m1, m2, .. } = params.dims;
        for ((k, s), g) in params.subnets.iter().enumerate().zip(out.subnets.iter_mut()) {
            let block = &self.per[k * self.stride..(k + 1) * self.stride];
            let f1 = &block[..m1];
            let v = &block[m1..2 * m1];
            let z = &block[2 * m1..3 * m1];
            let f2 = &block[3 * m1..3 * m1 + m2];
            let u = &block[3 * m1 + m2..];
            let w1 = s.w1.as_slice();
            let w2 = s.w2.as_slice();

            // c = W1 dir, r = σ'(f1org) ⊙ c
            self.c.iter_mut().for_each(|c| *c = 0.0);
            for (j, &dj) in dir.iter().enumerate() {
                for (ci, wij) in self.c.iter_mut().zip(&w1[j * m1..(j + 1) * m1]) {
                    *ci += wij * dj;
                }
            }
            for i in 0..m1 {
                self.r[i] = (1.0 - f1[i] * f1[i]) * self.c[i];
            }
            // p = W2 r, the directional derivative of f2org
            self.p.iter_mut().for_each(|p| *p = 0.0);
            for (i, &ri) in self.r.iter().enumerate() {
                for (pk, wki) in self.p.iter_mut().zip(&w2[i * m2..(i + 1) * m2]) {
                    *pk += wki * ri;
                }
            }
            // e = W3 ⊙ σ''(f2org) ⊙ p with σ'' = -2t(1 - t²)
            for kk in 0..m2 {
                let t2 = f2[kk];
                let s2 = 1.0 - t2 * t2;
                self.e[kk] = s.w3[kk] * (-2.0 * t2 * s2) * self.p[kk];
                g.w3[kk] += s2 * self.p[kk];
                g.b2[kk] += self.e[kk];
            }
            let gw2 = g.w2.as_mut_slice();
            for i in 0..m1 {
                let (ri, fi) = (self.r[i], f1[i]);
                let col = &mut gw2[i * m2..(i + 1) * m2];
                for kk in 0..m2 {
                    col[kk] += u[kk] * ri + self.e[kk] * fi;
                }
                // t = σ''(f1org) ⊙ c ⊙ v + σ'(f1org) ⊙ W2ᵀ e
                let w2te: f64 = w2[i * m2..(i + 1) * m2].iter().zip(&self.e).map(|(a, b)| a * b).sum();
                let s1 = 1.0 - fi * fi;
                self.t[i] = -2.0 * fi * s1 * self.c[i] * v[i] + s1 * w2te;
                g.b1[i] += self.t[i];
            }
            let gw1 = g.w1.as_mut_slice();
            for j in 0..x.len() {
                let (xj, dj) = (x[j], dir[j]);
                let col = &mut gw1[j * m1..(j + 1) * m1];
                for i in 0..m1 {
                    col[i] += self.t[i] * xj + z[i] * dj;
                }
            }
        }
    }
}

/// Fused interior kernel:
/// `out += coef · ∂f_W/∂θ + ∂(½|∇_x f_W|²)/∂θ` at the point last passed to [`Scratch::eval`].
pub(crate) fn add_interior_grad(sc: &mut Scratch, params: &NetParams, x: &[f64], coef: f64, out: &mut ParamGrad) {
    let NetDims { d, m1, m2 } = params.dims;
    let Scratch { per, stride, grad: dir, c, r, p, e, t } = sc;
    for ((k, s), g) in params.subnets.iter().enumerate().zip(out.subnets.iter_mut()) {
        let block = &per[k * *stride..(k + 1) * *stride];
        let (f1, rest) = block.split_at(m1);
        let (v, rest) = rest.split_at(m1);
        let (z, rest) = rest.split_at(m1);
        let (f2, u) = rest.split_at(m2);
        let w1 = s.w1.as_slice();
        let w2 = s.w2.as_slice();
        let w3 = s.w3.as_slice();

        c.fill(0.0);
        for j in 0..d {
            let dj = dir[j];
            for (ci, wij) in c.iter_mut().zip(&w1[j * m1..(j + 1) * m1]) {
                *ci += wij * dj;
            }
        }
        for i in 0..m1 {
            r[i] = (1.0 - f1[i] * f1[i]) * c[i];
        }
        p.fill(0.0);
        for i in 0..m1 {
            let ri = r[i];
            for (pk, wki) in p.iter_mut().zip(&w2[i * m2..(i + 1) * m2]) {
                *pk += wki * ri;
            }
        }
        let gw3 = g.w3.as_mut_slice();
        let gb2 = g.b2.as_mut_slice();
        for kk in 0..m2 {
            let t2 = f2[kk];
            let s2 = 1.0 - t2 * t2;
            e[kk] = w3[kk] * (-2.0 * t2 * s2) * p[kk];
            gw3[kk] += coef * t2 + s2 * p[kk];
            gb2[kk] += coef * u[kk] + e[kk];
        }
        g.b3 += coef;
        let gw2 = g.w2.as_mut_slice();
        let gb1 = g.b1.as_mut_slice();
        for i in 0..m1 {
            let fi = f1[i];
            let a = r[i] + coef * fi;
            let col = &mut gw2[i * m2..(i + 1) * m2];
            let mut w2te = 0.0;
            for kk in 0..m2 {
                col[kk] += u[kk] * a + e[kk] * fi;
                w2te += w2[i * m2 + kk] * e[kk];
            }
            let s1 = 1.0 - fi * fi;
            t[i] = -2.0 * fi * s1 * c[i] * v[i] + s1 * w2te + coef * z[i];
            gb1[i] += t[i];
        }
        let gw1 = g.w1.as_mut_slice();
        for j in 0..d {
            let (xj, dj) = (x[j], dir[j]);
            let col = &mut gw1[j * m1..(j + 1) * m1];
            for i in 0..m1 {
                col[i] += t[i] * xj + z[i] * dj;
            }
        }
    }
}

pub fn forward(params: &NetParams, x: &[f64]) -> Result<f64> {
    params.check_point(x)?;
    Ok(Scratch::new(params).eval(params, x))
}

pub fn grad_x(params: &NetParams, x: &[f64]) -> Result<Vec<f64>> {
    params.check_point(x)?;
    let mut sc = Scratch::new(params);
    sc.eval(params, x);
    Ok(sc.grad)
}

/// `∂f_W/∂θ` for every parameter block.
pub fn grad_params(params: &NetParams, x: &[f64]) -> Result<ParamGrad> {
    params.check_point(x)?;
    let mut sc = Scratch::new(params);
    sc.eval(params, x);
    let mut out = ParamGrad::zeros_like(params);
    sc.add_value_grad(params, x, 1.0, &mut out);
    Ok(out)
}

/// `∂(∂f_W/∂x_j)/∂θ` for every parameter block. `axis` is zero-based.
pub fn grad_params_of_spatial(params: &NetParams, x: &[f64], axis: usize) -> Result<ParamGrad> {
    params.check_point(x)?;
    if axis >= params.dims.d {
        return Err(crate::error::invalid(format!(
            "axis {axis} out of range for d = {}",
            params.dims.d
        )));
    }
    let mut sc = Scratch::new(params);
    sc.eval(params, x);
    let mut dir = vec![0.0; params.dims.d];
    dir[axis] = 1.0;
    let mut out = ParamGrad::zeros_like(params);
    sc.add_directional_grad(params, x, &dir, &mut out);
    Ok(out)
}

/// Anything that can be plugged into a Ritz functional: a value and a spatial gradient.
pub trait TrialFunction: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        (self.value(x), self.gradient(x))
    }
}

impl TrialFunction for NetParams {
    fn dim(&self) -> usize {
        self.dims.d
    }

    fn value(&self, x: &[f64]) -> f64 {
        Scratch::new(self).eval(self, x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.value_and_gradient(x).1
    }

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut sc = Scratch::new(self);
        let v = sc.eval(self, x);
        (v, sc.grad)
    }
}
