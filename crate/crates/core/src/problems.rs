//! Domains, uniform sampling of interior and boundary, manufactured problems,
//! and closed-form one-dimensional reference solutions.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, RitzError};

pub type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type VectorField = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
/// Boundary datum, evaluated at a boundary point with its outward unit normal.
pub type BoundaryField = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    Hypercube,
    Ball,
}

/// `(0,1)^d` or the ball of radius 1/2 centred at `(1/2, …, 1/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Domain {
    pub kind: DomainKind,
    pub d: usize,
}

pub const BALL_RADIUS: f64 = 0.5;

impl Domain {
    pub fn hypercube(d: usize) -> Self {
        Self {
            kind: DomainKind::Hypercube,
            d,
        }
    }

    pub fn ball(d: usize) -> Self {
        Self {
            kind: DomainKind::Ball,
            d,
        }
    }

    /// `(|Ω|, |∂Ω|)`. For d = 1 the boundary carries counting measure (two endpoints).
    pub fn measures(&self) -> (f64, f64) {
        match self.kind {
            DomainKind::Hypercube => (1.0, 2.0 * self.d as f64),
            DomainKind::Ball => {
                let vol = unit_ball_volume(self.d) * BALL_RADIUS.powi(self.d as i32);
                (vol, self.d as f64 * vol / BALL_RADIUS)
            }
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self.kind {
            DomainKind::Hypercube => x.iter().all(|&v| v > 0.0 && v < 1.0),
            DomainKind::Ball => dist_to_center(x) < BALL_RADIUS,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(invalid("domain dimension must be positive"));
        }
        Ok(())
    }
}

pub fn measures(domain: &Domain) -> (f64, f64) {
    domain.measures()
}

fn unit_ball_volume(d: usize) -> f64 {
    // V_d = 2π/d · V_{d-2}, V_0 = 1, V_1 = 2
    match d {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * PI / d as f64 * unit_ball_volume(d - 2),
    }
}

fn dist_to_center(x: &[f64]) -> f64 {
    x.iter().map(|v| (v - 0.5) * (v - 0.5)).sum::<f64>().sqrt()
}

/// Interior points `X_i` and boundary points `Y_j` (with outward normals), stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub domain: Domain,
    pub interior: Vec<f64>,
    pub boundary: Vec<f64>,
    pub normals: Vec<f64>,
    /// `|Ω|`
    pub interior_weight: f64,
    /// `|∂Ω|`
    pub boundary_weight: f64,
    pub seed: u64,
}

/// Seed for the samples of repetition `rep` at size `n`, mixed from a run seed
/// so that every `(n, rep)` pair gets an unrelated stream.
pub fn derive_seed(seed: u64, n: usize, rep: usize) -> u64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for v in [n as u64, rep as u64] {
        h = (h ^ v).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h ^= h >> 31;
    }
    h
}

/// Seed for the evaluation points of a run.
pub fn eval_seed(seed: u64) -> u64 {
    derive_seed(seed, usize::MAX, usize::MAX)
}

impl SampleSet {
    /// Interior and boundary draws use independent ChaCha streams of the same seed.
    pub fn draw(domain: Domain, n: usize, m: usize, seed: u64) -> Result<Self> {
        let interior = sample_interior(&domain, n, seed)?;
        let (boundary, normals) = sample_boundary(&domain, m, seed)?;
        let (vol, surf) = domain.measures();
        Ok(Self {
            domain,
            interior,
            boundary,
            normals,
            interior_weight: vol,
            boundary_weight: surf,
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.domain.d
    }

    pub fn n_interior(&self) -> usize {
        self.interior.len() / self.domain.d
    }

    pub fn n_boundary(&self) -> usize {
        self.boundary.len() / self.domain.d
    }

    pub fn interior_point(&self, i: usize) -> &[f64] {
        let d = self.domain.d;
        &self.interior[i * d..(i + 1) * d]
    }

    pub fn boundary_point(&self, j: usize) -> (&[f64], &[f64]) {
        let d = self.domain.d;
        (
            &self.boundary[j * d..(j + 1) * d],
            &self.normals[j * d..(j + 1) * d],
        )
    }

    pub fn interior_points(&self) -> impl Iterator<Item = &[f64]> {
        self.interior.chunks_exact(self.domain.d)
    }

    pub fn boundary_points(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.boundary
            .chunks_exact(self.domain.d)
            .zip(self.normals.chunks_exact(self.domain.d))
    }

    /// CSV with a `# schema=1` comment header, then `kind,x_1..x_d,n_1..n_d`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.domain.d;
        let kind = match self.domain.kind {
            DomainKind::Hypercube => "hypercube",
            DomainKind::Ball => "ball",
        };
        writeln!(w, "# schema=1")?;
        writeln!(w, "# domain={kind} d={d} seed={}", self.seed)?;
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["kind".to_string()];
        header.extend((1..=d).map(|i| format!("x_{i}")));
        header.extend((1..=d).map(|i| format!("n_{i}")));
        wr.write_record(&header)?;
        for p in self.interior_points() {
            let mut rec = vec!["interior".to_string()];
            rec.extend(p.iter().map(|v| v.to_string()));
            rec.extend(std::iter::repeat_n(String::new(), d));
            wr.write_record(&rec)?;
        }
        for (p, n) in self.boundary_points() {
            let mut rec = vec!["boundary".to_string()];
            rec.extend(p.iter().chain(n).map(|v| v.to_string()));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(mut r: R) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let mut domain = None;
        let mut seed = 0u64;
        let mut body_start = 0;
        for line in text.lines() {
            if let Some(comment) = line.strip_prefix('#') {
                body_start += line.len() + 1;
                let mut kind = None;
                let mut d = None;
                for kv in comment.split_whitespace() {
                    match kv.split_once('=') {
                        Some(("domain", v)) => kind = Some(v.to_string()),
                        Some(("d", v)) => d = v.parse::<usize>().ok(),
                        Some(("seed", v)) => seed = v.parse().map_err(|_| RitzError::Parse(format!("bad seed {v}")))?,
                        Some(("schema", "1")) => {}
                        Some(("schema", v)) => return Err(RitzError::Parse(format!("unsupported schema {v}"))),
                        _ => {}
                    }
                }
                if let (Some(kind), Some(d)) = (kind, d) {
                    domain = Some(match kind.as_str() {
                        "hypercube" => Domain::hypercube(d),
                        "ball" => Domain::ball(d),
                        other => return Err(RitzError::Parse(format!("unknown domain {other}"))),
                    });
                }
            } else {
                break;
            }
        }
        let domain = domain.ok_or_else(|| RitzError::Parse("missing domain header".into()))?;
        let d = domain.d;
        let mut rd = csv::Reader::from_reader(text[body_start.min(text.len())..].as_bytes());
        let mut interior = Vec::new();
        let mut boundary = Vec::new();
        let mut normals = Vec::new();
        for (row, rec) in rd.records().enumerate() {
            let rec = rec?;
            if rec.len() != 1 + 2 * d {
                return Err(RitzError::Parse(format!("row {}: expected {} fields", row + 1, 1 + 2 * d)));
            }
            let num = |k: usize| -> Result<f64> {
                rec[k]
                    .parse::<f64>()
                    .map_err(|_| RitzError::Parse(format!("row {}: bad number {:?}", row + 1, &rec[k])))
            };
            match &rec[0] {
                "interior" => {
                    for k in 1..=d {
                        interior.push(num(k)?);
                    }
                }
                "boundary" => {
                    for k in 1..=d {
                        boundary.push(num(k)?);
                        normals.push(num(k + d)?);
                    }
                }
                other => return Err(RitzError::Parse(format!("row {}: unknown kind {other}", row + 1))),
            }
        }
        let (vol, surf) = domain.measures();
        Ok(Self {
            domain,
            interior,
            boundary,
            normals,
            interior_weight: vol,
            boundary_weight: surf,
            seed,
        })
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let v: f64 = rng.random();
        if v > 0.0 {
            return v;
        }
    }
}

/// `n` i.i.d. points from `U(Ω)`, flat with stride `d`.
pub fn sample_interior(domain: &Domain, n: usize, seed: u64) -> Result<Vec<f64>> {
    domain.validate()?;
    if n == 0 {
        return Err(RitzError::EmptySamples);
    }
    let d = domain.d;
    let mut rng = stream(seed, 0);
    let mut out = Vec::with_capacity(n * d);
    match domain.kind {
        DomainKind::Hypercube => {
            for _ in 0..n * d {
                out.push(open_unit(&mut rng));
            }
        }
        DomainKind::Ball => {
            while out.len() < n * d {
                let dir = gaussian_direction(&mut rng, d);
                let radius = BALL_RADIUS * open_unit(&mut rng).powf(1.0 / d as f64);
                let p: Vec<f64> = dir.iter().map(|u| 0.5 + radius * u).collect();
                if domain.contains(&p) {
                    out.extend(p);
                }
            }
        }
    }
    Ok(out)
}

fn gaussian_direction(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-300 {
            return g.into_iter().map(|v| v / norm).collect();
        }
    }
}

/// `m` i.i.d. points from `U(∂Ω)` with their outward unit normals.
pub fn sample_boundary(domain: &Domain, m: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    domain.validate()?;
    if m == 0 {
        return Err(RitzError::EmptySamples);
    }
    let d = domain.d;
    let mut rng = stream(seed, 1);
    let mut pts = Vec::with_capacity(m * d);
    let mut nrm = Vec::with_capacity(m * d);
    for _ in 0..m {
        match domain.kind {
            DomainKind::Hypercube => {
                // all 2d faces have unit area
                let face = rng.random_range(0..2 * d);
                let axis = face / 2;
                let side = (face % 2) as f64;
                for k in 0..d {
                    if k == axis {
                        pts.push(side);
                        nrm.push(if side == 0.0 { -1.0 } else { 1.0 });
                    } else {
                        pts.push(open_unit(&mut rng));
                        nrm.push(0.0);
                    }
                }
            }
            DomainKind::Ball => {
                let dir = if d == 1 {
                    vec![if rng.random::<bool>() { 1.0 } else { -1.0 }]
                } else {
                    gaussian_direction(&mut rng, d)
                };
                pts.extend(dir.iter().map(|u| 0.5 + BALL_RADIUS * u));
                nrm.extend(dir);
            }
        }
    }
    Ok((pts, nrm))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryCondition {
    Dirichlet,
    Neumann,
    Robin,
}

/// Exact solution `u*` with its gradient and, optionally, its Laplacian.
#[derive(Clone)]
pub struct ExactSolution {
    pub dim: usize,
    pub value: ScalarField,
    pub gradient: VectorField,
    pub laplacian: Option<ScalarField>,
}

impl std::fmt::Debug for ExactSolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExactSolution")
            .field("dim", &self.dim)
            .field("laplacian", &self.laplacian.is_some())
            .finish()
    }
}

impl crate::network::TrialFunction for ExactSolution {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (self.gradient)(x)
    }
}

const FD_STEP: f64 = 1e-6;

impl ExactSolution {
    /// Symbolic Laplacian when supplied, otherwise central differences of the gradient.
    pub fn laplacian_at(&self, x: &[f64]) -> f64 {
        if let Some(lap) = &self.laplacian {
            return lap(x);
        }
        let mut xp = x.to_vec();
        let mut acc = 0.0;
        for k in 0..x.len() {
            xp[k] = x[k] + FD_STEP;
            let gp = (self.gradient)(&xp)[k];
            xp[k] = x[k] - FD_STEP;
            let gm = (self.gradient)(&xp)[k];
            xp[k] = x[k];
            acc += (gp - gm) / (2.0 * FD_STEP);
        }
        acc
    }
}

/// Coefficients and data of `-Δu + w u = f` with one of the three boundary conditions.
///
/// Dirichlet problems are solved through the Robin penalty with `g = 0`; `beta`
/// then holds the penalty parameter.
#[derive(Clone)]
pub struct ProblemSpec {
    pub bc: BoundaryCondition,
    pub beta: f64,
    pub domain: Domain,
    pub w: ScalarField,
    pub f: ScalarField,
    pub g: BoundaryField,
    pub exact: Option<ExactSolution>,
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("bc", &self.bc)
            .field("beta", &self.beta)
            .field("domain", &self.domain)
            .field("exact", &self.exact)
            .finish()
    }
}

impl ProblemSpec {
    /// Checks `min w(X_i) >= c_w > 0` over the interior samples.
    pub fn check_coercive(&self, samples: &SampleSet, c_w: f64) -> Result<()> {
        if c_w <= 0.0 {
            return Err(invalid("c_w must be positive"));
        }
        for x in samples.interior_points() {
            let w = (self.w)(x);
            if !(w >= c_w) {
                return Err(invalid(format!("w({x:?}) = {w} is below c_w = {c_w}")));
            }
        }
        Ok(())
    }

    /// Same problem with `f` and `g` negated.
    pub fn negated_data(&self) -> ProblemSpec {
        let f = self.f.clone();
        let g = self.g.clone();
        ProblemSpec {
            f: Arc::new(move |x| -f(x)),
            g: Arc::new(move |x, n| -g(x, n)),
            exact: None,
            ..self.clone()
        }
    }
}

/// Derives `f = -Δu* + w u*` and the boundary datum for the chosen condition.
pub fn manufacture(
    domain: Domain,
    exact: ExactSolution,
    w: ScalarField,
    bc: BoundaryCondition,
    beta: f64,
) -> Result<ProblemSpec> {
    domain.validate()?;
    if exact.dim != domain.d {
        return Err(RitzError::DimensionMismatch {
            expected: domain.d,
            got: exact.dim,
        });
    }
    if bc != BoundaryCondition::Neumann && beta == 0.0 {
        return Err(RitzError::ZeroBeta);
    }
    let f: ScalarField = {
        let exact = exact.clone();
        let w = w.clone();
        Arc::new(move |x| -exact.laplacian_at(x) + w(x) * (exact.value)(x))
    };
    let g: BoundaryField = match bc {
        BoundaryCondition::Dirichlet => Arc::new(|_, _| 0.0),
        BoundaryCondition::Neumann => {
            let grad = exact.gradient.clone();
            Arc::new(move |x, n| dot(&grad(x), n))
        }
        BoundaryCondition::Robin => {
            let grad = exact.gradient.clone();
            let val = exact.value.clone();
            Arc::new(move |x, n| val(x) + beta * dot(&grad(x), n))
        }
    };
    Ok(ProblemSpec {
        bc,
        beta,
        domain,
        w,
        f,
        g,
        exact: Some(exact),
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn constant_field(c: f64) -> ScalarField {
    Arc::new(move |_| c)
}

/// `u(x) = a + C1 e^{kx} + C2 e^{-kx}` on `(0,1)`, `a = f/w`, `k = √w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exact1d {
    pub particular: f64,
    pub rate: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Exact1d {
    pub fn value(&self, x: f64) -> f64 {
        self.particular + self.c1 * (self.rate * x).exp() + self.c2 * (-self.rate * x).exp()
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.rate * (self.c1 * (self.rate * x).exp() - self.c2 * (-self.rate * x).exp())
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        self.rate * self.rate * (self.value(x) - self.particular)
    }

    pub fn to_exact(self) -> ExactSolution {
        ExactSolution {
            dim: 1,
            value: Arc::new(move |x| self.value(x[0])),
            gradient: Arc::new(move |x| vec![self.derivative(x[0])]),
            laplacian: Some(Arc::new(move |x| self.second_derivative(x[0]))),
        }
    }
}

fn solve_2x2(a: [[f64; 2]; 2], rhs: [f64; 2]) -> Result<(f64, f64)> {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let scale = a.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
    if !(det.abs() > 1e-13 * scale * scale) {
        return Err(RitzError::SingularSystem { determinant: det });
    }
    Ok((
        (rhs[0] * a[1][1] - a[0][1] * rhs[1]) / det,
        (a[0][0] * rhs[1] - rhs[0] * a[1][0]) / det,
    ))
}

/// Solution of `-u'' + w u = f` on `(0,1)` with `u + β ∂u/∂n = 0` at both ends.
pub fn exact_robin_1d(fconst: f64, wconst: f64, beta: f64) -> Result<Exact1d> {
    if !(wconst > 0.0) {
        return Err(invalid("w must be positive"));
    }
    if beta == 0.0 {
        return Err(RitzError::ZeroBeta);
    }
    let a = fconst / wconst;
    let k = wconst.sqrt();
    let e = k.exp();
    // x = 0 (normal -1): a + (1 - βk) C1 + (1 + βk) C2 = 0
    // x = 1 (normal +1): a + (1 + βk) e^k C1 + (1 - βk) e^{-k} C2 = 0
    let (c1, c2) = solve_2x2(
        [[1.0 - beta * k, 1.0 + beta * k], [(1.0 + beta * k) * e, (1.0 - beta * k) / e]],
        [-a, -a],
    )?;
    Ok(Exact1d {
        particular: a,
        rate: k,
        c1,
        c2,
    })
}

/// Solution of `-u'' + w u = f` on `(0,1)` with `u(0) = u(1) = 0`.
pub fn exact_dirichlet_1d(fconst: f64, wconst: f64) -> Result<Exact1d> {
    if !(wconst > 0.0) {
        return Err(invalid("w must be positive"));
    }
    let a = fconst / wconst;
    let k = wconst.sqrt();
    let e = k.exp();
    let (c1, c2) = solve_2x2([[1.0, 1.0], [e, 1.0 / e]], [-a, -a])?;
    Ok(Exact1d {
        particular: a,
        rate: k,
        c1,
        c2,
    })
}

/// `u*(x) = Π sin(π x_i)`, vanishing on the boundary of the unit cube.
pub fn sin_product(d: usize) -> ExactSolution {
    ExactSolution {
        dim: d,
        value: Arc::new(|x| x.iter().map(|v| (PI * v).sin()).product()),
        gradient: Arc::new(|x| {
            (0..x.len())
                .map(|k| {
                    x.iter()
                        .enumerate()
                        .map(|(i, v)| if i == k { PI * (PI * v).cos() } else { (PI * v).sin() })
                        .product()
                })
                .collect()
        }),
        laplacian: Some(Arc::new(|x| {
            -(x.len() as f64) * PI * PI * x.iter().map(|v| (PI * v).sin()).product::<f64>()
        })),
    }
}

/// `u*(x) = Π cos(π x_i)`, with zero normal derivative on the unit cube.
pub fn cos_product(d: usize) -> ExactSolution {
    ExactSolution {
        dim: d,
        value: Arc::new(|x| x.iter().map(|v| (PI * v).cos()).product()),
        gradient: Arc::new(|x| {
            (0..x.len())
                .map(|k| {
                    x.iter()
                        .enumerate()
                        .map(|(i, v)| if i == k { -PI * (PI * v).sin() } else { (PI * v).cos() })
                        .product()
                })
                .collect()
        }),
        laplacian: Some(Arc::new(|x| {
            -(x.len() as f64) * PI * PI * x.iter().map(|v| (PI * v).cos()).product::<f64>()
        })),
    }
}

/// `u*(x) = Σ x_i²`; gradient supplied, Laplacian left to finite differences.
pub fn quadratic(d: usize) -> ExactSolution {
    ExactSolution {
        dim: d,
        value: Arc::new(|x| x.iter().map(|v| v * v).sum()),
        gradient: Arc::new(|x| x.iter().map(|v| 2.0 * v).collect()),
        laplacian: None,
    }
}

pub fn constant_solution(d: usize, c: f64) -> ExactSolution {
    ExactSolution {
        dim: d,
        value: Arc::new(move |_| c),
        gradient: Arc::new(move |x| vec![0.0; x.len()]),
        laplacian: Some(Arc::new(|_| 0.0)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn measures_of_standard_domains() {
        assert_eq!(Domain::hypercube(3).measures(), (1.0, 6.0));
        assert_eq!(Domain::hypercube(1).measures(), (1.0, 2.0));
        let (a, p) = Domain::ball(2).measures();
        assert!((a - PI / 4.0).abs() < 1e-15);
        assert!((p - PI).abs() < 1e-15);
        let (v, s) = Domain::ball(3).measures();
        assert!((v - 4.0 / 3.0 * PI / 8.0).abs() < 1e-15);
        assert!((s - PI).abs() < 1e-15);
        assert_eq!(Domain::ball(1).measures(), (1.0, 2.0));
    }

    #[test]
    fn interior_sampling_is_reproducible_and_inside() {
        let dom = Domain::hypercube(2);
        let a = sample_interior(&dom, 4, 11).unwrap();
        let b = sample_interior(&dom, 4, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.chunks(2).all(|p| dom.contains(p)));
        assert_ne!(a, sample_interior(&dom, 4, 12).unwrap());
        assert!(matches!(sample_interior(&dom, 0, 1), Err(RitzError::EmptySamples)));
    }

    #[test]
    fn interior_mean_is_centered() {
        let dom = Domain::hypercube(3);
        let pts = sample_interior(&dom, 100_000, 5).unwrap();
        for k in 0..3 {
            let mean = pts.iter().skip(k).step_by(3).sum::<f64>() / 100_000.0;
            assert!((mean - 0.5).abs() < 0.01, "axis {k}: {mean}");
        }
    }

    #[test]
    fn ball_samples_are_inside() {
        let dom = Domain::ball(2);
        let pts = sample_interior(&dom, 5000, 3).unwrap();
        assert!(pts.chunks(2).all(|p| dist_to_center(p) < 0.5));
    }

    #[test]
    fn one_dimensional_boundary_is_a_fair_coin() {
        let (pts, nrm) = sample_boundary(&Domain::hypercube(1), 10_000, 9).unwrap();
        let at_zero = pts.iter().filter(|&&v| v == 0.0).count() as f64 / 10_000.0;
        assert!((at_zero - 0.5).abs() < 0.02);
        for (p, n) in pts.iter().zip(&nrm) {
            assert_eq!(*n, if *p == 0.0 { -1.0 } else { 1.0 });
        }
    }

    #[test]
    fn cube_boundary_points_sit_on_one_face() {
        let (pts, nrm) = sample_boundary(&Domain::hypercube(2), 2000, 4).unwrap();
        for (p, n) in pts.chunks(2).zip(nrm.chunks(2)) {
            let on_face: Vec<usize> = (0..2).filter(|&k| p[k] == 0.0 || p[k] == 1.0).collect();
            assert_eq!(on_face.len(), 1);
            let k = on_face[0];
            let expected = if p[k] == 0.0 { -1.0 } else { 1.0 };
            assert_eq!(n[k], expected);
            assert_eq!(n[1 - k], 0.0);
        }
    }

    #[test]
    fn ball_normals_are_radial() {
        let (pts, nrm) = sample_boundary(&Domain::ball(3), 1000, 8).unwrap();
        for (p, n) in pts.chunks(3).zip(nrm.chunks(3)) {
            let r = dist_to_center(p);
            assert!((r - 0.5).abs() < 1e-12);
            for k in 0..3 {
                assert!((n[k] - (p[k] - 0.5) / r).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn manufactured_constant_neumann() {
        let prob = manufacture(
            Domain::hypercube(2),
            constant_solution(2, 1.0),
            constant_field(1.0),
            BoundaryCondition::Neumann,
            0.0,
        )
        .unwrap();
        assert_eq!((prob.f)(&[0.3, 0.4]), 1.0);
        assert_eq!((prob.g)(&[0.0, 0.4], &[-1.0, 0.0]), 0.0);
    }

    #[test]
    fn manufactured_sine_source() {
        let prob = manufacture(
            Domain::hypercube(2),
            sin_product(2),
            constant_field(1.0),
            BoundaryCondition::Dirichlet,
            0.01,
        )
        .unwrap();
        let x = [0.3, 0.7];
        let u = (PI * 0.3).sin() * (PI * 0.7).sin();
        assert!(((prob.f)(&x) - (2.0 * PI * PI + 1.0) * u).abs() < 1e-12);
        assert_eq!((prob.g)(&[0.0, 0.5], &[-1.0, 0.0]), 0.0);
    }

    #[test]
    fn manufactured_robin_quadratic_in_1d() {
        let prob = manufacture(
            Domain::hypercube(1),
            quadratic(1),
            constant_field(1.0),
            BoundaryCondition::Robin,
            1.0,
        )
        .unwrap();
        // f = x² - 2 via finite-difference Laplacian
        assert!(((prob.f)(&[0.4]) - (0.16 - 2.0)).abs() < 1e-8);
        assert!(((prob.g)(&[0.0], &[-1.0]) - 0.0).abs() < 1e-15);
        assert!(((prob.g)(&[1.0], &[1.0]) - 3.0).abs() < 1e-15);
        assert!(matches!(
            manufacture(Domain::hypercube(1), quadratic(1), constant_field(1.0), BoundaryCondition::Robin, 0.0),
            Err(RitzError::ZeroBeta)
        ));
    }

    #[test]
    fn robin_1d_constants() {
        let sol = exact_robin_1d(1.0, 1.0, 1.0).unwrap();
        assert!((sol.c1 + 0.18394).abs() < 1e-5);
        assert!((sol.c2 + 0.5).abs() < 1e-12);
        // frozen from solving the 2x2 system by hand: C1 = -1/(2e)
        assert!((sol.c1 + 0.5 / std::f64::consts::E).abs() < 1e-15);
        for i in 0..100 {
            let x = i as f64 / 99.0;
            let res = -sol.second_derivative(x) + sol.value(x) - 1.0;
            assert!(res.abs() < 1e-10);
        }
        assert!((sol.value(0.0) - sol.derivative(0.0)).abs() < 1e-14);
        assert!((sol.value(1.0) + sol.derivative(1.0)).abs() < 1e-14);

        let zero = exact_robin_1d(0.0, 1.0, 1.0).unwrap();
        assert_eq!((zero.c1, zero.c2, zero.particular), (0.0, 0.0, 0.0));
        assert!(matches!(exact_robin_1d(1.0, 1.0, 0.0), Err(RitzError::ZeroBeta)));
    }

    #[test]
    fn singular_robin_system_is_reported() {
        // det = (1-βk)² e^{-k} - (1+βk)² e^{k} vanishes for k = 1 at
        // β solving (1-β)/(1+β) = ±e; take the minus branch: β = (1+e)/(1-e).
        let e = std::f64::consts::E;
        let beta = (1.0 + e) / (1.0 - e);
        assert!(matches!(
            exact_robin_1d(1.0, 1.0, beta),
            Err(RitzError::SingularSystem { .. })
        ));
    }

    #[test]
    fn dirichlet_1d_vanishes_at_ends() {
        let sol = exact_dirichlet_1d(1.0, 1.0).unwrap();
        assert!(sol.value(0.0).abs() < 1e-15);
        assert!(sol.value(1.0).abs() < 1e-15);
        assert!((-sol.second_derivative(0.3) + sol.value(0.3) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let s = SampleSet::draw(Domain::ball(2), 7, 5, 42).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# schema=1\n"));
        let back = SampleSet::read_csv(buf.as_slice()).unwrap();
        assert_eq!(s, back);
    }
}
