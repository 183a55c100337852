//! Run configuration: a TOML file with `[problem]`, `[train]`, `[output]`,
//! `[study]`, `[pou]`, `[check]` and `[bounds]` sections. Every key has a
//! default and unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use ritz::problems::{self, constant_field, BoundaryCondition, Domain, ExactSolution, ProblemSpec};
use ritz::{NetDims, TrainConfig, TrainMode};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    pub train: TrainSection,
    pub output: OutputSection,
    pub study: StudySection,
    pub pou: PouSection,
    pub check: CheckSection,
    pub bounds: BoundsSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainId {
    Hypercube,
    Ball,
}

/// Reference solutions; the source and boundary data are manufactured from them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolutionId {
    /// Closed-form 1D solution for constant `f` and `w` with the configured condition.
    Exact1d,
    SinProduct,
    CosProduct,
    Quadratic,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoefficientId {
    /// `w ≡ 1`
    One,
    /// `w = 1 + ½|x|²`
    Variable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSection {
    pub bc: BoundaryCondition,
    pub beta: f64,
    pub d: usize,
    pub domain: DomainId,
    pub solution: SolutionId,
    pub w: CoefficientId,
    /// Constant source for `solution = "exact1d"`.
    pub f: f64,
}

impl Default for ProblemSection {
    fn default() -> Self {
        ProblemSection {
            bc: BoundaryCondition::Robin,
            beta: 1.0,
            d: 1,
            domain: DomainId::Hypercube,
            solution: SolutionId::Exact1d,
            w: CoefficientId::One,
            f: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub subnets: usize,
    /// `0` selects the default width `5d`.
    pub m1: usize,
    /// `0` selects the default width `C(2d+1, d+1)`.
    pub m2: usize,
    pub n: usize,
    /// `0` means `m = n`.
    pub m: usize,
    /// Initial step; halved until the first `guard_trials` steps never raise the loss.
    pub eta: f64,
    pub iterations: usize,
    pub init_bound: f64,
    pub inner_radius: f64,
    pub outer_budget: f64,
    pub seed: u64,
    pub guard_trials: usize,
    pub mode: TrainMode,
    pub eval_points: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            subnets: 16,
            m1: 0,
            m2: 0,
            n: 2048,
            m: 0,
            eta: 1.0,
            iterations: 1000,
            init_bound: 1.0,
            inner_radius: 1.0,
            outer_budget: 10.0,
            seed: 1,
            guard_trials: 20,
            mode: TrainMode::Practical,
            eval_points: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub params: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
            params: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySection {
    pub n_list: Vec<usize>,
    pub reps: usize,
}

impl Default for StudySection {
    fn default() -> Self {
        StudySection {
            n_list: vec![256, 1024, 4096],
            reps: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PouSection {
    pub n_list: Vec<usize>,
    pub eps_list: Vec<f64>,
    pub d_list: Vec<usize>,
    pub k: usize,
    pub samples: usize,
    pub fit_orders: Vec<usize>,
    pub fit_grids: Vec<usize>,
    pub slope_tolerance: f64,
}

impl Default for PouSection {
    fn default() -> Self {
        PouSection {
            n_list: vec![4, 8],
            eps_list: vec![0.1, 0.01],
            d_list: vec![1, 2],
            k: 1,
            samples: 100,
            fit_orders: vec![2, 3],
            fit_grids: vec![4, 8, 16, 32],
            slope_tolerance: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSection {
    pub configs: usize,
    pub tolerance: f64,
    pub projection_pairs: usize,
    pub convexity_directions: usize,
    /// Test hook: skews the analytic loss gradient so the suite must fail.
    pub corrupt_gradient: bool,
}

impl Default for CheckSection {
    fn default() -> Self {
        CheckSection {
            configs: 20,
            tolerance: 1e-5,
            projection_pairs: 1000,
            convexity_directions: 1000,
            corrupt_gradient: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsSection {
    pub n: u64,
    pub d: usize,
    /// `0` selects the default widths for `d`.
    pub m1: usize,
    pub m2: usize,
    pub b_inn: f64,
    pub b_out: f64,
}

impl Default for BoundsSection {
    fn default() -> Self {
        BoundsSection {
            n: 100,
            d: 1,
            m1: 0,
            m2: 0,
            b_inn: 1.0,
            b_out: 1.0,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| anyhow::anyhow!("invalid config: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        if t.n == 0 {
            bail!("train.n must be at least 1");
        }
        if t.subnets == 0 {
            bail!("train.subnets must be at least 1");
        }
        if self.problem.d == 0 {
            bail!("problem.d must be at least 1");
        }
        if self.problem.solution == SolutionId::Exact1d && self.problem.d != 1 {
            bail!("problem.solution = \"exact1d\" needs problem.d = 1");
        }
        if self.problem.solution == SolutionId::Exact1d && self.problem.domain != DomainId::Hypercube {
            bail!("problem.solution = \"exact1d\" lives on the unit interval");
        }
        if self.problem.solution == SolutionId::Exact1d && self.problem.w != CoefficientId::One {
            bail!("problem.solution = \"exact1d\" needs constant w");
        }
        Ok(())
    }

    /// `m`, defaulting to `n`.
    pub fn boundary_count(&self) -> usize {
        if self.train.m == 0 {
            self.train.n
        } else {
            self.train.m
        }
    }

    pub fn dims(&self) -> Result<NetDims> {
        let d = self.problem.d;
        let def = NetDims::default_for(d);
        let m1 = if self.train.m1 == 0 { def.m1 } else { self.train.m1 };
        let m2 = if self.train.m2 == 0 { def.m2 } else { self.train.m2 };
        Ok(NetDims::new(d, m1, m2)?)
    }

    pub fn domain(&self) -> Domain {
        match self.problem.domain {
            DomainId::Hypercube => Domain::hypercube(self.problem.d),
            DomainId::Ball => Domain::ball(self.problem.d),
        }
    }

    pub fn exact(&self) -> Result<ExactSolution> {
        let p = &self.problem;
        Ok(match p.solution {
            SolutionId::Exact1d => match p.bc {
                BoundaryCondition::Robin => problems::exact_robin_1d(p.f, 1.0, p.beta)?.to_exact(),
                BoundaryCondition::Dirichlet => problems::exact_dirichlet_1d(p.f, 1.0)?.to_exact(),
                BoundaryCondition::Neumann => problems::constant_solution(1, p.f),
            },
            SolutionId::SinProduct => problems::sin_product(p.d),
            SolutionId::CosProduct => problems::cos_product(p.d),
            SolutionId::Quadratic => problems::quadratic(p.d),
            SolutionId::Zero => problems::constant_solution(p.d, 0.0),
        })
    }

    pub fn problem(&self) -> Result<ProblemSpec> {
        let w = match self.problem.w {
            CoefficientId::One => constant_field(1.0),
            CoefficientId::Variable => ritz::gradcheck::variable_coefficient(),
        };
        Ok(problems::manufacture(
            self.domain(),
            self.exact()?,
            w,
            self.problem.bc,
            self.problem.beta,
        )?)
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            eta: self.train.eta,
            iterations: self.train.iterations,
            subnets: self.train.subnets,
            init_bound: self.train.init_bound,
            seed,
            mode: self.train.mode,
        }
    }

    /// Replaces every seed with `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        self.train.seed = seed;
    }
}
