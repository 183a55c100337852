//! Deep Ritz solver for `-Δu + w u = f` with Dirichlet, Neumann or Robin
//! boundary conditions.
//!
//! The trial space is a sum of `A` three-layer tanh subnetworks. The Ritz
//! energy is estimated by Monte Carlo on the domain and its boundary, and
//! minimised by projected gradient descent on a product of Frobenius balls
//! (inner layers) and an ℓ1 ball (outer layer).
//!
//! - [`network`]: forward pass and closed-form spatial/parameter gradients
//! - [`problems`]: domains, sampling, manufactured and exact reference problems
//! - [`loss`]: discrete Ritz losses, gradients, energy excess
//! - [`optimizer`]: projection, PGD, step-size guard, hyperparameter report
//! - [`metrics`]: H¹ errors, generalisation gap, C¹ bounds, rate fits
//! - [`pou`]: tanh partition of unity and localized polynomial approximation
//! - [`gradcheck`]: finite-difference checks for all of the above

pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod optimizer;
pub mod pou;
pub mod problems;

pub use error::{Result, RitzError};
pub use loss::{discrete_loss, discrete_loss_neumann, discrete_loss_robin, energy_excess, loss_gradient, LossBreakdown};
pub use metrics::{complexity_bounds, empirical_rate, mc_h1_error, ErrorReport};
pub use network::{forward, grad_params, grad_params_of_spatial, grad_x, NetDims, NetParams, ParamGrad, SubnetParams};
pub use optimizer::{init_params, project, train, ProjectionSpec, TrainConfig, TrainMode, TrainTrace};
pub use problems::{BoundaryCondition, Domain, ExactSolution, ProblemSpec, SampleSet};
