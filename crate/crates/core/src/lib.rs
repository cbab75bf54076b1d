//! Numerical methods for discrete-time stochastic optimal control:
//! dynamic programming on a state grid, a particle projected-gradient
//! method on an adaptive mesh, and a scenario-tree baseline, together with
//! a hydroelectric dam benchmark and policy simulation.

pub mod csvio;
pub mod dam;
pub mod error;
pub mod interp;
pub mod model;
pub mod particle;
pub mod projection;
pub mod sampling;
pub mod scentree;
pub mod sdp;
pub mod sim;
pub mod toy;

pub use error::{Error, Result};
pub use interp::{GridFunction, InterpConfig, InterpMethod};
pub use model::{project_box, smooth_min, smooth_min_grad, BoxSet, Dims, ProblemModel, Smoothing, StageJet};
pub use sampling::{draw_scenarios, split, Marginal, NoiseModel, Role, ScenarioSet};
pub use sdp::{FeedbackLaw, Policy};
