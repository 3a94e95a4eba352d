//! Euclidean-symmetric control toolkit.
//!
//! * [`groups`]: finite subgroups of O(2)/O(3) and their representations.
//! * [`steerable`]: steerable-kernel bases, intertwiners and orbit projection.
//! * [`eqnet`]: equivariant MLPs parameterised by intertwiner coefficients.
//! * [`lqr`]: linearisation, finite-horizon Riccati recursion and
//!   steerability checks of the resulting gains.
//! * [`envs`]: PointMass, N-ball and Reacher environments with exact group actions.
//! * [`planner`]: equivariant MPPI and tabular value iteration.
//! * [`tdmpc`]: desk-scale equivariant TD-MPC.

pub mod envs;
pub mod eqnet;
pub mod error;
pub mod groups;
pub mod linalg;
pub mod lqr;
pub mod par;
pub mod planner;
pub mod steerable;
pub mod tdmpc;

#[cfg(feature = "cli")]
pub mod cli;

pub use error::{Error, Result};
