//! Double-obstacle variational inequalities for non-symmetric discrete forms,
//! and the Dynkin games they price.
//!
//! The crate assembles discrete semi-Dirichlet forms on one-dimensional
//! grids, solves single- and two-obstacle problems with projected sweeps,
//! a penalty scheme and the alternating separability iteration, and checks
//! the game-theoretic meaning of the solution against an exact finite-chain
//! oracle and Monte Carlo simulation.

pub mod chain;
pub mod double;
pub mod error;
pub mod forms;
pub mod linalg;
pub mod obstacle;
pub mod pipeline;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
pub use linalg::{sup_norm, sup_norm_diff, CsrMatrix};
