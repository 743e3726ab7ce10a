//! Large-horizon value expansion for dissipative optimal control problems.

pub mod dissipativity;
pub mod error;
pub mod expansion;
pub mod infinite;
pub mod io;
pub mod lq;
pub mod model;
pub mod ocp;
pub mod pmp;
pub mod static_opt;

pub use error::{Error, Result};
pub use model::ProblemSpec;
pub use ocp::{SolverConfig, Trajectory};
pub use static_opt::StaticSolution;
