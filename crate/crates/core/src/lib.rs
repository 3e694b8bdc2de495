//! Time-implicit reaction-diffusion solvers built on a preconditioned
//! primal-dual hybrid gradient (PDHG) iteration, with the matching
//! convergence theory and classical baseline solvers.

pub mod baselines;
pub mod driver;
pub mod equations;
pub mod error;
pub mod field_io;
pub mod flow;
pub mod pdhg;
pub mod precond;
pub mod spectral;
pub mod system;
pub mod theory;

pub use equations::{build_model, initial_condition, ModelKind, ModelParams, RDModel};
pub use error::{Error, Result};
pub use pdhg::{solve_window, PdhgParams, SolveStats};
pub use precond::Precond;
pub use spectral::{Field, Grid2D, SpectralDiag};
pub use system::{SpaceTimeVec, WindowProblem};
