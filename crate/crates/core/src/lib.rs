//! Simulation and verification laboratory for Bessel processes of dimension
//! `δ = 2(1−μ) ∈ (0, 2)` together with their local time at zero.

mod clock;
pub mod engine;
pub mod error;
pub mod laws;
pub mod martlab;
pub mod pathsim;
pub mod quad;
pub mod randomtimes;
pub mod specfun;
pub mod stats;

pub use engine::Executor;
pub use error::{LabError, Result};
pub use specfun::BesselParams;
