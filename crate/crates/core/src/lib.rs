//! Wald-type and permutation tests for the multivariate coefficient of
//! variation `C = 1/√(μᵀΣ⁻¹μ)` and the standardized mean `B = 1/C` in
//! general factorial designs, plus a Monte Carlo harness.

pub mod design;
pub mod distributions;
pub mod error;
pub mod linalg;
pub mod moments;
pub mod permutation;
pub mod rng;
pub mod sim;
pub mod wald;

pub use design::{DesignSpec, Effect, Layout};
pub use error::{Error, Result};
pub use linalg::ContrastSpec;
pub use moments::{GroupEstimates, GroupSample};
pub use permutation::{PValueRule, PermutationMode, PermutationPlan};
pub use sim::{Method, RateReport, ScenarioConfig};
pub use wald::{TestResult, TestTarget};
