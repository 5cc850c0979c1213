//! Nash-bargaining-based matching markets.
//!
//! A market pairs `n` agents with `n` goods. Its feasible allocations are the
//! fractional perfect matchings (doubly stochastic matrices), and the Nash
//! bargaining point maximizes `sum_i log(v_i - c_i)` over them. Five models
//! are covered: linear utilities with and without a disagreement point,
//! separable and non-separable piecewise-linear concave utilities, and the
//! two-sided linear market where both sides' log-utilities count.
//!
//! Two engines solve them. [`ccp::ccp_solve`] is a central cutting-plane
//! method over an LP outer approximation and handles every model.
//! [`fw::fw_solve`] is Frank-Wolfe with Hungarian atoms, for the linear models.
//! Fractional solutions round to lotteries over perfect matchings with
//! [`assignment::bvn_decompose`].
//!
//! ```
//! use nash_match::{ccp, model::{LinearInstance, MarketInstance}};
//! use ndarray::array;
//!
//! let market: MarketInstance = LinearInstance::fisher(array![[2.0, 1.0], [1.0, 2.0]]).unwrap().into();
//! let out = ccp::ccp_solve(&market, &ccp::CcpConfig::default()).unwrap();
//! assert!((out.result.objective - 4f64.ln()).abs() < 1e-6);
//! ```

pub mod assignment;
pub mod ccp;
pub mod fw;
pub mod gen;
pub mod model;
mod search;
mod start;

use model::Allocation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Termination {
    GapReached,
    IterLimit,
    TimeLimit,
    Infeasible,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::GapReached => "GapReached",
            Termination::IterLimit => "IterLimit",
            Termination::TimeLimit => "TimeLimit",
            Termination::Infeasible => "Infeasible",
        }
    }
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome of either engine. For infeasible instances the allocation is the
/// best interior candidate found and the objective is `-inf`.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub allocation: Allocation,
    pub v: Vec<f64>,
    pub objective: f64,
    pub gap: f64,
    pub iterations: usize,
    /// Seconds.
    pub wall_time: f64,
    pub termination: Termination,
}
