//! Exact minimum-cost flow solver for separable convex arc costs.
//!
//! The solver runs a scaling algorithm over a differential cost oracle and a
//! pair of backend subroutines (`trial` and `error`) that exploit the structure
//! of the cost family. Two backends are provided: convex quadratic arc costs
//! and Fisher market equilibria (linear and spending-constraint utilities) in
//! their flow formulation. All arithmetic is arbitrary-precision rational; the
//! returned optima are exact and come with dual certificates.

pub mod backend;
pub mod cost;
pub mod error;
pub mod fisher;
pub mod io;
pub mod network;
pub mod oracle;
pub mod quadratic;
pub mod rational;
pub mod scaling;

pub use backend::{CostBackend, ErrValue, PotValue, TightVector};
pub use cost::{classify, derivative, e_derivative, ArcCost, CostDescriptor, DerivativeValue, Linearity, OracleMode, Restriction};
pub use error::SolverError;
pub use fisher::{build_shmyrev, build_spending, extract_equilibrium, Equilibrium, FisherBackend, LinearMarket, SpendingMarket};
pub use network::{
    discrepancy, excess, residual_arcs, rho, uncapacitate, CapacitatedInstance, FlowNetwork,
    Pseudoflow, ReductionMap, ResArc, ResKey, RevealedArcSet,
};
pub use oracle::{brute_force_support, kkt_check, KktResult};
pub use quadratic::{error_quadratic, min_ratio_cycle, trial_quadratic, QuadraticBackend, RatioCycleInstance};
pub use rational::Rat;
pub use scaling::{
    adjust, extend, f_optimal_to_optimal, run_basic, run_enhanced, run_phase_main,
    shortest_path_additive, shortest_path_multiplicative, trial_and_error, BasicRun, Potentials,
    ScalingState, Solution, SolveOutcome, TraceEvent, TrialOutcome,
};
