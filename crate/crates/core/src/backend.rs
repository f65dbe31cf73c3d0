//! Backend subroutine contracts for the scaling engine.
//!
//! A backend supplies two structure-specific subroutines: `trial` solves the
//! tight system on a revealed arc set for rounded demands, `error_value`
//! measures how far a tight vector is from feasibility at scale zero. The
//! witness method produces dual values certifying feasibility at a given
//! scale; the engine installs it after every successful trial.

use crate::error::SolverError;
use crate::network::{FlowNetwork, Pseudoflow, RevealedArcSet};
use crate::rational::Rat;
use crate::scaling::Potentials;

/// Potential value that may be infinite. Trial outputs carry the infinite
/// sentinel on nodes forced to the boundary of a restricted arc (price-zero
/// goods); engine potentials are always finite.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PotValue {
    Finite(Rat),
    Infinite,
}

/// Output of `trial`: a vector supported on the revealed arcs, exactly tight
/// against the returned potentials, with zero excess for the rounded demands.
#[derive(Debug, Clone)]
pub struct TightVector {
    pub flow: Pseudoflow,
    pub potentials: Vec<PotValue>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ErrValue {
    Finite(Rat),
    Infinite,
}

impl ErrValue {
    pub fn finite(&self) -> Option<&Rat> {
        match self {
            ErrValue::Finite(v) => Some(v),
            ErrValue::Infinite => None,
        }
    }
}

pub trait CostBackend {
    /// Solves the tight system on `revealed` for demands `b_hat`.
    ///
    /// Requires `revealed` linear acyclic and `b_hat` with zero discrepancy;
    /// anything else is a contract violation.
    fn trial(
        &self,
        net: &FlowNetwork,
        revealed: &RevealedArcSet,
        b_hat: &[Rat],
    ) -> Result<TightVector, SolverError>;

    /// Smallest scale at which `flow` (a tight vector on `revealed`) is
    /// feasible, or `Infinite` when no scale works.
    fn error_value(
        &self,
        net: &FlowNetwork,
        flow: &Pseudoflow,
        revealed: &RevealedArcSet,
    ) -> Result<ErrValue, SolverError>;

    /// Potentials certifying feasibility of `flow` at scale `delta`.
    ///
    /// Defined whenever `delta` is at least the error value and positive, and
    /// at `delta = 0` when feasibility at zero is attained.
    fn witness(
        &self,
        net: &FlowNetwork,
        flow: &Pseudoflow,
        revealed: &RevealedArcSet,
        delta: &Rat,
    ) -> Result<Potentials, SolverError>;
}
