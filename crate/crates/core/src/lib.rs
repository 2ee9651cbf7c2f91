//! Forward-backward contention resolution schemes.
//!
//! Single-unit and knapsack selection in the model where elements arrive in
//! either the forward or the backward order (each with probability 1/2), the
//! instance-optimal LP and its dual certificates, and the reduction from fair
//! rationing to contention resolution. Exact propagation routines double as
//! oracles for the Monte Carlo executors in [`sim`].

pub mod instances;
pub mod knapsack;
pub mod lp_si;
pub mod numeric;
pub mod rationing;
pub mod sim;
pub mod simplex;
pub mod single_unit;

pub use instances::{
    knapsack_hardness_instance, split_element, DemandLaw, Instance, InstanceError, KnapsackInstance, Order,
    RationingInstance, ServiceType, SingleUnitInstance, SizeLaw,
};
pub use knapsack::{KnapsackError, KnapsackPlan};
pub use lp_si::{alpha_0, LpError, SelectionPlan};
pub use rationing::RationingError;
pub use single_unit::SingleUnitError;

use thiserror::Error;

/// Union of the module errors, for callers that drive several stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    SingleUnit(#[from] SingleUnitError),
    #[error(transparent)]
    Knapsack(#[from] KnapsackError),
    #[error(transparent)]
    Rationing(#[from] RationingError),
}

impl Error {
    /// Whether the error reports an input that cannot be served (as opposed
    /// to a broken invariant inside an algorithm).
    pub fn is_infeasible_input(&self) -> bool {
        match self {
            Error::Instance(_) => true,
            Error::Lp(e) => matches!(e, LpError::Instance(_) | LpError::EvenSize { .. }),
            Error::SingleUnit(e) => matches!(e, SingleUnitError::InfeasiblePlan { .. }),
            Error::Knapsack(e) => matches!(e, KnapsackError::MassTooLarge { .. }),
            Error::Rationing(e) => e.is_infeasible_input(),
        }
    }
}
