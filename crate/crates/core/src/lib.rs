//! Tensor-assisted Monte Carlo for the Renyi-2 entanglement of wavefunctions
//! whose amplitudes are square roots of random-bond Ising partition functions.
//!
//! Boundary-MPS contraction supplies `log Z[x]`; a Jarzynski switching sampler
//! turns swap-operator ratios into `S_2`; the analysis module does the
//! finite-size scaling.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod bonds;
pub mod error;
pub mod jarzynski;
pub mod lattice;
pub mod observables;
pub mod oracle;
pub mod rng;
pub mod sampler;
pub mod tn;

pub use analysis::{CollapseFit, Crossing, ScalingPoint, ScalingSeries};
pub use bonds::BondConfig;
pub use error::{Error, Result};
pub use jarzynski::{EntropyEstimate, TrajectoryCheckpoint, TrajectoryConfig, WorkRecord};
pub use lattice::{
    build_lattice, AnyonPath, LatticeGeometry, Region, RegionPartition, RegionUnion,
};
pub use observables::{AnyonResult, ResultRow, TeeResult};
pub use rng::{RngSnapshot, RngStream, SimRng};
pub use sampler::{params_from_p, params_from_temperature, NishimoriParams};
pub use tn::{contract_logz, log_partition, DEFAULT_CHI};
