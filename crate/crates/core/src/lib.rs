//! Desk-scale characterization of heralded single-photon sources from
//! twin-beam parametric down-conversion.
//!
//! The crate models the photon-number statistics of the source, the
//! click-detector response, and the full pulsed coincidence experiment; it
//! simulates synthetic count data, parses and gates time-tag streams, and
//! estimates every figure of merit (CAR, Klyshko efficiencies, mode number,
//! heralded g², mean photon number, photon-number parity) purely from
//! singles and coincidence counts, validated against an exact truncated-Fock
//! oracle.

pub mod analytic_oracle;
pub mod detector_model;
mod error;
pub mod estimators;
pub mod photon_statistics;
pub mod pulse_simulator;
pub mod tagstream;

pub use analytic_oracle::{ExperimentModel, PulseProbabilities, TheoryPoint};
pub use error::{Error, Result};
pub use estimators::{FigureOfMerit, MethodTag};
pub use photon_statistics::{PhotonNumberDistribution, TwinBeamState};
pub use pulse_simulator::{CountRecord, SimConfig};
pub use tagstream::{GateConfig, TimeTag};
