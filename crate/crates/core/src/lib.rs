//! Simulation core for parametric microwave photon generation driven by
//! counter-propagating Kerr solitons.
//!
//! The crate is organized as a pipeline of four stages:
//!
//! 1. [`lle`] — steady dissipative solitons of the driven Kerr cavity and
//!    the time-periodic index perturbation they imprint on the coupled
//!    microwave ring.
//! 2. [`modes`] — instantaneous eigenmodes of the perturbed ring, the
//!    mode-coupling series, and the resonant effective Hamiltonian obtained
//!    by Fourier selection in the rotating frame.
//! 3. [`fock`] — truncated multimode Fock space, Hamiltonian matrices, and
//!    pure/open-system propagation.
//! 4. [`entangle`] — multipartite concurrence, projective measurements, and
//!    persistency analysis.
//!
//! All numeric code is generic over the scalar type via [`float::Float`];
//! the aliases below fix `f64`, which the quoted tolerances assume.

pub mod entangle;
pub mod error;
pub mod fft;
pub mod float;
pub mod fock;
pub mod grid;
pub mod lle;
pub mod modes;

pub use error::{Error, Result};
pub use float::{fl, Float, LinalgFloat};

/// `f64` instantiations of the domain types.
pub type LleParams64 = lle::LleParams<f64>;
pub type SolitonField64 = lle::SolitonField<f64>;
pub type PhysicalParams64 = lle::PhysicalParams<f64>;
pub type ModulationProfile64 = lle::ModulationProfile<f64>;
pub type ModeBasis64 = modes::ModeBasis<f64>;
pub type CouplingSeries64 = modes::CouplingSeries<f64>;
pub type RwaHamiltonian64 = modes::RwaHamiltonian<f64>;
pub type QuantumState64 = fock::QuantumState<f64>;
pub type CollapseChannel64 = fock::CollapseChannel<f64>;
pub type ConcurrenceReport64 = entangle::ConcurrenceReport<f64>;
pub type MeasurementOutcome64 = entangle::MeasurementOutcome<f64>;
