//! Error type shared by the solver modules.

use thiserror::Error;

/// Errors surfaced by the numeric core.
#[derive(Debug, Error)]
pub enum Error {
    /// Field norm blew past the configured cap during split-step evolution.
    #[error("simulation diverged at step {step}: field power {power:.3e} exceeds cap {cap:.3e}")]
    Diverged { step: usize, power: f64, cap: f64 },

    /// Steady-state search ended on something that is not a single bright pulse.
    #[error("no steady soliton: {reason}")]
    NoSoliton { reason: String },

    /// Steady-state search ran out of its time budget.
    #[error("not converged within {max_time} normalized time units; final residual {residual:.3e}")]
    NotConverged { residual: f64, max_time: f64 },

    /// Array lengths inconsistent with the angular grid.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// Dense eigensolver did not converge.
    #[error("eigensolver failure: {0}")]
    Eigen(String),

    /// Consecutive mode snapshots overlap too little for gauge continuity.
    #[error(
        "time resolution too coarse: consecutive overlap {overlap:.3} < 0.5 for mode {mode} \
         between samples {sample} and {next_sample}; increase the number of time samples"
    )]
    TimeResolution {
        overlap: f64,
        mode: usize,
        sample: usize,
        next_sample: usize,
    },

    /// Requested Fourier order is at or beyond the Nyquist bound.
    #[error("aliased Fourier order {order}: |order| must be below K/2 = {nyquist}")]
    Aliasing { order: i64, nyquist: usize },

    /// Operator that must be Hermitian deviates beyond tolerance.
    #[error("non-Hermitian operator: relative deviation {deviation:.3e} exceeds {tolerance:.1e}")]
    NonHermitian { deviation: f64, tolerance: f64 },

    /// Computed mode frequencies do not sit on the integer harmonic ladder.
    #[error(
        "mode {mode} off the harmonic ladder: mean frequency deviates by {deviation:.3e} \
         (relative) from {harmonic} x fundamental; limit 1e-2"
    )]
    LadderMismatch {
        mode: usize,
        harmonic: u32,
        deviation: f64,
    },

    /// Fock-space dimension above the configured memory cap.
    #[error("Fock space dimension {dim} exceeds capacity cap {cap}")]
    Capacity { dim: usize, cap: usize },

    /// Adaptive integrator was forced below its minimum step size.
    #[error("integrator step underflow at t = {t:.6e}: step {step:.3e} rejected; system too stiff")]
    StepUnderflow { t: f64, step: f64 },

    /// State failed a structural precondition (norm, trace, purity, shape).
    #[error("invalid state: {0}")]
    InvalidState(String),
}

pub type Result<T> = std::result::Result<T, Error>;
