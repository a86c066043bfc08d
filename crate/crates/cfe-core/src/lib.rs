//! Identification of SDE drift fields from trajectory data by evolving
//! characteristic functions in Fourier space.
//!
//! The pipeline: simulate or load trajectories of
//! dX = f(X) dt + diag(g) dL (L an alpha-stable Levy process), form
//! empirical characteristic functions on a spectral grid, evolve them with
//! the discrete propagator of [`cfe_engine`], and fit a truncated Fourier
//! drift model by minimizing the squared characteristic-function distance
//! with adjoint gradients.

pub mod cfe_engine;
pub mod drift_model;
pub mod error;
pub mod eval;
pub mod identification;
pub mod index;
pub mod simulator;
pub mod spectral_grid;
pub mod stable_noise;

pub use cfe_engine::{
    ou_closed_form, sine_kernel_reference, stability_margin, AdjointTape, DecayConvention,
    Propagator, PropagatorConfig,
};
pub use drift_model::{
    coefficients_by_quadrature, ConvCoeffs, FourierDrift, Parity, SymmetrySpec,
};
pub use error::{Error, Result};
pub use eval::{
    coeff_mae, export_phase_portrait, loss_scan, phase_portrait, sine_embedding,
    trajectory_test_error, EvalReport, PhasePortrait, TestErrorConfig,
};
pub use identification::{
    mmd_gradient, mmd_loss, train, GradientReport, IterRecord, LossConfig, LossMode,
    Parameterization, RunReport, TrainConfig,
};
pub use index::{IndexBox, MAX_DIM};
pub use simulator::{
    euler_maruyama_step, filter_box, generate_dataset, read_dataset, write_dataset, Dataset,
    DriftSpec, InitCondition, Provenance, Trajectory,
};
pub use spectral_grid::{empirical_cf, per_trajectory_cf, CFField, SpectralGrid};
pub use stable_noise::{increment_cf, sample_increments, IncrementSampler, StableSpec};
