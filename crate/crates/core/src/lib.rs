//! Noise physics of superconducting transmon qubits: generation and analysis of
//! depolarization-rate (Γ₁) time series.
//!
//! The crate models the two loss channels that dominate fixed-frequency transmons:
//!
//! * near-resonant two-level systems (TLS) whose frequencies jitter under an
//!   assembly of thermal two-level fluctuators (TLF), producing 1/f noise in Γ₁;
//! * quasiparticle (QP) generation-recombination, producing white noise in Γ₁.
//!
//! Modules follow the pipeline: [`synth`] generates ground-truth series,
//! [`spectra`] estimates and decomposes their spectra into `a/f + b`,
//! [`estimate`] fits temperature dependences back to physical parameters, and
//! [`diffusion`] solves the 1D QP transport model that links pad geometry to the
//! non-equilibrium QP density at the junction. [`physkern`] holds the closed-form
//! physics used by all of them.
//!
//! All numerical routines are generic over the scalar type through [`Real`]
//! (`f32` or `f64`). The type aliases at the crate root fix `f64`, which every
//! consumer in this workspace uses.

pub mod consts;
pub mod diffusion;
pub mod estimate;
pub mod physkern;
pub mod real;
pub mod spectra;
pub mod synth;

pub use real::Real;

pub type QubitParams = physkern::QubitParams<f64>;
pub type QpModelParams = physkern::QpModelParams<f64>;
pub type TlsEnsemble = physkern::TlsEnsemble<f64>;
pub type Tls = physkern::Tls<f64>;
pub type Tlf = physkern::Tlf<f64>;
pub type Gamma1Series = spectra::Gamma1Series<f64>;
pub type NoiseSpectrum = spectra::NoiseSpectrum<f64>;
pub type SpectralFit = spectra::SpectralFit<f64>;
pub type TlfProcess = synth::TlfProcess<f64>;
pub type QpBirthDeath = synth::QpBirthDeath<f64>;
pub type MeasurementConfig = synth::MeasurementConfig<f64>;
pub type PadGeometry = diffusion::PadGeometry<f64>;
pub type DiffusionField = diffusion::DiffusionField<f64>;
pub type FitProblem<'a> = estimate::FitProblem<'a, f64>;
pub type FitResult = estimate::FitResult<f64>;
