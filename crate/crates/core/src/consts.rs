//! Physical constants (SI, 2019 exact values) and unit conversions.
//!
//! Internal unit system: energies in joules, times in seconds, temperatures in
//! kelvin, angular frequencies in rad/s. The only departures are volumes (µm³)
//! and particle densities (µm⁻³), which stay in micrometer units throughout.

/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Planck constant, J·s.
pub const H: f64 = 6.626_070_15e-34;
/// Boltzmann constant, J/K.
pub const K_B: f64 = 1.380_649e-23;
/// Electron volt, J.
pub const EV: f64 = 1.602_176_634e-19;

/// Energy of a photon at `f_ghz` gigahertz: `E = h·f`.
pub fn ghz_to_joule(f_ghz: f64) -> f64 {
    H * f_ghz * 1e9
}

/// Angular frequency of an `f_ghz` gigahertz tone, rad/s.
pub fn ghz_to_rad(f_ghz: f64) -> f64 {
    2.0 * std::f64::consts::PI * f_ghz * 1e9
}

/// Millikelvin to kelvin.
pub fn mk_to_kelvin(t_mk: f64) -> f64 {
    t_mk * 1e-3
}

/// Cooper-pair number density in µm⁻³ for a gap energy `delta` (J).
///
/// `n_CP = 2·ν₀·Δ` with the single-spin density of states at the Fermi level
/// fixed to `ν₀ = 1 (eV·Å³)⁻¹ = 10¹² (eV·µm³)⁻¹`.
pub fn cooper_pair_density(delta: f64) -> f64 {
    2.0 * (delta / EV) * 1e12
}
