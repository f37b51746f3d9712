//! Closed-form physics of transmon depolarization.
//!
//! Quasiparticle channel. A QP density `x_QP` (normalized to the Cooper-pair
//! density) relaxes the qubit at
//!
//! ```text
//! Γ_QP = (16 E_J/ħπ)·√(E_C/8E_J)·√(2Δ/πk_BT)·e^z·K₀(z)·x_QP,   z = ħω_q/2k_BT
//! ```
//!
//! written here as `Γ_QP = η(T)·x_QP`. The density splits into a
//! temperature-independent non-equilibrium part `x⁰_QP` and a thermal part
//! `x^th_QP = √(2πk_BT/Δ)·exp(−Δ/k_BT)`. Poisson number fluctuations of both
//! populations inside their effective volumes give the Γ₁ variance
//!
//! ```text
//! σ²_QP = η²(T)·( x⁰_QP/(n_CP·V⁰_eff) + x^th_QP/(n_CP·V^th_eff) ).
//! ```
//!
//! TLS channel. A near-resonant TLS at detuning ω_δ with linewidth γ₂ couples
//! to thermal fluctuators at frequencies ω_t,i; the resulting Γ₁ variance is
//!
//! ```text
//! σ²_TLS = A⁴·16γ₂²ω_δ²/(γ₂²+ω_δ²)⁴·[ Σᵢ gᵢ²(1 − tanh²(ħω_t,i/2k_BT)) ]².
//! ```
//!
//! Everything here is a pure function of its arguments; temperatures are in
//! kelvin, energies in joules, angular frequencies in rad/s, volumes in µm³.

mod bessel;

pub use bessel::{bessel_k0, bessel_k0_eval, bessel_k0_scaled, K0Eval};

use crate::consts;
use crate::diffusion::PadGeometry;
use crate::Real;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PhysError {
    #[error("bessel_k0 domain error: x = {0} must be > 0")]
    BesselDomain(f64),
    #[error("temperature {0} K out of domain (must be > 0)")]
    TemperatureDomain(f64),
    #[error("invalid qubit parameters: {0}")]
    InvalidQubit(String),
    #[error("invalid QP model parameters: {0}")]
    InvalidQpModel(String),
    #[error("invalid TLS ensemble: {0}")]
    InvalidEnsemble(String),
}

pub type Result<T> = std::result::Result<T, PhysError>;

/// Static parameters of one transmon.
#[derive(Debug, Clone)]
pub struct QubitParams<T> {
    /// Josephson energy, J.
    pub ej: T,
    /// Charging energy, J.
    pub ec: T,
    /// Qubit transition frequency, rad/s.
    pub omega_q: T,
    /// Superconducting gap energy, J.
    pub delta: T,
    /// Junction volume, µm³.
    pub junction_volume_um3: T,
    /// Capacitor-pad geometry, when the diffusion model is in play.
    pub pad_geometry: Option<PadGeometry<T>>,
}

impl<T: Real> QubitParams<T> {
    /// Build from the frequency-unit convention used in configs: `E_J/h` and
    /// `E_C/h` in GHz, qubit frequency `ω_q/2π` in GHz, gap `Δ/2π` in GHz
    /// (an energy quoted in frequency units, `Δ = h·f_Δ`).
    pub fn from_ghz(
        ej_ghz: f64,
        ec_ghz: f64,
        fq_ghz: f64,
        delta_ghz: f64,
        junction_volume_um3: f64,
    ) -> Result<Self> {
        let q = Self {
            ej: T::c(consts::ghz_to_joule(ej_ghz)),
            ec: T::c(consts::ghz_to_joule(ec_ghz)),
            omega_q: T::c(consts::ghz_to_rad(fq_ghz)),
            delta: T::c(consts::ghz_to_joule(delta_ghz)),
            junction_volume_um3: T::c(junction_volume_um3),
            pad_geometry: None,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn with_geometry(mut self, geometry: PadGeometry<T>) -> Self {
        self.pad_geometry = Some(geometry);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PhysError::InvalidQubit(m.to_string()));
        if !(self.ej > T::zero()) || !(self.ec > T::zero()) {
            return bad("E_J and E_C must be positive");
        }
        if !(self.ej / self.ec > T::one()) {
            return bad("transmon regime requires E_J/E_C > 1");
        }
        if !(self.omega_q > T::zero()) {
            return bad("omega_q must be positive");
        }
        if !(self.delta > T::c(0.5) * T::c(consts::HBAR) * self.omega_q) {
            return bad("gap must exceed hbar*omega_q/2");
        }
        if !(self.junction_volume_um3 > T::zero()) {
            return bad("junction volume must be positive");
        }
        Ok(())
    }
}

/// Parameters of the two-population QP fluctuation model.
#[derive(Debug, Clone)]
pub struct QpModelParams<T> {
    /// Non-equilibrium normalized QP density.
    pub x_qp0: T,
    /// Gap energy, J.
    pub delta: T,
    /// Effective volume felt by non-equilibrium QPs, µm³.
    pub v_eff0: T,
    /// Effective volume felt by thermal QPs, µm³.
    pub v_eff_th: T,
    /// Cooper-pair number density, µm⁻³. Derived from `delta`, never free.
    pub n_cp: T,
}

impl<T: Real> QpModelParams<T> {
    pub fn new(x_qp0: T, delta: T, v_eff0: T, v_eff_th: T) -> Result<Self> {
        let bad = |m: &str| Err(PhysError::InvalidQpModel(m.to_string()));
        if !(x_qp0 >= T::zero()) {
            return bad("x_qp0 must be >= 0");
        }
        if !(delta > T::zero()) {
            return bad("delta must be positive");
        }
        if !(v_eff0 > T::zero()) || !(v_eff_th > T::zero()) {
            return bad("effective volumes must be positive");
        }
        Ok(Self {
            x_qp0,
            delta,
            v_eff0,
            v_eff_th,
            n_cp: T::c(consts::cooper_pair_density(delta.f64())),
        })
    }
}

/// Temperature law of the TLS dephasing linewidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gamma2Law<T> {
    /// Fixed linewidth, rad/s.
    Constant(T),
    /// `γ₂ = slope·T`, slope in rad/s per kelvin.
    LinearInT(T),
}

impl<T: Real> Gamma2Law<T> {
    pub fn at(&self, t: T) -> T {
        match *self {
            Gamma2Law::Constant(g) => g,
            Gamma2Law::LinearInT(c) => c * t,
        }
    }
}

/// One thermal two-level fluctuator coupled to a TLS.
#[derive(Debug, Clone)]
pub struct Tlf<T> {
    /// Frequency shift imparted to the TLS when the fluctuator is up, rad/s.
    pub g: T,
    /// Fluctuator level splitting, rad/s.
    pub omega_t: T,
    /// Total switching rate (up-rate + down-rate), Hz.
    pub switch_rate: T,
}

/// One near-resonant TLS with its fluctuator bath.
#[derive(Debug, Clone)]
pub struct Tls<T> {
    /// Coupling/matrix-element constant `A`; `A²` carries rate units.
    pub amplitude_a: T,
    pub gamma2: Gamma2Law<T>,
    /// Mean qubit-TLS detuning, rad/s.
    pub omega_delta: T,
    pub tlfs: Vec<Tlf<T>>,
}

#[derive(Debug, Clone)]
pub struct TlsEnsemble<T> {
    pub tls: Vec<Tls<T>>,
}

impl<T: Real> TlsEnsemble<T> {
    pub fn new(tls: Vec<Tls<T>>) -> Result<Self> {
        let ens = Self { tls };
        ens.validate()?;
        Ok(ens)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PhysError::InvalidEnsemble(m.to_string()));
        for t in &self.tls {
            match t.gamma2 {
                Gamma2Law::Constant(g) if !(g > T::zero()) => {
                    return bad("constant gamma2 must be positive")
                }
                Gamma2Law::LinearInT(c) if !(c > T::zero()) => {
                    return bad("gamma2 slope must be positive")
                }
                _ => {}
            }
            for f in &t.tlfs {
                if !(f.g >= T::zero()) {
                    return bad("TLF coupling must be >= 0");
                }
                if !(f.omega_t > T::zero()) {
                    return bad("TLF frequency must be positive");
                }
                if !(f.switch_rate > T::zero()) {
                    return bad("TLF switch rate must be positive");
                }
            }
        }
        Ok(())
    }
}

fn check_temperature<T: Real>(t: T) -> Result<()> {
    if t > T::zero() {
        Ok(())
    } else {
        Err(PhysError::TemperatureDomain(t.f64()))
    }
}

/// Thermal normalized QP density `√(2πk_BT/Δ)·exp(−Δ/k_BT)`; zero at `t = 0`.
pub fn x_qp_thermal<T: Real>(t: T, delta: T) -> Result<T> {
    if !(t >= T::zero()) {
        return Err(PhysError::TemperatureDomain(t.f64()));
    }
    if !(delta > T::zero()) {
        return Err(PhysError::InvalidQpModel("delta must be positive".into()));
    }
    if t == T::zero() {
        return Ok(T::zero());
    }
    let kt = T::c(consts::K_B) * t;
    let two_pi = T::c(2.0 * std::f64::consts::PI);
    Ok((two_pi * kt / delta).sqrt() * (-delta / kt).exp())
}

/// Total normalized QP density `x⁰_QP + x^th_QP(T)`.
pub fn x_qp_total<T: Real>(t: T, p: &QpModelParams<T>) -> Result<T> {
    Ok(p.x_qp0 + x_qp_thermal(t, p.delta)?)
}

/// Conversion factor η(T) from `x_QP` to depolarization rate, s⁻¹.
///
/// Evaluated through the scaled Bessel function `e^z·K₀(z)` so that the
/// low-temperature limit (`z → ∞`) stays finite instead of overflowing.
pub fn eta<T: Real>(t: T, q: &QubitParams<T>) -> Result<T> {
    check_temperature(t)?;
    let hbar = T::c(consts::HBAR);
    let kt = T::c(consts::K_B) * t;
    let pi = T::c(std::f64::consts::PI);
    let z = hbar * q.omega_q / (T::c(2.0) * kt);
    let prefactor = T::c(16.0) * q.ej / (hbar * pi) * (q.ec / (T::c(8.0) * q.ej)).sqrt();
    let thermal = (T::c(2.0) * q.delta / (pi * kt)).sqrt();
    Ok(prefactor * thermal * bessel_k0_scaled(z)?)
}

/// Depolarization rate from a QP density: `Γ_QP = η(T)·x_QP`, s⁻¹.
pub fn gamma_qp<T: Real>(q: &QubitParams<T>, t: T, x_qp: T) -> Result<T> {
    if !(x_qp >= T::zero()) {
        return Err(PhysError::InvalidQpModel("x_qp must be >= 0".into()));
    }
    Ok(eta(t, q)? * x_qp)
}

/// Mean Γ₁ model: temperature-independent TLS floor plus the QP channel.
pub fn mean_gamma1<T: Real>(
    t: T,
    q: &QubitParams<T>,
    gamma_tls: T,
    p: &QpModelParams<T>,
) -> Result<T> {
    if !(gamma_tls >= T::zero()) {
        return Err(PhysError::InvalidQpModel("gamma_tls must be >= 0".into()));
    }
    Ok(gamma_tls + gamma_qp(q, t, x_qp_total(t, p)?)?)
}

/// QP-induced Γ₁ variance, s⁻².
pub fn sigma2_qp<T: Real>(t: T, q: &QubitParams<T>, p: &QpModelParams<T>) -> Result<T> {
    let e = eta(t, q)?;
    let xth = x_qp_thermal(t, p.delta)?;
    Ok(e * e * (p.x_qp0 / (p.n_cp * p.v_eff0) + xth / (p.n_cp * p.v_eff_th)))
}

/// TLS-induced Γ₁ variance for one TLS, s⁻² (or squared config rate units).
pub fn sigma2_tls_one<T: Real>(t: T, tls: &Tls<T>) -> Result<T> {
    check_temperature(t)?;
    let g2 = tls.gamma2.at(t);
    let wd = tls.omega_delta;
    let a2 = tls.amplitude_a * tls.amplitude_a;
    let denom = g2 * g2 + wd * wd;
    let lorentz = T::c(16.0) * g2 * g2 * wd * wd / (denom * denom * denom * denom);
    let half_beta = T::c(consts::HBAR) / (T::c(2.0) * T::c(consts::K_B) * t);
    let mut bracket = T::zero();
    for f in &tls.tlfs {
        let th = (f.omega_t * half_beta).tanh();
        bracket += f.g * f.g * (T::one() - th * th);
    }
    Ok(a2 * a2 * lorentz * bracket * bracket)
}

/// TLS-induced Γ₁ variance summed over the ensemble.
pub fn sigma2_tls<T: Real>(t: T, ens: &TlsEnsemble<T>) -> Result<T> {
    let mut s = T::zero();
    for tls in &ens.tls {
        s += sigma2_tls_one(t, tls)?;
    }
    Ok(s)
}

/// Spectral density of a single thermalized TLS at angular frequency `omega`,
/// in 1/(rad/s):
///
/// ```text
/// S(ω) = (1+⟨σz⟩)/2 · 2γ₂/((ω−ω₀)²+γ₂²) + (1−⟨σz⟩)/2 · 2γ₂/((ω+ω₀)²+γ₂²)
/// ```
///
/// with the equilibrium polarization `⟨σz⟩ = tanh(ħω₀/2k_BT)`. The sum
/// `S(ω₀) + S(−ω₀)`, which governs depolarization of a near-resonant qubit,
/// is temperature-independent.
pub fn tls_single_psd<T: Real>(omega: T, omega0: T, gamma2: T, t: T) -> Result<T> {
    check_temperature(t)?;
    if !(gamma2 > T::zero()) || !(omega0 > T::zero()) {
        return Err(PhysError::InvalidEnsemble(
            "gamma2 and omega0 must be positive".into(),
        ));
    }
    let sz = (T::c(consts::HBAR) * omega0 / (T::c(2.0) * T::c(consts::K_B) * t)).tanh();
    let half = T::c(0.5);
    let up = omega - omega0;
    let dn = omega + omega0;
    let two_g = T::c(2.0) * gamma2;
    Ok(half * (T::one() + sz) * two_g / (up * up + gamma2 * gamma2)
        + half * (T::one() - sz) * two_g / (dn * dn + gamma2 * gamma2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    fn qubit(delta_ghz: f64) -> QubitParams<f64> {
        QubitParams::from_ghz(12.0, 0.2, 4.0, delta_ghz, 0.013).unwrap()
    }

    fn model_a() -> QpModelParams<f64> {
        QpModelParams::new(1.4e-7, consts::ghz_to_joule(38.0), 0.062, 0.025).unwrap()
    }

    fn model_b() -> QpModelParams<f64> {
        QpModelParams::new(5.5e-8, consts::ghz_to_joule(38.2), 0.290, 0.039).unwrap()
    }

    fn model_c() -> QpModelParams<f64> {
        QpModelParams::new(5.5e-8, consts::ghz_to_joule(39.6), 0.807, 0.037).unwrap()
    }

    #[test]
    fn thermal_density_reference_values() {
        let d382 = consts::ghz_to_joule(38.2);
        assert!(rel(x_qp_thermal(0.153, d382).unwrap(), 4.5281105657081882e-6) < 1e-12);
        assert!(rel(x_qp_thermal(0.05, d382).unwrap(), 4.9319780056917856e-17) < 1e-12);
        let d380 = consts::ghz_to_joule(38.0);
        assert!(rel(x_qp_thermal(0.007, d380).unwrap(), 1.107318368e-114) < 1e-8);
        assert_eq!(x_qp_thermal(0.0, d382).unwrap(), 0.0);
    }

    #[test]
    fn thermal_density_at_kt_equal_delta_is_sqrt_2pi_over_e() {
        let delta = consts::ghz_to_joule(38.2);
        let t_star = delta / consts::K_B;
        let x = x_qp_thermal(t_star, delta).unwrap();
        assert!(rel(x, 0.92213700889578911688) < 1e-14);
    }

    #[test]
    fn thermal_crossover_temperature() {
        // x_th crosses the residual density 5.5e-8 near 112.9 mK.
        let d = consts::ghz_to_joule(38.2);
        let x = x_qp_thermal(0.11288096259965595, d).unwrap();
        assert!(rel(x, 5.5e-8) < 1e-9);
    }

    #[test]
    fn eta_reference_values() {
        assert!(rel(eta(0.05, &qubit(38.2)).unwrap(), 72606925202.129979) < 1e-12);
        assert!(rel(eta(0.007, &qubit(38.0)).unwrap(), 75729110135.183705) < 1e-12);
    }

    #[test]
    fn eta_approaches_its_zero_temperature_limit() {
        let q = qubit(38.2);
        assert!(rel(eta(1e-5, &q).unwrap(), 76598741482.1) < 1e-9);
        // Analytic z→∞ limit: K₀(z)e^z → √(π/2z) turns the thermal factor
        // into √(2Δ/ħω_q).
        let hbar = consts::HBAR;
        let limit = 16.0 * q.ej / (hbar * std::f64::consts::PI)
            * (q.ec / (8.0 * q.ej)).sqrt()
            * (2.0 * q.delta / (hbar * q.omega_q)).sqrt();
        assert!(rel(limit, 76599738973.4) < 1e-9);
        assert!(rel(eta(1e-5, &q).unwrap(), limit) < 5e-5);
    }

    #[test]
    fn gamma_qp_and_mean_gamma1_reference_values() {
        let x_tot = x_qp_total(0.153, &model_b()).unwrap();
        assert!(rel(x_tot, 4.5831105657081882e-6) < 1e-12);
        let g = gamma_qp(&qubit(38.2), 0.153, x_tot).unwrap();
        assert!(rel(g, 308675.99272041336) < 1e-12);
        let m = mean_gamma1(0.007, &qubit(38.0), 1.2e4, &model_a()).unwrap();
        assert!(rel(m, 22602.075418925719) < 1e-12);
    }

    #[test]
    fn cooper_pair_density_and_mean_occupations() {
        let b = model_b();
        assert!(rel(b.n_cp, 315965012.0449828) < 1e-12);
        assert!(rel(b.x_qp0 * b.n_cp * b.v_eff0, 5.03964194212) < 1e-10);
        let a = model_a();
        assert!(rel(a.x_qp0 * a.n_cp * a.v_eff0, 2.72821726631) < 1e-10);
        let c = model_c();
        assert!(rel(c.x_qp0 * c.n_cp * c.v_eff0, 14.5380795697) < 1e-10);
        let xth = x_qp_thermal(0.153, b.delta).unwrap();
        assert!(rel(xth * b.n_cp * b.v_eff_th, 55.798255868) < 1e-10);
    }

    #[test]
    fn sigma2_qp_reference_value() {
        let s = sigma2_qp(0.05, &qubit(38.2), &model_b()).unwrap();
        assert!(rel(s, 3164330.1629559172) < 1e-12);
    }

    fn table_tls(amplitude: f64, slope_inv_mk: f64, omega_delta_mhz: f64) -> Tls<f64> {
        let mhz = consts::ghz_to_rad(1e-3);
        let tlfs = [100.0, 200.0, 300.0]
            .iter()
            .map(|&f| Tlf {
                g: 10.0 * mhz,
                omega_t: f * mhz,
                switch_rate: 1e-3,
            })
            .collect();
        Tls {
            amplitude_a: amplitude,
            gamma2: Gamma2Law::LinearInT(mhz / slope_inv_mk),
            omega_delta: omega_delta_mhz * mhz,
            tlfs,
        }
    }

    #[test]
    fn sigma2_tls_reference_values() {
        let tls1 = table_tls(2.1, 0.040, 2.0);
        let tls2 = table_tls(1.0, 0.320, 1.0);
        assert!(rel(sigma2_tls_one(0.047, &tls1).unwrap(), 180111.83957939408786) < 1e-12);
        assert!(rel(sigma2_tls_one(0.047, &tls2).unwrap(), 27840.667450887541106) < 1e-12);
        assert!(rel(sigma2_tls_one(0.007, &tls1).unwrap(), 5429.7873190653097927) < 1e-12);
        let ens = TlsEnsemble::new(vec![tls1, tls2]).unwrap();
        assert!(rel(sigma2_tls(0.121, &ens).unwrap(), 154344.06316119062178) < 1e-12);
        assert!(rel(sigma2_tls(0.153, &ens).unwrap(), 157718.15599926169564) < 1e-12);
    }

    #[test]
    fn tls_psd_reference_and_temperature_independence() {
        let mhz = consts::ghz_to_rad(1e-3);
        let (w0, g2) = (3.0 * mhz, 1.0 * mhz);
        let s_up = tls_single_psd(w0, w0, g2, 0.020).unwrap();
        assert!(rel(s_up, 1.6401381017264042058e-7) < 1e-12);
        let sum20 = s_up + tls_single_psd(-w0, w0, g2, 0.020).unwrap();
        assert!(rel(sum20, 3.2691285608064987888e-7) < 1e-12);
        let sum100 = tls_single_psd(w0, w0, g2, 0.100).unwrap()
            + tls_single_psd(-w0, w0, g2, 0.100).unwrap();
        assert!(rel(sum20, sum100) < 1e-13);
    }

    #[test]
    fn domain_violations_are_rejected()  {
        assert!(matches!(
            eta(0.0, &qubit(38.2)),
            Err(PhysError::TemperatureDomain(_))
        ));
        assert!(x_qp_thermal(-0.01, consts::ghz_to_joule(38.2)).is_err());
        // Transmon regime and gap floor.
        assert!(QubitParams::<f64>::from_ghz(0.1, 0.2, 4.0, 38.2, 0.013).is_err());
        assert!(QubitParams::<f64>::from_ghz(12.0, 0.2, 4.0, 0.001, 0.013).is_err());
        assert!(QpModelParams::<f64>::new(-1e-8, 1e-23, 0.1, 0.1).is_err());
    }

    #[test]
    fn mean_gamma1_is_monotone_in_temperature_above_crossover() {
        let q = qubit(38.2);
        let p = model_b();
        let mut prev = 0.0;
        for i in 0..20 {
            let t = 0.1 + 0.003 * i as f64;
            let m = mean_gamma1(t, &q, 6.2e3, &p).unwrap();
            assert!(m > prev);
            prev = m;
        }
    }
}
