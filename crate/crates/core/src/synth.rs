//! Synthetic Γ₁ records from microscopic noise configurations.
//!
//! Three stochastic layers are composed, each seeded from its own counter
//! stream of a single master seed so that records are bit-reproducible and
//! the layers are statistically independent:
//!
//! 1. TLS frequency jitter: every TLS sees a set of thermally switching
//!    two-level fluctuators; its detuning ω_δ(t) = ω_δ⁰ + Σ_i g_i s_i(t)
//!    moves the qubit relaxation rate along the Lorentzian
//!    Γ_TLS(t) = A²·2γ₂/(γ₂² + ω_δ(t)²).
//! 2. Quasiparticle number: a birth-death process (generation g, linear
//!    recombination N/τ_r) whose stationary law is Poisson with mean
//!    μ = g·τ_r; the rate contribution is Γ_QP(t) = η(T)·N(t)/(V·n_cp).
//!    When τ_r is far below the sampling cadence the number is drawn
//!    i.i.d. Poisson per sample, which is the exact same law.
//! 3. Measurement: each Γ₁ sample is turned into a simulated decay curve
//!    P(t) = e^{−Γ₁t} plus Gaussian readout noise and re-estimated by a
//!    two-parameter least-squares fit, reproducing estimator scatter.
//!
//! Every synthetic record carries the analytic spectral ground truth
//! (a*, b*): the model autocorrelation implied by the configuration is
//! pushed through the exact expected value of the default spectrum
//! estimator and the same log-binned a/f + b fit the analysis applies, so
//! round-trip accuracy can be scored without Monte-Carlo reference runs.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::estimate::{nlls_solve, FitProblem};
use crate::physkern::{self, PhysError, QubitParams, Tls, TlsEnsemble};
use crate::spectra::{self, Gamma1Series, GroundTruth};
use crate::{consts, Real};

#[derive(Debug, Clone, thiserror::Error)]
pub enum SynthError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("decay fit failure: {0}")]
    FitFailure(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Phys(#[from] PhysError),
    #[error("internal: {0}")]
    Internal(String),
}

pub type Result<V> = std::result::Result<V, SynthError>;

/// Stream ids for the per-task RNGs split off one master seed.
const STREAM_TLF_BASE: u64 = 0x100;
const STREAM_TLF_PER_TLS: u64 = 0x40;
const STREAM_QP: u64 = 0x1000;
const STREAM_MEAS: u64 = 0x2000;

/// Independent deterministic RNG for (master seed, task stream).
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A single two-level fluctuator as a continuous-time telegraph process.
#[derive(Debug, Clone)]
pub struct TlfProcess<T> {
    /// 0 → 1 switching rate, Hz.
    pub switch_rate_up: T,
    /// 1 → 0 switching rate, Hz.
    pub switch_rate_down: T,
    /// Initial state.
    pub state: bool,
    /// Frequency-shift coupling, rad/s.
    pub g: T,
}

impl<T: Real> TlfProcess<T> {
    pub fn new(switch_rate_up: T, switch_rate_down: T, g: T) -> Result<Self> {
        let p = Self {
            switch_rate_up,
            switch_rate_down,
            state: false,
            g,
        };
        p.validate()?;
        Ok(p)
    }

    /// Split a total switch rate by detailed balance at temperature `t`:
    /// the stationary occupancy of the upper state is the thermal value
    /// p = 1/(1 + e^{ħω_t/k_BT}).
    pub fn from_thermal(total_rate: T, omega_t: T, temperature_k: T, g: T) -> Result<Self> {
        if !(total_rate > T::zero()) || !(temperature_k > T::zero()) {
            return Err(SynthError::InvalidConfig(
                "thermal telegraph needs positive rate and temperature".into(),
            ));
        }
        let z = T::c(consts::HBAR) * omega_t / (T::c(consts::K_B) * temperature_k);
        let p_up = (T::one() + z.exp()).recip();
        Self::new(total_rate * p_up, total_rate * (T::one() - p_up), g)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.switch_rate_up >= T::zero()
            && self.switch_rate_down >= T::zero()
            && self.switch_rate_up.is_finite()
            && self.switch_rate_down.is_finite()
            && self.g.is_finite();
        if !ok {
            return Err(SynthError::InvalidConfig(
                "telegraph rates must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn total_rate(&self) -> T {
        self.switch_rate_up + self.switch_rate_down
    }

    /// Stationary probability of state 1.
    pub fn p_up(&self) -> T {
        let r = self.total_rate();
        if r > T::zero() {
            self.switch_rate_up / r
        } else if self.state {
            T::one()
        } else {
            T::zero()
        }
    }

    /// Draw the initial state from the stationary law.
    pub fn with_stationary_state(mut self, rng: &mut ChaCha12Rng) -> Self {
        self.state = T::sample_open01(rng) < self.p_up();
        self
    }
}

/// Quasiparticle number fluctuations in an effective volume.
#[derive(Debug, Clone)]
pub struct QpBirthDeath<T> {
    /// Pair generation rate, s⁻¹.
    pub generation_rate: T,
    /// Recombination/trapping time, s.
    pub tau_r: T,
    /// Effective volume the number is referred to, µm³.
    pub volume_um3: T,
    /// Initial occupation.
    pub initial_n: u64,
}

impl<T: Real> QpBirthDeath<T> {
    pub fn new(generation_rate: T, tau_r: T, volume_um3: T) -> Result<Self> {
        let p = Self {
            generation_rate,
            tau_r,
            volume_um3,
            initial_n: 0,
        };
        p.validate()?;
        Ok(p)
    }

    /// Configure from a target mean occupation μ = g·τ_r.
    pub fn from_mean(mean_n: T, tau_r: T, volume_um3: T) -> Result<Self> {
        if !(mean_n >= T::zero()) {
            return Err(SynthError::InvalidConfig("mean occupation must be >= 0".into()));
        }
        Self::new(mean_n / tau_r, tau_r, volume_um3)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.generation_rate >= T::zero() && self.generation_rate.is_finite()) {
            return Err(SynthError::InvalidConfig(
                "generation rate must be finite and >= 0".into(),
            ));
        }
        if !(self.tau_r > T::zero() && self.tau_r.is_finite()) {
            return Err(SynthError::InvalidConfig("tau_r must be positive".into()));
        }
        if !(self.volume_um3 > T::zero()) {
            return Err(SynthError::InvalidConfig("volume must be positive".into()));
        }
        if self.mean_occupancy() >= T::c(1e7) {
            return Err(SynthError::InvalidConfig(format!(
                "mean occupation {} too large for event-driven simulation (limit 1e7)",
                self.mean_occupancy()
            )));
        }
        Ok(())
    }

    /// Stationary mean occupation μ = g·τ_r.
    pub fn mean_occupancy(&self) -> T {
        self.generation_rate * self.tau_r
    }

    /// Draw a stationary (Poisson) initial occupation.
    pub fn with_stationary_n(mut self, rng: &mut ChaCha12Rng) -> Self {
        self.initial_n = T::sample_poisson(rng, self.mean_occupancy());
        self
    }
}

/// Decay-measurement emulation settings.
#[derive(Debug, Clone)]
pub struct MeasurementConfig<T> {
    /// Averaged shots per decay point; readout noise scales as 1/√shots.
    pub shot_count: u32,
    /// Probe delays of the decay curve, s, strictly increasing from 0.
    pub decay_times_s: Vec<T>,
    /// Single-shot readout noise std on the excited-state population.
    pub readout_std: T,
    /// Repetition cadence of Γ₁ samples, s.
    pub cadence_s: T,
    /// Total record duration, s.
    pub duration_s: T,
}

impl<T: Real> MeasurementConfig<T> {
    /// Conventional settings: 50 delays out to 3/Γ, 2% readout noise,
    /// 8-minute cadence, 72-hour record.
    pub fn standard(gamma_expected: T) -> Result<Self> {
        if !(gamma_expected > T::zero()) {
            return Err(SynthError::InvalidConfig(
                "expected rate must be positive".into(),
            ));
        }
        let t_max = T::c(3.0) / gamma_expected;
        let grid = (0..50)
            .map(|i| t_max * T::c(i as f64) / T::c(49.0))
            .collect();
        let m = Self {
            shot_count: 1,
            decay_times_s: grid,
            readout_std: T::c(0.02),
            cadence_s: T::c(480.0),
            duration_s: T::c(72.0 * 3600.0),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shot_count == 0 {
            return Err(SynthError::InvalidConfig("shot_count must be >= 1".into()));
        }
        if self.decay_times_s.len() < 3 {
            return Err(SynthError::InvalidConfig(
                "decay grid needs at least 3 points".into(),
            ));
        }
        let mut prev = -T::one();
        for &t in &self.decay_times_s {
            if !(t > prev) || !t.is_finite() || t < T::zero() {
                return Err(SynthError::InvalidConfig(
                    "decay grid must be non-negative and strictly increasing".into(),
                ));
            }
            prev = t;
        }
        if !(self.readout_std >= T::zero() && self.readout_std.is_finite()) {
            return Err(SynthError::InvalidConfig(
                "readout noise std must be finite and >= 0".into(),
            ));
        }
        if !(self.cadence_s > T::zero()) || !(self.duration_s >= self.cadence_s) {
            return Err(SynthError::InvalidConfig(
                "need cadence > 0 and duration >= cadence".into(),
            ));
        }
        Ok(())
    }

    /// Effective per-point noise std after shot averaging.
    pub fn effective_readout_std(&self) -> T {
        self.readout_std / T::c(self.shot_count as f64).sqrt()
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_s / self.cadence_s).f64().round() as usize
    }
}

fn grid_len<T: Real>(duration: T, dt: T) -> Result<usize> {
    if !(dt > T::zero()) || !(duration >= dt) {
        return Err(SynthError::InvalidConfig(
            "need dt > 0 and duration >= dt".into(),
        ));
    }
    Ok((duration / dt).f64().round() as usize)
}

/// Event-driven telegraph path sampled on a uniform grid t_i = i·dt.
///
/// Dwell times are exact exponentials; the grid only records the state, so
/// `dt` must resolve the switching (`dt·max(rate) < 0.1`) or fast dwells
/// would be invisible in the record.
pub fn simulate_telegraph<T: Real>(
    p: &TlfProcess<T>,
    duration: T,
    dt: T,
    seed: u64,
) -> Result<Vec<bool>> {
    p.validate()?;
    let n = grid_len(duration, dt)?;
    let r_max = p.switch_rate_up.max(p.switch_rate_down);
    if dt * r_max >= T::c(0.1) {
        return Err(SynthError::Precondition(format!(
            "dt*max(rate) = {} >= 0.1: grid cannot resolve switching",
            dt * r_max
        )));
    }
    let mut rng = stream_rng(seed, STREAM_TLF_BASE);
    let mut out = Vec::with_capacity(n);
    let mut state = p.state;
    let mut t_now = T::zero();
    while out.len() < n {
        let rate_out = if state {
            p.switch_rate_down
        } else {
            p.switch_rate_up
        };
        let t_next = if rate_out > T::zero() {
            t_now + T::sample_exp1(&mut rng) / rate_out
        } else {
            T::infinity()
        };
        while out.len() < n && T::c(out.len() as f64) * dt < t_next {
            out.push(state);
        }
        state = !state;
        t_now = t_next;
    }
    Ok(out)
}

/// Exact conditional sampling of a telegraph process at arbitrary spacing:
/// P(s_{i+1} = 1 | s_i) = p + (s_i − p)·e^{−r·dt} with r the total rate and
/// p the stationary occupancy. Valid for any dt, including dt ≫ 1/r.
pub fn sample_telegraph_exact<T: Real>(
    p: &TlfProcess<T>,
    n: usize,
    dt: T,
    rng: &mut ChaCha12Rng,
) -> Vec<T> {
    let p_up = p.p_up();
    let rho = (-p.total_rate() * dt).exp();
    let mut out = Vec::with_capacity(n);
    let mut s = if p.state { T::one() } else { T::zero() };
    for _ in 0..n {
        out.push(s);
        let prob = p_up + (s - p_up) * rho;
        s = if T::sample_open01(rng) < prob {
            T::one()
        } else {
            T::zero()
        };
    }
    out
}

/// Γ_TLS(t) for a full ensemble at one temperature: each fluctuator is
/// sampled exactly at the grid spacing from its own seed stream, detunings
/// are summed per TLS and mapped through the Lorentzian.
pub fn simulate_tls_gamma<T: Real>(
    ens: &TlsEnsemble<T>,
    temperature_k: T,
    duration: T,
    dt: T,
    seed: u64,
) -> Result<Vec<T>> {
    ens.validate()?;
    if !(temperature_k > T::zero()) {
        return Err(SynthError::InvalidConfig("temperature must be positive".into()));
    }
    let n = grid_len(duration, dt)?;
    let mut out = vec![T::zero(); n];
    for (si, tls) in ens.tls.iter().enumerate() {
        let gamma2 = tls.gamma2.at(temperature_k);
        let a2 = tls.amplitude_a * tls.amplitude_a;
        let mut omega = vec![tls.omega_delta; n];
        for (j, tlf) in tls.tlfs.iter().enumerate() {
            let proc =
                TlfProcess::from_thermal(tlf.switch_rate, tlf.omega_t, temperature_k, tlf.g)?;
            let mut rng = stream_rng(
                seed,
                STREAM_TLF_BASE + si as u64 * STREAM_TLF_PER_TLS + j as u64,
            );
            let proc = proc.with_stationary_state(&mut rng);
            let path = sample_telegraph_exact(&proc, n, dt, &mut rng);
            for (w, s) in omega.iter_mut().zip(&path) {
                *w += tlf.g * *s;
            }
        }
        for (o, &w) in out.iter_mut().zip(&omega) {
            *o += a2 * T::c(2.0) * gamma2 / (gamma2 * gamma2 + w * w);
        }
    }
    Ok(out)
}

/// Event-driven quasiparticle number path on a uniform grid: births at the
/// generation rate, deaths at N/τ_r, which makes the stationary occupation
/// exactly Poisson(g·τ_r).
pub fn simulate_qp_number<T: Real>(
    p: &QpBirthDeath<T>,
    duration: T,
    dt: T,
    seed: u64,
) -> Result<Vec<u64>> {
    p.validate()?;
    let n = grid_len(duration, dt)?;
    let mut rng = stream_rng(seed, STREAM_QP);
    let mut out = Vec::with_capacity(n);
    let mut n_qp = p.initial_n;
    let mut t_now = T::zero();
    while out.len() < n {
        let birth = p.generation_rate;
        let death = T::c(n_qp as f64) / p.tau_r;
        let total = birth + death;
        let t_next = if total > T::zero() {
            t_now + T::sample_exp1(&mut rng) / total
        } else {
            T::infinity()
        };
        while out.len() < n && T::c(out.len() as f64) * dt < t_next {
            out.push(n_qp);
        }
        if out.len() >= n {
            break;
        }
        if T::sample_open01(&mut rng) < birth / total {
            n_qp += 1;
        } else {
            n_qp = n_qp.saturating_sub(1);
        }
        t_now = t_next;
    }
    Ok(out)
}

/// I.i.d. Poisson(μ) occupation samples: the exact sampled law of the
/// birth-death process when τ_r is far below the grid spacing.
pub fn sample_qp_iid<T: Real>(p: &QpBirthDeath<T>, n: usize, rng: &mut ChaCha12Rng) -> Vec<u64> {
    let mu = p.mean_occupancy();
    (0..n).map(|_| T::sample_poisson(rng, mu)).collect()
}

/// Map an occupation path to Γ_QP(t) = η(T)·N/(V·n_cp).
pub fn gamma_qp_path<T: Real>(
    n_path: &[u64],
    p: &QpBirthDeath<T>,
    q: &QubitParams<T>,
    temperature_k: T,
) -> Result<Vec<T>> {
    p.validate()?;
    let eta = physkern::eta(temperature_k, q)?;
    let n_cp = T::c(consts::cooper_pair_density(q.delta.f64()));
    let scale = eta / (p.volume_um3 * n_cp);
    Ok(n_path.iter().map(|&n| scale * T::c(n as f64)).collect())
}

/// Sampling variance of the two-parameter decay fit at rate `gamma`,
/// from the Gauss-Newton information matrix of the model a·e^{−Γt} with
/// independent per-point noise of the configured effective std.
pub fn decay_fit_variance<T: Real>(gamma: T, m: &MeasurementConfig<T>) -> Result<T> {
    m.validate()?;
    if !(gamma > T::zero()) {
        return Err(SynthError::InvalidConfig("rate must be positive".into()));
    }
    let (mut jaa, mut jag, mut jgg) = (T::zero(), T::zero(), T::zero());
    for &t in &m.decay_times_s {
        let e = (-gamma * t).exp();
        jaa += e * e;
        jag -= t * e * e;
        jgg += t * t * e * e;
    }
    let det = jaa * jgg - jag * jag;
    if !(det > T::zero()) {
        return Err(SynthError::InvalidConfig(
            "decay grid does not constrain the rate".into(),
        ));
    }
    let sigma = m.effective_readout_std();
    Ok(sigma * sigma * jaa / det)
}

fn decay_fit_rng<T: Real>(
    gamma1_true: T,
    m: &MeasurementConfig<T>,
    rng: &mut ChaCha12Rng,
    min_span_gammas: f64,
) -> Result<T> {
    let span = *m.decay_times_s.last().unwrap() - m.decay_times_s[0];
    if span * gamma1_true < T::c(min_span_gammas) {
        return Err(SynthError::Precondition(format!(
            "decay grid spans {}/gamma, need >= {min_span_gammas} for a constrained rate fit",
            span * gamma1_true
        )));
    }
    let sigma = m.effective_readout_std();
    let data: Vec<T> = m
        .decay_times_s
        .iter()
        .map(|&t| (-gamma1_true * t).exp() + sigma * T::sample_normal(rng))
        .collect();

    // Initialize from the data: amplitude at t = 0, rate from the first
    // crossing of a/e.
    let a0 = data[0].max(T::c(0.1));
    let thresh = a0 * T::c(std::f64::consts::E).recip();
    let mut r0 = T::c(1.5) / span;
    for (&t, &p) in m.decay_times_s.iter().zip(&data) {
        if t > T::zero() && p < thresh {
            r0 = t.recip();
            break;
        }
    }
    let times = m.decay_times_s.clone();
    let residuals = move |p: &[T]| -> Vec<T> {
        let (a, r) = (p[0], p[1]);
        times
            .iter()
            .zip(&data)
            .map(|(&t, &d)| a * (-r * t).exp() - d)
            .collect()
    };
    let problem = FitProblem::new(vec![a0, r0], residuals);
    let sol = nlls_solve(&problem).map_err(|e| SynthError::FitFailure(e.to_string()))?;
    let rate = sol.params[1];
    if !(rate > T::zero()) || !rate.is_finite() {
        return Err(SynthError::FitFailure(format!(
            "fitted decay rate {} is not positive",
            rate
        )));
    }
    Ok(rate)
}

/// Simulate one decay-curve measurement of a known rate and re-estimate it:
/// P(t_i) = e^{−Γt_i} + readout noise, then a two-parameter (amplitude,
/// rate) least-squares fit. Errors if the fitted rate is not positive.
pub fn synthesize_decay_and_fit<T: Real>(
    gamma1_true: T,
    m: &MeasurementConfig<T>,
    seed: u64,
) -> Result<T> {
    m.validate()?;
    if !(gamma1_true > T::zero()) || !gamma1_true.is_finite() {
        return Err(SynthError::InvalidConfig("true rate must be positive".into()));
    }
    let mut rng = stream_rng(seed, STREAM_MEAS);
    decay_fit_rng(gamma1_true, m, &mut rng, 2.0)
}

/// Distribution of Ω = Σ g_i s_i over independent Bernoulli states, as
/// (value, probability) pairs. Exact enumeration, 2^K entries.
fn detuning_distribution<T: Real>(couplings: &[(T, T)]) -> Result<Vec<(T, T)>> {
    if couplings.len() > 22 {
        return Err(SynthError::Unsupported(format!(
            "analytic ground truth enumerates fluctuator states exactly; {} per TLS exceeds the limit of 22",
            couplings.len()
        )));
    }
    let mut dist = vec![(T::zero(), T::one())];
    for &(g, p) in couplings {
        let q = T::one() - p;
        let mut next = Vec::with_capacity(dist.len() * 2);
        for &(v, pr) in &dist {
            next.push((v, pr * q));
            next.push((v + g, pr * p));
        }
        dist = next;
    }
    Ok(dist)
}

struct TlsMoments<T> {
    mean: T,
    /// Per-fluctuator (linear-coefficient², per-step ACF factor).
    telegraph: Vec<(T, T)>,
    /// Variance not captured by the linear telegraph terms; white.
    residual: T,
}

fn tls_moments<T: Real>(tls: &Tls<T>, temperature_k: T, dt: T) -> Result<TlsMoments<T>> {
    let gamma2 = tls.gamma2.at(temperature_k);
    let a2 = tls.amplitude_a * tls.amplitude_a;
    let lorentz = |w: T| a2 * T::c(2.0) * gamma2 / (gamma2 * gamma2 + w * w);
    let couplings: Vec<(T, T)> = tls
        .tlfs
        .iter()
        .map(|tlf| {
            let z = T::c(consts::HBAR) * tlf.omega_t / (T::c(consts::K_B) * temperature_k);
            (tlf.g, (T::one() + z.exp()).recip())
        })
        .collect();
    let dist = detuning_distribution(&couplings)?;
    let (mut e_l, mut e_l2) = (T::zero(), T::zero());
    for &(v, pr) in &dist {
        let l = lorentz(tls.omega_delta + v);
        e_l += pr * l;
        e_l2 += pr * l * l;
    }
    let var_total = (e_l2 - e_l * e_l).max(T::zero());

    let mut telegraph = Vec::with_capacity(tls.tlfs.len());
    let mut linear_sum = T::zero();
    for (j, tlf) in tls.tlfs.iter().enumerate() {
        let (g_j, p_j) = couplings[j];
        let others: Vec<(T, T)> = couplings
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != j)
            .map(|(_, &c)| c)
            .collect();
        let rest = detuning_distribution(&others)?;
        let mut diff = T::zero();
        for &(v, pr) in &rest {
            diff += pr * (lorentz(tls.omega_delta + v + g_j) - lorentz(tls.omega_delta + v));
        }
        let chat = (p_j * (T::one() - p_j)).sqrt() * diff;
        let rho = (-tlf.switch_rate * dt).exp();
        telegraph.push((chat * chat, rho));
        linear_sum += chat * chat;
    }
    Ok(TlsMoments {
        mean: e_l,
        telegraph,
        residual: (var_total - linear_sum).max(T::zero()),
    })
}

/// Amplitude A such that the mean TLS rate A²·E[L(ω_δ)] over the thermal
/// fluctuator states equals `target_mean` at temperature `t`.
pub fn calibrate_tls_amplitude<T: Real>(
    tls: &Tls<T>,
    temperature_k: T,
    target_mean: T,
) -> Result<T> {
    if !(target_mean > T::zero()) {
        return Err(SynthError::InvalidConfig("target mean must be positive".into()));
    }
    let mut unit = tls.clone();
    unit.amplitude_a = T::one();
    let m = tls_moments(&unit, temperature_k, T::one())?;
    if !(m.mean > T::zero()) {
        return Err(SynthError::InvalidConfig(
            "TLS has zero mean response; cannot calibrate amplitude".into(),
        ));
    }
    Ok((target_mean / m.mean).sqrt())
}

/// Analytic (a*, b*) for a configuration: the exact expectation of the
/// default spectrum estimator applied to the model autocorrelation, pushed
/// through the same log-binning and a/f + b fit as the analysis.
pub fn ground_truth_spectral<T: Real>(
    q: &QubitParams<T>,
    ens: &TlsEnsemble<T>,
    qp: &QpBirthDeath<T>,
    m: &MeasurementConfig<T>,
    temperature_k: T,
) -> Result<GroundTruth<T>> {
    q.validate()?;
    ens.validate()?;
    qp.validate()?;
    m.validate()?;
    let dt = m.cadence_s;
    let n = m.n_samples();
    if n < 16 {
        return Err(SynthError::InvalidConfig(
            "record too short for spectral ground truth (need >= 16 samples)".into(),
        ));
    }

    // (variance, per-step correlation) components; white terms have rho 0.
    let mut comps: Vec<(T, T)> = Vec::new();
    let mut mean_rate = T::zero();
    for tls in &ens.tls {
        let mom = tls_moments(tls, temperature_k, dt)?;
        mean_rate += mom.mean;
        comps.extend(mom.telegraph);
        comps.push((mom.residual, T::zero()));
    }

    let eta = physkern::eta(temperature_k, q)?;
    let n_cp = T::c(consts::cooper_pair_density(q.delta.f64()));
    let mu = qp.mean_occupancy();
    let x_scale = eta / (qp.volume_um3 * n_cp);
    mean_rate += x_scale * mu;
    comps.push((x_scale * x_scale * mu, (-dt / qp.tau_r).exp()));

    if m.effective_readout_std() > T::zero() {
        comps.push((decay_fit_variance(mean_rate, m)?, T::zero()));
    }

    let total_var: T = comps.iter().map(|&(v, _)| v).sum();
    if !(total_var > T::zero()) {
        return Ok(GroundTruth {
            a_star: T::zero(),
            b_star: T::zero(),
        });
    }

    let mut acf = vec![T::zero(); n];
    for &(var, rho) in &comps {
        if var <= T::zero() {
            continue;
        }
        if rho <= T::zero() {
            acf[0] += var;
        } else {
            let mut r = T::one();
            for c in acf.iter_mut() {
                *c += var * r;
                r *= rho;
            }
        }
    }

    let spec =
        spectra::expected_periodogram(&acf, dt).map_err(|e| SynthError::Internal(e.to_string()))?;
    let binned =
        spectra::log_bin(&spec, 8).map_err(|e| SynthError::Internal(e.to_string()))?;
    let fit = spectra::fit_one_over_f_plus_white(&binned)
        .map_err(|e| SynthError::Internal(format!("ground-truth fit: {e}")))?;
    Ok(GroundTruth {
        a_star: fit.a,
        b_star: fit.b,
    })
}

/// Full synthetic record: TLS jitter + quasiparticle shot noise composed
/// into Γ₁(t), then re-measured sample by sample through the decay-fit
/// layer. The returned series carries the analytic (a*, b*).
pub fn simulate_experiment<T: Real>(
    q: &QubitParams<T>,
    ens: &TlsEnsemble<T>,
    qp: &QpBirthDeath<T>,
    m: &MeasurementConfig<T>,
    temperature_k: T,
    seed: u64,
) -> Result<Gamma1Series<T>> {
    q.validate()?;
    m.validate()?;
    let dt = m.cadence_s;
    let n = m.n_samples();
    if n < 16 {
        return Err(SynthError::InvalidConfig(
            "record too short (need >= 16 samples)".into(),
        ));
    }

    let gamma_tls = simulate_tls_gamma(ens, temperature_k, m.duration_s, dt, seed)?;

    let n_path = if qp.tau_r < dt * T::c(0.1) {
        let mut rng = stream_rng(seed, STREAM_QP);
        sample_qp_iid(qp, n, &mut rng)
    } else {
        let qp_stat = {
            let mut rng = stream_rng(seed, STREAM_QP + 1);
            qp.clone().with_stationary_n(&mut rng)
        };
        simulate_qp_number(&qp_stat, m.duration_s, dt, seed)?
    };
    let gamma_qp = gamma_qp_path(&n_path, qp, q, temperature_k)?;

    let mut rng_m = stream_rng(seed, STREAM_MEAS);
    let sigma = m.effective_readout_std();
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let g_true = gamma_tls[i] + gamma_qp[i];
        if !(g_true > T::zero()) {
            return Err(SynthError::InvalidConfig(format!(
                "non-positive true rate {} at sample {i}: configuration has no noise floor",
                g_true
            )));
        }
        // Rates wander around the value the fixed grid was designed for;
        // only refuse samples the grid cannot constrain at all.
        let g_meas = if sigma > T::zero() {
            decay_fit_rng(g_true, m, &mut rng_m, 0.5)?
        } else {
            g_true
        };
        samples.push(g_meas);
    }

    let gt = ground_truth_spectral(q, ens, qp, m, temperature_k)?;
    let mut series = Gamma1Series::new(samples, dt, temperature_k, "sim")
        .map_err(|e| SynthError::Internal(e.to_string()))?;
    series.seed = Some(seed);
    series.ground_truth = Some(gt);
    Ok(series)
}
