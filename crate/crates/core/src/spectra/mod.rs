//! Spectral decomposition of Γ₁ time series.
//!
//! The pipeline mirrors how slow-fluctuation data is usually reduced: take
//! the Fourier transform of the (biased, mean-removed) autocorrelation of
//! the series, log-bin the resulting one-sided spectrum, and fit
//!
//! ```text
//! S(f) = a/f + b
//! ```
//!
//! to split the power into a 1/f component (TLS frequency jitter) and a
//! white component (QP number shot noise plus measurement noise). Band
//! integrals of the two terms then give the per-channel variances
//! σ²_TLS = a·ln(f_max/f_min) and σ²_QP = b·(f_max − f_min).
//!
//! Conventions: spectra are one-sided on the grid f_k = k/(N·dt),
//! k = 1..N/2, normalized so that Σ S(f_k)·Δf equals the biased sample
//! variance exactly (the Nyquist bin carries half weight for even N).

mod fit;

pub use fit::{
    fit_one_over_f_plus_white, fit_one_over_f_plus_white_with, FitSpace, SpectralFitOptions,
};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::Real;

#[derive(Debug, Clone, thiserror::Error)]
pub enum SpectraError<T: Real> {
    #[error("invalid series: {0}")]
    InvalidSeries(String),
    #[error("max_lag {max_lag} out of range for series of length {len}")]
    MaxLagOutOfRange { max_lag: usize, len: usize },
    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),
    #[error("degenerate fit band: {0}")]
    DegenerateBand(String),
    #[error("spectral fit did not converge within {iterations} iterations")]
    FitNotConverged {
        best: Box<SpectralFit<T>>,
        iterations: usize,
    },
    #[error("invalid band: {0}")]
    InvalidBand(String),
    #[error(transparent)]
    Estimate(#[from] crate::estimate::EstimateError),
}

pub type Result<V, T> = std::result::Result<V, SpectraError<T>>;

/// Spectral ground truth attached to synthetic series for round-trip
/// scoring: the (a, b) an ideal estimator would recover on average.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth<T> {
    pub a_star: T,
    pub b_star: T,
}

/// A uniformly sampled Γ₁ record at one temperature.
#[derive(Debug, Clone)]
pub struct Gamma1Series<T> {
    /// Rates, s⁻¹.
    pub samples: Vec<T>,
    /// Sampling interval, s.
    pub dt: T,
    pub temperature_k: T,
    pub qubit_id: String,
    /// Master seed that generated the series, if synthetic.
    pub seed: Option<u64>,
    /// Analytic (a*, b*) for round-trip scoring, if synthetic.
    pub ground_truth: Option<GroundTruth<T>>,
}

impl<T: Real> Gamma1Series<T> {
    pub fn new(
        samples: Vec<T>,
        dt: T,
        temperature_k: T,
        qubit_id: impl Into<String>,
    ) -> Result<Self, T> {
        let s = Self {
            samples,
            dt,
            temperature_k,
            qubit_id: qubit_id.into(),
            seed: None,
            ground_truth: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), T> {
        if self.samples.len() < 16 {
            return Err(SpectraError::InvalidSeries(format!(
                "need at least 16 samples, got {}",
                self.samples.len()
            )));
        }
        if !(self.dt > T::zero()) || !self.dt.is_finite() {
            return Err(SpectraError::InvalidSeries("dt must be positive".into()));
        }
        if !self.samples.iter().all(|s| *s > T::zero() && s.is_finite()) {
            return Err(SpectraError::InvalidSeries(
                "all samples must be positive and finite".into(),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> T {
        self.samples.iter().copied().sum::<T>() / T::c(self.len() as f64)
    }

    /// Biased sample variance (divides by N).
    pub fn variance_biased(&self) -> T {
        let m = self.mean();
        self.samples.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / T::c(self.len() as f64)
    }

    pub fn f_nyquist(&self) -> T {
        (T::c(2.0) * self.dt).recip()
    }
}

/// One-sided noise spectrum with estimator provenance.
#[derive(Debug, Clone)]
pub struct NoiseSpectrum<T> {
    /// Hz, strictly increasing, positive.
    pub freqs: Vec<T>,
    /// rate²/Hz.
    pub psd: Vec<T>,
    /// Length of the underlying record.
    pub record_len: usize,
    /// Sampling interval of the underlying record, s.
    pub dt: T,
    /// Autocorrelation truncation used by the estimator.
    pub max_lag: usize,
    /// Log-binning applied, if any.
    pub bins_per_decade: Option<u32>,
    /// Raw points per output point after binning.
    pub counts: Option<Vec<usize>>,
    /// Negative raw estimates clipped to zero.
    pub clipped: usize,
    /// True for periodogram-statistics estimates (enables small-sample bias
    /// handling in the fit); false for exact model spectra.
    pub stochastic: bool,
}

impl<T: Real> NoiseSpectrum<T> {
    pub fn validate(&self) -> Result<(), T> {
        if self.freqs.len() != self.psd.len() {
            return Err(SpectraError::InvalidSpectrum(
                "freqs/psd length mismatch".into(),
            ));
        }
        if let Some(c) = &self.counts {
            if c.len() != self.freqs.len() {
                return Err(SpectraError::InvalidSpectrum(
                    "counts length mismatch".into(),
                ));
            }
        }
        let f_nyq = (T::c(2.0) * self.dt).recip() * T::c(1.0 + 1e-9);
        let mut prev = T::zero();
        for (&f, &s) in self.freqs.iter().zip(&self.psd) {
            if !(f > prev) {
                return Err(SpectraError::InvalidSpectrum(
                    "frequencies must be strictly increasing and positive".into(),
                ));
            }
            if f > f_nyq {
                return Err(SpectraError::InvalidSpectrum(
                    "frequency above Nyquist".into(),
                ));
            }
            if !(s >= T::zero()) || !s.is_finite() {
                return Err(SpectraError::InvalidSpectrum(
                    "PSD must be non-negative and finite".into(),
                ));
            }
            prev = f;
        }
        Ok(())
    }

    pub fn f_nyquist(&self) -> T {
        (T::c(2.0) * self.dt).recip()
    }

    /// Σ S(f)·Δf on the native grid (only meaningful for unbinned spectra).
    pub fn integrated_power(&self) -> T {
        let df = (T::c(self.record_len as f64) * self.dt).recip();
        self.psd.iter().copied().sum::<T>() * df
    }
}

/// Result of the a/f + b decomposition.
#[derive(Debug, Clone)]
pub struct SpectralFit<T> {
    /// 1/f amplitude, rate².
    pub a: T,
    /// White level, rate²/Hz.
    pub b: T,
    pub se_a: Option<T>,
    pub se_b: Option<T>,
    /// Fit band actually used, Hz.
    pub band: (T, T),
    pub residual_norm: T,
    pub iterations: usize,
    pub converged: bool,
    pub space: FitSpace,
}

/// Band-integrated variances of the two fitted components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandVariances<T> {
    /// a·ln(f_max/f_min), rate².
    pub sigma2_tls: T,
    /// b·(f_max − f_min), rate².
    pub sigma2_qp: T,
}

fn fft_in_place<T: Real>(buf: &mut [Complex<T>], inverse: bool) {
    let mut planner = FftPlanner::<T>::new();
    let fft = if inverse {
        planner.plan_fft_inverse(buf.len())
    } else {
        planner.plan_fft_forward(buf.len())
    };
    fft.process(buf);
}

/// Biased autocorrelation C(k) = (1/N)·Σ_t (x_t − x̄)(x_{t+k} − x̄) for
/// k = 0..=max_lag, computed via FFT.
pub fn autocorrelation<T: Real>(series: &Gamma1Series<T>, max_lag: usize) -> Result<Vec<T>, T> {
    series.validate()?;
    let n = series.len();
    if max_lag >= n {
        return Err(SpectraError::MaxLagOutOfRange { max_lag, len: n });
    }
    let mean = series.mean();
    let m = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<T>> = Vec::with_capacity(m);
    for &x in &series.samples {
        buf.push(Complex::new(x - mean, T::zero()));
    }
    buf.resize(m, Complex::new(T::zero(), T::zero()));
    fft_in_place(&mut buf, false);
    for z in buf.iter_mut() {
        *z = Complex::new(z.norm_sqr(), T::zero());
    }
    fft_in_place(&mut buf, true);
    let scale = (T::c(m as f64) * T::c(n as f64)).recip();
    Ok(buf[..=max_lag].iter().map(|z| z.re * scale).collect())
}

/// Blackman-Tukey spectrum: Fourier transform of the biased autocorrelation
/// truncated at `max_lag` (rectangular lag window), evaluated on the grid
/// f_k = k/(N·dt), k = 1..N/2. At `max_lag = N−1` this equals the
/// mean-removed periodogram exactly.
pub fn psd_blackman_tukey<T: Real>(
    series: &Gamma1Series<T>,
    max_lag: usize,
) -> Result<NoiseSpectrum<T>, T> {
    let acf = autocorrelation(series, max_lag)?;
    let n = series.len();
    spectrum_from_lags(&acf, n, series.dt, None, max_lag, true)
}

/// Default spectrum estimator: full-lag Blackman-Tukey (the Fourier
/// transform of the complete autocorrelation function), which carries an
/// exact Parseval identity against the biased sample variance.
pub fn psd_from_autocorr<T: Real>(series: &Gamma1Series<T>) -> Result<NoiseSpectrum<T>, T> {
    psd_blackman_tukey(series, series.len() - 1)
}

/// Shared lag-domain → one-sided-spectrum path. `fejer` weights (N−m)/N are
/// applied when `lag_weights` is given (expected-periodogram mode).
fn spectrum_from_lags<T: Real>(
    acf: &[T],
    n: usize,
    dt: T,
    lag_weights: Option<&dyn Fn(usize) -> T>,
    max_lag: usize,
    stochastic: bool,
) -> Result<NoiseSpectrum<T>, T> {
    // Fold lags into a length-N circular buffer: the BT cosine sum at the
    // bin frequencies is exactly the DFT of this folded sequence.
    let mut folded = vec![Complex::new(T::zero(), T::zero()); n];
    let w0 = lag_weights.map_or(T::one(), |w| w(0));
    folded[0] = Complex::new(acf[0] * w0, T::zero());
    for m in 1..=max_lag.min(n - 1) {
        let w = lag_weights.map_or(T::one(), |w| w(m));
        let c = acf[m] * w;
        folded[m].re += c;
        folded[n - m].re += c;
    }
    fft_in_place(&mut folded, false);

    let half = n / 2;
    let two_dt = T::c(2.0) * dt;
    let n_t = T::c(n as f64);
    let mut freqs = Vec::with_capacity(half);
    let mut psd = Vec::with_capacity(half);
    let mut clipped = 0usize;
    for k in 1..=half {
        let mut s = two_dt * folded[k].re;
        if n % 2 == 0 && k == half {
            s *= T::c(0.5);
        }
        if s < T::zero() {
            s = T::zero();
            clipped += 1;
        }
        freqs.push(T::c(k as f64) / (n_t * dt));
        psd.push(s);
    }
    let out = NoiseSpectrum {
        freqs,
        psd,
        record_len: n,
        dt,
        max_lag,
        bins_per_decade: None,
        counts: None,
        clipped,
        stochastic,
    };
    out.validate()?;
    Ok(out)
}

/// Exact expected value of the default estimator for a stationary process
/// with model autocorrelation `model_acf[k] = C(k·dt)`, k = 0..N−1.
///
/// At the DFT bin frequencies the sample-mean-removal corrections cancel
/// identically, leaving the Fejér-windowed transform
/// E[Ŝ(f_k)] = 2dt·Σ_m ((N−|m|)/N)·C(m)·e^{−2πi·km/N}.
pub fn expected_periodogram<T: Real>(model_acf: &[T], dt: T) -> Result<NoiseSpectrum<T>, T> {
    let n = model_acf.len();
    if n < 16 {
        return Err(SpectraError::InvalidSpectrum(
            "model ACF needs at least 16 lags".into(),
        ));
    }
    let n_t = T::c(n as f64);
    let weights = move |m: usize| (n_t - T::c(m as f64)) / n_t;
    spectrum_from_lags(model_acf, n, dt, Some(&weights), n - 1, false)
}

/// Average consecutive spectrum points into logarithmic frequency bins
/// (`floor(bins_per_decade·log10 f)`): geometric-mean frequency,
/// arithmetic-mean PSD, per-bin counts kept for fit weighting.
pub fn log_bin<T: Real>(spec: &NoiseSpectrum<T>, bins_per_decade: u32) -> Result<NoiseSpectrum<T>, T> {
    spec.validate()?;
    if bins_per_decade < 1 {
        return Err(SpectraError::InvalidSpectrum(
            "bins_per_decade must be >= 1".into(),
        ));
    }
    let bpd = T::c(bins_per_decade as f64);
    let mut freqs = Vec::new();
    let mut psd = Vec::new();
    let mut counts = Vec::new();
    let mut cur_bin: Option<i64> = None;
    let (mut ln_sum, mut s_sum, mut cnt) = (T::zero(), T::zero(), 0usize);
    let flush = |ln_sum: T, s_sum: T, cnt: usize,
                     freqs: &mut Vec<T>, psd: &mut Vec<T>, counts: &mut Vec<usize>| {
        if cnt > 0 {
            let c = T::c(cnt as f64);
            freqs.push((ln_sum / c).exp());
            psd.push(s_sum / c);
            counts.push(cnt);
        }
    };
    for (&f, &s) in spec.freqs.iter().zip(&spec.psd) {
        let bin = (bpd * f.log10()).floor().f64() as i64;
        if cur_bin != Some(bin) {
            flush(ln_sum, s_sum, cnt, &mut freqs, &mut psd, &mut counts);
            cur_bin = Some(bin);
            ln_sum = T::zero();
            s_sum = T::zero();
            cnt = 0;
        }
        ln_sum += f.ln();
        s_sum += s;
        cnt += 1;
    }
    flush(ln_sum, s_sum, cnt, &mut freqs, &mut psd, &mut counts);

    let out = NoiseSpectrum {
        freqs,
        psd,
        record_len: spec.record_len,
        dt: spec.dt,
        max_lag: spec.max_lag,
        bins_per_decade: Some(bins_per_decade),
        counts: Some(counts),
        clipped: spec.clipped,
        stochastic: spec.stochastic,
    };
    out.validate()?;
    Ok(out)
}

/// Welch-averaged spectrum: Hann-windowed, mean-removed segments with 50%
/// overlap. Lower variance than the full-record estimator at the price of
/// frequency resolution.
pub fn psd_welch<T: Real>(series: &Gamma1Series<T>, segment_len: usize) -> Result<NoiseSpectrum<T>, T> {
    series.validate()?;
    let n = series.len();
    if segment_len < 16 || segment_len > n {
        return Err(SpectraError::InvalidSeries(format!(
            "segment length {segment_len} out of range [16, {n}]"
        )));
    }
    let seg = segment_len;
    let hop = (seg / 2).max(1);
    let pi = T::c(std::f64::consts::PI);
    let window: Vec<T> = (0..seg)
        .map(|i| {
            let x = T::c(i as f64) / T::c(seg as f64 - 1.0);
            T::c(0.5) * (T::one() - (T::c(2.0) * pi * x).cos())
        })
        .collect();
    let w2: T = window.iter().map(|&w| w * w).sum();

    let half = seg / 2;
    let mut acc = vec![T::zero(); half];
    let mut n_segs = 0usize;
    let mut start = 0usize;
    while start + seg <= n {
        let chunk = &series.samples[start..start + seg];
        let mean = chunk.iter().copied().sum::<T>() / T::c(seg as f64);
        let mut buf: Vec<Complex<T>> = chunk
            .iter()
            .zip(&window)
            .map(|(&x, &w)| Complex::new((x - mean) * w, T::zero()))
            .collect();
        fft_in_place(&mut buf, false);
        for k in 1..=half {
            let mut p = buf[k].norm_sqr();
            if seg % 2 == 0 && k == half {
                p *= T::c(0.5);
            }
            acc[k - 1] += p;
        }
        n_segs += 1;
        start += hop;
    }
    let scale = T::c(2.0) * series.dt / (w2 * T::c(n_segs as f64));
    let n_t = T::c(seg as f64);
    let freqs: Vec<T> = (1..=half).map(|k| T::c(k as f64) / (n_t * series.dt)).collect();
    let psd: Vec<T> = acc.iter().map(|&p| p * scale).collect();
    let out = NoiseSpectrum {
        freqs,
        psd,
        record_len: seg,
        dt: series.dt,
        max_lag: seg - 1,
        bins_per_decade: None,
        counts: Some(vec![n_segs; half]),
        clipped: 0,
        stochastic: true,
    };
    out.validate()?;
    Ok(out)
}

/// Lomb-Scargle spectrum for nonuniformly sampled data, scaled as a
/// one-sided density (2·dt̄·P with the classic phase-shifted normalization);
/// coincides with the periodogram on a uniform grid.
pub fn psd_lomb_scargle<T: Real>(
    times: &[T],
    values: &[T],
    freqs: &[T],
) -> Result<NoiseSpectrum<T>, T> {
    if times.len() != values.len() || times.len() < 16 {
        return Err(SpectraError::InvalidSeries(
            "need >= 16 matched time/value samples".into(),
        ));
    }
    if freqs.is_empty() {
        return Err(SpectraError::InvalidBand("empty frequency grid".into()));
    }
    let n = times.len();
    let n_t = T::c(n as f64);
    let mean = values.iter().copied().sum::<T>() / n_t;
    let c: Vec<T> = values.iter().map(|&v| v - mean).collect();
    let span = *times.last().unwrap() - times[0];
    let dt_mean = span / T::c(n as f64 - 1.0);
    let two_pi = T::c(2.0 * std::f64::consts::PI);

    let mut psd = Vec::with_capacity(freqs.len());
    for &f in freqs {
        let w = two_pi * f;
        let (mut s2, mut c2) = (T::zero(), T::zero());
        for &t in times {
            let ph = T::c(2.0) * w * t;
            s2 += ph.sin();
            c2 += ph.cos();
        }
        let tau = s2.atan2(c2) / (T::c(2.0) * w);
        let (mut cs, mut ss, mut cc, mut s_s) = (T::zero(), T::zero(), T::zero(), T::zero());
        for (&t, &x) in times.iter().zip(&c) {
            let ph = w * (t - tau);
            let (sph, cph) = (ph.sin(), ph.cos());
            cs += x * cph;
            ss += x * sph;
            cc += cph * cph;
            s_s += sph * sph;
        }
        let mut p = T::zero();
        if cc > T::zero() {
            p += cs * cs / cc;
        }
        if s_s > T::zero() {
            p += ss * ss / s_s;
        }
        psd.push(dt_mean * p); // 2·dt̄·(P/2)
    }
    let out = NoiseSpectrum {
        freqs: freqs.to_vec(),
        psd,
        record_len: n,
        dt: dt_mean,
        max_lag: 0,
        bins_per_decade: None,
        counts: None,
        clipped: 0,
        stochastic: true,
    };
    out.validate()?;
    Ok(out)
}

/// Band-integrate a fitted decomposition: the 1/f term integrates to a
/// logarithm, the white term to a plain width.
pub fn band_variances<T: Real>(
    fit: &SpectralFit<T>,
    f_min: T,
    f_max: T,
) -> Result<BandVariances<T>, T> {
    if !(f_min > T::zero()) || !(f_max > f_min) {
        return Err(SpectraError::InvalidBand(format!(
            "need 0 < f_min < f_max, got [{}, {}]",
            f_min, f_max
        )));
    }
    Ok(BandVariances {
        sigma2_tls: fit.a * (f_max / f_min).ln(),
        sigma2_qp: fit.b * (f_max - f_min),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn series(samples: Vec<f64>, dt: f64) -> Gamma1Series<f64> {
        Gamma1Series::new(samples, dt, 0.05, "t").unwrap()
    }

    fn white_series(n: usize, seed: u64) -> Gamma1Series<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let samples = (0..n)
            .map(|_| 100.0 + rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        series(samples, 2.0)
    }

    #[test]
    fn constant_series_has_zero_acf_and_psd() {
        let s = series(vec![5.0; 64], 1.0);
        let acf = autocorrelation(&s, 32).unwrap();
        assert!(acf.iter().all(|&c| c == 0.0));
        let spec = psd_from_autocorr(&s).unwrap();
        assert!(spec.psd.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn alternating_series_matches_closed_form() {
        let n = 64usize;
        let samples: Vec<f64> = (0..n).map(|i| 5.0 + if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let s = series(samples, 1.0);
        let acf = autocorrelation(&s, n - 1).unwrap();
        for (k, &c) in acf.iter().enumerate() {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let want = sign * (n - k) as f64 / n as f64;
            assert!((c - want).abs() < 1e-12, "lag {k}: {c} vs {want}");
        }
    }

    #[test]
    fn fft_acf_matches_direct_summation() {
        let s = white_series(200, 7);
        let acf = autocorrelation(&s, 50).unwrap();
        let mean = s.mean();
        let n = s.len();
        for k in 0..=50 {
            let direct: f64 = (0..n - k)
                .map(|t| (s.samples[t] - mean) * (s.samples[t + k] - mean))
                .sum::<f64>()
                / n as f64;
            assert!((acf[k] - direct).abs() < 1e-10 * acf[0].abs().max(1.0));
        }
    }

    #[test]
    fn max_lag_out_of_range_is_rejected() {
        let s = white_series(32, 1);
        assert!(matches!(
            autocorrelation(&s, 32),
            Err(SpectraError::MaxLagOutOfRange { .. })
        ));
    }

    #[test]
    fn parseval_holds_exactly_for_full_lag() {
        for &n in &[128usize, 129, 540] {
            let s = white_series(n, n as u64);
            let spec = psd_from_autocorr(&s).unwrap();
            let var = s.variance_biased();
            let rel = (spec.integrated_power() - var).abs() / var;
            assert!(rel < 1e-12, "N={n}: Parseval off by {rel:e}");
        }
    }

    #[test]
    fn white_noise_level_is_2_dt_sigma2() {
        // Ensemble mean of the PSD over seeds approaches 2·dt·σ².
        let mut level = 0.0;
        let mut count = 0usize;
        for seed in 0..100 {
            let s = white_series(256, 1000 + seed);
            let spec = psd_from_autocorr(&s).unwrap();
            level += spec.psd.iter().sum::<f64>();
            count += spec.psd.len();
        }
        let level = level / count as f64;
        let want = 2.0 * 2.0 * 1.0; // 2·dt·σ² with dt = 2, σ² = 1
        assert!(
            (level / want - 1.0).abs() < 0.05,
            "white level {level} vs {want}"
        );
    }

    #[test]
    fn sinusoid_power_concentrates_in_its_bin() {
        let n = 256usize;
        let dt = 1.0;
        let k0 = 20usize;
        let samples: Vec<f64> = (0..n)
            .map(|t| 10.0 + (2.0 * std::f64::consts::PI * k0 as f64 * t as f64 / n as f64).cos())
            .collect();
        let s = series(samples, dt);
        let spec = psd_from_autocorr(&s).unwrap();
        let total: f64 = spec.psd.iter().sum();
        let near: f64 = spec
            .psd
            .iter()
            .enumerate()
            .filter(|(i, _)| (i + 1 >= k0 - 1) && (i + 1 <= k0 + 1))
            .map(|(_, &p)| p)
            .sum();
        assert!(near / total >= 0.99, "in-bin fraction {}", near / total);
    }

    #[test]
    fn truncated_bt_at_full_lag_equals_periodogram() {
        let s = white_series(128, 3);
        let full = psd_from_autocorr(&s).unwrap();
        // Direct DFT periodogram as an independent reference.
        let n = s.len();
        let mean = s.mean();
        for (i, &f) in full.freqs.iter().enumerate() {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for (t, &x) in s.samples.iter().enumerate() {
                let ph = 2.0 * std::f64::consts::PI * f * t as f64 * s.dt;
                re += (x - mean) * ph.cos();
                im -= (x - mean) * ph.sin();
            }
            let mut want = 2.0 * s.dt * (re * re + im * im) / n as f64;
            if n % 2 == 0 && i + 1 == n / 2 {
                want *= 0.5;
            }
            assert!(
                (full.psd[i] - want).abs() <= 1e-9 * want.max(1.0),
                "bin {i}: {} vs {want}",
                full.psd[i]
            );
        }
    }

    #[test]
    fn truncated_bt_clips_and_reports() {
        let s = white_series(256, 11);
        let spec = psd_blackman_tukey(&s, 128).unwrap();
        // Rectangular lag windows leak; some bins clip to zero.
        assert!(spec.psd.iter().all(|&p| p >= 0.0));
        assert!(spec.max_lag == 128);
    }

    #[test]
    fn shifting_series_leaves_psd_unchanged() {
        let s = white_series(256, 5);
        let mut shifted = s.clone();
        for v in &mut shifted.samples {
            *v += 1234.5;
        }
        let a = psd_from_autocorr(&s).unwrap();
        let b = psd_from_autocorr(&shifted).unwrap();
        // The large offset costs a few digits in the mean removal; compare
        // against the spectrum scale, not bin by bin.
        let scale = a.psd.iter().copied().fold(0.0f64, f64::max);
        for (x, y) in a.psd.iter().zip(&b.psd) {
            assert!((x - y).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn log_bin_flat_and_single_point() {
        let flat = NoiseSpectrum {
            freqs: (1..=400).map(|k| k as f64 * 1e-4).collect(),
            psd: vec![2.5; 400],
            record_len: 800,
            dt: 1.0 / (800.0 * 1e-4),
            max_lag: 799,
            bins_per_decade: None,
            counts: None,
            clipped: 0,
            stochastic: true,
        };
        let binned = log_bin(&flat, 8).unwrap();
        assert!(binned.freqs.len() < 40);
        for &p in &binned.psd {
            assert!((p - 2.5).abs() < 1e-12);
        }
        let single = NoiseSpectrum {
            freqs: vec![1e-3],
            psd: vec![7.0],
            ..flat.clone()
        };
        let sb = log_bin(&single, 8).unwrap();
        assert!((sb.freqs[0] - 1e-3).abs() < 1e-15);
        assert_eq!(sb.psd, vec![7.0]);
        assert_eq!(sb.counts, Some(vec![1]));
    }

    #[test]
    fn log_bin_one_over_f_tracks_analytic() {
        let a = 3.0;
        let freqs: Vec<f64> = (1..=2000).map(|k| k as f64 * 1e-5).collect();
        let psd: Vec<f64> = freqs.iter().map(|&f| a / f).collect();
        let spec = NoiseSpectrum {
            freqs,
            psd,
            record_len: 4000,
            dt: 1.0 / (4000.0 * 1e-5),
            max_lag: 3999,
            bins_per_decade: None,
            counts: None,
            clipped: 0,
            stochastic: true,
        };
        let binned = log_bin(&spec, 8).unwrap();
        for (&f, &s) in binned.freqs.iter().zip(&binned.psd) {
            assert!(
                (s * f / a - 1.0).abs() < 0.02,
                "bin at {f}: {} vs {}",
                s,
                a / f
            );
        }
    }

    #[test]
    fn expected_periodogram_matches_brute_force() {
        // AR(1) + white model ACF; reference: direct double sum with the
        // full mean-removal covariance.
        let n = 64usize;
        let dt = 2.0;
        let (var1, rho) = (3.0, 0.8f64);
        let var_w = 1.5;
        let model: Vec<f64> = (0..n)
            .map(|k| var1 * rho.powi(k as i32) + if k == 0 { var_w } else { 0.0 })
            .collect();
        let spec = expected_periodogram(&model, dt).unwrap();

        let c = |d: i64| -> f64 {
            let k = d.unsigned_abs() as usize;
            if k < n {
                model[k]
            } else {
                0.0
            }
        };
        let mut m = vec![0.0f64; n];
        for t in 0..n {
            m[t] = (0..n).map(|u| c(t as i64 - u as i64)).sum::<f64>() / n as f64;
        }
        let v = m.iter().sum::<f64>() / n as f64;
        for (i, &f) in spec.freqs.iter().enumerate() {
            let w = 2.0 * std::f64::consts::PI * f * dt;
            let (mut re_acc, mut im_acc) = (0.0, 0.0);
            for t in 0..n {
                for s in 0..n {
                    let cov = c(t as i64 - s as i64) - m[t] - m[s] + v;
                    let ph = w * (t as f64 - s as f64);
                    re_acc += cov * ph.cos();
                    im_acc += cov * ph.sin();
                }
            }
            assert!(im_acc.abs() < 1e-8);
            let mut want = 2.0 * dt * re_acc / n as f64;
            if n % 2 == 0 && i + 1 == n / 2 {
                want *= 0.5;
            }
            assert!(
                (spec.psd[i] - want).abs() < 1e-9 * want.abs().max(1.0),
                "bin {i}: {} vs {want}",
                spec.psd[i]
            );
        }
    }

    #[test]
    fn welch_white_level_and_validity() {
        let mut level = 0.0;
        let mut cnt = 0;
        for seed in 0..50 {
            let s = white_series(512, 300 + seed);
            let spec = psd_welch(&s, 128).unwrap();
            spec.validate().unwrap();
            level += spec.psd.iter().sum::<f64>();
            cnt += spec.psd.len();
        }
        let level = level / cnt as f64;
        assert!((level / 4.0 - 1.0).abs() < 0.1, "welch level {level}");
    }

    #[test]
    fn lomb_scargle_matches_periodogram_on_uniform_grid() {
        let s = white_series(128, 17);
        let spec = psd_from_autocorr(&s).unwrap();
        let times: Vec<f64> = (0..s.len()).map(|i| i as f64 * s.dt).collect();
        // Exclude the Nyquist bin, where the one-sided conventions differ.
        let freqs: Vec<f64> = spec.freqs[..spec.freqs.len() - 1].to_vec();
        let ls = psd_lomb_scargle(&times, &s.samples, &freqs).unwrap();
        for (i, (&a, &b)) in ls.psd.iter().zip(&spec.psd).enumerate() {
            assert!(
                (a - b).abs() <= 1e-8 * b.max(1e-12),
                "bin {i}: LS {a} vs periodogram {b}"
            );
        }
    }

    #[test]
    fn band_variance_arithmetic_and_additivity() {
        let fit = SpectralFit {
            a: 2.0,
            b: 1.0,
            se_a: None,
            se_b: None,
            band: (1e-4, 1e-2),
            residual_norm: 0.0,
            iterations: 0,
            converged: true,
            space: FitSpace::Log,
        };
        let v = band_variances(&fit, 1e-4, 1e-2).unwrap();
        assert!((v.sigma2_tls - 2.0 * 100.0f64.ln()).abs() < 1e-12);
        assert!((v.sigma2_qp - 1.0 * (1e-2 - 1e-4)).abs() < 1e-15);

        let v12 = band_variances(&fit, 1e-4, 1e-3).unwrap();
        let v23 = band_variances(&fit, 1e-3, 1e-2).unwrap();
        assert!((v12.sigma2_tls + v23.sigma2_tls - v.sigma2_tls).abs() < 1e-12);
        assert!((v12.sigma2_qp + v23.sigma2_qp - v.sigma2_qp).abs() < 1e-15);

        let zero_a = SpectralFit { a: 0.0, ..fit };
        assert_eq!(band_variances(&zero_a, 1e-4, 1e-2).unwrap().sigma2_tls, 0.0);
        assert!(band_variances(&fit, 1e-2, 1e-4).is_err());
    }
}
