//! Least-squares decomposition of a one-sided spectrum into a/f + b.
//!
//! The default path fits in log space, where the scatter of averaged
//! periodogram bins is closest to homoscedastic. For bin averages of n
//! independent exponential periodogram ordinates, ln S̄ has mean
//! ln S_true + ψ(n) − ln n and variance ψ′(n); spectra flagged as
//! stochastic are fitted with that bias removed and per-bin weights
//! 1/√ψ′(n), so deep-averaged high-frequency bins pull harder than the
//! single-count low-frequency bins. Exact model spectra skip both.

use super::{NoiseSpectrum, Result, SpectraError, SpectralFit};
use crate::estimate::{nlls_solve, EstimateError, FitProblem};
use crate::Real;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Residual space for the spectral fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitSpace {
    /// Fit ln S; robust default for a/f + b spectra.
    Log,
    /// Fit relative linear residuals (S − model)/model, √n weighted.
    Linear,
}

#[derive(Debug, Clone)]
pub struct SpectralFitOptions<T> {
    pub space: FitSpace,
    /// Band [f_min, f_max]; defaults to [2·f_lowest, f_Nyquist/2].
    pub band: Option<(T, T)>,
    pub max_iter: usize,
}

impl<T> Default for SpectralFitOptions<T> {
    fn default() -> Self {
        Self {
            space: FitSpace::Log,
            band: None,
            max_iter: 200,
        }
    }
}

/// ψ(n) for integer n ≥ 1.
fn digamma_int<T: Real>(n: usize) -> T {
    let mut s = -T::c(EULER_GAMMA);
    for j in 1..n {
        s += T::c(j as f64).recip();
    }
    s
}

/// ψ′(n) for integer n ≥ 1.
fn trigamma_int<T: Real>(n: usize) -> T {
    let mut s = T::c(std::f64::consts::PI * std::f64::consts::PI / 6.0);
    for j in 1..n {
        let x = T::c(j as f64);
        s -= (x * x).recip();
    }
    s
}

fn median<T: Real>(values: &mut [T]) -> T {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) * T::c(0.5)
    }
}

/// Fit S(f) = a/f + b over the default band with default options.
pub fn fit_one_over_f_plus_white<T: Real>(spec: &NoiseSpectrum<T>) -> Result<SpectralFit<T>, T> {
    fit_one_over_f_plus_white_with(spec, &SpectralFitOptions::default())
}

/// Fit S(f) = a/f + b with explicit band/space/iteration options.
pub fn fit_one_over_f_plus_white_with<T: Real>(
    spec: &NoiseSpectrum<T>,
    opts: &SpectralFitOptions<T>,
) -> Result<SpectralFit<T>, T> {
    spec.validate()?;
    let f_lowest = (T::c(spec.record_len as f64) * spec.dt).recip();
    let band = match opts.band {
        Some((lo, hi)) => {
            if !(lo > T::zero()) || !(hi > lo) {
                return Err(SpectraError::InvalidBand(format!(
                    "need 0 < f_min < f_max, got [{}, {}]",
                    lo, hi
                )));
            }
            (lo, hi)
        }
        None => (T::c(2.0) * f_lowest, spec.f_nyquist() * T::c(0.5)),
    };

    let slack = T::c(1.0 + 1e-9);
    let mut f = Vec::new();
    let mut s = Vec::new();
    let mut n_avg = Vec::new();
    for (i, (&fi, &si)) in spec.freqs.iter().zip(&spec.psd).enumerate() {
        if fi * slack < band.0 || fi > band.1 * slack {
            continue;
        }
        if !(si > T::zero()) {
            continue; // clipped bins carry no log-space information
        }
        f.push(fi);
        s.push(si);
        n_avg.push(spec.counts.as_ref().map_or(1, |c| c[i]));
    }
    if f.len() < 6 {
        return Err(SpectraError::DegenerateBand(format!(
            "only {} usable points in [{}, {}]",
            f.len(),
            band.0,
            band.1
        )));
    }
    let span = (*f.last().unwrap() / f[0]).log10();
    if span < T::c(1.5) {
        return Err(SpectraError::DegenerateBand(format!(
            "band spans {:.2} decades, need 1.5",
            span.f64()
        )));
    }

    // Moment-style initialization: white level from the top of the band,
    // 1/f amplitude from the bottom after subtracting it.
    let tail = s.len().min(5);
    let b0 = median(&mut s[s.len() - tail..].to_vec());
    let head = s.len().min(4);
    let mut head_amp: Vec<T> = (0..head).map(|i| (s[i] - b0) * f[i]).collect();
    let a0 = median(&mut head_amp).max(T::c(1e-3) * b0 * f[0]);

    let correct = spec.stochastic;
    let (bias, weight): (Vec<T>, Vec<T>) = if correct {
        n_avg
            .iter()
            .map(|&n| {
                let psi = digamma_int::<T>(n) - T::c(n as f64).ln();
                let w = trigamma_int::<T>(n).sqrt().recip();
                (psi, w)
            })
            .unzip()
    } else {
        (vec![T::zero(); f.len()], vec![T::one(); f.len()])
    };

    let space = opts.space;
    let residuals = {
        let f = f.clone();
        let s = s.clone();
        let n_avg = n_avg.clone();
        move |p: &[T]| -> Vec<T> {
            let (a, b) = (p[0].exp(), p[1].exp());
            f.iter()
                .enumerate()
                .map(|(i, &fi)| {
                    let model = a / fi + b;
                    match space {
                        FitSpace::Log => (model.ln() + bias[i] - s[i].ln()) * weight[i],
                        FitSpace::Linear => {
                            (s[i] - model) / model * T::c(n_avg[i] as f64).sqrt()
                        }
                    }
                })
                .collect()
        }
    };

    let wide = T::c(27.631); // ln(1e12): scale-relative box
    let init = vec![a0.ln(), b0.ln()];
    let lower = vec![init[0] - wide, init[1] - wide];
    let upper = vec![init[0] + wide, init[1] + wide];
    let problem = FitProblem::new(init, residuals)
        .with_bounds(lower, upper)
        .with_max_iter(opts.max_iter);
    let sol = match nlls_solve(&problem) {
        Ok(sol) => sol,
        Err(EstimateError::NanResidual { params }) => {
            return Err(SpectraError::InvalidSpectrum(format!(
                "non-finite residual at ln(a,b) = {:?}",
                params
            )))
        }
        Err(e) => return Err(SpectraError::Estimate(e)),
    };

    let (a, b) = (sol.params[0].exp(), sol.params[1].exp());
    let (se_a, se_b) = (
        sol.std_err(0).map(|s| a * s),
        sol.std_err(1).map(|s| b * s),
    );
    let fit = SpectralFit {
        a,
        b,
        se_a,
        se_b,
        band,
        residual_norm: sol.residual_norm,
        iterations: sol.iterations,
        converged: sol.converged,
        space,
    };
    if !sol.converged {
        let iterations = sol.iterations;
        return Err(SpectraError::FitNotConverged {
            best: Box::new(fit),
            iterations,
        });
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exact_spectrum(a: f64, b: f64, n: usize, dt: f64) -> NoiseSpectrum<f64> {
        let freqs: Vec<f64> = (1..=n / 2).map(|k| k as f64 / (n as f64 * dt)).collect();
        let psd: Vec<f64> = freqs.iter().map(|&f| a / f + b).collect();
        NoiseSpectrum {
            freqs,
            psd,
            record_len: n,
            dt,
            max_lag: n - 1,
            bins_per_decade: None,
            counts: None,
            clipped: 0,
            stochastic: false,
        }
    }

    #[test]
    fn digamma_trigamma_integer_values() {
        assert!((digamma_int::<f64>(1) + super::EULER_GAMMA).abs() < 1e-15);
        let psi5 = -super::EULER_GAMMA + 1.0 + 0.5 + 1.0 / 3.0 + 0.25;
        assert!((digamma_int::<f64>(5) - psi5).abs() < 1e-15);
        let pi2_6 = std::f64::consts::PI.powi(2) / 6.0;
        assert!((trigamma_int::<f64>(1) - pi2_6).abs() < 1e-15);
        assert!((trigamma_int::<f64>(3) - (pi2_6 - 1.0 - 0.25)).abs() < 1e-15);
    }

    #[test]
    fn exact_mixed_spectrum_roundtrips() {
        let (a, b) = (2.4e5, 3.1e7);
        let spec = exact_spectrum(a, b, 540, 480.0);
        let fit = fit_one_over_f_plus_white(&spec).unwrap();
        assert!((fit.a / a - 1.0).abs() < 1e-6, "a {} vs {a}", fit.a);
        assert!((fit.b / b - 1.0).abs() < 1e-6, "b {} vs {b}", fit.b);
        assert!(fit.converged);
        // Default band is [2/(N·dt), f_nyq/2].
        let f1 = 1.0 / (540.0 * 480.0);
        assert!((fit.band.0 - 2.0 * f1).abs() < 1e-18);
        assert!((fit.band.1 - 0.25 / 480.0).abs() < 1e-12);
    }

    #[test]
    fn exact_white_spectrum_pins_a_at_floor() {
        let b = 4.0e7;
        let spec = exact_spectrum(0.0, b, 540, 480.0);
        let fit = fit_one_over_f_plus_white(&spec).unwrap();
        assert!((fit.b / b - 1.0).abs() < 1e-6);
        // a contributes nothing: bounded by its floor, far below the white
        // power in-band.
        let f_min = fit.band.0;
        assert!(fit.a <= 1.1e-3 * b * f_min);
    }

    #[test]
    fn exact_one_over_f_spectrum_recovers_a() {
        let a = 5.0e4;
        let spec = exact_spectrum(a, 0.0, 1024, 100.0);
        let fit = fit_one_over_f_plus_white(&spec).unwrap();
        assert!((fit.a / a - 1.0).abs() < 1e-6);
        let (f_min, f_max) = fit.band;
        let tls = fit.a * (f_max / f_min).ln();
        let qp = fit.b * (f_max - f_min);
        assert!(qp < 1e-3 * tls, "white leakage {qp} vs {tls}");
    }

    #[test]
    fn fit_is_scale_equivariant() {
        let spec = exact_spectrum(2.4e5, 3.1e7, 540, 480.0);
        let mut scaled = spec.clone();
        let c = 3.7e-6;
        for p in &mut scaled.psd {
            *p *= c;
        }
        let f0 = fit_one_over_f_plus_white(&spec).unwrap();
        let f1 = fit_one_over_f_plus_white(&scaled).unwrap();
        assert!((f1.a / (c * f0.a) - 1.0).abs() < 1e-8);
        assert!((f1.b / (c * f0.b) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn stochastic_flag_applies_single_count_bias() {
        // An exact model spectrum mislabeled as a 1-count periodogram is
        // read as biased low by e^{-γ}; the fit compensates by e^{+γ}.
        let (a, b) = (2.4e5, 3.1e7);
        let mut spec = exact_spectrum(a, b, 540, 480.0);
        spec.stochastic = true;
        let fit = fit_one_over_f_plus_white(&spec).unwrap();
        let boost = super::EULER_GAMMA.exp();
        assert!((fit.a / (a * boost) - 1.0).abs() < 1e-6);
        assert!((fit.b / (b * boost) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn counts_weight_high_frequency_bins() {
        // With ψ corrections, large-n bins must dominate: perturb the
        // single low-f bins and check b barely moves.
        let (a, b) = (1.0e5, 5.0e7);
        let mut spec = exact_spectrum(a, b, 540, 480.0);
        spec.stochastic = true;
        let m = spec.freqs.len();
        let mut counts = vec![1usize; m];
        for (i, c) in counts.iter_mut().enumerate() {
            if i >= m / 2 {
                *c = 64;
            }
        }
        // Compensate each bin so the corrected model is exact: S_i =
        // model·exp(ψ(n_i) − ln n_i).
        for i in 0..m {
            let n = counts[i];
            let psi: f64 = super::digamma_int::<f64>(n) - (n as f64).ln();
            spec.psd[i] *= psi.exp();
        }
        spec.counts = Some(counts);
        let fit = fit_one_over_f_plus_white(&spec).unwrap();
        assert!((fit.a / a - 1.0).abs() < 1e-6);
        assert!((fit.b / b - 1.0).abs() < 1e-6);
    }

    #[test]
    fn narrow_band_is_degenerate() {
        let spec = exact_spectrum(1.0, 1.0, 540, 480.0);
        let opts = SpectralFitOptions {
            band: Some((1e-4, 2e-4)),
            ..Default::default()
        };
        assert!(matches!(
            fit_one_over_f_plus_white_with(&spec, &opts),
            Err(SpectraError::DegenerateBand(_))
        ));
    }

    #[test]
    fn linear_space_agrees_on_exact_data() {
        let (a, b) = (2.4e5, 3.1e7);
        let spec = exact_spectrum(a, b, 540, 480.0);
        let opts = SpectralFitOptions {
            space: FitSpace::Linear,
            ..Default::default()
        };
        let fit = fit_one_over_f_plus_white_with(&spec, &opts).unwrap();
        assert!((fit.a / a - 1.0).abs() < 1e-6);
        assert!((fit.b / b - 1.0).abs() < 1e-6);
    }
}
