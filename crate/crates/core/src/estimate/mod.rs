//! Parameter estimation: the generic least-squares engine and the two
//! temperature-dependence fits.
//!
//! The mean fit inverts μ(Γ₁)(T) = Γ_TLS + η(T)·(x⁰_QP + x^th_QP(T)) jointly
//! over several qubits, optionally tying x⁰_QP within share groups; it
//! recovers {Γ_TLS, x⁰_QP, Δ} per qubit. The variance fit then inverts the
//! QP variance model at fixed {x⁰_QP, Δ} to recover the effective volumes
//! {V⁰_eff, V^th_eff}. Both fits use log residuals (the data span decades)
//! and log-parametrized positives.

pub mod nlls;

pub use nlls::{nlls_solve, EstimateError, FitProblem, FitResult, LossScale};

use crate::consts;
use crate::physkern::{self, QubitParams};
use crate::Real;

pub type Result<T> = std::result::Result<T, EstimateError>;

/// Per-qubit mean-Γ₁ data for the joint temperature fit.
#[derive(Debug, Clone)]
pub struct MeanFitData<T> {
    pub qubit_id: String,
    pub qubit: QubitParams<T>,
    pub temperatures_k: Vec<T>,
    /// Observed mean rates, s⁻¹.
    pub mean_gamma1: Vec<T>,
}

/// Qubit groups constrained to share one x⁰_QP value. Qubits not listed get
/// their own free parameter.
#[derive(Debug, Clone, Default)]
pub struct ShareGroups {
    pub groups: Vec<Vec<String>>,
}

impl ShareGroups {
    pub fn tie(groups: &[&[&str]]) -> Self {
        Self {
            groups: groups
                .iter()
                .map(|g| g.iter().map(|s| s.to_string()).collect())
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MeanFitOptions<T> {
    /// Data must straddle this temperature for Δ to be identifiable.
    pub high_t_threshold_k: T,
    pub max_iter: usize,
}

impl<T: Real> Default for MeanFitOptions<T> {
    fn default() -> Self {
        Self {
            high_t_threshold_k: T::c(0.1),
            max_iter: 400,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QubitMeanFit<T> {
    pub qubit_id: String,
    /// TLS floor rate, s⁻¹.
    pub gamma_tls: T,
    pub x_qp0: T,
    /// Gap energy, J.
    pub delta: T,
    pub se_gamma_tls: Option<T>,
    pub se_x_qp0: Option<T>,
    pub se_delta: Option<T>,
    /// Index of the x⁰ share group this qubit belongs to.
    pub share_group: usize,
}

#[derive(Debug, Clone)]
pub struct MeanFitOutcome<T> {
    pub per_qubit: Vec<QubitMeanFit<T>>,
    pub fit: FitResult<T>,
}

fn eta_at<T: Real>(t: T, q: &QubitParams<T>, delta: T) -> T {
    let mut qd = q.clone();
    qd.delta = delta;
    physkern::eta(t, &qd).unwrap_or_else(|_| T::nan())
}

fn mean_model<T: Real>(t: T, q: &QubitParams<T>, gamma_tls: T, x0: T, delta: T) -> T {
    let xth = physkern::x_qp_thermal(t, delta).unwrap_or_else(|_| T::nan());
    gamma_tls + eta_at(t, q, delta) * (x0 + xth)
}

/// Joint fit of the mean-rate temperature model across qubits.
///
/// Parameters (all log-scaled): one Γ_TLS and one Δ per qubit, one x⁰_QP per
/// share group.
pub fn fit_mean_vs_temperature<T: Real>(
    datasets: &[MeanFitData<T>],
    share_x0: &ShareGroups,
    options: &MeanFitOptions<T>,
) -> Result<MeanFitOutcome<T>> {
    if datasets.is_empty() {
        return Err(EstimateError::InvalidData("no datasets".into()));
    }
    for d in datasets {
        if d.temperatures_k.len() != d.mean_gamma1.len() {
            return Err(EstimateError::InvalidData(format!(
                "qubit {}: temperature/mean length mismatch",
                d.qubit_id
            )));
        }
        if d.temperatures_k.len() < 5 {
            return Err(EstimateError::InvalidData(format!(
                "qubit {}: need at least 5 temperature points",
                d.qubit_id
            )));
        }
        for (&t, &mu) in d.temperatures_k.iter().zip(&d.mean_gamma1) {
            if !(t > T::zero()) || !t.is_finite() || !(mu > T::zero()) || !mu.is_finite() {
                return Err(EstimateError::InvalidData(format!(
                    "qubit {}: temperatures and means must be positive and finite",
                    d.qubit_id
                )));
            }
        }
        let tmin = d.temperatures_k.iter().copied().fold(T::infinity(), T::min);
        let tmax = d.temperatures_k.iter().copied().fold(T::zero(), T::max);
        let thr = options.high_t_threshold_k;
        if !(tmin < thr && tmax > thr) {
            return Err(EstimateError::InsufficientSpan(format!(
                "qubit {}: temperatures [{:.3}, {:.3}] K must straddle {:.3} K \
                 (the gap is unidentifiable without high-temperature points)",
                d.qubit_id,
                tmin.f64(),
                tmax.f64(),
                thr.f64()
            )));
        }
    }

    // Map each qubit to its x⁰ share group; unlisted qubits get singletons.
    let nq = datasets.len();
    let mut group_of = vec![usize::MAX; nq];
    let mut n_groups = 0usize;
    for g in &share_x0.groups {
        let mut hit = false;
        for name in g {
            match datasets.iter().position(|d| &d.qubit_id == name) {
                Some(i) => {
                    if group_of[i] != usize::MAX {
                        return Err(EstimateError::InvalidData(format!(
                            "qubit {name} appears in more than one share group"
                        )));
                    }
                    group_of[i] = n_groups;
                    hit = true;
                }
                None => {
                    return Err(EstimateError::InvalidData(format!(
                        "share group names unknown qubit {name}"
                    )))
                }
            }
        }
        if hit {
            n_groups += 1;
        }
    }
    for g in group_of.iter_mut() {
        if *g == usize::MAX {
            *g = n_groups;
            n_groups += 1;
        }
    }

    // Initialization: Δ from the literature-range 40 GHz; the lowest
    // observed mean split evenly between the TLS floor and the η·x⁰ QP
    // plateau. The two floors are nearly degenerate at low temperature
    // (η(T) is almost flat there), so a neutral split starts the solver
    // mid-valley instead of at either exhausted end.
    let delta_init = T::c(consts::ghz_to_joule(40.0));
    let half = T::c(0.5);
    let mut gt_init = vec![T::zero(); nq];
    let mut x0_init_log = vec![T::zero(); n_groups];
    let mut x0_members = vec![0usize; n_groups];
    for (i, d) in datasets.iter().enumerate() {
        let mu_min = d.mean_gamma1.iter().copied().fold(T::infinity(), T::min);
        gt_init[i] = half * mu_min;
        let (tmin_idx, _) = d
            .temperatures_k
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        let x0_est = (half * mu_min
            / eta_at(d.temperatures_k[tmin_idx], &d.qubit, delta_init))
        .max(T::c(1e-12));
        x0_init_log[group_of[i]] += x0_est.ln();
        x0_members[group_of[i]] += 1;
    }
    for (lg, &cnt) in x0_init_log.iter_mut().zip(&x0_members) {
        *lg /= T::c(cnt as f64);
    }

    // Parameter layout: [ln Γ_TLS per qubit | ln x⁰ per group | ln Δ per qubit].
    let npar = nq + n_groups + nq;
    let mut init = Vec::with_capacity(npar);
    let mut lower = Vec::with_capacity(npar);
    let mut upper = Vec::with_capacity(npar);
    for &g in &gt_init {
        init.push(g.max(T::c(1e-9)).ln());
        lower.push(T::c(1e-9f64.ln()));
        upper.push(T::c(1e9f64.ln()));
    }
    for &lx in &x0_init_log {
        init.push(lx.max(T::c(1e-16f64.ln())).min(T::c(1e-2f64.ln())));
        lower.push(T::c(1e-16f64.ln()));
        upper.push(T::c(1e-2f64.ln()));
    }
    for _ in 0..nq {
        init.push(delta_init.ln());
        lower.push(T::c(consts::ghz_to_joule(20.0)).ln());
        upper.push(T::c(consts::ghz_to_joule(80.0)).ln());
    }

    let flat: Vec<(usize, T, T)> = datasets
        .iter()
        .enumerate()
        .flat_map(|(i, d)| {
            d.temperatures_k
                .iter()
                .zip(&d.mean_gamma1)
                .map(move |(&t, &mu)| (i, t, mu))
        })
        .collect();
    let qubits: Vec<QubitParams<T>> = datasets.iter().map(|d| d.qubit.clone()).collect();
    let group_of_c = group_of.clone();

    let problem = FitProblem::new(init, move |p: &[T]| {
        flat.iter()
            .map(|&(i, t, mu)| {
                let gt = p[i].exp();
                let x0 = p[nq + group_of_c[i]].exp();
                let delta = p[nq + n_groups + i].exp();
                (mean_model(t, &qubits[i], gt, x0, delta) / mu).ln()
            })
            .collect()
    })
    .with_bounds(lower, upper)
    .with_scale(LossScale::LogResidual)
    .with_max_iter(options.max_iter);

    let fit = nlls_solve(&problem)?;

    let se_log = |j: usize| fit.std_err(j);
    let per_qubit = datasets
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let gt = fit.params[i].exp();
            let x0 = fit.params[nq + group_of[i]].exp();
            let delta = fit.params[nq + n_groups + i].exp();
            QubitMeanFit {
                qubit_id: d.qubit_id.clone(),
                gamma_tls: gt,
                x_qp0: x0,
                delta,
                se_gamma_tls: se_log(i).map(|s| s * gt),
                se_x_qp0: se_log(nq + group_of[i]).map(|s| s * x0),
                se_delta: se_log(nq + n_groups + i).map(|s| s * delta),
                share_group: group_of[i],
            }
        })
        .collect();

    Ok(MeanFitOutcome { per_qubit, fit })
}

/// σ²_QP(T) data for the effective-volume fit.
#[derive(Debug, Clone)]
pub struct VarianceFitData<T> {
    pub temperatures_k: Vec<T>,
    /// Observed QP-channel Γ₁ variances, s⁻².
    pub sigma2_qp: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct VarianceFitOutcome<T> {
    /// Effective volume of the non-equilibrium QP population, µm³.
    pub v_eff0: T,
    /// Effective volume of the thermal QP population, µm³.
    pub v_eff_th: T,
    pub se_v_eff0: Option<T>,
    pub se_v_eff_th: Option<T>,
    /// False when the non-equilibrium term never contributes appreciably
    /// (no low-temperature plateau in the data), leaving V⁰_eff unconstrained.
    pub v0_identifiable: bool,
    pub fit: FitResult<T>,
}

/// Two-parameter fit of the QP variance model at fixed {x⁰_QP, Δ}.
pub fn fit_variance_vs_temperature<T: Real>(
    data: &VarianceFitData<T>,
    x_qp0: T,
    delta: T,
    q: &QubitParams<T>,
) -> Result<VarianceFitOutcome<T>> {
    if data.temperatures_k.len() != data.sigma2_qp.len() {
        return Err(EstimateError::InvalidData(
            "temperature/variance length mismatch".into(),
        ));
    }
    if data.temperatures_k.len() < 3 {
        return Err(EstimateError::InvalidData(
            "need at least 3 temperature points".into(),
        ));
    }
    for (&t, &s) in data.temperatures_k.iter().zip(&data.sigma2_qp) {
        if !(t > T::zero()) || !(s > T::zero()) || !t.is_finite() || !s.is_finite() {
            return Err(EstimateError::InvalidData(
                "temperatures and variances must be positive and finite".into(),
            ));
        }
    }
    if !(x_qp0 >= T::zero()) || !(delta > T::zero()) {
        return Err(EstimateError::InvalidData(
            "fixed x⁰ must be >= 0 and Δ positive".into(),
        ));
    }

    let n_cp = T::c(consts::cooper_pair_density(delta.f64()));
    let temps = data.temperatures_k.clone();
    let sig = data.sigma2_qp.clone();
    let qc = q.clone();

    let model = move |t: T, v0: T, vth: T| {
        let e = eta_at(t, &qc, delta);
        let xth = physkern::x_qp_thermal(t, delta).unwrap_or_else(|_| T::nan());
        e * e * (x_qp0 / (n_cp * v0) + xth / (n_cp * vth))
    };
    let model_c = model.clone();

    let v_init = q.junction_volume_um3.max(T::c(1e-5));
    let problem = FitProblem::new(vec![v_init.ln(), v_init.ln()], move |p: &[T]| {
        let v0 = p[0].exp();
        let vth = p[1].exp();
        temps
            .iter()
            .zip(&sig)
            .map(|(&t, &s)| (model_c(t, v0, vth) / s).ln())
            .collect()
    })
    .with_bounds(
        vec![T::c(1e-6f64.ln()); 2],
        vec![T::c(1e4f64.ln()); 2],
    )
    .with_scale(LossScale::LogResidual);

    let fit = nlls_solve(&problem)?;
    let v_eff0 = fit.params[0].exp();
    let v_eff_th = fit.params[1].exp();

    // The non-equilibrium volume is identified only if its term carries
    // weight somewhere; check the coldest point, where it is largest.
    let tmin = data.temperatures_k.iter().copied().fold(T::infinity(), T::min);
    let e = eta_at(tmin, q, delta);
    let term0 = e * e * x_qp0 / (n_cp * v_eff0);
    let total = model(tmin, v_eff0, v_eff_th);
    let v0_identifiable = total > T::zero() && term0 / total >= T::c(0.1);

    Ok(VarianceFitOutcome {
        v_eff0,
        v_eff_th,
        se_v_eff0: fit.std_err(0).map(|s| s * v_eff0),
        se_v_eff_th: fit.std_err(1).map(|s| s * v_eff_th),
        v0_identifiable,
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physkern::QpModelParams;

    fn qubit(delta_ghz: f64) -> QubitParams<f64> {
        QubitParams::from_ghz(12.0, 0.2, 4.0, delta_ghz, 0.013).unwrap()
    }

    fn grid12() -> Vec<f64> {
        (0..12).map(|i| 0.007 + i as f64 * (0.153 - 0.007) / 11.0).collect()
    }

    fn synth_means(q: &QubitParams<f64>, gt: f64, x0: f64, delta: f64) -> Vec<f64> {
        grid12()
            .iter()
            .map(|&t| mean_model(t, q, gt, x0, delta))
            .collect()
    }

    #[test]
    fn noiseless_single_qubit_roundtrip() {
        let q = qubit(38.0);
        let truth = (1.2e4, 1.4e-7, consts::ghz_to_joule(38.0));
        let data = MeanFitData {
            qubit_id: "A".into(),
            qubit: q.clone(),
            temperatures_k: grid12(),
            mean_gamma1: synth_means(&q, truth.0, truth.1, truth.2),
        };
        let out = fit_mean_vs_temperature(
            &[data],
            &ShareGroups::default(),
            &MeanFitOptions::default(),
        )
        .unwrap();
        let f = &out.per_qubit[0];
        assert!((f.delta / truth.2 - 1.0).abs() < 0.01, "delta off: {}", f.delta);
        assert!((f.gamma_tls / truth.0 - 1.0).abs() < 0.05);
        assert!((f.x_qp0 / truth.1 - 1.0).abs() < 0.05);
    }

    #[test]
    fn shared_x0_lands_between_distinct_truths() {
        let qb = qubit(38.2);
        let qc = qubit(39.6);
        let (xb, xc) = (5.0e-8, 7.5e-8);
        let data = vec![
            MeanFitData {
                qubit_id: "B".into(),
                qubit: qb.clone(),
                temperatures_k: grid12(),
                mean_gamma1: synth_means(&qb, 6.2e3, xb, consts::ghz_to_joule(38.2)),
            },
            MeanFitData {
                qubit_id: "C".into(),
                qubit: qc.clone(),
                temperatures_k: grid12(),
                mean_gamma1: synth_means(&qc, 1.6e3, xc, consts::ghz_to_joule(39.6)),
            },
        ];
        let out = fit_mean_vs_temperature(
            &data,
            &ShareGroups::tie(&[&["B", "C"]]),
            &MeanFitOptions::default(),
        )
        .unwrap();
        let shared = out.per_qubit[0].x_qp0;
        assert_eq!(out.per_qubit[0].share_group, out.per_qubit[1].share_group);
        assert_eq!(shared, out.per_qubit[1].x_qp0);
        assert!(shared > xb && shared < xc, "shared x0 {shared} outside ({xb}, {xc})");
    }

    #[test]
    fn low_temperature_only_data_is_rejected() {
        let q = qubit(38.0);
        let temps: Vec<f64> = (0..8).map(|i| 0.007 + 0.006 * i as f64).collect();
        let means: Vec<f64> = temps
            .iter()
            .map(|&t| mean_model(t, &q, 1.2e4, 1.4e-7, consts::ghz_to_joule(38.0)))
            .collect();
        let data = MeanFitData {
            qubit_id: "A".into(),
            qubit: q,
            temperatures_k: temps,
            mean_gamma1: means,
        };
        let err = fit_mean_vs_temperature(
            &[data],
            &ShareGroups::default(),
            &MeanFitOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, EstimateError::InsufficientSpan(_)));
    }

    #[test]
    fn confined_data_gives_wide_gap_interval() {
        // With the span guard relaxed, fitting sub-60 mK data must leave Δ
        // poorly determined: its confidence interval spans more than 20%.
        let q = qubit(38.0);
        let temps: Vec<f64> = (0..10).map(|i| 0.007 + 0.005 * i as f64).collect();
        let means: Vec<f64> = temps
            .iter()
            .map(|&t| mean_model(t, &q, 1.2e4, 1.4e-7, consts::ghz_to_joule(38.0)))
            .collect();
        let data = MeanFitData {
            qubit_id: "A".into(),
            qubit: q,
            temperatures_k: temps,
            mean_gamma1: means,
        };
        let opts = MeanFitOptions {
            high_t_threshold_k: 0.03,
            ..MeanFitOptions::default()
        };
        let out = fit_mean_vs_temperature(&[data], &ShareGroups::default(), &opts).unwrap();
        let f = &out.per_qubit[0];
        let rel_span = f
            .se_delta
            .map(|se| 2.0 * se / f.delta)
            .unwrap_or(f64::INFINITY);
        assert!(
            rel_span > 0.2,
            "expected a wide Δ interval from confined data, got {:.1}%",
            rel_span * 100.0
        );
    }

    #[test]
    fn noiseless_variance_roundtrip_qubit_b() {
        let q = qubit(38.2);
        let delta = consts::ghz_to_joule(38.2);
        let (v0, vth, x0) = (0.290, 0.039, 5.5e-8);
        let p = QpModelParams::new(x0, delta, v0, vth).unwrap();
        let temps = grid12();
        let sig: Vec<f64> = temps
            .iter()
            .map(|&t| physkern::sigma2_qp(t, &q, &p).unwrap())
            .collect();
        let data = VarianceFitData {
            temperatures_k: temps,
            sigma2_qp: sig,
        };
        let out = fit_variance_vs_temperature(&data, x0, delta, &q).unwrap();
        assert!((out.v_eff0 / v0 - 1.0).abs() < 0.02, "V0 {}", out.v_eff0);
        assert!((out.v_eff_th / vth - 1.0).abs() < 0.02, "Vth {}", out.v_eff_th);
        assert!(out.v0_identifiable);
    }

    #[test]
    fn variance_fit_flags_missing_plateau() {
        // Data entirely in the thermally dominated regime: V⁰ unidentifiable.
        let q = qubit(38.2);
        let delta = consts::ghz_to_joule(38.2);
        let p = QpModelParams::new(5.5e-8, delta, 0.29, 0.039).unwrap();
        let temps: Vec<f64> = (0..6).map(|i| 0.125 + 0.006 * i as f64).collect();
        let sig: Vec<f64> = temps
            .iter()
            .map(|&t| physkern::sigma2_qp(t, &q, &p).unwrap())
            .collect();
        let data = VarianceFitData {
            temperatures_k: temps,
            sigma2_qp: sig,
        };
        let out = fit_variance_vs_temperature(&data, 5.5e-8, delta, &q).unwrap();
        assert!(!out.v0_identifiable);
        // The thermal volume is still well determined.
        assert!((out.v_eff_th / 0.039 - 1.0).abs() < 0.05);
    }
}
