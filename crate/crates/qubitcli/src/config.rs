//! Run configuration: a single TOML document with units encoded in key
//! names, schema-versioned and hashed so every artifact can be traced back
//! to the exact inputs that produced it.

use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use qnoise::consts;
use qnoise::physkern::Gamma2Law;
use qnoise::{PadGeometry, QpBirthDeath, QpModelParams, QubitParams, Tlf, Tls};

use crate::error::{io_at, CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub schema_version: u32,
    pub run: RunSection,
    pub measurement: MeasurementSection,
    pub analysis: AnalysisSection,
    pub diffusion: DiffusionSection,
    #[serde(default)]
    pub share: ShareSection,
    #[serde(rename = "qubit")]
    pub qubits: Vec<QubitSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub temperatures_mk: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSection {
    pub shot_count: u32,
    pub readout_std: f64,
    pub cadence_s: f64,
    pub duration_h: f64,
    pub decay_points: usize,
    /// Length of the decay-probe window in units of the predicted mean
    /// 1/Γ₁, so downward rate excursions stay inside the window.
    pub decay_span_means: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    pub bins_per_decade: u32,
    /// Optional fit band `[f_min, f_max]`; the estimator default is used
    /// when absent.
    #[serde(default)]
    pub band_hz: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSection {
    pub d_um2_per_s: f64,
    pub tau_s: f64,
    pub grid_nw: usize,
    pub grid_nh: usize,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShareSection {
    /// Groups of qubit ids constrained to one common x⁰_QP in the mean fit.
    #[serde(default)]
    pub x_qp0_groups: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QubitSection {
    pub id: String,
    pub ej_ghz: f64,
    pub ec_ghz: f64,
    pub fq_ghz: f64,
    pub delta_ghz: f64,
    pub junction_volume_um3: f64,
    pub x_qp0: f64,
    pub v_eff0_um3: f64,
    pub v_eff_th_um3: f64,
    pub gamma_tls_per_us: f64,
    pub qp_tau_r_s: f64,
    pub pad_width_um: f64,
    pub pad_height_um: f64,
    pub pad_gap_um: f64,
    pub tls: TlsSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TlsSection {
    pub fluctuators: usize,
    pub rate_min_hz: f64,
    pub rate_max_hz: f64,
    pub coupling_khz: f64,
    pub omega_t_min_mhz: f64,
    pub omega_t_max_mhz: f64,
    pub omega0_mhz: f64,
    pub gamma2_mhz: f64,
}

/// Validated configuration with effective overrides folded in and the
/// provenance hash of (file bytes, overrides).
#[derive(Debug, Clone)]
pub struct Config {
    pub raw: RawConfig,
    pub seed: u64,
    pub band_hz: Option<(f64, f64)>,
    pub hash: String,
}

fn conf(m: impl Into<String>) -> CliError {
    CliError::Config(m.into())
}

fn pos(v: f64, what: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(conf(format!("{what} must be positive and finite (got {v})")))
    }
}

impl Config {
    pub fn load(
        path: &Path,
        seed_override: Option<u64>,
        band_override: Option<(f64, f64)>,
    ) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(io_at(path))?;
        let text = String::from_utf8(bytes.clone())
            .map_err(|_| conf(format!("{}: not valid UTF-8", path.display())))?;
        let raw: RawConfig = toml::from_str(&text)
            .map_err(|e| conf(format!("{}: {e}", path.display())))?;

        let seed = seed_override.unwrap_or(raw.run.seed);
        let band_hz = band_override.or(raw.analysis.band_hz.map(|b| (b[0], b[1])));

        // Hash the effective inputs: the exact file bytes plus any CLI
        // overrides that change outputs (--parallel deliberately excluded).
        let mut h = Sha256::new();
        h.update(&bytes);
        h.update(format!("\nseed={seed}"));
        if let Some((lo, hi)) = band_hz {
            h.update(format!("\nband={:.16e},{:.16e}", lo, hi));
        }
        let hash = format!("{:x}", h.finalize());

        let cfg = Self {
            raw,
            seed,
            band_hz,
            hash,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let r = &self.raw;
        if r.schema_version != SCHEMA_VERSION {
            return Err(conf(format!(
                "unsupported schema_version {} (this build reads {SCHEMA_VERSION})",
                r.schema_version
            )));
        }
        if r.run.temperatures_mk.is_empty() {
            return Err(conf("run.temperatures_mk must not be empty"));
        }
        for &t in &r.run.temperatures_mk {
            pos(t, "run.temperatures_mk entries")?;
        }
        let m = &r.measurement;
        if !(m.readout_std >= 0.0) || !m.readout_std.is_finite() {
            return Err(conf("measurement.readout_std must be >= 0 and finite"));
        }
        pos(m.cadence_s, "measurement.cadence_s")?;
        pos(m.duration_h, "measurement.duration_h")?;
        pos(m.decay_span_means, "measurement.decay_span_means")?;
        if m.shot_count == 0 {
            return Err(conf("measurement.shot_count must be >= 1"));
        }
        if m.decay_points < 3 {
            return Err(conf("measurement.decay_points must be >= 3"));
        }
        if (m.duration_h * 3600.0 / m.cadence_s).round() < 16.0 {
            return Err(conf(
                "measurement duration/cadence give fewer than 16 samples per series",
            ));
        }
        if r.analysis.bins_per_decade == 0 {
            return Err(conf("analysis.bins_per_decade must be >= 1"));
        }
        if let Some((lo, hi)) = self.band_hz {
            if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                return Err(conf(format!(
                    "analysis band [{lo}, {hi}] must satisfy 0 < f_min < f_max"
                )));
            }
        }
        let d = &r.diffusion;
        pos(d.d_um2_per_s, "diffusion.d_um2_per_s")?;
        pos(d.tau_s, "diffusion.tau_s")?;
        if d.grid_nw == 0 || d.grid_nh == 0 {
            return Err(conf("diffusion grid counts must be >= 1"));
        }
        if r.qubits.is_empty() {
            return Err(conf("at least one [[qubit]] section is required"));
        }
        let mut ids = std::collections::BTreeSet::new();
        for q in &r.qubits {
            if q.id.is_empty()
                || !q
                    .id
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            {
                return Err(conf(format!(
                    "qubit id {:?} must be non-empty and use only [A-Za-z0-9_-]",
                    q.id
                )));
            }
            if !ids.insert(q.id.clone()) {
                return Err(conf(format!("duplicate qubit id {:?}", q.id)));
            }
            for (v, what) in [
                (q.ej_ghz, "ej_ghz"),
                (q.ec_ghz, "ec_ghz"),
                (q.fq_ghz, "fq_ghz"),
                (q.delta_ghz, "delta_ghz"),
                (q.junction_volume_um3, "junction_volume_um3"),
                (q.v_eff0_um3, "v_eff0_um3"),
                (q.v_eff_th_um3, "v_eff_th_um3"),
                (q.gamma_tls_per_us, "gamma_tls_per_us"),
                (q.qp_tau_r_s, "qp_tau_r_s"),
                (q.pad_width_um, "pad_width_um"),
                (q.pad_height_um, "pad_height_um"),
                (q.pad_gap_um, "pad_gap_um"),
            ] {
                pos(v, &format!("qubit {}: {what}", q.id))?;
            }
            if !(q.x_qp0 >= 0.0) || !q.x_qp0.is_finite() {
                return Err(conf(format!("qubit {}: x_qp0 must be >= 0", q.id)));
            }
            let t = &q.tls;
            if t.fluctuators == 0 || t.fluctuators > 22 {
                return Err(conf(format!(
                    "qubit {}: tls.fluctuators must be in [1, 22] \
                     (exact ground-truth enumeration is 2^K)",
                    q.id
                )));
            }
            for (v, what) in [
                (t.rate_min_hz, "tls.rate_min_hz"),
                (t.rate_max_hz, "tls.rate_max_hz"),
                (t.coupling_khz, "tls.coupling_khz"),
                (t.omega_t_min_mhz, "tls.omega_t_min_mhz"),
                (t.omega_t_max_mhz, "tls.omega_t_max_mhz"),
                (t.omega0_mhz, "tls.omega0_mhz"),
                (t.gamma2_mhz, "tls.gamma2_mhz"),
            ] {
                pos(v, &format!("qubit {}: {what}", q.id))?;
            }
            if t.rate_max_hz < t.rate_min_hz || t.omega_t_max_mhz < t.omega_t_min_mhz {
                return Err(conf(format!(
                    "qubit {}: tls ranges must satisfy min <= max",
                    q.id
                )));
            }
        }
        for group in &r.share.x_qp0_groups {
            for id in group {
                if !ids.contains(id) {
                    return Err(conf(format!(
                        "share.x_qp0_groups references unknown qubit {id:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn qubit(&self, id: &str) -> Result<&QubitSection> {
        self.raw
            .qubits
            .iter()
            .find(|q| q.id == id)
            .ok_or_else(|| conf(format!("unknown qubit id {id:?}")))
    }

}

impl QubitSection {
    pub fn params(&self) -> Result<QubitParams> {
        QubitParams::from_ghz(
            self.ej_ghz,
            self.ec_ghz,
            self.fq_ghz,
            self.delta_ghz,
            self.junction_volume_um3,
        )
        .map_err(|e| conf(format!("qubit {}: {e}", self.id)))
    }

    pub fn qp_model(&self) -> Result<QpModelParams> {
        QpModelParams::new(
            self.x_qp0,
            consts::ghz_to_joule(self.delta_ghz),
            self.v_eff0_um3,
            self.v_eff_th_um3,
        )
        .map_err(|e| conf(format!("qubit {}: {e}", self.id)))
    }

    pub fn geometry(&self, d: &DiffusionSection) -> Result<PadGeometry> {
        PadGeometry::new(self.pad_width_um, self.pad_height_um, self.pad_gap_um)
            .and_then(|g| g.with_grid(d.grid_nw, d.grid_nh))
            .map_err(|e| conf(format!("qubit {}: {e}", self.id)))
    }

    /// TLS with unit amplitude; fluctuator rates and splittings are laid out
    /// on deterministic geometric grids so a config fully pins the model.
    pub fn tls_unit(&self) -> Tls {
        let t = &self.tls;
        let k = t.fluctuators;
        let geo = |lo: f64, hi: f64, i: usize| {
            if k == 1 {
                lo
            } else {
                lo * (hi / lo).powf(i as f64 / (k - 1) as f64)
            }
        };
        let tlfs = (0..k)
            .map(|i| Tlf {
                g: consts::ghz_to_rad(t.coupling_khz * 1e-6),
                omega_t: consts::ghz_to_rad(geo(t.omega_t_min_mhz, t.omega_t_max_mhz, i) * 1e-3),
                switch_rate: geo(t.rate_min_hz, t.rate_max_hz, i),
            })
            .collect();
        Tls {
            amplitude_a: 1.0,
            gamma2: Gamma2Law::Constant(consts::ghz_to_rad(t.gamma2_mhz * 1e-3)),
            omega_delta: consts::ghz_to_rad(t.omega0_mhz * 1e-3),
            tlfs,
        }
    }

    /// One birth-death population reproducing the mean and variance of the
    /// two QP populations (non-equilibrium + thermal) at this temperature.
    /// Exact in the first two moments for cadences far above τ_r, where the
    /// sampled occupations are independent draws.
    pub fn qp_effective(&self, temperature_k: f64) -> Result<QpBirthDeath> {
        let delta = consts::ghz_to_joule(self.delta_ghz);
        let x_th = qnoise::physkern::x_qp_thermal(temperature_k, delta)
            .map_err(|e| CliError::Numeric(format!("qubit {}: {e}", self.id)))?;
        let m1 = self.x_qp0 + x_th;
        let wrap = |r: std::result::Result<QpBirthDeath, qnoise::synth::SynthError>| {
            r.map_err(|e| conf(format!("qubit {}: {e}", self.id)))
        };
        if m1 <= 0.0 {
            return wrap(QpBirthDeath::new(0.0, self.qp_tau_r_s, self.v_eff0_um3));
        }
        let m2 = self.x_qp0 / self.v_eff0_um3 + x_th / self.v_eff_th_um3;
        let v_eq = m1 / m2;
        let n_cp = consts::cooper_pair_density(delta);
        wrap(QpBirthDeath::from_mean(n_cp * m1 * v_eq, self.qp_tau_r_s, v_eq))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn minimal_toml() -> String {
        r#"
schema_version = 1

[run]
temperatures_mk = [7.0, 40.0, 80.0, 110.0, 153.0]
seed = 1

[measurement]
shot_count = 1
readout_std = 0.02
cadence_s = 480.0
duration_h = 48.0
decay_points = 50
decay_span_means = 6.0

[analysis]
bins_per_decade = 8

[diffusion]
d_um2_per_s = 6.0e8
tau_s = 4.1e-6
grid_nw = 12
grid_nh = 12

[share]
x_qp0_groups = [["B"]]

[[qubit]]
id = "B"
ej_ghz = 12.0
ec_ghz = 0.2
fq_ghz = 4.0
delta_ghz = 38.2
junction_volume_um3 = 0.013
x_qp0 = 5.5e-8
v_eff0_um3 = 0.290
v_eff_th_um3 = 0.039
gamma_tls_per_us = 6.2e-3
qp_tau_r_s = 1.0e-3
pad_width_um = 150.0
pad_height_um = 720.0
pad_gap_um = 150.0

[qubit.tls]
fluctuators = 8
rate_min_hz = 1.0e-5
rate_max_hz = 3.0e-3
coupling_khz = 110.0
omega_t_min_mhz = 50.0
omega_t_max_mhz = 500.0
omega0_mhz = 2.0
gamma2_mhz = 1.0
"#
        .to_string()
    }

    fn write_cfg(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn minimal_config_loads_and_validates() {
        let f = write_cfg(&minimal_toml());
        let cfg = Config::load(f.path(), None, None).unwrap();
        assert_eq!(cfg.seed, 1);
        assert_eq!(cfg.raw.qubits.len(), 1);
        assert_eq!(cfg.hash.len(), 64);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let f = write_cfg(&minimal_toml().replace("[run]", "[run]\nbogus_key = 3"));
        let err = Config::load(f.path(), None, None).unwrap_err();
        assert_eq!(err.code(), 2);
        assert!(err.to_string().contains("bogus_key"), "{err}");
    }

    #[test]
    fn future_schema_version_is_rejected() {
        let f = write_cfg(&minimal_toml().replace("schema_version = 1", "schema_version = 2"));
        let err = Config::load(f.path(), None, None).unwrap_err();
        assert!(err.to_string().contains("schema_version"), "{err}");
    }

    #[test]
    fn share_group_must_name_known_qubits() {
        let f = write_cfg(&minimal_toml().replace("[[\"B\"]]", "[[\"B\", \"Z\"]]"));
        let err = Config::load(f.path(), None, None).unwrap_err();
        assert!(err.to_string().contains("unknown qubit"), "{err}");
    }

    #[test]
    fn overrides_change_the_hash() {
        let f = write_cfg(&minimal_toml());
        let a = Config::load(f.path(), None, None).unwrap();
        let b = Config::load(f.path(), Some(9), None).unwrap();
        let c = Config::load(f.path(), None, Some((1e-4, 5e-4))).unwrap();
        assert_ne!(a.hash, b.hash);
        assert_ne!(a.hash, c.hash);
        assert_eq!(b.seed, 9);
        assert_eq!(c.band_hz, Some((1e-4, 5e-4)));
    }

    #[test]
    fn qp_effective_matches_two_population_moments() {
        let f = write_cfg(&minimal_toml());
        let cfg = Config::load(f.path(), None, None).unwrap();
        let q = &cfg.raw.qubits[0];
        let t = 0.140;
        let delta = consts::ghz_to_joule(q.delta_ghz);
        let x_th = qnoise::physkern::x_qp_thermal(t, delta).unwrap();
        let n_cp = consts::cooper_pair_density(delta);
        let qp = q.qp_effective(t).unwrap();

        // x-density mean and variance of the folded population vs the pair.
        let mu = qp.mean_occupancy();
        let s = 1.0 / (n_cp * qp.volume_um3);
        let mean_x = mu * s;
        let var_x = mu * s * s;
        let want_mean = q.x_qp0 + x_th;
        let want_var = (q.x_qp0 / q.v_eff0_um3 + x_th / q.v_eff_th_um3) / n_cp;
        assert!((mean_x / want_mean - 1.0).abs() < 1e-12);
        assert!((var_x / want_var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tls_grid_is_deterministic_and_geometric() {
        let f = write_cfg(&minimal_toml());
        let cfg = Config::load(f.path(), None, None).unwrap();
        let tls = cfg.raw.qubits[0].tls_unit();
        assert_eq!(tls.tlfs.len(), 8);
        assert!((tls.tlfs[0].switch_rate - 1e-5).abs() < 1e-18);
        assert!((tls.tlfs[7].switch_rate - 3e-3).abs() < 1e-12);
        let r1 = tls.tlfs[1].switch_rate / tls.tlfs[0].switch_rate;
        let r2 = tls.tlfs[5].switch_rate / tls.tlfs[4].switch_rate;
        assert!((r1 / r2 - 1.0).abs() < 1e-9);
    }
}
