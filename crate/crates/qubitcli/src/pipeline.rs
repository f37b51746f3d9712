//! The five pipeline stages behind the CLI verbs. Each stage reads and
//! writes columnar artifacts under one run directory:
//!
//! ```text
//! out/
//!   series/<qubit>_<temp>mK.csv      simulate: Γ₁(t) records
//!   spectra/<qubit>_<temp>mK.csv     analyze: log-binned PSDs
//!   fits/<qubit>_<temp>mK.csv        analyze: a/f + b decompositions
//!   tables/{mean,variance}_vs_t.csv  analyze: per-temperature summaries
//!   tables/analyze_failures.csv      analyze: per-file failure report
//!   tables/table1.csv                fit: recovered physical parameters
//!   diffusion/{map_<qubit>,summary}.csv
//!   report/…, manifest.csv           report: plot-ready files + checksums
//! ```
//!
//! Every artifact carries the config hash; all numbers are `{:.16e}`, so a
//! rerun with the same config and seed is byte-identical.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use qnoise::consts;
use qnoise::diffusion;
use qnoise::estimate::{
    self, EstimateError, MeanFitData, MeanFitOptions, ShareGroups, VarianceFitData,
};
use qnoise::physkern::{self, TlsEnsemble};
use qnoise::spectra::{self, Gamma1Series, SpectralFitOptions};
use qnoise::synth::{self, MeasurementConfig};

use crate::artifact::{fmt_f, series_stem, sha256_hex, sorted_csvs, Artifact};
use crate::config::{Config, MeasurementSection, QubitSection};
use crate::error::{io_at, CliError, Result};

/// Rates are stored as µs⁻¹ in files and s⁻¹ in memory.
const PER_US: f64 = 1e-6;
/// Variances and PSD levels: µs⁻² per s⁻².
const PER_US2: f64 = 1e-12;

pub struct Ctx {
    pub cfg: Config,
    pub out: PathBuf,
}

fn num(e: impl std::fmt::Display) -> CliError {
    CliError::Numeric(e.to_string())
}

fn conf(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn estimate_err(e: EstimateError) -> CliError {
    match e {
        EstimateError::InvalidData(_) | EstimateError::InsufficientSpan(_) => conf(e),
        other => num(other),
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the task with flat index `index`, decorrelated from the master
/// seed and from every other task.
pub fn task_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(1)))
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1).max(1) as f64)
        .collect()
}

/// Decay-probe grid designed before the run, from the model-predicted mean
/// rate: `decay_span_means` mean lifetimes, so downward excursions of the
/// true rate stay measurable.
fn measurement_for(ms: &MeasurementSection, mean_pred: f64) -> MeasurementConfig<f64> {
    MeasurementConfig {
        shot_count: ms.shot_count,
        decay_times_s: linspace(0.0, ms.decay_span_means / mean_pred, ms.decay_points),
        readout_std: ms.readout_std,
        cadence_s: ms.cadence_s,
        duration_s: ms.duration_h * 3600.0,
    }
}

/// Calibrated simulation inputs for one (qubit, temperature) cell.
struct CellModel {
    q: physkern::QubitParams<f64>,
    ens: TlsEnsemble<f64>,
    qp: synth::QpBirthDeath<f64>,
    m: MeasurementConfig<f64>,
    mean_pred: f64,
}

fn build_cell(cfg: &Config, qs: &QubitSection, t_k: f64) -> Result<CellModel> {
    let q = qs.params()?;
    let qp_model = qs.qp_model()?;
    let gamma_tls = qs.gamma_tls_per_us / PER_US;
    let mut tls = qs.tls_unit();
    tls.amplitude_a = synth::calibrate_tls_amplitude(&tls, t_k, gamma_tls).map_err(num)?;
    let ens = TlsEnsemble::new(vec![tls]).map_err(num)?;
    let qp = qs.qp_effective(t_k)?;
    let mean_pred = physkern::mean_gamma1(t_k, &q, gamma_tls, &qp_model).map_err(num)?;
    let m = measurement_for(&cfg.raw.measurement, mean_pred);
    Ok(CellModel {
        q,
        ens,
        qp,
        m,
        mean_pred,
    })
}

// ---------------------------------------------------------------- simulate

pub fn cmd_simulate(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let temps = &cfg.raw.run.temperatures_mk;
    let nt = temps.len();
    let tasks: Vec<(usize, usize)> = (0..cfg.raw.qubits.len())
        .flat_map(|qi| (0..nt).map(move |ti| (qi, ti)))
        .collect();

    tasks
        .par_iter()
        .map(|&(qi, ti)| {
            let qs = &cfg.raw.qubits[qi];
            let t_mk = temps[ti];
            let seed = task_seed(cfg.seed, (qi * nt + ti) as u64);
            simulate_one(ctx, qs, t_mk, seed)
        })
        .collect::<Result<Vec<()>>>()?;
    Ok(())
}

fn simulate_one(ctx: &Ctx, qs: &QubitSection, t_mk: f64, seed: u64) -> Result<()> {
    let t_k = t_mk * 1e-3;
    let cell = build_cell(&ctx.cfg, qs, t_k)?;
    let series =
        synth::simulate_experiment(&cell.q, &cell.ens, &cell.qp, &cell.m, t_k, seed).map_err(num)?;

    let ms = &ctx.cfg.raw.measurement;
    let mut art = Artifact::new(&ctx.cfg.hash, &["index", "time_s", "gamma1_per_us"]);
    art.push_meta("qubit", &qs.id);
    art.push_meta("temperature_mk", fmt_f(t_mk));
    art.push_meta("seed", seed.to_string());
    art.push_meta("provenance", "synthetic");
    art.push_meta("cadence_s", fmt_f(series.dt));
    art.push_meta("n_samples", series.samples.len().to_string());
    art.push_meta("mean_pred_per_us", fmt_f(cell.mean_pred * PER_US));
    art.push_meta("shot_count", ms.shot_count.to_string());
    art.push_meta("readout_std", fmt_f(ms.readout_std));
    art.push_meta("decay_points", ms.decay_points.to_string());
    art.push_meta(
        "decay_span_s",
        fmt_f(*cell.m.decay_times_s.last().expect("nonempty grid")),
    );
    if let Some(gt) = &series.ground_truth {
        art.push_meta("a_star_per_us2", fmt_f(gt.a_star * PER_US2));
        art.push_meta("b_star_per_us2_hz", fmt_f(gt.b_star * PER_US2));
    }
    for (i, &g) in series.samples.iter().enumerate() {
        art.push_row(vec![
            i.to_string(),
            fmt_f(i as f64 * series.dt),
            fmt_f(g * PER_US),
        ]);
    }
    art.write(&ctx.out.join("series").join(format!("{}.csv", series_stem(&qs.id, t_mk))))
}

// ----------------------------------------------------------------- analyze

fn check_hash(ctx: &Ctx, art: &Artifact, path: &Path) -> Result<()> {
    match art.meta_get("config_sha256") {
        Some(h) if h == ctx.cfg.hash => Ok(()),
        Some(h) => Err(conf(format!(
            "{}: config hash {h:.12}… does not match this run ({:.12}…); \
             refusing to mix artifacts from different runs",
            path.display(),
            ctx.cfg.hash
        ))),
        None => Err(conf(format!(
            "{}: missing # config_sha256= header",
            path.display()
        ))),
    }
}

struct Analyzed {
    qubit: String,
    t_mk: f64,
    mean_si: f64,
    n_samples: usize,
    fit: spectra::SpectralFit<f64>,
    sigma2_tls_band: f64,
    sigma2_qp_band: f64,
    sigma2_meas: f64,
    f_nyq: f64,
}

fn analyze_one(ctx: &Ctx, path: &Path) -> Result<Analyzed> {
    let art = Artifact::read(path)?;
    check_hash(ctx, &art, path)?;
    let qubit = art
        .meta_get("qubit")
        .ok_or_else(|| conf(format!("{}: missing # qubit= header", path.display())))?
        .to_string();
    let t_mk = art.meta_f64("temperature_mk", path)?;
    let dt = art.meta_f64("cadence_s", path)?;
    if art.rows.is_empty() {
        return Err(conf(format!("{}: no data rows", path.display())));
    }
    let gcol = art.col("gamma1_per_us", path)?;
    let samples = (0..art.rows.len())
        .map(|i| art.f64_cell(i, gcol, path).map(|g| g / PER_US))
        .collect::<Result<Vec<f64>>>()?;

    let series = Gamma1Series::new(samples, dt, t_mk * 1e-3, qubit.clone())
        .map_err(|e| conf(format!("{}: {e}", path.display())))?;
    let spec = spectra::psd_from_autocorr(&series).map_err(num)?;
    let binned = spectra::log_bin(&spec, ctx.cfg.raw.analysis.bins_per_decade).map_err(num)?;
    let opts = SpectralFitOptions {
        band: ctx.cfg.band_hz,
        ..SpectralFitOptions::default()
    };
    let fit = spectra::fit_one_over_f_plus_white_with(&binned, &opts).map_err(num)?;
    let bv = spectra::band_variances(&fit, fit.band.0, fit.band.1).map_err(num)?;

    // Known measurement-noise variance, reconstructible for synthetic series
    // that carry their decay-grid settings; zero for ingested measured data.
    let sigma2_meas = match (
        art.meta_get("decay_points"),
        art.meta_get("decay_span_s"),
        art.meta_get("readout_std"),
        art.meta_get("shot_count"),
    ) {
        (Some(np), Some(_), Some(_), Some(ns)) => {
            let np: usize = np
                .parse()
                .map_err(|_| conf(format!("{}: bad decay_points header", path.display())))?;
            let shots: u32 = ns
                .parse()
                .map_err(|_| conf(format!("{}: bad shot_count header", path.display())))?;
            let m = MeasurementConfig {
                shot_count: shots,
                decay_times_s: linspace(0.0, art.meta_f64("decay_span_s", path)?, np),
                readout_std: art.meta_f64("readout_std", path)?,
                cadence_s: dt,
                duration_s: dt * series.samples.len() as f64,
            };
            synth::decay_fit_variance(series.mean(), &m).map_err(num)?
        }
        _ => 0.0,
    };

    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| conf(format!("{}: unreadable file name", path.display())))?;

    let mut sp = Artifact::new(&ctx.cfg.hash, &["freq_hz", "psd_per_us2_hz", "count"]);
    sp.push_meta("qubit", &qubit);
    sp.push_meta("temperature_mk", fmt_f(t_mk));
    sp.push_meta("record_len", binned.record_len.to_string());
    sp.push_meta("dt_s", fmt_f(binned.dt));
    sp.push_meta(
        "bins_per_decade",
        ctx.cfg.raw.analysis.bins_per_decade.to_string(),
    );
    let counts = binned.counts.as_ref().expect("binned spectra carry counts");
    for ((&f, &s), &c) in binned.freqs.iter().zip(&binned.psd).zip(counts) {
        sp.push_row(vec![fmt_f(f), fmt_f(s * PER_US2), c.to_string()]);
    }
    sp.write(&ctx.out.join("spectra").join(format!("{stem}.csv")))?;

    let mut fd = Artifact::new(
        &ctx.cfg.hash,
        &[
            "a_per_us2",
            "b_per_us2_hz",
            "se_a_per_us2",
            "se_b_per_us2_hz",
            "band_lo_hz",
            "band_hi_hz",
            "sigma2_tls_per_us2",
            "sigma2_qp_per_us2",
            "residual_norm",
            "iterations",
        ],
    );
    fd.push_meta("qubit", &qubit);
    fd.push_meta("temperature_mk", fmt_f(t_mk));
    fd.push_row(vec![
        fmt_f(fit.a * PER_US2),
        fmt_f(fit.b * PER_US2),
        fmt_f(fit.se_a.unwrap_or(f64::NAN) * PER_US2),
        fmt_f(fit.se_b.unwrap_or(f64::NAN) * PER_US2),
        fmt_f(fit.band.0),
        fmt_f(fit.band.1),
        fmt_f(bv.sigma2_tls * PER_US2),
        fmt_f(bv.sigma2_qp * PER_US2),
        fmt_f(fit.residual_norm),
        fit.iterations.to_string(),
    ]);
    fd.write(&ctx.out.join("fits").join(format!("{stem}.csv")))?;

    Ok(Analyzed {
        qubit,
        t_mk,
        mean_si: series.mean(),
        n_samples: series.samples.len(),
        sigma2_tls_band: bv.sigma2_tls,
        sigma2_qp_band: bv.sigma2_qp,
        sigma2_meas,
        f_nyq: series.f_nyquist(),
        fit,
    })
}

pub fn cmd_analyze(ctx: &Ctx) -> Result<()> {
    let series_dir = ctx.out.join("series");
    if !series_dir.is_dir() {
        return Err(conf(format!(
            "{}: no series directory; run simulate first",
            series_dir.display()
        )));
    }
    let files = sorted_csvs(&series_dir)?;
    if files.is_empty() {
        return Err(conf(format!(
            "{}: no series files to analyze",
            series_dir.display()
        )));
    }

    let results: Vec<(PathBuf, Result<Analyzed>)> = files
        .par_iter()
        .map(|p| (p.clone(), analyze_one(ctx, p)))
        .collect();

    let out_prefix = format!("{}/", ctx.out.display());
    let mut analyzed = Vec::new();
    let mut failures = Artifact::new(&ctx.cfg.hash, &["file", "exit_class", "message"]);
    let mut n_failed = 0usize;
    let mut first_err: Option<CliError> = None;
    for (path, r) in results {
        match r {
            Ok(a) => analyzed.push(a),
            Err(e) => {
                n_failed += 1;
                let name = path
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                eprintln!("analyze: {name}: {e}");
                // Strip the run directory so the report stays byte-stable
                // across differently named run directories.
                let msg = e.to_string().replace(&out_prefix, "");
                failures.push_row(vec![name, e.code().to_string(), msg]);
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    failures.write(&ctx.out.join("tables").join("analyze_failures.csv"))?;

    if let Some(e) = first_err {
        if analyzed.is_empty() {
            return Err(e);
        }
        eprintln!(
            "analyze: {n_failed} of {} series failed; see tables/analyze_failures.csv",
            files.len()
        );
    }

    analyzed.sort_by(|x, y| {
        (x.qubit.as_str(), x.t_mk)
            .partial_cmp(&(y.qubit.as_str(), y.t_mk))
            .expect("finite temperatures")
    });

    let mut mean = Artifact::new(
        &ctx.cfg.hash,
        &["qubit", "temperature_mk", "mean_per_us", "n_samples"],
    );
    for a in &analyzed {
        mean.push_row(vec![
            a.qubit.clone(),
            fmt_f(a.t_mk),
            fmt_f(a.mean_si * PER_US),
            a.n_samples.to_string(),
        ]);
    }
    mean.write(&ctx.out.join("tables").join("mean_vs_t.csv"))?;

    let mut var = Artifact::new(
        &ctx.cfg.hash,
        &[
            "qubit",
            "temperature_mk",
            "sigma2_tls_per_us2",
            "sigma2_qp_per_us2",
            "sigma2_meas_per_us2",
            "band_lo_hz",
            "band_hi_hz",
            "f_nyq_hz",
        ],
    );
    for a in &analyzed {
        var.push_row(vec![
            a.qubit.clone(),
            fmt_f(a.t_mk),
            fmt_f(a.sigma2_tls_band * PER_US2),
            fmt_f(a.sigma2_qp_band * PER_US2),
            fmt_f(a.sigma2_meas * PER_US2),
            fmt_f(a.fit.band.0),
            fmt_f(a.fit.band.1),
            fmt_f(a.f_nyq),
        ]);
    }
    var.write(&ctx.out.join("tables").join("variance_vs_t.csv"))
}

// --------------------------------------------------------------------- fit

struct VarRow {
    t_k: f64,
    sigma2_qp_full: f64,
}

pub fn cmd_fit(ctx: &Ctx) -> Result<()> {
    let tables = ctx.out.join("tables");
    let mean_path = tables.join("mean_vs_t.csv");
    let var_path = tables.join("variance_vs_t.csv");
    for p in [&mean_path, &var_path] {
        if !p.is_file() {
            return Err(conf(format!(
                "{}: missing table; run analyze first",
                p.display()
            )));
        }
    }
    let mean_art = Artifact::read(&mean_path)?;
    let var_art = Artifact::read(&var_path)?;
    check_hash(ctx, &mean_art, &mean_path)?;
    check_hash(ctx, &var_art, &var_path)?;

    let (qc, tc, mc) = (
        mean_art.col("qubit", &mean_path)?,
        mean_art.col("temperature_mk", &mean_path)?,
        mean_art.col("mean_per_us", &mean_path)?,
    );
    let mut mean_rows: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for i in 0..mean_art.rows.len() {
        let q = mean_art.rows[i][qc].clone();
        let t_k = mean_art.f64_cell(i, tc, &mean_path)? * 1e-3;
        let mu = mean_art.f64_cell(i, mc, &mean_path)? / PER_US;
        mean_rows.entry(q).or_default().push((t_k, mu));
    }

    let (vq, vt, vs, vm, vlo, vhi, vny) = (
        var_art.col("qubit", &var_path)?,
        var_art.col("temperature_mk", &var_path)?,
        var_art.col("sigma2_qp_per_us2", &var_path)?,
        var_art.col("sigma2_meas_per_us2", &var_path)?,
        var_art.col("band_lo_hz", &var_path)?,
        var_art.col("band_hi_hz", &var_path)?,
        var_art.col("f_nyq_hz", &var_path)?,
    );
    let mut var_rows: BTreeMap<String, Vec<VarRow>> = BTreeMap::new();
    for i in 0..var_art.rows.len() {
        let q = var_art.rows[i][vq].clone();
        let t_k = var_art.f64_cell(i, vt, &var_path)? * 1e-3;
        let band_qp = var_art.f64_cell(i, vs, &var_path)? / PER_US2;
        let meas = var_art.f64_cell(i, vm, &var_path)? / PER_US2;
        let (lo, hi) = (
            var_art.f64_cell(i, vlo, &var_path)?,
            var_art.f64_cell(i, vhi, &var_path)?,
        );
        let f_nyq = var_art.f64_cell(i, vny, &var_path)?;
        // The white level integrates to b·f_Nyquist over the full one-sided
        // band; rescale the band-limited integral and subtract the known
        // measurement-noise contribution.
        let sigma2_qp_full = (band_qp * f_nyq / (hi - lo) - meas).max(0.0);
        var_rows.entry(q).or_default().push(VarRow {
            t_k,
            sigma2_qp_full,
        });
    }

    let mut datasets = Vec::new();
    for qs in &ctx.cfg.raw.qubits {
        let rows = match mean_rows.get(&qs.id) {
            Some(r) => r,
            None => continue,
        };
        if rows.len() < 5 {
            return Err(conf(format!(
                "qubit {}: {} analyzed temperatures; the mean fit needs at least 5",
                qs.id,
                rows.len()
            )));
        }
        let mut rows = rows.clone();
        rows.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite temperatures"));
        datasets.push(MeanFitData {
            qubit_id: qs.id.clone(),
            qubit: qs.params()?,
            temperatures_k: rows.iter().map(|r| r.0).collect(),
            mean_gamma1: rows.iter().map(|r| r.1).collect(),
        });
    }
    if datasets.is_empty() {
        return Err(conf("no analyzed qubits to fit"));
    }

    let share = ShareGroups {
        groups: ctx.cfg.raw.share.x_qp0_groups.clone(),
    };
    let outcome = estimate::fit_mean_vs_temperature(&datasets, &share, &MeanFitOptions::default())
        .map_err(estimate_err)?;

    let mut t1 = Artifact::new(
        &ctx.cfg.hash,
        &[
            "qubit",
            "x_qp0",
            "delta_ghz",
            "v_eff0_um3",
            "v_eff_th_um3",
            "gamma_tls_per_us",
        ],
    );
    for mf in &outcome.per_qubit {
        let qs = ctx.cfg.qubit(&mf.qubit_id)?;
        let rows = var_rows
            .get(&mf.qubit_id)
            .ok_or_else(|| conf(format!("qubit {}: no variance rows", mf.qubit_id)))?;
        let data = VarianceFitData {
            temperatures_k: rows.iter().map(|r| r.t_k).collect(),
            sigma2_qp: rows.iter().map(|r| r.sigma2_qp_full).collect(),
        };
        let vo = estimate::fit_variance_vs_temperature(&data, mf.x_qp0, mf.delta, &qs.params()?)
            .map_err(estimate_err)?;
        t1.push_row(vec![
            mf.qubit_id.clone(),
            fmt_f(mf.x_qp0),
            fmt_f(mf.delta / consts::ghz_to_joule(1.0)),
            fmt_f(vo.v_eff0),
            fmt_f(vo.v_eff_th),
            fmt_f(mf.gamma_tls * PER_US),
        ]);
    }
    t1.write(&tables.join("table1.csv"))
}

// ----------------------------------------------------------------- diffuse

pub fn cmd_diffuse(ctx: &Ctx) -> Result<()> {
    let d = &ctx.cfg.raw.diffusion;
    let mut summary = Artifact::new(
        &ctx.cfg.hash,
        &[
            "qubit",
            "pad_width_um",
            "pad_height_um",
            "pad_gap_um",
            "x0_average",
            "ratio_to_first",
        ],
    );
    summary.push_meta("d_um2_per_s", fmt_f(d.d_um2_per_s));
    summary.push_meta("tau_s", fmt_f(d.tau_s));
    let mut first_avg: Option<f64> = None;
    for qs in &ctx.cfg.raw.qubits {
        let geom = qs.geometry(d)?;
        let pm = diffusion::path_map(&geom, d.d_um2_per_s, d.tau_s, None).map_err(num)?;

        let mut map = Artifact::new(
            &ctx.cfg.hash,
            &["x_um", "y_um", "path_length_um", "fraction"],
        );
        map.push_meta("qubit", &qs.id);
        map.push_meta("grid_nw", d.grid_nw.to_string());
        map.push_meta("grid_nh", d.grid_nh.to_string());
        for i in 0..pm.points.len() {
            map.push_row(vec![
                fmt_f(pm.points[i].0),
                fmt_f(pm.points[i].1),
                fmt_f(pm.lengths[i]),
                fmt_f(pm.fractions[i]),
            ]);
        }
        map.write(&ctx.out.join("diffusion").join(format!("map_{}.csv", qs.id)))?;

        let base = *first_avg.get_or_insert(pm.mean);
        summary.push_row(vec![
            qs.id.clone(),
            fmt_f(qs.pad_width_um),
            fmt_f(qs.pad_height_um),
            fmt_f(qs.pad_gap_um),
            fmt_f(pm.mean),
            fmt_f(pm.mean / base),
        ]);
    }
    summary.write(&ctx.out.join("diffusion").join("summary.csv"))
}

// ------------------------------------------------------------------ report

struct Table1Row {
    x_qp0: f64,
    delta_j: f64,
    v_eff0: f64,
    v_eff_th: f64,
    gamma_tls_si: f64,
}

fn read_table1(ctx: &Ctx, path: &Path) -> Result<BTreeMap<String, Table1Row>> {
    let art = Artifact::read(path)?;
    check_hash(ctx, &art, path)?;
    let (q, x0, dg, v0, vth, gt) = (
        art.col("qubit", path)?,
        art.col("x_qp0", path)?,
        art.col("delta_ghz", path)?,
        art.col("v_eff0_um3", path)?,
        art.col("v_eff_th_um3", path)?,
        art.col("gamma_tls_per_us", path)?,
    );
    let mut out = BTreeMap::new();
    for i in 0..art.rows.len() {
        out.insert(
            art.rows[i][q].clone(),
            Table1Row {
                x_qp0: art.f64_cell(i, x0, path)?,
                delta_j: consts::ghz_to_joule(art.f64_cell(i, dg, path)?),
                v_eff0: art.f64_cell(i, v0, path)?,
                v_eff_th: art.f64_cell(i, vth, path)?,
                gamma_tls_si: art.f64_cell(i, gt, path)? / PER_US,
            },
        );
    }
    Ok(out)
}

fn walk_files_sorted(root: &Path) -> Result<Vec<PathBuf>> {
    fn rec(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(io_at(dir))?
            .map(|e| e.map(|e| e.path()).map_err(io_at(dir)))
            .collect::<Result<_>>()?;
        entries.sort();
        for p in entries {
            if p.is_dir() {
                rec(&p, out)?;
            } else {
                out.push(p);
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    rec(root, &mut out)?;
    Ok(out)
}

pub fn cmd_report(ctx: &Ctx) -> Result<()> {
    let missing: Vec<String> = ["series", "spectra", "fits", "tables", "diffusion"]
        .iter()
        .filter(|d| !ctx.out.join(d).is_dir())
        .map(|d| d.to_string())
        .chain(
            ["tables/mean_vs_t.csv", "tables/variance_vs_t.csv", "tables/table1.csv"]
                .iter()
                .filter(|f| !ctx.out.join(f).is_file())
                .map(|f| f.to_string()),
        )
        .collect();
    if !missing.is_empty() {
        return Err(conf(format!(
            "missing pipeline outputs under {}: {}; run the earlier stages first",
            ctx.out.display(),
            missing.join(", ")
        )));
    }

    // No mixed-run reports: every input must carry this run's config hash.
    for dir in ["series", "spectra", "fits", "tables", "diffusion"] {
        for p in sorted_csvs(&ctx.out.join(dir))? {
            let art = Artifact::read(&p)?;
            check_hash(ctx, &art, &p)?;
        }
    }

    let table1_path = ctx.out.join("tables").join("table1.csv");
    let table1 = read_table1(ctx, &table1_path)?;

    // Spectrum + fitted model per series.
    for spath in sorted_csvs(&ctx.out.join("spectra"))? {
        let stem = spath
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| conf(format!("{}: unreadable file name", spath.display())))?
            .to_string();
        let fpath = ctx.out.join("fits").join(format!("{stem}.csv"));
        if !fpath.is_file() {
            return Err(conf(format!(
                "{}: no matching fit document {}",
                spath.display(),
                fpath.display()
            )));
        }
        let sp = Artifact::read(&spath)?;
        let fd = Artifact::read(&fpath)?;
        let (fc, pc) = (sp.col("freq_hz", &spath)?, sp.col("psd_per_us2_hz", &spath)?);
        let a = fd.f64_cell(0, fd.col("a_per_us2", &fpath)?, &fpath)?;
        let b = fd.f64_cell(0, fd.col("b_per_us2_hz", &fpath)?, &fpath)?;

        let mut fig = Artifact::new(
            &ctx.cfg.hash,
            &["freq_hz", "psd_per_us2_hz", "model_per_us2_hz"],
        );
        for (k, v) in &sp.meta {
            if k != "schema" && k != "config_sha256" {
                fig.push_meta(k, v.clone());
            }
        }
        for i in 0..sp.rows.len() {
            let f = sp.f64_cell(i, fc, &spath)?;
            fig.push_row(vec![
                fmt_f(f),
                sp.rows[i][pc].clone(),
                fmt_f(a / f + b),
            ]);
        }
        fig.write(&ctx.out.join("report").join(format!("fig1b_{stem}.csv")))?;
    }

    // Mean vs temperature with fitted model components per qubit.
    let mean_path = ctx.out.join("tables").join("mean_vs_t.csv");
    let mean_art = Artifact::read(&mean_path)?;
    let (qc, tc, mc) = (
        mean_art.col("qubit", &mean_path)?,
        mean_art.col("temperature_mk", &mean_path)?,
        mean_art.col("mean_per_us", &mean_path)?,
    );
    let mut fig2: BTreeMap<String, Artifact> = BTreeMap::new();
    for i in 0..mean_art.rows.len() {
        let id = mean_art.rows[i][qc].clone();
        let row = table1
            .get(&id)
            .ok_or_else(|| conf(format!("qubit {id}: in mean table but not table1.csv")))?;
        let qs = ctx.cfg.qubit(&id)?;
        let mut q = qs.params()?;
        q.delta = row.delta_j;
        let t_k = mean_art.f64_cell(i, tc, &mean_path)? * 1e-3;
        let eta = physkern::eta(t_k, &q).map_err(num)?;
        let x_th = physkern::x_qp_thermal(t_k, row.delta_j).map_err(num)?;
        let model_qp = eta * (row.x_qp0 + x_th);
        let art = fig2.entry(id.clone()).or_insert_with(|| {
            let mut a = Artifact::new(
                &ctx.cfg.hash,
                &[
                    "temperature_mk",
                    "mean_per_us",
                    "model_tls_per_us",
                    "model_qp_per_us",
                    "model_total_per_us",
                ],
            );
            a.push_meta("qubit", &id);
            a
        });
        art.push_row(vec![
            mean_art.rows[i][tc].clone(),
            mean_art.rows[i][mc].clone(),
            fmt_f(row.gamma_tls_si * PER_US),
            fmt_f(model_qp * PER_US),
            fmt_f((row.gamma_tls_si + model_qp) * PER_US),
        ]);
    }
    for (id, art) in &fig2 {
        art.write(&ctx.out.join("report").join(format!("fig2_{id}.csv")))?;
    }

    // Variance components vs temperature with the fitted volume model.
    let var_path = ctx.out.join("tables").join("variance_vs_t.csv");
    let var_art = Artifact::read(&var_path)?;
    let (vq, vt, vtls, vqp, vm, vlo, vhi, vny) = (
        var_art.col("qubit", &var_path)?,
        var_art.col("temperature_mk", &var_path)?,
        var_art.col("sigma2_tls_per_us2", &var_path)?,
        var_art.col("sigma2_qp_per_us2", &var_path)?,
        var_art.col("sigma2_meas_per_us2", &var_path)?,
        var_art.col("band_lo_hz", &var_path)?,
        var_art.col("band_hi_hz", &var_path)?,
        var_art.col("f_nyq_hz", &var_path)?,
    );
    let mut fig3: BTreeMap<String, Artifact> = BTreeMap::new();
    for i in 0..var_art.rows.len() {
        let id = var_art.rows[i][vq].clone();
        let row = table1
            .get(&id)
            .ok_or_else(|| conf(format!("qubit {id}: in variance table but not table1.csv")))?;
        let qs = ctx.cfg.qubit(&id)?;
        let mut q = qs.params()?;
        q.delta = row.delta_j;
        let t_k = var_art.f64_cell(i, vt, &var_path)? * 1e-3;
        let eta = physkern::eta(t_k, &q).map_err(num)?;
        let x_th = physkern::x_qp_thermal(t_k, row.delta_j).map_err(num)?;
        let n_cp = consts::cooper_pair_density(row.delta_j);
        let model_qp =
            eta * eta * (row.x_qp0 / (n_cp * row.v_eff0) + x_th / (n_cp * row.v_eff_th));
        let band_qp = var_art.f64_cell(i, vqp, &var_path)? / PER_US2;
        let meas = var_art.f64_cell(i, vm, &var_path)? / PER_US2;
        let (lo, hi) = (
            var_art.f64_cell(i, vlo, &var_path)?,
            var_art.f64_cell(i, vhi, &var_path)?,
        );
        let f_nyq = var_art.f64_cell(i, vny, &var_path)?;
        let measured_full = (band_qp * f_nyq / (hi - lo) - meas).max(0.0);
        let art = fig3.entry(id.clone()).or_insert_with(|| {
            let mut a = Artifact::new(
                &ctx.cfg.hash,
                &[
                    "temperature_mk",
                    "sigma2_qp_per_us2",
                    "sigma2_tls_per_us2",
                    "model_qp_per_us2",
                ],
            );
            a.push_meta("qubit", &id);
            a
        });
        art.push_row(vec![
            var_art.rows[i][vt].clone(),
            fmt_f(measured_full * PER_US2),
            var_art.rows[i][vtls].clone(),
            fmt_f(model_qp * PER_US2),
        ]);
    }
    for (id, art) in &fig3 {
        art.write(&ctx.out.join("report").join(format!("fig3_{id}.csv")))?;
    }

    // Table I in the report bundle, re-rendered canonically.
    Artifact::read(&table1_path)?.write(&ctx.out.join("report").join("table1.csv"))?;

    // Manifest over everything in the run directory.
    let manifest_path = ctx.out.join("manifest.csv");
    let mut man = Artifact::new(&ctx.cfg.hash, &["path", "sha256"]);
    man.push_meta("seed", ctx.cfg.seed.to_string());
    man.push_meta("tool_version", env!("CARGO_PKG_VERSION"));
    for p in walk_files_sorted(&ctx.out)? {
        if p == manifest_path {
            continue;
        }
        let rel = p
            .strip_prefix(&ctx.out)
            .map_err(|_| CliError::Io(format!("{}: outside run directory", p.display())))?;
        let bytes = std::fs::read(&p).map_err(io_at(&p))?;
        man.push_row(vec![
            rel.to_string_lossy().replace('\\', "/"),
            sha256_hex(&bytes),
        ]);
    }
    man.write(&manifest_path)
}

pub fn cmd_all(ctx: &Ctx) -> Result<()> {
    cmd_simulate(ctx)?;
    cmd_analyze(ctx)?;
    cmd_fit(ctx)?;
    cmd_diffuse(ctx)?;
    cmd_report(ctx)
}
