//! Phenomenological 1D quasiparticle diffusion toward the junction.
//!
//! A phonon burst creates quasiparticles at a point on a capacitor pad. They
//! diffuse toward the Josephson junction while being trapped or recombining
//! at rate 1/τ:
//!
//! ```text
//! ∂ρ/∂t = D·∂²ρ/∂x² − ρ/τ + j,     x ∈ [0, L],  zero-flux ends
//! ```
//!
//! with injection at x ≈ 0 and the junction at x = L. The observable is the
//! time-integrated junction density, reported as a dimensionless fraction of
//! what the same decaying population would deliver if it were spread
//! uniformly from the start:
//!
//! ```text
//! x₀(L) = ∫₀^tmax ρ(L,t)dt / ( τ·(1 − e^{−tmax/τ}) / L ).
//! ```
//!
//! As τ → ∞ the fraction tends to 1 for any L (nothing is lost, only
//! delayed); for finite τ it decays with L on the diffusion length λ = √(Dτ),
//! which is what makes large pads collect fewer non-equilibrium QPs per unit
//! area than small ones.
//!
//! A 2D pad is reduced to an ensemble of 1D problems: each injection point
//! contributes a path of length equal to its straight-line distance to the
//! junction, and `path_average` averages the per-path fractions uniformly.

use rayon::prelude::*;

use crate::Real;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffusionError {
    #[error("invalid diffusion parameters: {0}")]
    InvalidParams(String),
    #[error("invalid pad geometry: {0}")]
    InvalidGeometry(String),
    #[error("not converged in {what}: {hint}")]
    NotConverged { what: &'static str, hint: String },
}

pub type Result<T> = std::result::Result<T, DiffusionError>;

/// Default number of grid cells for the production solves (dx = L/400).
const DEFAULT_CELLS: usize = 400;
/// Above this many injection points, `path_average` switches from exact
/// per-point solves to a dense interpolant in the path length.
const EXACT_EVAL_LIMIT: usize = 4096;
/// Number of exact solves backing the interpolant.
const INTERP_NODES: usize = 192;

/// One capacitor pad with its gap and junction, in the plane coordinate
/// system where the gap is centered on the origin: the pad occupies
/// `x ∈ [gap/2, gap/2 + width]`, `y ∈ [−height/2, height/2]`, and the
/// junction sits in the gap (default: the origin).
#[derive(Debug, Clone, PartialEq)]
pub struct PadGeometry<T> {
    /// Pad extent perpendicular to the gap, µm.
    pub width_um: T,
    /// Pad extent along the gap, µm.
    pub height_um: T,
    /// Gap between the pads, µm.
    pub gap_um: T,
    /// Junction position `(x, y)`, µm.
    pub junction_um: (T, T),
    /// Target injection-grid spacing, µm.
    pub grid_resolution_um: T,
    /// Explicit injection-grid shape `(n_width, n_height)`; overrides the
    /// resolution when set.
    pub grid_counts: Option<(usize, usize)>,
}

impl<T: Real> PadGeometry<T> {
    /// Geometry with the junction at the origin and a grid resolution that
    /// puts at least 50 injection points along each pad dimension.
    pub fn new(width_um: T, height_um: T, gap_um: T) -> Result<Self> {
        let res = (width_um.min(height_um)) / T::c(50.0);
        let g = Self {
            width_um,
            height_um,
            gap_um,
            junction_um: (T::zero(), T::zero()),
            grid_resolution_um: res,
            grid_counts: None,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn with_resolution(mut self, res_um: T) -> Result<Self> {
        self.grid_resolution_um = res_um;
        self.grid_counts = None;
        self.validate()?;
        Ok(self)
    }

    /// Fix the injection grid to exactly `nw × nh` cell-centered points.
    pub fn with_grid(mut self, nw: usize, nh: usize) -> Result<Self> {
        if nw == 0 || nh == 0 {
            return Err(DiffusionError::InvalidGeometry(
                "grid counts must be at least 1".into(),
            ));
        }
        self.grid_counts = Some((nw, nh));
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DiffusionError::InvalidGeometry(m.to_string()));
        if !(self.width_um > T::zero())
            || !(self.height_um > T::zero())
            || !(self.gap_um > T::zero())
        {
            return bad("pad dimensions and gap must be positive");
        }
        if !(self.grid_resolution_um > T::zero()) {
            return bad("grid resolution must be positive");
        }
        let (jx, jy) = self.junction_um;
        let half_gap = self.gap_um * T::c(0.5);
        let half_h = self.height_um * T::c(0.5);
        if jx.abs() > half_gap || jy.abs() > half_h {
            return bad("junction must lie in the gap adjacent to the pad");
        }
        Ok(())
    }

    fn axis_count(dim: T, res: T) -> usize {
        let n = (dim / res).ceil().f64();
        (n as usize).max(1)
    }

    /// Cell-centered injection grid covering the pad.
    pub fn injection_points(&self) -> Vec<(T, T)> {
        let (nw, nh) = self.grid_counts.unwrap_or_else(|| {
            (
                Self::axis_count(self.width_um, self.grid_resolution_um),
                Self::axis_count(self.height_um, self.grid_resolution_um),
            )
        });
        let x0 = self.gap_um * T::c(0.5);
        let y0 = -self.height_um * T::c(0.5);
        let dw = self.width_um / T::c(nw as f64);
        let dh = self.height_um / T::c(nh as f64);
        let mut pts = Vec::with_capacity(nw * nh);
        for iy in 0..nh {
            let y = y0 + (T::c(iy as f64) + T::c(0.5)) * dh;
            for ix in 0..nw {
                let x = x0 + (T::c(ix as f64) + T::c(0.5)) * dw;
                pts.push((x, y));
            }
        }
        pts
    }

    /// Straight-line distance from an injection point to the junction.
    pub fn path_length(&self, point: (T, T)) -> T {
        let dx = point.0 - self.junction_um.0;
        let dy = point.1 - self.junction_um.1;
        dx.hypot(dy)
    }
}

/// State of one 1D solve: density on the node-centered grid `x_i = i·dx`,
/// `i = 0..=n`, with `x_n = L`.
#[derive(Debug, Clone)]
pub struct DiffusionField<T> {
    pub rho: Vec<T>,
    pub dx: T,
    pub t: T,
    /// Diffusion constant, µm²/s.
    pub d: T,
    /// Trapping/recombination time, s; `T::infinity()` disables decay.
    pub tau: T,
    /// Number of negative values clipped to zero so far.
    pub clip_count: u64,
    /// Most negative pre-clip value seen (0 if none).
    pub worst_undershoot: T,
}

fn check_params<T: Real>(l: T, d: T, tau: T) -> Result<()> {
    let bad = |m: &str| Err(DiffusionError::InvalidParams(m.to_string()));
    if !(l > T::zero()) || !l.is_finite() {
        return bad("length must be positive and finite");
    }
    if !(d > T::zero()) || !d.is_finite() {
        return bad("diffusion constant must be positive and finite");
    }
    if !(tau > T::zero()) {
        return bad("tau must be positive (infinity allowed)");
    }
    Ok(())
}

impl<T: Real> DiffusionField<T> {
    /// Zero-density field on `[0, L]` with `n_cells` intervals.
    pub fn zeros(l: T, n_cells: usize, d: T, tau: T) -> Result<Self> {
        check_params(l, d, tau)?;
        if n_cells < 4 {
            return Err(DiffusionError::InvalidParams(
                "need at least 4 grid cells".into(),
            ));
        }
        Ok(Self {
            rho: vec![T::zero(); n_cells + 1],
            dx: l / T::c(n_cells as f64),
            t: T::zero(),
            d,
            tau,
            clip_count: 0,
            worst_undershoot: T::zero(),
        })
    }

    /// Uniform density field.
    pub fn uniform(l: T, n_cells: usize, d: T, tau: T, value: T) -> Result<Self> {
        let mut f = Self::zeros(l, n_cells, d, tau)?;
        f.rho.fill(value);
        Ok(f)
    }

    /// Unit injected mass as a top-hat over the first two grid cells at
    /// x ≈ 0 (height 1/(2dx) on `[0, 2dx]`).
    pub fn injected(l: T, n_cells: usize, d: T, tau: T) -> Result<Self> {
        let mut f = Self::zeros(l, n_cells, d, tau)?;
        let v = (T::c(2.0) * f.dx).recip();
        f.rho[0] = v;
        f.rho[1] = v;
        f.rho[2] = v * T::c(0.5);
        Ok(f)
    }

    pub fn len(&self) -> T {
        self.dx * T::c(self.rho.len() as f64 - 1.0)
    }

    /// Trapezoid mass `∫ρ dx`.
    pub fn mass(&self) -> T {
        let n = self.rho.len() - 1;
        let mut m = (self.rho[0] + self.rho[n]) * T::c(0.5);
        for &r in &self.rho[1..n] {
            m += r;
        }
        m * self.dx
    }

    /// Density at the junction end x = L.
    pub fn rho_end(&self) -> T {
        *self.rho.last().unwrap()
    }

    /// One Crank-Nicolson step of size `dt`, optional volumetric source `j`
    /// (same grid, treated as constant over the step).
    pub fn step_with_source(&mut self, dt: T, source: Option<&[T]>) {
        let n = self.rho.len() - 1;
        let half = T::c(0.5);
        let r = self.d * dt / (self.dx * self.dx);
        let s = if self.tau.is_finite() {
            dt * half / self.tau
        } else {
            T::zero()
        };
        let one = T::one();
        // Row i: sub·ρ_{i-1} + diag·ρ_i + sup·ρ_{i+1}; Neumann ends fold the
        // ghost node into a doubled off-diagonal.
        let diag = one + r + s;
        let off = -half * r;
        let rhs_diag = one - r - s;
        let rhs_off = half * r;

        let mut rhs = vec![T::zero(); n + 1];
        rhs[0] = rhs_diag * self.rho[0] + T::c(2.0) * rhs_off * self.rho[1];
        for i in 1..n {
            rhs[i] = rhs_off * self.rho[i - 1] + rhs_diag * self.rho[i] + rhs_off * self.rho[i + 1];
        }
        rhs[n] = T::c(2.0) * rhs_off * self.rho[n - 1] + rhs_diag * self.rho[n];
        if let Some(j) = source {
            for (ri, &ji) in rhs.iter_mut().zip(j) {
                *ri += dt * ji;
            }
        }

        // Thomas solve; the matrix rows are (2·off | diag) at the ends and
        // (off, diag, off) inside.
        let mut cp = vec![T::zero(); n + 1];
        cp[0] = T::c(2.0) * off / diag;
        rhs[0] = rhs[0] / diag;
        for i in 1..=n {
            let sub = if i == n { T::c(2.0) * off } else { off };
            let sup = off;
            let m = diag - sub * cp[i - 1];
            if i < n {
                cp[i] = sup / m;
            }
            rhs[i] = (rhs[i] - sub * rhs[i - 1]) / m;
        }
        self.rho[n] = rhs[n];
        for i in (0..n).rev() {
            self.rho[i] = rhs[i] - cp[i] * self.rho[i + 1];
        }

        for v in &mut self.rho {
            if *v < T::zero() {
                if *v < self.worst_undershoot {
                    self.worst_undershoot = *v;
                }
                *v = T::zero();
                self.clip_count += 1;
            }
        }
        self.t += dt;
    }

    pub fn step(&mut self, dt: T) {
        self.step_with_source(dt, None);
    }
}

/// Functional form of the spec'd operation: advance a field by `dt` and
/// return the new state.
pub fn step_diffusion<T: Real>(field: &DiffusionField<T>, dt: T) -> DiffusionField<T> {
    let mut f = field.clone();
    f.step(dt);
    f
}

/// Time-integral window normalization `τ(1 − e^{−t/τ})/L` (the junction
/// presence a uniformly spread, decaying unit mass would accumulate by `t`).
fn norm_window<T: Real>(l: T, tau: T, t: T) -> T {
    if tau.is_finite() {
        -tau * (-t / tau).exp_m1() / l
    } else {
        t / l
    }
}

/// Tail of the normalization window between `t0` and `t0 + u` for a mass
/// that has already decayed to `m` at `t0` and is spatially uniform.
fn uniform_tail<T: Real>(l: T, tau: T, m: T, u: T) -> T {
    if tau.is_finite() {
        -m * tau * (-u / tau).exp_m1() / l
    } else {
        m * u / l
    }
}

/// Integrate one injection-to-junction problem, returning the normalized
/// fraction at `t_max` and at `2·t_max` (the latter backs the convergence
/// check).
fn integrate_x0<T: Real>(l: T, d: T, tau: T, n_cells: usize, t_max: T) -> Result<(T, T)> {
    let two = T::c(2.0);
    let horizon = two * t_max;
    // Past ~6 L²/D the slowest spatial mode has decayed by e^{−6π²}; the
    // field is uniform and the remaining integral has a closed form.
    let t_stop = horizon.min(T::c(6.0) * l * l / d);

    let mut field = DiffusionField::injected(l, n_cells, d, tau)?;
    let dt0 = field.dx * field.dx / (two * d);
    let cap_late = l * l / (T::c(64.0) * d);
    let tau_guard = if tau.is_finite() {
        Some((tau / T::c(8.0), T::c(16.0) * tau))
    } else {
        None
    };

    let mut integral = T::zero();
    let mut prev_end = field.rho_end();
    let mut at_tmax: Option<T> = None;
    let mut dt_stage = dt0;
    let mut steps_in_stage = 0usize;
    let eps = T::c(1e-12) * t_stop;

    while field.t < t_stop - eps {
        let mut dt = dt_stage.min(cap_late);
        if let Some((cap, until)) = tau_guard {
            if field.t < until {
                dt = dt.min(cap);
            }
        }
        if field.t < t_max && field.t + dt > t_max {
            dt = t_max - field.t;
        }
        if field.t + dt > t_stop {
            dt = t_stop - field.t;
        }
        field.step(dt);
        let cur = field.rho_end();
        integral += dt * T::c(0.5) * (prev_end + cur);
        prev_end = cur;
        if at_tmax.is_none() && field.t >= t_max - eps {
            at_tmax = Some(integral);
        }
        steps_in_stage += 1;
        if steps_in_stage == 8 {
            dt_stage *= T::c(4.0);
            steps_in_stage = 0;
        }
    }

    let mass_stop = field.mass();
    let i_tmax = match at_tmax {
        Some(v) => v,
        None => integral + uniform_tail(l, tau, mass_stop, t_max - field.t),
    };
    let i_2tmax = if horizon <= field.t + eps {
        integral
    } else {
        integral + uniform_tail(l, tau, mass_stop, horizon - field.t)
    };
    Ok((
        i_tmax / norm_window(l, tau, t_max),
        i_2tmax / norm_window(l, tau, horizon),
    ))
}

fn rel_diff<T: Real>(a: T, b: T) -> T {
    let scale = a.abs().max(b.abs());
    if scale == T::zero() {
        T::zero()
    } else {
        (a - b).abs() / scale
    }
}

/// Default integration horizon: many diffusion times across the path and
/// many decay times, whichever is longer.
pub fn default_t_max<T: Real>(l: T, d: T, tau: T) -> T {
    let diff = T::c(20.0) * l * l / d;
    if tau.is_finite() {
        diff.max(T::c(8.0) * tau)
    } else {
        diff
    }
}

/// Fraction of injected QP density arriving at a junction a distance `l`
/// away, time-integrated to `t_max` (default [`default_t_max`]) and
/// normalized so that τ → ∞ gives 1.
///
/// Solved on the default 400-cell grid; the result is cross-checked against
/// a half-resolution solve and against a doubled window, and an error with a
/// refinement hint is returned if either check moves the answer.
pub fn x0_at_junction<T: Real>(l: T, d: T, tau: T, t_max: Option<T>) -> Result<T> {
    check_params(l, d, tau)?;
    let t_max = resolve_t_max(l, d, tau, t_max)?;
    let (fine, fine_doubled) = integrate_x0(l, d, tau, DEFAULT_CELLS, t_max)?;
    if rel_diff(fine, fine_doubled) > T::c(0.005) {
        return Err(DiffusionError::NotConverged {
            what: "t_max",
            hint: format!(
                "x0 changes by {:.2}% when t_max doubles; increase t_max beyond {:.3e}",
                rel_diff(fine, fine_doubled).f64() * 100.0,
                t_max.f64()
            ),
        });
    }
    let (coarse, _) = integrate_x0(l, d, tau, DEFAULT_CELLS / 2, t_max)?;
    if rel_diff(fine, coarse) > T::c(0.01) {
        return Err(DiffusionError::NotConverged {
            what: "grid",
            hint: format!(
                "x0 differs by {:.2}% between dx = L/{} and dx = L/{}; refine the grid",
                rel_diff(fine, coarse).f64() * 100.0,
                DEFAULT_CELLS / 2,
                DEFAULT_CELLS
            ),
        });
    }
    Ok(fine)
}

fn resolve_t_max<T: Real>(l: T, d: T, tau: T, t_max: Option<T>) -> Result<T> {
    match t_max {
        Some(t) if t > T::zero() => Ok(t),
        Some(_) => Err(DiffusionError::InvalidParams(
            "t_max must be positive".into(),
        )),
        None => Ok(default_t_max(l, d, tau)),
    }
}

/// [`x0_at_junction`] solved on an explicit `n_cells` grid with no built-in
/// cross-checks. Intended for convergence studies against the default
/// resolution; prefer [`x0_at_junction`] everywhere else.
pub fn x0_at_junction_resolved<T: Real>(
    l: T,
    d: T,
    tau: T,
    t_max: Option<T>,
    n_cells: usize,
) -> Result<T> {
    check_params(l, d, tau)?;
    let t_max = resolve_t_max(l, d, tau, t_max)?;
    Ok(integrate_x0(l, d, tau, n_cells, t_max)?.0)
}

/// Per-injection-point fraction map over a pad, for export and averaging.
#[derive(Debug, Clone)]
pub struct PathMap<T> {
    /// Injection points `(x, y)`, µm, in row-major grid order.
    pub points: Vec<(T, T)>,
    /// Path length to the junction per point, µm.
    pub lengths: Vec<T>,
    /// Arrival fraction per point.
    pub fractions: Vec<T>,
    /// Uniform average of `fractions`.
    pub mean: T,
}

/// Evaluate the arrival fraction for every injection point of a pad.
///
/// Up to [`EXACT_EVAL_LIMIT`] points each path gets its own PDE solve; finer
/// grids evaluate [`INTERP_NODES`] exact solves spanning the occurring path
/// lengths and interpolate `ln x₀` linearly in between (the interpolation
/// error is orders of magnitude below the solver tolerance).
pub fn path_map<T: Real>(
    geom: &PadGeometry<T>,
    d: T,
    tau: T,
    t_max: Option<T>,
) -> Result<PathMap<T>> {
    geom.validate()?;
    let points = geom.injection_points();
    let lengths: Vec<T> = points.iter().map(|&p| geom.path_length(p)).collect();

    let fractions: Vec<T> = if points.len() <= EXACT_EVAL_LIMIT {
        lengths
            .par_iter()
            .map(|&l| x0_at_junction(l, d, tau, t_max))
            .collect::<Result<_>>()?
    } else {
        let l_min = lengths.iter().copied().fold(T::infinity(), T::min);
        let l_max = lengths.iter().copied().fold(T::zero(), T::max);
        let m = INTERP_NODES;
        let step = (l_max - l_min) / T::c(m as f64 - 1.0);
        let nodes: Vec<T> = (0..m).map(|i| l_min + T::c(i as f64) * step).collect();
        let log_x0: Vec<T> = nodes
            .par_iter()
            .map(|&l| x0_at_junction(l, d, tau, t_max).map(|v| v.ln()))
            .collect::<Result<_>>()?;
        lengths
            .iter()
            .map(|&l| {
                let pos = ((l - l_min) / step).f64();
                let i = (pos.floor() as usize).min(m - 2);
                let w = T::c(pos - i as f64);
                ((T::one() - w) * log_x0[i] + w * log_x0[i + 1]).exp()
            })
            .collect()
    };

    let mean = fractions.iter().copied().sum::<T>() / T::c(fractions.len() as f64);
    Ok(PathMap {
        points,
        lengths,
        fractions,
        mean,
    })
}

/// Pad-averaged arrival fraction: every injection point contributes the 1D
/// fraction for its own distance to the junction, averaged uniformly.
pub fn path_average<T: Real>(geom: &PadGeometry<T>, d: T, tau: T, t_max: Option<T>) -> Result<T> {
    Ok(path_map(geom, d, tau, t_max)?.mean)
}

/// Ratio of pad-averaged arrival fractions of two geometries.
pub fn geometry_ratio<T: Real>(
    geom_a: &PadGeometry<T>,
    geom_b: &PadGeometry<T>,
    d: T,
    tau: T,
    t_max: Option<T>,
) -> Result<T> {
    Ok(path_average(geom_a, d, tau, t_max)? / path_average(geom_b, d, tau, t_max)?)
}
