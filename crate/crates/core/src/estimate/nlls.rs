//! Damped least squares (Levenberg-Marquardt) with box bounds.
//!
//! Small dense problems only (≤ ~10 parameters): the normal equations are
//! solved by Cholesky factorization, the Jacobian comes from central
//! differences, and bounds are enforced by projecting trial steps. Accepted
//! steps never increase the cost.

use crate::Real;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EstimateError {
    #[error("invalid fit problem: {0}")]
    InvalidProblem(String),
    #[error("residuals are not finite at parameters {params:?}")]
    NanResidual { params: Vec<f64> },
    #[error("jacobian is singular and damping failed to recover")]
    Singular,
    #[error("insufficient temperature span: {0}")]
    InsufficientSpan(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error(transparent)]
    Phys(#[from] crate::physkern::PhysError),
}

pub type Result<T> = std::result::Result<T, EstimateError>;

/// How a fit's residuals were scaled (metadata; the residual closure already
/// encodes the choice).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossScale {
    Linear,
    LogResidual,
}

/// A bounded nonlinear least-squares problem.
pub struct FitProblem<'a, T> {
    pub residuals: Box<dyn Fn(&[T]) -> Vec<T> + Send + Sync + 'a>,
    pub init: Vec<T>,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    pub scale: LossScale,
    pub max_iter: usize,
    /// Stop when the gradient infinity-norm drops below this.
    pub gtol: T,
    /// Stop when the relative step size drops below this.
    pub xtol: T,
    /// Stop when the relative cost decrease drops below this.
    pub ftol: T,
}

impl<'a, T: Real> FitProblem<'a, T> {
    pub fn new<F>(init: Vec<T>, residuals: F) -> Self
    where
        F: Fn(&[T]) -> Vec<T> + Send + Sync + 'a,
    {
        let n = init.len();
        Self {
            residuals: Box::new(residuals),
            init,
            lower: vec![T::neg_infinity(); n],
            upper: vec![T::infinity(); n],
            scale: LossScale::Linear,
            max_iter: 200,
            gtol: T::c(1e-12),
            xtol: T::c(1e-12),
            ftol: T::c(1e-14),
        }
    }

    pub fn with_bounds(mut self, lower: Vec<T>, upper: Vec<T>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn with_scale(mut self, scale: LossScale) -> Self {
        self.scale = scale;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }
}

#[derive(Debug, Clone)]
pub struct FitResult<T> {
    pub params: Vec<T>,
    /// Row-major n×n covariance `s²·(JᵀJ)⁻¹`; `None` if the final normal
    /// matrix was singular or numerically rank-deficient.
    pub covariance: Option<Vec<T>>,
    /// Euclidean norm of the residual vector at the solution.
    pub residual_norm: T,
    pub iterations: usize,
    pub converged: bool,
    /// Parameters that finished pinned at a bound.
    pub active_bounds: Vec<bool>,
}

impl<T: Real> FitResult<T> {
    /// Standard error of parameter `i` (square root of the covariance
    /// diagonal), if available.
    pub fn std_err(&self, i: usize) -> Option<T> {
        let n = self.params.len();
        self.covariance.as_ref().map(|c| c[i * n + i].sqrt())
    }
}

fn clamp_into<T: Real>(x: &mut [T], lo: &[T], hi: &[T]) {
    for ((v, &l), &h) in x.iter_mut().zip(lo).zip(hi) {
        if *v < l {
            *v = l;
        }
        if *v > h {
            *v = h;
        }
    }
}

fn all_finite<T: Real>(v: &[T]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// In-place Cholesky solve of the symmetric positive definite system
/// `A·x = b` (A row-major n×n). Returns false if A is not positive definite.
fn chol_solve<T: Real>(a: &mut [T], b: &mut [T], n: usize) -> bool {
    // Factor A = L·Lᵀ, storing L in the lower triangle.
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            if i == j {
                if !(s > T::zero()) {
                    return false;
                }
                a[i * n + i] = s.sqrt();
            } else {
                a[i * n + j] = s / a[j * n + j];
            }
        }
    }
    // Forward substitution L·y = b.
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * n + k] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    // Back substitution Lᵀ·x = y.
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[k * n + i] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    true
}

/// Inverse of a symmetric positive definite matrix via Cholesky solves
/// against unit vectors. The matrix is equilibrated first and a relative
/// pivot below 1e-10 is treated as singular: such a direction is not
/// constrained by the data, and covariance entries computed across it
/// would be numerical noise rather than uncertainties.
fn chol_inverse<T: Real>(a: &[T], n: usize) -> Option<Vec<T>> {
    let mut d = vec![T::zero(); n];
    for i in 0..n {
        let aii = a[i * n + i];
        if !(aii > T::zero()) {
            return None;
        }
        d[i] = aii.sqrt();
    }
    // Factor the equilibrated matrix C = A ⊘ (d·dᵀ) as L·Lᵀ; its pivots
    // measure conditioning on a scale-free footing.
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j] / (d[i] * d[j]);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > T::c(1e-10)) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut inv = vec![T::zero(); n * n];
    let mut y = vec![T::zero(); n];
    for col in 0..n {
        for i in 0..n {
            let mut s = if i == col { T::one() } else { T::zero() };
            for k in 0..i {
                s -= l[i * n + k] * y[k];
            }
            y[i] = s / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[k * n + i] * y[k];
            }
            y[i] = s / l[i * n + i];
        }
        for row in 0..n {
            inv[row * n + col] = y[row] / (d[row] * d[col]);
        }
    }
    // Symmetrize against roundoff.
    for i in 0..n {
        for j in 0..i {
            let m = (inv[i * n + j] + inv[j * n + i]) * T::c(0.5);
            inv[i * n + j] = m;
            inv[j * n + i] = m;
        }
    }
    Some(inv)
}

/// Central-difference Jacobian, row-major m×n.
fn numeric_jacobian<T: Real, F: Fn(&[T]) -> Vec<T>>(f: &F, x: &[T], m: usize) -> Vec<T> {
    let n = x.len();
    let h_scale = T::epsilon().cbrt();
    let mut jac = vec![T::zero(); m * n];
    let mut xp = x.to_vec();
    for j in 0..n {
        let h = h_scale * x[j].abs().max(T::one());
        xp[j] = x[j] + h;
        let rp = f(&xp);
        xp[j] = x[j] - h;
        let rm = f(&xp);
        xp[j] = x[j];
        let denom = T::c(2.0) * h;
        for i in 0..m {
            jac[i * n + j] = (rp[i] - rm[i]) / denom;
        }
    }
    jac
}

pub fn nlls_solve<T: Real>(p: &FitProblem<'_, T>) -> Result<FitResult<T>> {
    let n = p.init.len();
    if n == 0 {
        return Err(EstimateError::InvalidProblem("no parameters".into()));
    }
    if p.lower.len() != n || p.upper.len() != n {
        return Err(EstimateError::InvalidProblem(
            "bounds length mismatch".into(),
        ));
    }
    for j in 0..n {
        if !(p.lower[j] <= p.upper[j]) {
            return Err(EstimateError::InvalidProblem(format!(
                "lower bound exceeds upper bound at parameter {j}"
            )));
        }
        if p.init[j] < p.lower[j] || p.init[j] > p.upper[j] {
            return Err(EstimateError::InvalidProblem(format!(
                "initial value out of bounds at parameter {j}"
            )));
        }
    }

    let f = &p.residuals;
    let mut x = p.init.clone();
    let mut r = f(&x);
    let m = r.len();
    if m < n {
        return Err(EstimateError::InvalidProblem(format!(
            "{m} residuals for {n} parameters"
        )));
    }
    if !all_finite(&r) {
        return Err(EstimateError::NanResidual {
            params: x.iter().map(|v| v.f64()).collect(),
        });
    }

    let half = T::c(0.5);
    let mut cost = half * r.iter().map(|&v| v * v).sum::<T>();
    let mut lambda = T::c(1e-3);
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..p.max_iter {
        iterations += 1;
        let jac = numeric_jacobian(f, &x, m);
        if !all_finite(&jac) {
            return Err(EstimateError::NanResidual {
                params: x.iter().map(|v| v.f64()).collect(),
            });
        }
        // g = Jᵀr, A = JᵀJ.
        let mut g = vec![T::zero(); n];
        let mut a = vec![T::zero(); n * n];
        for i in 0..m {
            for j in 0..n {
                g[j] += jac[i * n + j] * r[i];
                for k in 0..=j {
                    a[j * n + k] += jac[i * n + j] * jac[i * n + k];
                }
            }
        }
        for j in 0..n {
            for k in 0..j {
                a[k * n + j] = a[j * n + k];
            }
        }
        let gmax = g.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()));
        if gmax < p.gtol {
            converged = true;
            break;
        }

        let mut accepted = false;
        for _ in 0..40 {
            // Marquardt scaling: damp proportionally to the diagonal.
            let mut ad = a.clone();
            for j in 0..n {
                let d = a[j * n + j];
                let d = if d > T::zero() { d } else { T::one() };
                ad[j * n + j] = d * (T::one() + lambda);
            }
            let mut delta: Vec<T> = g.iter().map(|&v| -v).collect();
            if !chol_solve(&mut ad, &mut delta, n) {
                lambda *= T::c(10.0);
                continue;
            }
            let mut x_new: Vec<T> = x.iter().zip(&delta).map(|(&xv, &dv)| xv + dv).collect();
            clamp_into(&mut x_new, &p.lower, &p.upper);
            let r_new = f(&x_new);
            if !all_finite(&r_new) {
                lambda *= T::c(10.0);
                continue;
            }
            let cost_new = half * r_new.iter().map(|&v| v * v).sum::<T>();
            if cost_new <= cost {
                let step = x
                    .iter()
                    .zip(&x_new)
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum::<T>()
                    .sqrt();
                let xnorm = x.iter().map(|&v| v * v).sum::<T>().sqrt();
                let cost_drop = cost - cost_new;
                x = x_new;
                r = r_new;
                cost = cost_new;
                lambda = (lambda / T::c(3.0)).max(T::c(1e-14));
                accepted = true;
                if step <= p.xtol * (xnorm + p.xtol) {
                    converged = true;
                }
                if cost_drop <= p.ftol * cost.max(T::c(1e-300)) {
                    converged = true;
                }
                break;
            }
            lambda *= T::c(4.0);
            if lambda > T::c(1e14) {
                break;
            }
        }
        if !accepted {
            if iterations == 1 && gmax > T::c(1e-6) {
                // Could not move at all from the start despite heavy damping.
                return Err(EstimateError::Singular);
            }
            converged = true; // stalled: no damped step improves the cost
            break;
        }
        if converged {
            break;
        }
    }

    // Covariance s²·(JᵀJ)⁻¹ at the solution.
    let jac = numeric_jacobian(f, &x, m);
    let mut a = vec![T::zero(); n * n];
    for i in 0..m {
        for j in 0..n {
            for k in 0..=j {
                a[j * n + k] += jac[i * n + j] * jac[i * n + k];
            }
        }
    }
    for j in 0..n {
        for k in 0..j {
            a[k * n + j] = a[j * n + k];
        }
    }
    let covariance = chol_inverse(&a, n).map(|mut inv| {
        let dof = (m - n).max(1);
        let s2 = T::c(2.0) * cost / T::c(dof as f64);
        for v in &mut inv {
            *v *= s2;
        }
        inv
    });

    let tol_b = T::c(1e-12);
    let active_bounds = (0..n)
        .map(|j| {
            let s = x[j].abs().max(T::one());
            (x[j] - p.lower[j]).abs() <= tol_b * s || (p.upper[j] - x[j]).abs() <= tol_b * s
        })
        .collect();

    Ok(FitResult {
        params: x,
        covariance,
        residual_norm: (T::c(2.0) * cost).sqrt(),
        iterations,
        converged,
        active_bounds,
    })
}
