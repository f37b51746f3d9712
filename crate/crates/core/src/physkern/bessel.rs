//! Modified Bessel function of the second kind, order zero.
//!
//! Two pieces, both accurate to better than 1e-15 relative in f64:
//!
//! * `x < 2`: the ascending series
//!   `K₀(x) = −(ln(x/2)+γ)·I₀(x) + Σ_{k≥1} (x²/4)^k/(k!)² · H_k`
//!   with `H_k` the harmonic numbers.
//! * `x ≥ 2`: a Chebyshev expansion of `f(u) = e^x √x K₀(x)` in
//!   `u = 4/x − 1 ∈ (−1, 1]`, evaluated by Clenshaw recurrence. The scaled
//!   form `e^x K₀(x)` never overflows, which is what the η(T) kernel needs
//!   at millikelvin temperatures where `z = ħω_q/2k_BT` reaches 10⁴ and
//!   beyond.

use super::{PhysError, Result};
use crate::Real;

const EULER_GAMMA: f64 = 0.577215664901532860606512;

/// Chebyshev coefficients of `e^x √x K₀(x)` in `u = 4/x − 1`, for `x ≥ 2`.
/// Reconstruction uses the `c0/2` convention.
const CHEB: [f64; 28] = [
    2.440303082065955454677,
    -0.03144810131196450054272,
    0.001569883885730053374913,
    -0.0001284954958162780263836,
    0.00001394981371887649936408,
    -0.000001831755522719119484778,
    2.76681363944501507614e-7,
    -4.660489897687947665561e-8,
    8.574034017414226085822e-9,
    -1.697534509389061515644e-9,
    3.577397281400328447163e-10,
    -7.957489244477397037735e-11,
    1.855949114954926554973e-11,
    -4.514597883374519175066e-12,
    1.140340588207344234725e-12,
    -2.980096923148178354834e-13,
    8.032890775068374369446e-14,
    -2.227513326746296360447e-14,
    6.340076476276645966132e-15,
    -1.848593377920907169411e-15,
    5.51205599940433336489e-16,
    -1.678231125754900638321e-16,
    5.210391777643554112526e-17,
    -1.647580593984263281496e-17,
    5.300433771177335770345e-18,
    -1.733171200582100026317e-18,
    5.755109202882729346658e-19,
    -1.939095605318355394589e-19,
];

/// Result of a flagged K₀ evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct K0Eval<T> {
    pub value: T,
    /// True when the mathematically positive value underflowed to zero.
    pub underflowed: bool,
}

fn check_domain<T: Real>(x: T) -> Result<()> {
    if x > T::zero() && x.is_finite() {
        Ok(())
    } else {
        Err(PhysError::BesselDomain(x.f64()))
    }
}

/// Ascending series, valid (and used) for `0 < x < 2`.
fn k0_series<T: Real>(x: T) -> T {
    let t = x * x * T::c(0.25);
    let log_term = -((x * T::c(0.5)).ln() + T::c(EULER_GAMMA));
    let mut i0_term = T::one(); // t^k / (k!)^2
    let mut i0 = T::one();
    let mut harmonic = T::zero();
    let mut h_sum = T::zero();
    let mut k = T::one();
    loop {
        i0_term = i0_term * t / (k * k);
        harmonic += k.recip();
        i0 += i0_term;
        h_sum += i0_term * harmonic;
        if i0_term * harmonic < T::epsilon() * (i0 + h_sum) {
            break;
        }
        k += T::one();
    }
    log_term * i0 + h_sum
}

/// Clenshaw evaluation of the Chebyshev expansion at `u ∈ [−1, 1]`.
fn cheb_eval<T: Real>(u: T) -> T {
    let two_u = T::c(2.0) * u;
    let mut d1 = T::zero();
    let mut d2 = T::zero();
    for k in (1..CHEB.len()).rev() {
        let d = two_u * d1 - d2 + T::c(CHEB[k]);
        d2 = d1;
        d1 = d;
    }
    u * d1 - d2 + T::c(0.5 * CHEB[0])
}

/// Scaled Bessel function `e^x·K₀(x)`. Never overflows or underflows for
/// positive finite `x`.
pub fn bessel_k0_scaled<T: Real>(x: T) -> Result<T> {
    check_domain(x)?;
    if x < T::c(2.0) {
        Ok(k0_series(x) * x.exp())
    } else {
        let u = T::c(4.0) / x - T::one();
        Ok(cheb_eval(u) / x.sqrt())
    }
}

/// `K₀(x)` with an explicit underflow flag: for very large arguments
/// (`x ≳ 745` in f64) the true positive value is below the smallest
/// representable subnormal, and the function returns zero with
/// `underflowed = true` rather than an error.
pub fn bessel_k0_eval<T: Real>(x: T) -> Result<K0Eval<T>> {
    check_domain(x)?;
    let value = if x < T::c(2.0) {
        k0_series(x)
    } else {
        bessel_k0_scaled(x)? * (-x).exp()
    };
    Ok(K0Eval {
        value,
        underflowed: value == T::zero(),
    })
}

/// `K₀(x)`; see [`bessel_k0_eval`] for the underflow convention.
pub fn bessel_k0<T: Real>(x: T) -> Result<T> {
    Ok(bessel_k0_eval(x)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    /// Reference values computed with 40-digit arbitrary-precision
    /// arithmetic, frozen as literals.
    const REFERENCE: [(f64, f64); 10] = [
        (1e-8, 18.536612259610778409),
        (1e-6, 13.931442073626419413),
        (1e-3, 7.0236888005623813436),
        (0.5, 0.92441907122766586178),
        (1.0, 0.42102443824070833334),
        (2.0, 0.11389387274953343565),
        (5.0, 0.0036910983340425942747),
        (10.0, 1.7780062316167651811e-5),
        (100.0, 4.6566282291759020189e-45),
        (700.0, 4.669776431685376881e-306),
    ];

    #[test]
    fn matches_reference_values() {
        for &(x, want) in &REFERENCE {
            let got = bessel_k0::<f64>(x).unwrap();
            assert!(
                rel(got, want) < 1e-13,
                "K0({x}) = {got:e}, want {want:e}"
            );
        }
    }

    #[test]
    fn scaled_matches_reference_values() {
        for &(x, want) in &REFERENCE {
            if x > 650.0 {
                continue; // e^x overflows the reference product
            }
            let got = bessel_k0_scaled::<f64>(x).unwrap();
            assert!(rel(got, want * x.exp()) < 1e-12, "scaled K0({x}) = {got:e}");
        }
    }

    #[test]
    fn branches_agree_near_switch() {
        // Series just below 2 against Chebyshev just above, plus the frozen
        // value exactly at the switch point.
        let below = k0_series::<f64>(1.999999999);
        let above = bessel_k0::<f64>(2.000000001).unwrap();
        let mid = bessel_k0::<f64>(2.0).unwrap();
        assert!(rel(below, mid) < 1e-8);
        assert!(rel(above, mid) < 1e-8);
        assert!((below - above) / mid > 0.0, "K0 must decrease through x=2");
    }

    #[test]
    fn underflow_flag_and_zero() {
        let r = bessel_k0_eval::<f64>(800.0).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.underflowed);
        let r = bessel_k0_eval::<f64>(100.0).unwrap();
        assert!(r.value > 0.0);
        assert!(!r.underflowed);
        // Scaled form stays finite and positive far past the overflow point.
        let s = bessel_k0_scaled::<f64>(1e6).unwrap();
        assert!(s > 0.0 && s.is_finite());
    }

    #[test]
    fn domain_errors() {
        assert!(bessel_k0::<f64>(0.0).is_err());
        assert!(bessel_k0::<f64>(-1.0).is_err());
        assert!(bessel_k0::<f64>(f64::NAN).is_err());
        assert!(bessel_k0::<f64>(f64::INFINITY).is_err());
    }

    #[test]
    fn f32_path_is_consistent() {
        for &(x, want) in &REFERENCE {
            if !(1e-6..=80.0).contains(&x) {
                continue;
            }
            let got = bessel_k0::<f32>(x as f32).unwrap();
            assert!(rel(got as f64, want) < 2e-5, "f32 K0({x}) = {got:e}");
        }
    }

    #[test]
    fn monotone_decreasing() {
        let xs: Vec<f64> = (0..200).map(|i| 1e-6 * 1.1f64.powi(i)).collect();
        let mut prev = f64::INFINITY;
        for &x in xs.iter().filter(|&&x| x < 700.0) {
            let v = bessel_k0::<f64>(x).unwrap();
            assert!(v < prev, "K0 not decreasing at x={x}");
            prev = v;
        }
    }
}
