//! Cross-check of the modified Bessel function K₀ against direct numerical
//! quadrature of its integral representation, evaluated with an independent
//! method (composite Simpson on the cosh form).

use qnoise::physkern::bessel_k0;

/// K₀(x) = ∫₀^∞ e^{−x·cosh t} dt, truncated where the integrand falls below
/// the positive f64 range and integrated by composite Simpson.
fn k0_quadrature(x: f64) -> f64 {
    let t_max = (709.0 / x).acosh();
    let n = 40_000usize;
    let h = t_max / n as f64;
    let f = |t: f64| (-x * t.cosh()).exp();
    let mut acc = f(0.0) + f(t_max);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(i as f64 * h);
    }
    acc * h / 3.0
}

#[test]
fn k0_matches_quadrature_across_eight_decades() {
    let n = 1000usize;
    let (lg_lo, lg_hi) = (-8.0f64, 2.0f64);
    let mut worst = (0.0f64, 0.0f64);
    for i in 0..n {
        let x = 10f64.powf(lg_lo + (lg_hi - lg_lo) * i as f64 / (n - 1) as f64);
        let reference = k0_quadrature(x);
        let value = bessel_k0(x).unwrap();
        let rel = ((value - reference) / reference).abs();
        if rel > worst.1 {
            worst = (x, rel);
        }
        assert!(
            rel <= 1e-10,
            "K0({x:e}) = {value:e} vs quadrature {reference:e}, rel {rel:e}"
        );
    }
    println!(
        "worst K0 deviation {:.2e} at x = {:.3e}",
        worst.1, worst.0
    );
}

#[test]
fn quadrature_oracle_self_check() {
    // The oracle itself must land on the small-argument expansion
    // K₀(x) ≈ −ln(x/2) − γ for tiny x, and decay like √(π/2x)e^{−x}
    // asymptotically, or the comparison above proves nothing.
    let euler_gamma = 0.577_215_664_901_532_9;
    let x = 1e-8;
    let expect = -(x / 2.0f64).ln() - euler_gamma;
    assert!(((k0_quadrature(x) - expect) / expect).abs() < 1e-12);

    let x = 80.0;
    let asym = (std::f64::consts::PI / (2.0 * x)).sqrt()
        * (-x).exp()
        * (1.0 - 1.0 / (8.0 * x) + 9.0 / (128.0 * x * x));
    assert!(((k0_quadrature(x) - asym) / asym).abs() < 1e-5);
}
