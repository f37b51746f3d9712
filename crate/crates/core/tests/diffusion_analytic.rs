//! Analytic cross-checks of the 1D diffusion solver: Neumann heat-kernel
//! image sums, Crank-Nicolson convergence order, the steady resolvent limit
//! of the arrival fraction, and the heat-kernel transient area.

use qnoise::diffusion::{path_average, x0_at_junction, DiffusionField, PadGeometry};

const D: f64 = 6.0e8; // µm²/s
const TAU: f64 = 4.1e-6; // s

/// Unit mass released at x = 0 between Neumann walls at 0 and L:
/// ρ(x, t) = 2·Σ_k G(x − 2kL), G the free-space heat kernel.
fn image_sum(x: f64, l: f64, t: f64) -> f64 {
    let s4 = 4.0 * D * t;
    let g = |u: f64| (-u * u / s4).exp() / (std::f64::consts::PI * s4).sqrt();
    let mut acc = 0.0;
    for k in -4i64..=4 {
        acc += 2.0 * g(x - 2.0 * k as f64 * l);
    }
    acc
}

/// March the CN stepper from the analytic profile at `t0` to `t1` and
/// return the worst deviation from the analytic profile at `t1`, relative
/// to its peak.
fn stepper_error(l: f64, n: usize, t0: f64, t1: f64) -> f64 {
    let mut f = DiffusionField::<f64>::zeros(l, n, D, f64::INFINITY).unwrap();
    for i in 0..=n {
        f.rho[i] = image_sum(i as f64 * f.dx, l, t0);
    }
    let dt = 0.4 * f.dx * f.dx / D;
    let steps = ((t1 - t0) / dt).ceil() as usize;
    let dt = (t1 - t0) / steps as f64;
    for _ in 0..steps {
        f.step(dt);
    }
    let peak = image_sum(0.0, l, t1);
    (0..=n)
        .map(|i| (f.rho[i] - image_sum(i as f64 * f.dx, l, t1)).abs())
        .fold(0.0f64, f64::max)
        / peak
}

#[test]
fn stepper_tracks_heat_kernel_images() {
    let err = stepper_error(100.0, 800, 2e-8, 6e-8);
    assert!(err <= 1e-4, "L-infinity error {err:e} vs heat kernel");
}

#[test]
fn crank_nicolson_order_is_at_least_1_8() {
    let errs: Vec<f64> = [100usize, 200, 400]
        .iter()
        .map(|&n| stepper_error(100.0, n, 2e-8, 6e-8))
        .collect();
    let o1 = (errs[0] / errs[1]).log2();
    let o2 = (errs[1] / errs[2]).log2();
    assert!(
        o1 >= 1.8 && o2 >= 1.8,
        "observed orders {o1:.2}, {o2:.2} from errors {errs:?}"
    );
}

#[test]
fn arrival_fraction_matches_resolvent_limit() {
    // For t_max far beyond both L²/D and τ the fraction is the steady
    // resolvent value (L/λ)/sinh(L/λ), λ = √(Dτ).
    let lambda = (D * TAU).sqrt();
    for l in [60.0, 120.0] {
        let z: f64 = l / lambda;
        let analytic = z / z.sinh();
        let x0 = x0_at_junction(l, D, TAU, None).unwrap();
        assert!(
            (x0 / analytic - 1.0).abs() < 0.01,
            "L = {l}: x0 = {x0:.5} vs resolvent {analytic:.5}"
        );
    }
}

#[test]
fn transient_area_matches_minus_l_squared_over_6d() {
    // Without decay, ∫₀^∞ (ρ(L,t) − 1/L) dt = −L/(6D), so the normalized
    // fraction approaches 1 like 1 − L²/(6·D·t_max).
    let l = 50.0;
    for mult in [40.0, 80.0] {
        let t_max = mult * l * l / D;
        let x0 = x0_at_junction(l, D, f64::INFINITY, Some(t_max)).unwrap();
        let deficit = (1.0 - x0) * 6.0 * D * t_max / (l * l);
        assert!(
            (deficit - 1.0).abs() < 0.02,
            "t_max = {mult}·L²/D: deficit coefficient {deficit:.4}"
        );
    }
}

#[test]
fn pad_average_is_bounded_by_extreme_paths() {
    let geom = PadGeometry::<f64>::new(150.0, 720.0, 150.0).unwrap();
    let mean = path_average(&geom, D, TAU, None).unwrap();
    let l_min = geom.path_length((geom.gap_um / 2.0, 0.0));
    let hi = x0_at_junction(l_min, D, TAU, None).unwrap();
    let l_max = geom.path_length((
        geom.gap_um / 2.0 + geom.width_um,
        geom.height_um / 2.0,
    ));
    let lo = x0_at_junction(l_max, D, TAU, None).unwrap();
    assert!(
        lo < mean && mean < hi,
        "mean {mean:e} outside [{lo:e}, {hi:e}]"
    );
}

#[test]
fn geometry_similarity_under_joint_rescale() {
    // Scaling all lengths by s and the diffusivity by s² leaves every
    // arrival fraction unchanged (τ fixed): the PDE is self-similar.
    let s = 1.7;
    let a = x0_at_junction(70.0, D, TAU, None).unwrap();
    let b = x0_at_junction(70.0 * s, D * s * s, TAU, None).unwrap();
    assert!(
        (a / b - 1.0).abs() < 2e-3,
        "similarity broken: {a:.6} vs {b:.6}"
    );
}
