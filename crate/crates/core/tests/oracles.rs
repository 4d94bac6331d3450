//! Library results against closed forms computed here, independently of the
//! spectral and quadrature code under test.

use std::f64::consts::PI;

use fracshe_core::noise::{bump_covariance, riesz_constant, Bump};
use fracshe_core::rng::replica_rng;
use fracshe_core::{evaluate_kernel, k_beta, sample_noise_increment, CovarianceModel, Fourier, GridSpec, ModelSpec, NoiseSampler};
use proptest::prelude::*;
use statrs::function::gamma::gamma;

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (f(a) + f(b) + inner) * h / 3.0
}

#[test]
fn heat_kernel_matches_gaussian() {
    let grid = GridSpec::new(1, 20.0, 512).unwrap();
    let g = evaluate_kernel(&Fourier::new(&grid), 2.0, 1.0).unwrap();
    let worst = (0..grid.len())
        .map(|j| {
            let x = grid.node(j)[0];
            (g.values()[j] - (-x * x / 4.0).exp() / (4.0 * PI).sqrt()).abs()
        })
        .fold(0.0, f64::max);
    assert!(worst < 1e-10, "{worst}");
}

#[test]
fn cauchy_kernel_matches_periodized_poisson() {
    let (l, t) = (10.0, 0.5);
    let grid = GridSpec::new(1, l, 1024).unwrap();
    let g = evaluate_kernel(&Fourier::new(&grid), 1.0, t).unwrap();
    // images summed directly, the remaining far tail is below 1e-9
    let periodic = |x: f64| -> f64 {
        (-20_000i64..=20_000)
            .map(|n| {
                let z = x + 2.0 * l * n as f64;
                t / (PI * (t * t + z * z))
            })
            .sum()
    };
    for j in (0..grid.len()).step_by(37) {
        let x = grid.node(j)[0];
        let err = (g.values()[j] - periodic(x)).abs();
        assert!(err < 1e-7, "x = {x}: {err}");
    }
}

#[test]
fn k_beta_against_elementary_integrals() {
    // 1-d: ∫∫_{[-1,1]²} |x − y|^{-β} = 2^{3−β} / ((1−β)(2−β))
    for beta in [0.25, 0.5, 0.75] {
        let closed = 2f64.powf(3.0 - beta) / ((1.0 - beta) * (2.0 - beta));
        let k = k_beta(1, beta).unwrap();
        assert!((k.value - closed).abs() < 1e-6 * closed, "beta {beta}: {} vs {closed}", k.value);
    }
    assert!((k_beta(1, 1.0).unwrap().value - 2.0).abs() < 1e-12);
    assert!((k_beta(2, 2.0).unwrap().value - PI).abs() < 1e-12);

    // 2-d, β = 1: 2π ∫₀² A(r) dr with the lens area A; substitute r = 2 sin(s)
    // so the square-root end point is smooth
    let lens = |r: f64| 2.0 * (r / 2.0).acos() - (r / 2.0) * (4.0 - r * r).max(0.0).sqrt();
    let oracle = 2.0 * PI * simpson(|s| lens(2.0 * s.sin()) * 2.0 * s.cos(), 0.0, PI / 2.0, 4000);
    let k = k_beta(2, 1.0).unwrap();
    assert!((k.value - oracle).abs() < 1e-6 * oracle, "{} vs {oracle}", k.value);
}

#[test]
fn riesz_constant_in_one_dimension() {
    // ∫ |x|^{-β} e^{-ixξ} dx = 2Γ(1−β) sin(πβ/2) |ξ|^{β−1}
    for beta in [0.2, 0.5, 0.9] {
        let expected = 2.0 * gamma(1.0 - beta) * (PI * beta / 2.0).sin();
        let c = riesz_constant(1, beta);
        assert!((c - expected).abs() < 1e-10 * expected, "beta {beta}: {c} vs {expected}");
    }
}

#[test]
fn white_noise_integrated_correlation() {
    // α = 2: ∫₀ᵗ G(2s, 0) ds = ∫₀ᵗ (8πs)^{-1/2} ds = √(t/(2π))
    let m = CovarianceModel::white_noise();
    for t in [0.25, 1.0, 4.0] {
        let got = m.integrated_correlation(2.0, t);
        let expected = (t / (2.0 * PI)).sqrt();
        assert!((got - expected).abs() < 1e-6 * expected, "t {t}: {got} vs {expected}");
    }
    let a = m.integrated_correlation(1.5, 1.0);
    // (2π)^{-1} ∫ (1 − e^{-2|ξ|^{1.5}}) / |ξ|^{1.5} dξ, by Simpson on ξ = v²
    let f = |v: f64| {
        let xi = v * v;
        if xi == 0.0 {
            return 0.0;
        }
        let lam = xi.powf(1.5);
        -(-2.0 * lam).exp_m1() / lam * 2.0 * v
    };
    let head = simpson(f, 0.0, 40.0, 200_000);
    // beyond ξ = 1600 the integrand is ξ^{-1.5}
    let tail = 2.0 / 1600f64.sqrt();
    let oracle = (head + tail) / (2.0 * PI);
    assert!((a - oracle).abs() < 1e-4 * oracle, "{a} vs {oracle}");
}

#[test]
fn noise_increments_are_reproducible_per_replica() {
    let grid = GridSpec::new(1, 8.0, 256).unwrap();
    let model = CovarianceModel::new(1, 1.5, ModelSpec::RieszKernel { beta: 0.5, mu: vec![] }).unwrap();
    let sampler = NoiseSampler::new(&grid, &model).unwrap();
    let draw = |replica| sample_noise_increment(&sampler, 0.1, replica_rng(11, replica)).unwrap();
    assert_eq!(draw(3).values.values(), draw(3).values.values());
    assert_ne!(draw(3).values.values(), draw(4).values.values());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kernel_is_a_symmetric_probability_density(alpha in 1.0f64..2.0, t in 0.3f64..3.0) {
        let grid = GridSpec::new(1, 32.0, 1024).unwrap();
        let g = evaluate_kernel(&Fourier::new(&grid), alpha, t).unwrap();
        prop_assert!((g.mass() - 1.0).abs() < 1e-10);
        prop_assert!(g.symmetry_error() < 1e-12);
        prop_assert!(g.negative_excursion() < 1e-8 * g.peak());
    }

    #[test]
    fn bump_covariance_is_symmetric_and_cauchy_schwarz(
        beta in 0.1f64..0.9,
        c1 in -2.0f64..2.0,
        c2 in -2.0f64..2.0,
        w1 in 0.3f64..1.5,
        w2 in 0.3f64..1.5,
    ) {
        let model = CovarianceModel::new(1, 1.5, ModelSpec::RieszKernel { beta, mu: vec![] }).unwrap();
        let phi = Bump { center: [c1, 0.0], width: w1 };
        let psi = Bump { center: [c2, 0.0], width: w2 };
        let a = bump_covariance(&model, &phi, &psi).unwrap();
        let b = bump_covariance(&model, &psi, &phi).unwrap();
        let pp = bump_covariance(&model, &phi, &phi).unwrap();
        let qq = bump_covariance(&model, &psi, &psi).unwrap();
        prop_assert!((a - b).abs() < 1e-8 * pp.max(qq));
        prop_assert!(a > 0.0);
        prop_assert!(a * a <= pp * qq * (1.0 + 1e-8));
    }
}
