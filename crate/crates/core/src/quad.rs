//! Quadrature helpers shared by the continuum oracles.

use std::f64::consts::PI;
use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::GaussLegendre;

use crate::special::unit_sphere_area;

const DE_TOLERANCE: f64 = 1e-11;

/// `∫_a^b f` by tanh-sinh quadrature (tolerates integrable endpoint singularities).
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    quadrature::double_exponential::integrate(f, a, b, DE_TOLERANCE).integral
}

/// `∫_0^∞ f`, split at 1 and folded onto `(0, 1]` with `r = 1/v` for the tail.
pub fn integrate_half_line<F: Fn(f64) -> f64>(f: F) -> f64 {
    // x = v⁴ on the head tames integrable power singularities at 0
    let head = split_integrate(&|v: f64| 4.0 * v * v * v * f(v.powi(4)), 0.0, 1.0);
    let tail = split_integrate(
        &|v: f64| {
            if v <= 0.0 {
                0.0
            } else {
                f(1.0 / v) / (v * v)
            }
        },
        0.0,
        1.0,
    );
    head + tail
}

/// Integration over `[a, b]` in dyadic pieces toward `a`, which tames
/// integrands with a strong singularity or a thin layer at the left end.
fn split_integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let mut total = 0.0;
    let mut hi = b;
    for _ in 0..12 {
        let lo = a + 0.25 * (hi - a);
        total += integrate(f, lo, hi);
        hi = lo;
    }
    total + integrate(f, a, hi)
}

/// `(2π)^{-d} ∫_{ℝ^d} f(|ξ|) dξ` for a radial integrand.
pub fn radial_spectral_integral<F: Fn(f64) -> f64>(dim: usize, f: F) -> f64 {
    let area = unit_sphere_area(dim);
    area / (2.0 * PI).powi(dim as i32)
        * integrate_half_line(|r| if r == 0.0 { 0.0 } else { r.powi(dim as i32 - 1) * f(r) })
}

fn legendre16() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(NonZeroUsize::new(16).unwrap()))
}

/// Composite 16-point Gauss–Legendre over `[a, b]` in panels of at most `width`.
pub fn panels<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, width: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let n = ((b - a) / width).ceil().max(1.0) as usize;
    let h = (b - a) / n as f64;
    let rule = legendre16();
    (0..n)
        .map(|i| {
            let lo = a + i as f64 * h;
            rule.integrate(lo, lo + h, &f)
        })
        .sum()
}

/// Cumulative trapezoid integral of samples on a uniform grid.
pub fn cumulative_trapezoid(values: &[f64], step: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            acc += 0.5 * step * (values[i - 1] + v);
        }
        out.push(acc);
    }
    out
}

/// Trapezoid integral of samples at arbitrary increasing abscissae.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_line_integrals() {
        let a = integrate_half_line(|x| (-x).exp());
        assert!((a - 1.0).abs() < 1e-10);
        // ∫_0^∞ dx / (1 + 2x²) = π / (2√2)
        let b = integrate_half_line(|x| 1.0 / (1.0 + 2.0 * x * x));
        assert!((b - PI / (2.0 * 2f64.sqrt())).abs() < 1e-10);
        // singular at zero and slowly decaying: ∫_0^∞ x^{-1/2}/(1+x) = π
        let c = integrate_half_line(|x| x.powf(-0.5) / (1.0 + x));
        assert!((c - PI).abs() < 1e-8, "{c}");
        // ∫_0^∞ x^{-0.8} e^{-x²/8} dx = ½ 8^{0.1} Γ(0.1)
        let d = integrate_half_line(|x| x.powf(-0.8) * (-x * x / 8.0).exp());
        let want = 0.5 * 8f64.powf(0.1) * statrs::function::gamma::gamma(0.1);
        assert!((d - want).abs() < 1e-8 * want, "{d}");
    }

    #[test]
    fn radial_gaussian() {
        // (2π)^{-d} ∫ e^{-|ξ|²} dξ = (4π)^{-d/2}
        for d in [1, 2] {
            let v = radial_spectral_integral(d, |r| (-r * r).exp());
            assert!((v - (4.0 * PI).powf(-(d as f64) / 2.0)).abs() < 1e-11);
        }
    }

    #[test]
    fn panels_and_trapezoids() {
        let v = panels(|x| x.sin().powi(2), 0.0, 100.0 * PI, PI);
        assert!((v - 50.0 * PI).abs() < 1e-9);
        let c = cumulative_trapezoid(&[0.0, 1.0, 2.0], 0.5);
        assert_eq!(c, vec![0.0, 0.25, 1.0]);
        assert!((trapezoid(&[0.0, 1.0, 3.0], &[0.0, 1.0, 3.0]) - 4.5).abs() < 1e-15);
    }
}
