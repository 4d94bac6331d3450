//! Bessel functions of the first kind for the orders that appear in ball
//! Fourier transforms (`J_{d/2}`, `d ∈ {1, 2}`) plus `J_0` for angular
//! averages of plane waves in the plane.

use std::f64::consts::PI;

/// Switch from the power series to the Hankel asymptotic expansion.
const ASYMPTOTIC_FROM: f64 = 12.0;

/// `J_{1/2}(x) = √(2/(πx)) sin x`.
pub fn bessel_j_half(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    (2.0 / (PI * x)).sqrt() * x.sin()
}

pub fn bessel_j0(x: f64) -> f64 {
    integer_order(0, x)
}

pub fn bessel_j1(x: f64) -> f64 {
    integer_order(1, x)
}

fn integer_order(n: u32, x: f64) -> f64 {
    let ax = x.abs();
    let v = if ax <= ASYMPTOTIC_FROM {
        power_series(n as f64, ax)
    } else {
        hankel_asymptotic(n as f64, ax)
    };
    if n % 2 == 1 && x < 0.0 {
        -v
    } else {
        v
    }
}

/// `J_ν(x) = Σ_m (-1)^m (x/2)^{2m+ν} / (m! Γ(m+ν+1))`, integer `ν`.
fn power_series(nu: f64, x: f64) -> f64 {
    let half = 0.5 * x;
    let mut term = half.powf(nu) / statrs::function::gamma::gamma(nu + 1.0);
    let mut sum = term;
    let q = half * half;
    for m in 1..200 {
        let m = m as f64;
        term *= -q / (m * (m + nu));
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

/// Hankel expansion `J_ν(x) ≈ √(2/(πx)) (P cos χ − Q sin χ)`, `χ = x − (ν/2 + 1/4)π`.
fn hankel_asymptotic(nu: f64, x: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let eight_x = 8.0 * x;
    let mut p = 1.0;
    let mut q = 0.0;
    // a_k = Π_{j=1..k} (μ − (2j−1)²) / (k! (8x)^k)
    let mut a = 1.0;
    let mut last = f64::INFINITY;
    for k in 1..30 {
        let kf = k as f64;
        let next = a * (mu - (2.0 * kf - 1.0).powi(2)) / (kf * eight_x);
        if next.abs() > last {
            break; // asymptotic series started diverging
        }
        last = next.abs();
        a = next;
        match k % 4 {
            1 => q += a,
            2 => p -= a,
            3 => q -= a,
            _ => p += a,
        }
        if a.abs() < 1e-17 {
            break;
        }
    }
    let chi = x - (0.5 * nu + 0.25) * PI;
    (2.0 / (PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
}

/// `J_{d/2}(x)` for `d ∈ {1, 2}`.
pub fn bessel_ball(dim: usize, x: f64) -> f64 {
    match dim {
        1 => bessel_j_half(x),
        2 => bessel_j1(x),
        _ => panic!("ball Bessel order only defined for d = 1, 2"),
    }
}

/// `|1̂_{B_R}(ξ)|² / (2π)^d = R^d |ξ|^{-d} J²_{d/2}(R|ξ|)`, with its limit at `ξ = 0`.
pub fn ball_transform_sq_scaled(dim: usize, radius: f64, xi: f64) -> f64 {
    let volume = unit_ball_volume(dim) * radius.powi(dim as i32);
    if xi * radius < 1e-6 {
        return volume * volume / (2.0 * PI).powi(dim as i32);
    }
    let j = bessel_ball(dim, radius * xi);
    radius.powi(dim as i32) * xi.powi(-(dim as i32)) * j * j
}

/// `|B_1|` in `d` dimensions.
pub fn unit_ball_volume(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => PI,
        _ => PI.powf(dim as f64 / 2.0) / statrs::function::gamma::gamma(dim as f64 / 2.0 + 1.0),
    }
}

/// Surface measure of the unit sphere `S^{d-1}`.
pub fn unit_sphere_area(dim: usize) -> f64 {
    dim as f64 * unit_ball_volume(dim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use gauss_quad::GaussLegendre;
    use std::num::NonZeroUsize;

    /// Bessel's integral `J_n(x) = (1/π) ∫_0^π cos(nτ − x sin τ) dτ`.
    fn bessel_integral(n: u32, x: f64) -> f64 {
        let gl = GaussLegendre::new(NonZeroUsize::new(40).unwrap());
        let panels = 40;
        let w = PI / panels as f64;
        (0..panels)
            .map(|p| {
                let a = p as f64 * w;
                gl.integrate(a, a + w, |t| (n as f64 * t - x * t.sin()).cos())
            })
            .sum::<f64>()
            / PI
    }

    #[test]
    fn integer_orders_match_bessel_integral() {
        for &x in &[0.0, 0.3, 1.0, 2.5, 7.0, 11.9, 12.1, 15.0, 30.0, 80.0, 250.0] {
            for n in [0, 1] {
                let want = bessel_integral(n, x);
                let got = integer_order(n, x);
                assert!((got - want).abs() < 1e-10, "J{n}({x}) = {got}, want {want}");
            }
        }
    }

    #[test]
    fn series_and_asymptotic_agree_at_switchover() {
        for x in [12.0, 14.0, 18.0] {
            assert!((power_series(1.0, x) - hankel_asymptotic(1.0, x)).abs() < 1e-10);
            assert!((power_series(0.0, x) - hankel_asymptotic(0.0, x)).abs() < 1e-10);
        }
    }

    #[test]
    fn half_order_closed_form_and_odd_symmetry() {
        let x: f64 = 2.0;
        assert!((bessel_j_half(x) - (2.0 / (PI * x)).sqrt() * x.sin()).abs() < 1e-15);
        assert_eq!(bessel_j1(-3.0), -bessel_j1(3.0));
        assert_eq!(bessel_j0(-3.0), bessel_j0(3.0));
    }

    #[test]
    fn ball_transform_limit_at_origin() {
        for dim in [1, 2] {
            let r = 2.0;
            let near = ball_transform_sq_scaled(dim, r, 1e-4);
            let at = ball_transform_sq_scaled(dim, r, 0.0);
            assert!((near - at).abs() / at < 1e-6);
        }
        // direct: 1-d |∫_{-R}^{R} e^{-iξx}dx|² = 4 sin²(Rξ)/ξ²
        let (r, xi): (f64, f64) = (1.5, 0.7);
        let direct = 4.0 * (r * xi).sin().powi(2) / (xi * xi) / (2.0 * PI);
        assert!((ball_transform_sq_scaled(1, r, xi) - direct).abs() < 1e-14);
    }
}
