//! The fractional Green kernel `G_α(t, ·)`, i.e. the symmetric α-stable
//! transition density with symbol `e^{-t|ξ|^α}`, evaluated by spectral
//! inversion on the torus, together with numerical witnesses of its
//! structural properties.

use std::f64::consts::PI;

use serde::Serialize;
use statrs::function::gamma::gamma;

use crate::error::{invalid, Error, Result};
use crate::grid::{Fourier, GridSpec, RealField};
use crate::special::{unit_ball_volume, unit_sphere_area};

/// Relative level below which negative spectral-inversion ringing is tolerated.
pub const RINGING_TOLERANCE: f64 = 1e-8;
/// Required kernel width in grid spacings.
pub const MIN_WIDTH_CELLS: f64 = 4.0;
/// Largest acceptable kernel mass outside the torus.
pub const MAX_TAIL_MASS: f64 = 1e-6;

pub fn validate_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 2.0) {
        return Err(invalid(format!("alpha must lie in (0, 2], got {alpha}")));
    }
    Ok(())
}

fn validate_time(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(invalid(format!(
            "time must be positive (the kernel degenerates to a Dirac mass at t = 0), got {t}"
        )));
    }
    Ok(())
}

/// `e^{-t|ξ|^α}`.
#[inline]
pub fn symbol(alpha: f64, t: f64, xi: f64) -> f64 {
    (-t * xi.powf(alpha)).exp()
}

/// Samples of `G_α(t, ·)` on a grid.
#[derive(Debug, Clone)]
pub struct KernelField {
    alpha: f64,
    t: f64,
    field: RealField,
}

impl KernelField {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn field(&self) -> &RealField {
        &self.field
    }

    pub fn values(&self) -> &[f64] {
        self.field.values()
    }

    pub fn grid(&self) -> &GridSpec {
        self.field.grid()
    }

    pub fn mass(&self) -> f64 {
        self.field.integral()
    }

    pub fn peak(&self) -> f64 {
        self.field.max()
    }

    /// Most negative value relative to the peak (0 when nonnegative).
    pub fn negative_excursion(&self) -> f64 {
        (-self.field.min()).max(0.0) / self.peak()
    }

    /// Number of nodes below zero (ringing), reported rather than clipped.
    pub fn negative_nodes(&self) -> usize {
        self.values().iter().filter(|&&v| v < 0.0).count()
    }

    pub fn within_ringing_tolerance(&self) -> bool {
        self.negative_excursion() <= RINGING_TOLERANCE
    }

    /// Values with ringing clipped to zero, for use as a density.
    pub fn clipped(&self) -> Vec<f64> {
        self.values().iter().map(|v| v.max(0.0)).collect()
    }

    /// Largest `|G(x) − G(−x)|` relative to the peak.
    pub fn symmetry_error(&self) -> f64 {
        let g = self.grid();
        let n = g.points_per_axis();
        let peak = self.peak();
        (0..g.len())
            .map(|k| {
                let [a, b] = g.axes(k);
                // node -x has index N - i (mod N) because x_i = -L + iΔx
                let m = g.flat([(n - a) % n, if g.dim() == 1 { 0 } else { (n - b) % n }]);
                (self.values()[k] - self.values()[m]).abs()
            })
            .fold(0.0, f64::max)
            / peak
    }
}

/// `G_α(t, ·)` on the grid of `fourier`.
pub fn evaluate_kernel(fourier: &Fourier, alpha: f64, t: f64) -> Result<KernelField> {
    validate_alpha(alpha)?;
    validate_time(t)?;
    let field = fourier.radial_symbol_inverse(|xi| symbol(alpha, t, xi));
    Ok(KernelField { alpha, t, field })
}

/// Constant `C` in `G_α(1, x) ~ C |x|^{-d-α}` as `|x| → ∞` (`α < 2`).
pub fn stable_tail_constant(dim: usize, alpha: f64) -> f64 {
    let d = dim as f64;
    alpha * 2f64.powf(alpha - 1.0) * PI.powf(-d / 2.0 - 1.0) * (PI * alpha / 2.0).sin()
        * gamma((d + alpha) / 2.0)
        * gamma(alpha / 2.0)
}

/// Kernel mass outside `|x| > r` at time `t`, from the tail asymptotics.
pub fn tail_mass_beyond(dim: usize, alpha: f64, t: f64, r: f64) -> f64 {
    if alpha >= 2.0 {
        // G_2(t) is the N(0, 2t I) density.
        let z = r / (2.0 * t.sqrt());
        return match dim {
            1 => statrs::function::erf::erfc(z),
            _ => (-z * z).exp(),
        };
    }
    let c = stable_tail_constant(dim, alpha);
    (unit_sphere_area(dim) * c * t * r.powf(-alpha) / alpha).min(1.0)
}

/// Resolution diagnostics of a kernel on a grid.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Resolution {
    pub width: f64,
    pub spacing: f64,
    pub tail_mass: f64,
    pub width_resolved: bool,
    pub well_resolved: bool,
}

pub fn resolution(grid: &GridSpec, alpha: f64, t: f64) -> Resolution {
    let width = t.powf(1.0 / alpha);
    let spacing = grid.spacing();
    let tail_mass = tail_mass_beyond(grid.dim(), alpha, t, grid.half_length());
    let width_resolved = width >= MIN_WIDTH_CELLS * spacing;
    Resolution {
        width,
        spacing,
        tail_mass,
        width_resolved,
        well_resolved: width_resolved && tail_mass < MAX_TAIL_MASS,
    }
}

/// A measured property error with the resolution context it was taken in.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PropertyCheck {
    pub error: f64,
    pub peak: f64,
    pub reliable: bool,
}

/// `max_x |G(t+s, x) − (G(t) ⋆ G(s))(x)|` with the convolution summed
/// directly in physical space over the periodic grid.
pub fn check_semigroup(grid: &GridSpec, alpha: f64, t: f64, s: f64) -> Result<PropertyCheck> {
    validate_time(t)?;
    validate_time(s)?;
    let ft = Fourier::new(grid);
    let gt = evaluate_kernel(&ft, alpha, t)?;
    let gs = evaluate_kernel(&ft, alpha, s)?;
    let gts = evaluate_kernel(&ft, alpha, t + s)?;
    let conv = direct_circular_convolution(gt.field(), gs.field());
    let error = conv
        .iter()
        .zip(gts.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let reliable = resolution(grid, alpha, t.min(s)).width_resolved;
    Ok(PropertyCheck {
        error,
        peak: gts.peak(),
        reliable,
    })
}

/// `Σ_y f(y) g(x − y) Δx^d` by explicit summation.
pub fn direct_circular_convolution(f: &RealField, g: &RealField) -> Vec<f64> {
    let grid = f.grid();
    let n = grid.points_per_axis();
    let h = grid.cell_volume();
    let (fv, gv) = (f.values(), g.values());
    // x_i − y_j is node (i − j + N/2) mod N along each axis.
    let shift = |i: usize, j: usize| (i + n + n / 2 - j) % n;
    match grid.dim() {
        1 => (0..n)
            .map(|i| (0..n).map(|j| fv[j] * gv[shift(i, j)]).sum::<f64>() * h)
            .collect(),
        _ => {
            let mut out = vec![0.0; n * n];
            for (flat, o) in out.iter_mut().enumerate() {
                let (i0, i1) = (flat / n, flat % n);
                let mut acc = 0.0;
                for j0 in 0..n {
                    let row_f = &fv[j0 * n..(j0 + 1) * n];
                    let row_g = &gv[shift(i0, j0) * n..(shift(i0, j0) + 1) * n];
                    for (j1, &fv1) in row_f.iter().enumerate() {
                        acc += fv1 * row_g[shift(i1, j1)];
                    }
                }
                *o = acc * h;
            }
            out
        }
    }
}

/// Largest relative deviation of `G(t, x)` from `t^{-d/α} G(1, t^{-1/α} x)`,
/// with the unit-time kernel evaluated on the torus rescaled by `t^{-1/α}`
/// so both sides sample the same points. Nodes where `G(t)` is below
/// `1e-6` of its peak are skipped.
pub fn check_scaling(grid: &GridSpec, alpha: f64, t: f64) -> Result<PropertyCheck> {
    validate_alpha(alpha)?;
    validate_time(t)?;
    let scale = t.powf(-1.0 / alpha);
    let unit_grid = grid.scaled(scale)?;
    let gt = evaluate_kernel(&Fourier::new(grid), alpha, t)?;
    let g1 = evaluate_kernel(&Fourier::new(&unit_grid), alpha, 1.0)?;
    let factor = t.powf(-(grid.dim() as f64) / alpha);
    let peak = gt.peak();
    let error = gt
        .values()
        .iter()
        .zip(g1.values())
        .filter(|(a, _)| **a > 1e-6 * peak)
        .map(|(a, b)| (a - factor * b).abs() / a)
        .fold(0.0, f64::max);
    let reliable = resolution(grid, alpha, t).width_resolved
        && resolution(&unit_grid, alpha, 1.0).width_resolved;
    Ok(PropertyCheck {
        error,
        peak,
        reliable,
    })
}

/// Range of `G_α(1, x)(1 + |x|)^{d+α}` over `1 ≤ |x| ≤ L/2`: an empirical
/// sandwich for the two-sided polynomial tail bound. Only meaningful for
/// stable tails, so `α = 2` is rejected.
pub fn tail_bound_ratio(grid: &GridSpec, alpha: f64) -> Result<(f64, f64)> {
    validate_alpha(alpha)?;
    if alpha >= 2.0 {
        return Err(invalid(
            "the polynomial tail sandwich holds only for alpha < 2 (the Gaussian kernel decays faster)",
        ));
    }
    if grid.half_length() / 2.0 < 20.0 {
        return Err(Error::Resolution(format!(
            "tail ratio needs |x| up to 20, grid reaches {}",
            grid.half_length() / 2.0
        )));
    }
    let k = evaluate_kernel(&Fourier::new(grid), alpha, 1.0)?;
    let exponent = grid.dim() as f64 + alpha;
    let ringing = RINGING_TOLERANCE * k.peak();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for (i, &v) in k.values().iter().enumerate() {
        let r = grid.node_norm(i);
        if !(1.0..=grid.half_length() / 2.0).contains(&r) {
            continue;
        }
        if v < -ringing || v <= 0.0 {
            return Err(Error::Resolution(format!(
                "kernel value {v:e} at |x| = {r} is not positive; tail unresolved"
            )));
        }
        let ratio = v * (1.0 + r).powf(exponent);
        lo = lo.min(ratio);
        hi = hi.max(ratio);
    }
    Ok((lo, hi))
}

/// Open window `(1, upper)` for the integrability index `2q`.
pub fn two_q_window(dim: usize, alpha: f64) -> (f64, f64) {
    let d = dim as f64;
    let kappa_bound = if 2.0 * d - alpha <= 0.0 {
        f64::INFINITY
    } else {
        2.0 * d / (2.0 * d - alpha)
    };
    // For α = 2 every power of the Gaussian kernel is integrable.
    let integrability = if alpha >= 2.0 {
        f64::INFINITY
    } else {
        (d + alpha) / d
    };
    (1.0, kappa_bound.min(integrability))
}

/// `κ = (2d/α)(1 − 1/(2q))`.
pub fn kappa(dim: usize, alpha: f64, two_q: f64) -> f64 {
    2.0 * dim as f64 / alpha * (1.0 - 1.0 / two_q)
}

/// Validates `2q` against its window and returns `κ`.
pub fn validate_two_q(dim: usize, alpha: f64, two_q: f64) -> Result<f64> {
    validate_alpha(alpha)?;
    let d = dim as f64;
    if !(two_q > 1.0) {
        return Err(invalid(format!("2q = {two_q} must exceed 1")));
    }
    if 2.0 * d - alpha > 0.0 && two_q >= 2.0 * d / (2.0 * d - alpha) {
        return Err(invalid(format!(
            "2q = {two_q} violates 2q < 2d/(2d - alpha) = {} (needed for kappa < 1)",
            2.0 * d / (2.0 * d - alpha)
        )));
    }
    if alpha < 2.0 && two_q >= (d + alpha) / d {
        return Err(invalid(format!(
            "2q = {two_q} violates 2q < (d + alpha)/d = {} (needed for G^(1/2q) to be integrable)",
            (d + alpha) / d
        )));
    }
    Ok(kappa(dim, alpha, two_q))
}

/// `∫ G_α(t, η)^{1/(2q)} dη`.
///
/// The grid sum runs over the central cube `|η|_∞ ≤ L/2`; for `α < 2` the
/// periodic images are removed there and the part outside the cube is
/// restored from the `C t |η|^{-d-α}` tail, both with the stable tail constant.
pub fn fractional_power_integral(grid: &GridSpec, alpha: f64, two_q: f64, t: f64) -> Result<f64> {
    validate_two_q(grid.dim(), alpha, two_q)?;
    validate_time(t)?;
    let k = evaluate_kernel(&Fourier::new(grid), alpha, t)?;
    let power = 1.0 / two_q;
    let half = grid.half_length() / 2.0;
    let dim = grid.dim();
    let heavy = alpha < 2.0;
    let c = if heavy { stable_tail_constant(dim, alpha) } else { 0.0 };
    let period = 2.0 * grid.half_length();
    let mut sum = 0.0;
    for (i, &v) in k.values().iter().enumerate() {
        let x = grid.node(i);
        if x[0].abs() > half || x[1].abs() > half {
            continue;
        }
        let mut g = v;
        if heavy {
            g -= image_excess(dim, alpha, c * t, period, x);
        }
        sum += g.max(0.0).powf(power);
    }
    sum *= grid.cell_volume();
    if heavy {
        sum += outside_cube_tail(dim, alpha, two_q, c * t, half);
    }
    Ok(sum)
}

/// `Σ_{n ≠ 0} A |x + P n|^{-d-α}` over nearby images plus an integral remainder.
fn image_excess(dim: usize, alpha: f64, amplitude: f64, period: f64, x: [f64; 2]) -> f64 {
    const M: i64 = 8;
    let e = dim as f64 + alpha;
    let mut s = 0.0;
    match dim {
        1 => {
            for n in -M..=M {
                if n != 0 {
                    s += (x[0] + period * n as f64).abs().powf(-e);
                }
            }
            // Σ_{|n|>M} |P n|^{-e} ≈ 2 ∫_{M+1/2}^∞ (P u)^{-e} du
            s += 2.0 * period.powf(-e) * (M as f64 + 0.5).powf(1.0 - e) / (e - 1.0);
        }
        _ => {
            for n0 in -M..=M {
                for n1 in -M..=M {
                    if n0 == 0 && n1 == 0 {
                        continue;
                    }
                    let a = x[0] + period * n0 as f64;
                    let b = x[1] + period * n1 as f64;
                    s += a.hypot(b).powf(-e);
                }
            }
            // outside the (2M+1)² block: ∫_{|u|_∞ > M+1/2} |P u|^{-e} du
            s += period.powf(-e) * cube_complement_integral(2, e, M as f64 + 0.5);
        }
    }
    amplitude * s
}

/// `∫_{|u|_∞ > a} |u|^{-p} du` in `d` dimensions (`p > d`).
fn cube_complement_integral(dim: usize, p: f64, a: f64) -> f64 {
    match dim {
        1 => 2.0 * a.powf(1.0 - p) / (p - 1.0),
        _ => {
            let angular = crate::quad::integrate(|s| (1.0 + s * s).powf(-p / 2.0), 0.0, 1.0);
            8.0 * a.powf(2.0 - p) / (p - 2.0) * angular
        }
    }
}

/// `∫_{|η|_∞ > a} (A |η|^{-d-α})^{1/(2q)} dη`.
fn outside_cube_tail(dim: usize, alpha: f64, two_q: f64, amplitude: f64, a: f64) -> f64 {
    let p = (dim as f64 + alpha) / two_q;
    amplitude.powf(1.0 / two_q) * cube_complement_integral(dim, p, a)
}

/// Mass of the unit ball, re-exported for callers building kernel batteries.
pub fn ball_volume(dim: usize) -> f64 {
    unit_ball_volume(dim)
}

/// Tolerances of the kernel property battery.
pub const MASS_TOLERANCE: f64 = 1e-4;
pub const SEMIGROUP_TOLERANCE: f64 = 1e-6;
pub const SCALING_TOLERANCE: f64 = 1e-4;
pub const CLOSED_FORM_TOLERANCE: f64 = 1e-6;
pub const TAIL_SPREAD: f64 = 50.0;
pub const FRACTIONAL_TOLERANCE: f64 = 0.01;

/// Grid with spacing `w/16` and a torus of 16 widths (1-d) or 8 widths (2-d),
/// `w = t^{1/α}`.
pub fn battery_grid(dim: usize, alpha: f64, t: f64) -> Result<GridSpec> {
    let w = t.powf(1.0 / alpha);
    let n = if dim == 1 { 512 } else { 128 };
    GridSpec::new(dim, n as f64 / 2.0 * w / 16.0, n)
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelRow {
    pub dim: usize,
    pub alpha: f64,
    pub t: f64,
    pub half_length: f64,
    pub points: usize,
    pub mass_error: f64,
    /// Semigroup defect `G(t/2) ⋆ G(t/2)` against `G(t)`, relative to the peak.
    pub semigroup_error: f64,
    pub scaling_error: f64,
    /// Against the periodized heat or Cauchy kernel (`α ∈ {1, 2}`).
    pub closed_form_error: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TailRow {
    pub dim: usize,
    pub alpha: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct FractionalRow {
    pub dim: usize,
    pub alpha: f64,
    pub two_q: f64,
    pub t: f64,
    pub value: f64,
    /// `I(t) / (t^{κ/2} I(1)) − 1`.
    pub scaling_defect: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelBattery {
    pub rows: Vec<KernelRow>,
    pub tails: Vec<TailRow>,
    pub fractional: Vec<FractionalRow>,
    pub pass: bool,
}

fn closed_form_error(grid: &GridSpec, k: &KernelField) -> Option<f64> {
    let (alpha, t) = (k.alpha(), k.time());
    if alpha != 1.0 && alpha != 2.0 {
        return None;
    }
    let stride = if grid.dim() == 1 { 7 } else { 331 };
    let l = grid.half_length();
    let peak = k.peak();
    let err = (0..grid.len())
        .step_by(stride)
        .map(|i| {
            let x = grid.node(i);
            let want = if alpha == 2.0 {
                oracle::periodic_heat(grid.dim(), t, l, x)
            } else {
                oracle::periodic_cauchy(grid.dim(), t, l, x)
            };
            (k.values()[i] - want).abs() / peak
        })
        .fold(0.0, f64::max);
    Some(err)
}

/// `2q` halfway into the admissible window, capped at 1.5.
pub fn battery_two_q(dim: usize, alpha: f64) -> f64 {
    let (_, hi) = two_q_window(dim, alpha);
    (1.0 + 0.5 * (hi - 1.0)).min(1.5)
}

/// Grid for `∫G^{1/(2q)}` at time `t`: power-of-two torus of at least 16
/// widths, fixed node count, so different `t` see different relative resolution.
fn fractional_grid(dim: usize, alpha: f64, t: f64) -> Result<GridSpec> {
    let w = t.powf(1.0 / alpha);
    let l = 2f64.powf((16.0 * w).log2().ceil());
    GridSpec::new(dim, l, if dim == 1 { 8192 } else { 1024 })
}

/// Mass, semigroup, scaling, closed-form, tail and fractional-power checks
/// over `dims × alphas × times`.
pub fn kernel_battery(dims: &[usize], alphas: &[f64], times: &[f64]) -> Result<KernelBattery> {
    let mut rows = Vec::new();
    let mut tails = Vec::new();
    let mut fractional = Vec::new();
    for &dim in dims {
        for &alpha in alphas {
            for &t in times {
                let grid = battery_grid(dim, alpha, t)?;
                let k = evaluate_kernel(&Fourier::new(&grid), alpha, t)?;
                let mass_error = (k.mass() - 1.0).abs();
                let semi = check_semigroup(&grid, alpha, t / 2.0, t / 2.0)?;
                let semigroup_error = semi.error / semi.peak;
                let scaling_error = check_scaling(&grid, alpha, t)?.error;
                let closed = closed_form_error(&grid, &k);
                let pass = mass_error < MASS_TOLERANCE
                    && semigroup_error < SEMIGROUP_TOLERANCE
                    && scaling_error < SCALING_TOLERANCE
                    && closed.map_or(true, |e| e < CLOSED_FORM_TOLERANCE);
                rows.push(KernelRow {
                    dim,
                    alpha,
                    t,
                    half_length: grid.half_length(),
                    points: grid.points_per_axis(),
                    mass_error,
                    semigroup_error,
                    scaling_error,
                    closed_form_error: closed,
                    pass,
                });
            }
            if alpha < 2.0 {
                let grid = GridSpec::new(dim, 64.0, if dim == 1 { 4096 } else { 1024 })?;
                let (lo, hi) = tail_bound_ratio(&grid, alpha)?;
                tails.push(TailRow {
                    dim,
                    alpha,
                    min_ratio: lo,
                    max_ratio: hi,
                    pass: lo > 0.0 && hi / lo < TAIL_SPREAD,
                });
            }
            let two_q = battery_two_q(dim, alpha);
            let kap = kappa(dim, alpha, two_q);
            let unit = fractional_power_integral(&fractional_grid(dim, alpha, 1.0)?, alpha, two_q, 1.0)?;
            for &t in times {
                let value = fractional_power_integral(&fractional_grid(dim, alpha, t)?, alpha, two_q, t)?;
                let scaling_defect = value / (t.powf(kap / 2.0) * unit) - 1.0;
                fractional.push(FractionalRow {
                    dim,
                    alpha,
                    two_q,
                    t,
                    value,
                    scaling_defect,
                    pass: scaling_defect.abs() < FRACTIONAL_TOLERANCE,
                });
            }
        }
    }
    let pass = rows.iter().all(|r| r.pass) && tails.iter().all(|r| r.pass) && fractional.iter().all(|r| r.pass);
    Ok(KernelBattery {
        rows,
        tails,
        fractional,
        pass,
    })
}

/// Closed-form periodized kernels for `α = 1` and `α = 2`.
pub mod oracle {
    use super::*;

    /// Σ_n (4πt)^{-d/2} exp(−|x + 2Ln|²/(4t)).
    pub fn periodic_heat(dim: usize, t: f64, l: f64, x: [f64; 2]) -> f64 {
        let p = 2.0 * l;
        let one = |y: f64| -> f64 {
            (-40..=40)
                .map(|n| {
                    let z = y + p * n as f64;
                    (-z * z / (4.0 * t)).exp()
                })
                .sum::<f64>()
                / (4.0 * PI * t).sqrt()
        };
        match dim {
            1 => one(x[0]),
            _ => one(x[0]) * one(x[1]),
        }
    }

    /// Periodized Cauchy (Poisson) kernel.
    pub fn periodic_cauchy(dim: usize, t: f64, l: f64, x: [f64; 2]) -> f64 {
        match dim {
            1 => {
                let a = PI * t / l;
                a.sinh() / (2.0 * l * (a.cosh() - (PI * x[0] / l).cos()))
            }
            _ => {
                // G(t,x) = t / (2π (t² + |x|²)^{3/2}); images summed, far field integrated.
                let p = 2.0 * l;
                let m = 200i64;
                let mut s = 0.0;
                for n0 in -m..=m {
                    for n1 in -m..=m {
                        let a = x[0] + p * n0 as f64;
                        let b = x[1] + p * n1 as f64;
                        s += t / (2.0 * PI * (t * t + a * a + b * b).powf(1.5));
                    }
                }
                // remainder: t/(2π P²) times the integral of |u|^{-3} outside the covered square
                let a = (m as f64 + 0.5) * p;
                let angular = crate::quad::integrate(|s| (1.0 + s * s).powf(-1.5), 0.0, 1.0);
                s + t / (2.0 * PI) * 8.0 / a * angular / (p * p)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::oracle::*;
    use super::*;

    /// Grid with spacing width/16 and a torus of 16 widths (1-d) / 8 widths (2-d).
    fn grid_for(dim: usize, alpha: f64, t: f64) -> GridSpec {
        battery_grid(dim, alpha, t).unwrap()
    }

    #[test]
    fn rejects_bad_parameters() {
        let g = GridSpec::new(1, 10.0, 64).unwrap();
        let ft = Fourier::new(&g);
        assert!(evaluate_kernel(&ft, 1.0, 0.0).is_err());
        assert!(evaluate_kernel(&ft, 1.0, -1.0).is_err());
        assert!(evaluate_kernel(&ft, 0.0, 1.0).is_err());
        assert!(evaluate_kernel(&ft, 2.5, 1.0).is_err());
        assert!(check_semigroup(&g, 1.5, 1.0, 0.0).is_err());
    }

    #[test]
    fn heat_and_poisson_values_at_origin() {
        // large tori so the periodic images sit below 1e-6
        let g = GridSpec::new(1, 20.0, 1024).unwrap();
        let k = evaluate_kernel(&Fourier::new(&g), 2.0, 1.0).unwrap();
        let v = k.values()[g.origin()];
        assert!((v - 1.0 / (4.0 * PI).sqrt()).abs() < 1e-6, "{v}");

        let g = GridSpec::new(1, 1024.0, 1 << 16).unwrap();
        let k = evaluate_kernel(&Fourier::new(&g), 1.0, 1.0).unwrap();
        let v = k.values()[g.origin()];
        assert!((v - 1.0 / PI).abs() < 1e-6, "{v}");
    }

    #[test]
    fn matches_periodized_closed_forms() {
        for dim in [1, 2] {
            for &t in &[0.1, 1.0, 10.0] {
                for &alpha in &[1.0, 2.0] {
                    let g = grid_for(dim, alpha, t);
                    let k = evaluate_kernel(&Fourier::new(&g), alpha, t).unwrap();
                    let stride = if dim == 1 { 7 } else { 331 };
                    for i in (0..g.len()).step_by(stride) {
                        let x = g.node(i);
                        let want = if alpha == 2.0 {
                            periodic_heat(dim, t, g.half_length(), x)
                        } else {
                            periodic_cauchy(dim, t, g.half_length(), x)
                        };
                        let err = (k.values()[i] - want).abs() / k.peak();
                        assert!(err < 1e-6, "d={dim} t={t} a={alpha} x={x:?}: {err:e}");
                    }
                }
            }
        }
    }

    #[test]
    fn mass_positivity_symmetry() {
        for dim in [1, 2] {
            for &alpha in &[0.8, 1.0, 1.5, 2.0] {
                for &t in &[0.1, 1.0, 10.0] {
                    let g = grid_for(dim, alpha, t);
                    let k = evaluate_kernel(&Fourier::new(&g), alpha, t).unwrap();
                    assert!((k.mass() - 1.0).abs() < 1e-4);
                    assert!(k.within_ringing_tolerance(), "{}", k.negative_excursion());
                    assert!(k.symmetry_error() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn semigroup_heat_closed_form_and_stable() {
        let g = GridSpec::new(1, 20.0, 2048).unwrap();
        let c = check_semigroup(&g, 2.0, 0.5, 0.5).unwrap();
        assert!(c.error < 1e-8 && c.reliable);
        // closed-form heat kernels on both sides
        let ft = Fourier::new(&g);
        let h = evaluate_kernel(&ft, 2.0, 0.5).unwrap();
        let conv = direct_circular_convolution(h.field(), h.field());
        for (i, v) in conv.iter().enumerate().step_by(13) {
            let want = periodic_heat(1, 1.0, 20.0, g.node(i));
            assert!((v - want).abs() < 1e-8);
        }
        let c = check_semigroup(&g, 1.5, 0.5, 0.5).unwrap();
        assert!(c.error < 1e-6 * c.peak);
    }

    #[test]
    fn semigroup_spectral_identity() {
        // e^{-t|ξ|^α} e^{-s|ξ|^α} = e^{-(t+s)|ξ|^α} evaluated mode by mode
        let (a, t, s) = (1.5, 0.5, 0.5);
        for k in 0..100 {
            let xi = 0.37 * k as f64;
            assert!((symbol(a, t, xi) * symbol(a, s, xi) - symbol(a, t + s, xi)).abs() < 1e-15);
        }
    }

    #[test]
    fn semigroup_flags_unresolved_grids() {
        let g = GridSpec::new(1, 100.0, 64).unwrap();
        assert!(!check_semigroup(&g, 1.5, 0.01, 0.01).unwrap().reliable);
    }

    #[test]
    fn scaling_identity() {
        let g = GridSpec::new(1, 40.0, 1024).unwrap();
        let ft = Fourier::new(&g);
        let g16 = evaluate_kernel(&ft, 2.0, 16.0).unwrap();
        let g1 = evaluate_kernel(&ft, 2.0, 1.0).unwrap();
        let o = g.origin();
        assert!((g16.values()[o] - 0.25 * g1.values()[o]).abs() < 1e-12);

        assert!(check_scaling(&g, 1.0, 4.0).unwrap().error < 1e-4);
        // Cauchy: G(4, x) = t / (π (t² + x²)) on a large torus, compared with closed form
        let big = GridSpec::new(1, 4096.0, 1 << 16).unwrap();
        let k4 = evaluate_kernel(&Fourier::new(&big), 1.0, 4.0).unwrap();
        for &x in &[0.0, 1.0, 3.0, 10.0] {
            let i = ((x + 4096.0) / big.spacing()).round() as usize;
            let want = periodic_cauchy(1, 4.0, 4096.0, [x, 0.0]);
            assert!((k4.values()[i] - want).abs() < 1e-9);
        }

        let g2 = GridSpec::new(2, 12.0, 128).unwrap();
        let c = check_scaling(&g2, 1.5, 2.0).unwrap();
        assert!(c.error < 1e-4, "{}", c.error);
    }

    #[test]
    fn tail_sandwich() {
        let g = GridSpec::new(1, 64.0, 4096).unwrap();
        assert!(tail_bound_ratio(&g, 2.0).is_err());
        let (lo, hi) = tail_bound_ratio(&g, 1.5).unwrap();
        assert!(lo > 0.01 && hi / lo < 50.0, "{lo} {hi}");

        // Cauchy: G(1,x)(1+|x|)² → 1/π
        let g = GridSpec::new(1, 4096.0, 1 << 16).unwrap();
        let k = evaluate_kernel(&Fourier::new(&g), 1.0, 1.0).unwrap();
        let i = ((1000.0 + 4096.0) / g.spacing()).round() as usize;
        let x = g.coordinate(i);
        let periodic = periodic_cauchy(1, 1.0, 4096.0, [x, 0.0]);
        assert!((k.values()[i] - periodic).abs() < 1e-9 * periodic);
        // the free-space kernel 1/(π(1 + x²)) carries the 1/π limit
        let v = (1.0 + x).powi(2) / (PI * (1.0 + x * x));
        assert!((v - 1.0 / PI).abs() < 3e-3 / PI, "{v}");

        let small = GridSpec::new(1, 30.0, 1024).unwrap();
        assert!(matches!(tail_bound_ratio(&small, 1.5), Err(Error::Resolution(_))));
    }

    #[test]
    fn tail_constant_matches_cauchy_and_large_x() {
        assert!((stable_tail_constant(1, 1.0) - 1.0 / PI).abs() < 1e-14);
        // d = 2, α = 1: t/(2π|x|³)
        assert!((stable_tail_constant(2, 1.0) - 1.0 / (2.0 * PI)).abs() < 1e-14);
    }

    #[test]
    fn kappa_and_window() {
        let k = validate_two_q(1, 1.5, 1.2).unwrap();
        assert!((k - 2.0 / 9.0).abs() < 1e-14);
        // boundary 2d/(2d − α) = 4 is excluded for d=1, α=1.5; (d+α)/d = 2.5 binds first
        assert!(validate_two_q(1, 1.5, 2.5).is_err());
        assert!(validate_two_q(2, 1.5, 1.6).is_err());
        assert!(validate_two_q(1, 1.5, 1.0).is_err());
        let (lo, hi) = two_q_window(1, 1.5);
        assert_eq!(lo, 1.0);
        assert!((hi - 2.5).abs() < 1e-15);
    }

    #[test]
    fn fractional_power_scales_like_t_kappa_half() {
        let (alpha, two_q) = (1.5, 1.2);
        let kappa = kappa(1, alpha, two_q);
        let g = GridSpec::new(1, 400.0, 1 << 15).unwrap();
        let r1 = fractional_power_integral(&g, alpha, two_q, 1.0).unwrap();
        let r4 = fractional_power_integral(&g, alpha, two_q, 4.0).unwrap() / 4f64.powf(kappa / 2.0);
        assert!((r1 / r4 - 1.0).abs() < 0.01, "{r1} {r4}");
    }
}
