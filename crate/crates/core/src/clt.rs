//! Spatial averages `G_R(t) = ∫_{B_R}(u(t,x) − 1)dx` and the Monte Carlo
//! experiments built on them: variance scaling, limiting covariance, distance
//! to normality, the functional CLT covariance, and the tightness kernel.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::{LimitConstants, MomentProbe, ReplicaMoments};
use crate::error::{invalid, Error, Result};
use crate::grid::{Fourier, GridSpec, RealField};
use crate::noise::CovarianceModel;
use crate::quad::{integrate, panels};
use crate::rng::derive_seed;
use crate::solver::Simulator;
use crate::special::{bessel_ball, unit_sphere_area};
use crate::stats::{
    bootstrap, mardia_skewness, normal_distances, null_floor, ols, quantile_of, Estimate, Interval,
    LineFit, Mardia, NullFloor,
};

/// Sub-cells per axis used to weight cells cut by the sphere in 2-d.
pub const SUPERSAMPLE: usize = 32;
pub const VARIANCE_SLOPE_TOLERANCE: f64 = 0.15;
pub const DISTANCE_SLOPE_TOLERANCE: f64 = 0.2;
pub const LIMIT_COVARIANCE_TOLERANCE: f64 = 0.10;
pub const FCLT_TOLERANCE: f64 = 0.15;
pub const MARDIA_LEVEL: f64 = 0.01;
pub const TIGHTNESS_SPREAD: f64 = 10.0;
pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// Largest radius whose ball stays clear of the periodic images of the
/// kernel mass up to time `horizon`: `L − 4 T^{1/α}`.
pub fn truncation_limit(grid: &GridSpec, alpha: f64, horizon: f64) -> f64 {
    grid.half_length() - 4.0 * horizon.powf(1.0 / alpha)
}

/// Cell weights `|cell ∩ B_R|` of the ball centred at the origin.
#[derive(Debug, Clone)]
pub struct BallWeights {
    radius: f64,
    entries: Vec<(usize, f64)>,
}

impl BallWeights {
    pub fn new(grid: &GridSpec, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius < grid.half_length()) {
            return Err(invalid(format!(
                "ball radius {radius} must lie in (0, L = {})",
                grid.half_length()
            )));
        }
        let h = grid.spacing();
        let mut entries = Vec::new();
        for i in 0..grid.len() {
            let x = grid.node(i);
            let w = match grid.dim() {
                1 => ((x[0] + h / 2.0).min(radius) - (x[0] - h / 2.0).max(-radius)).max(0.0),
                _ => square_disc_overlap(x, h, radius),
            };
            if w > 0.0 {
                entries.push((i, w));
            }
        }
        Ok(Self { radius, entries })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// `Σ w_i (u_i − 1)`.
    pub fn apply(&self, u: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, w)| w * (u[i] - 1.0)).sum()
    }

    /// Total weight, the discrete ball volume.
    pub fn volume(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn dense(&self, len: usize) -> Vec<f64> {
        let mut v = vec![0.0; len];
        for &(i, w) in &self.entries {
            v[i] = w;
        }
        v
    }
}

fn square_disc_overlap(c: [f64; 2], h: f64, r: f64) -> f64 {
    let near = |a: f64| (a.abs() - h / 2.0).max(0.0);
    let far = |a: f64| a.abs() + h / 2.0;
    if far(c[0]).hypot(far(c[1])) <= r {
        return h * h;
    }
    if near(c[0]).hypot(near(c[1])) >= r {
        return 0.0;
    }
    let s = h / SUPERSAMPLE as f64;
    let mut inside = 0usize;
    for a in 0..SUPERSAMPLE {
        for b in 0..SUPERSAMPLE {
            let x = c[0] - h / 2.0 + (a as f64 + 0.5) * s;
            let y = c[1] - h / 2.0 + (b as f64 + 0.5) * s;
            if x.hypot(y) <= r {
                inside += 1;
            }
        }
    }
    inside as f64 * s * s
}

/// `G_R = Σ_{|x| ≤ R} (u(x) − 1) Δx^d` with cut cells volume-weighted.
pub fn spatial_average(u: &RealField, radius: f64) -> Result<f64> {
    Ok(BallWeights::new(u.grid(), radius)?.apply(u.values()))
}

/// `∫_{ℝ^d} R^d|ξ|^{-d}J²_{d/2}(R|ξ|) f(|ξ|) dξ`, i.e. `(2π)^{-d}∫|1̂_{B_R}|² f`.
///
/// In `ρ = R|ξ|` this is `R^d |S^{d-1}| ∫ ρ^{-1} J²(ρ) f(ρ/R) dρ`; the
/// oscillatory part is integrated panelwise up to `ρ = 2000` and the rest with
/// the averaged asymptotic `J² ≈ 1/(πρ)`.
pub fn ball_spectral_integral<F: Fn(f64) -> f64>(dim: usize, radius: f64, f: F) -> f64 {
    const CUT: f64 = 2000.0;
    let g = |rho: f64| {
        if rho <= 0.0 {
            return 0.0;
        }
        let j = bessel_ball(dim, rho);
        j * j / rho * f(rho / radius)
    };
    let head = integrate(g, 0.0, 1.0) + panels(g, 1.0, CUT, 1.0);
    let tail = integrate(
        |v: f64| {
            if v <= 0.0 {
                0.0
            } else {
                // ρ = CUT / v
                let rho = CUT / v;
                f(rho / radius) / (PI * rho * rho) * CUT / (v * v)
            }
        },
        0.0,
        1.0,
    );
    radius.powi(dim as i32) * unit_sphere_area(dim) * (head + tail)
}

fn time_factor(lambda: f64, t: f64) -> f64 {
    let x = 2.0 * t * lambda;
    if x < 1e-8 {
        t
    } else {
        -(-x).exp_m1() / (2.0 * lambda)
    }
}

/// `Cov(G_R(t), G_R(r))` for additive noise `σ ≡ 1` on `ℝ^d`.
pub fn additive_covariance(model: &CovarianceModel, alpha: f64, radius: f64, t: f64, r: f64) -> f64 {
    let (lo, hi) = (t.min(r), t.max(r));
    ball_spectral_integral(model.dim(), radius, |x| {
        let lam = x.powf(alpha);
        model.spectral_profile(x) * (-(hi - lo) * lam).exp() * time_factor(lam, lo)
    })
}

/// The same covariance for the simulated lattice, torus, and ball weights;
/// exact for the scheme under additive noise.
pub fn lattice_additive_covariance(
    grid: &GridSpec,
    model: &CovarianceModel,
    alpha: f64,
    weights: &BallWeights,
    t: f64,
    r: f64,
) -> Result<f64> {
    let spectrum = model.lattice_spectrum(grid)?;
    let fourier = Fourier::new(grid);
    let mut scratch = fourier.scratch();
    let mut w: Vec<Complex64> = weights.dense(grid.len()).into_iter().map(|v| Complex64::new(v, 0.0)).collect();
    fourier.dft(&mut w, &mut scratch);
    let (lo, hi) = (t.min(r), t.max(r));
    let sum: f64 = (0..grid.len())
        .map(|k| {
            let lam = grid.wave_norm(k).powf(alpha);
            spectrum.values[k] * w[k].norm_sqr() * (-(hi - lo) * lam).exp() * time_factor(lam, lo)
        })
        .sum();
    Ok(sum / grid.volume())
}

/// `K_R(t,s)`: the second moment of the increment `G_R(t) − G_R(s)` under
/// additive noise, by spectral quadrature.
pub fn tightness_kernel(model: &CovarianceModel, alpha: f64, radius: f64, t: f64, s: f64) -> f64 {
    let (s, t) = (s.min(t), s.max(t));
    let dt = t - s;
    if dt == 0.0 {
        return 0.0;
    }
    ball_spectral_integral(model.dim(), radius, |x| {
        let lam = x.powf(alpha);
        let jump = -(-dt * lam).exp_m1();
        model.spectral_profile(x) * (jump * jump * time_factor(lam, s) + time_factor(lam, dt))
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TightnessRow {
    pub radius: f64,
    pub t: f64,
    pub s: f64,
    pub kernel: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TightnessReport {
    pub rows: Vec<TightnessRow>,
    pub max_ratio: f64,
    pub min_ratio: f64,
    pub pass: bool,
}

/// `K_R(t,s) / (R^{2d−β}(t − s))` over a battery of radii and time pairs.
pub fn tightness_check(
    model: &CovarianceModel,
    alpha: f64,
    radii: &[f64],
    pairs: &[(f64, f64)],
) -> Result<TightnessReport> {
    let d = model.dim() as f64;
    let beta = model.beta();
    let mut rows = Vec::new();
    for &r in radii {
        for &(t, s) in pairs {
            if t <= s {
                return Err(invalid(format!("tightness pairs need t > s, got ({t}, {s})")));
            }
            let k = tightness_kernel(model, alpha, r, t, s);
            if !k.is_finite() || k < 0.0 {
                return Err(Error::Convergence(format!("K_R quadrature failed at R={r}, t={t}, s={s}")));
            }
            rows.push(TightnessRow {
                radius: r,
                t,
                s,
                kernel: k,
                ratio: k / (r.powf(2.0 * d - beta) * (t - s)),
            });
        }
    }
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let min_ratio = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    Ok(TightnessReport {
        pass: max_ratio.is_finite() && min_ratio > 0.0 && max_ratio / min_ratio < TIGHTNESS_SPREAD,
        rows,
        max_ratio,
        min_ratio,
    })
}

/// What to record from each replica.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsemblePlan {
    pub times: Vec<f64>,
    pub radii: Vec<f64>,
    pub replicas: u64,
    pub seed: u64,
    /// Also record the per-replica moments feeding θ and ν.
    pub moments: bool,
}

/// `g[i][k][r]` is `G_{R_k}(t_i)` of replica `r`; `moments[i][r]` the
/// replica's summaries at `t_i`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleData {
    pub times: Vec<f64>,
    pub radii: Vec<f64>,
    pub g: Vec<Vec<Vec<f64>>>,
    pub moments: Vec<Vec<ReplicaMoments>>,
}

impl EnsembleData {
    pub fn samples(&self, time: usize, radius: usize) -> &[f64] {
        &self.g[time][radius]
    }

    pub fn replicas(&self) -> usize {
        self.g.first().and_then(|a| a.first()).map(|v| v.len()).unwrap_or(0)
    }

    /// The same ensemble restricted to the radii at `keep`.
    pub fn with_radii(&self, keep: &[usize]) -> Self {
        Self {
            times: self.times.clone(),
            radii: keep.iter().map(|&k| self.radii[k]).collect(),
            g: self.g.iter().map(|t| keep.iter().map(|&k| t[k].clone()).collect()).collect(),
            moments: self.moments.clone(),
        }
    }
}

/// Runs the ensemble in parallel; results are indexed by replica so the
/// outcome does not depend on scheduling.
pub fn run_ensemble(sim: &Simulator, plan: &EnsemblePlan) -> Result<EnsembleData> {
    let cfg = sim.config();
    let grid = *sim.grid();
    let limit = truncation_limit(&grid, cfg.alpha, cfg.horizon);
    if let Some(&r) = plan.radii.iter().find(|&&r| r > limit) {
        return Err(invalid(format!(
            "radius {r} exceeds the truncation limit L − 4T^(1/alpha) = {limit:.3}"
        )));
    }
    if plan.times.iter().any(|&t| t > cfg.horizon + 1e-12) {
        return Err(invalid("output time beyond the horizon"));
    }
    let steps = plan.times.iter().map(|&t| cfg.steps_to(t)).collect::<Result<Vec<_>>>()?;
    if steps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("output times must increase"));
    }
    let balls = plan.radii.iter().map(|&r| BallWeights::new(&grid, r)).collect::<Result<Vec<_>>>()?;
    let probe = plan.moments.then(|| MomentProbe::new(&grid, &cfg.model, cfg.sigma));
    let n_steps = steps.last().copied().unwrap_or(0);
    type Obs = (Vec<Vec<f64>>, Vec<ReplicaMoments>);
    let per_replica: Vec<Result<Obs>> = (0..plan.replicas)
        .into_par_iter()
        .map(|rep| {
            let mut g = Vec::with_capacity(steps.len());
            let mut m = Vec::with_capacity(steps.len());
            sim.run(plan.seed, rep, n_steps, |k, u| {
                if steps.contains(&k) {
                    g.push(balls.iter().map(|b| b.apply(u)).collect());
                    if let Some(p) = &probe {
                        m.push(p.observe(u));
                    }
                }
                Ok(())
            })?;
            Ok((g, m))
        })
        .collect();
    let nt = plan.times.len();
    let nr = plan.radii.len();
    let mut g = vec![vec![Vec::with_capacity(plan.replicas as usize); nr]; nt];
    let mut moments = vec![Vec::with_capacity(plan.replicas as usize); if plan.moments { nt } else { 0 }];
    for res in per_replica {
        let (obs, m) = res?;
        for (i, row) in obs.into_iter().enumerate() {
            for (k, v) in row.into_iter().enumerate() {
                g[i][k].push(v);
            }
        }
        for (i, x) in m.into_iter().enumerate() {
            moments[i].push(x);
        }
    }
    Ok(EnsembleData {
        times: plan.times.clone(),
        radii: plan.radii.clone(),
        g,
        moments,
    })
}

fn resample_indices(n: usize, resamples: usize, seed: u64) -> Vec<Vec<usize>> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..resamples).map(|_| (0..n).map(|_| rng.gen_range(0..n)).collect()).collect()
}

fn percentile_interval(xs: &[f64]) -> Interval {
    Interval {
        lo: quantile_of(xs, 0.025),
        hi: quantile_of(xs, 0.975),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarianceRow {
    pub radius: f64,
    pub variance: Estimate,
    pub ci: Interval,
    /// Continuum value for additive noise, times `σ(1)²`.
    pub oracle: Option<f64>,
    /// Lattice-exact value for additive noise.
    pub lattice_oracle: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarianceReport {
    pub time: f64,
    pub rows: Vec<VarianceRow>,
    pub fit: LineFit,
    pub slope_ci: Interval,
    pub target: f64,
    pub slope_pass: bool,
    /// Largest `|MC − oracle| / s.e.` over the radii (additive noise only).
    pub oracle_z: Option<f64>,
    pub warnings: Vec<String>,
    pub pass: bool,
}

/// Inputs shared by the experiment reports.
#[derive(Debug, Clone, Copy)]
pub struct ExperimentContext<'a> {
    pub grid: &'a GridSpec,
    pub model: &'a CovarianceModel,
    pub alpha: f64,
    /// `σ(1)` when the noise is additive.
    pub additive: Option<f64>,
    pub seed: u64,
}

/// Sample variances of `G_R(t)` and the log-log slope against `2d − β`.
pub fn variance_scaling(data: &EnsembleData, time: usize, ctx: &ExperimentContext) -> Result<VarianceReport> {
    let n = data.replicas();
    let t = data.times[time];
    let mut warnings = Vec::new();
    if data.radii.len() < 5 {
        warnings.push(format!("only {} radii (at least 5 required)", data.radii.len()));
    }
    let span = data.radii.iter().cloned().fold(0.0, f64::max) / data.radii.iter().cloned().fold(f64::INFINITY, f64::min);
    if span < 8.0 - 1e-9 {
        warnings.push(format!("radii span a factor {span:.2} (at least 8 required)"));
    }
    if n < 5000 {
        warnings.push(format!("{n} replicas (at least 5000 required)"));
    }
    let logr: Vec<f64> = data.radii.iter().map(|r| r.ln()).collect();
    let boots = resample_indices(n, BOOTSTRAP_RESAMPLES, derive_seed(ctx.seed, "variance-bootstrap"));
    let mut rows = Vec::new();
    let mut boot_var: Vec<Vec<f64>> = vec![Vec::new(); BOOTSTRAP_RESAMPLES];
    for (k, &r) in data.radii.iter().enumerate() {
        let xs = data.samples(time, k);
        let variance = Estimate::of_variance(xs);
        let reps: Vec<f64> = boots
            .iter()
            .map(|idx| {
                let v: Vec<f64> = idx.iter().map(|&i| xs[i]).collect();
                crate::stats::variance(&v)
            })
            .collect();
        for (b, v) in reps.iter().enumerate() {
            boot_var[b].push(v.ln());
        }
        let (oracle, lattice_oracle) = match ctx.additive {
            Some(s) => {
                let w = BallWeights::new(ctx.grid, r)?;
                (
                    Some(s * s * additive_covariance(ctx.model, ctx.alpha, r, t, t)),
                    Some(s * s * lattice_additive_covariance(ctx.grid, ctx.model, ctx.alpha, &w, t, t)?),
                )
            }
            None => (None, None),
        };
        rows.push(VarianceRow {
            radius: r,
            variance,
            ci: percentile_interval(&reps),
            oracle,
            lattice_oracle,
        });
    }
    let logv: Vec<f64> = rows.iter().map(|r| r.variance.value.ln()).collect();
    let fit = ols(&logr, &logv);
    let slopes: Vec<f64> = boot_var.iter().map(|lv| ols(&logr, lv).slope).collect();
    let target = 2.0 * ctx.model.dim() as f64 - ctx.model.beta();
    let slope_pass = (fit.slope - target).abs() <= VARIANCE_SLOPE_TOLERANCE;
    let oracle_z = ctx.additive.map(|_| {
        rows.iter()
            .map(|r| r.variance.z_against(r.oracle.expect("additive rows carry an oracle")))
            .fold(0.0, f64::max)
    });
    let pass = slope_pass && warnings.is_empty();
    Ok(VarianceReport {
        time: t,
        rows,
        fit,
        slope_ci: percentile_interval(&slopes),
        target,
        slope_pass,
        oracle_z,
        warnings,
        pass,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovarianceRow {
    pub radius: f64,
    /// `R^{β−2d} Cov(G_R(t), G_R(r))`.
    pub normalized: Estimate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LimitCovarianceReport {
    pub t: f64,
    pub r: f64,
    pub rows: Vec<CovarianceRow>,
    /// `∫₀^{t∧r} ϱ²(s) ds`.
    pub target: Estimate,
    pub gap: f64,
    pub allowed: f64,
    pub pass: bool,
}

/// Normalized covariances against the limit, judged at the largest radius.
pub fn limiting_covariance(
    data: &EnsembleData,
    ti: usize,
    tj: usize,
    model: &CovarianceModel,
    constants: &LimitConstants,
) -> Result<LimitCovarianceReport> {
    if (constants.k_beta.beta - model.beta()).abs() > 1e-12 || constants.case != model.case_label() {
        return Err(Error::Regime("constants were computed for a different regime".into()));
    }
    let d = model.dim() as f64;
    let beta = model.beta();
    let rows: Vec<CovarianceRow> = data
        .radii
        .iter()
        .enumerate()
        .map(|(k, &r)| {
            let s = r.powf(beta - 2.0 * d);
            let c = Estimate::of_covariance(data.samples(ti, k), data.samples(tj, k));
            CovarianceRow {
                radius: r,
                normalized: Estimate::new(s * c.value, s * c.se),
            }
        })
        .collect();
    let (t, r) = (data.times[ti], data.times[tj]);
    let target = constants.integrated_rho_sq(t.min(r));
    let last = rows.last().ok_or_else(|| Error::Insufficient("no radii".into()))?;
    let gap = (last.normalized.value - target.value).abs();
    let se = last.normalized.se.hypot(target.se);
    let allowed = (LIMIT_COVARIANCE_TOLERANCE * target.value.abs()).max(3.0 * se);
    Ok(LimitCovarianceReport {
        t,
        r,
        rows,
        target,
        gap,
        allowed,
        pass: gap < allowed,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistanceRow {
    pub radius: f64,
    pub ks: f64,
    pub tv: f64,
    pub ks_ci: Interval,
    pub tv_ci: Interval,
    /// Distances net of the null-calibrated estimator bias.
    pub ks_excess: f64,
    pub tv_excess: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistanceReport {
    pub time: f64,
    pub floor: NullFloor,
    pub null_ks: f64,
    pub null_tv: f64,
    pub null_pass: bool,
    pub rows: Vec<DistanceRow>,
    pub ks_fit: LineFit,
    pub tv_fit: LineFit,
    pub slope_bound: f64,
    pub ks_decreasing: bool,
    pub tv_decreasing: bool,
    /// KS ≤ TV + floor on every sample set.
    pub ordering: bool,
    pub warnings: Vec<String>,
    pub pass: bool,
}

/// Bias-corrected distance: the null mean is removed in quadrature, since
/// sampling noise and a true discrepancy add roughly like independent errors.
fn excess(raw: f64, null_mean: f64) -> f64 {
    (raw * raw - null_mean * null_mean).max(0.0).sqrt()
}

/// A sequence of intervals is decreasing when no later CI lies wholly above
/// an earlier one and the last CI lies wholly below the first.
fn ci_decreasing(cis: &[Interval]) -> bool {
    let no_rise = (0..cis.len()).all(|i| (i + 1..cis.len()).all(|j| cis[j].lo <= cis[i].hi));
    let net_fall = match (cis.first(), cis.last()) {
        (Some(a), Some(b)) if cis.len() > 1 => b.hi < a.lo,
        _ => false,
    };
    no_rise && net_fall
}

/// KS and binned TV distances of standardized `G_R(t)` to `N(0,1)`.
pub fn gaussian_distance(data: &EnsembleData, time: usize, ctx: &ExperimentContext) -> Result<DistanceReport> {
    let n = data.replicas();
    let mut warnings = Vec::new();
    if n < 10_000 {
        warnings.push(format!("{n} replicas per radius (at least 10000 required)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ctx.seed, "distance-null"));
    let floor = null_floor(n, 400, 0.99, &mut rng)?;
    // an independent null sample must sit below the declared floor
    let null_sample: Vec<f64> = (0..n)
        .map(|_| rand::Rng::sample::<f64, _>(&mut rng, rand_distr::StandardNormal))
        .collect();
    let nd = normal_distances(&null_sample)?;
    let null_pass = nd.ks < floor.ks_floor && nd.tv < floor.tv_floor && nd.ks < 1.36 / (n as f64).sqrt();
    let mut rows = Vec::new();
    let mut ordering = nd.ks <= nd.tv + floor.tv_floor;
    for (k, &r) in data.radii.iter().enumerate() {
        let xs = data.samples(time, k);
        let dist = normal_distances(xs)?;
        ordering &= dist.ks <= dist.tv + floor.tv_floor;
        let mut brng = ChaCha8Rng::seed_from_u64(derive_seed(ctx.seed, &format!("distance-bootstrap-{k}")));
        let (ks_ci, _) = bootstrap(xs, BOOTSTRAP_RESAMPLES, 0.025, &mut brng, |v| {
            normal_distances(v).map(|d| d.ks).unwrap_or(f64::NAN)
        });
        let (tv_ci, _) = bootstrap(xs, BOOTSTRAP_RESAMPLES, 0.025, &mut brng, |v| {
            normal_distances(v).map(|d| d.tv).unwrap_or(f64::NAN)
        });
        rows.push(DistanceRow {
            radius: r,
            ks: dist.ks,
            tv: dist.tv,
            ks_ci,
            tv_ci,
            ks_excess: excess(dist.ks, floor.ks_mean),
            tv_excess: excess(dist.tv, floor.tv_mean),
        });
    }
    let logr: Vec<f64> = rows.iter().map(|r| r.radius.ln()).collect();
    let fit = |f: &dyn Fn(&DistanceRow) -> f64| -> LineFit {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .zip(&logr)
            .filter(|(row, _)| f(row) > 0.0)
            .map(|(row, lr)| (*lr, f(row).ln()))
            .collect();
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        if x.len() < 3 {
            LineFit {
                slope: f64::NAN,
                intercept: f64::NAN,
                slope_se: f64::NAN,
            }
        } else {
            ols(&x, &y)
        }
    };
    let ks_fit = fit(&|r| r.ks_excess);
    let tv_fit = fit(&|r| r.tv_excess);
    if rows.iter().filter(|r| r.ks_excess > 0.0).count() < rows.len() {
        warnings.push("some radii are indistinguishable from the null floor".into());
    }
    let slope_bound = -ctx.model.beta() / 2.0 + DISTANCE_SLOPE_TOLERANCE;
    let ks_decreasing = ci_decreasing(&rows.iter().map(|r| r.ks_ci).collect::<Vec<_>>());
    let tv_decreasing = ci_decreasing(&rows.iter().map(|r| r.tv_ci).collect::<Vec<_>>());
    let pass = null_pass
        && ordering
        && ks_decreasing
        && tv_decreasing
        && ks_fit.slope <= slope_bound
        && tv_fit.slope <= slope_bound
        && n >= 10_000;
    Ok(DistanceReport {
        time: data.times[time],
        floor,
        null_ks: nd.ks,
        null_tv: nd.tv,
        null_pass,
        rows,
        ks_fit,
        tv_fit,
        slope_bound,
        ks_decreasing,
        tv_decreasing,
        ordering,
        warnings,
        pass,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FcltReport {
    pub radius: f64,
    pub times: Vec<f64>,
    /// Empirical covariance of `R^{β/2−d} G_R(t_i)`.
    pub empirical: Vec<Vec<Estimate>>,
    /// `∫₀^{t_i∧t_j} ϱ²`.
    pub target: Vec<Vec<Estimate>>,
    /// Largest `gap / allowed` over the entries (pass below 1).
    pub worst: f64,
    pub mardia: Mardia,
    pub symmetric: bool,
    pub pass: bool,
}

/// Covariance matrix of the normalized path at the radius `data.radii[radius]`.
pub fn fclt(
    data: &EnsembleData,
    radius: usize,
    model: &CovarianceModel,
    constants: &LimitConstants,
) -> Result<FcltReport> {
    let nt = data.times.len();
    if nt < 2 {
        return Err(Error::Missing("the path needs at least two snapshot times".into()));
    }
    let d = model.dim() as f64;
    let r = data.radii[radius];
    let scale = r.powf(model.beta() / 2.0 - d);
    let paths: Vec<Vec<f64>> = (0..nt)
        .map(|i| data.samples(i, radius).iter().map(|g| g * scale).collect())
        .collect();
    let mut empirical = vec![vec![Estimate::new(0.0, 0.0); nt]; nt];
    let mut target = empirical.clone();
    let mut worst: f64 = 0.0;
    for i in 0..nt {
        for j in 0..nt {
            let e = Estimate::of_covariance(&paths[i], &paths[j]);
            let tgt = constants.integrated_rho_sq(data.times[i].min(data.times[j]));
            let allowed = (FCLT_TOLERANCE * tgt.value.abs()).max(3.0 * e.se.hypot(tgt.se));
            worst = worst.max((e.value - tgt.value).abs() / allowed);
            empirical[i][j] = e;
            target[i][j] = tgt;
        }
    }
    let symmetric = (0..nt).all(|i| (0..nt).all(|j| empirical[i][j].value == empirical[j][i].value));
    let n = paths[0].len();
    let rows: Vec<Vec<f64>> = (0..n).map(|k| paths.iter().map(|p| p[k]).collect()).collect();
    let mardia = mardia_skewness(&rows)?;
    Ok(FcltReport {
        radius: r,
        times: data.times.clone(),
        pass: worst < 1.0 && mardia.p_value > MARDIA_LEVEL && symmetric,
        empirical,
        target,
        worst,
        mardia,
        symmetric,
    })
}

/// Largest change of the per-radius variances between two coupled runs, in
/// units of the first run's standard errors.
pub fn variance_shift(a: &VarianceReport, b: &VarianceReport) -> f64 {
    a.rows
        .iter()
        .zip(&b.rows)
        .map(|(x, y)| (x.variance.value - y.variance.value).abs() / x.variance.se)
        .fold(0.0, f64::max)
}

/// `Var u(t, 0)` under additive noise against `σ(1)² ∫₀ᵗ I(s) ds`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointVarianceReport {
    pub case: String,
    pub alpha: f64,
    pub time: f64,
    pub replicas: usize,
    pub variance: Estimate,
    pub oracle: f64,
    pub z: f64,
    pub pass: bool,
    /// `u(t, 0)` per replica.
    #[serde(skip)]
    pub samples: Vec<f64>,
}

/// Point variance at the origin; only meaningful for constant `σ`.
pub fn point_variance(sim: &Simulator, time: f64, replicas: u64, seed: u64) -> Result<PointVarianceReport> {
    let cfg = sim.config();
    if !cfg.sigma.is_constant() {
        return Err(invalid("the point-variance oracle needs additive (constant) sigma"));
    }
    let steps = cfg.steps_to(time)?;
    let origin = sim.grid().origin();
    let values = sim
        .ensemble(replicas, |s, rep| {
            let mut v = f64::NAN;
            s.run(seed, rep, steps, |k, u| {
                if k == steps {
                    v = u[origin];
                }
                Ok(())
            })?;
            Ok(v)
        })
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    let s1 = cfg.sigma.sigma_at_one();
    let oracle = s1 * s1 * cfg.model.integrated_correlation(cfg.alpha, time);
    let variance = Estimate::of_variance(&values);
    let z = variance.z_against(oracle);
    Ok(PointVarianceReport {
        case: cfg.model.case_label().into(),
        alpha: cfg.alpha,
        time,
        replicas: values.len(),
        variance,
        oracle,
        z,
        pass: z < 3.0,
        samples: values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{SigmaSpec, SolverConfig};

    #[test]
    fn ball_weights_volume() {
        let g1 = GridSpec::new(1, 10.0, 256).unwrap();
        for &r in &[0.3, 1.0, 3.7] {
            let w = BallWeights::new(&g1, r).unwrap();
            assert!((w.volume() - 2.0 * r).abs() < 1e-12);
            let u = RealField::constant(g1, 1.5);
            assert!((spatial_average(&u, r).unwrap() - r).abs() < 1e-12);
        }
        let g2 = GridSpec::new(2, 8.0, 128).unwrap();
        for &r in &[1.0, 2.3, 5.0] {
            let w = BallWeights::new(&g2, r).unwrap();
            let rel = (w.volume() - PI * r * r).abs() / (PI * r * r);
            assert!(rel < 1e-3, "{rel}");
        }
        assert_eq!(BallWeights::new(&g2, 1.0).unwrap().apply(&vec![1.0; g2.len()]), 0.0);
        assert!(BallWeights::new(&g2, 8.0).is_err());
    }

    #[test]
    fn additive_white_variance_is_the_ball_volume_rate() {
        // ∫₀ᵗ∫|φ_R|² → |B_R| t for R ≫ t^{1/α}
        let wn = CovarianceModel::white_noise();
        let v = additive_covariance(&wn, 2.0, 50.0, 0.5, 0.5);
        assert!((v / (100.0 * 0.5) - 1.0).abs() < 0.02, "{v}");
        // exact for α = 2: 2Rt − (2/3)·(1/√π)·... check against direct space-time quadrature
        let direct = {
            let r: f64 = 1.0;
            let t: f64 = 0.3;
            // φ(s,y) = ½[erf((R−y)/√(4s)) + erf((R+y)/√(4s))]
            let phi = |s: f64, y: f64| {
                0.5 * (statrs::function::erf::erf((r - y) / (4.0 * s).sqrt())
                    + statrs::function::erf::erf((r + y) / (4.0 * s).sqrt()))
            };
            integrate(|s| 2.0 * integrate(|y| phi(s, y).powi(2), 0.0, r + 12.0 * s.sqrt() + 1.0), 1e-12, t)
        };
        let spec = additive_covariance(&wn, 2.0, 1.0, 0.3, 0.3);
        assert!((spec - direct).abs() < 1e-6 * direct, "{spec} {direct}");
    }

    #[test]
    fn lattice_oracle_tracks_continuum() {
        let g = GridSpec::new(1, 32.0, 1024).unwrap();
        let wn = CovarianceModel::white_noise();
        for &r in &[2.0, 8.0] {
            let w = BallWeights::new(&g, r).unwrap();
            let lat = lattice_additive_covariance(&g, &wn, 1.5, &w, 0.5, 0.5).unwrap();
            let cont = additive_covariance(&wn, 1.5, r, 0.5, 0.5);
            assert!((lat / cont - 1.0).abs() < 5e-3, "{r}: {lat} {cont}");
            let lat2 = lattice_additive_covariance(&g, &wn, 1.5, &w, 0.5, 0.25).unwrap();
            let cont2 = additive_covariance(&wn, 1.5, r, 0.25, 0.5);
            assert!((lat2 / cont2 - 1.0).abs() < 5e-3);
        }
    }

    #[test]
    fn tightness_ratios() {
        let wn = CovarianceModel::white_noise();
        assert_eq!(tightness_kernel(&wn, 1.5, 4.0, 0.5, 0.5), 0.0);
        let a = tightness_kernel(&wn, 1.5, 8.0, 0.6, 0.5) / (8.0 * 0.1);
        let b = tightness_kernel(&wn, 1.5, 16.0, 0.6, 0.5) / (16.0 * 0.1);
        assert!((a / b - 1.0).abs() < 0.25);
        let pairs: Vec<(f64, f64)> = (0..10).map(|k| (0.5 + 0.5f64.powi(k), 0.5)).collect();
        let rep = tightness_check(&wn, 1.5, &[4.0, 8.0, 16.0], &pairs).unwrap();
        assert!(rep.pass, "{} {}", rep.max_ratio, rep.min_ratio);
        // increments of additive noise: K_R(t,s) = Var G(t) + Var G(s) − 2 Cov
        let (t, s) = (0.7, 0.4);
        let k = tightness_kernel(&wn, 1.5, 3.0, t, s);
        let direct = additive_covariance(&wn, 1.5, 3.0, t, t) + additive_covariance(&wn, 1.5, 3.0, s, s)
            - 2.0 * additive_covariance(&wn, 1.5, 3.0, t, s);
        assert!((k - direct).abs() < 1e-8 * direct);
    }

    #[test]
    fn ci_ordering() {
        let iv = |lo, hi| Interval { lo, hi };
        assert!(ci_decreasing(&[iv(0.5, 0.6), iv(0.45, 0.55), iv(0.2, 0.3)]));
        assert!(!ci_decreasing(&[iv(0.5, 0.6), iv(0.7, 0.8), iv(0.2, 0.3)]));
        assert!(!ci_decreasing(&[iv(0.5, 0.6), iv(0.45, 0.55)]));
        assert!((excess(0.05, 0.03) - 0.04).abs() < 1e-15);
        assert_eq!(excess(0.01, 0.03), 0.0);
    }

    fn additive_sim(reps_alpha: f64, l: f64, n: usize) -> Simulator {
        let g = GridSpec::new(1, l, n).unwrap();
        let cfg = SolverConfig::new(
            reps_alpha,
            0.05,
            0.5,
            g,
            SigmaSpec::Constant { c: 1.0 },
            CovarianceModel::white_noise(),
        );
        Simulator::new(cfg).unwrap()
    }

    #[test]
    fn ensemble_against_oracles() {
        let sim = additive_sim(1.5, 16.0, 256);
        let plan = EnsemblePlan {
            times: vec![0.25, 0.5],
            radii: vec![1.0, 2.0, 4.0],
            replicas: 600,
            seed: 11,
            moments: true,
        };
        let data = run_ensemble(&sim, &plan).unwrap();
        assert_eq!(data.replicas(), 600);
        let ctx = ExperimentContext {
            grid: sim.grid(),
            model: &sim.config().model,
            alpha: 1.5,
            additive: Some(1.0),
            seed: 11,
        };
        let rep = variance_scaling(&data, 1, &ctx).unwrap();
        assert!(rep.oracle_z.unwrap() < 4.0, "{rep:?}");
        for row in &rep.rows {
            let (o, l) = (row.oracle.unwrap(), row.lattice_oracle.unwrap());
            assert!((o / l - 1.0).abs() < 0.02);
        }
        assert!(!rep.pass && !rep.warnings.is_empty());
        let constants =
            LimitConstants::from_moments(&sim.config().model, &sim.config().sigma, &data.times, &data.moments).unwrap();
        // additive noise: ϱ² = 2 exactly
        assert!(constants.rho.iter().all(|r| (r.value - 2f64.sqrt()).abs() < 1e-12));
        let lc = limiting_covariance(&data, 1, 1, &sim.config().model, &constants).unwrap();
        assert!((lc.target.value - 1.0).abs() < 1e-12);
        let f = fclt(&data, 2, &sim.config().model, &constants).unwrap();
        assert!(f.symmetric && (f.target[0][1].value - 0.5).abs() < 1e-12);
        // same seed twice
        let again = run_ensemble(&sim, &plan).unwrap();
        assert_eq!(again.g, data.g);
    }

    #[test]
    fn truncation_rule() {
        let sim = additive_sim(2.0, 8.0, 128);
        let plan = EnsemblePlan {
            times: vec![0.5],
            radii: vec![6.0],
            replicas: 4,
            seed: 0,
            moments: false,
        };
        assert!(run_ensemble(&sim, &plan).is_err());
        let g = GridSpec::new(1, 8.0, 128).unwrap();
        assert!((truncation_limit(&g, 2.0, 0.25) - 6.0).abs() < 1e-12);
    }
}
