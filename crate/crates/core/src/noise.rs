//! Spatially colored, temporally white Gaussian noise: the covariance
//! models, their spectral densities and Dalang functionals, and the
//! sampler that draws noise increments on a grid.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::grid::{Fourier, GridSpec, RealField};
use crate::kernel::validate_alpha;
use crate::quad::{integrate, integrate_half_line, radial_spectral_integral};
use crate::special::{ball_transform_sq_scaled, bessel_j0, unit_ball_volume};

/// Largest tolerated fraction of clipped (negative) spectral mass.
pub const MAX_CLIP_FRACTION: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMass {
    pub weight: f64,
    #[serde(default)]
    pub position: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `e^{-|x|²/ℓ²}`.
    Gaussian,
    /// `e^{-|x|/ℓ}`.
    Exponential,
    /// Self-overlap `|B_ℓ ∩ (B_ℓ + x)|` of a ball (the indicator's autocorrelation,
    /// which unlike the bare indicator is positive definite).
    Indicator,
}

/// Serializable description of a covariance regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ModelSpec {
    WhiteNoise,
    RieszKernel {
        beta: f64,
        /// Symmetric finite mixture of point masses; empty means `δ₀`.
        #[serde(default)]
        mu: Vec<PointMass>,
    },
    IntegrableDensity {
        family: Family,
        length: f64,
        /// `γ ∈ L^r`; `None` stands for `r = ∞`.
        #[serde(default)]
        r_exponent: Option<f64>,
    },
}

impl ModelSpec {
    /// Every admissibility rule this model breaks for `(dim, alpha)`.
    pub fn violations(&self, dim: usize, alpha: f64) -> Vec<String> {
        let mut v = Vec::new();
        let d = dim as f64;
        match self {
            ModelSpec::WhiteNoise => {
                if dim != 1 {
                    v.push(format!("case (ii) requires d = 1, got d = {dim}"));
                }
                if !(alpha > 1.0) {
                    v.push(format!("case (ii) requires alpha > 1, got alpha = {alpha}"));
                }
            }
            ModelSpec::RieszKernel { beta, mu } => {
                if !(*beta > 0.0 && *beta < alpha.min(d)) {
                    v.push(format!(
                        "case (i) requires β < α ∧ d (0 < beta < {}), got beta = {beta}",
                        alpha.min(d)
                    ));
                }
                for m in mu {
                    if !(m.weight > 0.0 && m.weight.is_finite()) {
                        v.push(format!("mu weights must be positive, got {}", m.weight));
                    }
                    if dim == 1 && m.position[1] != 0.0 {
                        v.push("mu positions must have a zero second coordinate in d = 1".into());
                    }
                    let mirrored = mu.iter().any(|o| {
                        o.weight == m.weight
                            && o.position[0] == -m.position[0]
                            && o.position[1] == -m.position[1]
                    });
                    if !mirrored {
                        v.push(format!(
                            "mu must be symmetric: mass at {:?} has no mirror image",
                            m.position
                        ));
                    }
                }
            }
            ModelSpec::IntegrableDensity {
                length, r_exponent, ..
            } => {
                if !(*length > 0.0 && length.is_finite()) {
                    v.push(format!("density length scale must be positive, got {length}"));
                }
                if let Some(r) = r_exponent {
                    if !(*r > d / alpha) {
                        v.push(format!(
                            "case (iii) requires gamma in L^r for some r > d/alpha = {}, got r = {r}",
                            d / alpha
                        ));
                    }
                }
            }
        }
        if !(1..=2).contains(&dim) {
            v.push(format!("dimension must be 1 or 2, got {dim}"));
        }
        v
    }
}

/// `c_{d,β}` in `(|x|^{-β})^(ξ) = c_{d,β} |ξ|^{β-d}`.
pub fn riesz_constant(dim: usize, beta: f64) -> f64 {
    let d = dim as f64;
    2f64.powf(d - beta) * PI.powf(d / 2.0) * gamma((d - beta) / 2.0) / gamma(beta / 2.0)
}

/// A validated covariance model on `ℝ^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceModel {
    dim: usize,
    spec: ModelSpec,
    mu: Vec<PointMass>,
}

impl CovarianceModel {
    /// Validates the model against `(dim, alpha)`.
    pub fn new(dim: usize, alpha: f64, spec: ModelSpec) -> Result<Self> {
        validate_alpha(alpha)?;
        let v = spec.violations(dim, alpha);
        if !v.is_empty() {
            return Err(Error::Assumption(v.join("; ")));
        }
        let mu = match &spec {
            ModelSpec::RieszKernel { mu, .. } if !mu.is_empty() => mu.clone(),
            _ => vec![PointMass {
                weight: 1.0,
                position: [0.0, 0.0],
            }],
        };
        Ok(Self { dim, spec, mu })
    }

    pub fn white_noise() -> Self {
        Self::new(1, 2.0, ModelSpec::WhiteNoise).expect("white noise in d = 1 is admissible")
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Homogeneity exponent; `d` outside the Riesz case.
    pub fn beta(&self) -> f64 {
        match &self.spec {
            ModelSpec::RieszKernel { beta, .. } => *beta,
            _ => self.dim as f64,
        }
    }

    pub fn is_riesz(&self) -> bool {
        matches!(self.spec, ModelSpec::RieszKernel { .. })
    }

    pub fn case_label(&self) -> &'static str {
        match self.spec {
            ModelSpec::RieszKernel { .. } => "(i)",
            ModelSpec::WhiteNoise => "(ii)",
            ModelSpec::IntegrableDensity { .. } => "(iii)",
        }
    }

    /// Point masses of `μ` (`δ₀` when none were given).
    pub fn mu(&self) -> &[PointMass] {
        &self.mu
    }

    /// `μ(ℝ^d)`; for an integrable density this is `∫γ`.
    pub fn mu_mass(&self) -> f64 {
        match &self.spec {
            ModelSpec::IntegrableDensity { .. } => self.spectral_profile(0.0),
            _ => self.mu.iter().map(|m| m.weight).sum(),
        }
    }

    /// Angular average of `ĝμ` over the sphere `|ξ| = r`.
    fn mu_profile(&self, r: f64) -> f64 {
        self.mu
            .iter()
            .map(|m| {
                let s = m.position[0].hypot(m.position[1]) * r;
                m.weight * if self.dim == 1 { s.cos() } else { bessel_j0(s) }
            })
            .sum()
    }

    /// `ĝμ(ξ) = Σ w cos⟨ξ, x⟩`.
    fn mu_transform(&self, xi: [f64; 2]) -> f64 {
        self.mu
            .iter()
            .map(|m| m.weight * (xi[0] * m.position[0] + xi[1] * m.position[1]).cos())
            .sum()
    }

    /// Angular average of the spectral density at `|ξ| = r` (exact for radial
    /// models); `+∞` at `r = 0` in the Riesz case.
    pub fn spectral_profile(&self, r: f64) -> f64 {
        let d = self.dim as f64;
        match &self.spec {
            ModelSpec::WhiteNoise => 1.0,
            ModelSpec::RieszKernel { beta, .. } => {
                riesz_constant(self.dim, *beta) * r.powf(beta - d) * self.mu_profile(r)
            }
            ModelSpec::IntegrableDensity { family, length, .. } => {
                let l = *length;
                match family {
                    Family::Gaussian => (PI.sqrt() * l).powf(d) * (-l * l * r * r / 4.0).exp(),
                    Family::Exponential => match self.dim {
                        1 => 2.0 * l / (1.0 + l * l * r * r),
                        _ => 2.0 * PI * l * l / (1.0 + l * l * r * r).powf(1.5),
                    },
                    Family::Indicator => {
                        (2.0 * PI).powf(d) * ball_transform_sq_scaled(self.dim, l, r)
                    }
                }
            }
        }
    }

    /// `ĝγ(ξ)`; the Riesz singularity at `ξ = 0` is replaced by the value at
    /// `|ξ| = π/(4L)` of the grid in use.
    pub fn spectral_density_at(&self, grid: &GridSpec, xi: [f64; 2]) -> f64 {
        let r = xi[0].hypot(xi[1]);
        match &self.spec {
            ModelSpec::RieszKernel { beta, .. } => {
                let floor = PI / (4.0 * grid.half_length());
                let d = self.dim as f64;
                riesz_constant(self.dim, *beta) * r.max(floor).powf(beta - d) * self.mu_transform(xi)
            }
            _ => self.spectral_profile(r),
        }
    }

    /// Physical covariance `γ(z)`; `None` for white noise (a Dirac mass).
    pub fn covariance_at(&self, z: [f64; 2]) -> Option<f64> {
        match &self.spec {
            ModelSpec::WhiteNoise => None,
            ModelSpec::RieszKernel { beta, .. } => Some(
                self.mu
                    .iter()
                    .map(|m| {
                        let r = (z[0] - m.position[0]).hypot(z[1] - m.position[1]);
                        m.weight * r.powf(-beta)
                    })
                    .sum(),
            ),
            ModelSpec::IntegrableDensity { family, length, .. } => {
                let r = z[0].hypot(z[1]) / length;
                Some(match family {
                    Family::Gaussian => (-r * r).exp(),
                    Family::Exponential => (-r).exp(),
                    Family::Indicator => {
                        let l = *length;
                        if r >= 2.0 {
                            0.0
                        } else if self.dim == 1 {
                            l * (2.0 - r)
                        } else {
                            l * l * (2.0 * (r / 2.0).acos() - (r / 2.0) * (4.0 - r * r).sqrt())
                        }
                    }
                })
            }
        }
    }

    /// Spectral density on every mode of `grid` as used by the sampler.
    ///
    /// Riesz: `c|ξ|^{β-d}` is averaged over each frequency cell (closed form in
    /// 1-d; in 2-d an equal-area disc for the zero cell and sub-sampling near
    /// it), times `ĝμ(ξ_k)`. Integrable densities: real part of the transform
    /// of the sampled `γ`, negative values clipped and their mass reported.
    pub fn lattice_spectrum(&self, grid: &GridSpec) -> Result<LatticeSpectrum> {
        self.check_grid(grid)?;
        let n = grid.len();
        match &self.spec {
            ModelSpec::WhiteNoise => Ok(LatticeSpectrum {
                values: vec![1.0; n],
                clip_fraction: 0.0,
            }),
            ModelSpec::RieszKernel { beta, .. } => {
                let c = riesz_constant(self.dim, *beta);
                let values = (0..n)
                    .map(|k| {
                        c * riesz_cell_average(grid, k, *beta) * self.mu_transform(grid.wave(k))
                    })
                    .collect::<Vec<_>>();
                if let Some(v) = values.iter().find(|v| **v < 0.0) {
                    return Err(Error::Assumption(format!(
                        "mu transform is negative ({v:e}) on the lattice"
                    )));
                }
                Ok(LatticeSpectrum {
                    values,
                    clip_fraction: 0.0,
                })
            }
            ModelSpec::IntegrableDensity { .. } => {
                let field = RealField::from_fn(*grid, |x| self.covariance_at(x).unwrap_or(0.0))?;
                let s = Fourier::new(grid).forward_transform(&field)?;
                let raw: Vec<f64> = s.coeffs().iter().map(|c| c.re).collect();
                let total: f64 = raw.iter().map(|v| v.abs()).sum();
                let clipped: f64 = raw.iter().filter(|v| **v < 0.0).map(|v| -v).sum();
                let clip_fraction = if total > 0.0 { clipped / total } else { 0.0 };
                if clip_fraction > MAX_CLIP_FRACTION {
                    return Err(Error::Assumption(format!(
                        "sampled density has clipped spectral mass fraction {clip_fraction:e} > {MAX_CLIP_FRACTION:e}"
                    )));
                }
                Ok(LatticeSpectrum {
                    values: raw.into_iter().map(|v| v.max(0.0)).collect(),
                    clip_fraction,
                })
            }
        }
    }

    fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        if grid.dim() != self.dim {
            return Err(Error::InvalidGrid(format!(
                "model is {}-dimensional, grid is {}",
                self.dim, grid
            )));
        }
        Ok(())
    }

    /// `Υ(λ) = (2π)^{-d} ∫ ĝγ(ξ) / (λ + 2|ξ|^α) dξ`.
    pub fn upsilon(&self, alpha: f64, lambda: f64) -> Result<f64> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
        }
        let verdict = self.verify_dalang(alpha);
        if !verdict.holds {
            return Err(Error::Divergent(verdict.diagnostic));
        }
        Ok(radial_spectral_integral(self.dim, |r| {
            self.spectral_profile(r) / (lambda + 2.0 * r.powf(alpha))
        }))
    }

    /// Whether `Υ(1) < ∞`: analytic for white and Riesz noise, a numeric
    /// shell-by-shell tail test for integrable densities.
    pub fn verify_dalang(&self, alpha: f64) -> DalangVerdict {
        let d = self.dim as f64;
        match &self.spec {
            ModelSpec::WhiteNoise => DalangVerdict {
                holds: alpha > d,
                diagnostic: format!(
                    "white noise: integrand ~ |xi|^(d-1-alpha), finite iff alpha > d (alpha = {alpha}, d = {d})"
                ),
            },
            ModelSpec::RieszKernel { beta, .. } => DalangVerdict {
                holds: *beta < alpha && *beta > 0.0,
                diagnostic: format!(
                    "Riesz kernel: integrand ~ |xi|^(beta-1-alpha), finite iff beta < alpha (beta = {beta}, alpha = {alpha})"
                ),
            },
            ModelSpec::IntegrableDensity { .. } => {
                let shell = |a: f64| {
                    integrate(
                        |r| r.powf(d - 1.0) * self.spectral_profile(r) / (1.0 + 2.0 * r.powf(alpha)),
                        a,
                        2.0 * a,
                    )
                };
                let head = integrate_half_line(|r| {
                    r.powf(d - 1.0) * self.spectral_profile(r) / (1.0 + 2.0 * r.powf(alpha))
                });
                let shells: Vec<f64> = (0..4).map(|k| shell(10f64.powi(2 + k))).collect();
                let decaying = shells.windows(2).all(|w| w[1] <= w[0]);
                let holds = head.is_finite() && decaying && shells[3] < 1e-3 * head;
                DalangVerdict {
                    holds,
                    diagnostic: format!(
                        "integrable density: last dyadic tail shell {:.3e} against total {head:.3e}",
                        shells[3]
                    ),
                }
            }
        }
    }

    /// `I(t) = (2π)^{-d} ∫ e^{-2t|ξ|^α} ĝγ(ξ) dξ`.
    pub fn correlation_time_spectral(&self, alpha: f64, t: f64) -> f64 {
        radial_spectral_integral(self.dim, |r| {
            (-2.0 * t * r.powf(alpha)).exp() * self.spectral_profile(r)
        })
    }

    /// `∫₀ᵗ I(s) ds = (2π)^{-d} ∫ ĝγ(ξ)(1 − e^{-2t|ξ|^α}) / (2|ξ|^α) dξ`.
    pub fn integrated_correlation(&self, alpha: f64, t: f64) -> f64 {
        radial_spectral_integral(self.dim, |r| {
            let lam = r.powf(alpha);
            let w = if 2.0 * t * lam < 1e-8 {
                t
            } else {
                -(-2.0 * t * lam).exp_m1() / (2.0 * lam)
            };
            w * self.spectral_profile(r)
        })
    }

    /// `I(t)` by both routes: spectrally and as `∫(G_t ⋆ G_t)(z) γ(z) dz` on
    /// `grid`, where the autocorrelation is a grid convolution and `γ`
    /// enters through exact cell integrals near its singularities.
    pub fn correlation_time_kernel(&self, grid: &GridSpec, alpha: f64, t: f64) -> Result<TimeKernel> {
        self.check_grid(grid)?;
        let spectral = self.correlation_time_spectral(alpha, t);
        let ft = Fourier::new(grid);
        let g = crate::kernel::evaluate_kernel(&ft, alpha, t)?;
        let physical = match &self.spec {
            ModelSpec::WhiteNoise => g.values().iter().map(|v| v * v).sum::<f64>() * grid.cell_volume(),
            ModelSpec::RieszKernel { beta, .. } => {
                let auto = ft.convolve(g.field(), g.field())?;
                let mut total = 0.0;
                for m in &self.mu {
                    let w = riesz_cell_weights(grid, m.position, *beta);
                    total += m.weight * auto.values().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
                }
                total
            }
            ModelSpec::IntegrableDensity { .. } => {
                let auto = ft.convolve(g.field(), g.field())?;
                auto.values()
                    .iter()
                    .enumerate()
                    .map(|(j, a)| a * self.covariance_at(grid.node(j)).unwrap_or(0.0))
                    .sum::<f64>()
                    * grid.cell_volume()
            }
        };
        let rel = (physical - spectral).abs() / spectral.abs();
        if rel > 5e-3 {
            return Err(Error::Resolution(format!(
                "I({t}) spectral {spectral:.6e} and physical {physical:.6e} differ by {:.3}%",
                100.0 * rel
            )));
        }
        Ok(TimeKernel { spectral, physical })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DalangVerdict {
    pub holds: bool,
    pub diagnostic: String,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TimeKernel {
    pub spectral: f64,
    pub physical: f64,
}

/// Per-mode spectral density with the clipped-mass diagnostic.
#[derive(Debug, Clone)]
pub struct LatticeSpectrum {
    pub values: Vec<f64>,
    pub clip_fraction: f64,
}

/// Average of `|ξ|^{β-d}` over the frequency cell of mode `k`.
fn riesz_cell_average(grid: &GridSpec, k: usize, beta: f64) -> f64 {
    let h = grid.frequency_spacing();
    match grid.dim() {
        1 => {
            let m = grid.signed_index(k).unsigned_abs() as f64;
            if m == 0.0 {
                2.0 * (0.5 * h).powf(beta) / (beta * h)
            } else {
                (((m + 0.5) * h).powf(beta) - ((m - 0.5) * h).powf(beta)) / (beta * h)
            }
        }
        _ => {
            let [a, b] = grid.axes(k);
            let (ka, kb) = (grid.signed_index(a), grid.signed_index(b));
            if ka == 0 && kb == 0 {
                // disc of the cell's area: (1/h²) ∫_0^ρ 2π r^{β-1} dr, ρ = h/√π
                let rho = h / PI.sqrt();
                2.0 * PI * rho.powf(beta) / (beta * h * h)
            } else if ka.abs().max(kb.abs()) <= 4 {
                const S: usize = 16;
                let mut acc = 0.0;
                for i in 0..S {
                    for j in 0..S {
                        let x = (ka as f64 - 0.5 + (i as f64 + 0.5) / S as f64) * h;
                        let y = (kb as f64 - 0.5 + (j as f64 + 0.5) / S as f64) * h;
                        acc += x.hypot(y).powf(beta - 2.0);
                    }
                }
                acc / (S * S) as f64
            } else {
                grid.wave_norm(k).powf(beta - 2.0)
            }
        }
    }
}

/// `∫_{cell_j} |z − p|^{-β} dz` for every node `j` (cells centered on nodes,
/// periodic displacement). Exact in 1-d; in 2-d the cell holding `p` is
/// integrated in polar coordinates around `p`, neighbours within four cells
/// by tensor Gauss–Legendre on sub-cells.
pub fn riesz_cell_weights(grid: &GridSpec, p: [f64; 2], beta: f64) -> Vec<f64> {
    let h = grid.spacing();
    let period = 2.0 * grid.half_length();
    let wrap = |v: f64| v - period * (v / period).round();
    (0..grid.len())
        .map(|j| {
            let x = grid.node(j);
            let dx = wrap(x[0] - p[0]);
            match grid.dim() {
                1 => segment_integral(dx - 0.5 * h, dx + 0.5 * h, beta),
                _ => {
                    let dy = wrap(x[1] - p[1]);
                    rectangle_integral([dx - 0.5 * h, dx + 0.5 * h], [dy - 0.5 * h, dy + 0.5 * h], beta, h)
                }
            }
        })
        .collect()
}

/// `∫_a^b |z|^{-β} dz`.
fn segment_integral(a: f64, b: f64, beta: f64) -> f64 {
    let prim = |z: f64| z.signum() * z.abs().powf(1.0 - beta) / (1.0 - beta);
    prim(b) - prim(a)
}

/// `∫_{[x0,x1]×[y0,y1]} |z|^{-β} dz`.
fn rectangle_integral(xr: [f64; 2], yr: [f64; 2], beta: f64, h: f64) -> f64 {
    let dist = |r: [f64; 2]| {
        if r[0] <= 0.0 && r[1] >= 0.0 {
            0.0
        } else {
            r[0].abs().min(r[1].abs())
        }
    };
    let far = dist(xr).hypot(dist(yr));
    if far > 4.0 * h {
        let cx = 0.5 * (xr[0] + xr[1]);
        let cy = 0.5 * (yr[0] + yr[1]);
        return (xr[1] - xr[0]) * (yr[1] - yr[0]) * cx.hypot(cy).powf(-beta);
    }
    if xr[0] < 0.0 && xr[1] > 0.0 && yr[0] < 0.0 && yr[1] > 0.0 {
        // split at the singularity into four corner rectangles
        return [(xr[1], yr[1]), (-xr[0], yr[1]), (xr[1], -yr[0]), (-xr[0], -yr[0])]
            .iter()
            .map(|&(a, b)| corner_rectangle(a, b, beta))
            .sum();
    }
    let rule = gauss_quad::GaussLegendre::new(std::num::NonZeroUsize::new(12).unwrap());
    let sub = 4;
    let (wx, wy) = ((xr[1] - xr[0]) / sub as f64, (yr[1] - yr[0]) / sub as f64);
    let mut acc = 0.0;
    for i in 0..sub {
        for j in 0..sub {
            let x0 = xr[0] + i as f64 * wx;
            let y0 = yr[0] + j as f64 * wy;
            acc += rule.integrate(x0, x0 + wx, |x| {
                rule.integrate(y0, y0 + wy, |y| x.hypot(y).powf(-beta))
            });
        }
    }
    acc
}

/// `∫_{[0,a]×[0,b]} |z|^{-β} dz` in polar coordinates about the corner.
fn corner_rectangle(a: f64, b: f64, beta: f64) -> f64 {
    let e = 2.0 - beta;
    let split = b.atan2(a);
    integrate(|th| (a / th.cos()).powf(e), 0.0, split) / e
        + integrate(|th| (b / th.sin()).powf(e), split, 0.5 * PI) / e
}

/// Where the random numbers of an increment come from.
#[derive(Debug, Clone)]
enum Source {
    /// Mode amplitudes `√(ĝ_k / (2L)^d)` synthesized by an inverse DFT.
    Spectral { fourier: Fourier, amplitude: Vec<f64> },
    /// White noise drawn cell by cell.
    Cells,
    /// White noise drawn on a larger concentric grid (same spacing) and
    /// restricted to this one, so runs on nested tori share their noise.
    Embedded { outer_points: usize },
}

/// Draws noise increments `W([t, t+dt] × cell) / |cell|` for one grid and model.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    grid: GridSpec,
    source: Source,
    clip_fraction: f64,
}

impl NoiseSampler {
    pub fn new(grid: &GridSpec, model: &CovarianceModel) -> Result<Self> {
        if let ModelSpec::WhiteNoise = model.spec {
            model.check_grid(grid)?;
            return Ok(Self {
                grid: *grid,
                source: Source::Cells,
                clip_fraction: 0.0,
            });
        }
        let spectrum = model.lattice_spectrum(grid)?;
        let vol = grid.volume();
        Ok(Self {
            grid: *grid,
            source: Source::Spectral {
                fourier: Fourier::new(grid),
                amplitude: spectrum.values.iter().map(|g| (g / vol).sqrt()).collect(),
            },
            clip_fraction: spectrum.clip_fraction,
        })
    }

    /// White noise on `grid` coupled to the noise of a grid with the same
    /// spacing and `outer_points` nodes per axis.
    pub fn embedded_white(grid: &GridSpec, outer_points: usize) -> Result<Self> {
        let n = grid.points_per_axis();
        if grid.dim() != 1 || outer_points < n || outer_points % 2 != 0 || (outer_points - n) % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "cannot embed {grid} in a 1-d grid of {outer_points} nodes"
            )));
        }
        Ok(Self {
            grid: *grid,
            source: Source::Embedded { outer_points },
            clip_fraction: 0.0,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn clip_fraction(&self) -> f64 {
        self.clip_fraction
    }

    pub fn stream<R: Rng>(&self, rng: R) -> NoiseStream<'_, R> {
        let n = self.grid.len();
        let scratch = match &self.source {
            Source::Spectral { fourier, .. } => fourier.scratch(),
            _ => Vec::new(),
        };
        NoiseStream {
            sampler: self,
            rng,
            spare: Vec::with_capacity(n),
            has_spare: false,
            buf: vec![Complex64::new(0.0, 0.0); if scratch.is_empty() { 0 } else { n }],
            scratch,
        }
    }
}

/// A replica's sequential supply of noise increments.
pub struct NoiseStream<'a, R> {
    sampler: &'a NoiseSampler,
    rng: R,
    spare: Vec<f64>,
    has_spare: bool,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl<R: Rng> NoiseStream<'_, R> {
    /// Fills `out` with an increment over a time step `dt`.
    pub fn fill(&mut self, dt: f64, out: &mut [f64]) {
        let s = self.sampler;
        let n = s.grid.len();
        debug_assert_eq!(out.len(), n);
        match &s.source {
            Source::Cells => {
                let sd = (dt / s.grid.cell_volume()).sqrt();
                for o in out.iter_mut() {
                    *o = sd * self.rng.sample::<f64, _>(StandardNormal);
                }
            }
            Source::Embedded { outer_points } => {
                let sd = (dt / s.grid.cell_volume()).sqrt();
                let offset = (outer_points - n) / 2;
                for i in 0..*outer_points {
                    let z: f64 = self.rng.sample(StandardNormal);
                    if i >= offset && i < offset + n {
                        out[i - offset] = sd * z;
                    }
                }
            }
            Source::Spectral { fourier, amplitude } => {
                let root = dt.sqrt();
                if self.has_spare {
                    for (o, v) in out.iter_mut().zip(&self.spare) {
                        *o = root * v;
                    }
                    self.has_spare = false;
                    return;
                }
                // Real and imaginary parts of Σ_k a_k Z_k e^{iξ_k x} with
                // Z_k = N(0,1) + i N(0,1) are two independent copies of the field.
                for (b, a) in self.buf.iter_mut().zip(amplitude) {
                    let re: f64 = self.rng.sample(StandardNormal);
                    let im: f64 = self.rng.sample(StandardNormal);
                    *b = Complex64::new(a * re, a * im);
                }
                fourier.idft(&mut self.buf, &mut self.scratch);
                let scale = n as f64;
                self.spare.clear();
                for (o, b) in out.iter_mut().zip(&self.buf) {
                    *o = root * scale * b.re;
                    self.spare.push(scale * b.im);
                }
                self.has_spare = true;
            }
        }
    }

    pub fn into_rng(self) -> R {
        self.rng
    }
}

/// A single noise increment.
#[derive(Debug, Clone)]
pub struct NoiseIncrement {
    pub dt: f64,
    pub values: RealField,
}

pub fn sample_noise_increment<R: Rng>(sampler: &NoiseSampler, dt: f64, rng: R) -> Result<NoiseIncrement> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let mut out = vec![0.0; sampler.grid.len()];
    sampler.stream(rng).fill(dt, &mut out);
    Ok(NoiseIncrement {
        dt,
        values: RealField::new(sampler.grid, out)?,
    })
}

/// Gaussian test function `m · exp(−|x − c|²/(2w²))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: [f64; 2],
    pub width: f64,
}

impl Bump {
    pub fn at(&self, x: [f64; 2]) -> f64 {
        let dx = x[0] - self.center[0];
        let dy = x[1] - self.center[1];
        (-(dx * dx + dy * dy) / (2.0 * self.width * self.width)).exp()
    }

    pub fn sample(&self, grid: &GridSpec) -> Vec<f64> {
        (0..grid.len()).map(|j| self.at(grid.node(j))).collect()
    }
}

/// `∫∫ φ(y) ψ(y') γ(y − y') dy dy'` for two 1-d bumps, by quadrature of the
/// Gaussian cross-correlation against `γ`.
pub fn bump_covariance(model: &CovarianceModel, phi: &Bump, psi: &Bump) -> Result<f64> {
    if model.dim() != 1 {
        return Err(Error::InvalidParameter("bump covariance oracle is one-dimensional".into()));
    }
    // (φ ⋆ ψ̃)(z) = 2π w₁w₂/√(2π s²) · exp(−(z − m)²/(2s²))
    let s2 = phi.width.powi(2) + psi.width.powi(2);
    let m = phi.center[0] - psi.center[0];
    let amp = 2.0 * PI * phi.width * psi.width / (2.0 * PI * s2).sqrt();
    let cross = |z: f64| amp * (-(z - m).powi(2) / (2.0 * s2)).exp();
    match model.spec() {
        ModelSpec::WhiteNoise => Ok(cross(0.0)),
        _ => {
            let span = 12.0 * s2.sqrt();
            let f = |z: f64| cross(z) * model.covariance_at([z, 0.0]).unwrap_or(0.0);
            let mut knots: Vec<f64> = vec![m - span, m + span];
            for p in model.mu() {
                if p.position[0] > m - span && p.position[0] < m + span {
                    knots.push(p.position[0]);
                }
            }
            knots.sort_by(f64::total_cmp);
            Ok(knots.windows(2).map(|w| integrate(f, w[0], w[1])).sum())
        }
    }
}

/// Volume of the unit ball, convenient for callers normalizing by `|B_R|`.
pub fn ball_volume(dim: usize, radius: f64) -> f64 {
    unit_ball_volume(dim) * radius.powi(dim as i32)
}

/// Sampler covariance checks are judged at this many standard errors.
pub const SAMPLER_Z_LIMIT: f64 = 3.0;

/// Bump pairs probing the sampler: coincident, separated, and mixed widths.
pub fn sampler_pairs() -> Vec<(Bump, Bump)> {
    let b = |c: f64, w: f64| Bump { center: [c, 0.0], width: w };
    vec![
        (b(0.0, 0.7), b(0.0, 0.7)),
        (b(-0.5, 0.7), b(0.5, 0.7)),
        (b(-1.0, 0.7), b(1.0, 0.7)),
        (b(-2.0, 0.7), b(2.0, 0.7)),
        (b(0.0, 0.5), b(1.0, 1.5)),
        (b(-1.5, 1.0), b(1.5, 1.0)),
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerRow {
    pub model: String,
    pub pair: usize,
    pub empirical: f64,
    pub se: f64,
    pub oracle: f64,
    pub z: f64,
    pub pass: bool,
}

/// Empirical `Cov(⟨W,φ⟩, ⟨W,ψ⟩)` of unit-time increments against the
/// quadrature oracle, for every model and pair (1-d).
pub fn sampler_battery(
    grid: &GridSpec,
    models: &[CovarianceModel],
    pairs: &[(Bump, Bump)],
    draws: usize,
    seed: u64,
) -> Result<Vec<SamplerRow>> {
    use rand::SeedableRng;
    if draws < 2 {
        return Err(Error::InvalidParameter("at least two draws are needed".into()));
    }
    let h = grid.cell_volume();
    let mut rows = Vec::new();
    for (m, model) in models.iter().enumerate() {
        let sampler = NoiseSampler::new(grid, model)?;
        let tests: Vec<(Vec<f64>, Vec<f64>)> = pairs.iter().map(|(a, b)| (a.sample(grid), b.sample(grid))).collect();
        let mut pairings = vec![(Vec::with_capacity(draws), Vec::with_capacity(draws)); pairs.len()];
        let rng = rand_chacha::ChaCha8Rng::seed_from_u64(crate::rng::derive_seed(seed, &format!("sampler-{m}")));
        let mut stream = sampler.stream(rng);
        let mut out = vec![0.0; grid.len()];
        for _ in 0..draws {
            stream.fill(1.0, &mut out);
            for ((fa, fb), (xs, ys)) in tests.iter().zip(pairings.iter_mut()) {
                xs.push(out.iter().zip(fa).map(|(w, f)| w * f).sum::<f64>() * h);
                ys.push(out.iter().zip(fb).map(|(w, f)| w * f).sum::<f64>() * h);
            }
        }
        for (k, ((phi, psi), (xs, ys))) in pairs.iter().zip(&pairings).enumerate() {
            let oracle = bump_covariance(model, phi, psi)?;
            let e = crate::stats::Estimate::of_covariance(xs, ys);
            let z = e.z_against(oracle);
            rows.push(SamplerRow {
                model: model.case_label().to_string(),
                pair: k,
                empirical: e.value,
                se: e.se,
                oracle,
                z,
                pass: z < SAMPLER_Z_LIMIT,
            });
        }
    }
    Ok(rows)
}
