//! Constants entering the limit theorems: the geometric constant `k_β` and the
//! moment functions `θ`, `Ψ`, `ν`, `ϱ` estimated from solution snapshots.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{Fourier, GridSpec};
use crate::noise::{riesz_constant, CovarianceModel, ModelSpec};
use crate::quad::{integrate, panels, trapezoid};
use crate::solver::SigmaSpec;
use crate::special::{ball_transform_sq_scaled, unit_ball_volume, unit_sphere_area};
use crate::stats::{effective_sample_size, mean, Estimate};

/// Relative agreement required between the two `k_β` routes.
pub const K_BETA_AGREEMENT: f64 = 5e-3;

const BESSEL_CUTOFF: f64 = 1e3;

/// `k_β` with both evaluation routes.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KBeta {
    pub dim: usize,
    pub beta: f64,
    pub value: f64,
    /// Direct value: the double integral for `β < d`, `|B₁|` for `β = d`.
    pub direct: f64,
    /// Frequency-side value.
    pub bessel: f64,
    pub relative_gap: f64,
}

/// `∫_{B₁²}|x − x′|^{-β}` for `β < d`, `|B₁|` for `β = d`, cross-checked by the
/// Bessel integral; fails if the routes disagree by more than 0.5%.
pub fn k_beta(dim: usize, beta: f64) -> Result<KBeta> {
    let d = dim as f64;
    if !(dim == 1 || dim == 2) {
        return Err(invalid(format!("k_beta is implemented for d = 1, 2, got {dim}")));
    }
    if !(beta > 0.0 && beta <= d) {
        return Err(invalid(format!("k_beta requires 0 < beta <= d, got beta = {beta}")));
    }
    let riesz = beta < d;
    let direct = if riesz {
        overlap_integral(dim, beta)
    } else {
        unit_ball_volume(dim)
    };
    let c = if riesz { riesz_constant(dim, beta) } else { 1.0 };
    let bessel = c * bessel_integral(dim, beta);
    let relative_gap = (direct - bessel).abs() / direct;
    let out = KBeta {
        dim,
        beta,
        value: direct,
        direct,
        bessel,
        relative_gap,
    };
    if relative_gap > K_BETA_AGREEMENT {
        return Err(Error::Convergence(format!(
            "k_beta({dim}, {beta}): routes disagree, {direct} vs {bessel}"
        )));
    }
    Ok(out)
}

/// Volume of `B₁ ∩ (B₁ + u)` at `|u| = r`.
pub fn ball_overlap(dim: usize, r: f64) -> f64 {
    if r >= 2.0 {
        return 0.0;
    }
    match dim {
        1 => 2.0 - r,
        _ => 2.0 * (r / 2.0).acos() - (r / 2.0) * (4.0 - r * r).sqrt(),
    }
}

/// `∫_{|u|≤2} A(|u|) |u|^{-β} du` in difference coordinates.
fn overlap_integral(dim: usize, beta: f64) -> f64 {
    let shell = if dim == 1 { 2.0 } else { 2.0 * PI };
    let e = dim as f64 - beta;
    // v = r^{d-β} turns r^{d-1-β} dr into dv/(d-β)
    shell / e * integrate(|v| ball_overlap(dim, v.powf(1.0 / e)), 0.0, 2f64.powf(e))
}

/// `∫_{ℝ^d} |ξ|^{β-2d} J²_{d/2}(|ξ|) dξ`, truncated at `|ξ| = 10³` with the
/// averaged asymptotic tail `J² ≈ 1/(π|ξ|)` added back.
fn bessel_integral(dim: usize, beta: f64) -> f64 {
    let d = dim as f64;
    // r^{d-1} · r^{β-d} · r^{-d}J²(r)
    let f = |r: f64| r.powf(beta - 1.0) * ball_transform_sq_scaled(dim, 1.0, r);
    // r = v^{1/β} absorbs the r^{β-1} singularity at the origin
    let h = |v: f64| ball_transform_sq_scaled(dim, 1.0, v.powf(1.0 / beta)) / beta;
    let head = integrate(h, 0.0, 1.0) + panels(f, 1.0, BESSEL_CUTOFF, 1.0);
    let tail = BESSEL_CUTOFF.powf(beta - d - 1.0) / (PI * (d + 1.0 - beta));
    unit_sphere_area(dim) * (head + tail)
}

/// Flat index of the on-grid lag `z`; errors if `z` is not a node offset.
pub fn lag_index(grid: &GridSpec, z: [f64; 2]) -> Result<usize> {
    let h = grid.spacing();
    let mut k = [0usize; 2];
    for (axis, slot) in k.iter_mut().enumerate().take(grid.dim()) {
        let q = z[axis] / h;
        if (q - q.round()).abs() > 1e-9 * q.abs().max(1.0) {
            return Err(invalid(format!("lag {z:?} is not on the grid (spacing {h})")));
        }
        *slot = grid.fft_position(q.round() as i64);
    }
    if grid.dim() == 2 {
        Ok(grid.flat(k))
    } else {
        Ok(k[0])
    }
}

/// Physical lag of the FFT-ordered index `i`.
pub fn lag_of(grid: &GridSpec, i: usize) -> [f64; 2] {
    let h = grid.spacing();
    let [a, b] = grid.axes(i);
    let mut z = [grid.signed_index(a) as f64 * h, 0.0];
    if grid.dim() == 2 {
        z[1] = grid.signed_index(b) as f64 * h;
    }
    z
}

/// Snapshots of an ensemble at a single time `s`, one field per replica.
#[derive(Debug, Clone, Copy)]
pub struct EnsembleSlice<'a> {
    pub grid: &'a GridSpec,
    pub time: f64,
    pub fields: &'a [Vec<f64>],
}

impl EnsembleSlice<'_> {
    fn sigma_fields(&self, sigma: &SigmaSpec) -> Result<Vec<Vec<f64>>> {
        if self.fields.len() < 2 {
            return Err(Error::Missing(format!("no ensemble snapshot at s = {}", self.time)));
        }
        Ok(self
            .fields
            .iter()
            .map(|f| f.iter().map(|&u| sigma.eval(u)).collect())
            .collect())
    }
}

/// `θ(s) = E σ(u(s, y))` with its estimate's spatial effective sample size.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Theta {
    pub estimate: Estimate,
    /// Spatial effective sample size, when full fields were available.
    pub effective_nodes: Option<f64>,
}

/// Space average per replica, then the ensemble mean; replicas are independent,
/// so the standard error comes from the replica spread.
pub fn estimate_theta(slice: &EnsembleSlice, sigma: &SigmaSpec) -> Result<Theta> {
    let sf = slice.sigma_fields(sigma)?;
    let per_replica: Vec<f64> = sf.iter().map(|f| mean(f)).collect();
    Ok(Theta {
        estimate: Estimate::of_mean(&per_replica),
        effective_nodes: Some(effective_sample_size(&sf, slice.grid.points_per_axis())),
    })
}

/// Spatial autocorrelation `N^{-d} Σ_x f(x)f(x+z)` at every lag (FFT order).
fn autocorrelation(fourier: &Fourier, f: &[f64]) -> Vec<f64> {
    let mut scratch = fourier.scratch();
    let n = f.len() as f64;
    let mut buf: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fourier.dft(&mut buf, &mut scratch);
    buf.iter_mut().for_each(|c| *c = Complex64::new(c.norm_sqr(), 0.0));
    fourier.idft(&mut buf, &mut scratch);
    buf.iter().map(|c| c.re / n).collect()
}

fn autocorrelations(grid: &GridSpec, sf: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let fourier = Fourier::new(grid);
    sf.iter().map(|f| autocorrelation(&fourier, f)).collect()
}

/// `Ψ(s, z) = E[σ(u(s,0))σ(u(s,z))]` at the requested on-grid lags.
pub fn estimate_psi(slice: &EnsembleSlice, sigma: &SigmaSpec, lags: &[[f64; 2]]) -> Result<Vec<Estimate>> {
    let idx = lags.iter().map(|&z| lag_index(slice.grid, z)).collect::<Result<Vec<_>>>()?;
    let sf = slice.sigma_fields(sigma)?;
    let ac = autocorrelations(slice.grid, &sf);
    Ok(idx
        .iter()
        .map(|&i| Estimate::of_mean(&ac.iter().map(|a| a[i]).collect::<Vec<_>>()))
        .collect())
}

/// `ν(s)² = ∫Ψ(s,z) μ(dz)`; only defined when `β = d`.
pub fn estimate_nu_sq(slice: &EnsembleSlice, sigma: &SigmaSpec, model: &CovarianceModel) -> Result<Estimate> {
    if model.is_riesz() {
        return Err(Error::Regime("nu is defined only for beta = d".into()));
    }
    if slice.fields.len() < 2 {
        return Err(Error::Missing(format!("no ensemble snapshot at s = {}", slice.time)));
    }
    let probe = MomentProbe::new(slice.grid, model, *sigma);
    let per_replica: Vec<f64> = slice
        .fields
        .iter()
        .map(|f| probe.observe(f).nu_sq.expect("beta = d probes record nu"))
        .collect();
    Ok(Estimate::of_mean(&per_replica))
}

/// `ϱ(s)` for the model's regime from `θ(s)` (`β < d`) or `ν(s)²` (`β = d`).
pub fn rho(model: &CovarianceModel, k: &KBeta, theta: Option<Estimate>, nu_sq: Option<Estimate>) -> Result<Estimate> {
    if (model.beta() - k.beta).abs() > 1e-12 || model.dim() != k.dim {
        return Err(Error::Regime("k_beta computed for a different (d, beta)".into()));
    }
    if model.is_riesz() {
        let th = theta.ok_or_else(|| Error::Regime("beta < d needs theta".into()))?;
        let c = (model.mu_mass() * k.value).sqrt();
        Ok(Estimate::new(c * th.value.abs(), c * th.se))
    } else {
        let n2 = nu_sq.ok_or_else(|| Error::Regime("beta = d needs nu".into()))?;
        let v = (k.value * n2.value.max(0.0)).sqrt();
        // delta method on the square root
        let se = if v > 0.0 { 0.5 * k.value * n2.se / v } else { (k.value * n2.se).sqrt() };
        Ok(Estimate::new(v, se))
    }
}

/// Per-replica spatial summaries at one time: `mean σ(u)` and, when
/// `β = d`, `∫ N^{-d}Σ_x σ(u(x))σ(u(x+z)) μ(dz)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicaMoments {
    pub theta: f64,
    pub nu_sq: Option<f64>,
}

/// Computes [`ReplicaMoments`] from a single field.
pub struct MomentProbe {
    sigma: SigmaSpec,
    kind: ProbeKind,
}

enum ProbeKind {
    Theta,
    Diagonal,
    Weighted { fourier: Fourier, weights: Vec<f64> },
}

impl MomentProbe {
    pub fn new(grid: &GridSpec, model: &CovarianceModel, sigma: SigmaSpec) -> Self {
        let kind = match model.spec() {
            ModelSpec::RieszKernel { .. } => ProbeKind::Theta,
            ModelSpec::WhiteNoise => ProbeKind::Diagonal,
            ModelSpec::IntegrableDensity { .. } => ProbeKind::Weighted {
                fourier: Fourier::new(grid),
                weights: (0..grid.len())
                    .map(|i| model.covariance_at(lag_of(grid, i)).unwrap_or(0.0) * grid.cell_volume())
                    .collect(),
            },
        };
        Self { sigma, kind }
    }

    pub fn observe(&self, u: &[f64]) -> ReplicaMoments {
        let sf: Vec<f64> = u.iter().map(|&x| self.sigma.eval(x)).collect();
        let theta = mean(&sf);
        let nu_sq = match &self.kind {
            ProbeKind::Theta => None,
            ProbeKind::Diagonal => Some(mean(&sf.iter().map(|v| v * v).collect::<Vec<_>>())),
            ProbeKind::Weighted { fourier, weights } => {
                let ac = autocorrelation(fourier, &sf);
                Some(ac.iter().zip(weights).map(|(a, w)| a * w).sum())
            }
        };
        ReplicaMoments { theta, nu_sq }
    }
}

/// `θ`, `ν²`, `ϱ` on a time lattice.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LimitConstants {
    pub k_beta: KBeta,
    pub mu_mass: f64,
    pub case: String,
    pub times: Vec<f64>,
    pub theta: Vec<Theta>,
    pub nu_sq: Option<Vec<Estimate>>,
    pub rho: Vec<Estimate>,
    /// Estimator used for the time functions.
    pub provenance: String,
}

impl LimitConstants {
    /// `slices[i]` holds the ensemble at `times[i]`; time 0 may be omitted,
    /// its exact values are filled in from `σ(1)`.
    pub fn estimate(model: &CovarianceModel, sigma: &SigmaSpec, slices: &[EnsembleSlice]) -> Result<Self> {
        let mut times = Vec::new();
        let mut theta = Vec::new();
        let mut nu_sq = Vec::new();
        for s in slices {
            times.push(s.time);
            theta.push(estimate_theta(s, sigma)?);
            if !model.is_riesz() {
                nu_sq.push(estimate_nu_sq(s, sigma, model)?);
            }
        }
        Self::assemble(model, sigma, times, theta, nu_sq)
    }

    /// Same as [`LimitConstants::estimate`] from per-replica summaries;
    /// `moments[i][r]` belongs to replica `r` at `times[i]`.
    pub fn from_moments(
        model: &CovarianceModel,
        sigma: &SigmaSpec,
        times: &[f64],
        moments: &[Vec<ReplicaMoments>],
    ) -> Result<Self> {
        if times.len() != moments.len() {
            return Err(Error::Missing("one moment slice per time is required".into()));
        }
        let mut theta = Vec::new();
        let mut nu_sq = Vec::new();
        for (t, m) in times.iter().zip(moments) {
            if m.len() < 2 {
                return Err(Error::Missing(format!("no ensemble moments at s = {t}")));
            }
            let th: Vec<f64> = m.iter().map(|x| x.theta).collect();
            theta.push(Theta {
                estimate: Estimate::of_mean(&th),
                effective_nodes: None,
            });
            if !model.is_riesz() {
                let nu = m
                    .iter()
                    .map(|x| x.nu_sq.ok_or_else(|| Error::Missing("nu moments were not recorded".into())))
                    .collect::<Result<Vec<_>>>()?;
                nu_sq.push(Estimate::of_mean(&nu));
            }
        }
        Self::assemble(model, sigma, times.to_vec(), theta, nu_sq)
    }

    fn assemble(
        model: &CovarianceModel,
        sigma: &SigmaSpec,
        mut times: Vec<f64>,
        mut theta: Vec<Theta>,
        mut nu_sq: Vec<Estimate>,
    ) -> Result<Self> {
        let k = k_beta(model.dim(), model.beta())?;
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("sample times must increase"));
        }
        let s1 = sigma.sigma_at_one();
        if times.first().map(|&t| t > 0.0).unwrap_or(true) {
            times.insert(0, 0.0);
            theta.insert(
                0,
                Theta {
                    estimate: Estimate::new(s1, 0.0),
                    effective_nodes: None,
                },
            );
            if !model.is_riesz() {
                nu_sq.insert(0, Estimate::new(s1 * s1 * model.mu_mass(), 0.0));
            }
        }
        let rhos = theta
            .iter()
            .enumerate()
            .map(|(i, th)| rho(model, &k, Some(th.estimate), (!model.is_riesz()).then(|| nu_sq[i])))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            k_beta: k,
            mu_mass: model.mu_mass(),
            case: model.case_label().into(),
            times,
            theta,
            nu_sq: (!model.is_riesz()).then_some(nu_sq),
            rho: rhos,
            provenance: "ensemble-and-space averages over independent replicas".into(),
        })
    }

    /// `∫₀^t ϱ²(s) ds` by the trapezoid rule on the sampled lattice; the
    /// integrand is linearly interpolated inside the last interval.
    pub fn integrated_rho_sq(&self, t: f64) -> Estimate {
        let sq: Vec<f64> = self.rho.iter().map(|r| r.value * r.value).collect();
        let se: Vec<f64> = self.rho.iter().map(|r| 2.0 * r.value * r.se).collect();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut es = Vec::new();
        for i in 0..self.times.len() {
            if self.times[i] <= t {
                xs.push(self.times[i]);
                ys.push(sq[i]);
                es.push(se[i]);
            } else {
                if i > 0 {
                    let w = (t - self.times[i - 1]) / (self.times[i] - self.times[i - 1]);
                    xs.push(t);
                    ys.push(sq[i - 1] + w * (sq[i] - sq[i - 1]));
                    es.push(es[i - 1].max(se[i]));
                }
                break;
            }
        }
        // errors at different times are treated as fully correlated (conservative)
        Estimate::new(trapezoid(&xs, &ys), trapezoid(&xs, &es))
    }

    /// Largest violation of `ν² ≥ θ²` in standard errors (negative when it holds).
    pub fn nu_theta_gap(&self) -> Option<f64> {
        let nu = self.nu_sq.as_ref()?;
        nu.iter()
            .zip(&self.theta)
            .map(|(n, th)| {
                let t2 = th.estimate.value * th.estimate.value;
                let se = (n.se.powi(2) + (2.0 * th.estimate.value * th.estimate.se).powi(2)).sqrt();
                if se == 0.0 {
                    if t2 - n.value > 1e-12 {
                        f64::INFINITY
                    } else {
                        f64::NEG_INFINITY
                    }
                } else {
                    (t2 - n.value) / se
                }
            })
            .reduce(f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::Family;

    #[test]
    fn k_beta_values() {
        let k = k_beta(1, 0.5).unwrap();
        assert!((k.value - 2f64.powf(2.5) / 0.75).abs() < 1e-9, "{k:?}");
        assert!((k.value - 7.54247).abs() < 1e-5);
        assert_eq!(k_beta(1, 1.0).unwrap().value, 2.0);
        assert!((k_beta(2, 2.0).unwrap().value - PI).abs() < 1e-15);
        // ∫_{B₁²}|x−x′|^{-1} in the plane is 16π/3
        let k21 = k_beta(2, 1.0).unwrap();
        assert!((k21.value - 16.0 * PI / 3.0).abs() < 1e-8, "{}", k21.value);
        for &(d, b) in &[(1, 0.5), (1, 1.0), (2, 1.0), (2, 2.0), (1, 0.2), (2, 0.5)] {
            let k = k_beta(d, b).unwrap();
            assert!(k.relative_gap < K_BETA_AGREEMENT, "{k:?}");
        }
        assert!(k_beta(1, 0.0).is_err() && k_beta(1, 1.5).is_err());
    }

    #[test]
    fn one_dimensional_closed_form() {
        for &b in &[0.1, 0.3, 0.7, 0.9] {
            let exact = 2f64.powf(3.0 - b) / ((1.0 - b) * (2.0 - b));
            assert!((k_beta(1, b).unwrap().value - exact).abs() < 1e-8 * exact);
        }
    }

    fn slice_fields(grid: &GridSpec, reps: usize, f: impl Fn(usize, [f64; 2]) -> f64) -> Vec<Vec<f64>> {
        (0..reps).map(|r| (0..grid.len()).map(|i| f(r, grid.node(i))).collect()).collect()
    }

    #[test]
    fn trivial_moments() {
        let g = GridSpec::new(1, 4.0, 64).unwrap();
        let ones = slice_fields(&g, 5, |_, _| 1.0);
        let s = EnsembleSlice {
            grid: &g,
            time: 0.0,
            fields: &ones,
        };
        let sigma = SigmaSpec::Linear { a: 2.0, b: 0.5 };
        let th = estimate_theta(&s, &sigma).unwrap();
        assert_eq!(th.estimate.value, 2.5);
        assert_eq!(th.estimate.se, 0.0);
        let psi = estimate_psi(&s, &sigma, &[[0.0, 0.0], [0.5, 0.0], [-2.0, 0.0]]).unwrap();
        for p in psi {
            assert!((p.value - 6.25).abs() < 1e-12);
        }
        assert!(estimate_psi(&s, &sigma, &[[0.3, 0.0]]).is_err());
        let wn = CovarianceModel::white_noise();
        let nu = estimate_nu_sq(&s, &sigma, &wn).unwrap();
        assert!((nu.value - 6.25).abs() < 1e-12);
        let k = k_beta(1, 1.0).unwrap();
        let r = rho(&wn, &k, None, Some(nu)).unwrap();
        assert!((r.value - (2.0f64 * 6.25).sqrt()).abs() < 1e-12);
        let riesz = CovarianceModel::new(1, 1.5, ModelSpec::RieszKernel { beta: 0.5, mu: vec![] }).unwrap();
        assert!(estimate_nu_sq(&s, &sigma, &riesz).is_err());
        let kr = k_beta(1, 0.5).unwrap();
        let r = rho(&riesz, &kr, Some(Estimate::new(1.0, 0.0)), None).unwrap();
        assert!((r.value - 2.7464).abs() < 1e-4);
        assert!(rho(&riesz, &k, Some(Estimate::new(1.0, 0.0)), None).is_err());
    }

    #[test]
    fn constant_sigma_nu_integrates_the_density() {
        let g = GridSpec::new(1, 16.0, 512).unwrap();
        let model = CovarianceModel::new(
            1,
            1.5,
            ModelSpec::IntegrableDensity {
                family: Family::Gaussian,
                length: 1.0,
                r_exponent: None,
            },
        )
        .unwrap();
        let f = slice_fields(&g, 3, |r, x| 1.0 + 0.1 * (r as f64 + x[0]).sin());
        let s = EnsembleSlice {
            grid: &g,
            time: 0.3,
            fields: &f,
        };
        let c = SigmaSpec::Constant { c: 1.5 };
        let nu = estimate_nu_sq(&s, &c, &model).unwrap();
        assert!((nu.value - 2.25 * PI.sqrt()).abs() < 1e-9, "{nu:?}");
    }

    #[test]
    fn psi_symmetry_and_decorrelation() {
        use rand::{Rng, SeedableRng};
        let g = GridSpec::new(1, 8.0, 128).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let f: Vec<Vec<f64>> = (0..400)
            .map(|_| {
                let z: Vec<f64> = (0..g.len()).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
                (0..g.len()).map(|i| 1.0 + 0.3 * (z[i] + z[(i + 1) % g.len()])).collect()
            })
            .collect();
        let s = EnsembleSlice {
            grid: &g,
            time: 0.5,
            fields: &f,
        };
        let id = SigmaSpec::Linear { a: 1.0, b: 0.0 };
        let h = g.spacing();
        let p = estimate_psi(&s, &id, &[[h, 0.0], [-h, 0.0], [8.0, 0.0]]).unwrap();
        assert!((p[0].value - p[1].value).abs() < 1e-12);
        assert!((p[0].value - 1.09).abs() < 4.0 * p[0].se);
        let th = estimate_theta(&s, &id).unwrap();
        assert!((p[2].value - th.estimate.value.powi(2)).abs() < 4.0 * p[2].se);
        assert!(th.effective_nodes.unwrap() < (400 * 128) as f64);
    }

    #[test]
    fn integrated_rho() {
        let k = k_beta(1, 1.0).unwrap();
        let lc = LimitConstants {
            k_beta: k,
            mu_mass: 1.0,
            case: "(ii)".into(),
            times: vec![0.0, 0.25, 0.5],
            theta: vec![],
            nu_sq: None,
            rho: vec![Estimate::new(2f64.sqrt(), 0.0); 3],
            provenance: String::new(),
        };
        assert!((lc.integrated_rho_sq(0.5).value - 1.0).abs() < 1e-12);
        assert!((lc.integrated_rho_sq(0.4).value - 0.8).abs() < 1e-12);
    }
}
