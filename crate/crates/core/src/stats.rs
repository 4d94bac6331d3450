//! Estimators and tests used by the Monte Carlo harness. Sums go through a
//! fixed-shape pairwise tree so results do not depend on worker scheduling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Pairwise (tree) summation with a fixed split pattern.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    pairwise_sum(&sq) / (xs.len() as f64 - 1.0)
}

pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let p: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).collect();
    pairwise_sum(&p) / (xs.len() as f64 - 1.0)
}

/// Mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    pub fn new(value: f64, se: f64) -> Self {
        Self { value, se }
    }

    pub fn of_mean(xs: &[f64]) -> Self {
        Self::new(mean(xs), (variance(xs) / xs.len() as f64).sqrt())
    }

    /// Sample variance with the standard error `√((m₄ − s⁴)/n)`.
    pub fn of_variance(xs: &[f64]) -> Self {
        let m = mean(xs);
        let s2 = variance(xs);
        let q: Vec<f64> = xs.iter().map(|x| (x - m).powi(4)).collect();
        let m4 = pairwise_sum(&q) / xs.len() as f64;
        Self::new(s2, ((m4 - s2 * s2).max(0.0) / xs.len() as f64).sqrt())
    }

    /// Sample covariance with the standard error of the product mean.
    pub fn of_covariance(xs: &[f64], ys: &[f64]) -> Self {
        let (mx, my) = (mean(xs), mean(ys));
        let p: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).collect();
        let c = pairwise_sum(&p) / (xs.len() as f64 - 1.0);
        Self::new(c, (variance(&p) / xs.len() as f64).sqrt())
    }

    /// `|value − target|` in standard errors.
    pub fn z_against(&self, target: f64) -> f64 {
        (self.value - target).abs() / self.se
    }
}

/// Streaming mean and variance (Welford), mergeable across workers.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    pub n: u64,
    pub mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&self, o: &Welford) -> Welford {
        if self.n == 0 {
            return *o;
        }
        if o.n == 0 {
            return *self;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        Welford {
            n,
            mean: self.mean + d * o.n as f64 / n as f64,
            m2: self.m2 + o.m2 + d * d * (self.n as f64 * o.n as f64) / n as f64,
        }
    }

    pub fn variance(&self) -> f64 {
        self.m2 / (self.n as f64 - 1.0)
    }
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Samples shifted and scaled by their own mean and standard deviation.
pub fn standardize(xs: &[f64]) -> Vec<f64> {
    let m = mean(xs);
    let s = variance(xs).sqrt();
    xs.iter().map(|x| (x - m) / s).collect()
}

/// `sup |F_n − Φ|`.
pub fn ks_normal(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf(x);
            (f - i as f64 / n).max((i as f64 + 1.0) / n - f)
        })
        .fold(0.0, f64::max)
}

/// `P(K > λ)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let s: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum();
    s.clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = (n as f64 * m as f64 / (n + m) as f64).sqrt();
    let p = kolmogorov_survival((en + 0.12 + 0.11 / en) * d);
    (d, p)
}

/// Scott's rule bin width `3.49 s n^{-1/3}` for unit-variance samples.
pub fn scott_width(n: usize) -> f64 {
    3.49 * (n as f64).powf(-1.0 / 3.0)
}

/// Binned total-variation estimate `½ Σ |p̂_i − Φ(bin_i)|` for standardized
/// samples, with equal-width bins over `[-6, 6]` and two tail bins.
pub fn tv_binned(std_samples: &[f64]) -> Result<f64> {
    let n = std_samples.len();
    if n < 100 {
        return Err(Error::Insufficient(format!("TV binning needs at least 100 samples, got {n}")));
    }
    let width = scott_width(n);
    let k = (12.0 / width).ceil() as usize;
    let h = 12.0 / k as f64;
    let mut counts = vec![0usize; k + 2];
    for &x in std_samples {
        let idx = if x < -6.0 {
            0
        } else if x >= 6.0 {
            k + 1
        } else {
            1 + (((x + 6.0) / h) as usize).min(k - 1)
        };
        counts[idx] += 1;
    }
    let edges: Vec<f64> = (0..=k).map(|i| -6.0 + i as f64 * h).collect();
    let mut mass = Vec::with_capacity(k + 2);
    mass.push(normal_cdf(-6.0));
    for w in edges.windows(2) {
        mass.push(normal_cdf(w[1]) - normal_cdf(w[0]));
    }
    mass.push(1.0 - normal_cdf(6.0));
    let terms: Vec<f64> = counts
        .iter()
        .zip(&mass)
        .map(|(&c, &p)| (c as f64 / n as f64 - p).abs())
        .collect();
    Ok(0.5 * pairwise_sum(&terms))
}

/// Distances of standardized samples to `N(0,1)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Distances {
    pub ks: f64,
    pub tv: f64,
}

pub fn normal_distances(xs: &[f64]) -> Result<Distances> {
    let z = standardize(xs);
    Ok(Distances {
        ks: ks_normal(&z),
        tv: tv_binned(&z)?,
    })
}

/// Null-calibrated floors: the `quantile` of each distance over `reps`
/// standardized samples of size `n` drawn from `N(0,1)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NullFloor {
    pub n: usize,
    pub ks_mean: f64,
    pub tv_mean: f64,
    pub ks_floor: f64,
    pub tv_floor: f64,
}

pub fn null_floor<R: Rng>(n: usize, reps: usize, quantile: f64, rng: &mut R) -> Result<NullFloor> {
    let mut ks = Vec::with_capacity(reps);
    let mut tv = Vec::with_capacity(reps);
    let mut buf = vec![0.0; n];
    for _ in 0..reps {
        for b in buf.iter_mut() {
            *b = rng.sample(rand_distr::StandardNormal);
        }
        let d = normal_distances(&buf)?;
        ks.push(d.ks);
        tv.push(d.tv);
    }
    Ok(NullFloor {
        n,
        ks_mean: mean(&ks),
        tv_mean: mean(&tv),
        ks_floor: quantile_of(&ks, quantile),
        tv_floor: quantile_of(&tv, quantile),
    })
}

/// Empirical quantile (linear interpolation).
pub fn quantile_of(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn overlaps(&self, o: &Interval) -> bool {
        self.lo <= o.hi && o.lo <= self.hi
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Percentile bootstrap interval of `stat` at level `1 − 2·tail`, with the
/// bootstrap replicates returned for bias estimates.
pub fn bootstrap<R, F>(xs: &[f64], resamples: usize, tail: f64, rng: &mut R, stat: F) -> (Interval, Vec<f64>)
where
    R: Rng,
    F: Fn(&[f64]) -> f64,
{
    let n = xs.len();
    let mut buf = vec![0.0; n];
    let reps: Vec<f64> = (0..resamples)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = xs[rng.gen_range(0..n)];
            }
            stat(&buf)
        })
        .collect();
    (
        Interval {
            lo: quantile_of(&reps, tail),
            hi: quantile_of(&reps, 1.0 - tail),
        },
        reps,
    )
}

/// Least-squares line with the slope's standard error.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
}

pub fn ols(x: &[f64], y: &[f64]) -> LineFit {
    let n = x.len() as f64;
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let slope_se = if n > 2.0 { (rss / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    LineFit {
        slope,
        intercept,
        slope_se,
    }
}

/// Weighted least squares with weights `1/σ_i²`; the slope standard error is
/// propagated from the per-point errors.
pub fn wls(x: &[f64], y: &[f64], sd: &[f64]) -> LineFit {
    let w: Vec<f64> = sd.iter().map(|s| 1.0 / (s * s)).collect();
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(&w).map(|(a, b)| b * (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).zip(&w).map(|((a, c), b)| b * (a - mx) * (c - my)).sum();
    let slope = sxy / sxx;
    LineFit {
        slope,
        intercept: my - slope * mx,
        slope_se: (1.0 / sxx).sqrt(),
    }
}

/// Mardia's multivariate skewness test.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Mardia {
    pub b1: f64,
    pub statistic: f64,
    pub dof: f64,
    pub p_value: f64,
}

/// `rows[i]` is the `i`-th observation of a `p`-vector.
pub fn mardia_skewness(rows: &[Vec<f64>]) -> Result<Mardia> {
    let n = rows.len();
    let p = rows.first().map(|r| r.len()).unwrap_or(0);
    if n <= p + 1 || p == 0 {
        return Err(Error::Insufficient(format!("Mardia test needs more than {} observations", p + 1)));
    }
    let mut m = DVector::<f64>::zeros(p);
    for r in rows {
        m += DVector::from_column_slice(r);
    }
    m /= n as f64;
    let centered: Vec<DVector<f64>> = rows.iter().map(|r| DVector::from_column_slice(r) - &m).collect();
    let mut s = DMatrix::<f64>::zeros(p, p);
    for c in &centered {
        s += c * c.transpose();
    }
    s /= n as f64;
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::Insufficient("sample covariance is singular".into()))?;
    // whitened observations y_i = L^{-1}(x_i − m); then (x_i−m)ᵀS⁻¹(x_j−m) = y_iᵀy_j
    let l = chol.l();
    let ys: Vec<DVector<f64>> = centered
        .iter()
        .map(|c| l.solve_lower_triangular(c).expect("cholesky factor is invertible"))
        .collect();
    // Σ_ij (y_iᵀy_j)³ = Σ_{abc} (Σ_i y_ia y_ib y_ic)²
    let mut acc = 0.0;
    for a in 0..p {
        for b in 0..p {
            for c in 0..p {
                let t: f64 = ys.iter().map(|y| y[a] * y[b] * y[c]).sum();
                acc += t * t;
            }
        }
    }
    let b1 = acc / (n as f64 * n as f64);
    let statistic = n as f64 * b1 / 6.0;
    let dof = (p * (p + 1) * (p + 2)) as f64 / 6.0;
    let p_value = 1.0 - ChiSquared::new(dof).expect("positive dof").cdf(statistic);
    Ok(Mardia {
        b1,
        statistic,
        dof,
        p_value,
    })
}

/// Effective number of independent samples in a stationary 1-d/2-d field,
/// `n / (1 + 2 Σ_{lag < cut} ρ(lag))` along the first axis, where `cut` is
/// the first lag with `ρ < 0.05`.
pub fn effective_sample_size(fields: &[Vec<f64>], points_per_axis: usize) -> f64 {
    let total: usize = fields.iter().map(|f| f.len()).sum();
    let all: Vec<f64> = fields.iter().flatten().copied().collect();
    let m = mean(&all);
    let var = variance(&all);
    if var == 0.0 {
        return total as f64;
    }
    let n = points_per_axis;
    let mut sum_rho = 0.0;
    for lag in 1..n / 2 {
        let mut acc = 0.0;
        let mut cnt = 0usize;
        for f in fields {
            for (i, v) in f.iter().enumerate() {
                let row = i - i % n;
                let j = row + (i % n + lag) % n;
                acc += (v - m) * (f[j] - m);
                cnt += 1;
            }
        }
        let rho = acc / cnt as f64 / var;
        if rho < 0.05 {
            break;
        }
        sum_rho += rho;
    }
    total as f64 / (1.0 + 2.0 * sum_rho)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(p)
}
