//! Periodic computational domain `[-L, L)^d` and the continuum-calibrated
//! Fourier transform every other module is written against.
//!
//! Conventions:
//!
//! * nodes `x_j = -L + j Δx`, `Δx = 2L / N`, flat index `i0 * N + i1` in 2-d;
//! * wave vectors `ξ_k = π k / L` with `k ∈ {-N/2, …, N/2 - 1}` per axis, stored
//!   in FFT order (non-negative indices first);
//! * forward: `f̂(ξ) ≈ ∫ e^{-i⟨ξ, y⟩} f(y) dy`, i.e. `Δx^d · DFT` with the phase of
//!   the shifted origin folded in;
//! * inverse: `f(x) = (2π)^{-d} Σ_k f̂(ξ_k) e^{i⟨ξ_k, x⟩} Δξ^d`.
//!
//! The `(2π)^{-d}` bookkeeping lives here and nowhere else.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking Hermitian symmetry of coefficient arrays.
pub const HERMITIAN_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpecRepr", into = "GridSpecRepr")]
pub struct GridSpec {
    dim: usize,
    half_length: f64,
    points: usize,
}

#[derive(Serialize, Deserialize)]
struct GridSpecRepr {
    dim: usize,
    half_length: f64,
    points_per_axis: usize,
}

impl TryFrom<GridSpecRepr> for GridSpec {
    type Error = Error;

    fn try_from(r: GridSpecRepr) -> Result<Self> {
        GridSpec::new(r.dim, r.half_length, r.points_per_axis)
    }
}

impl From<GridSpec> for GridSpecRepr {
    fn from(g: GridSpec) -> Self {
        GridSpecRepr {
            dim: g.dim,
            half_length: g.half_length,
            points_per_axis: g.points,
        }
    }
}

impl GridSpec {
    pub fn new(dim: usize, half_length: f64, points_per_axis: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidGrid(format!("dimension must be 1 or 2, got {dim}")));
        }
        if !(half_length.is_finite() && half_length > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "half length must be positive and finite, got {half_length}"
            )));
        }
        if points_per_axis < 4 || !points_per_axis.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "points per axis must be a power of two >= 4, got {points_per_axis}"
            )));
        }
        Ok(Self {
            dim,
            half_length,
            points: points_per_axis,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_length(&self) -> f64 {
        self.half_length
    }

    pub fn points_per_axis(&self) -> usize {
        self.points
    }

    /// Total number of nodes, `N^d`.
    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_length / self.points as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// `Δξ = π / L`.
    pub fn frequency_spacing(&self) -> f64 {
        PI / self.half_length
    }

    pub fn frequency_cell_volume(&self) -> f64 {
        self.frequency_spacing().powi(self.dim as i32)
    }

    /// `(2L)^d`.
    pub fn volume(&self) -> f64 {
        (2.0 * self.half_length).powi(self.dim as i32)
    }

    /// Largest representable wave number per axis, `π N / (2L)`.
    pub fn nyquist(&self) -> f64 {
        PI * self.points as f64 / (2.0 * self.half_length)
    }

    /// Signed frequency index of FFT-ordered position `i` along one axis.
    pub fn signed_index(&self, i: usize) -> i64 {
        let n = self.points as i64;
        let i = i as i64;
        if i < n / 2 {
            i
        } else {
            i - n
        }
    }

    /// FFT-ordered position of signed frequency index `k`.
    pub fn fft_position(&self, k: i64) -> usize {
        let n = self.points as i64;
        k.rem_euclid(n) as usize
    }

    pub fn coordinate(&self, i: usize) -> f64 {
        -self.half_length + i as f64 * self.spacing()
    }

    /// Per-axis indices of a flat index; the second entry is 0 in 1-d.
    pub fn axes(&self, flat: usize) -> [usize; 2] {
        if self.dim == 1 {
            [flat, 0]
        } else {
            [flat / self.points, flat % self.points]
        }
    }

    pub fn flat(&self, axes: [usize; 2]) -> usize {
        if self.dim == 1 {
            axes[0]
        } else {
            axes[0] * self.points + axes[1]
        }
    }

    /// Physical position of a node (second coordinate 0 in 1-d).
    pub fn node(&self, flat: usize) -> [f64; 2] {
        let [a, b] = self.axes(flat);
        if self.dim == 1 {
            [self.coordinate(a), 0.0]
        } else {
            [self.coordinate(a), self.coordinate(b)]
        }
    }

    pub fn node_norm(&self, flat: usize) -> f64 {
        let [x, y] = self.node(flat);
        x.hypot(y)
    }

    /// Flat index of the node nearest to the origin (`x = 0` is always a node).
    pub fn origin(&self) -> usize {
        let c = self.points / 2;
        self.flat([c, c])
    }

    pub fn wave(&self, flat: usize) -> [f64; 2] {
        let [a, b] = self.axes(flat);
        let dk = self.frequency_spacing();
        if self.dim == 1 {
            [self.signed_index(a) as f64 * dk, 0.0]
        } else {
            [
                self.signed_index(a) as f64 * dk,
                self.signed_index(b) as f64 * dk,
            ]
        }
    }

    pub fn wave_norm(&self, flat: usize) -> f64 {
        let [x, y] = self.wave(flat);
        x.hypot(y)
    }

    /// `|ξ_k|` for every mode, FFT order.
    pub fn wave_norms(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.wave_norm(k)).collect()
    }

    /// Flat index of the mode `-ξ_k` (the Nyquist row maps to itself).
    pub fn negated(&self, flat: usize) -> usize {
        let [a, b] = self.axes(flat);
        let neg = |i: usize| (self.points - i) % self.points;
        if self.dim == 1 {
            neg(a)
        } else {
            self.flat([neg(a), neg(b)])
        }
    }

    /// Sign `(-1)^{k_1 + … + k_d}` carrying the shift of the origin to `-L`.
    fn origin_phase(&self, flat: usize) -> f64 {
        let [a, b] = self.axes(flat);
        if (a + b) % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Same grid with the torus scaled by `factor` (node count unchanged).
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.dim, self.half_length * factor, self.points)
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[-{L}, {L})^{d} with {N}^{d} nodes",
            L = self.half_length,
            d = self.dim,
            N = self.points
        )
    }
}

/// Real samples on every node of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RealField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl RealField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_vec_unchecked(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        Self {
            values: vec![c; grid.len()],
            grid,
        }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn([f64; 2]) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(grid.node(i))).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Riemann sum `Σ f Δx^d`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn at(&self, flat: usize) -> f64 {
        self.values[flat]
    }
}

/// Continuum-calibrated spectral coefficients, FFT order.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    grid: GridSpec,
    coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(grid: GridSpec, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "spectrum has {} coefficients, grid has {} modes",
                coeffs.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, coeffs })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            coeffs: vec![Complex64::new(0.0, 0.0); grid.len()],
            grid,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Coefficient at the signed frequency index `k` (second entry ignored in 1-d).
    pub fn at_signed(&self, k: [i64; 2]) -> Complex64 {
        let a = self.grid.fft_position(k[0]);
        let b = self.grid.fft_position(k[1]);
        self.coeffs[self.grid.flat([a, b])]
    }

    /// Largest `|c(ξ) - conj(c(-ξ))|` relative to the largest coefficient.
    pub fn hermitian_residue(&self) -> f64 {
        let scale = self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
        if scale == 0.0 {
            return 0.0;
        }
        let worst = (0..self.coeffs.len())
            .map(|k| (self.coeffs[k] - self.coeffs[self.grid.negated(k)].conj()).norm())
            .fold(0.0, f64::max);
        worst / scale
    }
}

/// Planned transforms for one grid. Cheap to clone; every clone shares plans.
#[derive(Clone)]
pub struct Fourier {
    grid: GridSpec,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Fourier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Fourier").field("grid", &self.grid).finish()
    }
}

impl Fourier {
    pub fn new(grid: &GridSpec) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            grid: *grid,
            forward: planner.plan_fft_forward(grid.points),
            inverse: planner.plan_fft_inverse(grid.points),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Scratch buffer large enough for [`Fourier::dft`] / [`Fourier::idft`].
    pub fn scratch(&self) -> Vec<Complex64> {
        let len = self
            .forward
            .get_inplace_scratch_len()
            .max(self.inverse.get_inplace_scratch_len());
        vec![Complex64::new(0.0, 0.0); len]
    }

    /// Unnormalized multi-dimensional DFT over the raw node ordering.
    pub fn dft(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        self.apply(&*self.forward, buf, scratch);
    }

    /// Inverse of [`Fourier::dft`], including the `1 / N^d` factor.
    pub fn idft(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        self.apply(&*self.inverse, buf, scratch);
        let norm = 1.0 / self.grid.len() as f64;
        buf.iter_mut().for_each(|c| *c *= norm);
    }

    fn apply(&self, plan: &dyn Fft<f64>, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        let n = self.grid.points;
        debug_assert_eq!(buf.len(), self.grid.len());
        plan.process_with_scratch(buf, scratch);
        if self.grid.dim == 2 {
            transpose_square(buf, n);
            plan.process_with_scratch(buf, scratch);
            transpose_square(buf, n);
        }
    }

    /// `f̂(ξ_k) = Δx^d Σ_j f(x_j) e^{-i⟨ξ_k, x_j⟩}`.
    pub fn forward_transform(&self, f: &RealField) -> Result<Spectrum> {
        self.check_grid(f.grid())?;
        if let Some((index, &value)) = f.values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        let mut buf: Vec<Complex64> = f.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut scratch = self.scratch();
        self.dft(&mut buf, &mut scratch);
        let h = self.grid.cell_volume();
        for (k, c) in buf.iter_mut().enumerate() {
            *c *= h * self.grid.origin_phase(k);
        }
        Spectrum::new(self.grid, buf)
    }

    /// Exact inverse of [`Fourier::forward_transform`]; rejects coefficients
    /// that are not Hermitian within [`HERMITIAN_TOLERANCE`].
    pub fn inverse_transform(&self, s: &Spectrum) -> Result<RealField> {
        self.check_grid(s.grid())?;
        let residue = s.hermitian_residue();
        if residue > HERMITIAN_TOLERANCE {
            return Err(Error::NotHermitian {
                residue,
                tolerance: HERMITIAN_TOLERANCE,
            });
        }
        let mut buf = s.coeffs.clone();
        let inv_h = 1.0 / self.grid.cell_volume();
        for (k, c) in buf.iter_mut().enumerate() {
            *c *= inv_h * self.grid.origin_phase(k);
        }
        let mut scratch = self.scratch();
        self.idft(&mut buf, &mut scratch);
        let values = buf.iter().map(|c| c.re).collect();
        RealField::new(self.grid, values)
    }

    /// Real field whose continuum transform is the real, even symbol `m(|ξ|)`:
    /// `f(x_j) = (2L)^{-d} Σ_k m(|ξ_k|) e^{i⟨ξ_k, x_j⟩}`.
    pub fn radial_symbol_inverse(&self, symbol: impl Fn(f64) -> f64) -> RealField {
        let g = &self.grid;
        let inv_vol = 1.0 / g.volume();
        let mut buf: Vec<Complex64> = (0..g.len())
            .map(|k| Complex64::new(symbol(g.wave_norm(k)) * g.origin_phase(k) * inv_vol, 0.0))
            .collect();
        let mut scratch = self.scratch();
        self.apply(&*self.inverse, &mut buf, &mut scratch);
        RealField::from_vec_unchecked(*g, buf.iter().map(|c| c.re).collect())
    }

    /// Circular convolution `Σ_y f(y) g(x - y) Δx^d` evaluated spectrally.
    pub fn convolve(&self, f: &RealField, g: &RealField) -> Result<RealField> {
        self.check_grid(f.grid())?;
        self.check_grid(g.grid())?;
        let mut a: Vec<Complex64> = f.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut b: Vec<Complex64> = g.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut scratch = self.scratch();
        self.dft(&mut a, &mut scratch);
        self.dft(&mut b, &mut scratch);
        for (x, y) in a.iter_mut().zip(&b) {
            *x *= y;
        }
        self.idft(&mut a, &mut scratch);
        // Index shift: nodes start at -L, so the raw circular convolution is
        // offset by N/2 along each axis.
        let n = self.grid.points;
        let h = self.grid.cell_volume();
        let mut out = vec![0.0; self.grid.len()];
        for (flat, o) in out.iter_mut().enumerate() {
            let [i, j] = self.grid.axes(flat);
            let src = self.grid.flat([(i + n / 2) % n, (j + n / 2) % n]);
            *o = a[src].re * h;
        }
        RealField::new(self.grid, out)
    }

    fn check_grid(&self, other: &GridSpec) -> Result<()> {
        if *other != self.grid {
            return Err(Error::InvalidGrid(format!(
                "transform planned for {} applied to {}",
                self.grid, other
            )));
        }
        Ok(())
    }
}

fn transpose_square(buf: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}

/// Relative Parseval defect `|Σ f² Δx^d − (2π)^{-d} Σ |f̂|² Δξ^d| / Σ f² Δx^d`.
/// Zero for the zero field.
pub fn parseval_check(fourier: &Fourier, f: &RealField) -> Result<f64> {
    let g = f.grid();
    let physical: f64 = f.values().iter().map(|v| v * v).sum::<f64>() * g.cell_volume();
    if physical == 0.0 {
        return Ok(0.0);
    }
    let s = fourier.forward_transform(f)?;
    let spectral = s.coeffs().iter().map(|c| c.norm_sqr()).sum::<f64>() * g.frequency_cell_volume()
        / (2.0 * PI).powi(g.dim() as i32);
    Ok((physical - spectral).abs() / physical)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
        num / den
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(GridSpec::new(3, 1.0, 16).is_err());
        assert!(GridSpec::new(1, 0.0, 16).is_err());
        assert!(GridSpec::new(1, 1.0, 12).is_err());
        assert!(GridSpec::new(1, f64::NAN, 16).is_err());
    }

    #[test]
    fn spacing_times_points_is_domain_length() {
        for &(l, n) in &[(1.0, 8usize), (20.0, 1024), (3.7, 64)] {
            let g = GridSpec::new(1, l, n).unwrap();
            assert_eq!(g.spacing() * n as f64, 2.0 * l);
        }
    }

    #[test]
    fn wave_vectors_are_symmetric_up_to_nyquist() {
        for dim in [1, 2] {
            let g = GridSpec::new(dim, 3.0, 16).unwrap();
            for k in 0..g.len() {
                let w = g.wave(k);
                let nw = g.wave(g.negated(k));
                let [a, b] = g.axes(k);
                let nyq = |i: usize| g.signed_index(i) == -(g.points_per_axis() as i64) / 2;
                if !nyq(a) {
                    assert_eq!(nw[0], -w[0]);
                }
                if dim == 2 && !nyq(b) {
                    assert_eq!(nw[1], -w[1]);
                }
            }
        }
    }

    #[test]
    fn constant_field_has_only_zero_mode() {
        for dim in [1, 2] {
            let g = GridSpec::new(dim, 2.5, 32).unwrap();
            let ft = Fourier::new(&g);
            let s = ft.forward_transform(&RealField::constant(g, 3.0)).unwrap();
            let zero = s.at_signed([0, 0]);
            assert!((zero.re - 3.0 * g.volume()).abs() < 1e-10 * g.volume());
            for (k, c) in s.coeffs().iter().enumerate().skip(1) {
                assert!(c.norm() < 1e-10, "mode {k}: {c}");
            }
        }
    }

    #[test]
    fn cosine_concentrates_on_first_modes() {
        let l = 4.0;
        let g = GridSpec::new(1, l, 64).unwrap();
        let ft = Fourier::new(&g);
        let f = RealField::from_fn(g, |x| (PI * x[0] / l).cos()).unwrap();
        let s = ft.forward_transform(&f).unwrap();
        for (k, c) in s.coeffs().iter().enumerate() {
            let idx = g.signed_index(k);
            if idx.abs() == 1 {
                assert!((c.re - l).abs() < 1e-10 && c.im.abs() < 1e-10);
            } else {
                assert!(c.norm() < 1e-10);
            }
        }
    }

    #[test]
    fn gaussian_bump_matches_continuum_transform() {
        let g = GridSpec::new(1, 20.0, 1024).unwrap();
        let ft = Fourier::new(&g);
        let f = RealField::from_fn(g, |x| (-x[0] * x[0]).exp()).unwrap();
        let s = ft.forward_transform(&f).unwrap();
        for k in [0i64, 1, 5, 17, 40] {
            let xi = k as f64 * g.frequency_spacing();
            let exact = PI.sqrt() * (-xi * xi / 4.0).exp();
            let c = s.at_signed([k, 0]);
            assert!((c.re - exact).abs() <= 1e-8 * exact, "k={k}: {} vs {exact}", c.re);
            assert!(c.im.abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_bump_2d() {
        let g = GridSpec::new(2, 10.0, 128).unwrap();
        let ft = Fourier::new(&g);
        let f = RealField::from_fn(g, |x| (-(x[0] * x[0] + x[1] * x[1])).exp()).unwrap();
        let s = ft.forward_transform(&f).unwrap();
        for k in [[0i64, 0], [1, 2], [-3, 4], [7, -1]] {
            let xi2 = (k[0] * k[0] + k[1] * k[1]) as f64 * g.frequency_spacing().powi(2);
            let exact = PI * (-xi2 / 4.0).exp();
            assert!((s.at_signed(k).re - exact).abs() < 1e-8 * exact);
        }
    }

    #[test]
    fn inverse_edge_cases() {
        let g = GridSpec::new(2, 1.0, 8).unwrap();
        let ft = Fourier::new(&g);
        let zero = ft.inverse_transform(&Spectrum::zeros(g)).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));

        let mut s = Spectrum::zeros(g);
        s.coeffs_mut()[0] = Complex64::new(2.0 * g.volume(), 0.0);
        let c = ft.inverse_transform(&s).unwrap();
        assert!(c.values().iter().all(|&v| (v - 2.0).abs() < 1e-12));

        let mut bad = Spectrum::zeros(g);
        bad.coeffs_mut()[1] = Complex64::new(0.0, 1.0);
        assert!(matches!(ft.inverse_transform(&bad), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn non_finite_input_rejected() {
        let g = GridSpec::new(1, 1.0, 8).unwrap();
        let mut v = vec![0.0; 8];
        v[3] = f64::INFINITY;
        assert!(matches!(RealField::new(g, v), Err(Error::NonFinite { index: 3, .. })));
    }

    #[test]
    fn parseval_gaussian_and_zero() {
        let g = GridSpec::new(1, 20.0, 1024).unwrap();
        let ft = Fourier::new(&g);
        let f = RealField::from_fn(g, |x| (-x[0] * x[0]).exp()).unwrap();
        // direct two-sided summation of both sides
        let phys: f64 = f.values().iter().map(|v| v * v).sum::<f64>() * g.spacing();
        let s = ft.forward_transform(&f).unwrap();
        let spec: f64 = s.coeffs().iter().map(|c| c.norm_sqr()).sum::<f64>() * g.frequency_spacing()
            / (2.0 * PI);
        assert!((phys - spec).abs() / phys < 1e-10);
        assert!(parseval_check(&ft, &f).unwrap() < 1e-10);
        assert_eq!(parseval_check(&ft, &RealField::constant(g, 0.0)).unwrap(), 0.0);
    }

    #[test]
    fn round_trip_random_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for dim in [1, 2] {
            let g = GridSpec::new(dim, 5.0, if dim == 1 { 256 } else { 32 }).unwrap();
            let ft = Fourier::new(&g);
            for _ in 0..500 {
                let v: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let f = RealField::new(g, v).unwrap();
                let back = ft.inverse_transform(&ft.forward_transform(&f).unwrap()).unwrap();
                assert!(rel_err(f.values(), back.values()) < 1e-12);
                assert!(parseval_check(&ft, &f).unwrap() < 1e-10);
            }
        }
    }

    #[test]
    fn spectral_convolution_matches_direct_sum() {
        let g = GridSpec::new(1, 3.0, 32).unwrap();
        let ft = Fourier::new(&g);
        let f = RealField::from_fn(g, |x| (-(x[0] - 0.5).powi(2)).exp()).unwrap();
        let h = RealField::from_fn(g, |x| (-2.0 * x[0].powi(2)).exp() * (1.0 + x[0])).unwrap();
        let c = ft.convolve(&f, &h).unwrap();
        let n = 32usize;
        for i in 0..n {
            // x_i - y_j = (i - j)Δx - L + L ... node of x_i - y_j + (-L) shift
            let direct: f64 = (0..n)
                .map(|j| {
                    let k = (i + n / 2 + n - j) % n;
                    f.values()[j] * h.values()[k]
                })
                .sum::<f64>()
                * g.spacing();
            assert!((direct - c.values()[i]).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn transforms_are_linear(seed in 0u64..10_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = GridSpec::new(1, 2.0, 64).unwrap();
            let ft = Fourier::new(&g);
            let f: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let h: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let comb: Vec<f64> = f.iter().zip(&h).map(|(x, y)| a * x + b * y).collect();
            let sf = ft.forward_transform(&RealField::new(g, f).unwrap()).unwrap();
            let sh = ft.forward_transform(&RealField::new(g, h).unwrap()).unwrap();
            let sc = ft.forward_transform(&RealField::new(g, comb).unwrap()).unwrap();
            let scale = sc.coeffs().iter().map(|c| c.norm()).fold(1e-300, f64::max);
            for k in 0..64 {
                let lin = sf.coeffs()[k] * a + sh.coeffs()[k] * b;
                prop_assert!((lin - sc.coeffs()[k]).norm() <= 1e-12 * scale.max(1.0));
            }
        }
    }
}
