//! Uniform one-dimensional grids, sampled fields, quadrature and
//! differentiation.
//!
//! Two flavours are supported. A periodic grid holds `N` nodes
//! `x_j = -L + j h` on `[-L, L)` and differentiates spectrally; a truncated
//! (Dirichlet) grid holds the `N + 1` nodes of `[-L, L]` including both ends
//! and differentiates with fourth-order finite differences.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Periodic,
    DirichletTruncated,
}

/// Uniform grid on `[-L, L]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    half_width: f64,
    points: usize,
    boundary: Boundary,
}

impl Grid {
    /// `points` is the number of intervals `N`; it must be even and at least 16.
    pub fn new(half_width: f64, points: usize, boundary: Boundary) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "half width must be positive, got {half_width}"
            )));
        }
        if points < 16 || !points.is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!(
                "point count must be even and >= 16, got {points}"
            )));
        }
        Ok(Self {
            half_width,
            points,
            boundary,
        })
    }

    pub fn periodic(half_width: f64, points: usize) -> Result<Self> {
        Self::new(half_width, points, Boundary::Periodic)
    }

    pub fn dirichlet(half_width: f64, points: usize) -> Result<Self> {
        Self::new(half_width, points, Boundary::DirichletTruncated)
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn is_periodic(&self) -> bool {
        self.boundary == Boundary::Periodic
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.points as f64
    }

    /// Number of stored nodes: `N` for periodic grids, `N + 1` otherwise.
    pub fn len(&self) -> usize {
        match self.boundary {
            Boundary::Periodic => self.points,
            Boundary::DirichletTruncated => self.points + 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn x(&self, j: usize) -> f64 {
        // centred form keeps x(N - j) == -x(j) bit for bit
        (j as f64 - (self.points / 2) as f64) * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.x(j)).collect()
    }

    /// Wraps a coordinate into the fundamental cell `[-L, L)`.
    pub fn wrap(&self, x: f64) -> f64 {
        let period = 2.0 * self.half_width;
        (x + self.half_width).rem_euclid(period) - self.half_width
    }

    /// Quadrature weight of node `j` (composite trapezoid).
    #[inline]
    pub fn weight(&self, j: usize) -> f64 {
        let h = self.spacing();
        match self.boundary {
            Boundary::Periodic => h,
            Boundary::DirichletTruncated => {
                if j == 0 || j == self.points {
                    0.5 * h
                } else {
                    h
                }
            }
        }
    }

    /// Rejects the grid when `exp(-rate L)` is above `tol`, i.e. when a
    /// profile decaying at `rate` has not died out at the domain edge.
    pub fn check_decay(&self, rate: f64, tol: f64) -> Result<()> {
        let tail = (-rate * self.half_width).exp();
        if tail > tol {
            return Err(Error::DomainTooShort { tail, tol });
        }
        Ok(())
    }

    /// Same extent and flavour with twice the resolution.
    pub fn refined(&self) -> Self {
        Self {
            points: 2 * self.points,
            ..*self
        }
    }
}

/// Real function sampled on every node of a [`Grid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite value at node {j}"
            )));
        }
        Ok(Self { grid, values })
    }

    /// Internal constructor for values produced by trusted numerics.
    pub(crate) fn from_vec(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..grid.len()).map(|j| f(grid.x(j))).collect();
        Self { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pointwise `f(x_j, v_j)`.
    pub fn map_with_x(&self, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(j, &v)| f(self.grid.x(j), v))
            .collect();
        Self {
            grid: self.grid,
            values,
        }
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self {
            grid: self.grid,
            values,
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    /// `self + s * other`
    pub fn axpy(&self, s: f64, other: &Field) -> Self {
        self.zip_map(other, |a, b| a + s * b)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn dot(&self, other: &Field) -> f64 {
        inner(self, other)
    }

    pub fn norm_l2(&self) -> f64 {
        inner(self, self).sqrt()
    }

    /// Maximum of `|self - other|` over the nodes.
    pub fn sup_distance(&self, other: &Field) -> f64 {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Reflection `x -> -x`. Exact on both grid flavours for symmetric node sets;
    /// on a periodic grid the node `-L` maps to itself (identified with `L`).
    pub fn reflected(&self) -> Self {
        let n = self.values.len();
        let values = match self.grid.boundary {
            Boundary::DirichletTruncated => self.values.iter().rev().copied().collect(),
            Boundary::Periodic => (0..n).map(|j| self.values[(n - j) % n]).collect(),
        };
        Self {
            grid: self.grid,
            values,
        }
    }
}

impl std::ops::Add for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl std::ops::Sub for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl std::ops::Mul<f64> for &Field {
    type Output = Field;
    fn mul(self, rhs: f64) -> Field {
        self.scaled(rhs)
    }
}

/// Composite trapezoid rule over the grid. On a periodic grid this is the
/// rectangle rule, spectrally accurate for smooth periodic or rapidly
/// decaying integrands.
pub fn quadrature(f: &Field) -> f64 {
    let g = &f.grid;
    match g.boundary {
        Boundary::Periodic => g.spacing() * f.values.iter().sum::<f64>(),
        Boundary::DirichletTruncated => {
            let n = f.values.len();
            let interior: f64 = f.values[1..n - 1].iter().sum();
            g.spacing() * (interior + 0.5 * (f.values[0] + f.values[n - 1]))
        }
    }
}

/// `<f, g> = ∫ f g dx` by [`quadrature`].
pub fn inner(f: &Field, g: &Field) -> f64 {
    assert_eq!(f.grid, g.grid, "grid mismatch");
    let grid = &f.grid;
    f.values
        .iter()
        .zip(&g.values)
        .enumerate()
        .map(|(j, (a, b))| grid.weight(j) * a * b)
        .sum()
}

/// Derivative of order 1, 2 or 3. Spectral on periodic grids, fourth-order
/// finite differences (one-sided near the ends) on truncated grids.
pub fn derivative(f: &Field, order: u32) -> Result<Field> {
    if !(1..=3).contains(&order) {
        return Err(Error::InvalidParameter(format!(
            "derivative order must be 1, 2 or 3, got {order}"
        )));
    }
    match f.grid.boundary {
        Boundary::Periodic => Ok(Spectral::new(f.grid)?.derivative(f, order)),
        Boundary::DirichletTruncated => Ok(fd_derivative(f, order as usize)),
    }
}

/// Solves `g - g'' = f` on a periodic grid.
pub fn helmholtz_inverse(f: &Field) -> Result<Field> {
    Ok(Spectral::new(f.grid)?.helmholtz_inverse(f))
}

/// Precomputed FFT plans and wavenumbers for a periodic grid.
#[derive(Clone)]
pub struct Spectral {
    grid: Grid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    wavenumbers: Vec<f64>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral")
            .field("grid", &self.grid)
            .finish()
    }
}

impl Spectral {
    pub fn new(grid: Grid) -> Result<Self> {
        if !grid.is_periodic() {
            return Err(Error::WrongBoundary {
                required: "periodic",
            });
        }
        let n = grid.points;
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let dk = PI / grid.half_width;
        let wavenumbers = (0..n)
            .map(|m| {
                let m = if m <= n / 2 {
                    m as f64
                } else {
                    m as f64 - n as f64
                };
                m * dk
            })
            .collect();
        Ok(Self {
            grid,
            forward,
            inverse,
            wavenumbers,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Continuous wavenumbers `2πm / 2L` in FFT order; index `N/2` is the
    /// Nyquist mode (stored with positive sign).
    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    pub fn nyquist_index(&self) -> usize {
        self.grid.points / 2
    }

    pub fn to_modes(&self, values: &[f64]) -> Vec<Complex<f64>> {
        let mut buf: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        buf
    }

    /// Unnormalized forward transform of complex samples.
    pub fn forward_in_place(&self, buf: &mut [Complex<f64>]) {
        self.forward.process(buf);
    }

    pub fn from_modes(&self, mut modes: Vec<Complex<f64>>) -> Vec<f64> {
        self.inverse.process(&mut modes);
        let scale = 1.0 / self.grid.points as f64;
        modes.into_iter().map(|z| z.re * scale).collect()
    }

    /// Multiplies every Fourier mode by `symbol(k, is_nyquist)` and transforms back.
    pub fn apply_symbol(
        &self,
        values: &[f64],
        symbol: impl Fn(f64, bool) -> Complex<f64>,
    ) -> Vec<f64> {
        let mut modes = self.to_modes(values);
        let nyq = self.nyquist_index();
        for (m, z) in modes.iter_mut().enumerate() {
            *z *= symbol(self.wavenumbers[m], m == nyq);
        }
        self.from_modes(modes)
    }

    pub fn derivative_values(&self, values: &[f64], order: u32) -> Vec<f64> {
        self.apply_symbol(values, |k, nyq| {
            if nyq && order % 2 == 1 {
                Complex::new(0.0, 0.0)
            } else {
                Complex::new(0.0, k).powu(order)
            }
        })
    }

    pub fn derivative(&self, f: &Field, order: u32) -> Field {
        assert_eq!(f.grid, self.grid, "grid mismatch");
        Field::from_vec(self.grid, self.derivative_values(&f.values, order))
    }

    pub fn helmholtz_inverse_values(&self, values: &[f64]) -> Vec<f64> {
        self.apply_symbol(values, |k, _| Complex::new(1.0 / (1.0 + k * k), 0.0))
    }

    pub fn helmholtz_inverse(&self, f: &Field) -> Field {
        assert_eq!(f.grid, self.grid, "grid mismatch");
        Field::from_vec(self.grid, self.helmholtz_inverse_values(&f.values))
    }

    /// Band-limited translate: returns samples of `f(x + shift)`.
    pub fn translate(&self, f: &Field, shift: f64) -> Field {
        assert_eq!(f.grid, self.grid, "grid mismatch");
        let values = self.apply_symbol(&f.values, |k, nyq| {
            if nyq {
                Complex::new((k * shift).cos(), 0.0)
            } else {
                Complex::new(0.0, k * shift).exp()
            }
        });
        Field::from_vec(self.grid, values)
    }
}

/// Finite-difference weights for derivatives up to `order` at `z` on the
/// stencil `xs` (Fornberg's recursion). Returns the weights of the highest order.
pub(crate) fn fornberg_weights(z: f64, xs: &[f64], order: usize) -> Vec<f64> {
    let n = xs.len();
    let mut c = vec![vec![0.0; order + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - z;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[order]).collect()
}

fn fd_derivative(f: &Field, order: usize) -> Field {
    let n = f.values.len();
    let h = f.grid.spacing();
    // central half-width giving fourth order: 2 for orders 1-2, 3 for order 3
    let r = if order <= 2 { 2 } else { 3 };
    let one_sided = (order + 4).min(n);
    let central: Vec<f64> = {
        let xs: Vec<f64> = (-(r as i64)..=r as i64).map(|o| o as f64).collect();
        fornberg_weights(0.0, &xs, order)
    };
    let scale = h.powi(order as i32);
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        if i >= r && i + r < n {
            let s: f64 = central
                .iter()
                .enumerate()
                .map(|(k, w)| w * f.values[i + k - r])
                .sum();
            *o = s / scale;
        } else {
            let start = if i < r { 0 } else { n - one_sided };
            let xs: Vec<f64> = (start..start + one_sided)
                .map(|k| k as f64 - i as f64)
                .collect();
            let w = fornberg_weights(0.0, &xs, order);
            let s: f64 = w
                .iter()
                .enumerate()
                .map(|(k, w)| w * f.values[start + k])
                .sum();
            *o = s / scale;
        }
    }
    Field::from_vec(f.grid, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sech(x: f64) -> f64 {
        1.0 / x.cosh()
    }

    #[test]
    fn make_grid_examples() {
        let g = Grid::periodic(50.0 * PI, 4096).unwrap();
        assert_eq!(g.spacing(), 100.0 * PI / 4096.0);
        assert_eq!(g.len(), 4096);

        assert!(matches!(
            Grid::periodic(50.0 * PI, 15),
            Err(Error::InvalidGrid(_))
        ));
        assert!(Grid::periodic(-1.0, 64).is_err());
        assert!(Grid::periodic(0.0, 64).is_err());
        assert!(Grid::periodic(1.0, 14).is_err());

        let d = Grid::dirichlet(10.0, 16).unwrap();
        let xs = d.nodes();
        assert_eq!(xs.len(), 17);
        assert_eq!(xs[0], -10.0);
        assert!((xs[16] - 10.0).abs() < 1e-14);
        assert!((xs[8]).abs() < 1e-15);
    }

    #[test]
    fn decay_check() {
        let g = Grid::periodic(50.0 * PI, 4096).unwrap();
        assert!(g.check_decay(0.3, 1e-16).is_ok());
        assert!(matches!(
            g.check_decay(0.01, 1e-12),
            Err(Error::DomainTooShort { .. })
        ));
    }

    #[test]
    fn quadrature_constant() {
        for g in [
            Grid::periodic(10.0, 64).unwrap(),
            Grid::dirichlet(10.0, 64).unwrap(),
        ] {
            let one = Field::constant(g, 1.0);
            assert!((quadrature(&one) - 20.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quadrature_sech_squared() {
        let l = 50.0 * PI;
        for g in [
            Grid::periodic(l, 8192).unwrap(),
            Grid::dirichlet(l, 8192).unwrap(),
        ] {
            let f = Field::from_fn(g, |x| sech(x).powi(2));
            // antiderivative tanh: 2 tanh(L) == 2 to double precision
            assert!((quadrature(&f) - 2.0 * l.tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn spectral_derivative_of_fourier_mode() {
        let l = 7.0;
        let g = Grid::periodic(l, 256).unwrap();
        let f = Field::from_fn(g, |x| (PI * x / l).sin());
        let d = derivative(&f, 1).unwrap();
        let exact = Field::from_fn(g, |x| PI / l * (PI * x / l).cos());
        assert!(d.sup_distance(&exact) < 1e-10);

        let d3 = derivative(&f, 3).unwrap();
        let exact3 = Field::from_fn(g, |x| -(PI / l).powi(3) * (PI * x / l).cos());
        assert!(d3.sup_distance(&exact3) < 1e-10);
    }

    #[test]
    fn derivative_of_constant_vanishes() {
        for g in [
            Grid::periodic(5.0, 64).unwrap(),
            Grid::dirichlet(5.0, 64).unwrap(),
        ] {
            let f = Field::constant(g, 3.5);
            for order in 1..=3 {
                assert!(derivative(&f, order).unwrap().sup_norm() < 1e-9);
            }
        }
    }

    #[test]
    fn derivative_rejects_bad_order() {
        let g = Grid::periodic(5.0, 64).unwrap();
        assert!(derivative(&Field::zeros(g), 0).is_err());
        assert!(derivative(&Field::zeros(g), 4).is_err());
    }

    #[test]
    fn finite_differences_are_fourth_order() {
        // f = sin(a x + b): error ratio under halving h should approach 16
        let (a, b) = (0.9, 0.3);
        let exact = |order: u32, x: f64| match order {
            1 => a * (a * x + b).cos(),
            2 => -a * a * (a * x + b).sin(),
            _ => -a * a * a * (a * x + b).cos(),
        };
        for order in 1..=3 {
            let errs: Vec<f64> = [100usize, 200]
                .iter()
                .map(|&n| {
                    let g = Grid::dirichlet(6.0, n).unwrap();
                    let u = Field::from_fn(g, |x| (a * x + b).sin());
                    let d = derivative(&u, order).unwrap();
                    d.sup_distance(&Field::from_fn(g, |x| exact(order, x)))
                })
                .collect();
            let ratio = errs[0] / errs[1];
            assert!(ratio > 12.0, "order {order} ratio {ratio}");
        }
    }

    #[test]
    fn fornberg_reproduces_classical_stencils() {
        let w = fornberg_weights(0.0, &[-1.0, 0.0, 1.0], 2);
        assert!((w[0] - 1.0).abs() < 1e-14);
        assert!((w[1] + 2.0).abs() < 1e-14);
        assert!((w[2] - 1.0).abs() < 1e-14);
        let w = fornberg_weights(0.0, &[-2.0, -1.0, 0.0, 1.0, 2.0], 1);
        let expect = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn helmholtz_examples() {
        let l = 10.0;
        let g = Grid::periodic(l, 128).unwrap();
        let three = Field::constant(g, 3.0);
        assert!(helmholtz_inverse(&three).unwrap().sup_distance(&three) < 1e-13);

        let k = 5.0 * PI / l;
        let f = Field::from_fn(g, |x| (k * x).cos());
        let exact = Field::from_fn(g, |x| (k * x).cos() / (1.0 + k * k));
        assert!(helmholtz_inverse(&f).unwrap().sup_distance(&exact) < 1e-14);

        assert!(helmholtz_inverse(&Field::zeros(Grid::dirichlet(l, 128).unwrap())).is_err());
    }

    #[test]
    fn helmholtz_defining_relation() {
        let g = Grid::periodic(20.0, 512).unwrap();
        let f = Field::from_fn(g, |x| (-(x - 1.0).powi(2) / 3.0).exp() * (2.0 * x).sin());
        let gi = helmholtz_inverse(&f).unwrap();
        let back = &gi - &derivative(&gi, 2).unwrap();
        assert!(back.sup_distance(&f) < 1e-10);
    }

    #[test]
    fn translate_is_invertible() {
        let g = Grid::periodic(40.0, 1024).unwrap();
        let sp = Spectral::new(g).unwrap();
        let f = Field::from_fn(g, |x| sech(x).powf(0.8));
        let shifted = sp.translate(&f, 0.37);
        let exact = Field::from_fn(g, |x| sech(x + 0.37).powf(0.8));
        assert!(shifted.sup_distance(&exact) < 1e-10);
        let back = sp.translate(&shifted, -0.37);
        assert!(back.sup_distance(&f) < 1e-13);
    }

    #[test]
    fn reflection_of_even_function_is_exact() {
        for g in [
            Grid::periodic(9.0, 64).unwrap(),
            Grid::dirichlet(9.0, 64).unwrap(),
        ] {
            let f = Field::from_fn(g, |x| (x * x).cos());
            assert_eq!(f.reflected().sup_distance(&f), 0.0);
        }
    }
}
