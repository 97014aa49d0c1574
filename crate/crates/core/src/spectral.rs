//! Eigen-analysis of the Weinstein operator
//! `L_omega = -∂² + (1 - omega²) - (p+1) phi_c^p / c` on a truncated grid,
//! and constrained minima of its quadratic form.
//!
//! `S_c''(phi_c) = -c L_omega`, so statements about the Hessian translate by
//! that factor.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functionals::hessian_apply;
use crate::grid::{inner, Boundary, Field, Grid};
use crate::ground_state::GroundState;

/// Second-order finite-difference `L_omega` on the interior nodes of a
/// Dirichlet grid: a symmetric tridiagonal matrix with constant coupling.
#[derive(Debug, Clone)]
pub struct WeinsteinOperator {
    gs: GroundState,
    grid: Grid,
    diag: Vec<f64>,
    coupling: f64,
}

pub fn discretize_weinstein(gs: &GroundState, grid: &Grid) -> Result<WeinsteinOperator> {
    if grid.boundary() != Boundary::DirichletTruncated {
        return Err(Error::WrongBoundary {
            required: "dirichlet_truncated",
        });
    }
    let (p, c) = (gs.p(), gs.c());
    let h = grid.spacing();
    let shift = (c - 1.0) / c;
    let k = gs.decay_rate();
    // (p+1) psi_omega^p = (p+1) phi^p / c = (p+1)(p+2)(c-1)/(2c) sech²(kx)
    let w = (p + 1.0) * (p + 2.0) * (c - 1.0) / (2.0 * c);
    let diag = (1..grid.points())
        .map(|j| {
            let s = 1.0 / (k * grid.x(j)).cosh();
            2.0 / (h * h) + shift - w * s * s
        })
        .collect();
    Ok(WeinsteinOperator {
        gs: *gs,
        grid: *grid,
        diag,
        coupling: -1.0 / (h * h),
    })
}

impl WeinsteinOperator {
    /// Number of unknowns (interior nodes).
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn ground_state(&self) -> &GroundState {
        &self.gs
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    /// `1 - omega² = (c-1)/c`, bottom of the continuous spectrum.
    pub fn essential_edge(&self) -> f64 {
        (self.gs.c() - 1.0) / self.gs.c()
    }

    /// Gershgorin enclosure of the spectrum.
    pub fn gershgorin(&self) -> (f64, f64) {
        let r = 2.0 * self.coupling.abs();
        let lo = self.diag.iter().fold(f64::INFINITY, |m, &d| m.min(d - r));
        let hi = self
            .diag
            .iter()
            .fold(f64::NEG_INFINITY, |m, &d| m.max(d + r));
        (lo, hi)
    }

    /// Largest Gershgorin bound in magnitude, about `4/h²`.
    pub fn spectral_scale(&self) -> f64 {
        let (lo, hi) = self.gershgorin();
        lo.abs().max(hi.abs())
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(v.len(), n);
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * v[i];
                if i > 0 {
                    s += self.coupling * v[i - 1];
                }
                if i + 1 < n {
                    s += self.coupling * v[i + 1];
                }
                s
            })
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                self.diag[i]
            } else if i.abs_diff(j) == 1 {
                self.coupling
            } else {
                0.0
            }
        })
    }

    /// Interior samples of a field on the operator's grid.
    pub fn restrict(&self, f: &Field) -> Result<Vec<f64>> {
        if *f.grid() != self.grid {
            return Err(Error::GridMismatch);
        }
        Ok(f.values()[1..self.grid.points()].to_vec())
    }

    /// Field with the given interior values and zero boundary values.
    pub fn extend(&self, v: &[f64]) -> Field {
        let mut values = Vec::with_capacity(self.grid.len());
        values.push(0.0);
        values.extend_from_slice(v);
        values.push(0.0);
        Field::new(self.grid, values).expect("finite interior values")
    }

    /// Number of eigenvalues strictly below `mu` (Sturm sequence).
    pub fn count_below(&self, mu: f64) -> usize {
        let pivmin = f64::MIN_POSITIVE.sqrt() * self.spectral_scale().max(1.0);
        let b2 = self.coupling * self.coupling;
        let mut count = 0;
        let mut d = 1.0;
        for (i, &a) in self.diag.iter().enumerate() {
            d = if i == 0 { a - mu } else { (a - mu) - b2 / d };
            if d.abs() < pivmin {
                d = -pivmin;
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// `k`-th smallest eigenvalue (0-based) by bisection on the Sturm count.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        let (mut lo, mut hi) = self.gershgorin();
        let tol = 4.0 * f64::EPSILON * self.spectral_scale();
        for _ in 0..200 {
            if hi - lo <= tol {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.count_below(mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Unit eigenvector for an eigenvalue estimate, by inverse iteration.
    pub fn eigenvector(&self, lambda: f64) -> Result<Vec<f64>> {
        let n = self.dim();
        let lu = TridiagLu::new(&self.diag, self.coupling, lambda);
        // deterministic start with every component nonzero
        let mut v: Vec<f64> = (0..n)
            .map(|i| 1.0 + 0.5 * ((i as f64) * 0.7).sin())
            .collect();
        normalize(&mut v);
        let scale = self.spectral_scale();
        let mut residual = f64::INFINITY;
        for _ in 0..8 {
            lu.solve(&mut v);
            if !v.iter().all(|x| x.is_finite()) {
                break;
            }
            normalize(&mut v);
            let lv = self.apply(&v);
            residual = lv
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - lambda * b).powi(2))
                .sum::<f64>()
                .sqrt();
            if residual < 1e-10 * scale {
                return Ok(v);
            }
        }
        Err(Error::NoConvergence {
            what: "inverse iteration",
            iterations: 8,
            residual,
        })
    }

    /// `<L v, v> / <v, v>` in the discrete inner product.
    pub fn rayleigh_quotient(&self, v: &[f64]) -> f64 {
        let lv = self.apply(v);
        dot(&lv, v) / dot(v, v)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

/// LU factorization with partial pivoting of `T - mu I` for symmetric
/// tridiagonal `T` with constant off-diagonal.
struct TridiagLu {
    dl: Vec<f64>,
    d: Vec<f64>,
    du: Vec<f64>,
    du2: Vec<f64>,
    swapped: Vec<bool>,
}

impl TridiagLu {
    fn new(diag: &[f64], coupling: f64, mu: f64) -> Self {
        let n = diag.len();
        let mut d: Vec<f64> = diag.iter().map(|a| a - mu).collect();
        let mut dl = vec![coupling; n.saturating_sub(1)];
        let mut du = vec![coupling; n.saturating_sub(1)];
        let mut du2 = vec![0.0; n.saturating_sub(2)];
        let mut swapped = vec![false; n.saturating_sub(1)];
        let tiny = f64::EPSILON * diag.iter().fold(coupling.abs(), |m, a| m.max(a.abs()));
        for i in 0..n.saturating_sub(1) {
            if d[i].abs() >= dl[i].abs() {
                if d[i] == 0.0 {
                    d[i] = tiny;
                }
                let fact = dl[i] / d[i];
                dl[i] = fact;
                d[i + 1] -= fact * du[i];
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let temp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = temp - fact * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] *= -fact;
                }
                swapped[i] = true;
            }
        }
        if n > 0 && d[n - 1] == 0.0 {
            d[n - 1] = tiny;
        }
        Self {
            dl,
            d,
            du,
            du2,
            swapped,
        }
    }

    fn solve(&self, b: &mut [f64]) {
        let n = self.d.len();
        for i in 0..n.saturating_sub(1) {
            if self.swapped[i] {
                let temp = b[i];
                b[i] = b[i + 1];
                b[i + 1] = temp - self.dl[i] * b[i];
            } else {
                b[i + 1] -= self.dl[i] * b[i];
            }
        }
        b[n - 1] /= self.d[n - 1];
        if n > 1 {
            b[n - 2] = (b[n - 2] - self.du[n - 2] * b[n - 1]) / self.d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - self.du[i] * b[i + 1] - self.du2[i] * b[i + 2]) / self.d[i];
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    pub p: f64,
    pub c: f64,
    pub half_width: f64,
    pub points: usize,
    /// lowest eigenvalues, ascending
    pub eigenvalues: Vec<f64>,
    /// every eigenvalue below zero, the discrete translation mode included
    pub raw_negative_count: usize,
    /// eigenvalues below zero other than the translation mode
    pub negative_count: usize,
    pub kernel_index: usize,
    pub kernel_eigenvalue: f64,
    /// `|<v, phi'>| / (|v| |phi'|)` for the kernel candidate `v`
    pub kernel_overlap: f64,
    pub kernel_candidate: Field,
    /// eigenvector of the lowest eigenvalue
    pub ground_mode: Field,
    pub spectral_scale: f64,
    pub essential_edge: f64,
}

/// Lowest `m >= 3` eigenpairs. The kernel candidate is the computed
/// eigenvector with the largest normalized overlap with `phi_c'`; it is
/// excluded from `negative_count` even if discretization pushes its
/// eigenvalue slightly below zero.
pub fn eigenpairs(op: &WeinsteinOperator, m: usize) -> Result<SpectrumReport> {
    if m < 3 {
        return Err(Error::InvalidParameter(format!(
            "need m >= 3 eigenpairs, got {m}"
        )));
    }
    let m = m.min(op.dim());
    let eigenvalues: Vec<f64> = (0..m).map(|k| op.eigenvalue(k)).collect();
    let vectors = eigenvalues
        .iter()
        .map(|&l| op.eigenvector(l))
        .collect::<Result<Vec<_>>>()?;
    let dphi = op.restrict(&op.gs.profile_dx(&op.grid))?;
    let dphi_norm = dot(&dphi, &dphi).sqrt();
    let overlaps: Vec<f64> = vectors
        .iter()
        .map(|v| dot(v, &dphi).abs() / dphi_norm)
        .collect();
    let kernel_index = overlaps
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("m >= 3");
    let raw_negative_count = op.count_below(0.0);
    let kernel_negative = eigenvalues[kernel_index] < 0.0;
    Ok(SpectrumReport {
        p: op.gs.p(),
        c: op.gs.c(),
        half_width: op.grid.half_width(),
        points: op.grid.points(),
        raw_negative_count,
        negative_count: raw_negative_count - usize::from(kernel_negative),
        kernel_index,
        kernel_eigenvalue: eigenvalues[kernel_index],
        kernel_overlap: overlaps[kernel_index],
        kernel_candidate: op.extend(&vectors[kernel_index]),
        ground_mode: op.extend(&vectors[0]),
        eigenvalues,
        spectral_scale: op.spectral_scale(),
        essential_edge: op.essential_edge(),
    })
}

/// [`discretize_weinstein`] followed by [`eigenpairs`].
pub fn spectrum(gs: &GroundState, grid: &Grid, m: usize) -> Result<SpectrumReport> {
    eigenpairs(&discretize_weinstein(gs, grid)?, m)
}

#[derive(Debug, Clone, Serialize)]
pub struct CoercivityReport {
    pub p: f64,
    pub c: f64,
    /// minimum of `<L v, v>/<v, v>` over `v` orthogonal to every constraint
    pub constrained_min: f64,
    pub constraints_used: Vec<String>,
    /// lowest eigenvalue of `L_omega` without constraints
    pub raw_min: f64,
    pub essential_edge: f64,
}

impl CoercivityReport {
    /// Positivity margin used for the coercivity claim: `1e-3 (c-1)/c`.
    pub fn threshold(&self) -> f64 {
        1e-3 * self.essential_edge
    }

    pub fn is_coercive(&self) -> bool {
        self.constrained_min > self.threshold()
    }
}

/// Orthonormal basis (modified Gram-Schmidt, two passes) of the constraint
/// span; rejects sets whose relative pivot drops below `1e-10`.
fn orthonormalize(mut vs: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(vs.len());
    for v in vs.iter_mut() {
        let original = dot(v, v).sqrt();
        if original == 0.0 {
            return Err(Error::RankDeficient { pivot: 0.0 });
        }
        for _ in 0..2 {
            for q in &basis {
                let a = dot(v, q);
                v.iter_mut().zip(q).for_each(|(x, y)| *x -= a * y);
            }
        }
        let norm = dot(v, v).sqrt();
        if norm < 1e-10 * original {
            return Err(Error::RankDeficient {
                pivot: norm / original,
            });
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v.clone());
    }
    Ok(basis)
}

/// Number of eigenvalues below `mu` of `L` compressed to the orthogonal
/// complement of `basis`, from the inertia of the bordered matrix
/// `[[L - mu, C], [C^T, 0]]`: `n_-(L - mu) + n_+(C^T (L - mu)^{-1} C) - m`.
fn compressed_count_below(op: &WeinsteinOperator, basis: &[Vec<f64>], mu: f64) -> usize {
    let m = basis.len();
    let lu = TridiagLu::new(&op.diag, op.coupling, mu);
    let solved: Vec<Vec<f64>> = basis
        .iter()
        .map(|q| {
            let mut x = q.clone();
            lu.solve(&mut x);
            x
        })
        .collect();
    let small = DMatrix::from_fn(m, m, |i, j| {
        0.5 * (dot(&basis[i], &solved[j]) + dot(&basis[j], &solved[i]))
    });
    let positive = SymmetricEigen::new(small)
        .eigenvalues
        .iter()
        .filter(|&&e| e > 0.0)
        .count();
    (op.count_below(mu) + positive).saturating_sub(m)
}

/// Smallest value of the `L_omega` Rayleigh quotient on the discrete
/// orthogonal complement of the named constraints.
pub fn constrained_form_minimum(
    gs: &GroundState,
    grid: &Grid,
    constraints: &[(&str, Field)],
) -> Result<CoercivityReport> {
    let op = discretize_weinstein(gs, grid)?;
    constrained_minimum_of(&op, constraints)
}

pub fn constrained_minimum_of(
    op: &WeinsteinOperator,
    constraints: &[(&str, Field)],
) -> Result<CoercivityReport> {
    let raw_min = op.eigenvalue(0);
    let vs = constraints
        .iter()
        .map(|(_, f)| op.restrict(f))
        .collect::<Result<Vec<_>>>()?;
    let basis = orthonormalize(vs)?;
    let m = basis.len();
    let constrained_min = if m == 0 {
        raw_min
    } else {
        // interlacing: the minimum lies in [lambda_0, lambda_m]
        let scale = op.spectral_scale();
        let mut lo = raw_min - 1e-12 * scale;
        let mut hi = op.eigenvalue(m.min(op.dim() - 1)) + 1e-12 * scale;
        let tol = 1e-13 * scale;
        for _ in 0..200 {
            if hi - lo <= tol {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if compressed_count_below(op, &basis, mid) >= 1 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    };
    Ok(CoercivityReport {
        p: op.gs.p(),
        c: op.gs.c(),
        constrained_min,
        constraints_used: constraints.iter().map(|(n, _)| n.to_string()).collect(),
        raw_min,
        essential_edge: op.essential_edge(),
    })
}

/// Closed form and quadrature of `<S_c'' d_omega psi_omega, d_omega psi_omega>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NegativeDirection {
    pub closed_form: f64,
    pub quadrature: f64,
    pub rel_error: f64,
}

/// The quadrature side differentiates `psi_omega = c^{-1/p} phi_c`,
/// `c = omega^{-2}`, by central differences with step `1e-5` in `omega`, and
/// applies the Hessian on `grid`.
pub fn negative_direction_check(gs: &GroundState, grid: &Grid) -> Result<NegativeDirection> {
    let p = gs.p();
    if p <= 4.0 {
        return Err(Error::InvalidParameter(format!("requires p > 4, got {p}")));
    }
    let omega = gs.omega();
    let w2 = omega * omega;
    let closed_form = 2.0 * (2.0 / p - 0.5) * (1.0 - w2).powf(2.0 / p - 1.5) * gs.psi0_norm_sq();
    let dw = 1e-5;
    let at = |w: f64| gs.with_speed(w.powi(-2));
    let (plus, minus) = (at(omega + dw)?, at(omega - dw)?);
    let dpsi = Field::from_fn(*grid, |x| {
        (plus.scaled_profile(x) - minus.scaled_profile(x)) / (2.0 * dw)
    });
    let quadrature = inner(&hessian_apply(gs, &dpsi)?, &dpsi);
    Ok(NegativeDirection {
        closed_form,
        quadrature,
        rel_error: (closed_form - quadrature).abs() / closed_form.abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::kappa_closed_form;
    use std::f64::consts::PI;

    fn dense_lowest(a: &DMatrix<f64>) -> Vec<f64> {
        let mut e: Vec<f64> = SymmetricEigen::new(a.clone())
            .eigenvalues
            .iter()
            .cloned()
            .collect();
        e.sort_by(|a, b| a.total_cmp(b));
        e
    }

    /// Dense oracle: compress onto an orthonormal basis of the complement.
    fn dense_constrained_min(op: &WeinsteinOperator, cons: &[Vec<f64>]) -> f64 {
        let n = op.dim();
        let m = cons.len();
        let c = DMatrix::from_fn(n, m, |i, j| cons[j][i]);
        let q = c.qr().q();
        // complete the basis: project the identity and orthonormalize
        let mut cols: Vec<nalgebra::DVector<f64>> =
            (0..m).map(|j| q.column(j).into_owned()).collect();
        let mut z = Vec::new();
        for k in 0..n {
            let mut v = nalgebra::DVector::from_fn(n, |i, _| if i == k { 1.0 } else { 0.0 });
            for _ in 0..2 {
                for b in cols.iter() {
                    let a = b.dot(&v);
                    v -= b * a;
                }
            }
            let nv = v.norm();
            if nv > 1e-8 {
                v /= nv;
                cols.push(v.clone());
                z.push(v);
            }
            if z.len() == n - m {
                break;
            }
        }
        let zm = DMatrix::from_columns(&z);
        let t = op.to_dense();
        dense_lowest(&(zm.transpose() * t * &zm))[0]
    }

    #[test]
    fn requires_dirichlet_grid() {
        let gs = GroundState::critical(5.0).unwrap();
        assert!(discretize_weinstein(&gs, &Grid::periodic(20.0, 64).unwrap()).is_err());
    }

    #[test]
    fn free_operator_lowest_eigenvalue() {
        // huge c - 1 scale kills nothing; build the potential-free case by hand
        let grid = Grid::dirichlet(10.0, 400).unwrap();
        let gs = GroundState::critical(5.0).unwrap();
        let mut op = discretize_weinstein(&gs, &grid).unwrap();
        let shift = op.essential_edge();
        op.diag
            .iter_mut()
            .for_each(|d| *d = 2.0 / grid.spacing().powi(2) + shift);
        let l = grid.half_width();
        let exact = (PI / (2.0 * l)).powi(2) + shift;
        assert!((op.eigenvalue(0) - exact).abs() < 1e-4 * exact);
    }

    #[test]
    fn matches_dense_eigensolver() {
        let grid = Grid::dirichlet(20.0, 256).unwrap();
        let gs = GroundState::critical(5.0).unwrap();
        let op = discretize_weinstein(&gs, &grid).unwrap();
        let dense = op.to_dense();
        assert_eq!(dense, dense.transpose());
        let e = dense_lowest(&dense);
        for k in 0..5 {
            assert!((op.eigenvalue(k) - e[k]).abs() < 1e-10 * op.spectral_scale());
        }
        let v = op.eigenvector(op.eigenvalue(0)).unwrap();
        assert!((op.rayleigh_quotient(&v) - op.eigenvalue(0)).abs() < 1e-10);
    }

    #[test]
    fn spectrum_at_critical_speed() {
        // the discrete kernel eigenvalue is an O(h²) artefact; p = 10 needs the finer grid
        for (p, n) in [(5.0, 4096), (6.0, 4096), (10.0, 8192)] {
            let grid = Grid::dirichlet(50.0 * PI, n).unwrap();
            let gs = GroundState::critical(p).unwrap();
            let rep = spectrum(&gs, &grid, 5).unwrap();
            assert_eq!(rep.negative_count, 1, "p={p}: {:?}", rep.eigenvalues);
            assert!(rep.eigenvalues[0] < 0.0);
            assert_eq!(rep.kernel_index, 1);
            assert!(rep.kernel_overlap > 0.999);
            assert!(rep.kernel_eigenvalue.abs() < 1e-5 * rep.spectral_scale);
            assert!(rep.eigenvalues[2] > 0.0);
            assert!(rep.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn kernel_action_is_second_order_small() {
        let gs = GroundState::critical(5.0).unwrap();
        let ratio = |n: usize| {
            let grid = Grid::dirichlet(50.0 * PI, n).unwrap();
            let op = discretize_weinstein(&gs, &grid).unwrap();
            let v = op.restrict(&gs.profile_dx(&grid)).unwrap();
            let lv = op.apply(&v);
            dot(&lv, &lv).sqrt() / dot(&v, &v).sqrt()
        };
        let (a, b) = (ratio(2048), ratio(4096));
        assert!(b < 2e-3, "{b}");
        assert!((a / b - 4.0).abs() < 0.2, "{a} {b}");
    }

    #[test]
    fn bordered_inertia_matches_dense_oracle() {
        let grid = Grid::dirichlet(30.0, 320).unwrap();
        let gs = GroundState::critical(5.0).unwrap();
        let op = discretize_weinstein(&gs, &grid).unwrap();
        let dphi = gs.profile_dx(&grid);
        let kappa = kappa_closed_form(&gs, &grid);
        let phi = gs.profile(&grid);
        for cons in [
            vec![("dphi", dphi.clone())],
            vec![("dphi", dphi.clone()), ("kappa", kappa.clone())],
            vec![("dphi", dphi.clone()), ("phi", phi.clone())],
        ] {
            let rep = constrained_minimum_of(&op, &cons).unwrap();
            let vs: Vec<Vec<f64>> = cons.iter().map(|(_, f)| op.restrict(f).unwrap()).collect();
            let oracle = dense_constrained_min(&op, &vs);
            assert!(
                (rep.constrained_min - oracle).abs() < 1e-9 * op.spectral_scale(),
                "{} vs {oracle}",
                rep.constrained_min
            );
            assert!(rep.constrained_min >= rep.raw_min - 1e-12 * op.spectral_scale());
        }
    }

    #[test]
    fn constraints_only_raise_the_minimum() {
        let grid = Grid::dirichlet(50.0 * PI, 2048).unwrap();
        let gs = GroundState::critical(6.0).unwrap();
        let none = constrained_form_minimum(&gs, &grid, &[]).unwrap();
        assert_eq!(none.constrained_min, none.raw_min);
        assert!(none.raw_min < 0.0);
        let one = constrained_form_minimum(&gs, &grid, &[("dphi", gs.profile_dx(&grid))]).unwrap();
        let two = constrained_form_minimum(
            &gs,
            &grid,
            &[("dphi", gs.profile_dx(&grid)), ("phi", gs.profile(&grid))],
        )
        .unwrap();
        let tol = 1e-11 * discretize_weinstein(&gs, &grid).unwrap().spectral_scale();
        assert!(one.constrained_min >= none.constrained_min - tol);
        assert!(two.constrained_min >= one.constrained_min - tol);
    }

    #[test]
    fn removing_ground_mode_leaves_kernel_level() {
        let grid = Grid::dirichlet(50.0 * PI, 2048).unwrap();
        let gs = GroundState::critical(5.0).unwrap();
        let rep = spectrum(&gs, &grid, 4).unwrap();
        let xi0 = rep.ground_mode.clone();
        let c = constrained_form_minimum(&gs, &grid, &[("xi0", xi0.clone())]).unwrap();
        assert!((c.constrained_min - rep.kernel_eigenvalue).abs() < 1e-8 * rep.spectral_scale);
        assert!(c.constrained_min > -1e-5 * rep.spectral_scale);
        let c2 =
            constrained_form_minimum(&gs, &grid, &[("xi0", xi0), ("dphi", gs.profile_dx(&grid))])
                .unwrap();
        assert!(c2.constrained_min > 0.0);
    }

    #[test]
    fn rank_deficient_constraints_rejected() {
        let grid = Grid::dirichlet(20.0, 256).unwrap();
        let gs = GroundState::critical(5.0).unwrap();
        let d = gs.profile_dx(&grid);
        let err = constrained_form_minimum(&gs, &grid, &[("a", d.clone()), ("b", d.scaled(2.0))]);
        assert!(matches!(err, Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn negative_direction_closed_form() {
        let grid = Grid::periodic(50.0 * PI, 8192).unwrap();
        for p in [5.0, 10.0] {
            let gs = GroundState::critical(p).unwrap();
            let nd = negative_direction_check(&gs, &grid).unwrap();
            assert!(nd.closed_form < 0.0 && nd.quadrature < 0.0);
            assert!(nd.rel_error < 1e-4, "p={p}: {nd:?}");
        }
        // coefficient 2(2/p - 1/2) vanishes at p = 4
        assert_eq!(2.0 * (2.0 / 4.0 - 0.5), 0.0);
    }
}
