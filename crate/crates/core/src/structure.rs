//! Structural directions `Gamma_c`, `kappa_c = S_c'' Gamma_c` and the
//! negativity form `<S_c'' Gamma_c, Gamma_c>`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::hessian_apply;
use crate::grid::{inner, quadrature, Field, Grid};
use crate::ground_state::GroundState;

/// Scalars `B(c)` and `D(c)` entering `Gamma_c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub b: f64,
    pub d: f64,
}

/// `D = -(4pc + 4c - 3p) / (2(p+4)) ||phi||²`,
/// `B = 3/2 ||x phi||² + 9/2 ||x phi'||² - 3 ||phi||²`, all by quadrature.
pub fn coefficients(gs: &GroundState, grid: &Grid) -> Coefficients {
    let (p, c) = (gs.p(), gs.c());
    let phi = gs.profile(grid);
    let dphi = gs.profile_dx(grid);
    let norm = inner(&phi, &phi);
    let x_phi = quadrature(&phi.map_with_x(|x, v| (x * v).powi(2)));
    let x_dphi = quadrature(&dphi.map_with_x(|x, v| (x * v).powi(2)));
    Coefficients {
        b: 1.5 * x_phi + 4.5 * x_dphi - 3.0 * norm,
        d: -(4.0 * p * c + 4.0 * c - 3.0 * p) / (2.0 * (p + 4.0)) * norm,
    }
}

fn gamma_with(gs: &GroundState, grid: &Grid, k: Coefficients) -> Field {
    let c = gs.c();
    Field::from_fn(*grid, |x| {
        let phi = gs.phi(x);
        let dphi = gs.phi_dx(x);
        k.b * (c * c * gs.psi_direction(x) + 0.5 * c * x * dphi + c * phi)
            + k.d * (3.0 * x * x * phi + x * x * x * dphi)
    })
}

pub(crate) fn kappa_with(gs: &GroundState, grid: &Grid, k: Coefficients) -> Field {
    let (p, c) = (gs.p(), gs.c());
    let (b, d) = (k.b, k.d);
    let c_phi = b * (p + 1.0) * c * c - b * p * c + 6.0 * c * d;
    let c_ddphi = b * (1.0 - p) * c * c;
    let c_xdphi = 18.0 * c * d;
    let c_x2ddphi = (6.0 * c - 3.0 * p * c) * d;
    let c_x2phi = 3.0 * p * (c - 1.0) * d;
    Field::from_fn(*grid, |x| {
        let phi = gs.phi(x);
        let ddphi = gs.phi_dxx(x);
        c_phi * phi
            + c_ddphi * ddphi
            + c_xdphi * x * gs.phi_dx(x)
            + c_x2ddphi * x * x * ddphi
            + c_x2phi * x * x * phi
    })
}

/// `Gamma_c = B [c² Psi_c + c/2 x phi' + c phi] + D (3x² phi + x³ phi')`
pub fn gamma_direction(gs: &GroundState, grid: &Grid) -> Field {
    gamma_with(gs, grid, coefficients(gs, grid))
}

/// `kappa_c` assembled from analytic profiles.
pub fn kappa_closed_form(gs: &GroundState, grid: &Grid) -> Field {
    kappa_with(gs, grid, coefficients(gs, grid))
}

/// `<kappa_c, Gamma_c>` with the closed-form `kappa_c`.
pub fn negativity_form(gs: &GroundState, grid: &Grid) -> f64 {
    let k = coefficients(gs, grid);
    inner(&kappa_with(gs, grid, k), &gamma_with(gs, grid, k))
}

/// Both routes to `kappa_c` on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureSet {
    pub gs: GroundState,
    pub coefficients: Coefficients,
    pub gamma: Field,
    pub kappa_closed: Field,
    pub kappa_operator: Field,
}

impl StructureSet {
    pub fn build(gs: &GroundState, grid: &Grid) -> Result<Self> {
        let coefficients = coefficients(gs, grid);
        let gamma = gamma_with(gs, grid, coefficients);
        let kappa_closed = kappa_with(gs, grid, coefficients);
        let kappa_operator = hessian_apply(gs, &gamma)?;
        Ok(Self {
            gs: *gs,
            coefficients,
            gamma,
            kappa_closed,
            kappa_operator,
        })
    }

    pub fn form_closed(&self) -> f64 {
        inner(&self.kappa_closed, &self.gamma)
    }

    pub fn form_operator(&self) -> f64 {
        inner(&self.kappa_operator, &self.gamma)
    }

    /// Relative gap between the two form values.
    pub fn form_gap(&self) -> f64 {
        let a = self.form_closed();
        (a - self.form_operator()).abs() / a.abs()
    }

    /// Relative sup-norm gap between the two `kappa` fields. Sensitive to
    /// the periodic seam when `Gamma_c` has not decayed at `|x| = L`.
    pub fn sup_gap(&self) -> f64 {
        self.kappa_closed.sup_distance(&self.kappa_operator) / self.kappa_closed.sup_norm()
    }
}

/// Smallest power of two `N >= points` with `k h <= 0.25` on `[-L, L]`,
/// where `k` is the sech argument scale of `phi_c`.
pub fn resolved_points(gs: &GroundState, half_width: f64, points: usize) -> usize {
    let needed = (2.0 * half_width * gs.decay_rate() / 0.25).ceil() as usize;
    points.max(needed.next_power_of_two())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub p: f64,
    pub c0: f64,
    pub form_value: f64,
    pub negative: bool,
    /// same form with `kappa` obtained by applying the Hessian to `Gamma`
    pub form_value_operator: f64,
    pub dual_path_gap: f64,
    pub sup_gap: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableReport {
    pub half_width: f64,
    pub rows: Vec<TableRow>,
}

#[derive(Serialize)]
struct CsvRow {
    p: f64,
    c0: f64,
    form_value: f64,
    negative: bool,
}

impl TableReport {
    pub fn all_negative(&self) -> bool {
        self.rows.iter().all(|r| r.negative)
    }

    pub fn failing_rows(&self) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| !r.negative)
            .map(|r| r.p)
            .collect()
    }

    /// CSV with header `p,c0,form_value,negative`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(CsvRow {
                p: r.p,
                c0: r.c0,
                form_value: r.form_value,
                negative: r.negative,
            })
            .expect("in-memory csv write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 csv")
    }
}

/// Evaluates the negativity form at `c0(p)` for each `p` on `[-L, L]` with
/// `L = grid.half_width()`. Rows run in parallel. Each row is refined per
/// [`resolved_points`] and must pass the dual-path check (`1e-6` relative on
/// the form value) or the whole table is rejected.
pub fn negativity_table(p_list: &[f64], grid: &Grid) -> Result<TableReport> {
    if p_list.is_empty() {
        return Err(Error::InvalidParameter("empty p list".into()));
    }
    if !grid.is_periodic() {
        return Err(Error::WrongBoundary {
            required: "periodic",
        });
    }
    let half_width = grid.half_width();
    let rows = p_list
        .par_iter()
        .map(|&p| {
            let gs = GroundState::critical(p)?;
            let n = resolved_points(&gs, half_width, grid.points());
            let g = Grid::periodic(half_width, n)?;
            let set = StructureSet::build(&gs, &g)?;
            let gap = set.form_gap();
            if !(gap <= 1e-6) {
                return Err(Error::DualPathMismatch { p, gap });
            }
            let form_value = set.form_closed();
            Ok(TableRow {
                p,
                c0: gs.c(),
                form_value,
                negative: form_value < 0.0,
                form_value_operator: set.form_operator(),
                dual_path_gap: gap,
                sup_gap: set.sup_gap(),
                points: n,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TableReport { half_width, rows })
}

/// `<d_c phi_c, kappa_c>` with `d_c phi_c` from central differences
/// (step `1e-5 c`), and the same value divided by `||d_c phi|| ||kappa||`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonDegeneracy {
    pub value: f64,
    pub normalized: f64,
}

pub fn nondegeneracy(gs: &GroundState, grid: &Grid) -> NonDegeneracy {
    let dc = gs.profile_dc(grid, 1e-5);
    let kappa = kappa_closed_form(gs, grid);
    let value = inner(&dc, &kappa);
    let normalized = value / (inner(&dc, &dc).sqrt() * inner(&kappa, &kappa).sqrt());
    NonDegeneracy { value, normalized }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid() -> Grid {
        Grid::periodic(50.0 * PI, 8192).unwrap()
    }

    #[test]
    fn d_is_negative_and_unwinds() {
        let g = grid();
        for p in [4.1, 4.5, 5.0, 10.0, 30.0, 100.0] {
            let gs = GroundState::critical(p).unwrap();
            let n = resolved_points(&gs, g.half_width(), g.points());
            let g = Grid::periodic(g.half_width(), n).unwrap();
            let k = coefficients(&gs, &g);
            assert!(k.d < 0.0, "p={p}");
            let c = gs.c();
            let norm = inner(&gs.profile(&g), &gs.profile(&g));
            let unwound = k.d * (-2.0 * (p + 4.0) / (4.0 * p * c + 4.0 * c - 3.0 * p));
            assert!((unwound - norm).abs() < 1e-13 * norm);
        }
    }

    #[test]
    fn coefficients_resolution_independent() {
        let gs = GroundState::critical(5.0).unwrap();
        let g = grid();
        let a = coefficients(&gs, &g);
        let b = coefficients(&gs, &g.refined());
        assert!((a.b - b.b).abs() < 1e-9 * a.b.abs());
        assert!((a.d - b.d).abs() < 1e-9 * a.d.abs());
    }

    #[test]
    fn gamma_and_kappa_are_even() {
        let g = grid();
        let gs = GroundState::critical(6.0).unwrap();
        let gamma = gamma_direction(&gs, &g);
        assert_eq!(gamma.reflected(), gamma);
        let kappa = kappa_closed_form(&gs, &g);
        assert_eq!(kappa.reflected(), kappa);
        let k = coefficients(&gs, &g);
        let c = gs.c();
        let centre = g.points() / 2;
        let expected = k.b * (c * c * gs.psi_direction(0.0) + c * gs.phi(0.0));
        assert!((gamma.values()[centre] - expected).abs() < 1e-12 * expected.abs());
        let edge = gamma.values()[0].abs();
        assert!(edge < 1e-12 * gamma.sup_norm());
    }

    #[test]
    fn cubic_block_image() {
        // S''(3x² phi + x³ phi') in closed form
        let g = grid();
        let gs = GroundState::critical(5.0).unwrap();
        let (p, c) = (gs.p(), gs.c());
        let f = Field::from_fn(g, |x| 3.0 * x * x * gs.phi(x) + x.powi(3) * gs.phi_dx(x));
        let img = hessian_apply(&gs, &f).unwrap();
        let target = Field::from_fn(g, |x| {
            6.0 * c * gs.phi(x)
                + 18.0 * c * x * gs.phi_dx(x)
                + (6.0 * c - 3.0 * p * c) * x * x * gs.phi_dxx(x)
                + 3.0 * p * (c - 1.0) * x * x * gs.phi(x)
        });
        assert!(img.sup_distance(&target) < 1e-8 * target.sup_norm());
    }

    #[test]
    fn dual_path_agreement() {
        let g = grid();
        for p in [4.5, 5.0, 6.0, 10.0] {
            let set = StructureSet::build(&GroundState::critical(p).unwrap(), &g).unwrap();
            assert!(set.sup_gap() < 1e-6, "p={p} sup gap {}", set.sup_gap());
            assert!(set.form_gap() < 1e-6);
        }
    }

    #[test]
    fn kappa_orthogonal_to_translation() {
        let g = grid();
        let gs = GroundState::critical(5.0).unwrap();
        let kappa = kappa_closed_form(&gs, &g);
        let d = gs.profile_dx(&g);
        let v = inner(&kappa, &d);
        assert!(v.abs() < 1e-9 * kappa.norm_l2() * d.norm_l2());
    }

    #[test]
    fn structural_symmetry() {
        let g = grid();
        let gs = GroundState::critical(5.0).unwrap();
        let psi = gs.psi_field(&g);
        let xd = gs.profile_dx(&g).map_with_x(|x, v| x * v);
        let a = inner(&psi, &hessian_apply(&gs, &xd).unwrap());
        let b = inner(&hessian_apply(&gs, &psi).unwrap(), &xd);
        assert!((a - b).abs() < 1e-8 * a.abs());
    }

    #[test]
    fn speed_pairing_vanishes_only_at_critical_speed() {
        // <d_c phi, kappa> = <Q'(phi), Gamma>, and D cancels the B bracket when dQ/dc = 0
        let g = grid();
        for p in [5.0, 10.0] {
            let gs = GroundState::critical(p).unwrap();
            let nd = nondegeneracy(&gs, &g);
            assert!(nd.normalized.abs() < 1e-7, "p={p}: {nd:?}");
            let phi = gs.profile(&g);
            let q = &phi - &gs.profile_dxx(&g);
            let gamma = gamma_direction(&gs, &g);
            assert!(inner(&q, &gamma).abs() < 1e-7 * q.norm_l2() * gamma.norm_l2());
            let off = nondegeneracy(&gs.with_speed(1.3).unwrap(), &g);
            assert!(off.normalized.abs() > 1e-2, "p={p}: {off:?}");
        }
    }

    #[test]
    fn table_rows_and_csv() {
        let rep = negativity_table(&[5.0, 6.0], &grid()).unwrap();
        assert!(rep.all_negative());
        assert!((rep.rows[0].form_value - -292.10).abs() < 0.01 * 292.10);
        assert!((rep.rows[1].form_value - -274.60).abs() < 0.01 * 274.60);
        let csv = rep.to_csv();
        assert!(csv.starts_with("p,c0,form_value,negative\n"));
        assert_eq!(csv.lines().count(), 3);
        assert!(negativity_table(&[], &grid()).is_err());
        assert!(negativity_table(&[3.0], &grid()).is_err());
    }

    #[test]
    fn table_is_resolution_independent() {
        let g = grid();
        let a = negativity_table(&[5.0, 10.0], &g).unwrap();
        let b = negativity_table(&[5.0, 10.0], &g.refined()).unwrap();
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert!((x.form_value - y.form_value).abs() < 1e-6 * x.form_value.abs());
        }
    }
}
