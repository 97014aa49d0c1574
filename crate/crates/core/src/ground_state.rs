//! Explicit sech-power solitary waves of the gBBM equation and the scalar
//! identities they satisfy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{quadrature, Field, Grid};

/// `ln sech(z)` without overflow for large `|z|`.
#[inline]
pub(crate) fn ln_sech(z: f64) -> f64 {
    let a = z.abs();
    -a + std::f64::consts::LN_2 - (-2.0 * a).exp().ln_1p()
}

/// Critical speed `c0(p) = p / (4 + 2p) * (1 + sqrt(2 + p/2))` where the
/// momentum of the ground state is stationary in `c`.
pub fn critical_speed(p: f64) -> Result<f64> {
    if !(p.is_finite() && p > 4.0) {
        return Err(Error::InvalidParameter(format!(
            "critical speed requires p > 4, got {p}"
        )));
    }
    Ok(p / (4.0 + 2.0 * p) * (1.0 + (2.0 + 0.5 * p).sqrt()))
}

/// `8(p+2)c^2 - 8pc - p^2`, the numerator of `d/dc Q(phi_c)`.
pub fn momentum_slope_numerator(p: f64, c: f64) -> f64 {
    8.0 * (p + 2.0) * c * c - 8.0 * p * c - p * p
}

/// `||psi_0||^2` for the normalized profile solving `-psi'' + psi - psi^{p+1} = 0`,
/// obtained by trapezoid quadrature of the explicit profile on a grid fine
/// enough to resolve the `pi/p` analyticity strip.
pub fn psi0_norm_sq(p: f64) -> f64 {
    // integrand ~ 2^{4/p} exp(-2|x|): exp(-50) at |x| = 25
    let half_width = 25.0;
    let needed = (2.0 * half_width * p / 0.25).ceil() as usize;
    let n = needed.next_power_of_two().max(4096);
    let grid = Grid::periodic(half_width, n).expect("static grid parameters are valid");
    let amp2 = (0.5 * (p + 2.0)).powf(2.0 / p);
    let h = grid.spacing();
    (0..grid.len())
        .map(|j| {
            let x = grid.x(j);
            amp2 * ((4.0 / p) * ln_sech(0.5 * p * x)).exp()
        })
        .sum::<f64>()
        * h
}

/// Ground state `phi_c` of `-c phi'' + (c-1) phi - phi^{p+1} = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundState {
    p: f64,
    c: f64,
    psi0_norm_sq: f64,
}

impl GroundState {
    pub fn new(p: f64, c: f64) -> Result<Self> {
        if !(p.is_finite() && p > 0.0) {
            return Err(Error::InvalidParameter(format!("p must be > 0, got {p}")));
        }
        if !(c.is_finite() && c > 1.0) {
            return Err(Error::InvalidParameter(format!("c must be > 1, got {c}")));
        }
        Ok(Self {
            p,
            c,
            psi0_norm_sq: psi0_norm_sq(p),
        })
    }

    /// Ground state at the critical speed `c0(p)`.
    pub fn critical(p: f64) -> Result<Self> {
        Self::new(p, critical_speed(p)?)
    }

    /// Same exponent at another speed; reuses the cached `||psi_0||^2`.
    pub fn with_speed(&self, c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 1.0) {
            return Err(Error::InvalidParameter(format!("c must be > 1, got {c}")));
        }
        Ok(Self { c, ..*self })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// `omega = c^{-1/2}`
    pub fn omega(&self) -> f64 {
        self.c.powf(-0.5)
    }

    /// `phi_c(0) = [(c-1)(p+2)/2]^{1/p}`
    pub fn amplitude(&self) -> f64 {
        (0.5 * (self.c - 1.0) * (self.p + 2.0)).powf(1.0 / self.p)
    }

    /// Spatial decay rate `sqrt((c-1)/c)` of `phi_c`.
    pub fn spatial_rate(&self) -> f64 {
        ((self.c - 1.0) / self.c).sqrt()
    }

    /// Argument scale `k = p/2 * sqrt((c-1)/c)` inside the sech.
    pub fn decay_rate(&self) -> f64 {
        0.5 * self.p * self.spatial_rate()
    }

    pub fn psi0_norm_sq(&self) -> f64 {
        self.psi0_norm_sq
    }

    /// Distance beyond which `phi_c(x) / phi_c(0) < tol`.
    pub fn decay_length(&self, tol: f64) -> f64 {
        ((1.0 / tol).ln() + (2.0 / self.p) * std::f64::consts::LN_2) / self.spatial_rate()
    }

    /// Periodic grid with `N` nodes, half-width `50 pi` widened when the
    /// profile has not decayed to round-off there (slow waves near `p = 4`).
    pub fn identity_grid(&self, points: usize) -> Result<Grid> {
        let l = (50.0 * std::f64::consts::PI).max(self.decay_length(1e-17));
        Grid::periodic(l, points)
    }

    pub fn phi(&self, x: f64) -> f64 {
        self.amplitude() * ((2.0 / self.p) * ln_sech(self.decay_rate() * x)).exp()
    }

    pub fn phi_dx(&self, x: f64) -> f64 {
        -self.spatial_rate() * self.phi(x) * (self.decay_rate() * x).tanh()
    }

    pub fn phi_dxx(&self, x: f64) -> f64 {
        let z = self.decay_rate() * x;
        let t = z.tanh();
        let sech2 = (2.0 * ln_sech(z)).exp();
        (self.c - 1.0) / self.c * self.phi(x) * (t * t - 0.5 * self.p * sech2)
    }

    /// `Psi_c = c^{1+1/p} d/dc (c^{-1/p} phi_c)`, the pre-image of `phi_c`
    /// under the Hessian of the action.
    pub fn psi_direction(&self, x: f64) -> f64 {
        let (p, c) = (self.p, self.c);
        let t = (self.decay_rate() * x).tanh();
        self.phi(x) * (1.0 / (p * (c - 1.0)) - x / (2.0 * (c * (c - 1.0)).sqrt()) * t)
    }

    /// `psi_omega = c^{-1/p} phi_c`, solving the `omega`-normalized equation.
    pub fn scaled_profile(&self, x: f64) -> f64 {
        self.c.powf(-1.0 / self.p) * self.phi(x)
    }

    pub fn profile(&self, grid: &Grid) -> Field {
        Field::from_fn(*grid, |x| self.phi(x))
    }

    pub fn profile_dx(&self, grid: &Grid) -> Field {
        Field::from_fn(*grid, |x| self.phi_dx(x))
    }

    pub fn profile_dxx(&self, grid: &Grid) -> Field {
        Field::from_fn(*grid, |x| self.phi_dxx(x))
    }

    pub fn psi_field(&self, grid: &Grid) -> Field {
        Field::from_fn(*grid, |x| self.psi_direction(x))
    }

    /// Central difference in `c` of the profile, step `rel_step * c`.
    pub fn profile_dc(&self, grid: &Grid, rel_step: f64) -> Field {
        let dc = rel_step * self.c;
        let plus = Self {
            c: self.c + dc,
            ..*self
        };
        let minus = Self {
            c: self.c - dc,
            ..*self
        };
        Field::from_fn(*grid, |x| (plus.phi(x) - minus.phi(x)) / (2.0 * dc))
    }

    /// `||phi_c||^2 = c^{1/2} (c-1)^{2/p - 1/2} ||psi_0||^2`
    pub fn norm_sq(&self) -> f64 {
        let (p, c) = (self.p, self.c);
        c.sqrt() * (c - 1.0).powf(2.0 / p - 0.5) * self.psi0_norm_sq
    }

    pub fn dx_norm_sq(&self) -> f64 {
        let (p, c) = (self.p, self.c);
        p * (c - 1.0) / ((p + 4.0) * c) * self.norm_sq()
    }

    /// `||phi_c||_{L^{p+2}}^{p+2}`
    pub fn lp_norm(&self) -> f64 {
        let (p, c) = (self.p, self.c);
        2.0 * (p + 2.0) * (c - 1.0) / (p + 4.0) * self.norm_sq()
    }

    pub fn dc_norm_sq(&self) -> f64 {
        let (p, c) = (self.p, self.c);
        (4.0 * c - p) / (2.0 * p * c * (c - 1.0)) * self.norm_sq()
    }

    /// `d/dc Q(phi_c)`; vanishes at `c0(p)`.
    pub fn dc_momentum(&self) -> f64 {
        let (p, c) = (self.p, self.c);
        momentum_slope_numerator(p, c) / (4.0 * p * (p + 4.0) * c * c * (c - 1.0)) * self.norm_sq()
    }

    pub fn energy(&self) -> f64 {
        let (p, c) = (self.p, self.c);
        (4.0 * c + p) / (2.0 * (p + 4.0)) * self.norm_sq()
    }

    pub fn momentum(&self) -> f64 {
        let (p, c) = (self.p, self.c);
        0.5 * (1.0 + p * (c - 1.0) / ((p + 4.0) * c)) * self.norm_sq()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityRecord {
    pub name: String,
    pub closed_form: f64,
    pub quadrature: f64,
    /// `|closed - quadrature| / |closed|`, normalized by `||phi_c||^2`
    /// instead when the closed form vanishes (the momentum slope at `c0`).
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub p: f64,
    pub c: f64,
    pub records: Vec<IdentityRecord>,
}

impl IdentityReport {
    pub fn max_rel_error(&self) -> f64 {
        self.records.iter().fold(0.0, |m, r| m.max(r.rel_error))
    }

    pub fn get(&self, name: &str) -> Option<&IdentityRecord> {
        self.records.iter().find(|r| r.name == name)
    }
}

struct ProfileQuadratures {
    norm_sq: f64,
    dx_norm_sq: f64,
    lp_norm: f64,
}

fn profile_quadratures(gs: &GroundState, grid: &Grid) -> ProfileQuadratures {
    let p = gs.p;
    let phi = gs.profile(grid);
    let dphi = gs.profile_dx(grid);
    ProfileQuadratures {
        norm_sq: quadrature(&phi.map(|v| v * v)),
        dx_norm_sq: quadrature(&dphi.map(|v| v * v)),
        lp_norm: quadrature(&phi.map(|v| v.abs().powf(p + 2.0))),
    }
}

/// [`closed_form_identities_on`] with `N = 8192` on [`GroundState::identity_grid`].
pub fn closed_form_identities(gs: &GroundState) -> IdentityReport {
    let grid = gs
        .identity_grid(8192)
        .expect("positive half-width and even node count");
    closed_form_identities_on(gs, &grid)
}

/// Evaluates every closed-form scalar identity of the ground state twice:
/// from the formulas and by quadrature of the explicit profile on `grid`.
/// Derivatives in `c` on the quadrature side use a five-point stencil with
/// step `1e-3 (c - 1)`.
pub fn closed_form_identities_on(gs: &GroundState, grid: &Grid) -> IdentityReport {
    let (p, c) = (gs.p, gs.c);
    let q = profile_quadratures(gs, grid);
    // fourth-order stencil, step scaled to the distance from c = 1
    let dc = 1e-3 * (c - 1.0);
    let at = |k: f64| profile_quadratures(&gs.with_speed(c + k * dc).expect("c + k dc > 1"), grid);
    let (q2m, q1m, q1p, q2p) = (at(-2.0), at(-1.0), at(1.0), at(2.0));
    let five_point = |f: &dyn Fn(&ProfileQuadratures) -> f64| {
        (f(&q2m) - 8.0 * f(&q1m) + 8.0 * f(&q1p) - f(&q2p)) / (12.0 * dc)
    };
    let momentum_q = |q: &ProfileQuadratures| 0.5 * (q.norm_sq + q.dx_norm_sq);
    let energy_q = 0.5 * q.norm_sq + q.lp_norm / (p + 2.0);

    let scale = gs.norm_sq();
    let record = |name: &str, closed: f64, quad: f64| {
        let denom = if closed.abs() > 1e-12 * scale {
            closed.abs()
        } else {
            scale
        };
        IdentityRecord {
            name: name.to_string(),
            closed_form: closed,
            quadrature: quad,
            rel_error: (closed - quad).abs() / denom,
        }
    };

    let records = vec![
        record("norm_sq", gs.norm_sq(), q.norm_sq),
        record("dx_norm_sq", gs.dx_norm_sq(), q.dx_norm_sq),
        record("lp_norm", gs.lp_norm(), q.lp_norm),
        record("dc_norm_sq", gs.dc_norm_sq(), five_point(&|q| q.norm_sq)),
        record("dc_momentum", gs.dc_momentum(), five_point(&momentum_q)),
        record("energy", gs.energy(), energy_q),
        record("momentum", gs.momentum(), momentum_q(&q)),
    ];
    IdentityReport { p, c, records }
}
