//! Conserved quantities `E`, `Q`, the action `S_c = E - cQ`, their gradients,
//! the Hessian of the action at the ground state and the gBBM vector field.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{derivative, helmholtz_inverse, inner, quadrature, Field};
use crate::ground_state::GroundState;

/// `|u|^p u`, odd in `u` for every real `p`.
#[inline]
pub fn nonlinearity(u: f64, p: f64) -> f64 {
    if u == 0.0 {
        0.0
    } else {
        u.signum() * u.abs().powf(p + 1.0)
    }
}

/// `E(u) = 1/2 ∫u² + 1/(p+2) ∫|u|^{p+2}`
pub fn energy(u: &Field, p: f64) -> f64 {
    quadrature(&u.map(|v| 0.5 * v * v + v.abs().powf(p + 2.0) / (p + 2.0)))
}

/// `Q(u) = 1/2 ∫(u² + u_x²)`
pub fn momentum(u: &Field) -> Result<f64> {
    let ux = derivative(u, 1)?;
    Ok(0.5 * (inner(u, u) + inner(&ux, &ux)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionalValue {
    pub energy: f64,
    pub momentum: f64,
    /// `S_c = E - c Q`
    pub action: f64,
}

impl FunctionalValue {
    pub fn evaluate(u: &Field, p: f64, c: f64) -> Result<Self> {
        let energy = energy(u, p);
        let momentum = momentum(u)?;
        Ok(Self {
            energy,
            momentum,
            action: energy - c * momentum,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// `E'(u) = u + |u|^p u`
    pub energy: Field,
    /// `Q'(u) = u - u_xx`
    pub momentum: Field,
    /// `S_c'(u) = c u_xx + (1-c) u + |u|^p u`
    pub action: Field,
}

pub fn gradients(u: &Field, p: f64, c: f64) -> Result<Gradients> {
    let uxx = derivative(u, 2)?;
    let energy = u.map(|v| v + nonlinearity(v, p));
    let momentum = u - &uxx;
    let action = energy.axpy(-c, &momentum);
    Ok(Gradients {
        energy,
        momentum,
        action,
    })
}

/// `S_c''(phi_c) f = c f_xx + (1-c) f + (p+1) phi_c^p f`, with the analytic
/// weight `phi_c^p = (c-1)(p+2)/2 sech²(kx)`. This is `-c L_omega`.
pub fn hessian_apply(gs: &GroundState, f: &Field) -> Result<Field> {
    let (p, c) = (gs.p(), gs.c());
    let k = gs.decay_rate();
    let w = (p + 1.0) * 0.5 * (c - 1.0) * (p + 2.0);
    let fxx = derivative(f, 2)?;
    let potential = f.map_with_x(|x, v| {
        let s = 1.0 / (k * x).cosh();
        w * s * s * v
    });
    Ok(f.zip_map(&fxx, |v, d| c * d + (1.0 - c) * v)
        .zip_map(&potential, |a, b| a + b))
}

/// `u_t = J E'(u)` with `J = -(1 - ∂²)^{-1} ∂`. Periodic grids only.
pub fn evolution_rhs(u: &Field, p: f64) -> Result<Field> {
    if !u.grid().is_periodic() {
        return Err(Error::WrongBoundary {
            required: "periodic",
        });
    }
    let flux = u.map(|v| v + nonlinearity(v, p));
    Ok(helmholtz_inverse(&derivative(&flux, 1)?)?.scaled(-1.0))
}

/// Errors of a central-difference directional derivative against an
/// analytic value over a decreasing sequence of steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCheck {
    pub steps: Vec<f64>,
    pub errors: Vec<f64>,
    /// `log(e_i / e_{i+1}) / log(h_i / h_{i+1})`
    pub orders: Vec<f64>,
    /// Errors below this are indistinguishable from round-off.
    pub floor: f64,
}

impl ConvergenceCheck {
    pub fn new(steps: Vec<f64>, errors: Vec<f64>, floor: f64) -> Self {
        let orders = steps
            .windows(2)
            .zip(errors.windows(2))
            .map(|(h, e)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln())
            .collect();
        Self {
            steps,
            errors,
            orders,
            floor,
        }
    }

    /// Every pair of consecutive steps either shows order `>= min_order` or
    /// both errors sit at round-off (the central difference is exact, as for
    /// a quadratic functional).
    pub fn passes(&self, min_order: f64) -> bool {
        self.orders.iter().enumerate().all(|(i, &o)| {
            let at_floor = self.errors[i] <= self.floor && self.errors[i + 1] <= self.floor;
            at_floor || o >= min_order
        })
    }

    pub fn min_order(&self) -> f64 {
        self.orders.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Central-difference test of `<grad F(u), v>` for a scalar functional.
pub fn scalar_gradient_check(
    functional: impl Fn(&Field) -> Result<f64>,
    gradient: &Field,
    u: &Field,
    v: &Field,
    steps: &[f64],
) -> Result<ConvergenceCheck> {
    let exact = inner(gradient, v);
    let scale = functional(u)?.abs().max(exact.abs()).max(1.0);
    let mut errors = Vec::with_capacity(steps.len());
    for &eps in steps {
        let fp = functional(&u.axpy(eps, v))?;
        let fm = functional(&u.axpy(-eps, v))?;
        errors.push(((fp - fm) / (2.0 * eps) - exact).abs());
    }
    let floor = 1e3 * f64::EPSILON * scale / steps.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(ConvergenceCheck::new(steps.to_vec(), errors, floor))
}

/// Central-difference test of `S_c''(phi_c) v` against differences of
/// `S_c'` around `phi_c`, sup-norm.
pub fn hessian_consistency_check(
    gs: &GroundState,
    v: &Field,
    steps: &[f64],
) -> Result<ConvergenceCheck> {
    let phi = gs.profile(v.grid());
    let exact = hessian_apply(gs, v)?;
    let (p, c) = (gs.p(), gs.c());
    let mut errors = Vec::with_capacity(steps.len());
    for &eps in steps {
        let gp = gradients(&phi.axpy(eps, v), p, c)?.action;
        let gm = gradients(&phi.axpy(-eps, v), p, c)?.action;
        let fd = (&gp - &gm).scaled(0.5 / eps);
        errors.push(fd.sup_distance(&exact));
    }
    let scale = exact.sup_norm().max(phi.sup_norm());
    let floor = 1e3 * f64::EPSILON * scale / steps.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(ConvergenceCheck::new(steps.to_vec(), errors, floor))
}
