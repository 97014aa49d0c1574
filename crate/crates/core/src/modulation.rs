//! Modulation `u(t, . + y) = phi_lambda + xi` with `xi` orthogonal to
//! `phi_lambda'` and `kappa_lambda`, plus the localized virial functional.

use serde::{Deserialize, Serialize};

use crate::dynamics::{evolve_observed, SimulationConfig, Trajectory};
use crate::error::{Error, Result};
use crate::functionals::{energy, hessian_apply};
use crate::grid::{inner, quadrature, Field, Grid, Spectral};
use crate::ground_state::GroundState;
use crate::structure::{coefficients, kappa_with};

const MAX_NEWTON: usize = 50;
const NEWTON_TOL: f64 = 1e-10;
const SINGULAR_TOL: f64 = 1e-12;
const LAMBDA_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct ModulationState {
    pub lambda: f64,
    pub y: f64,
    pub xi: Field,
    pub newton_iters: usize,
    /// `(<xi, phi_lambda'>, <xi, kappa_lambda>)`
    pub residuals: (f64, f64),
    /// tolerances the residuals were held to
    pub tolerances: (f64, f64),
}

impl ModulationState {
    /// `phi_lambda(. - y) + xi(. - y)`.
    pub fn reassemble(&self, gs: &GroundState) -> Result<Field> {
        let grid = *self.xi.grid();
        let spec = Spectral::new(grid)?;
        let body = &gs.with_speed(self.lambda)?.profile(&grid) + &self.xi;
        Ok(spec.translate(&body, -self.y))
    }
}

/// Everything depending on `lambda` alone.
struct Profiles {
    gs: GroundState,
    phi: Field,
    dphi: Field,
    kappa: Field,
}

impl Profiles {
    fn at(reference: &GroundState, lambda: f64, grid: &Grid) -> Result<Self> {
        let gs = reference.with_speed(lambda)?;
        let coeffs = coefficients(&gs, grid);
        Ok(Self {
            gs,
            phi: gs.profile(grid),
            dphi: gs.profile_dx(grid),
            kappa: kappa_with(&gs, grid, coeffs),
        })
    }

    /// `d phi_lambda / d lambda = (Psi_lambda + phi_lambda / p) / lambda`
    fn dphi_dlambda(&self, grid: &Grid) -> Field {
        let (p, l) = (self.gs.p(), self.gs.c());
        Field::from_fn(*grid, |x| {
            (self.gs.psi_direction(x) + self.gs.phi(x) / p) / l
        })
    }
}

struct Evaluation {
    f: [f64; 2],
    jac: [[f64; 2]; 2],
    tol: [f64; 2],
    xi: Field,
}

/// Orthogonality solver bound to one grid and one exponent.
#[derive(Debug)]
pub struct Modulator {
    reference: GroundState,
    grid: Grid,
    spectral: Spectral,
}

impl Modulator {
    pub fn new(reference: &GroundState, grid: &Grid) -> Result<Self> {
        if !grid.is_periodic() {
            return Err(Error::WrongBoundary {
                required: "periodic",
            });
        }
        Ok(Self {
            reference: *reference,
            grid: *grid,
            spectral: Spectral::new(*grid)?,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn reference(&self) -> &GroundState {
        &self.reference
    }

    pub fn spectral(&self) -> &Spectral {
        &self.spectral
    }

    fn evaluate(&self, u: &Field, lambda: f64, y: f64) -> Result<Evaluation> {
        let g = &self.grid;
        let pr = Profiles::at(&self.reference, lambda, g)?;
        let w = self.spectral.translate(u, y);
        let dw = self.spectral.derivative(&w, 1);
        let xi = &w - &pr.phi;

        let h = LAMBDA_STEP * lambda;
        let plus = Profiles::at(&self.reference, lambda + h, g)?;
        let minus = Profiles::at(&self.reference, lambda - h, g)?;
        let d_dphi = (&plus.dphi - &minus.dphi).scaled(0.5 / h);
        let d_kappa = (&plus.kappa - &minus.kappa).scaled(0.5 / h);
        let d_phi = pr.dphi_dlambda(g);

        let f = [inner(&xi, &pr.dphi), inner(&xi, &pr.kappa)];
        let jac = [
            [
                -inner(&d_phi, &pr.dphi) + inner(&xi, &d_dphi),
                inner(&dw, &pr.dphi),
            ],
            [
                -inner(&d_phi, &pr.kappa) + inner(&xi, &d_kappa),
                inner(&dw, &pr.kappa),
            ],
        ];
        let un = u.norm_l2();
        let tol = [
            NEWTON_TOL * un * pr.dphi.norm_l2(),
            NEWTON_TOL * un * pr.kappa.norm_l2(),
        ];
        Ok(Evaluation { f, jac, tol, xi })
    }

    /// `(<xi, phi_lambda'>, <xi, kappa_lambda>)` at a trial `(lambda, y)`,
    /// each divided by its solver tolerance.
    pub fn scaled_residuals(&self, u: &Field, lambda: f64, y: f64) -> Result<(f64, f64)> {
        let ev = self.evaluate(u, lambda, y)?;
        Ok((ev.f[0] / ev.tol[0], ev.f[1] / ev.tol[1]))
    }

    /// Newton on `(lambda, y)` from `guess`. Steps that would push `lambda`
    /// to or below 1 are halved.
    pub fn decompose(&self, u: &Field, guess: (f64, f64)) -> Result<ModulationState> {
        if u.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        let (mut lambda, mut y) = guess;
        if !(lambda > 1.0 && lambda.is_finite() && y.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "modulation guess ({lambda}, {y}) outside lambda > 1"
            )));
        }
        let mut worst = f64::INFINITY;
        for iter in 0..=MAX_NEWTON {
            let ev = self.evaluate(u, lambda, y)?;
            let scaled = (ev.f[0] / ev.tol[0]).abs().max((ev.f[1] / ev.tol[1]).abs());
            worst = scaled;
            if scaled < 1.0 {
                return Ok(ModulationState {
                    lambda,
                    y,
                    xi: ev.xi,
                    newton_iters: iter,
                    residuals: (ev.f[0], ev.f[1]),
                    tolerances: (ev.tol[0], ev.tol[1]),
                });
            }
            if iter == MAX_NEWTON {
                break;
            }
            let [[a, b], [c, d]] = ev.jac;
            let det = a * d - b * c;
            let scale = a.hypot(b) * c.hypot(d);
            if !(det.abs() >= SINGULAR_TOL * scale) {
                return Err(Error::SingularJacobian { det, scale });
            }
            let dl = -(d * ev.f[0] - b * ev.f[1]) / det;
            let dy = -(-c * ev.f[0] + a * ev.f[1]) / det;
            let mut t = 1.0;
            while lambda + t * dl <= 1.0 + 1e-9 * lambda {
                t *= 0.5;
                if t < 1e-6 {
                    return Err(Error::NoConvergence {
                        what: "modulation (lambda left (1, inf))",
                        iterations: iter,
                        residual: scaled,
                    });
                }
            }
            lambda += t * dl;
            y += t * dy;
            if !(lambda.is_finite() && y.is_finite()) {
                break;
            }
        }
        Err(Error::NoConvergence {
            what: "modulation",
            iterations: MAX_NEWTON,
            residual: worst,
        })
    }

    /// `min_y ||u - phi_c(. - y)||_{H^1}` over the reference orbit.
    pub fn tube_distance(&self, u: &Field) -> Result<f64> {
        let phi = self.reference.profile(&self.grid);
        let h1 = |f: &Field| -> f64 {
            let df = self.spectral.derivative(f, 1);
            (inner(f, f) + inner(&df, &df)).sqrt()
        };
        let dist = |y: f64| h1(&(&self.spectral.translate(u, y) - &phi));
        let (_, y0) = amplitude_guess(u, self.reference.p())?;
        let width = 1.0 / self.reference.decay_rate();
        let (mut lo, mut hi) = (y0 - width, y0 + width);
        let r = 0.5 * (5f64.sqrt() - 1.0);
        let mut x1 = hi - r * (hi - lo);
        let mut x2 = lo + r * (hi - lo);
        let (mut f1, mut f2) = (dist(x1), dist(x2));
        for _ in 0..60 {
            if f1 < f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - r * (hi - lo);
                f1 = dist(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + r * (hi - lo);
                f2 = dist(x2);
            }
        }
        Ok(f1.min(f2).min(dist(y0)))
    }
}

/// Convenience wrapper building a [`Modulator`] on the fly.
pub fn decompose(gs: &GroundState, u: &Field, guess: (f64, f64)) -> Result<ModulationState> {
    Modulator::new(gs, u.grid())?.decompose(u, guess)
}

/// `(lambda, y)` read off the peak: `max u = A(lambda)` and the argmax,
/// refined by a parabola through the three top samples.
pub fn amplitude_guess(u: &Field, p: f64) -> Result<(f64, f64)> {
    let v = u.values();
    let (j, &m) = v
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::InvalidParameter("empty field".into()))?;
    if !(m > 0.0) {
        return Err(Error::InvalidParameter("field has no positive peak".into()));
    }
    let n = v.len();
    let g = u.grid();
    let (l, r) = (v[(j + n - 1) % n], v[(j + 1) % n]);
    let curv = l - 2.0 * m + r;
    let off = if curv < 0.0 {
        0.5 * (l - r) / curv
    } else {
        0.0
    };
    let y = g.wrap(g.x(j) + off * g.spacing());
    let lambda = 1.0 + 2.0 * m.powf(p) / (p + 2.0);
    Ok((lambda, y))
}

/// Odd cutoff: `x` on `[0, R]`, quintic-smoothstep easing on `[R, 2R]`,
/// flat at `3R/2` beyond. `phi' = 1 - S((x - R)/R)` with `S` the quintic
/// smoothstep, so `0 <= phi' <= 1` and the profile is `C^3`.
pub fn cutoff(r: f64, x: f64) -> f64 {
    let a = x.abs();
    let v = if a <= r {
        a
    } else if a >= 2.0 * r {
        1.5 * r
    } else {
        let t = (a - r) / r;
        r + r * (t - t.powi(4) * (2.5 - 3.0 * t + t * t))
    };
    v.copysign(x)
}

pub fn cutoff_dx(r: f64, x: f64) -> f64 {
    let a = x.abs();
    if a <= r {
        1.0
    } else if a >= 2.0 * r {
        0.0
    } else {
        let t = (a - r) / r;
        1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
    }
}

pub fn cutoff_profile(r: f64, grid: &Grid) -> Result<Field> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "cutoff radius {r} must be > 0"
        )));
    }
    if 2.0 * r >= grid.half_width() {
        return Err(Error::InvalidParameter(format!(
            "cutoff needs 2R < L (R = {r}, L = {})",
            grid.half_width()
        )));
    }
    Ok(Field::from_fn(*grid, |x| cutoff(r, x)))
}

/// `gamma(lambda) = -lambda E(phi_c) + lambda²/2 (||phi_lambda||² - ||phi_lambda'||²)`
/// from closed-form norms.
pub fn gamma_of_lambda(gs: &GroundState, lambda: f64) -> Result<f64> {
    let gl = gs.with_speed(lambda)?;
    Ok(-lambda * gs.energy() + 0.5 * lambda * lambda * (gl.norm_sq() - gl.dx_norm_sq()))
}

/// Same as [`gamma_of_lambda`] with norms by quadrature on `grid`.
pub fn gamma_by_quadrature(gs: &GroundState, lambda: f64, grid: &Grid) -> Result<f64> {
    let gl = gs.with_speed(lambda)?;
    let phi_c = gs.profile(grid);
    let phi = gl.profile(grid);
    let dphi = gl.profile_dx(grid);
    let e = energy(&phi_c, gs.p());
    Ok(-lambda * e + 0.5 * lambda * lambda * (inner(&phi, &phi) - inner(&dphi, &dphi)))
}

/// Closed form of `gamma''(c)`: `(p - 4c) / (2p (c-1)²) ||phi_c||²`.
pub fn gamma_second_derivative(gs: &GroundState) -> f64 {
    let (p, c) = (gs.p(), gs.c());
    (p - 4.0 * c) / (2.0 * p * (c - 1.0).powi(2)) * gs.norm_sq()
}

/// `beta(u0) = -lambda [E(u0) - E(phi_c)]`.
pub fn beta(u0: &Field, gs: &GroundState, lambda: f64) -> f64 {
    -lambda * (energy(u0, gs.p()) - energy(&gs.profile(u0.grid()), gs.p()))
}

/// First-order prediction of `beta((1-a) phi_c)` at `lambda = c`:
/// `a c [2(p+2)c - p] / (p+4) ||phi_c||²`.
pub fn beta_first_order(gs: &GroundState, a: f64) -> f64 {
    let (p, c) = (gs.p(), gs.c());
    a * c * (2.0 * (p + 2.0) * c - p) / (p + 4.0) * gs.norm_sq()
}

/// `(1 - d²)(x³ phi)` analytically.
fn weighted_cubic(gs: &GroundState, grid: &Grid) -> Field {
    Field::from_fn(*grid, |x| {
        let (f, df, ddf) = (gs.phi(x), gs.phi_dx(x), gs.phi_dxx(x));
        x * x * x * f - (6.0 * x * f + 6.0 * x * x * df + x * x * x * ddf)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VirialReport {
    pub t: f64,
    #[serde(rename = "I1")]
    pub i1: f64,
    #[serde(rename = "I2")]
    pub i2: f64,
    #[serde(rename = "I")]
    pub i: f64,
    pub beta: f64,
    pub gamma_of_lambda: f64,
    pub lambda: f64,
    pub y: f64,
    pub xi_h1: f64,
    pub tube_distance: f64,
}

/// Virial quantities for one decomposed frame.
pub fn virial_frame(
    m: &Modulator,
    t: f64,
    u: &Field,
    state: &ModulationState,
    r: f64,
    e0: f64,
) -> Result<VirialReport> {
    let g = m.grid();
    let gs = m.reference();
    let p = gs.p();
    let gl = gs.with_speed(state.lambda)?;
    let density = u.map(|v| 0.5 * v * v + v.abs().powf(p + 2.0) / (p + 2.0));
    let weighted = density.map_with_x(|x, d| cutoff(r, g.wrap(x - state.y)) * d);
    let i1 = quadrature(&weighted);
    let k = coefficients(&gl, g);
    let i2 = k.d / k.b * inner(&state.xi, &weighted_cubic(&gl, g));
    let e_phi = energy(&gs.profile(g), p);
    Ok(VirialReport {
        t,
        i1,
        i2,
        i: i1 + i2,
        beta: -state.lambda * (e0 - e_phi),
        gamma_of_lambda: gamma_of_lambda(gs, state.lambda)?,
        lambda: state.lambda,
        y: state.y,
        xi_h1: h1(m.spectral(), &state.xi),
        tube_distance: m.tube_distance(u)?,
    })
}

fn h1(spec: &Spectral, f: &Field) -> f64 {
    let df = spec.derivative(f, 1);
    (inner(f, f) + inner(&df, &df)).sqrt()
}

/// Decomposes every frame with warm starts, first frame from `(c, 0)`.
pub fn track(m: &Modulator, traj: &Trajectory) -> Result<Vec<ModulationState>> {
    let mut guess = (m.reference().c(), 0.0);
    let mut out = Vec::with_capacity(traj.len());
    for u in &traj.states {
        let s = m.decompose(u, guess)?;
        guess = (s.lambda, s.y);
        out.push(s);
    }
    Ok(out)
}

/// One [`VirialReport`] per recorded frame.
pub fn virial_monitor(gs: &GroundState, traj: &Trajectory, r: f64) -> Result<Vec<VirialReport>> {
    let grid = traj.config.grid;
    cutoff_profile(r, &grid)?;
    let m = Modulator::new(gs, &grid)?;
    let states = track(&m, traj)?;
    let e0 = energy(&traj.states[0], gs.p());
    traj.times
        .iter()
        .zip(&traj.states)
        .zip(&states)
        .map(|((&t, u), s)| virial_frame(&m, t, u, s, r, e0))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterResidual {
    pub t: f64,
    pub lambda: f64,
    pub y: f64,
    pub xi_h1: f64,
    pub dy_dt: f64,
    pub dlambda_dt: f64,
    /// `(1/B)<xi, S''_lambda d_x f> - (1/B) d_t <xi, (1 - d²) f>`, `f = x³ phi_lambda`
    pub drift_rhs: f64,
    /// `|y' - lambda| / ||xi||_{H^1}`
    pub drift_ratio: f64,
    /// `|lambda'| / ||xi||_{H^1}`
    pub lambda_ratio: f64,
    /// `|(y' - lambda) - drift_rhs|`
    pub drift_remainder: f64,
}

/// Finite-difference modulation rates along a trajectory. Rates use central
/// differences, one-sided at the ends. Needs at least two frames.
pub fn parameter_residuals(gs: &GroundState, traj: &Trajectory) -> Result<Vec<ParameterResidual>> {
    let n = traj.len();
    if n < 2 {
        return Err(Error::InvalidParameter(
            "parameter residuals need at least two frames".into(),
        ));
    }
    let grid = traj.config.grid;
    let m = Modulator::new(gs, &grid)?;
    let states = track(&m, traj)?;
    let mut pairing = Vec::with_capacity(n);
    let mut hess = Vec::with_capacity(n);
    for s in &states {
        let gl = gs.with_speed(s.lambda)?;
        let k = coefficients(&gl, &grid);
        pairing.push(inner(&s.xi, &weighted_cubic(&gl, &grid)) / k.b);
        let df = Field::from_fn(grid, |x| 3.0 * x * x * gl.phi(x) + x * x * x * gl.phi_dx(x));
        hess.push(inner(&s.xi, &hessian_apply(&gl, &df)?) / k.b);
    }
    let t = &traj.times;
    let rate = |v: &dyn Fn(usize) -> f64, j: usize| -> f64 {
        let (a, b) = if j == 0 {
            (0, 1)
        } else if j == n - 1 {
            (n - 2, n - 1)
        } else {
            (j - 1, j + 1)
        };
        (v(b) - v(a)) / (t[b] - t[a])
    };
    let ys: Vec<f64> = unwrap_periodic(
        states.iter().map(|s| s.y).collect(),
        2.0 * grid.half_width(),
    );
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let s = &states[j];
        let dy = rate(&|i| ys[i], j);
        let dl = rate(&|i| states[i].lambda, j);
        let rhs = hess[j] - rate(&|i| pairing[i], j);
        let xi_h1 = h1(m.spectral(), &s.xi);
        out.push(ParameterResidual {
            t: t[j],
            lambda: s.lambda,
            y: ys[j],
            xi_h1,
            dy_dt: dy,
            dlambda_dt: dl,
            drift_rhs: rhs,
            drift_ratio: (dy - s.lambda).abs() / xi_h1,
            lambda_ratio: dl.abs() / xi_h1,
            drift_remainder: ((dy - s.lambda) - rhs).abs(),
        });
    }
    Ok(out)
}

fn unwrap_periodic(mut v: Vec<f64>, period: f64) -> Vec<f64> {
    for j in 1..v.len() {
        let jump = v[j] - v[j - 1];
        v[j] -= period * (jump / period).round();
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub grid: Grid,
    pub dt: f64,
    pub t_end: f64,
    pub record_every: usize,
    /// cutoff radius `R`
    pub r: f64,
    /// tube radius as a fraction of `||phi_c||_{H^1}`
    pub tube_fraction: f64,
}

impl ExperimentConfig {
    /// `R` = ten soliton widths, tube `0.1 ||phi_c||_{H^1}`, dynamics defaults.
    pub fn new(grid: Grid, gs: &GroundState) -> Self {
        let sim = SimulationConfig::new(grid, gs.p());
        Self {
            grid,
            dt: sim.dt,
            t_end: sim.t_end,
            record_every: sim.record_every,
            r: 10.0 / gs.decay_rate(),
            tube_fraction: 0.1,
        }
    }

    fn simulation(&self, p: f64) -> SimulationConfig {
        SimulationConfig {
            dt: self.dt,
            t_end: self.t_end,
            record_every: self.record_every,
            ..SimulationConfig::new(self.grid, p)
        }
    }
}

/// One recorded time, decomposed or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameStatus {
    pub t: f64,
    pub tube_distance: f64,
    /// peak-height estimate of the speed, available even when modulation fails
    pub lambda_amplitude: f64,
    pub modulation_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub recorded_frames: usize,
    pub modulated_frames: usize,
    /// share of consecutive modulated frames (inside the tube) with `I` increasing
    pub increasing_fraction: Option<f64>,
    pub i_increasing: bool,
    /// `|lambda - c|` at tube exit or the last modulated frame
    pub lambda_deviation: Option<f64>,
    /// same from the peak-height estimate at the last frame
    pub lambda_deviation_amplitude: f64,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub p: f64,
    pub a: f64,
    pub c0: f64,
    pub r: f64,
    pub tube_radius: f64,
    pub beta_initial: f64,
    pub beta_first_order: f64,
    pub frames: Vec<VirialReport>,
    pub status: Vec<FrameStatus>,
    pub tube_exit_time: Option<f64>,
    pub verdict: Verdict,
}

impl ExperimentReport {
    /// `t, lambda, y, xi_h1, I, I1, I2` for the decomposed frames.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["t", "lambda", "y", "xi_h1", "I", "I1", "I2"])
            .map_err(io)?;
        for f in &self.frames {
            w.write_record(
                [f.t, f.lambda, f.y, f.xi_h1, f.i, f.i1, f.i2].map(|v| format!("{v:.12e}")),
            )
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }
}

/// Evolves `(1 - a) phi_c`, decomposing each frame (warm start, then the
/// peak-height guess as fallback) until the state leaves the tube or
/// `t_end`. Modulation failures are recorded, not raised.
pub fn instability_experiment(
    gs: &GroundState,
    a: f64,
    config: &ExperimentConfig,
) -> Result<ExperimentReport> {
    let p = gs.p();
    if !(p > 4.0) {
        return Err(Error::InvalidParameter(format!(
            "instability run needs p > 4, got {p}"
        )));
    }
    if !(0.0..=0.05).contains(&a) {
        return Err(Error::InvalidParameter(format!(
            "a must lie in [0, 0.05], got {a}"
        )));
    }
    let grid = config.grid;
    cutoff_profile(config.r, &grid)?;
    let m = Modulator::new(gs, &grid)?;
    let phi = gs.profile(&grid);
    let u0 = phi.scaled(1.0 - a);
    let e0 = energy(&u0, p);
    let tube_radius = config.tube_fraction * h1(m.spectral(), &phi);

    let mut frames = Vec::new();
    let mut status = Vec::new();
    let mut exit = None;
    let mut guess = Some((gs.c(), 0.0));
    evolve_observed(&u0, &config.simulation(p), |t, u| {
        let dist = m.tube_distance(u)?;
        let amp = amplitude_guess(u, p)?;
        let mut attempt = match guess {
            Some(g) => m.decompose(u, g),
            None => m.decompose(u, amp),
        };
        if attempt.is_err() && guess.is_some() {
            attempt = m.decompose(u, amp);
        }
        let err = match attempt {
            Ok(s) => {
                guess = Some((s.lambda, s.y));
                frames.push(virial_frame(&m, t, u, &s, config.r, e0)?);
                None
            }
            Err(e) => {
                guess = None;
                Some(e.to_string())
            }
        };
        status.push(FrameStatus {
            t,
            tube_distance: dist,
            lambda_amplitude: amp.0,
            modulation_error: err,
        });
        if dist > tube_radius {
            exit = Some(t);
            return Ok(false);
        }
        Ok(true)
    })?;

    let verdict = judge(gs, &frames, &status, tube_radius);
    Ok(ExperimentReport {
        p,
        a,
        c0: gs.c(),
        r: config.r,
        tube_radius,
        beta_initial: beta(&u0, gs, gs.c()),
        beta_first_order: beta_first_order(gs, a),
        frames,
        status,
        tube_exit_time: exit,
        verdict,
    })
}

fn judge(gs: &GroundState, frames: &[VirialReport], status: &[FrameStatus], tube: f64) -> Verdict {
    let inside: Vec<&VirialReport> = frames.iter().filter(|f| f.tube_distance <= tube).collect();
    let pairs = inside.len().saturating_sub(1);
    let increasing_fraction = (pairs > 0).then(|| {
        let up = inside.windows(2).filter(|w| w[1].i > w[0].i).count();
        up as f64 / pairs as f64
    });
    let i_increasing = increasing_fraction.is_some_and(|f| f >= 0.95);
    let lambda_deviation = frames.last().map(|f| (f.lambda - gs.c()).abs());
    let lambda_deviation_amplitude = status
        .last()
        .map_or(0.0, |s| (s.lambda_amplitude - gs.c()).abs());
    let modulated = frames.len();
    let summary = if modulated < 2 {
        format!(
            "modulation failed on {} of {} frames; no virial trend available",
            status.len() - modulated,
            status.len()
        )
    } else if i_increasing {
        "I(t) increasing over the tube window".to_string()
    } else {
        format!(
            "I(t) increasing on {:.1}% of modulated steps",
            100.0 * increasing_fraction.unwrap_or(0.0)
        )
    };
    Verdict {
        recorded_frames: status.len(),
        modulated_frames: modulated,
        increasing_fraction,
        i_increasing,
        lambda_deviation,
        lambda_deviation_amplitude,
        summary,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::evolve;
    use std::f64::consts::PI;

    fn setup(p: f64) -> (GroundState, Grid, Modulator) {
        let gs = GroundState::critical(p).unwrap();
        let grid = Grid::periodic(50.0 * PI, 2048).unwrap();
        let m = Modulator::new(&gs, &grid).unwrap();
        (gs, grid, m)
    }

    #[test]
    fn exact_soliton_is_a_fixed_point() {
        let (gs, grid, m) = setup(5.0);
        let s = m.decompose(&gs.profile(&grid), (gs.c(), 0.0)).unwrap();
        assert!(s.newton_iters <= 1);
        assert_eq!(s.lambda, gs.c());
        assert_eq!(s.y, 0.0);
        assert!(s.xi.sup_norm() < 1e-14);
    }

    #[test]
    fn translated_profile_recovers_shift() {
        // lambda is a double root here, so it is only pinned to ~sqrt(tol)
        for p in [5.0, 10.0] {
            let (gs, grid, m) = setup(p);
            let u = m.spectral().translate(&gs.profile(&grid), -0.37);
            let s = m.decompose(&u, (gs.c(), 0.0)).unwrap();
            assert!((s.y - 0.37).abs() < 1e-9, "y = {}", s.y);
            assert!((s.lambda - gs.c()).abs() < 1e-4, "lambda = {}", s.lambda);
            assert!(s.residuals.0.abs() < s.tolerances.0);
            assert!(s.residuals.1.abs() < s.tolerances.1);
        }
    }

    #[test]
    fn reassembly_reproduces_state() {
        let (gs, grid, m) = setup(6.0);
        let u = m
            .spectral()
            .translate(&gs.with_speed(gs.c() + 0.02).unwrap().profile(&grid), 1.3);
        let s = m.decompose(&u, (gs.c(), -1.0)).unwrap();
        let back = s.reassemble(&gs).unwrap();
        assert!(back.sup_distance(&u) < 1e-12 * u.sup_norm().max(1.0));
    }

    #[test]
    fn amplitude_loss_has_no_orthogonal_decomposition() {
        let (gs, grid, m) = setup(5.0);
        let u = gs.profile(&grid).scaled(0.99);
        assert!(m.decompose(&u, (gs.c(), 0.0)).is_err());
        for k in 0..11 {
            let lambda = gs.c() - 0.05 + 0.01 * k as f64;
            let (f1, f2) = m.scaled_residuals(&u, lambda, 0.0).unwrap();
            assert!(f1.abs() < 1.0);
            assert!(f2 < -1e6, "lambda {lambda}: {f2}");
        }
        // gaining amplitude is solvable
        let up = gs.profile(&grid).scaled(1.01);
        assert!(m.decompose(&up, (gs.c(), 0.0)).is_ok());
    }

    #[test]
    fn rejects_bad_guess_and_grid() {
        let (gs, grid, m) = setup(5.0);
        assert!(m.decompose(&gs.profile(&grid), (0.9, 0.0)).is_err());
        let other = Grid::periodic(40.0, 256).unwrap();
        assert_eq!(
            m.decompose(&gs.profile(&other), (gs.c(), 0.0)),
            Err(Error::GridMismatch)
        );
        assert!(Modulator::new(&gs, &Grid::dirichlet(40.0, 256).unwrap()).is_err());
    }

    #[test]
    fn amplitude_guess_reads_peak() {
        let (gs, grid, m) = setup(5.0);
        let u = m.spectral().translate(&gs.profile(&grid), -2.0);
        let (l, y) = amplitude_guess(&u, 5.0).unwrap();
        assert!((l - gs.c()).abs() < 1e-3);
        assert!((y - 2.0).abs() < 1e-2);
    }

    #[test]
    fn cutoff_shape() {
        let r = 7.0;
        let grid = Grid::periodic(50.0, 8192).unwrap();
        let f = cutoff_profile(r, &grid).unwrap();
        assert_eq!(cutoff(r, 0.0), 0.0);
        assert_eq!(cutoff_dx(r, 0.0), 1.0);
        for (j, &v) in f.values().iter().enumerate() {
            let x = grid.x(j);
            let d = cutoff_dx(r, x);
            assert!((0.0..=1.0).contains(&d));
            assert!((cutoff(r, -x) + v).abs() < 1e-15);
            if x.abs() >= 2.0 * r {
                assert_eq!(v.abs(), 1.5 * r);
            }
        }
        // derivative matches the profile
        for x in [0.5 * r, 1.2 * r, 1.5 * r, 1.9 * r] {
            let h = 1e-5;
            let fd = (cutoff(r, x + h) - cutoff(r, x - h)) / (2.0 * h);
            assert!((fd - cutoff_dx(r, x)).abs() < 1e-8);
        }
    }

    #[test]
    fn cutoff_is_c3_at_seams() {
        let r = 5.0;
        let third = |x: f64, h: f64| {
            (cutoff(r, x + 2.0 * h) - 2.0 * cutoff(r, x + h) + 2.0 * cutoff(r, x - h)
                - cutoff(r, x - 2.0 * h))
                / (2.0 * h * h * h)
        };
        for seam in [r, 2.0 * r] {
            // a jump in the third derivative would leave an O(1) gap;
            // here the gap shrinks like h
            let mut prev = f64::INFINITY;
            for h in [1e-2, 5e-3, 2.5e-3] {
                let jump = (third(seam + 4.0 * h, h) - third(seam - 4.0 * h, h)).abs();
                assert!(jump < 0.55 * prev);
                prev = jump;
            }
            assert!(prev < 1e-2);
        }
        let grid = Grid::periodic(20.0, 256).unwrap();
        assert!(cutoff_profile(10.0, &grid).is_err());
        assert!(cutoff_profile(9.0, &grid).is_ok());
    }

    #[test]
    fn gamma_vanishes_to_second_order_at_critical_speed() {
        for p in [5.0, 10.0, 50.0] {
            let gs = GroundState::critical(p).unwrap();
            let c = gs.c();
            let scale = gs.norm_sq() * c * c;
            let g = |l: f64| gamma_of_lambda(&gs, l).unwrap();
            assert!(g(c).abs() < 1e-10 * scale);
            let h = 1e-4 * (c - 1.0);
            assert!(((g(c + h) - g(c - h)) / (2.0 * h)).abs() < 1e-6 * scale);
            let fd = (g(c + h) - 2.0 * g(c) + g(c - h)) / (h * h);
            let exact = gamma_second_derivative(&gs);
            assert!(exact > 0.0);
            assert!(
                (fd - exact).abs() < 1e-4 * exact.abs(),
                "p={p}: {fd} vs {exact}"
            );
        }
    }

    #[test]
    fn gamma_quadrature_matches_closed_form() {
        let gs = GroundState::critical(5.0).unwrap();
        let grid = Grid::periodic(50.0 * PI, 8192).unwrap();
        for l in [gs.c(), gs.c() + 0.03, gs.c() - 0.03] {
            let a = gamma_of_lambda(&gs, l).unwrap();
            let b = gamma_by_quadrature(&gs, l, &grid).unwrap();
            let scale = gs.energy() * l;
            assert!((a - b).abs() < 1e-8 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn beta_matches_first_order_expansion() {
        let (gs, grid, _) = setup(5.0);
        for a in [0.005, 0.01, 0.02] {
            let u0 = gs.profile(&grid).scaled(1.0 - a);
            let b = beta(&u0, &gs, gs.c());
            let lin = beta_first_order(&gs, a);
            assert!(b > 0.0);
            assert!((b - lin).abs() < 0.2 * lin);
            if a == 0.005 {
                assert!((b - lin).abs() < 0.01 * lin);
            }
        }
    }

    #[test]
    fn exact_soliton_virial_is_flat() {
        let (gs, grid, _) = setup(5.0);
        let mut cfg = SimulationConfig::new(grid, 5.0);
        cfg.t_end = 2.0;
        cfg.record_every = 250;
        let traj = evolve(&gs.profile(&grid), &cfg).unwrap();
        let r = 10.0 / gs.decay_rate();
        let frames = virial_monitor(&gs, &traj, r).unwrap();
        assert_eq!(frames.len(), traj.len());
        let i0 = frames[0].i;
        for f in &frames {
            assert_eq!(f.i, f.i1 + f.i2);
            assert!((f.i - i0).abs() < 1e-6 * r * gs.norm_sq());
            assert!(f.tube_distance < 1e-5);
            assert!(f.beta.abs() < 1e-12);
            assert!((f.y - gs.c() * f.t).abs() < 1e-6);
        }
        let res = parameter_residuals(&gs, &traj).unwrap();
        for r in &res {
            assert!((r.dy_dt - gs.c()).abs() < 1e-5, "{r:?}");
            assert!(r.dlambda_dt.abs() < 1e-3);
        }
    }

    #[test]
    fn experiment_reports_modulation_failure() {
        let gs = GroundState::critical(5.0).unwrap();
        let grid = Grid::periodic(50.0 * PI, 2048).unwrap();
        let mut cfg = ExperimentConfig::new(grid, &gs);
        cfg.t_end = 1.0;
        cfg.record_every = 500;
        let rep = instability_experiment(&gs, 0.01, &cfg).unwrap();
        assert_eq!(rep.status.len(), 3);
        assert!(rep.status.iter().all(|s| s.modulation_error.is_some()));
        assert!(rep.frames.is_empty());
        assert!(!rep.verdict.i_increasing);
        assert!(rep.beta_initial > 0.0);
        assert!(rep
            .to_csv()
            .unwrap()
            .starts_with("t,lambda,y,xi_h1,I,I1,I2"));
        assert!(instability_experiment(&gs, 0.1, &cfg).is_err());
    }
}
