//! Pseudo-spectral RK4 integration of `u_t = -(1 - ∂²)^{-1} ∂ (u + |u|^p u)`
//! on a periodic grid.

use std::io::{Read, Write};
use std::path::Path;

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::{energy, momentum, nonlinearity};
use crate::grid::{Field, Grid, Spectral};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub grid: Grid,
    pub p: f64,
    pub dt: f64,
    pub t_end: f64,
    pub record_every: usize,
    /// 2/3-rule masking of the nonlinear flux
    pub dealias: bool,
    /// drop the nonlinear term
    pub linearized: bool,
}

impl SimulationConfig {
    /// `dt = 1e-3`, `t_end = 20`, a frame every 1000 steps, dealiased.
    pub fn new(grid: Grid, p: f64) -> Self {
        Self {
            grid,
            p,
            dt: 1e-3,
            t_end: 20.0,
            record_every: 1000,
            dealias: true,
            linearized: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.grid.is_periodic() {
            return Err(Error::WrongBoundary {
                required: "periodic",
            });
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "dt must be > 0, got {}",
                self.dt
            )));
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "t_end must be > 0, got {}",
                self.t_end
            )));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidParameter("record_every must be >= 1".into()));
        }
        if !(self.p.is_finite() && self.p > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "p must be > 0, got {}",
                self.p
            )));
        }
        Ok(())
    }

    /// Number of steps; the step is shrunk to `t_end / steps` so the run
    /// ends exactly at `t_end`.
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt - 1e-9).ceil().max(1.0) as usize
    }

    pub fn effective_dt(&self) -> f64 {
        self.t_end / self.steps() as f64
    }
}

/// Reusable right-hand side with precomputed symbols.
#[derive(Debug, Clone)]
pub struct Integrator {
    spectral: Spectral,
    p: f64,
    linearized: bool,
    /// `-ik / (1 + k²)`, zero at the Nyquist mode
    symbol: Vec<Complex<f64>>,
    /// 1 inside the 2/3 band, 0 outside
    mask: Vec<f64>,
}

impl Integrator {
    pub fn new(grid: Grid, p: f64, dealias: bool, linearized: bool) -> Result<Self> {
        let spectral = Spectral::new(grid)?;
        let nyq = spectral.nyquist_index();
        let kmax = spectral.wavenumbers()[nyq];
        let symbol = spectral
            .wavenumbers()
            .iter()
            .enumerate()
            .map(|(m, &k)| {
                if m == nyq {
                    Complex::new(0.0, 0.0)
                } else {
                    Complex::new(0.0, -k / (1.0 + k * k))
                }
            })
            .collect();
        let mask = spectral
            .wavenumbers()
            .iter()
            .map(|&k| {
                if !dealias || k.abs() <= 2.0 / 3.0 * kmax {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Self {
            spectral,
            p,
            linearized,
            symbol,
            mask,
        })
    }

    pub fn from_config(config: &SimulationConfig) -> Result<Self> {
        config.validate()?;
        Self::new(config.grid, config.p, config.dealias, config.linearized)
    }

    pub fn grid(&self) -> &Grid {
        self.spectral.grid()
    }

    /// Time derivative at `u`.
    pub fn rhs(&self, u: &[f64]) -> Vec<f64> {
        let n = u.len();
        // pack u and the nonlinear term into one complex transform
        let mut modes: Vec<Complex<f64>> = if self.linearized {
            u.iter().map(|&v| Complex::new(v, 0.0)).collect()
        } else {
            u.iter()
                .map(|&v| Complex::new(v, nonlinearity(v, self.p)))
                .collect()
        };
        self.spectral.forward_in_place(&mut modes);
        let mut out = vec![Complex::new(0.0, 0.0); n];
        for m in 0..n {
            let a = modes[m];
            let b = modes[(n - m) % n].conj();
            let lin = 0.5 * (a + b);
            let non = Complex::new(0.0, -0.5) * (a - b);
            out[m] = self.symbol[m] * (lin + self.mask[m] * non);
        }
        self.spectral.from_modes(out)
    }

    /// One classical RK4 step.
    pub fn step_values(&self, u: &[f64], dt: f64) -> Vec<f64> {
        let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> {
            a.iter().zip(b).map(|(x, y)| x + s * y).collect()
        };
        let k1 = self.rhs(u);
        let k2 = self.rhs(&axpy(u, 0.5 * dt, &k1));
        let k3 = self.rhs(&axpy(u, 0.5 * dt, &k2));
        let k4 = self.rhs(&axpy(u, dt, &k3));
        u.iter()
            .enumerate()
            .map(|(j, &v)| v + dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]))
            .collect()
    }

    pub fn step(&self, u: &Field, dt: f64) -> Result<Field> {
        if u.grid() != self.grid() {
            return Err(Error::GridMismatch);
        }
        Field::new(*self.grid(), self.step_values(u.values(), dt))
            .map_err(|_| Error::BlowUp { t: dt })
    }
}

/// Single dealiased RK4 step of the full equation.
pub fn step(u: &Field, dt: f64, p: f64) -> Result<Field> {
    Integrator::new(*u.grid(), p, true, false)?.step(u, dt)
}

/// `H(u) = -(1 - ∂²)^{-1}(u + |u|^p u)`, so that `∂_x H(u) = u_t`.
pub fn h_of_u(u: &Field, p: f64) -> Result<Field> {
    let sp = Spectral::new(*u.grid())?;
    let flux: Vec<f64> = u.values().iter().map(|&v| v + nonlinearity(v, p)).collect();
    let values = sp.helmholtz_inverse_values(&flux);
    Field::new(*u.grid(), values.into_iter().map(|v| -v).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub config: SimulationConfig,
    pub times: Vec<f64>,
    pub states: Vec<Field>,
    pub energy: Vec<f64>,
    pub momentum: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &Field {
        self.states
            .last()
            .expect("trajectory holds the initial frame")
    }

    fn relative_drift(series: &[f64]) -> f64 {
        let base = series[0];
        series
            .iter()
            .map(|v| (v - base).abs() / base.abs())
            .fold(0.0, f64::max)
    }

    pub fn energy_drift(&self) -> f64 {
        Self::relative_drift(&self.energy)
    }

    pub fn momentum_drift(&self) -> f64 {
        Self::relative_drift(&self.momentum)
    }

    /// Columns `t, u_0, ..., u_{N-1}`.
    pub fn snapshots_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["t".to_string()];
        header.extend((0..self.config.grid.len()).map(|j| format!("u{j}")));
        w.write_record(&header).expect("in-memory csv write");
        for (t, u) in self.times.iter().zip(&self.states) {
            let mut rec = vec![t.to_string()];
            rec.extend(u.values().iter().map(|v| v.to_string()));
            w.write_record(&rec).expect("in-memory csv write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    /// Columns `t, E, Q`.
    pub fn conserved_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["t", "E", "Q"])
            .expect("in-memory csv write");
        for i in 0..self.len() {
            w.write_record(&[
                self.times[i].to_string(),
                self.energy[i].to_string(),
                self.momentum[i].to_string(),
            ])
            .expect("in-memory csv write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    /// Little-endian binary: magic `GBBMTRJ1`, then `N: u64, L, p, dt: f64`,
    /// then frames of `t` followed by the `N` node values.
    pub fn write_binary(&self, mut out: impl Write) -> Result<()> {
        let g = self.config.grid;
        out.write_all(BINARY_MAGIC)?;
        out.write_all(&(g.points() as u64).to_le_bytes())?;
        for v in [g.half_width(), self.config.p, self.config.effective_dt()] {
            out.write_all(&v.to_le_bytes())?;
        }
        for (t, u) in self.times.iter().zip(&self.states) {
            out.write_all(&t.to_le_bytes())?;
            for v in u.values() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save_binary(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_binary(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

const BINARY_MAGIC: &[u8; 8] = b"GBBMTRJ1";

/// Frames read back from the binary format.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryFrames {
    pub grid: Grid,
    pub p: f64,
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<Field>,
}

pub fn read_binary(mut input: impl Read) -> Result<BinaryFrames> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let bad = |msg: &str| Error::Io(format!("malformed trajectory file: {msg}"));
    if bytes.len() < 40 || &bytes[..8] != BINARY_MAGIC {
        return Err(bad("header"));
    }
    let word = |i: usize| -> [u8; 8] { bytes[i..i + 8].try_into().expect("8 bytes") };
    let n = u64::from_le_bytes(word(8)) as usize;
    let (l, p, dt) = (
        f64::from_le_bytes(word(16)),
        f64::from_le_bytes(word(24)),
        f64::from_le_bytes(word(32)),
    );
    let grid = Grid::periodic(l, n)?;
    let frame = 8 * (n + 1);
    let body = &bytes[40..];
    if body.len() % frame != 0 {
        return Err(bad("truncated frame"));
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    for chunk in body.chunks(frame) {
        let vals: Vec<f64> = chunk
            .chunks(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        times.push(vals[0]);
        states.push(Field::new(grid, vals[1..].to_vec())?);
    }
    Ok(BinaryFrames {
        grid,
        p,
        dt,
        times,
        states,
    })
}

/// Integrates from `u0`, calling `observe(t, u)` on the initial state and
/// every `record_every` steps (and at `t_end`). Returning `false` stops the
/// run early. A non-finite state, or one exceeding `1e6` times the initial
/// sup-norm, aborts with [`Error::BlowUp`].
pub fn evolve_observed(
    u0: &Field,
    config: &SimulationConfig,
    mut observe: impl FnMut(f64, &Field) -> Result<bool>,
) -> Result<f64> {
    let integ = Integrator::from_config(config)?;
    if u0.grid() != &config.grid {
        return Err(Error::GridMismatch);
    }
    let steps = config.steps();
    let dt = config.effective_dt();
    let limit = 1e6 * u0.sup_norm().max(1.0);
    let mut u = u0.values().to_vec();
    if !observe(0.0, u0)? {
        return Ok(0.0);
    }
    for k in 1..=steps {
        u = integ.step_values(&u, dt);
        let t = k as f64 * dt;
        if u.iter().any(|v| !v.is_finite() || v.abs() > limit) {
            return Err(Error::BlowUp { t });
        }
        if k % config.record_every == 0 || k == steps {
            let field = Field::new(config.grid, u.clone())?;
            if !observe(t, &field)? {
                return Ok(t);
            }
        }
    }
    Ok(steps as f64 * dt)
}

/// Full trajectory with `E` and `Q` at each recorded frame.
pub fn evolve(u0: &Field, config: &SimulationConfig) -> Result<Trajectory> {
    let mut traj = Trajectory {
        config: *config,
        times: Vec::new(),
        states: Vec::new(),
        energy: Vec::new(),
        momentum: Vec::new(),
    };
    evolve_observed(u0, config, |t, u| {
        traj.times.push(t);
        traj.energy.push(energy(u, config.p));
        traj.momentum.push(momentum(u)?);
        traj.states.push(u.clone());
        Ok(true)
    })?;
    Ok(traj)
}

/// `||u||_{H^1}` with spectral derivative.
pub fn h1_norm(u: &Field) -> Result<f64> {
    Ok((2.0 * momentum(u)?).sqrt())
}
