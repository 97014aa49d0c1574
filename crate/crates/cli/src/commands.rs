//! One function per subcommand. Each writes its report under `out/` and
//! returns the exit code.

use std::fs;
use std::path::PathBuf;

use gbbm_core::dynamics::{evolve, h1_norm, SimulationConfig};
use gbbm_core::ground_state::closed_form_identities_on;
use gbbm_core::modulation::{instability_experiment, ExperimentConfig};
use gbbm_core::spectral::{constrained_form_minimum, spectrum};
use gbbm_core::structure::{kappa_closed_form, negativity_table};
use gbbm_core::{Error, Grid, GroundState};
use serde::Serialize;

use crate::config::{Format, RunConfig};

pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CLAIM: i32 = 2;
pub const EXIT_CONSISTENCY: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

/// Exit code for a library error: bad input is a usage problem, everything
/// else points at the numerics.
pub fn error_code(e: &Error) -> i32 {
    match e {
        Error::InvalidGrid(_) | Error::InvalidParameter(_) | Error::DomainTooShort { .. } => {
            EXIT_USAGE
        }
        _ => EXIT_CONSISTENCY,
    }
}

#[derive(Debug)]
pub struct Outcome {
    pub code: i32,
    pub files: Vec<PathBuf>,
}

struct Writer<'a> {
    cfg: &'a RunConfig,
    files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema: String,
    config: &'a RunConfig,
    report: T,
}

impl<'a> Writer<'a> {
    fn new(cfg: &'a RunConfig) -> Result<Self, Error> {
        fs::create_dir_all(&cfg.out)?;
        Ok(Self {
            cfg,
            files: Vec::new(),
        })
    }

    fn schema(&self) -> String {
        format!("gbbm-{}/{}", self.cfg.command.name(), SCHEMA_VERSION)
    }

    fn csv(&mut self, stem: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), Error> {
        let mut text = format!("# schema: {}\n", self.schema());
        for line in self.cfg.lines() {
            text.push_str(&format!("# {line}\n"));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(header).map_err(io)?;
        for r in rows {
            w.write_record(r).map_err(io)?;
        }
        let body = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        text.push_str(&String::from_utf8_lossy(&body));
        self.put(&format!("{stem}.csv"), text.as_bytes())
    }

    fn json<T: Serialize>(&mut self, stem: &str, report: T) -> Result<(), Error> {
        let env = Envelope {
            schema: self.schema(),
            config: self.cfg,
            report,
        };
        let text = serde_json::to_string_pretty(&env).map_err(|e| Error::Io(e.to_string()))?;
        self.put(&format!("{stem}.json"), format!("{text}\n").as_bytes())
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), Error> {
        let path = self.cfg.out.join(name);
        fs::write(&path, bytes)?;
        self.files.push(path);
        Ok(())
    }

    fn done(self, code: i32) -> Outcome {
        Outcome {
            code,
            files: self.files,
        }
    }
}

fn num(v: f64) -> String {
    format!("{v:.12e}")
}

pub fn run(cfg: &RunConfig) -> Result<Outcome, Error> {
    use crate::config::Command::*;
    match cfg.command {
        Table => table(cfg),
        Identities => identities(cfg),
        Spectrum => spectral(cfg),
        Coercivity => coercivity(cfg),
        Evolve => evolution(cfg),
        Instability => instability(cfg),
    }
}

fn table(cfg: &RunConfig) -> Result<Outcome, Error> {
    let grid = Grid::periodic(cfg.l, cfg.n)?;
    let report = match negativity_table(&cfg.p_list, &grid) {
        Err(e @ Error::DualPathMismatch { .. }) => {
            eprintln!("consistency failure: {e} (tolerance 1e-6)");
            return Ok(Outcome {
                code: EXIT_CONSISTENCY,
                files: Vec::new(),
            });
        }
        r => r?,
    };
    for r in &report.rows {
        println!(
            "p = {:<6} c0 = {:.10}  <S''Gamma, Gamma> = {:.6}",
            r.p, r.c0, r.form_value
        );
    }
    let mut w = Writer::new(cfg)?;
    match cfg.format {
        Format::Csv => {
            let rows: Vec<Vec<String>> = report
                .rows
                .iter()
                .map(|r| {
                    vec![
                        r.p.to_string(),
                        num(r.c0),
                        num(r.form_value),
                        r.negative.to_string(),
                        num(r.form_value_operator),
                        num(r.dual_path_gap),
                        r.points.to_string(),
                    ]
                })
                .collect();
            w.csv(
                "table",
                &[
                    "p",
                    "c0",
                    "form_value",
                    "negative",
                    "form_value_operator",
                    "dual_path_gap",
                    "points",
                ],
                &rows,
            )?;
        }
        Format::Json => w.json("table", &report)?,
    }
    let code = if report.all_negative() {
        EXIT_OK
    } else {
        eprintln!(
            "claim failure: non-negative form at p = {:?}",
            report.failing_rows()
        );
        EXIT_CLAIM
    };
    Ok(w.done(code))
}

fn identities(cfg: &RunConfig) -> Result<Outcome, Error> {
    let gs = GroundState::critical(cfg.p)?;
    // slowly decaying profiles (p near 4) need a wider box than the default
    let grid = Grid::periodic(cfg.l.max(gs.decay_length(1e-17)), cfg.n)?;
    let report = closed_form_identities_on(&gs, &grid);
    const TOL: f64 = 1e-8;
    for r in &report.records {
        println!(
            "{:<12} closed {:.15e}  quadrature {:.15e}  rel {:.2e}",
            r.name, r.closed_form, r.quadrature, r.rel_error
        );
    }
    let mut w = Writer::new(cfg)?;
    match cfg.format {
        Format::Csv => {
            let rows: Vec<Vec<String>> = report
                .records
                .iter()
                .map(|r| {
                    vec![
                        r.name.to_string(),
                        num(r.closed_form),
                        num(r.quadrature),
                        num(r.rel_error),
                    ]
                })
                .collect();
            w.csv(
                "identities",
                &["name", "closed_form", "quadrature", "rel_error"],
                &rows,
            )?;
        }
        Format::Json => w.json("identities", &report)?,
    }
    let worst = report.max_rel_error();
    let code = if worst < TOL {
        EXIT_OK
    } else {
        eprintln!("claim failure: identity rel error {worst:.3e} >= {TOL:e}");
        EXIT_CLAIM
    };
    Ok(w.done(code))
}

#[derive(Serialize)]
struct SpectrumSummary {
    p: f64,
    c: f64,
    half_width: f64,
    points: usize,
    eigenvalues: Vec<f64>,
    raw_negative_count: usize,
    negative_count: usize,
    kernel_index: usize,
    kernel_eigenvalue: f64,
    kernel_overlap: f64,
    spectral_scale: f64,
    essential_edge: f64,
}

fn spectral(cfg: &RunConfig) -> Result<Outcome, Error> {
    let gs = GroundState::critical(cfg.p)?;
    let grid = Grid::dirichlet(cfg.l, cfg.n)?;
    let s = spectrum(&gs, &grid, 6)?;
    println!(
        "negative eigenvalues: {} (kernel eigenvalue {:.3e}, overlap with phi' {:.6})",
        s.negative_count, s.kernel_eigenvalue, s.kernel_overlap
    );
    let mut w = Writer::new(cfg)?;
    match cfg.format {
        Format::Csv => {
            let rows: Vec<Vec<String>> = s
                .eigenvalues
                .iter()
                .enumerate()
                .map(|(k, e)| vec![k.to_string(), num(*e), (k == s.kernel_index).to_string()])
                .collect();
            w.csv("spectrum", &["index", "eigenvalue", "kernel"], &rows)?;
        }
        Format::Json => w.json(
            "spectrum",
            SpectrumSummary {
                p: s.p,
                c: s.c,
                half_width: s.half_width,
                points: s.points,
                eigenvalues: s.eigenvalues.clone(),
                raw_negative_count: s.raw_negative_count,
                negative_count: s.negative_count,
                kernel_index: s.kernel_index,
                kernel_eigenvalue: s.kernel_eigenvalue,
                kernel_overlap: s.kernel_overlap,
                spectral_scale: s.spectral_scale,
                essential_edge: s.essential_edge,
            },
        )?,
    }
    let code = if s.negative_count == 1 {
        EXIT_OK
    } else {
        eprintln!(
            "claim failure: {} negative eigenvalues, expected 1",
            s.negative_count
        );
        EXIT_CLAIM
    };
    Ok(w.done(code))
}

fn coercivity(cfg: &RunConfig) -> Result<Outcome, Error> {
    let gs = GroundState::critical(cfg.p)?;
    let grid = Grid::dirichlet(cfg.l, cfg.n)?;
    let constraints = [
        ("dx_phi", gs.profile_dx(&grid)),
        ("kappa", kappa_closed_form(&gs, &grid)),
    ];
    let r = constrained_form_minimum(&gs, &grid, &constraints)?;
    println!(
        "constrained minimum {:.6e} (threshold {:.3e}, unconstrained {:.6e})",
        r.constrained_min,
        r.threshold(),
        r.raw_min
    );
    let mut w = Writer::new(cfg)?;
    match cfg.format {
        Format::Csv => w.csv(
            "coercivity",
            &[
                "p",
                "c",
                "constrained_min",
                "threshold",
                "raw_min",
                "essential_edge",
                "coercive",
            ],
            &[vec![
                r.p.to_string(),
                num(r.c),
                num(r.constrained_min),
                num(r.threshold()),
                num(r.raw_min),
                num(r.essential_edge),
                r.is_coercive().to_string(),
            ]],
        )?,
        Format::Json => w.json("coercivity", &r)?,
    }
    let code = if r.is_coercive() {
        EXIT_OK
    } else {
        eprintln!(
            "claim failure: constrained minimum {:.3e} <= {:.3e}",
            r.constrained_min,
            r.threshold()
        );
        EXIT_CLAIM
    };
    Ok(w.done(code))
}

#[derive(Serialize)]
struct EvolveSummary<'a> {
    times: &'a [f64],
    energy: &'a [f64],
    momentum: &'a [f64],
    energy_drift: f64,
    momentum_drift: f64,
    h1_final: f64,
}

fn evolution(cfg: &RunConfig) -> Result<Outcome, Error> {
    const DRIFT_TOL: f64 = 1e-8;
    let gs = GroundState::critical(cfg.p)?;
    let grid = Grid::periodic(cfg.l, cfg.n)?;
    let sim = SimulationConfig {
        dt: cfg.dt,
        t_end: cfg.t_end,
        ..SimulationConfig::new(grid, cfg.p)
    };
    let u0 = gs.profile(&grid).scaled(1.0 - cfg.a);
    let traj = evolve(&u0, &sim)?;
    let (de, dq) = (traj.energy_drift(), traj.momentum_drift());
    println!("E drift {de:.3e}  Q drift {dq:.3e}  frames {}", traj.len());
    let mut w = Writer::new(cfg)?;
    match cfg.format {
        Format::Csv => {
            let rows: Vec<Vec<String>> = (0..traj.len())
                .map(|k| {
                    vec![
                        num(traj.times[k]),
                        num(traj.energy[k]),
                        num(traj.momentum[k]),
                    ]
                })
                .collect();
            w.csv("conserved", &["t", "E", "Q"], &rows)?;
        }
        Format::Json => w.json(
            "conserved",
            EvolveSummary {
                times: &traj.times,
                energy: &traj.energy,
                momentum: &traj.momentum,
                energy_drift: de,
                momentum_drift: dq,
                h1_final: h1_norm(traj.final_state())?,
            },
        )?,
    }
    let mut bin = Vec::new();
    traj.write_binary(&mut bin)?;
    w.put("trajectory.bin", &bin)?;
    let code = if de < DRIFT_TOL && dq < DRIFT_TOL {
        EXIT_OK
    } else {
        eprintln!("consistency failure: drift E {de:.3e}, Q {dq:.3e} (tolerance {DRIFT_TOL:e})");
        EXIT_CONSISTENCY
    };
    Ok(w.done(code))
}

fn instability(cfg: &RunConfig) -> Result<Outcome, Error> {
    let gs = GroundState::critical(cfg.p)?;
    let grid = Grid::periodic(cfg.l, cfg.n)?;
    let mut exp = ExperimentConfig::new(grid, &gs);
    exp.dt = cfg.dt;
    exp.t_end = cfg.t_end;
    exp.record_every = ((0.5 / cfg.dt).round() as usize).max(1);
    if let Some(r) = cfg.r {
        exp.r = r;
    }
    let report = instability_experiment(&gs, cfg.a, &exp)?;
    println!(
        "beta(u0) = {:.6e} (first order {:.6e}); {}",
        report.beta_initial, report.beta_first_order, report.verdict.summary
    );
    if let Some(t) = report.tube_exit_time {
        println!("left the tube at t = {t}");
    }
    let mut w = Writer::new(cfg)?;
    match cfg.format {
        Format::Csv => {
            let rows: Vec<Vec<String>> = report
                .frames
                .iter()
                .map(|f| {
                    [f.t, f.lambda, f.y, f.xi_h1, f.i, f.i1, f.i2]
                        .map(num)
                        .to_vec()
                })
                .collect();
            w.csv(
                "instability",
                &["t", "lambda", "y", "xi_h1", "I", "I1", "I2"],
                &rows,
            )?;
        }
        Format::Json => w.json("instability", &report)?,
    }
    Ok(w.done(EXIT_OK))
}
