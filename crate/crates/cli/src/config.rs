//! Run configuration: defaults, flat `key = value` files, flag overrides.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

pub const DEFAULT_P_LIST: [f64; 10] = [4.1, 4.5, 5.0, 6.0, 6.5, 10.0, 30.0, 50.0, 70.0, 100.0];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}:{line}: expected `key = value`")]
    Syntax { path: String, line: usize },
    #[error("{path}:{line}: unknown key `{key}`")]
    UnknownKey {
        path: String,
        line: usize,
        key: String,
    },
    #[error("bad value for `{key}`: {value:?}")]
    BadValue { key: String, value: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Json => "json",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Table,
    Identities,
    Spectrum,
    Coercivity,
    Evolve,
    Instability,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Table => "table",
            Command::Identities => "identities",
            Command::Spectrum => "spectrum",
            Command::Coercivity => "coercivity",
            Command::Evolve => "evolve",
            Command::Instability => "instability",
        }
    }
}

/// Values that can come from a file or from flags. `None` = not given.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub p: Option<f64>,
    pub p_list: Option<Vec<f64>>,
    pub l: Option<f64>,
    pub n: Option<usize>,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub a: Option<f64>,
    pub r: Option<f64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

impl Overrides {
    /// `self` wins wherever it is set.
    pub fn over(self, base: Overrides) -> Overrides {
        Overrides {
            p: self.p.or(base.p),
            p_list: self.p_list.or(base.p_list),
            l: self.l.or(base.l),
            n: self.n.or(base.n),
            dt: self.dt.or(base.dt),
            t_end: self.t_end.or(base.t_end),
            a: self.a.or(base.a),
            r: self.r.or(base.r),
            out: self.out.or(base.out),
            format: self.format.or(base.format),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
    })
}

pub fn parse_p_list(value: &str) -> Result<Vec<f64>, ConfigError> {
    let value = value.trim();
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|s| parse_num("p_list", s)).collect()
}

/// Reads a flat config file. Blank lines and `#` comments are skipped; keys
/// accept `-` or `_`.
pub fn parse_file(path: &Path) -> Result<Overrides, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.display().to_string(),
        source,
    })?;
    parse_text(&text, &path.display().to_string())
}

pub fn parse_text(text: &str, origin: &str) -> Result<Overrides, ConfigError> {
    let mut o = Overrides::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax {
            path: origin.into(),
            line: i + 1,
        })?;
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        match key.as_str() {
            "p" => o.p = Some(parse_num(&key, value)?),
            "p_list" => o.p_list = Some(parse_p_list(value)?),
            "L" => o.l = Some(parse_num(&key, value)?),
            "N" => o.n = Some(parse_num(&key, value)?),
            "dt" => o.dt = Some(parse_num(&key, value)?),
            "t_end" => o.t_end = Some(parse_num(&key, value)?),
            "a" => o.a = Some(parse_num(&key, value)?),
            "R" => o.r = Some(parse_num(&key, value)?),
            "out" => o.out = Some(PathBuf::from(value)),
            "format" => {
                o.format = Some(match value {
                    "csv" => Format::Csv,
                    "json" => Format::Json,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key,
                            value: value.into(),
                        })
                    }
                })
            }
            _ => {
                return Err(ConfigError::UnknownKey {
                    path: origin.into(),
                    line: i + 1,
                    key,
                })
            }
        }
    }
    Ok(o)
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub p: f64,
    pub p_list: Vec<f64>,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub dt: f64,
    pub t_end: f64,
    pub a: f64,
    /// cutoff radius; `None` means ten soliton widths
    #[serde(rename = "R")]
    pub r: Option<f64>,
    pub out: PathBuf,
    pub format: Format,
}

impl RunConfig {
    pub fn resolve(command: Command, o: Overrides) -> Result<Self, ConfigError> {
        let cfg = RunConfig {
            command,
            p: o.p.unwrap_or(5.0),
            p_list: o.p_list.unwrap_or_else(|| DEFAULT_P_LIST.to_vec()),
            l: o.l.unwrap_or(50.0 * std::f64::consts::PI),
            n: o.n.unwrap_or(8192),
            dt: o.dt.unwrap_or(1e-3),
            t_end: o.t_end.unwrap_or(20.0),
            a: o.a.unwrap_or(match command {
                Command::Instability => 0.01,
                _ => 0.0,
            }),
            r: o.r,
            out: o.out.unwrap_or_else(|| PathBuf::from("out")),
            format: o.format.unwrap_or(Format::Csv),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.command == Command::Table {
            if self.p_list.is_empty() {
                return bad("p_list is empty".into());
            }
            if let Some(p) = self.p_list.iter().find(|p| !(**p > 4.0 && p.is_finite())) {
                return bad(format!("every p must exceed 4, got {p}"));
            }
        } else if !(self.p > 4.0 && self.p.is_finite()) {
            return bad(format!("p must exceed 4, got {}", self.p));
        }
        if !(self.l > 0.0 && self.l.is_finite()) {
            return bad(format!("L must be positive, got {}", self.l));
        }
        if self.n < 16 {
            return bad(format!("N must be at least 16, got {}", self.n));
        }
        if !(self.dt > 0.0 && self.t_end > 0.0 && self.dt <= self.t_end) {
            return bad(format!(
                "need 0 < dt <= t_end, got dt={} t_end={}",
                self.dt, self.t_end
            ));
        }
        if !(0.0..=0.05).contains(&self.a) {
            return bad(format!("a must lie in [0, 0.05], got {}", self.a));
        }
        if let Some(r) = self.r {
            if !(r > 0.0 && 2.0 * r < self.l) {
                return bad(format!("R must satisfy 0 < 2R < L, got R={r}"));
            }
        }
        Ok(())
    }

    /// `key=value` lines, in a fixed order.
    pub fn lines(&self) -> Vec<String> {
        let list: Vec<String> = self.p_list.iter().map(|p| p.to_string()).collect();
        vec![
            format!("command={}", self.command.name()),
            format!("p={}", self.p),
            format!("p_list={}", list.join(",")),
            format!("L={}", self.l),
            format!("N={}", self.n),
            format!("dt={}", self.dt),
            format!("t_end={}", self.t_end),
            format!("a={}", self.a),
            format!("R={}", self.r.map_or("auto".into(), |r| r.to_string())),
            format!("out={}", self.out.display()),
            format!("format={}", self.format),
        ]
    }
}
