mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use commands::{error_code, EXIT_USAGE};
use config::{parse_file, parse_p_list, Command, Format, Overrides, RunConfig};

/// gBBM solitary waves at the critical speed: tables, spectra, dynamics.
#[derive(Debug, Parser)]
#[command(name = "gbbm", version)]
struct Cli {
    /// what to run
    #[arg(value_enum)]
    command: Command,

    /// nonlinearity exponent
    #[arg(long)]
    p: Option<f64>,
    /// comma-separated exponents for `table`
    #[arg(long = "p-list")]
    p_list: Option<String>,
    /// half-width of the box [-L, L]
    #[arg(long = "L")]
    l: Option<f64>,
    /// grid points
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long = "t-end")]
    t_end: Option<f64>,
    /// amplitude defect of the initial data (1 - a) phi_c
    #[arg(long)]
    a: Option<f64>,
    /// virial cutoff radius
    #[arg(long = "R")]
    r: Option<f64>,
    /// output directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// flat `key = value` file; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
}

fn usage(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("gbbm: {msg}");
    ExitCode::from(EXIT_USAGE as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind::*;
            let code = match e.kind() {
                DisplayHelp | DisplayVersion | DisplayHelpOnMissingArgumentOrSubcommand => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let p_list = match cli.p_list.as_deref().map(parse_p_list).transpose() {
        Ok(v) => v,
        Err(e) => return usage(e),
    };
    let flags = Overrides {
        p: cli.p,
        p_list,
        l: cli.l,
        n: cli.n,
        dt: cli.dt,
        t_end: cli.t_end,
        a: cli.a,
        r: cli.r,
        out: cli.out,
        format: cli.format,
    };
    let file = match cli.config.as_deref().map(parse_file).transpose() {
        Ok(f) => f.unwrap_or_default(),
        Err(e) => return usage(e),
    };
    let cfg = match RunConfig::resolve(cli.command, flags.over(file)) {
        Ok(c) => c,
        Err(e) => return usage(e),
    };
    match commands::run(&cfg) {
        Ok(out) => {
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            ExitCode::from(out.code as u8)
        }
        Err(e) => {
            eprintln!("gbbm: {e}");
            ExitCode::from(error_code(&e) as u8)
        }
    }
}
