//! `gibbs-uniq`: uniqueness regions and sampler runs from a TOML config.
//!
//! Exit codes: 0 success, 1 computational failure, 2 configuration error.

mod commands;
mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Table;
use crate::config::load_config;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Core(#[from] gibbs_uniqueness::Error),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_computational() => 1,
            CliError::Io { .. } => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gibbs-uniq", version, about = "Uniqueness regions for Gibbs point processes")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overrides `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed, overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads, 0 for all cores.
    #[arg(long, global = true, env = "GIBBS_UNIQ_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Mayer integral over the beta grid.
    Mayer,
    /// Activity bounds of every configured method over the beta grid.
    Regions,
    /// Fixed-mesh activity bound for each mesh, both sum modes.
    ZbarA,
    /// Convergence of the discretised kernel integral as the mesh shrinks.
    CheckA3,
    /// One Metropolis-Hastings chain.
    Simulate,
    /// Empty versus dense boundary on growing windows.
    Probe,
}

/// Writes via a temporary file in the same directory, then renames.
fn write_atomic(path: &Path, header: &str, rows: &[String]) -> Result<(), CliError> {
    let io = |source| CliError::Io { path: path.to_path_buf(), source };
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        writeln!(w, "{header}").map_err(io)?;
        for r in rows {
            writeln!(w, "{r}").map_err(io)?;
        }
        w.flush().map_err(io)?;
    }
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli.config.as_deref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = load_config(path)?;
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| CliError::Config(format!("threads: {e}")))?;
    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| CliError::Config(format!("output_dir {} is not writable: {e}", cfg.output_dir.display())))?;

    let table: Table = match cli.command {
        Command::Mayer => commands::mayer(&cfg)?,
        Command::Regions => commands::regions(&cfg)?,
        Command::ZbarA => commands::zbar_a(&cfg)?,
        Command::CheckA3 => commands::check_a3(&cfg)?,
        Command::Simulate => commands::simulate(&cfg)?,
        Command::Probe => commands::probe(&cfg)?,
    };
    let target = cfg.output_dir.join(table.file);
    write_atomic(&target, table.header, &table.rows)?;
    let note = if table.note.is_empty() { String::new() } else { format!("; {}", table.note) };
    println!("wrote {} ({} rows{note})", target.display(), table.rows.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gibbs-uniq: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gibbs_uniqueness::Error;

    #[test]
    fn exit_codes_follow_the_error_class() {
        let quad = CliError::Core(Error::QuadratureFailure { estimate: 1.0, tolerance: 1e-9 });
        assert_eq!(quad.exit_code(), 1);
        assert_eq!(CliError::Core(Error::Bisection("x".into())).exit_code(), 1);
        assert_eq!(CliError::Core(Error::Integrability("x".into())).exit_code(), 1);
        assert_eq!(CliError::Core(Error::Unsupported("x".into())).exit_code(), 2);
        assert_eq!(CliError::Core(Error::InvalidArgument("x".into())).exit_code(), 2);
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
    }

    #[test]
    fn atomic_write_leaves_only_the_target() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_atomic(&path, "a,b", &["1,2".into()]).unwrap();
        write_atomic(&path, "a,b", &["3,4".into()]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "a,b\n3,4\n");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
