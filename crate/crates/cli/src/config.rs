use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    Estimate,
    InvertInfo,
    Reproduce,
    Kstest,
}

/// Simulation, estimation and reporting for regime-switching conditional
/// Markov jump processes.
#[derive(Debug, Parser)]
#[command(name = "rscmjp", version)]
pub struct Cli {
    /// Command to run; may be given by the `command` field of --config instead.
    pub command: Option<Command>,

    /// JSON run configuration. Flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Parameter file (truth for simulate/reproduce, start or evaluation point otherwise).
    #[arg(long)]
    pub model: Option<PathBuf>,

    /// Sufficient-statistics CSV.
    #[arg(long)]
    pub stats: Option<PathBuf>,

    /// Values to test (kstest); whitespace, comma or newline separated.
    #[arg(long)]
    pub input: Option<PathBuf>,

    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long)]
    pub n_paths: Option<usize>,

    #[arg(long)]
    pub horizon: Option<f64>,

    #[arg(long)]
    pub replicates: Option<usize>,

    /// Number of regimes to fit when no --model is given.
    #[arg(long)]
    pub regimes: Option<usize>,

    /// em, em-gradient or fisher-scoring.
    #[arg(long)]
    pub method: Option<String>,

    #[arg(long)]
    pub tol: Option<f64>,

    #[arg(long)]
    pub max_iter: Option<usize>,

    /// Iteration budget of the Psi recursion.
    #[arg(long)]
    pub psi_iters: Option<usize>,

    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub model: Option<PathBuf>,
    pub stats: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub seed: Option<u64>,
    pub n_paths: Option<usize>,
    pub horizon: Option<f64>,
    pub replicates: Option<usize>,
    pub regimes: Option<usize>,
    pub method: Option<String>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub psi_iters: Option<usize>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

fn rebase(base: &Path, p: Option<PathBuf>) -> Option<PathBuf> {
    p.map(|p| if p.is_absolute() { p } else { base.join(p) })
}

impl RunConfig {
    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.model = rebase(base, cfg.model);
        cfg.stats = rebase(base, cfg.stats);
        cfg.input = rebase(base, cfg.input);
        cfg.out = rebase(base, cfg.out);
        Ok(cfg)
    }

    pub fn from_cli(cli: Cli) -> Result<Self> {
        let file = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let cfg = RunConfig {
            command: cli.command.or(file.command),
            model: cli.model.or(file.model),
            stats: cli.stats.or(file.stats),
            input: cli.input.or(file.input),
            seed: cli.seed.or(file.seed),
            n_paths: cli.n_paths.or(file.n_paths),
            horizon: cli.horizon.or(file.horizon),
            replicates: cli.replicates.or(file.replicates),
            regimes: cli.regimes.or(file.regimes),
            method: cli.method.or(file.method),
            tol: cli.tol.or(file.tol),
            max_iter: cli.max_iter.or(file.max_iter),
            psi_iters: cli.psi_iters.or(file.psi_iters),
            out: cli.out.or(file.out),
            threads: cli.threads.or(file.threads),
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        if self.n_paths == Some(0) {
            bail!("--n-paths must be at least 1");
        }
        if self.replicates == Some(0) {
            bail!("--replicates must be at least 1");
        }
        if self.regimes == Some(0) {
            bail!("--regimes must be at least 1");
        }
        if let Some(h) = self.horizon {
            if !(h > 0.0 && h.is_finite()) {
                bail!("--horizon must be positive and finite");
            }
        }
        if let Some(t) = self.tol {
            if !(t >= 0.0) {
                bail!("--tol must be non-negative");
            }
        }
        if self.threads == Some(0) {
            bail!("--threads must be at least 1");
        }
        if self.psi_iters == Some(0) {
            bail!("--psi-iters must be at least 1");
        }
        Ok(())
    }

    pub fn out_dir(&self) -> Result<PathBuf> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    pub fn require<'a>(&self, field: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        match field {
            Some(p) => Ok(p.as_path()),
            None => bail!("{flag} is required for this command"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"command":"simulate","seed":3,"n_paths":10,"model":"m.json"}"#).unwrap();
        let cli = Cli::parse_from(["rscmjp", "--config", path.to_str().unwrap(), "--seed", "9"]);
        let cfg = RunConfig::from_cli(cli).unwrap();
        assert_eq!(cfg.command, Some(Command::Simulate));
        assert_eq!(cfg.seed, Some(9));
        assert_eq!(cfg.n_paths, Some(10));
        assert_eq!(cfg.model.unwrap(), dir.path().join("m.json"));
    }

    #[test]
    fn unknown_fields_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"command":"simulate","sede":3}"#).unwrap();
        assert!(RunConfig::load(&path).is_err());
    }

    #[test]
    fn invalid_numbers_rejected() {
        let cli = Cli::parse_from(["rscmjp", "simulate", "--n-paths", "0"]);
        assert!(RunConfig::from_cli(cli).is_err());
    }
}
