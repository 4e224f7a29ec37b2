use std::ops::RangeInclusive;
use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use deformcert::verifier::Method;
use deformcert::{AttackBudget, Norm};

#[derive(Debug, Parser)]
#[command(name = "deformcert", version, about = "Certify classifiers against smooth image deformations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write per-pixel interval bounds, one JSON file per image.
    Bounds(BoundsArgs),
    /// Certify images and write one report per line plus a summary.
    Certify(CertifyArgs),
    /// Search for label-changing deformations by sampling.
    Attack(AttackArgs),
    /// Estimate how much of each interval sampled deformations reach.
    Coverage(CoverageArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Idx,
    TensorJson,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Image file: IDX3 or tensor JSON (one tensor or an array of them).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Dataset format; guessed from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// ℓ_p norm of each displacement: 1, 2 or inf.
    #[arg(long, default_value = "inf")]
    pub norm: Norm,
    #[arg(long)]
    pub delta: f64,
    /// Flow bound between neighbouring displacements, or "inf".
    #[arg(long, default_value = "inf", value_parser = parse_gamma)]
    pub gamma: f64,
    /// Inclusive image index range such as `0..9`, or a single index.
    #[arg(long, value_parser = parse_range)]
    pub images: Option<RangeInclusive<usize>>,
    /// Output path: a directory for `bounds`, a JSON-lines file otherwise
    /// (standard output when omitted).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, env = "DEFORMCERT_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct BoundsArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub common: Common,
    /// Network JSON.
    #[arg(long)]
    pub network: PathBuf,
    #[arg(long, default_value = "deeppoly")]
    pub method: Method,
    /// Per-image MILP budget in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    /// Bounding planes JSON; fitted per image when omitted.
    #[arg(long)]
    pub planes: Option<PathBuf>,
    /// IDX label file; the network's prediction is used when omitted.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AttackArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub network: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct CoverageArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_gamma(text: &str) -> Result<f64, String> {
    let gamma = deformcert::parse_gamma(text).map_err(|e| e.to_string())?;
    if gamma > 0.0 {
        Ok(gamma)
    } else {
        Err(format!("gamma must be positive, got {text}"))
    }
}

fn parse_range(text: &str) -> Result<RangeInclusive<usize>, String> {
    let num = |s: &str| s.trim().parse::<usize>().map_err(|_| format!("bad image index {s:?}"));
    let range = match text.split_once("..") {
        Some((a, b)) => num(a)?..=num(b.trim_start_matches('='))?,
        None => num(text)?..=num(text)?,
    };
    if range.is_empty() {
        return Err(format!("empty image range {text:?}"));
    }
    Ok(range)
}

impl Common {
    pub fn budget(&self) -> Result<AttackBudget, String> {
        AttackBudget::new(self.norm, self.delta, self.gamma).map_err(|e| e.to_string())
    }

    pub fn format(&self) -> Format {
        self.format.unwrap_or_else(|| {
            match self.dataset.extension().and_then(|e| e.to_str()) {
                Some("json") => Format::TensorJson,
                _ => Format::Idx,
            }
        })
    }
}

impl CertifyArgs {
    pub fn timeout(&self) -> Result<Option<Duration>, String> {
        match self.timeout {
            None => Ok(None),
            Some(t) if t > 0.0 && t.is_finite() => Ok(Some(Duration::from_secs_f64(t))),
            Some(t) => Err(format!("timeout must be a positive number of seconds, got {t}")),
        }
    }
}
