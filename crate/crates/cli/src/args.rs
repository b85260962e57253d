use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ltrf::intervals::BoundaryMode;
use ltrf::renumber::BankMapping;
use ltrf::rfsim::{Design, TraceKnobs};
use ltrf::{ExactRegisterFileConfig, Multiplier, Scalar};
use serde::Serialize;

use crate::fail::{CmdResult, Failure};

#[derive(Debug, Parser)]
#[command(name = "ltrf", version, about = "Register-interval compiler passes and a two-level register file simulator")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a program and print its CFG with liveness.
    Parse(InputArgs),
    /// Form register-intervals and emit the prefetch-annotated program.
    Intervals(InputArgs),
    /// Renumber registers to remove prefetch bank conflicts.
    Renumber(RenumberArgs),
    /// Generate traces and simulate one or more register file designs.
    Simulate(SimulateArgs),
    /// Aggregate earlier JSON outputs into CSV tables.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BankMapArg {
    Mod,
    Div,
}

impl From<BankMapArg> for BankMapping {
    fn from(m: BankMapArg) -> Self {
        match m {
            BankMapArg::Mod => BankMapping::Mod,
            BankMapArg::Div => BankMapping::Div,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BoundaryArg {
    Interval,
    Strand,
}

impl From<BoundaryArg> for BoundaryMode {
    fn from(m: BoundaryArg) -> Self {
        match m {
            BoundaryArg::Interval => BoundaryMode::RegisterInterval,
            BoundaryArg::Strand => BoundaryMode::Strand,
        }
    }
}

/// Options shared by every subcommand. Unset options fall back to
/// `--config`, then to the built-in defaults.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Registers per interval, which is also the register cache banks per warp.
    #[arg(long, global = true, value_name = "N")]
    pub max_regs_per_interval: Option<usize>,
    /// Main register file banks.
    #[arg(long, global = true)]
    pub banks: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub bank_map: Option<BankMapArg>,
    /// Registers per main bank; defaults to an even split of 256.
    #[arg(long, global = true)]
    pub regs_per_bank: Option<usize>,
    #[arg(long, global = true)]
    pub active_warps: Option<usize>,
    #[arg(long, global = true)]
    pub total_warps: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub boundary_mode: Option<BoundaryArg>,
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Register file configuration as JSON.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Directory for output artifacts; stdout only when absent.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    pub input: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RenumberArgs {
    #[arg(required_unless_present = "corpus", conflicts_with = "corpus")]
    pub input: Option<PathBuf>,
    /// Random corpus instead of an input file, e.g. "n=100 seed=7".
    #[arg(long, value_name = "SPEC")]
    pub corpus: Option<String>,
    /// Also write the interval conflict graph as Graphviz.
    #[arg(long)]
    pub dot: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    pub input: PathBuf,
    /// Comma-separated designs: BL, RFC, LTRF, LTRF_PLUS, LTRF_CONF, or "all".
    #[arg(long)]
    pub design: Option<String>,
    #[arg(long)]
    pub latency_multiplier: Option<String>,
    /// Comma-separated ascending multipliers, or "table" for the seven
    /// design-table latencies.
    #[arg(long)]
    pub sweep: Option<String>,
    /// Replay traces from a file instead of generating them.
    #[arg(long, value_name = "FILE")]
    pub traces: Option<PathBuf>,
    /// Traced warps; defaults to the total warp count.
    #[arg(long)]
    pub warps: Option<usize>,
    #[arg(long)]
    pub min_trip: Option<u32>,
    #[arg(long)]
    pub max_trip: Option<u32>,
    #[arg(long)]
    pub branch_prob: Option<f64>,
    #[arg(long)]
    pub load_freq: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// JSON outputs of `renumber` and `simulate`, or directories holding them.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

impl Common {
    /// Register file configuration from `--config` with flags applied on top.
    pub fn register_file_config(&self) -> CmdResult<ExactRegisterFileConfig> {
        let mut cfg: ExactRegisterFileConfig = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
                serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?
            }
            None => ExactRegisterFileConfig::default(),
        };
        if let Some(n) = self.max_regs_per_interval {
            cfg.cache_banks = n;
        }
        if let Some(b) = self.banks {
            cfg.main_banks = b;
        }
        if let Some(m) = self.bank_map {
            cfg.main_bank_mapping = m.into();
        }
        if self.regs_per_bank.is_some() {
            cfg.main_registers_per_bank = self.regs_per_bank;
        }
        if let Some(a) = self.active_warps {
            cfg.active_warps = a;
        }
        if let Some(t) = self.total_warps {
            cfg.total_warps = t;
        }
        cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
        Ok(cfg)
    }

    pub fn boundary(&self) -> BoundaryMode {
        self.boundary_mode.map(Into::into).unwrap_or_default()
    }
}

impl SimulateArgs {
    pub fn designs(&self, default: Design) -> CmdResult<Vec<Design>> {
        let Some(text) = &self.design else { return Ok(vec![default]) };
        if text.eq_ignore_ascii_case("all") {
            return Ok(Design::ALL.to_vec());
        }
        text.split(',').map(|s| s.trim().parse::<Design>().map_err(Failure::usage)).collect()
    }

    pub fn multipliers(&self) -> CmdResult<Option<Vec<Multiplier>>> {
        let Some(text) = &self.sweep else { return Ok(None) };
        if text.eq_ignore_ascii_case("table") {
            return Ok(Some(ltrf::rfsim::table2_multipliers()));
        }
        let values = text.split(',').map(parse_multiplier).collect::<CmdResult<Vec<_>>>()?;
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Failure::usage("--sweep values must be strictly ascending"));
        }
        Ok(Some(values))
    }

    pub fn knobs(&self) -> CmdResult<TraceKnobs> {
        let mut k = TraceKnobs::default();
        if let Some(v) = self.min_trip {
            k.min_trip = v;
        }
        if let Some(v) = self.max_trip {
            k.max_trip = v;
        }
        if let Some(v) = self.branch_prob {
            k.branch_taken_probability = v;
        }
        if let Some(v) = self.load_freq {
            k.load_frequency = v;
        }
        k.validate()?;
        Ok(k)
    }
}

pub fn parse_multiplier(text: &str) -> CmdResult<Multiplier> {
    match Multiplier::parse_decimal(text) {
        Some(m) if m > Multiplier::from_integer(0) => Ok(m),
        _ => Err(Failure::usage(format!("bad latency multiplier {text:?}"))),
    }
}

/// `key=value` pairs separated by spaces or commas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CorpusSpec {
    pub n: usize,
    pub seed: u64,
}

impl CorpusSpec {
    pub fn parse(text: &str, default_seed: u64) -> CmdResult<Self> {
        let mut spec = CorpusSpec { n: 100, seed: default_seed };
        for item in text.split([' ', ',']).filter(|s| !s.is_empty()) {
            let (k, v) = item.split_once('=').ok_or_else(|| Failure::usage(format!("corpus option {item:?} is not key=value")))?;
            let bad = |_| Failure::usage(format!("corpus option {item:?} has a bad value"));
            match k {
                "n" => spec.n = v.parse().map_err(bad)?,
                "seed" => spec.seed = v.parse().map_err(bad)?,
                _ => return Err(Failure::usage(format!("unknown corpus option {k:?}"))),
            }
        }
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_spec() {
        assert_eq!(CorpusSpec::parse("n=100 seed=7", 1).unwrap(), CorpusSpec { n: 100, seed: 7 });
        assert_eq!(CorpusSpec::parse("n=3", 9).unwrap(), CorpusSpec { n: 3, seed: 9 });
        assert!(CorpusSpec::parse("n=x", 1).is_err());
        assert!(CorpusSpec::parse("size=3", 1).is_err());
    }

    #[test]
    fn multipliers_are_exact() {
        assert_eq!(parse_multiplier("6.3").unwrap(), Multiplier::new(63, 10));
        assert!(parse_multiplier("0").is_err());
        assert!(parse_multiplier("abc").is_err());
    }
}
