//! Command-line flags and the optional TOML config file.
//!
//! Every flag may also be given in the config file under its long name, e.g.
//! `refine-factor = 4` or `eps = [0.02, 0.01]`. A flag on the command line
//! always wins over the file.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use exit_mlmc::{Estimator, ExitTimeProfile, Preset, SplitRule};

use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "exit-mlmc",
    version,
    about = "Multilevel Monte Carlo for exit times of stopped diffusions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fixed-sample diagnostics per level: variance, mean correction, cost, kurtosis.
    Levels(LevelsArgs),
    /// Adaptive estimation to one or more target accuracies.
    Run(RunArgs),
    /// Prints the analytic expected exit time at a point.
    Reference(ReferenceArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Key-value TOML file with defaults for any of these flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// cube3d, cube1d or ball3d.
    #[arg(long)]
    pub problem: Option<Preset>,
    /// How the exit time is expressed: terminal-time or unit-running.
    #[arg(long)]
    pub payoff: Option<ExitTimeProfile>,
    /// Comma-separated list from orig, new1, new2, or `all`.
    #[arg(long)]
    pub estimator: Option<EstimatorList>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output CSV path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Coarsest timestep.
    #[arg(long)]
    pub h0: Option<f64>,
    #[arg(long = "refine-factor")]
    pub refine_factor: Option<u32>,
    /// two_pow_ell, two_pow_ell_over_sqrt_ell or constant:M.
    #[arg(long = "m-rule")]
    pub m_rule: Option<SplitRule>,
}

#[derive(Debug, Args)]
pub struct LevelsArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Levels as `0-4` or `0,1,2`.
    #[arg(long)]
    pub levels: Option<LevelList>,
    /// Samples per level.
    #[arg(long)]
    pub samples: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated target RMS errors.
    #[arg(long)]
    pub eps: Option<EpsList>,
    /// Pilot samples on each of the levels 0..=min-level.
    #[arg(long)]
    pub samples: Option<u64>,
    #[arg(long = "min-level")]
    pub min_level: Option<u32>,
    #[arg(long = "max-level")]
    pub max_level: Option<u32>,
    /// Weak order for the bias test; defaults per estimator.
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReferenceArgs {
    /// cube3d or cube1d.
    #[arg(long, default_value = "cube3d")]
    pub problem: Preset,
    /// Comma-separated coordinates.
    #[arg(long, default_value = "0,0,0", allow_hyphen_values = true)]
    pub point: PointArg,
    #[arg(long, default_value_t = 0.0)]
    pub t: f64,
    /// Largest odd mode index per direction.
    #[arg(long, default_value_t = 39)]
    pub truncation: u32,
    /// Sum the plain cosine series instead of the steady/transient split.
    #[arg(long)]
    pub series: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorList(pub Vec<Estimator>);

impl FromStr for EstimatorList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.trim() == "all" {
            return Ok(Self(Estimator::ALL.to_vec()));
        }
        let list = s
            .split(',')
            .map(|p| p.trim().parse::<Estimator>().map_err(|e| e.to_string()))
            .collect::<Result<Vec<_>, _>>()?;
        if list.is_empty() {
            return Err("empty estimator list".into());
        }
        Ok(Self(list))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelList(pub Vec<u32>);

impl FromStr for LevelList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = |_| format!("bad level list `{s}`");
        let s = s.trim();
        let range = s.split_once("..=").or_else(|| s.split_once('-'));
        let list: Vec<u32> = match range {
            Some((a, b)) => {
                let (a, b) = (a.trim().parse().map_err(bad)?, b.trim().parse().map_err(bad)?);
                if a > b {
                    return Err(format!("empty level range `{s}`"));
                }
                (a..=b).collect()
            }
            None => s
                .split(',')
                .map(|p| p.trim().parse().map_err(bad))
                .collect::<Result<_, _>>()?,
        };
        Ok(Self(list))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsList(pub Vec<f64>);

impl FromStr for EpsList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let list: Vec<f64> = s
            .trim_matches(|c| c == '[' || c == ']')
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad epsilon `{p}`")))
            .collect::<Result<_, _>>()?;
        if let Some(e) = list.iter().find(|e| !(**e > 0.0)) {
            return Err(format!("epsilon must be positive, got {e}"));
        }
        Ok(Self(list))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointArg(pub Vec<f64>);

impl FromStr for PointArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad coordinate `{p}`")))
            .collect::<Result<_, _>>()
            .map(Self)
    }
}

/// Config file values, flattened to the strings the flags would carry.
#[derive(Debug, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

const KNOWN_KEYS: &[&str] = &[
    "problem",
    "payoff",
    "estimator",
    "seed",
    "threads",
    "out",
    "h0",
    "refine-factor",
    "m-rule",
    "levels",
    "samples",
    "eps",
    "min-level",
    "max-level",
    "alpha",
];

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| e.message().to_string())?;
        let mut values = BTreeMap::new();
        for (key, value) in table {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(format!("unknown key `{key}`"));
            }
            values.insert(key, flatten(&value)?);
        }
        Ok(Self { values })
    }

    /// The flag value if given, else the file value parsed the same way.
    pub fn pick<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.values
            .get(key)
            .map(|raw| {
                raw.parse::<T>()
                    .map_err(|e| CliError::Config(format!("config key `{key}`: {e}")))
            })
            .transpose()
    }
}

fn flatten(value: &toml::Value) -> Result<String, String> {
    match value {
        toml::Value::String(s) => Ok(s.clone()),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(f.to_string()),
        toml::Value::Boolean(b) => Ok(b.to_string()),
        toml::Value::Array(items) => Ok(items.iter().map(flatten).collect::<Result<Vec<_>, _>>()?.join(",")),
        other => Err(format!("unsupported value {other}")),
    }
}
