//! Command settings: every flag may also be given as a key in a TOML config
//! file, with the command line taking precedence.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Field-wise "command line, else config file".
pub trait Merge {
    fn merge(self, fallback: Self) -> Self;
}

macro_rules! settings {
    ($(#[$meta:meta])* $name:ident { $($(#[$fmeta:meta])* $field:ident : $ty:ty),* $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
        #[serde(rename_all = "kebab-case")]
        pub struct $name {
            $($(#[$fmeta])* pub $field: Option<$ty>,)*
        }

        impl Merge for $name {
            fn merge(self, fallback: Self) -> Self {
                Self { $($field: self.$field.or(fallback.$field),)* }
            }
        }
    };
}

settings!(
    /// Tick ingestion and discretization.
    IngestArgs {
        /// Tick CSV with `timestamp` and `price` columns.
        #[arg(long)]
        input: PathBuf,
        /// Resampling period in milliseconds [default: 60000].
        #[arg(long)]
        period_ms: i64,
        /// Number of negative return states [default: 2].
        #[arg(long)]
        z_min: u32,
        /// Number of positive return states [default: 2].
        #[arg(long)]
        z_max: u32,
        /// Grid amplitude; estimated from the returns when omitted.
        #[arg(long)]
        delta: f64,
    }
);

settings!(
    /// Discrete returns and the index built on them.
    DataArgs {
        /// Discrete return CSV (`n,state`) written by `ingest`.
        #[arg(long)]
        returns: PathBuf,
        /// Discretization map JSON [default: map.json beside the returns].
        #[arg(long)]
        map: PathBuf,
        /// Index memory m [default: 30].
        #[arg(long)]
        memory: usize,
        /// Index function: square, absolute or identity [default: square].
        #[arg(long)]
        index_function: String,
    }
);

settings!(
    /// Candidate thresholds.
    GridArgs {
        /// Number of candidate thresholds [default: 50].
        #[arg(long)]
        grid_size: usize,
        /// quantile or uniform [default: quantile].
        #[arg(long)]
        grid_mode: String,
        /// Minimum transitions on each side of a candidate [default: 100].
        #[arg(long)]
        min_exposure: u64,
        /// dp or exhaustive [default: dp].
        #[arg(long)]
        strategy: String,
    }
);

settings!(
    /// Number of change points.
    SelectArgs {
        /// Fixed number of change points [default: 1].
        #[arg(long)]
        k: usize,
        /// Choose k by an information criterion.
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        auto: bool,
        /// aic or bic [default: bic].
        #[arg(long)]
        criterion: String,
        /// Stop once the relative criterion improvement drops below this [default: 0.001].
        #[arg(long)]
        improvement_floor: f64,
        /// Largest k tried by --auto [default: 6].
        #[arg(long)]
        k_max: usize,
    }
);

settings!(
    /// Bootstrap test.
    TestArgs {
        /// Bootstrap replicates [default: 1000].
        #[arg(long)]
        bootstrap: usize,
        /// Significance levels [default: 0.05,0.01].
        #[arg(long, value_delimiter = ',')]
        alpha: Vec<f64>,
        /// Seed for all randomness (required).
        #[arg(long)]
        seed: u64,
        /// Keep the fitted thresholds fixed in every replicate.
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        fixed_psi: bool,
    }
);

settings!(
    SimulateArgs {
        /// Model JSON written by `fit`.
        #[arg(long)]
        model: PathBuf,
        /// Trajectory length, initial window included.
        #[arg(long)]
        length: usize,
        /// Seed (required).
        #[arg(long)]
        seed: u64,
        /// zeros or from-data [default: zeros].
        #[arg(long)]
        initial: String,
        /// Observed returns for --initial from-data.
        #[arg(long)]
        returns: PathBuf,
    }
);

settings!(
    FptArgs {
        /// Model JSON written by `fit`.
        #[arg(long)]
        model: PathBuf,
        /// Target regime, 1 = calmest.
        #[arg(long)]
        target_regime: usize,
        /// Horizon N.
        #[arg(long)]
        horizon: usize,
        /// Use the exact window-state recursion.
        #[arg(long, num_args = 0..=1, default_missing_value = "true", conflicts_with = "mc")]
        exact: bool,
        /// Use Monte Carlo with this many replicates.
        #[arg(long)]
        mc: usize,
        /// Seed for --mc.
        #[arg(long)]
        seed: u64,
        /// Comma-separated states, oldest first, or `from-data`.
        #[arg(long)]
        window: String,
        /// Observed returns for --window from-data.
        #[arg(long)]
        returns: PathBuf,
    }
);

settings!(
    AcfArgs {
        /// Largest lag [default: 1000].
        #[arg(long)]
        max_lag: usize,
    }
);

/// Flat key-value table loaded from `--config`.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    table: toml::Table,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))
            .map_err(CliError::Input)?;
        let table: toml::Table = text
            .parse()
            .with_context(|| format!("invalid config file {}", path.display()))
            .map_err(CliError::Input)?;
        let known = known_keys();
        let unknown: Vec<&String> = table.keys().filter(|k| !known.contains(k.as_str())).collect();
        if !unknown.is_empty() {
            return Err(CliError::Input(anyhow!(
                "unknown key(s) in {}: {}",
                path.display(),
                unknown.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            )));
        }
        Ok(Self { table })
    }

    /// Command-line values, with the config file filling the gaps.
    pub fn resolve<T: Merge + DeserializeOwned>(&self, cli: T) -> Result<T, CliError> {
        let from_file: T = toml::Value::Table(self.table.clone())
            .try_into()
            .map_err(|e| CliError::Input(anyhow!("config file: {e}")))?;
        Ok(cli.merge(from_file))
    }

    /// `--out`, else the `out` key.
    pub fn out(&self, cli: Option<PathBuf>) -> Result<Option<PathBuf>, CliError> {
        match (cli, self.table.get("out")) {
            (Some(p), _) => Ok(Some(p)),
            (None, Some(toml::Value::String(s))) => Ok(Some(PathBuf::from(s))),
            (None, Some(_)) => Err(CliError::Input(anyhow!("config key `out` must be a string"))),
            (None, None) => Ok(None),
        }
    }
}

fn keys_of<T: Serialize + Default>() -> Vec<String> {
    match serde_json::to_value(T::default()) {
        Ok(serde_json::Value::Object(map)) => map.keys().cloned().collect(),
        _ => Vec::new(),
    }
}

fn known_keys() -> BTreeSet<String> {
    [
        keys_of::<IngestArgs>(),
        keys_of::<DataArgs>(),
        keys_of::<GridArgs>(),
        keys_of::<SelectArgs>(),
        keys_of::<TestArgs>(),
        keys_of::<SimulateArgs>(),
        keys_of::<FptArgs>(),
        keys_of::<AcfArgs>(),
    ]
    .into_iter()
    .flatten()
    .chain(["out".to_string()])
    .collect()
}

/// SHA-256 of the resolved settings of a command.
pub fn config_hash<T: Serialize>(command: &str, settings: &T) -> String {
    let body = serde_json::to_string(&(command, settings)).expect("settings serialize");
    hex::encode(Sha256::digest(body.as_bytes()))
}

pub fn required<T>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Input(anyhow!("missing required setting --{flag}")))
}

pub fn parse_choice<T: DeserializeOwned>(value: &str, flag: &str) -> Result<T, CliError> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| CliError::Input(anyhow!("invalid value `{value}` for --{flag}")))
}

pub fn check_positive(value: usize, flag: &str) -> Result<usize, CliError> {
    if value == 0 {
        return Err(CliError::Input(anyhow!("--{flag} must be positive")));
    }
    Ok(value)
}
