//! Command-line definitions and `key=value` config-file merging.

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{ArgAction, Args, CommandFactory, Parser, Subcommand};
use yodo_core::eval::FairnessField;
use yodo_core::objective::AlphaMode;
use yodo_core::{FairnessMetric, Schema, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "yodo",
    version,
    about = "Train one network, choose its accuracy/fairness trade-off at inference time"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset whose groups have different base rates
    #[command(args_override_self = true)]
    Synth(SynthArgs),
    /// Train the two-endpoint subspace model
    #[command(args_override_self = true)]
    TrainYodo(TrainYodoArgs),
    /// Train one model with a fixed fairness penalty
    #[command(args_override_self = true)]
    TrainFixed(TrainFixedArgs),
    /// Evaluate a checkpoint over a grid of mixing ratios
    #[command(args_override_self = true)]
    Sweep(SweepArgs),
    /// Compare the subspace frontier against a grid of fixed-penalty models
    #[command(args_override_self = true)]
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of samples
    #[arg(long, default_value_t = 4000)]
    pub n: usize,
    /// Number of features
    #[arg(long, default_value_t = 6)]
    pub d: usize,
    /// Positive-rate gap between the groups, in [0, 1]
    #[arg(long, default_value_t = 0.4, value_parser = unit_interval)]
    pub gap: f64,
    /// Probability of belonging to group 1, in (0, 1)
    #[arg(long, default_value_t = 0.5, value_parser = open_unit_interval)]
    pub group_fraction: f64,
    /// Feature noise standard deviation
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    pub noise: f64,
    #[arg(long, env = "YODO_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Output CSV path
    #[arg(long)]
    pub out: PathBuf,
    /// Flat key=value file supplying defaults for these flags
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Input CSV with a header row
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "label")]
    pub label_column: String,
    #[arg(long, default_value = "group")]
    pub sensitive_column: String,
    /// Label value treated as the positive class
    #[arg(long, default_value = "1")]
    pub positive_label: String,
    /// Sensitive value treated as group 1
    #[arg(long, default_value = "1")]
    pub positive_sensitive: String,
    /// Also feed the sensitive column to the network
    #[arg(long)]
    pub include_sensitive: bool,
    /// Fraction of rows held out for evaluation
    #[arg(long, default_value_t = 0.3, value_parser = open_unit_interval)]
    pub test_fraction: f64,
}

impl DataArgs {
    pub fn schema(&self) -> Schema {
        Schema {
            label_column: self.label_column.clone(),
            sensitive_column: self.sensitive_column.clone(),
            positive_label: self.positive_label.clone(),
            positive_sensitive: self.positive_sensitive.clone(),
            include_sensitive: self.include_sensitive,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 8)]
    pub epochs: usize,
    #[arg(long, default_value_t = 512)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.001, value_parser = positive)]
    pub learning_rate: f64,
    /// Fairness penalty weight A
    #[arg(long, visible_alias = "A", default_value_t = 1.0, value_parser = non_negative)]
    pub fairness_weight: f64,
    /// Fairness penalty: dp, eo or eodd
    #[arg(long, default_value = "dp", value_parser = parse_metric)]
    pub metric: FairnessMetric,
    /// Hidden layer widths, comma separated
    #[arg(long, default_value = "256")]
    pub hidden: Dims,
    /// Seeds initialisation, batching and the train/test split
    #[arg(long, env = "YODO_SEED", default_value_t = 0)]
    pub seed: u64,
}

impl TrainArgs {
    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            fairness_weight: self.fairness_weight,
            fairness_metric: self.metric,
            seed: self.seed,
            hidden_dims: self.hidden.0.clone(),
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainYodoArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Weight of the endpoint cosine-similarity penalty
    #[arg(long, default_value_t = 1.0, value_parser = non_negative)]
    pub beta: f64,
    /// `uniform` (fresh α per batch) or `fixed:<α>`
    #[arg(long, default_value = "uniform", value_parser = parse_alpha_mode)]
    pub alpha_mode: AlphaMode,
    /// Checkpoint path
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the held-out rows, unmodified, to this CSV
    #[arg(long)]
    pub test_out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl TrainYodoArgs {
    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            beta: self.beta,
            alpha_mode: self.alpha_mode,
            ..self.train.config()
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainFixedArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub test_out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Raw CSV to evaluate on, encoded with the checkpoint's encoder
    #[arg(long)]
    pub test: PathBuf,
    /// Mixing ratios, comma separated, each in [0, 1]
    #[arg(long, default_value_t = Grid::steps(0))]
    pub grid: Grid,
    /// Report path; standard output when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, default_value_t = 1.0, value_parser = non_negative)]
    pub beta: f64,
    /// Load this subspace checkpoint instead of training one
    #[arg(long)]
    pub yodo_checkpoint: Option<PathBuf>,
    /// Mixing ratios evaluated on the subspace model
    #[arg(long, default_value_t = Grid::steps(0))]
    pub alpha_grid: Grid,
    /// Penalty strengths, one fixed model each
    #[arg(long, default_value_t = Grid::steps(1))]
    pub a_grid: Grid,
    /// Fairness column used for the frontiers
    #[arg(long, default_value = "dp_relaxed", value_parser = parse_field)]
    pub frontier_metric: FairnessField,
    /// Worker threads for the fixed-penalty grid; results do not depend on it
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Leave wall-clock fields empty so reruns are byte-identical
    #[arg(long)]
    pub omit_timing: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Comma-separated hidden widths.
#[derive(Debug, Clone, PartialEq)]
pub struct Dims(pub Vec<usize>);

impl FromStr for Dims {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|_| format!("`{p}` is not a width")))
            .collect::<Result<_, _>>()
            .map(Dims)
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

/// Comma-separated values in [0, 1]; an empty grid is rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid(pub Vec<f64>);

impl Grid {
    /// `{k/20}` for `k = start..=20`.
    pub fn steps(start: u32) -> Grid {
        Grid((start..=20).map(|k| k as f64 / 20.0).collect())
    }
}

impl FromStr for Grid {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let values = s
            .split(',')
            .map(|p| unit_interval(p.trim()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Grid(values))
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(f64::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

fn number(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not finite"))
    }
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v = number(s)?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn open_unit_interval(s: &str) -> Result<f64, String> {
    let v = number(s)?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is outside (0, 1)"))
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let v = number(s)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("{v} is not positive"))
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v = number(s)?;
    if v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("{v} is negative"))
    }
}

fn parse_metric(s: &str) -> Result<FairnessMetric, String> {
    FairnessMetric::parse(s).ok_or_else(|| format!("`{s}` is not one of dp, eo, eodd"))
}

fn parse_field(s: &str) -> Result<FairnessField, String> {
    FairnessField::parse(s).ok_or_else(|| format!("`{s}` is not one of dp_relaxed, dp_hard, eo_relaxed, eodd_relaxed"))
}

fn parse_alpha_mode(s: &str) -> Result<AlphaMode, String> {
    match AlphaMode::parse(s) {
        Some(AlphaMode::Fixed(a)) if !(0.0..=1.0).contains(&a) => Err(format!("fixed α {a} is outside [0, 1]")),
        Some(m) => Ok(m),
        None => Err(format!("`{s}` is neither `uniform` nor `fixed:<α>`")),
    }
}

/// Splices the entries of a `--config` file into `args` ahead of the
/// command-line flags, which therefore win. Keys are long flag names
/// (underscores allowed for dashes); unknown keys are rejected.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let Some(sub_name) = args.get(1).and_then(|a| a.to_str()).map(str::to_owned) else {
        return Ok(args);
    };
    let Some(path) = find_config_path(&args[2..]) else {
        return Ok(args);
    };
    let root = Cli::command();
    let Some(sub) = root.find_subcommand(&sub_name) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut spliced = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let at = || format!("{}:{}", path.display(), i + 1);
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("{}: expected key=value", at()))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let arg = sub
            .get_arguments()
            .find(|a| {
                a.get_long() == Some(key.as_str()) || a.get_all_aliases().is_some_and(|al| al.contains(&key.as_str()))
            })
            .filter(|a| a.get_id() != "config")
            .ok_or_else(|| format!("{}: unknown key `{key}` for `{sub_name}`", at()))?;
        let flag = format!("--{}", arg.get_long().expect("config keys are long flags"));
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value {
                "true" => spliced.push(OsString::from(flag)),
                "false" => {}
                _ => return Err(format!("{}: `{key}` expects true or false", at())),
            }
        } else {
            spliced.push(OsString::from(flag));
            spliced.push(OsString::from(value));
        }
    }
    let mut out = args[..2].to_vec();
    out.extend(spliced);
    out.extend_from_slice(&args[2..]);
    Ok(out)
}

fn find_config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_str()?;
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn definitions_are_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn grid_parsing() {
        assert_eq!("0, 0.5,1".parse::<Grid>().unwrap(), Grid(vec![0.0, 0.5, 1.0]));
        assert!("0.5,1.5".parse::<Grid>().is_err());
        assert!("".parse::<Grid>().is_err());
        assert_eq!(Grid::steps(0).0.len(), 21);
        assert_eq!(Grid::steps(1).0[0], 0.05);
        assert_eq!(Grid::steps(0).to_string().parse::<Grid>().unwrap(), Grid::steps(0));
    }

    #[test]
    fn dims_parsing() {
        assert_eq!("16,3".parse::<Dims>().unwrap(), Dims(vec![16, 3]));
        assert_eq!(Dims(vec![256]).to_string(), "256");
        assert!("16,x".parse::<Dims>().is_err());
    }
}
