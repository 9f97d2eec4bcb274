//! Command-line flags, the optional TOML file, and their merge into one
//! validated run configuration. Flags win over the file, the file over
//! built-in defaults.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use piecewise_sfc::drift::DriftConfig;
use piecewise_sfc::index_bench::DEFAULT_PAGE_SIZE;
use piecewise_sfc::learner::MctsConfig;
use piecewise_sfc::sfc::GridConfig;
use piecewise_sfc::workload::{DataDist, QueryDist, DEFAULT_GAU_SIGMA};

pub const DEFAULT_DIMS: usize = 2;
pub const DEFAULT_BITS: u32 = 20;

#[derive(Debug, Parser)]
#[command(name = "bmtree", version, about = "Learned piecewise space-filling curves")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Settings shared by every subcommand.
#[derive(Debug, Default, Args)]
pub struct CommonArgs {
    /// TOML file with defaults for any of the options below.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dims: Option<usize>,
    /// Bits per dimension.
    #[arg(long, global = true)]
    pub bits: Option<u32>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub sample_rate: Option<f64>,
    /// Sample points per block in the cost model.
    #[arg(long, global = true)]
    pub block_size: Option<usize>,
    /// Points per page in the benchmark index.
    #[arg(long, global = true)]
    pub page_size: Option<usize>,
    #[arg(long, global = true)]
    pub max_depth: Option<u32>,
    #[arg(long, global = true)]
    pub rollouts: Option<usize>,
    /// UCT exploration constant.
    #[arg(long, global = true)]
    pub exploration: Option<f64>,
    /// Number of leading queries used for training.
    #[arg(long, global = true)]
    pub train_queries: Option<usize>,
    /// Skip the greedy candidate during search.
    #[arg(long, global = true)]
    pub no_gas: bool,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub theta: Option<f64>,
    /// Largest fraction of the space that partial retraining may cover.
    #[arg(long, global = true)]
    pub rrc: Option<f64>,
    /// Drift detection examines nodes shallower than this depth.
    #[arg(long, global = true)]
    pub dm: Option<u32>,
    #[arg(long, global = true)]
    pub split_level: Option<u32>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// CSV files carry a header row.
    #[arg(long, global = true)]
    pub header: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic point set.
    GenData(GenDataArgs),
    /// Generate a window-query workload.
    GenQueries(GenQueriesArgs),
    /// Learn a tree from data and queries.
    Train(TrainArgs),
    /// Compare a tree with the Z and C curves.
    Eval(EvalArgs),
    /// Score distribution shift per node.
    Drift(DriftArgs),
    /// Retrain the drifted parts of a tree.
    Retrain(RetrainArgs),
    /// Run a workload on the paged index.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// uni or gau.
    #[arg(long)]
    pub dist: Option<DataDist>,
    #[arg(long)]
    pub size: Option<usize>,
    /// Gaussian standard deviation as a fraction of the side.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Mix the generated points into this data set instead of writing them
    /// alone.
    #[arg(long, value_name = "FILE")]
    pub mix_into: Option<PathBuf>,
    /// Fraction of `--mix-into` points replaced.
    #[arg(long, requires = "mix_into")]
    pub pct: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenQueriesArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// uni, gau or ske.
    #[arg(long)]
    pub dist: Option<QueryDist>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub clusters: Option<usize>,
    /// Seed of the skewed cluster centres; shared seeds give workloads from
    /// the same distribution.
    #[arg(long)]
    pub cluster_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    /// Tree file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON training log to write.
    #[arg(long, value_name = "FILE")]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub tree: PathBuf,
    /// JSON summary to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ShiftInputs {
    #[arg(long)]
    pub tree: PathBuf,
    /// Data the tree was trained on.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub new_data: PathBuf,
    /// Workload the tree was trained on.
    #[arg(long)]
    pub queries: PathBuf,
    /// Current workload; defaults to `--queries`.
    #[arg(long)]
    pub new_queries: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DriftArgs {
    #[command(flatten)]
    pub inputs: ShiftInputs,
    /// JSON report to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RetrainArgs {
    #[command(flatten)]
    pub inputs: ShiftInputs,
    /// Tree file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    /// Learned tree to run besides the Z and C baselines.
    #[arg(long)]
    pub tree: Option<PathBuf>,
    /// JSON summaries to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Keys accepted in the configuration file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dims: Option<usize>,
    pub bits: Option<u32>,
    pub seed: Option<u64>,
    pub sample_rate: Option<f64>,
    pub block_size: Option<usize>,
    pub page_size: Option<usize>,
    pub max_depth: Option<u32>,
    pub rollouts: Option<usize>,
    pub exploration: Option<f64>,
    pub train_queries: Option<usize>,
    pub use_gas: Option<bool>,
    pub alpha: Option<f64>,
    pub theta: Option<f64>,
    pub rrc: Option<f64>,
    pub dm: Option<u32>,
    pub split_level: Option<u32>,
    pub threads: Option<usize>,
    pub header: Option<bool>,
    pub data_dist: Option<DataDist>,
    pub size: Option<usize>,
    pub sigma: Option<f64>,
    pub pct: Option<f64>,
    pub query_dist: Option<QueryDist>,
    pub count: Option<usize>,
    pub clusters: Option<usize>,
    pub cluster_seed: Option<u64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("config {}: {e}", path.display()))
    }
}

/// Everything a subcommand needs, after merging and validation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// `None` when neither flags nor file fixed the grid, so a tree file's
    /// own grid can be used.
    pub grid: Option<GridConfig>,
    pub seed: u64,
    pub mcts: MctsConfig,
    pub drift: DriftConfig,
    pub page_size: usize,
    pub threads: Option<usize>,
    pub header: bool,
    pub data_dist: DataDist,
    pub size: usize,
    pub sigma: f64,
    pub pct: f64,
    pub query_dist: QueryDist,
    pub count: usize,
    pub clusters: usize,
    pub cluster_seed: Option<u64>,
}

impl RunConfig {
    /// The configured grid, or the default one.
    pub fn grid_or_default(&self) -> GridConfig {
        self.grid
            .unwrap_or_else(|| GridConfig::new(DEFAULT_DIMS, DEFAULT_BITS).expect("default grid is valid"))
    }
}

/// Merges flags over the file over defaults and checks the result.
/// Errors name the offending option.
pub fn resolve(flags: &CommonArgs, command: &Command, file: &FileConfig) -> Result<RunConfig, String> {
    fn pick<T: Copy>(flag: Option<T>, file: Option<T>, default: T) -> T {
        flag.or(file).unwrap_or(default)
    }
    let mcts_default = MctsConfig::default();
    let drift_default = DriftConfig::default();

    let grid = match (flags.dims.or(file.dims), flags.bits.or(file.bits)) {
        (None, None) => None,
        (d, b) => Some(
            GridConfig::new(d.unwrap_or(DEFAULT_DIMS), b.unwrap_or(DEFAULT_BITS))
                .map_err(|e| format!("--dims/--bits: {e}"))?,
        ),
    };
    let seed = pick(flags.seed, file.seed, mcts_default.seed);
    let block_size = pick(flags.block_size, file.block_size, mcts_default.block_size);
    let mcts = MctsConfig {
        rollouts: pick(flags.rollouts, file.rollouts, mcts_default.rollouts),
        max_depth: pick(flags.max_depth, file.max_depth, mcts_default.max_depth),
        exploration: pick(flags.exploration, file.exploration, mcts_default.exploration),
        sample_rate: pick(flags.sample_rate, file.sample_rate, mcts_default.sample_rate),
        train_queries: pick(flags.train_queries, file.train_queries, mcts_default.train_queries),
        block_size,
        seed,
        use_gas: if flags.no_gas {
            false
        } else {
            file.use_gas.unwrap_or(mcts_default.use_gas)
        },
    };
    let drift = DriftConfig {
        alpha: pick(flags.alpha, file.alpha, drift_default.alpha),
        theta: pick(flags.theta, file.theta, drift_default.theta),
        rrc: pick(flags.rrc, file.rrc, drift_default.rrc),
        max_depth: pick(flags.dm, file.dm, drift_default.max_depth),
        split_level: pick(flags.split_level, file.split_level, drift_default.split_level),
        block_size,
    };

    let (mut data_dist, mut size, mut sigma, mut pct) = (
        file.data_dist.unwrap_or(DataDist::Uni),
        file.size.unwrap_or(100_000),
        file.sigma.unwrap_or(DEFAULT_GAU_SIGMA),
        file.pct.unwrap_or(0.5),
    );
    let (mut query_dist, mut count, mut clusters, mut cluster_seed) = (
        file.query_dist.unwrap_or(QueryDist::Uni),
        file.count.unwrap_or(1000),
        file.clusters.unwrap_or(3),
        file.cluster_seed,
    );
    match command {
        Command::GenData(a) => {
            data_dist = a.dist.unwrap_or(data_dist);
            size = a.size.unwrap_or(size);
            sigma = a.sigma.unwrap_or(sigma);
            pct = a.pct.unwrap_or(pct);
        }
        Command::GenQueries(a) => {
            query_dist = a.dist.unwrap_or(query_dist);
            count = a.count.unwrap_or(count);
            clusters = a.clusters.unwrap_or(clusters);
            cluster_seed = a.cluster_seed.or(cluster_seed);
        }
        _ => {}
    }

    let config = RunConfig {
        grid,
        seed,
        mcts,
        drift,
        page_size: pick(flags.page_size, file.page_size, DEFAULT_PAGE_SIZE),
        threads: flags.threads.or(file.threads),
        header: flags.header || file.header.unwrap_or(false),
        data_dist,
        size,
        sigma,
        pct,
        query_dist,
        count,
        clusters,
        cluster_seed,
    };
    validate(&config)?;
    Ok(config)
}

fn validate(c: &RunConfig) -> Result<(), String> {
    let grid = c.grid_or_default();
    c.mcts.validate(&grid).map_err(|e| with_option(&e.to_string()))?;
    c.drift.validate().map_err(|e| with_option(&e.to_string()))?;
    if c.page_size == 0 {
        return Err("--page-size must be at least 1".into());
    }
    if c.threads == Some(0) {
        return Err("--threads must be at least 1".into());
    }
    if c.size == 0 {
        return Err("--size must be at least 1".into());
    }
    if c.count == 0 {
        return Err("--count must be at least 1".into());
    }
    if !(0.0..=1.0).contains(&c.pct) {
        return Err(format!("--pct {} outside [0, 1]", c.pct));
    }
    Ok(())
}

/// Prefixes a library validation message with the flag it concerns.
fn with_option(msg: &str) -> String {
    const NAMES: [(&str, &str); 12] = [
        ("max_depth", "--max-depth"),
        ("rollouts", "--rollouts"),
        ("exploration", "--exploration"),
        ("sample_rate", "--sample-rate"),
        ("train_queries", "--train-queries"),
        ("block size", "--block-size"),
        ("block_size", "--block-size"),
        ("alpha", "--alpha"),
        ("theta", "--theta"),
        ("rrc", "--rrc"),
        ("split_level", "--split-level"),
        ("drift max_depth", "--dm"),
    ];
    let flag = NAMES
        .iter()
        .rev()
        .find(|(key, _)| msg.contains(key))
        .map_or("configuration", |(_, flag)| flag);
    format!("{flag}: {msg}")
}
