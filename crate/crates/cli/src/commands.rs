use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use piecewise_sfc::bmtree::{from_document, to_document, BMTree};
use piecewise_sfc::cost_model::{RewardEnv, SampleSet, WindowQuery};
use piecewise_sfc::drift::{adaptive_retrain, detect, DriftReport};
use piecewise_sfc::index_bench::{bench_workload, build_index, BenchSummary};
use piecewise_sfc::learner::{train, LevelLog};
use piecewise_sfc::sfc::{classic_bmp, ClassicCurve, GridConfig, Point};
use piecewise_sfc::workload::{
    gen_data, gen_queries, mix_shift, read_points, read_queries, write_points, write_queries, DataSpec, QuerySpec,
};
use piecewise_sfc::{Error, Result};

use crate::config::{
    BenchArgs, Command, DriftArgs, EvalArgs, GenDataArgs, GenQueriesArgs, RetrainArgs, RunConfig, ShiftInputs,
    TrainArgs,
};

pub fn run(command: &Command, cfg: &RunConfig) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data_cmd(a, cfg),
        Command::GenQueries(a) => gen_queries_cmd(a, cfg),
        Command::Train(a) => train_cmd(a, cfg),
        Command::Eval(a) => eval_cmd(a, cfg),
        Command::Drift(a) => drift_cmd(a, cfg),
        Command::Retrain(a) => retrain_cmd(a, cfg),
        Command::Bench(a) => bench_cmd(a, cfg),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn load_points(path: &Path, grid: &GridConfig, cfg: &RunConfig) -> Result<Vec<Point>> {
    let points = read_points(open(path)?, grid, cfg.header)?;
    if points.is_empty() {
        return Err(Error::Precondition(format!("{} holds no points", path.display())));
    }
    Ok(points)
}

fn load_queries(path: &Path, grid: &GridConfig, cfg: &RunConfig) -> Result<Vec<WindowQuery>> {
    let queries = read_queries(open(path)?, grid, cfg.header)?;
    if queries.is_empty() {
        return Err(Error::Precondition(format!("{} holds no queries", path.display())));
    }
    Ok(queries)
}

/// Reads a tree file; its grid must agree with any grid set by options.
fn load_tree(path: &Path, cfg: &RunConfig) -> Result<BMTree> {
    let mut text = String::new();
    std::io::Read::read_to_string(&mut open(path)?, &mut text)?;
    let tree = from_document(&text)?;
    if let Some(grid) = cfg.grid {
        if grid != *tree.config() {
            return Err(Error::Precondition(format!(
                "{} is a {}-dimensional tree with {} bits per dimension, but {} dimensions and {} bits were requested",
                path.display(),
                tree.config().dims(),
                tree.config().bits(),
                grid.dims(),
                grid.bits()
            )));
        }
    }
    Ok(tree)
}

fn save_tree(path: &Path, tree: &BMTree) -> Result<()> {
    let mut out = create(path)?;
    out.write_all(to_document(tree).as_bytes())?;
    out.flush()?;
    Ok(())
}

fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::Io(e.into()))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn gen_data_cmd(a: &GenDataArgs, cfg: &RunConfig) -> Result<()> {
    let grid = cfg.grid_or_default();
    let mut spec = DataSpec::new(cfg.data_dist, cfg.size, grid, cfg.seed);
    spec.gau_sigma = cfg.sigma;
    let mut points = gen_data(&spec)?;
    if let Some(base) = &a.mix_into {
        let old = load_points(base, &grid, cfg)?;
        points = mix_shift(&old, &points, cfg.pct, cfg.seed)?;
    }
    write_points(create(&a.out)?, &points, cfg.header)?;
    println!("wrote {} points to {}", points.len(), a.out.display());
    Ok(())
}

fn gen_queries_cmd(a: &GenQueriesArgs, cfg: &RunConfig) -> Result<()> {
    let grid = cfg.grid_or_default();
    let mut spec = QuerySpec::new(cfg.query_dist, cfg.count, cfg.seed);
    spec.ske_clusters = cfg.clusters;
    spec.cluster_seed = cfg.cluster_seed;
    let queries = gen_queries(&spec, &grid)?;
    write_queries(create(&a.out)?, &queries, cfg.header)?;
    println!("wrote {} queries to {}", queries.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainLog<'a> {
    reward: f64,
    baseline_sr: u64,
    tree_sr: u64,
    rollouts: usize,
    stopped_early: bool,
    sample_points: usize,
    train_queries: usize,
    levels: &'a [LevelLog],
}

fn train_cmd(a: &TrainArgs, cfg: &RunConfig) -> Result<()> {
    let grid = cfg.grid_or_default();
    let data = load_points(&a.data, &grid, cfg)?;
    let queries = load_queries(&a.queries, &grid, cfg)?;
    let sample = SampleSet::draw(&data, cfg.mcts.sample_rate, cfg.seed)?;
    let out = train(&sample, &queries, grid, &cfg.mcts)?;
    save_tree(&a.out, &out.tree)?;
    for level in &out.levels {
        println!("{level}");
    }
    println!(
        "reward {:.6}  scan range {} (Z {})  levels {}  rollouts {}",
        out.reward,
        out.tree_sr,
        out.baseline_sr,
        out.levels.len(),
        out.rollouts
    );
    if let Some(path) = &a.log {
        save_json(
            path,
            &TrainLog {
                reward: out.reward,
                baseline_sr: out.baseline_sr,
                tree_sr: out.tree_sr,
                rollouts: out.rollouts,
                stopped_early: out.stopped_early,
                sample_points: sample.len(),
                train_queries: queries.len().min(cfg.mcts.train_queries),
                levels: &out.levels,
            },
        )?;
    }
    println!("wrote tree to {}", a.out.display());
    Ok(())
}

fn baselines(grid: GridConfig) -> Result<[(String, BMTree); 2]> {
    Ok([
        ("Z".to_string(), BMTree::empty(grid)),
        (
            "C".to_string(),
            BMTree::from_single_bmp(&classic_bmp(ClassicCurve::C, &grid), grid)?,
        ),
    ])
}

fn bench_all(trees: &[(String, BMTree)], data: &[Point], queries: &[WindowQuery], page: usize) -> Result<Vec<BenchSummary>> {
    trees
        .iter()
        .map(|(name, tree)| {
            let index = build_index(tree, data, page)?;
            bench_workload(&index, tree, queries, name)
        })
        .collect()
}

fn print_bench(rows: &[BenchSummary]) {
    println!("{}", BenchSummary::TABLE_HEADER);
    for r in rows {
        println!("{}", r.table_row());
    }
}

#[derive(Serialize)]
struct ScanRangeRow {
    curve: String,
    scan_range: u64,
    reward: f64,
}

#[derive(Serialize)]
struct EvalReport {
    scan_range: Vec<ScanRangeRow>,
    bench: Vec<BenchSummary>,
}

fn eval_cmd(a: &EvalArgs, cfg: &RunConfig) -> Result<()> {
    let tree = load_tree(&a.tree, cfg)?;
    let grid = *tree.config();
    let data = load_points(&a.data, &grid, cfg)?;
    let queries = load_queries(&a.queries, &grid, cfg)?;
    // Same sample and training workload as `train`, so the reward matches.
    let sample = SampleSet::draw(&data, cfg.mcts.sample_rate, cfg.seed)?;
    let workload = queries[..queries.len().min(cfg.mcts.train_queries)].to_vec();
    let env = RewardEnv::against_z(sample.points().to_vec(), workload, cfg.mcts.block_size, grid)?;

    let mut trees = vec![("learned".to_string(), tree)];
    trees.extend(baselines(grid)?);
    let mut rows = Vec::new();
    println!("{:<20} {:>12} {:>10}", "curve", "scan_range", "reward");
    for (name, t) in &trees {
        let sr = env.tree_sr(t)?;
        let reward = env.reward_of_sr(sr);
        println!("{name:<20} {sr:>12} {reward:>10.6}");
        rows.push(ScanRangeRow {
            curve: name.clone(),
            scan_range: sr,
            reward,
        });
    }
    let bench = bench_all(&trees, &data, &queries, cfg.page_size)?;
    println!();
    print_bench(&bench);
    if let Some(path) = &a.out {
        save_json(path, &EvalReport { scan_range: rows, bench })?;
    }
    Ok(())
}

struct ShiftWorld {
    tree: BMTree,
    old: SampleSet,
    new: SampleSet,
    old_queries: Vec<WindowQuery>,
    new_queries: Vec<WindowQuery>,
}

fn load_shift(inputs: &ShiftInputs, cfg: &RunConfig) -> Result<ShiftWorld> {
    let tree = load_tree(&inputs.tree, cfg)?;
    let grid = *tree.config();
    let old = load_points(&inputs.data, &grid, cfg)?;
    let new = load_points(&inputs.new_data, &grid, cfg)?;
    let old_queries = load_queries(&inputs.queries, &grid, cfg)?;
    let new_queries = match &inputs.new_queries {
        Some(path) => load_queries(path, &grid, cfg)?,
        None => old_queries.clone(),
    };
    let cap = |q: Vec<WindowQuery>| q.into_iter().take(cfg.mcts.train_queries).collect();
    Ok(ShiftWorld {
        old: SampleSet::draw(&old, cfg.mcts.sample_rate, cfg.seed)?,
        new: SampleSet::draw(&new, cfg.mcts.sample_rate, cfg.seed)?,
        old_queries: cap(old_queries),
        new_queries: cap(new_queries),
        tree,
    })
}

fn detect_in(w: &ShiftWorld, cfg: &RunConfig) -> Result<DriftReport> {
    detect(
        &w.tree,
        w.old.points(),
        w.new.points(),
        &w.old_queries,
        &w.new_queries,
        &cfg.drift,
    )
}

fn drift_cmd(a: &DriftArgs, cfg: &RunConfig) -> Result<()> {
    let world = load_shift(&a.inputs, cfg)?;
    let report = detect_in(&world, cfg)?;
    println!("{}", report.to_table());
    if let Some(path) = &a.out {
        save_json(path, &report)?;
    }
    Ok(())
}

fn retrain_cmd(a: &RetrainArgs, cfg: &RunConfig) -> Result<()> {
    let world = load_shift(&a.inputs, cfg)?;
    let report = detect_in(&world, cfg)?;
    if report.selected.is_empty() {
        println!(
            "no node reaches theta {}; the tree is unchanged",
            cfg.drift.theta
        );
        save_tree(&a.out, &world.tree)?;
        println!("wrote tree to {}", a.out.display());
        return Ok(());
    }
    let start = Instant::now();
    let out = adaptive_retrain(
        &world.tree,
        &report,
        world.new.points(),
        &world.new_queries,
        &cfg.drift,
        &cfg.mcts,
    )?;
    let elapsed = start.elapsed();
    save_tree(&a.out, &out.tree)?;
    for level in &out.levels {
        println!("{level}");
    }
    println!(
        "retrained nodes {:?}{}  gain on affected queries {:.4}  scan range {} -> {}",
        out.retrained,
        if out.escalated { " (threshold relaxed)" } else { "" },
        out.improvement,
        out.original_sr,
        out.tree_sr
    );
    if out.kept_original {
        println!("training did not beat the current tree; it is kept");
    }
    if out.recommend_full_retrain {
        println!("gain is small; consider a full retrain");
    }
    eprintln!("retrain time {:.3}s", elapsed.as_secs_f64());
    println!("wrote tree to {}", a.out.display());
    Ok(())
}

fn bench_cmd(a: &BenchArgs, cfg: &RunConfig) -> Result<()> {
    let mut trees = Vec::new();
    let grid = match &a.tree {
        Some(path) => {
            let tree = load_tree(path, cfg)?;
            let grid = *tree.config();
            trees.push(("learned".to_string(), tree));
            grid
        }
        None => cfg.grid_or_default(),
    };
    trees.extend(baselines(grid)?);
    let data = load_points(&a.data, &grid, cfg)?;
    let queries = load_queries(&a.queries, &grid, cfg)?;
    let rows = bench_all(&trees, &data, &queries, cfg.page_size)?;
    print_bench(&rows);
    if let Some(path) = &a.out {
        save_json(path, &rows)?;
    }
    Ok(())
}
