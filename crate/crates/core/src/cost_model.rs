//! ScanRange: a cheap proxy for window-query cost.
//!
//! A sample of the data is sorted by SFC value and cut into equal blocks. The
//! cost of a query is the distance between the blocks its two corner values
//! fall into. The reward of a tree compares its total ScanRange on a workload
//! against a baseline tree (the Z-curve unless stated otherwise).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bmtree::BMTree;
use crate::error::{Error, Result};
use crate::sfc::{GridConfig, Point, SfcValue};

pub const DEFAULT_BLOCK_SIZE: usize = 100;

/// Samples above this size are evaluated in parallel.
const PAR_THRESHOLD: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    points: Vec<Point>,
    source_size: usize,
    rate: f64,
}

impl SampleSet {
    /// Draws `round(rate * |data|)` points without replacement (at least one),
    /// keeping their original relative order.
    pub fn draw(data: &[Point], rate: f64, seed: u64) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Precondition("cannot sample an empty dataset".into()));
        }
        if !(rate > 0.0 && rate <= 1.0) {
            return Err(Error::Config(format!("sample rate {rate} outside (0, 1]")));
        }
        let k = ((rate * data.len() as f64).round() as usize).clamp(1, data.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, data.len(), k).into_vec();
        idx.sort_unstable();
        Ok(Self {
            points: idx.into_iter().map(|i| data[i].clone()).collect(),
            source_size: data.len(),
            rate,
        })
    }

    /// The whole dataset, rate 1.
    pub fn full(data: Vec<Point>) -> Self {
        let source_size = data.len();
        Self {
            points: data,
            source_size,
            rate: 1.0,
        }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn source_size(&self) -> usize {
        self.source_size
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

/// An axis-aligned window with inclusive corners.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WindowQuery {
    min: Point,
    max: Point,
}

impl WindowQuery {
    pub fn new(min: Point, max: Point, config: &GridConfig) -> Result<Self> {
        config.check_coords(min.coords())?;
        config.check_coords(max.coords())?;
        if let Some(d) = (0..min.dims()).find(|&d| min.coords()[d] > max.coords()[d]) {
            return Err(Error::Domain(format!(
                "query minimum exceeds maximum in dimension {d} ({} > {})",
                min.coords()[d],
                max.coords()[d]
            )));
        }
        Ok(Self { min, max })
    }

    pub fn new_unchecked(min: Point, max: Point) -> Self {
        Self { min, max }
    }

    pub fn min_corner(&self) -> &Point {
        &self.min
    }

    pub fn max_corner(&self) -> &Point {
        &self.max
    }

    pub fn dims(&self) -> usize {
        self.min.dims()
    }

    #[inline]
    pub fn contains_coords(&self, coords: &[u32]) -> bool {
        coords
            .iter()
            .zip(self.min.coords().iter().zip(self.max.coords()))
            .all(|(c, (lo, hi))| lo <= c && c <= hi)
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.contains_coords(p.coords())
    }

    /// Integer center, rounded down.
    pub fn center(&self) -> Vec<u32> {
        self.min
            .coords()
            .iter()
            .zip(self.max.coords())
            .map(|(&lo, &hi)| lo + (hi - lo) / 2)
            .collect()
    }

    /// Side lengths in cells (inclusive extent).
    pub fn extents(&self) -> Vec<u64> {
        self.min
            .coords()
            .iter()
            .zip(self.max.coords())
            .map(|(&lo, &hi)| (hi - lo) as u64 + 1)
            .collect()
    }
}

/// Sample values sorted ascending and cut into blocks of `block_size`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    values: Vec<SfcValue>,
    order: Vec<u32>,
    block_size: usize,
}

impl BlockLayout {
    /// Builds a layout from precomputed values, stable in input order.
    pub fn from_values(values: Vec<SfcValue>, block_size: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Precondition("cannot lay out an empty sample".into()));
        }
        if block_size == 0 {
            return Err(Error::Config("block size must be positive".into()));
        }
        let mut keyed: Vec<(SfcValue, u32)> =
            values.into_iter().enumerate().map(|(i, v)| (v, i as u32)).collect();
        if keyed.len() > PAR_THRESHOLD {
            keyed.par_sort_unstable();
        } else {
            keyed.sort_unstable();
        }
        let (values, order) = keyed.into_iter().unzip();
        Ok(Self {
            values,
            order,
            block_size,
        })
    }

    /// Sorted (value, input index) pairs.
    pub fn entries(&self) -> impl Iterator<Item = (SfcValue, usize)> + '_ {
        self.values
            .iter()
            .zip(&self.order)
            .map(|(&v, &i)| (v, i as usize))
    }

    pub fn sorted_values(&self) -> &[SfcValue] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn block_count(&self) -> usize {
        self.values.len().div_ceil(self.block_size)
    }

    /// Block holding the first entry with value ≥ `v`; the last block if
    /// every entry is smaller.
    #[inline]
    pub fn block_id(&self, v: &SfcValue) -> usize {
        block_of_rank(self.values.partition_point(|x| x < v), self.values.len(), self.block_size)
    }
}

#[inline]
pub(crate) fn block_of_rank(rank: usize, len: usize, block_size: usize) -> usize {
    rank.min(len - 1) / block_size
}

pub(crate) fn tree_values(tree: &BMTree, points: &[Point]) -> Vec<SfcValue> {
    if points.len() > PAR_THRESHOLD {
        points
            .par_iter()
            .map(|p| tree.evaluate_coords(p.coords()))
            .collect()
    } else {
        points.iter().map(|p| tree.evaluate_coords(p.coords())).collect()
    }
}

fn check_points(tree: &BMTree, points: &[Point]) -> Result<()> {
    points
        .iter()
        .try_for_each(|p| tree.config().check_coords(p.coords()))
}

pub fn build_layout(tree: &BMTree, sample: &SampleSet, block_size: usize) -> Result<BlockLayout> {
    build_layout_for(tree, sample.points(), block_size)
}

pub fn build_layout_for(tree: &BMTree, points: &[Point], block_size: usize) -> Result<BlockLayout> {
    check_points(tree, points)?;
    BlockLayout::from_values(tree_values(tree, points), block_size)
}

pub fn scan_range(layout: &BlockLayout, tree: &BMTree, query: &WindowQuery) -> u64 {
    let lo = tree.evaluate_coords(query.min_corner().coords());
    let hi = tree.evaluate_coords(query.max_corner().coords());
    (layout.block_id(&hi) - layout.block_id(&lo)) as u64
}

pub fn workload_sr(tree: &BMTree, layout: &BlockLayout, queries: &[WindowQuery]) -> u64 {
    queries.iter().map(|q| scan_range(layout, tree, q)).sum()
}

/// `(baseline - sr) / baseline`, 0 for a zero baseline.
pub fn relative_gain(baseline: u64, sr: u64) -> f64 {
    if baseline == 0 {
        0.0
    } else {
        (baseline as f64 - sr as f64) / baseline as f64
    }
}

/// Reward of `tree` against the Z-curve on the same sample.
pub fn reward(tree: &BMTree, sample: &SampleSet, queries: &[WindowQuery], block_size: usize) -> Result<f64> {
    let env = RewardEnv::new(sample.points().to_vec(), queries.to_vec(), block_size, &BMTree::empty(*tree.config()))?;
    env.reward(tree)
}

/// Sample and workload with the baseline total ScanRange cached.
///
/// Points may be split into active points, re-evaluated for every tree, and
/// fixed values that no candidate tree can change (points outside the
/// subspaces being retrained). Ranks then combine both sorted sets, which
/// gives the same ScanRange as laying out all points together.
#[derive(Debug, Clone)]
pub struct RewardEnv {
    points: Vec<Point>,
    fixed: Vec<SfcValue>,
    queries: Vec<WindowQuery>,
    block_size: usize,
    baseline_sr: u64,
}

impl RewardEnv {
    pub fn new(points: Vec<Point>, queries: Vec<WindowQuery>, block_size: usize, baseline: &BMTree) -> Result<Self> {
        Self::with_fixed(points, Vec::new(), queries, block_size, baseline)
    }

    /// Z-curve baseline over the grid of `config`.
    pub fn against_z(points: Vec<Point>, queries: Vec<WindowQuery>, block_size: usize, config: GridConfig) -> Result<Self> {
        Self::new(points, queries, block_size, &BMTree::empty(config))
    }

    /// Splits `points` by `active`; the others are frozen at their value
    /// under `baseline`.
    pub fn partitioned(
        points: &[Point],
        active: impl Fn(&Point) -> bool,
        queries: Vec<WindowQuery>,
        block_size: usize,
        baseline: &BMTree,
    ) -> Result<Self> {
        check_points(baseline, points)?;
        let (act, frozen): (Vec<&Point>, Vec<&Point>) = points.iter().partition(|p| active(p));
        let fixed = frozen.iter().map(|p| baseline.evaluate_coords(p.coords())).collect();
        Self::with_fixed(act.into_iter().cloned().collect(), fixed, queries, block_size, baseline)
    }

    fn with_fixed(
        points: Vec<Point>,
        mut fixed: Vec<SfcValue>,
        queries: Vec<WindowQuery>,
        block_size: usize,
        baseline: &BMTree,
    ) -> Result<Self> {
        if queries.is_empty() {
            return Err(Error::Precondition("the workload has no queries".into()));
        }
        if points.is_empty() && fixed.is_empty() {
            return Err(Error::Precondition("cannot lay out an empty sample".into()));
        }
        if block_size == 0 {
            return Err(Error::Config("block size must be positive".into()));
        }
        check_points(baseline, &points)?;
        for q in &queries {
            baseline.config().check_coords(q.min_corner().coords())?;
            baseline.config().check_coords(q.max_corner().coords())?;
        }
        fixed.sort_unstable();
        let mut env = Self {
            points,
            fixed,
            queries,
            block_size,
            baseline_sr: 0,
        };
        env.baseline_sr = env.tree_sr(baseline)?;
        Ok(env)
    }

    /// Points re-evaluated for each candidate tree.
    pub fn points(&self) -> &[Point] {
        &self.points
    }

    /// Sorted values of the frozen points.
    pub fn fixed_values(&self) -> &[SfcValue] {
        &self.fixed
    }

    pub fn queries(&self) -> &[WindowQuery] {
        &self.queries
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn baseline_sr(&self) -> u64 {
        self.baseline_sr
    }

    pub fn tree_sr(&self, tree: &BMTree) -> Result<u64> {
        let mut active = tree_values(tree, &self.points);
        if active.len() > PAR_THRESHOLD {
            active.par_sort_unstable();
        } else {
            active.sort_unstable();
        }
        let total = active.len() + self.fixed.len();
        let block = |v: &SfcValue| {
            let rank = active.partition_point(|x| x < v) + self.fixed.partition_point(|x| x < v);
            block_of_rank(rank, total, self.block_size)
        };
        Ok(self
            .queries
            .iter()
            .map(|q| {
                let lo = tree.evaluate_coords(q.min_corner().coords());
                let hi = tree.evaluate_coords(q.max_corner().coords());
                (block(&hi) - block(&lo)) as u64
            })
            .sum())
    }

    pub fn reward(&self, tree: &BMTree) -> Result<f64> {
        Ok(self.reward_of_sr(self.tree_sr(tree)?))
    }

    pub fn reward_of_sr(&self, sr: u64) -> f64 {
        relative_gain(self.baseline_sr, sr)
    }
}
