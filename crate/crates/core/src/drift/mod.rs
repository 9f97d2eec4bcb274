//! Drift detection on a trained tree and retraining of the affected subtrees.
//!
//! For every node above a depth cut-off we compare where old and new data
//! fall inside the node's subspace (`shift_d`), how the mix of query shapes
//! changed there (`shift_q`), and how much worse the new workload runs on
//! the tree (`op`). Nodes whose combined shift passes a threshold are ranked
//! by `op` and picked level by level under a budget on the total subspace
//! they cover.

mod js;
mod retrain;

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use js::{js_divergence, normalize};
pub use retrain::{adaptive_retrain, partial_retrain, RetrainOutcome, MIN_IMPROVEMENT};

use crate::bmtree::{BMTree, NodeId};
use crate::cost_model::{build_layout_for, scan_range, WindowQuery, DEFAULT_BLOCK_SIZE};
use crate::error::{Error, Result};
use crate::sfc::Point;

/// Slack when comparing accumulated subspace fractions with the budget.
const BUDGET_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftConfig {
    /// Weight of the data shift; the query shift gets `1 - alpha`.
    pub alpha: f64,
    /// Minimum combined shift for a node to be considered.
    pub theta: f64,
    /// Largest total subspace fraction that may be retrained.
    pub rrc: f64,
    /// Only nodes shallower than this are examined.
    pub max_depth: u32,
    /// Number of value bits, starting at the node's own bit, that define
    /// the cells compared inside a node.
    pub split_level: u32,
    pub block_size: usize,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            theta: 0.1,
            rrc: 0.5,
            max_depth: 6,
            split_level: 2,
            block_size: DEFAULT_BLOCK_SIZE,
        }
    }
}

impl DriftConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} {v} outside [0, 1]")))
            }
        };
        unit("alpha", self.alpha)?;
        unit("theta", self.theta)?;
        unit("rrc", self.rrc)?;
        if self.max_depth == 0 {
            return Err(Error::Config("drift max_depth must be at least 1".into()));
        }
        if !(1..=16).contains(&self.split_level) {
            return Err(Error::Config(format!("split_level {} outside [1, 16]", self.split_level)));
        }
        if self.block_size == 0 {
            return Err(Error::Config("block size must be positive".into()));
        }
        Ok(())
    }
}

/// Shape class of a window: floor of log2 of its area and the sign of
/// width minus height (first two dimensions).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QueryCategory {
    pub log_area: i32,
    pub aspect: i8,
}

impl QueryCategory {
    pub fn of(query: &WindowQuery) -> Self {
        let e = query.extents();
        let log_area: f64 = e.iter().map(|&x| (x as f64).log2()).sum();
        Self {
            log_area: log_area.floor() as i32,
            aspect: match e[0].cmp(&e[1]) {
                std::cmp::Ordering::Less => -1,
                std::cmp::Ordering::Equal => 0,
                std::cmp::Ordering::Greater => 1,
            },
        }
    }
}

/// Divergence between old and new point counts over the cells of one node.
/// One empty side counts as a full shift; two empty sides as none.
pub fn data_shift(old: &[u64], new: &[u64]) -> f64 {
    match (normalize(old), normalize(new)) {
        (Some(p), Some(q)) => js_divergence(&p, &q),
        (None, None) => 0.0,
        _ => 1.0,
    }
}

/// Divergence of query categories inside one cell. Each side is smoothed
/// over the categories seen on either side, so an empty side becomes
/// uniform.
pub fn query_cell_divergence(old: &BTreeMap<QueryCategory, u64>, new: &BTreeMap<QueryCategory, u64>) -> f64 {
    let cats: std::collections::BTreeSet<QueryCategory> = old.keys().chain(new.keys()).copied().collect();
    if cats.is_empty() {
        return 0.0;
    }
    let k = cats.len() as f64;
    let smooth = |side: &BTreeMap<QueryCategory, u64>| -> Vec<f64> {
        let n: u64 = side.values().sum();
        let eps = 1.0 / (n as f64 + k);
        let denom = n as f64 + eps * k;
        cats.iter()
            .map(|c| (side.get(c).copied().unwrap_or(0) as f64 + eps) / denom)
            .collect()
    };
    js_divergence(&smooth(old), &smooth(new))
}

/// Average of the per-cell query divergence over all cells.
pub fn query_shift(old: &[BTreeMap<QueryCategory, u64>], new: &[BTreeMap<QueryCategory, u64>]) -> f64 {
    debug_assert_eq!(old.len(), new.len());
    if old.is_empty() {
        return 0.0;
    }
    old.iter().zip(new).map(|(o, n)| query_cell_divergence(o, n)).sum::<f64>() / old.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeShiftReport {
    pub node: u32,
    pub depth: u32,
    pub subspace_fraction: f64,
    pub data_shift: f64,
    pub query_shift: f64,
    pub shift: f64,
    /// Mean ScanRange of new queries on the new data minus that of old
    /// queries on the old data, both over queries centred in the node.
    pub op_score: f64,
    pub old_queries: usize,
    pub new_queries: usize,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub theta: f64,
    pub rrc: f64,
    /// Examined nodes in breadth-first order.
    pub nodes: Vec<NodeShiftReport>,
    pub selected: Vec<u32>,
}

impl DriftReport {
    pub fn selected_ids(&self) -> Vec<NodeId> {
        self.selected.iter().map(|&id| NodeId(id)).collect()
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>5} {:>5} {:>9} {:>8} {:>8} {:>8} {:>10} {:>6} {:>6}  sel",
            "node", "depth", "fraction", "shift_d", "shift_q", "shift", "op", "q_old", "q_new"
        );
        for r in &self.nodes {
            let _ = writeln!(
                s,
                "{:>5} {:>5} {:>9.5} {:>8.4} {:>8.4} {:>8.4} {:>10.3} {:>6} {:>6}  {}",
                r.node,
                r.depth,
                r.subspace_fraction,
                r.data_shift,
                r.query_shift,
                r.shift,
                r.op_score,
                r.old_queries,
                r.new_queries,
                if r.selected { "*" } else { "" }
            );
        }
        let _ = write!(s, "theta {} budget {} selected {:?}", self.theta, self.rrc, self.selected);
        s
    }
}

impl fmt::Display for DriftReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_table())
    }
}

/// Per-node tallies gathered in one pass over points and queries.
#[derive(Clone)]
struct Tally {
    points: Vec<u64>,
    queries: Vec<BTreeMap<QueryCategory, u64>>,
    sr_sum: f64,
    sr_count: usize,
}

impl Tally {
    fn new(cells: usize) -> Self {
        Self {
            points: vec![0; cells],
            queries: vec![BTreeMap::new(); cells],
            sr_sum: 0.0,
            sr_count: 0,
        }
    }

    fn merge(mut self, other: Tally) -> Tally {
        for (a, b) in self.points.iter_mut().zip(other.points) {
            *a += b;
        }
        for (a, b) in self.queries.iter_mut().zip(other.queries) {
            for (k, v) in b {
                *a.entry(k).or_insert(0) += v;
            }
        }
        self.sr_sum += other.sr_sum;
        self.sr_count += other.sr_count;
        self
    }
}

struct Examined {
    ids: Vec<NodeId>,
    /// Position in `ids` by node id.
    slot: Vec<Option<usize>>,
    cells: Vec<(u32, u32)>,
}

impl Examined {
    fn new(tree: &BMTree, cfg: &DriftConfig) -> Self {
        let width = tree.config().width();
        let ids: Vec<NodeId> = tree
            .bfs_order()
            .into_iter()
            .filter(|&id| tree.node(id).is_some_and(|n| n.depth() < cfg.max_depth))
            .collect();
        let max_id = tree.nodes().map(|n| n.id().0 as usize).max().unwrap_or(0);
        let mut slot = vec![None; max_id + 1];
        let mut cells = Vec::with_capacity(ids.len());
        for (i, &id) in ids.iter().enumerate() {
            slot[id.0 as usize] = Some(i);
            let start = tree.node(id).map(|n| n.depth() - 1).unwrap_or(0);
            let len = cfg.split_level.min(width - start);
            cells.push((start, len));
        }
        Self { ids, slot, cells }
    }

    fn empty_tallies(&self) -> Vec<Tally> {
        self.cells.iter().map(|&(_, len)| Tally::new(1 << len)).collect()
    }

    /// Calls `f(slot, cell)` for each examined node on the path of `coords`.
    fn visit(&self, tree: &BMTree, coords: &[u32], mut f: impl FnMut(usize, usize)) {
        let width = tree.config().width();
        let mut hits = Vec::new();
        let v = tree.walk(coords, |n| {
            if let Some(Some(i)) = self.slot.get(n.id().0 as usize) {
                hits.push(*i);
            }
        });
        for i in hits {
            let (start, len) = self.cells[i];
            f(i, v.bits_from_msb(width, start, len) as usize);
        }
    }

    fn tally_points(&self, tree: &BMTree, points: &[Point]) -> Vec<Tally> {
        points
            .par_iter()
            .fold(
                || self.empty_tallies(),
                |mut acc, p| {
                    self.visit(tree, p.coords(), |i, c| acc[i].points[c] += 1);
                    acc
                },
            )
            .reduce(|| self.empty_tallies(), merge_all)
    }

    fn tally_queries(&self, tree: &BMTree, points: &[Point], queries: &[WindowQuery], block_size: usize) -> Result<Vec<Tally>> {
        if queries.is_empty() {
            return Ok(self.empty_tallies());
        }
        let layout = if points.is_empty() {
            None
        } else {
            Some(build_layout_for(tree, points, block_size)?)
        };
        Ok(queries
            .par_iter()
            .fold(
                || self.empty_tallies(),
                |mut acc, q| {
                    let sr = layout.as_ref().map_or(0, |l| scan_range(l, tree, q)) as f64;
                    let cat = QueryCategory::of(q);
                    self.visit(tree, &q.center(), |i, c| {
                        *acc[i].queries[c].entry(cat).or_insert(0) += 1;
                        acc[i].sr_sum += sr;
                        acc[i].sr_count += 1;
                    });
                    acc
                },
            )
            .reduce(|| self.empty_tallies(), merge_all))
    }
}

fn merge_all(a: Vec<Tally>, b: Vec<Tally>) -> Vec<Tally> {
    a.into_iter().zip(b).map(|(x, y)| x.merge(y)).collect()
}

/// Scores every node above `cfg.max_depth` and selects the nodes to retrain.
pub fn detect(
    tree: &BMTree,
    old_points: &[Point],
    new_points: &[Point],
    old_queries: &[WindowQuery],
    new_queries: &[WindowQuery],
    cfg: &DriftConfig,
) -> Result<DriftReport> {
    cfg.validate()?;
    let grid = tree.config();
    for p in old_points.iter().chain(new_points) {
        grid.check_coords(p.coords())?;
    }
    for q in old_queries.iter().chain(new_queries) {
        grid.check_coords(q.min_corner().coords())?;
        grid.check_coords(q.max_corner().coords())?;
    }
    let ex = Examined::new(tree, cfg);
    let (po, pn) = rayon::join(|| ex.tally_points(tree, old_points), || ex.tally_points(tree, new_points));
    let (qo, qn) = rayon::join(
        || ex.tally_queries(tree, old_points, old_queries, cfg.block_size),
        || ex.tally_queries(tree, new_points, new_queries, cfg.block_size),
    );
    let (qo, qn) = (qo?, qn?);

    let mut nodes: Vec<NodeShiftReport> = ex
        .ids
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            let sd = data_shift(&po[i].points, &pn[i].points);
            let sq = query_shift(&qo[i].queries, &qn[i].queries);
            let op = if qo[i].sr_count == 0 || qn[i].sr_count == 0 {
                0.0
            } else {
                qn[i].sr_sum / qn[i].sr_count as f64 - qo[i].sr_sum / qo[i].sr_count as f64
            };
            NodeShiftReport {
                node: id.0,
                depth: tree.node(id).map_or(0, |n| n.depth()),
                subspace_fraction: tree.subspace_fraction(id),
                data_shift: sd,
                query_shift: sq,
                shift: cfg.alpha * sd + (1.0 - cfg.alpha) * sq,
                op_score: op,
                old_queries: qo[i].sr_count,
                new_queries: qn[i].sr_count,
                selected: false,
            }
        })
        .collect();

    let selected = select_nodes(tree, &nodes, cfg.theta, cfg.rrc);
    mark_selected(&mut nodes, &selected);
    Ok(DriftReport {
        theta: cfg.theta,
        rrc: cfg.rrc,
        nodes,
        selected: selected.iter().map(|id| id.0).collect(),
    })
}

fn mark_selected(nodes: &mut [NodeShiftReport], selected: &[NodeId]) {
    for r in nodes {
        r.selected = selected.contains(&NodeId(r.node));
    }
}

/// Level by level, keeps nodes with shift at least `theta`, ranks them by
/// `op_score` (stable, highest first) and accepts each one that fits in the
/// remaining budget and is not nested with an accepted node.
pub fn select_nodes(tree: &BMTree, reports: &[NodeShiftReport], theta: f64, rrc: f64) -> Vec<NodeId> {
    let mut depths: Vec<u32> = reports.iter().map(|r| r.depth).collect();
    depths.sort_unstable();
    depths.dedup();
    let mut accepted: Vec<NodeId> = Vec::new();
    let mut used = 0.0;
    for depth in depths {
        let mut level: Vec<&NodeShiftReport> = reports.iter().filter(|r| r.depth == depth && r.shift >= theta).collect();
        level.sort_by(|a, b| b.op_score.total_cmp(&a.op_score));
        for r in level {
            let id = NodeId(r.node);
            if used + r.subspace_fraction > rrc + BUDGET_SLACK {
                continue;
            }
            if accepted
                .iter()
                .any(|&a| tree.is_ancestor_or_self(a, id) || tree.is_ancestor_or_self(id, a))
            {
                continue;
            }
            used += r.subspace_fraction;
            accepted.push(id);
        }
    }
    accepted
}

/// The largest shift strictly below `theta`, used to let more nodes in.
pub fn relaxed_theta(reports: &[NodeShiftReport], theta: f64) -> Option<f64> {
    reports
        .iter()
        .map(|r| r.shift)
        .filter(|&s| s < theta)
        .max_by(f64::total_cmp)
}

#[cfg(test)]
mod tests;
