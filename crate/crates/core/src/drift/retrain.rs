use crate::bmtree::{BMTree, NodeId};
use crate::cost_model::{relative_gain, RewardEnv, WindowQuery};
use crate::error::{Error, Result};
use crate::learner::{train_from, LevelLog, MctsConfig};
use crate::sfc::Point;

use super::{relaxed_theta, select_nodes, DriftConfig, DriftReport};

/// Retraining is judged worthwhile from this relative gain on the affected
/// queries.
pub const MIN_IMPROVEMENT: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct RetrainOutcome {
    pub tree: BMTree,
    /// Nodes whose subtrees were retrained.
    pub retrained: Vec<u32>,
    /// Relative gain over the input tree on the queries centred in the
    /// retrained subspaces.
    pub improvement: f64,
    /// ScanRange of the input tree and of `tree` over the whole workload.
    pub original_sr: u64,
    pub tree_sr: u64,
    pub levels: Vec<LevelLog>,
    /// The threshold was relaxed once to take in more nodes.
    pub escalated: bool,
    /// Even after escalation the gain stayed under [`MIN_IMPROVEMENT`].
    pub recommend_full_retrain: bool,
    /// Training did not beat the input tree, which is returned unchanged.
    pub kept_original: bool,
}

impl RetrainOutcome {
    /// Relative gain over the input tree on the whole workload.
    pub fn global_improvement(&self) -> f64 {
        relative_gain(self.original_sr, self.tree_sr)
    }
}

fn unchanged(tree: &BMTree, sr: u64) -> RetrainOutcome {
    RetrainOutcome {
        tree: tree.clone(),
        retrained: Vec::new(),
        improvement: 0.0,
        original_sr: sr,
        tree_sr: sr,
        levels: Vec::new(),
        escalated: false,
        recommend_full_retrain: false,
        kept_original: true,
    }
}

/// Clears the subtrees under `nodes` and retrains them on `points` and the
/// queries whose centres fall in those subspaces. Points outside keep their
/// values. If the root is the only node this is a full retrain. The input
/// tree is returned when training cannot beat it.
pub fn partial_retrain(
    tree: &BMTree,
    points: &[Point],
    queries: &[WindowQuery],
    nodes: &[NodeId],
    mcts: &MctsConfig,
) -> Result<RetrainOutcome> {
    mcts.validate(tree.config())?;
    if points.is_empty() || queries.is_empty() {
        return Err(Error::Precondition("retraining needs points and queries".into()));
    }
    let global = RewardEnv::new(points.to_vec(), queries.to_vec(), mcts.block_size, tree)?;
    let original_sr = global.baseline_sr();
    if nodes.is_empty() {
        return Ok(unchanged(tree, original_sr));
    }

    let full = nodes == [tree.root()];
    let (initial, env) = if full {
        let workload = queries[..queries.len().min(mcts.train_queries)].to_vec();
        let env = RewardEnv::against_z(points.to_vec(), workload, mcts.block_size, *tree.config())?;
        (BMTree::empty(*tree.config()), env)
    } else {
        let pruned = tree.prune_subtrees(nodes)?;
        let inside = |coords: &[u32]| {
            let mut hit = false;
            tree.walk(coords, |n| hit |= nodes.contains(&n.id()));
            hit
        };
        let restricted: Vec<WindowQuery> = queries
            .iter()
            .filter(|q| inside(&q.center()))
            .take(mcts.train_queries)
            .cloned()
            .collect();
        if restricted.is_empty() {
            log::info!("no query is centred in the selected nodes; nothing to retrain");
            return Ok(unchanged(tree, original_sr));
        }
        let env = RewardEnv::partitioned(points, |p| inside(p.coords()), restricted, mcts.block_size, tree)?;
        (pruned, env)
    };

    let trained = train_from(&initial, &env, mcts)?;
    let tree_sr = global.tree_sr(&trained.tree)?;
    let improvement = if full {
        relative_gain(original_sr, tree_sr)
    } else {
        relative_gain(env.baseline_sr(), trained.tree_sr)
    };
    if tree_sr > original_sr || improvement < 0.0 {
        log::info!("retrained tree is not better ({tree_sr} vs {original_sr}); keeping the input tree");
        let mut out = unchanged(tree, original_sr);
        out.retrained = nodes.iter().map(|n| n.0).collect();
        return Ok(out);
    }
    Ok(RetrainOutcome {
        tree: trained.tree,
        retrained: nodes.iter().map(|n| n.0).collect(),
        improvement,
        original_sr,
        tree_sr,
        levels: trained.levels,
        escalated: false,
        recommend_full_retrain: false,
        kept_original: false,
    })
}

/// Retrains the nodes selected in `report`; with no selection the tree is
/// returned unchanged. When the gain is under
/// [`MIN_IMPROVEMENT`] the threshold is relaxed once to the next shift
/// below it; if that still does not help, a full retrain is recommended.
/// Of the attempts, the one with the lowest ScanRange on the whole workload
/// wins.
pub fn adaptive_retrain(
    tree: &BMTree,
    report: &DriftReport,
    points: &[Point],
    queries: &[WindowQuery],
    cfg: &DriftConfig,
    mcts: &MctsConfig,
) -> Result<RetrainOutcome> {
    cfg.validate()?;
    let selected = report.selected_ids();
    if selected.is_empty() {
        log::info!("no node reaches theta {}; nothing to retrain", report.theta);
        return partial_retrain(tree, points, queries, &[], mcts);
    }
    let mut best = partial_retrain(tree, points, queries, &selected, mcts)?;
    if best.improvement >= MIN_IMPROVEMENT {
        return Ok(best);
    }
    let mut escalated = false;
    if let Some(theta) = relaxed_theta(&report.nodes, report.theta) {
        let wider = select_nodes(tree, &report.nodes, theta, report.rrc);
        if wider != selected {
            log::info!("gain {:.4} under {MIN_IMPROVEMENT}; relaxing theta to {theta:.4}", best.improvement);
            escalated = true;
            let again = partial_retrain(tree, points, queries, &wider, mcts)?;
            if again.tree_sr < best.tree_sr || (again.tree_sr == best.tree_sr && again.improvement > best.improvement) {
                best = again;
            }
        }
    }
    best.escalated = escalated;
    best.recommend_full_retrain = best.improvement < MIN_IMPROVEMENT;
    Ok(best)
}
