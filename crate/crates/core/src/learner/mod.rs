//! Level-by-level tree construction with Monte Carlo tree search.
//!
//! Each level of the tree is one decision: a [`LevelAction`] filling the
//! whole frontier. Children of a search state are the greedy action followed
//! by the `2n` uniform actions. A rollout descends by UCT, taking the first
//! unvisited candidate whenever there is one, until the depth budget is used
//! up, then scores the resulting partial tree and pushes the maximum reward
//! back up the path.

mod greedy;
mod policy;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use greedy::{gas_action, gas_action_in};
pub use policy::{uct, PolicyNode, PolicyTree};

use crate::bmtree::{BMTree, LevelAction, NodeFill};
use crate::cost_model::{RewardEnv, SampleSet, WindowQuery, DEFAULT_BLOCK_SIZE};
use crate::error::{Error, Result};
use crate::sfc::GridConfig;

/// Rewards within this margin count as equal.
pub const REWARD_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MctsConfig {
    pub rollouts: usize,
    pub max_depth: u32,
    pub exploration: f64,
    pub sample_rate: f64,
    pub train_queries: usize,
    pub block_size: usize,
    pub seed: u64,
    /// Offer the greedy action as the preferred candidate.
    pub use_gas: bool,
}

impl Default for MctsConfig {
    fn default() -> Self {
        Self {
            rollouts: 10,
            max_depth: 10,
            exploration: 1.0,
            sample_rate: 0.05,
            train_queries: 1000,
            block_size: DEFAULT_BLOCK_SIZE,
            seed: 0,
            use_gas: true,
        }
    }
}

impl MctsConfig {
    pub fn validate(&self, grid: &GridConfig) -> Result<()> {
        if self.rollouts == 0 {
            return Err(Error::Config("rollouts must be at least 1".into()));
        }
        if self.max_depth == 0 || self.max_depth > grid.width() {
            return Err(Error::Config(format!(
                "max_depth {} outside [1, {}] for {} dimensions of {} bits",
                self.max_depth,
                grid.width(),
                grid.dims(),
                grid.bits()
            )));
        }
        if !(self.exploration.is_finite() && self.exploration >= 0.0) {
            return Err(Error::Config(format!("exploration constant {} must be finite and non-negative", self.exploration)));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return Err(Error::Config(format!("sample_rate {} outside (0, 1]", self.sample_rate)));
        }
        if self.train_queries == 0 {
            return Err(Error::Config("train_queries must be at least 1".into()));
        }
        if self.block_size == 0 {
            return Err(Error::Config("block_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// One constructed level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelLog {
    /// Shallowest frontier depth when the action was applied.
    pub depth: u32,
    pub action: String,
    /// Reward of the tree right after this level.
    pub reward: f64,
    /// Best reward of any simulation below the chosen state.
    pub value: f64,
}

impl fmt::Display for LevelLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "depth {:>2}  reward {:+.6}  best {:+.6}  action {}",
            self.depth, self.reward, self.value, self.action
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub tree: BMTree,
    /// Reward of `tree` against the environment's baseline.
    pub reward: f64,
    pub baseline_sr: u64,
    pub tree_sr: u64,
    pub levels: Vec<LevelLog>,
    pub rollouts: usize,
    /// True when training ended because no candidate beat the best tree.
    pub stopped_early: bool,
}

/// The greedy action (if enabled) followed by the uniform actions, with
/// duplicates removed. Uniform actions give every frontier node the same
/// fill; a node where that dimension is exhausted falls back to its lowest
/// legal dimension.
pub fn candidate_actions(tree: &BMTree, gas: Option<LevelAction>) -> Vec<LevelAction> {
    let mut out: Vec<LevelAction> = gas.into_iter().collect();
    for d in 0..tree.config().dims() as u8 {
        for split in [true, false] {
            let fills = tree
                .frontier()
                .iter()
                .map(|&id| {
                    let legal = tree.legal_dims(id);
                    let dim = if legal.contains(&d) { d } else { legal[0] };
                    NodeFill::new(dim, split)
                })
                .collect();
            let action = LevelAction(fills);
            if !out.contains(&action) {
                out.push(action);
            }
        }
    }
    out
}

/// Trains a tree from scratch against the Z-curve baseline. The first
/// `train_queries` queries form the training workload.
pub fn train(sample: &SampleSet, queries: &[WindowQuery], grid: GridConfig, config: &MctsConfig) -> Result<TrainOutcome> {
    config.validate(&grid)?;
    if sample.is_empty() || queries.is_empty() {
        return Err(Error::Precondition("training needs sample points and queries".into()));
    }
    let workload = queries[..queries.len().min(config.train_queries)].to_vec();
    let env = RewardEnv::against_z(sample.points().to_vec(), workload, config.block_size, grid)?;
    train_from(&BMTree::empty(grid), &env, config)
}

/// Trains the frontier of `initial` level by level. The number of levels is
/// `max_depth - d + 1` where `d` is the shallowest frontier depth (at least
/// one), so a fresh tree gets `max_depth` levels.
pub fn train_from(initial: &BMTree, env: &RewardEnv, config: &MctsConfig) -> Result<TrainOutcome> {
    config.validate(initial.config())?;
    let min_depth = initial
        .frontier()
        .iter()
        .filter_map(|&id| initial.node(id).map(|n| n.depth()))
        .min();
    let levels = match min_depth {
        None => 0,
        Some(d) => (config.max_depth + 1).saturating_sub(d).max(1) as usize,
    };

    let mut state = initial.clone();
    let mut policy = PolicyTree::new(state.level_summary());
    let mut root = policy.root();
    let mut best_sr = env.tree_sr(&state)?;
    let mut best = (env.reward_of_sr(best_sr), state.clone());
    let mut log = Vec::new();
    let mut rollouts = 0;
    let mut stopped_early = false;

    for level in 0..levels {
        if state.is_complete() {
            break;
        }
        for _ in 0..config.rollouts {
            rollout(&mut policy, root, &state, levels - level, env, config)?;
            rollouts += 1;
        }
        let Some(slot) = policy.best_child(root) else { break };
        let child = policy.node(root).children[slot].expect("best child is expanded");
        let value = policy.node(child).value;
        if value <= best.0 + REWARD_TOLERANCE {
            stopped_early = true;
            log::info!("no candidate improves on reward {:.6}; stopping", best.0);
            break;
        }
        let action = policy.node(child).action.clone().expect("non-root nodes carry an action");
        let depth = state
            .frontier()
            .iter()
            .filter_map(|&id| state.node(id).map(|n| n.depth()))
            .min()
            .unwrap_or(0);
        state.apply_level_action_in_place(&action)?;
        let sr = env.tree_sr(&state)?;
        let reward = env.reward_of_sr(sr);
        let entry = LevelLog {
            depth,
            action: action.to_string(),
            reward,
            value,
        };
        log::info!("{entry}");
        log.push(entry);
        if reward > best.0 + REWARD_TOLERANCE {
            best = (reward, state.clone());
            best_sr = sr;
        }
        root = child;
    }

    let (reward, mut tree) = best;
    tree.seal();
    Ok(TrainOutcome {
        tree,
        reward,
        baseline_sr: env.baseline_sr(),
        tree_sr: best_sr,
        levels: log,
        rollouts,
        stopped_early,
    })
}

fn rollout(
    policy: &mut PolicyTree,
    root: usize,
    state: &BMTree,
    budget: usize,
    env: &RewardEnv,
    config: &MctsConfig,
) -> Result<f64> {
    let mut path = vec![root];
    let mut tree = state.clone();
    let mut cur = root;
    for _ in 0..budget {
        if tree.is_complete() {
            break;
        }
        if policy.node(cur).candidates.is_none() {
            let gas = if config.use_gas {
                Some(gas_action_in(&tree, env)?)
            } else {
                None
            };
            policy.set_candidates(cur, candidate_actions(&tree, gas));
        }
        let slot = policy.select(cur, config.exploration);
        let node = policy.node(cur);
        let action = &node.candidates.as_ref().expect("candidates were just set")[slot];
        tree.apply_level_action_in_place(action)?;
        cur = match node.children[slot] {
            Some(child) => child,
            None => policy.expand(cur, slot, tree.level_summary()),
        };
        path.push(cur);
    }
    let reward = env.reward(&tree)?;
    policy.backpropagate(&path, reward);
    Ok(reward)
}
