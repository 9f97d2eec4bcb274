//! The MCTS policy tree: one node per partial tree reached by a sequence of
//! level actions, holding a visit count and the best reward seen below it.

use crate::bmtree::LevelAction;

#[derive(Debug, Clone)]
pub struct PolicyNode {
    /// Per-level action summary of the partial tree, e.g. `{(1: X), (2: XY)}`.
    pub key: String,
    pub action: Option<LevelAction>,
    pub parent: Option<usize>,
    /// Maximum reward of any simulation through this node.
    pub value: f64,
    pub visits: u64,
    /// Candidate actions in preference order, filled on first selection.
    pub candidates: Option<Vec<LevelAction>>,
    /// Child index per candidate, `None` until expanded.
    pub children: Vec<Option<usize>>,
}

impl PolicyNode {
    fn new(key: String, action: Option<LevelAction>, parent: Option<usize>) -> Self {
        Self {
            key,
            action,
            parent,
            value: f64::NEG_INFINITY,
            visits: 0,
            candidates: None,
            children: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PolicyTree {
    nodes: Vec<PolicyNode>,
}

/// `V / num + c * sqrt(ln(num_parent) / num)`.
pub fn uct(value: f64, visits: u64, parent_visits: u64, c: f64) -> f64 {
    let n = visits as f64;
    value / n + c * ((parent_visits as f64).ln() / n).sqrt()
}

impl PolicyTree {
    pub fn new(root_key: String) -> Self {
        Self {
            nodes: vec![PolicyNode::new(root_key, None, None)],
        }
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn node(&self, id: usize) -> &PolicyNode {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn set_candidates(&mut self, id: usize, candidates: Vec<LevelAction>) {
        let node = &mut self.nodes[id];
        node.children = vec![None; candidates.len()];
        node.candidates = Some(candidates);
    }

    /// Adds the child reached by candidate `slot` of `parent`.
    pub fn expand(&mut self, parent: usize, slot: usize, key: String) -> usize {
        let action = self.nodes[parent].candidates.as_ref().expect("candidates set before expansion")[slot].clone();
        let id = self.nodes.len();
        self.nodes.push(PolicyNode::new(key, Some(action), Some(parent)));
        self.nodes[parent].children[slot] = Some(id);
        id
    }

    /// First never-visited candidate, or the child maximising UCT (first on
    /// ties). Returns the candidate slot.
    pub fn select(&self, id: usize, c: f64) -> usize {
        let node = &self.nodes[id];
        if let Some(slot) = node
            .children
            .iter()
            .position(|ch| ch.is_none_or(|ch| self.nodes[ch].visits == 0))
        {
            return slot;
        }
        let mut best = (f64::NEG_INFINITY, 0);
        for (slot, ch) in node.children.iter().enumerate() {
            let child = &self.nodes[ch.expect("all children expanded")];
            let score = uct(child.value, child.visits, node.visits, c);
            if score > best.0 {
                best = (score, slot);
            }
        }
        best.1
    }

    /// Counts a visit and applies the max rule along `path`.
    pub fn backpropagate(&mut self, path: &[usize], reward: f64) {
        for &id in path {
            let node = &mut self.nodes[id];
            node.visits += 1;
            node.value = node.value.max(reward);
        }
    }

    /// Child slot of `id` with the highest value, first on ties.
    pub fn best_child(&self, id: usize) -> Option<usize> {
        let node = &self.nodes[id];
        let mut best: Option<(f64, usize)> = None;
        for (slot, ch) in node.children.iter().enumerate() {
            if let Some(ch) = ch {
                let v = self.nodes[*ch].value;
                if self.nodes[*ch].visits > 0 && best.is_none_or(|b| v > b.0) {
                    best = Some((v, slot));
                }
            }
        }
        best.map(|b| b.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uct_value() {
        let v = uct(2.0, 1, 2, 1.0);
        assert!((v - (2.0 + 2f64.ln().sqrt())).abs() < 1e-15);
    }

    #[test]
    fn unvisited_children_come_first_then_uct() {
        let mut t = PolicyTree::new("{}".into());
        let a = LevelAction::parse("X").unwrap();
        let b = LevelAction::parse("Y").unwrap();
        t.set_candidates(0, vec![a, b]);
        assert_eq!(t.select(0, 1.0), 0);
        let c0 = t.expand(0, 0, "x".into());
        t.backpropagate(&[0, c0], 0.1);
        assert_eq!(t.select(0, 1.0), 1);
        let c1 = t.expand(0, 1, "y".into());
        t.backpropagate(&[0, c1], 0.5);
        assert_eq!(t.select(0, 1.0), 1);
        assert_eq!(t.best_child(0), Some(1));
    }

    #[test]
    fn values_only_increase() {
        let mut t = PolicyTree::new("{}".into());
        t.set_candidates(0, vec![LevelAction::parse("X").unwrap()]);
        let c = t.expand(0, 0, "x".into());
        let mut last = f64::NEG_INFINITY;
        for r in [0.3, -0.2, 0.1, 0.7, 0.0] {
            t.backpropagate(&[0, c], r);
            assert!(t.node(c).value >= last);
            last = t.node(c).value;
        }
        assert_eq!(last, 0.7);
        assert_eq!(t.node(0).visits, 5);
    }
}
