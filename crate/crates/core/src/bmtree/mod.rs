//! The bit merging tree: a piecewise SFC whose root-to-leaf paths are bit
//! merging patterns for recursively split subspaces.
//!
//! Every filled node emits one bit of one dimension. A split node routes the
//! point to its left (bit 0) or right (bit 1) child; a non-split node has a
//! single child covering the same subspace. When a path ends before `n * m`
//! bits have been emitted (an unfilled node or a childless filled node), the
//! remaining bits follow the Z-curve order over the bits not yet consumed:
//! at each step the non-exhausted dimension with the fewest consumed bits is
//! used, lowest dimension first on ties. The empty tree is therefore the
//! Z-curve, and a root split on dimension 0 followed by nothing is too.

mod codec;

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use codec::{from_document, to_document};

use crate::error::{Error, Result};
use crate::sfc::{coord_bit, dim_from_letter, Bmp, GridConfig, Point, SfcValue, DIM_LETTERS, MAX_DIMS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    id: NodeId,
    dim: Option<u8>,
    split: bool,
    children: [Option<NodeId>; 2],
    depth: u32,
    parent: Option<NodeId>,
}

impl Node {
    fn unfilled(id: NodeId, depth: u32, parent: Option<NodeId>) -> Self {
        Self {
            id,
            dim: None,
            split: false,
            children: [None, None],
            depth,
            parent,
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    /// Dimension whose next bit this node emits; `None` while unfilled.
    pub fn dim(&self) -> Option<u8> {
        self.dim
    }

    pub fn split(&self) -> bool {
        self.split
    }

    /// Level of the node; the root is at depth 1 and emits bit 1.
    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn parent(&self) -> Option<NodeId> {
        self.parent
    }

    pub fn is_filled(&self) -> bool {
        self.dim.is_some()
    }

    pub fn children(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.children.iter().flatten().copied()
    }
}

/// The assignment for one frontier node: which dimension's bit, and whether
/// the subspace is split on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeFill {
    pub dim: u8,
    pub split: bool,
}

impl NodeFill {
    pub fn new(dim: u8, split: bool) -> Self {
        Self { dim, split }
    }
}

/// One fill per frontier node, in frontier order.
///
/// Printed with one letter per node: upper case for a split, lower case for
/// a continuation without split, so `xYYx` fills four nodes with X, Y, Y, X
/// and splits the middle two.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LevelAction(pub Vec<NodeFill>);

impl LevelAction {
    pub fn fills(&self) -> &[NodeFill] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Every node gets the same fill.
    pub fn uniform(fill: NodeFill, len: usize) -> Self {
        Self(vec![fill; len])
    }

    pub fn parse(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| {
                let dim = dim_from_letter(c)
                    .ok_or_else(|| Error::Structure(format!("unknown dimension letter {c:?}")))?;
                Ok(NodeFill::new(dim, c.is_ascii_uppercase()))
            })
            .collect::<Result<Vec<_>>>()
            .map(LevelAction)
    }
}

impl fmt::Display for LevelAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for fill in &self.0 {
            let c = DIM_LETTERS[fill.dim as usize];
            let c = if fill.split { c } else { c.to_ascii_lowercase() };
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BMTree {
    config: GridConfig,
    /// Indexed by node id; pruned ids leave holes so surviving ids stay stable.
    nodes: Vec<Option<Node>>,
    root: NodeId,
    /// Unfilled nodes in breadth-first order.
    frontier: Vec<NodeId>,
}

impl BMTree {
    /// A tree with a single unfilled root; evaluates as the Z-curve.
    pub fn empty(config: GridConfig) -> Self {
        let root = NodeId(0);
        Self {
            config,
            nodes: vec![Some(Node::unfilled(root, 1, None))],
            root,
            frontier: vec![root],
        }
    }

    /// A non-splitting chain whose single path is `bmp`.
    pub fn from_single_bmp(bmp: &Bmp, config: GridConfig) -> Result<Self> {
        if !crate::sfc::validate_bmp(bmp.dims(), &config) {
            return Err(Error::Structure(format!("invalid bit merging pattern {bmp}")));
        }
        let mut tree = Self::empty(config);
        for &d in bmp.dims() {
            tree.apply_level_action_in_place(&LevelAction(vec![NodeFill::new(d, false)]))?;
        }
        Ok(tree)
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn frontier(&self) -> &[NodeId] {
        &self.frontier
    }

    pub fn is_complete(&self) -> bool {
        self.frontier.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(id.0 as usize).and_then(Option::as_ref)
    }

    fn node_ref(&self, id: NodeId) -> &Node {
        self.nodes[id.0 as usize]
            .as_ref()
            .expect("node ids inside a tree always resolve")
    }

    fn node_mut(&mut self, id: NodeId) -> &mut Node {
        self.nodes[id.0 as usize]
            .as_mut()
            .expect("node ids inside a tree always resolve")
    }

    /// Live nodes in id order.
    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().flatten()
    }

    pub fn node_count(&self) -> usize {
        self.nodes().count()
    }

    pub fn filled_count(&self) -> usize {
        self.nodes().filter(|n| n.is_filled()).count()
    }

    /// Deepest filled level, 0 for an empty tree.
    pub fn filled_depth(&self) -> u32 {
        self.nodes()
            .filter(|n| n.is_filled())
            .map(|n| n.depth)
            .max()
            .unwrap_or(0)
    }

    /// Live node ids in breadth-first order, children left to right.
    pub fn bfs_order(&self) -> Vec<NodeId> {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut queue = VecDeque::from([self.root]);
        while let Some(id) = queue.pop_front() {
            order.push(id);
            queue.extend(self.node_ref(id).children());
        }
        order
    }

    fn recompute_frontier(&mut self) {
        self.frontier = self
            .bfs_order()
            .into_iter()
            .filter(|&id| !self.node_ref(id).is_filled())
            .collect();
    }

    /// Bits consumed per dimension by the strict ancestors of `id`.
    pub fn used_above(&self, id: NodeId) -> [u32; MAX_DIMS] {
        let mut used = [0u32; MAX_DIMS];
        let mut cur = self.node_ref(id).parent;
        while let Some(p) = cur {
            let node = self.node_ref(p);
            if let Some(d) = node.dim {
                used[d as usize] += 1;
            }
            cur = node.parent;
        }
        used
    }

    /// Dimensions that still have unconsumed bits at node `id`.
    pub fn legal_dims(&self, id: NodeId) -> Vec<u8> {
        let used = self.used_above(id);
        (0..self.config.dims() as u8)
            .filter(|&d| used[d as usize] < self.config.bits())
            .collect()
    }

    /// Fraction of the space covered by `id`: one half per split ancestor.
    pub fn subspace_fraction(&self, id: NodeId) -> f64 {
        let mut splits = 0i32;
        let mut cur = self.node_ref(id).parent;
        while let Some(p) = cur {
            let node = self.node_ref(p);
            if node.split {
                splits += 1;
            }
            cur = node.parent;
        }
        0.5f64.powi(splits)
    }

    /// True if `ancestor` lies on the path from the root to `node` (inclusive).
    pub fn is_ancestor_or_self(&self, ancestor: NodeId, node: NodeId) -> bool {
        let mut cur = Some(node);
        while let Some(id) = cur {
            if id == ancestor {
                return true;
            }
            cur = self.node_ref(id).parent;
        }
        false
    }

    /// SFC value of a point, validating it against the tree's grid.
    pub fn evaluate(&self, point: &Point) -> Result<SfcValue> {
        self.config.check_coords(point.coords())?;
        Ok(self.evaluate_coords(point.coords()))
    }

    /// SFC value of in-grid coordinates.
    #[inline]
    pub fn evaluate_coords(&self, coords: &[u32]) -> SfcValue {
        self.walk(coords, |_| {})
    }

    /// Walks the path of `coords`, calling `visit` on every node reached
    /// (filled or not), and returns the full SFC value.
    #[inline]
    pub fn walk(&self, coords: &[u32], mut visit: impl FnMut(&Node)) -> SfcValue {
        let width = self.config.width();
        let bits = self.config.bits();
        let mut used = [0u32; MAX_DIMS];
        let mut value = SfcValue::ZERO;
        let mut pos = 0u32;
        let mut cur = Some(self.root);
        while let Some(id) = cur {
            let node = self.node_ref(id);
            visit(node);
            let Some(d) = node.dim else { break };
            let d = d as usize;
            let b = coord_bit(coords[d], bits, used[d]);
            if b == 1 {
                value.set_bit(width - 1 - pos);
            }
            used[d] += 1;
            pos += 1;
            cur = if node.split {
                node.children[b as usize]
            } else {
                node.children[0]
            };
        }
        complete_z(&mut value, &mut used, pos, coords, &self.config);
        value
    }

    /// The node ids visited by `coords`, root first.
    pub fn path(&self, coords: &[u32]) -> Vec<NodeId> {
        let mut path = Vec::new();
        self.walk(coords, |n| path.push(n.id));
        path
    }

    /// The unfilled node where the path of `coords` stops, if it stops at one.
    pub fn terminal_unfilled(&self, coords: &[u32]) -> Option<NodeId> {
        let mut last = None;
        self.walk(coords, |n| last = Some((n.id, n.is_filled())));
        last.filter(|&(_, filled)| !filled).map(|(id, _)| id)
    }

    /// Fills every frontier node per `action` and returns the resulting tree.
    pub fn apply_level_action(&self, action: &LevelAction) -> Result<BMTree> {
        let mut next = self.clone();
        next.apply_level_action_in_place(action)?;
        Ok(next)
    }

    pub fn apply_level_action_in_place(&mut self, action: &LevelAction) -> Result<()> {
        if action.len() != self.frontier.len() {
            return Err(Error::Precondition(format!(
                "action fills {} nodes but the frontier has {}",
                action.len(),
                self.frontier.len()
            )));
        }
        for (&id, fill) in self.frontier.iter().zip(action.fills()) {
            self.check_fill(id, *fill)?;
        }
        let frontier = std::mem::take(&mut self.frontier);
        for (id, fill) in frontier.into_iter().zip(action.fills()) {
            self.fill_node(id, *fill);
            let depth = self.node_ref(id).depth;
            if depth >= self.config.width() {
                continue;
            }
            let count = if fill.split { 2 } else { 1 };
            for slot in 0..count {
                let child = NodeId(self.nodes.len() as u32);
                self.nodes.push(Some(Node::unfilled(child, depth + 1, Some(id))));
                self.node_mut(id).children[slot] = Some(child);
            }
        }
        self.recompute_frontier();
        Ok(())
    }

    fn check_fill(&self, id: NodeId, fill: NodeFill) -> Result<()> {
        let dim = fill.dim as usize;
        if dim >= self.config.dims() {
            return Err(Error::Action {
                node: id.0,
                dim,
                reason: format!("does not exist in a {}-dimensional grid", self.config.dims()),
            });
        }
        if self.used_above(id)[dim] >= self.config.bits() {
            return Err(Error::Action {
                node: id.0,
                dim,
                reason: format!("is exhausted: all {} bits already used on the path", self.config.bits()),
            });
        }
        Ok(())
    }

    /// Sets a node's fill without creating children. Used for tentative
    /// evaluation: the node emits its bit and the path continues with the
    /// default completion.
    pub(crate) fn fill_node(&mut self, id: NodeId, fill: NodeFill) {
        let node = self.node_mut(id);
        node.dim = Some(fill.dim);
        node.split = fill.split;
    }

    pub(crate) fn clear_node(&mut self, id: NodeId) {
        let node = self.node_mut(id);
        node.dim = None;
        node.split = false;
    }

    /// Resets each listed node to unfilled and deletes its descendants. All
    /// other nodes keep their ids and fills.
    pub fn prune_subtrees(&self, ids: &[NodeId]) -> Result<BMTree> {
        for &id in ids {
            if self.node(id).is_none() {
                return Err(Error::Precondition(format!("node {id} does not exist")));
            }
        }
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                if self.is_ancestor_or_self(a, b) || self.is_ancestor_or_self(b, a) {
                    return Err(Error::Precondition(format!(
                        "nodes {a} and {b} are nested; pruned nodes must not contain each other"
                    )));
                }
            }
        }
        let mut next = self.clone();
        for &id in ids {
            let mut stack: Vec<NodeId> = next.node_ref(id).children().collect();
            while let Some(c) = stack.pop() {
                stack.extend(next.node_ref(c).children());
                next.nodes[c.0 as usize] = None;
            }
            let node = next.node_mut(id);
            node.dim = None;
            node.split = false;
            node.children = [None, None];
        }
        next.recompute_frontier();
        Ok(next)
    }

    /// Fills every frontier node, without children, with the dimension the
    /// default completion would use next. Evaluation is unchanged and the
    /// frontier becomes empty, so later training only touches nodes that are
    /// explicitly pruned.
    pub fn seal(&mut self) {
        let frontier = std::mem::take(&mut self.frontier);
        for id in frontier {
            let used = self.used_above(id);
            let dim = (0..self.config.dims())
                .filter(|&d| used[d] < self.config.bits())
                .min_by_key(|&d| used[d])
                .expect("an unfilled node always has a bit left");
            self.fill_node(id, NodeFill::new(dim as u8, false));
        }
    }

    /// Per-level action strings of the filled nodes, e.g. `{(1: X), (2: XY)}`.
    pub fn level_summary(&self) -> String {
        let mut levels: Vec<String> = Vec::new();
        for id in self.bfs_order() {
            let node = self.node_ref(id);
            let Some(d) = node.dim else { continue };
            let depth = node.depth as usize;
            if levels.len() < depth {
                levels.resize(depth, String::new());
            }
            let c = DIM_LETTERS[d as usize];
            levels[depth - 1].push(if node.split { c } else { c.to_ascii_lowercase() });
        }
        let parts: Vec<String> = levels
            .iter()
            .enumerate()
            .map(|(i, s)| format!("({}: {})", i + 1, s))
            .collect();
        format!("{{{}}}", parts.join(", "))
    }

    pub(crate) fn from_parts(config: GridConfig, nodes: Vec<Option<Node>>, root: NodeId) -> Self {
        let mut tree = Self {
            config,
            nodes,
            root,
            frontier: Vec::new(),
        };
        tree.recompute_frontier();
        tree
    }
}

/// Appends the default completion: remaining bits in Z-curve order, i.e. the
/// non-exhausted dimension with the fewest consumed bits first.
#[inline]
fn complete_z(value: &mut SfcValue, used: &mut [u32; MAX_DIMS], mut pos: u32, coords: &[u32], config: &GridConfig) {
    let width = config.width();
    let bits = config.bits();
    let n = config.dims();
    while pos < width {
        let mut best = 0;
        let mut best_used = u32::MAX;
        for (d, &u) in used.iter().enumerate().take(n) {
            if u < bits && u < best_used {
                best = d;
                best_used = u;
            }
        }
        if coord_bit(coords[best], bits, used[best]) == 1 {
            value.set_bit(width - 1 - pos);
        }
        used[best] += 1;
        pos += 1;
    }
}
