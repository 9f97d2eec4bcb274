//! Canonical text form of a tree.
//!
//! The document is JSON with a fixed layout: two-space indentation, keys in
//! the order `version, dims, bits_per_dim, nodes`, one node record per line
//! sorted by id, and a trailing newline. Output is byte-for-byte
//! deterministic so trained trees can be compared with `cmp`.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::Deserialize;

use super::{BMTree, Node, NodeId};
use crate::error::{Error, Result};
use crate::sfc::{GridConfig, MAX_DIMS};

pub const FORMAT_VERSION: u32 = 1;

/// Upper bound on node ids accepted when parsing; keeps a hostile document
/// from forcing a huge allocation.
const MAX_NODE_ID: u32 = 1 << 22;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    version: u32,
    dims: usize,
    bits_per_dim: u32,
    nodes: Vec<NodeRecord>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    id: u32,
    dim: Option<u8>,
    split: bool,
    children: Vec<u32>,
}

pub fn to_document(tree: &BMTree) -> String {
    let cfg = tree.config();
    let mut out = String::new();
    out.push_str("{\n");
    let _ = writeln!(out, "  \"version\": {FORMAT_VERSION},");
    let _ = writeln!(out, "  \"dims\": {},", cfg.dims());
    let _ = writeln!(out, "  \"bits_per_dim\": {},", cfg.bits());
    out.push_str("  \"nodes\": [\n");
    let nodes: Vec<&Node> = tree.nodes().collect();
    for (i, node) in nodes.iter().enumerate() {
        let dim = node.dim.map_or_else(|| "null".to_string(), |d| d.to_string());
        let children: Vec<String> = node.children().map(|c| c.0.to_string()).collect();
        let _ = write!(
            out,
            "    {{\"id\": {}, \"dim\": {}, \"split\": {}, \"children\": [{}]}}",
            node.id.0,
            dim,
            node.split,
            children.join(", ")
        );
        out.push_str(if i + 1 < nodes.len() { ",\n" } else { "\n" });
    }
    out.push_str("  ]\n}\n");
    out
}

pub fn from_document(text: &str) -> Result<BMTree> {
    let doc: Document =
        serde_json::from_str(text).map_err(|e| Error::parse(e.line(), e.to_string()))?;
    if doc.version != FORMAT_VERSION {
        return Err(Error::Structure(format!(
            "field `version`: unsupported version {}, expected {FORMAT_VERSION}",
            doc.version
        )));
    }
    let config = GridConfig::new(doc.dims, doc.bits_per_dim)
        .map_err(|e| Error::Structure(format!("fields `dims`/`bits_per_dim`: {e}")))?;
    if doc.nodes.is_empty() {
        return Err(Error::Structure("field `nodes`: a tree has at least a root node".into()));
    }

    let max_id = doc.nodes.iter().map(|r| r.id).max().unwrap_or(0);
    if max_id >= MAX_NODE_ID {
        return Err(Error::Structure(format!("node {max_id}: field `id` exceeds {MAX_NODE_ID}")));
    }
    let mut slots: Vec<Option<&NodeRecord>> = vec![None; max_id as usize + 1];
    for r in &doc.nodes {
        if slots[r.id as usize].replace(r).is_some() {
            return Err(Error::Structure(format!("node {}: field `id` is duplicated", r.id)));
        }
    }

    let mut parent: Vec<Option<u32>> = vec![None; slots.len()];
    for r in &doc.nodes {
        if let Some(d) = r.dim {
            if d as usize >= config.dims() {
                return Err(Error::Structure(format!(
                    "node {}: field `dim` {d} outside [0, {})",
                    r.id,
                    config.dims()
                )));
            }
        } else if r.split || !r.children.is_empty() {
            return Err(Error::Structure(format!(
                "node {}: unfilled nodes cannot split or have children",
                r.id
            )));
        }
        let allowed: &[usize] = if r.split { &[0, 2] } else { &[0, 1] };
        if !allowed.contains(&r.children.len()) {
            return Err(Error::Structure(format!(
                "node {}: field `children` has {} entries, split={} allows {:?}",
                r.id,
                r.children.len(),
                r.split,
                allowed
            )));
        }
        for &c in &r.children {
            if slots.get(c as usize).copied().flatten().is_none() {
                return Err(Error::Structure(format!(
                    "node {}: field `children` references missing node {c}",
                    r.id
                )));
            }
            if c == r.id || parent[c as usize].replace(r.id).is_some() {
                return Err(Error::Structure(format!(
                    "node {}: field `children` gives node {c} a second parent",
                    r.id
                )));
            }
        }
    }

    let roots: Vec<u32> = doc
        .nodes
        .iter()
        .filter(|r| parent[r.id as usize].is_none())
        .map(|r| r.id)
        .collect();
    let [root] = roots[..] else {
        return Err(Error::Structure(format!(
            "field `nodes`: expected exactly one root, found {roots:?}"
        )));
    };

    // Walk from the root, assigning depths and checking bit budgets per path.
    let mut nodes: Vec<Option<Node>> = vec![None; slots.len()];
    let mut queue = VecDeque::from([(root, 1u32, [0u32; MAX_DIMS])]);
    let mut seen = 0usize;
    while let Some((id, depth, used)) = queue.pop_front() {
        seen += 1;
        let r = slots[id as usize].expect("ids were checked above");
        if depth > config.width() {
            return Err(Error::Structure(format!(
                "node {id}: depth {depth} exceeds the {} bits of a value",
                config.width()
            )));
        }
        let mut used_below = used;
        if let Some(d) = r.dim {
            if used[d as usize] >= config.bits() {
                return Err(Error::Structure(format!(
                    "node {id}: field `dim` {d} is exhausted on this path"
                )));
            }
            used_below[d as usize] += 1;
        }
        let mut children = [None, None];
        for (slot, &c) in r.children.iter().enumerate() {
            children[slot] = Some(NodeId(c));
            queue.push_back((c, depth + 1, used_below));
        }
        nodes[id as usize] = Some(Node {
            id: NodeId(id),
            dim: r.dim,
            split: r.split,
            children,
            depth,
            parent: parent[id as usize].map(NodeId),
        });
    }
    if seen != doc.nodes.len() {
        return Err(Error::Structure(format!(
            "field `nodes`: {} nodes are unreachable from root {root}",
            doc.nodes.len() - seen
        )));
    }
    Ok(BMTree::from_parts(config, nodes, NodeId(root)))
}
