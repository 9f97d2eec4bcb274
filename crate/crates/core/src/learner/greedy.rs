//! Greedy action selection.
//!
//! Frontier nodes are filled one at a time. For each node every legal
//! dimension is tried with the node filled but childless, so points reaching
//! it continue with the default completion; the dimension giving the lowest
//! workload ScanRange wins. Filling a node without children makes split and
//! non-split indistinguishable at this stage, so the split flag is always set,
//! which is also the tie-break order.
//!
//! Only the points and query corners routed to the node being filled change
//! value, so ranks are patched incrementally instead of re-sorting the sample
//! for every candidate.

use std::collections::HashMap;

use crate::bmtree::{BMTree, LevelAction, NodeFill, NodeId};
use crate::cost_model::{block_of_rank, RewardEnv, WindowQuery};
use crate::error::{Error, Result};
use crate::sfc::{Point, SfcValue};

pub fn gas_action(tree: &BMTree, points: &[Point], queries: &[WindowQuery], block_size: usize) -> Result<LevelAction> {
    GasEnv::new(tree, points, &[], queries, block_size)?.run()
}

/// Greedy action against a reward environment, honouring its frozen points.
pub fn gas_action_in(tree: &BMTree, env: &RewardEnv) -> Result<LevelAction> {
    GasEnv::new(tree, env.points(), env.fixed_values(), env.queries(), env.block_size())?.run()
}

struct GasEnv<'a> {
    tree: BMTree,
    points: &'a [Point],
    /// Sorted values that never move.
    fixed: &'a [SfcValue],
    block_size: usize,
    /// Current value of every sample point.
    pv: Vec<SfcValue>,
    sorted: Vec<SfcValue>,
    /// Corner `2i` is the minimum corner of query `i`, `2i + 1` the maximum.
    corners: Vec<&'a [u32]>,
    cv: Vec<SfcValue>,
    crank: Vec<usize>,
    /// Corner indices sorted by current value.
    corner_order: Vec<u32>,
    pts_at: Vec<Vec<u32>>,
    corners_at: Vec<Vec<u32>>,
    total: i64,
    stamp: Vec<u32>,
    epoch: u32,
}

#[inline]
fn sign(corner: usize) -> i64 {
    if corner % 2 == 1 {
        1
    } else {
        -1
    }
}

fn lower_bound(sorted: &[SfcValue], v: &SfcValue) -> usize {
    sorted.partition_point(|x| x < v)
}

impl<'a> GasEnv<'a> {
    fn new(
        tree: &BMTree,
        points: &'a [Point],
        fixed: &'a [SfcValue],
        queries: &'a [WindowQuery],
        block_size: usize,
    ) -> Result<Self> {
        if tree.is_complete() {
            return Err(Error::Precondition("greedy selection needs a non-empty frontier".into()));
        }
        if (points.is_empty() && fixed.is_empty()) || block_size == 0 {
            return Err(Error::Precondition("greedy selection needs sample points and a positive block size".into()));
        }
        let slot: HashMap<NodeId, usize> = tree.frontier().iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let f = tree.frontier().len();
        let mut pts_at = vec![Vec::new(); f];
        let mut pv = Vec::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            let mut last = None;
            pv.push(tree.walk(p.coords(), |n| last = Some((n.id(), n.is_filled()))));
            if let Some((id, false)) = last {
                pts_at[slot[&id]].push(i as u32);
            }
        }
        let corners: Vec<&[u32]> = queries
            .iter()
            .flat_map(|q| [q.min_corner().coords(), q.max_corner().coords()])
            .collect();
        let mut corners_at = vec![Vec::new(); f];
        let mut cv = Vec::with_capacity(corners.len());
        for (i, c) in corners.iter().enumerate() {
            let mut last = None;
            cv.push(tree.walk(c, |n| last = Some((n.id(), n.is_filled()))));
            if let Some((id, false)) = last {
                corners_at[slot[&id]].push(i as u32);
            }
        }
        let mut sorted = pv.clone();
        sorted.sort_unstable();
        let ncorners = corners.len();
        let mut env = Self {
            tree: tree.clone(),
            points,
            fixed,
            block_size,
            pv,
            sorted,
            corners,
            cv,
            crank: vec![0; ncorners],
            corner_order: (0..ncorners as u32).collect(),
            pts_at,
            corners_at,
            total: 0,
            stamp: vec![0; ncorners],
            epoch: 0,
        };
        env.refresh_corners();
        Ok(env)
    }

    #[inline]
    fn block(&self, rank: usize) -> i64 {
        block_of_rank(rank, self.sorted.len() + self.fixed.len(), self.block_size) as i64
    }

    fn refresh_corners(&mut self) {
        for i in 0..self.corners.len() {
            self.crank[i] = lower_bound(&self.sorted, &self.cv[i]) + lower_bound(self.fixed, &self.cv[i]);
        }
        let cv = &self.cv;
        self.corner_order.sort_unstable_by(|&a, &b| cv[a as usize].cmp(&cv[b as usize]).then(a.cmp(&b)));
        self.total = (0..self.corners.len()).map(|i| sign(i) * self.block(self.crank[i])).sum();
    }

    fn run(&mut self) -> Result<LevelAction> {
        let frontier = self.tree.frontier().to_vec();
        let mut fills = Vec::with_capacity(frontier.len());
        for (k, &id) in frontier.iter().enumerate() {
            let legal = self.tree.legal_dims(id);
            let mut best: Option<(i64, u8, Vec<SfcValue>)> = None;
            let old: Vec<SfcValue> = {
                let mut v: Vec<SfcValue> = self.pts_at[k].iter().map(|&i| self.pv[i as usize]).collect();
                v.sort_unstable();
                v
            };
            for &d in &legal {
                self.tree.fill_node(id, NodeFill::new(d, true));
                let new_vals: Vec<SfcValue> = self.pts_at[k]
                    .iter()
                    .map(|&i| self.tree.evaluate_coords(self.points[i as usize].coords()))
                    .collect();
                self.tree.clear_node(id);
                if legal.len() == 1 {
                    best = Some((self.total, d, new_vals));
                    break;
                }
                let mut new_sorted = new_vals.clone();
                new_sorted.sort_unstable();
                let delta = self.candidate_delta(k, id, d, &old, &new_sorted);
                if best.as_ref().is_none_or(|b| self.total + delta < b.0) {
                    best = Some((self.total + delta, d, new_vals));
                }
            }
            let (_, d, new_vals) = best.expect("every frontier node has a legal dimension");
            self.commit(k, id, d, &old, new_vals);
            fills.push(NodeFill::new(d, true));
        }
        Ok(LevelAction(fills))
    }

    /// Change in total block distance if node `id` (frontier slot `k`) were
    /// filled with dimension `d`.
    fn candidate_delta(&mut self, k: usize, id: NodeId, d: u8, old: &[SfcValue], new: &[SfcValue]) -> i64 {
        self.epoch += 1;
        let epoch = self.epoch;
        let mut delta = 0i64;

        self.tree.fill_node(id, NodeFill::new(d, true));
        for &c in &self.corners_at[k] {
            let c = c as usize;
            self.stamp[c] = epoch;
            let v = self.tree.evaluate_coords(self.corners[c]);
            let rank = lower_bound(&self.sorted, &v) + lower_bound(self.fixed, &v) - lower_bound(old, &v)
                + lower_bound(new, &v);
            delta += sign(c) * (self.block(rank) - self.block(self.crank[c]));
        }
        self.tree.clear_node(id);

        if old.is_empty() {
            return delta;
        }
        // Outside corners can only move if they fall between the moved values.
        let lo = old[0].min(new[0]);
        let hi = old[old.len() - 1].max(new[new.len() - 1]);
        let start = self.corner_order.partition_point(|&c| self.cv[c as usize] < lo);
        for &c in &self.corner_order[start..] {
            let c = c as usize;
            let v = self.cv[c];
            if v > hi {
                break;
            }
            if self.stamp[c] == epoch {
                continue;
            }
            let rank = self.crank[c] - lower_bound(old, &v) + lower_bound(new, &v);
            delta += sign(c) * (self.block(rank) - self.block(self.crank[c]));
        }
        delta
    }

    fn commit(&mut self, k: usize, id: NodeId, d: u8, old: &[SfcValue], new_vals: Vec<SfcValue>) {
        self.tree.fill_node(id, NodeFill::new(d, true));
        for (&i, v) in self.pts_at[k].iter().zip(new_vals) {
            self.pv[i as usize] = v;
        }
        let mut new_sorted: Vec<SfcValue> = self.pts_at[k].iter().map(|&i| self.pv[i as usize]).collect();
        new_sorted.sort_unstable();
        self.sorted = replace_sorted(&self.sorted, old, &new_sorted);
        for &c in &self.corners_at[k] {
            self.cv[c as usize] = self.tree.evaluate_coords(self.corners[c as usize]);
        }
        self.refresh_corners();
    }
}

/// Removes the multiset `old` from `sorted` and merges in `new`; all three
/// are sorted and `old` is contained in `sorted`.
fn replace_sorted(sorted: &[SfcValue], old: &[SfcValue], new: &[SfcValue]) -> Vec<SfcValue> {
    let mut out = Vec::with_capacity(sorted.len() - old.len() + new.len());
    let (mut j, mut k) = (0, 0);
    for &v in sorted {
        if j < old.len() && old[j] == v {
            j += 1;
            continue;
        }
        while k < new.len() && new[k] < v {
            out.push(new[k]);
            k += 1;
        }
        out.push(v);
    }
    out.extend_from_slice(&new[k..]);
    out
}
