use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::bmtree::{from_document, to_document, LevelAction};
use crate::learner::MctsConfig;
use crate::sfc::GridConfig;

fn pt(c: &[u32]) -> Point {
    Point::new_unchecked(c.to_vec())
}

fn wq(lo: &[u32], hi: &[u32]) -> WindowQuery {
    WindowQuery::new_unchecked(pt(lo), pt(hi))
}

fn js_oracle(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..p.len() {
        let m = (p[i] + q[i]) / 2.0;
        if p[i] > 0.0 {
            total += 0.5 * p[i] * (p[i] / m).ln();
        }
        if q[i] > 0.0 {
            total += 0.5 * q[i] * (q[i] / m).ln();
        }
    }
    total / 2f64.ln()
}

#[test]
fn data_shift_on_published_counts() {
    let got = data_shift(&[7, 3, 6, 6], &[5, 6, 8, 3]);
    let want = js_oracle(&[7.0 / 22.0, 3.0 / 22.0, 6.0 / 22.0, 6.0 / 22.0], &[5.0 / 22.0, 6.0 / 22.0, 8.0 / 22.0, 3.0 / 22.0]);
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    assert_eq!(data_shift(&[1, 2, 3, 4], &[2, 4, 6, 8]), 0.0);
    assert_eq!(data_shift(&[3, 0], &[0, 5]), 1.0);
    assert_eq!(data_shift(&[0, 0], &[0, 5]), 1.0);
    assert_eq!(data_shift(&[0, 0], &[0, 0]), 0.0);
}

fn cats(items: &[(i32, i8, u64)]) -> BTreeMap<QueryCategory, u64> {
    items
        .iter()
        .map(|&(log_area, aspect, n)| (QueryCategory { log_area, aspect }, n))
        .collect()
}

#[test]
fn query_cell_two_categories_by_hand() {
    // Two categories, two queries each side: eps = 1/4, so each side is
    // (2.25, 0.25) / 2.5 = (0.9, 0.1) and its mirror.
    let d = query_cell_divergence(&cats(&[(10, 0, 2)]), &cats(&[(12, 1, 2)]));
    let kl = 0.9 * (0.9f64 / 0.5).log2() + 0.1 * (0.1f64 / 0.5).log2();
    assert!((d - kl).abs() < 1e-12, "{d} vs {kl}");
}

#[test]
fn query_cell_edge_cases() {
    let a = cats(&[(10, 0, 3), (11, -1, 1)]);
    assert_eq!(query_cell_divergence(&a, &a), 0.0);
    assert_eq!(query_cell_divergence(&BTreeMap::new(), &BTreeMap::new()), 0.0);
    // A lone category smoothed against nothing is uniform on both sides.
    assert!(query_cell_divergence(&cats(&[(10, 0, 5)]), &BTreeMap::new()).abs() < 1e-12);
    let shifted = query_shift(&[a.clone(), BTreeMap::new()], &[cats(&[(20, 1, 4)]), BTreeMap::new()]);
    assert!(shifted > 0.0 && shifted < 0.5);
}

#[test]
fn category_of_window() {
    let c = QueryCategory::of(&wq(&[0, 0], &[7, 1]));
    assert_eq!(c, QueryCategory { log_area: 4, aspect: 1 });
    let c = QueryCategory::of(&wq(&[0, 0], &[2, 4]));
    assert_eq!(c, QueryCategory { log_area: 3, aspect: -1 });
}

fn two_level_tree(c: GridConfig) -> BMTree {
    let mut t = BMTree::empty(c);
    for a in ["X", "YY"] {
        t.apply_level_action_in_place(&LevelAction::parse(a).unwrap()).unwrap();
    }
    t.seal();
    t
}

/// Old data and queries sit in the left half, new ones move to the right.
fn moving_world(seed: u64) -> (GridConfig, Vec<Point>, Vec<Point>, Vec<WindowQuery>, Vec<WindowQuery>) {
    let c = GridConfig::new(2, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cloud = |x0: u32| -> Vec<Point> {
        (0..600)
            .map(|_| pt(&[x0 + rng.random_range(0..128), rng.random_range(0..256)]))
            .collect()
    };
    let old = cloud(0);
    let mut new = cloud(0);
    new.truncate(200);
    new.extend(cloud(128).into_iter().take(400));
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let mut windows = |x0: u32, w: u32, h: u32| -> Vec<WindowQuery> {
        (0..60)
            .map(|_| {
                let x = x0 + rng.random_range(0..128 - w);
                let y = rng.random_range(0..256 - h);
                wq(&[x, y], &[x + w - 1, y + h - 1])
            })
            .collect()
    };
    let qo = windows(0, 16, 16);
    let mut qn = windows(0, 16, 16);
    qn.truncate(20);
    qn.extend(windows(128, 4, 64).into_iter().take(40));
    (c, old, new, qo, qn)
}

#[test]
fn detection_flags_the_changed_half() {
    let (c, old, new, qo, qn) = moving_world(3);
    let tree = two_level_tree(c);
    let cfg = DriftConfig::default();
    let report = detect(&tree, &old, &new, &qo, &qn, &cfg).unwrap();
    let root = &report.nodes[0];
    assert_eq!(root.depth, 1);
    assert!(root.data_shift > 0.1, "{}", root.data_shift);
    let right = report.nodes.iter().find(|r| r.depth == 2 && r.node == tree.node(tree.root()).unwrap().children().nth(1).unwrap().0).unwrap();
    assert_eq!(right.data_shift, 1.0);
    assert!(right.op_score == 0.0 || right.old_queries > 0);
    // The root covers the whole grid and cannot fit in half the budget.
    assert!(!root.selected);
    for id in &report.selected {
        assert!(tree.subspace_fraction(NodeId(*id)) <= 0.5);
    }
    let json = serde_json::to_string(&report).unwrap();
    let back: DriftReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
    assert!(report.to_table().lines().count() == report.nodes.len() + 2);
}

#[test]
fn no_drift_means_no_selection() {
    let (c, old, _, qo, _) = moving_world(5);
    let tree = two_level_tree(c);
    let report = detect(&tree, &old, &old, &qo, &qo, &DriftConfig::default()).unwrap();
    assert!(report.nodes.iter().all(|r| r.shift == 0.0 && r.op_score == 0.0));
    assert!(report.selected.is_empty());
}

fn report(node: u32, depth: u32, fraction: f64, shift: f64, op: f64) -> NodeShiftReport {
    NodeShiftReport {
        node,
        depth,
        subspace_fraction: fraction,
        data_shift: shift,
        query_shift: shift,
        shift,
        op_score: op,
        old_queries: 1,
        new_queries: 1,
        selected: false,
    }
}

#[test]
fn selection_budget_and_nesting() {
    let c = GridConfig::new(2, 4).unwrap();
    let tree = two_level_tree(c);
    let kids: Vec<NodeId> = tree.node(tree.root()).unwrap().children().collect();
    let grand: Vec<NodeId> = tree.node(kids[0]).unwrap().children().collect();

    // A half-space fits a budget of exactly one half.
    let rs = vec![report(0, 1, 1.0, 0.9, 5.0), report(kids[0].0, 2, 0.5, 0.3, 1.0)];
    assert_eq!(select_nodes(&tree, &rs, 0.1, 0.5), vec![kids[0]]);

    // Of two siblings only the one with the larger op fits.
    let rs = vec![report(kids[0].0, 2, 0.5, 0.3, 1.0), report(kids[1].0, 2, 0.5, 0.3, 4.0)];
    assert_eq!(select_nodes(&tree, &rs, 0.1, 0.5), vec![kids[1]]);

    // Below threshold is ignored; descendants of accepted nodes are skipped.
    let rs = vec![
        report(kids[0].0, 2, 0.5, 0.05, 9.0),
        report(kids[1].0, 2, 0.5, 0.3, 1.0),
        report(grand[0].0, 3, 0.25, 0.5, 1.0),
    ];
    assert_eq!(select_nodes(&tree, &rs, 0.1, 1.0), vec![kids[1], grand[0]]);
    assert_eq!(select_nodes(&tree, &rs, 0.1, 0.6), vec![kids[1]]);
    assert_eq!(relaxed_theta(&rs, 0.1), Some(0.05));
    assert_eq!(relaxed_theta(&rs, 0.01), None);
}

#[test]
fn partial_retrain_leaves_outside_points_alone() {
    let (c, _, new, _, qn) = moving_world(7);
    let tree = two_level_tree(c);
    let right = tree.node(tree.root()).unwrap().children().nth(1).unwrap();
    let mcts = MctsConfig {
        rollouts: 4,
        max_depth: 6,
        block_size: 20,
        ..MctsConfig::default()
    };
    let out = partial_retrain(&tree, &new, &qn, &[right], &mcts).unwrap();
    assert!(out.tree_sr <= out.original_sr);
    assert!(out.improvement >= 0.0);
    assert!(out.tree.is_complete());
    assert_eq!(from_document(&to_document(&out.tree)).unwrap().evaluate_coords(&[3, 4]), out.tree.evaluate_coords(&[3, 4]));
    for p in &new {
        if !tree.path(p.coords()).contains(&right) {
            assert_eq!(out.tree.evaluate_coords(p.coords()), tree.evaluate_coords(p.coords()));
        }
    }
    // Injective over a coarser grid check: distinct points keep distinct values.
    let mut vals: Vec<_> = (0..256u32).step_by(7).flat_map(|x| (0..256u32).step_by(5).map(move |y| [x, y])).map(|p| out.tree.evaluate_coords(&p)).collect();
    let n = vals.len();
    vals.sort_unstable();
    vals.dedup();
    assert_eq!(vals.len(), n);
}

#[test]
fn adaptive_retrain_never_worse() {
    let (c, old, new, qo, qn) = moving_world(11);
    let tree = two_level_tree(c);
    let cfg = DriftConfig::default();
    let report = detect(&tree, &old, &new, &qo, &qn, &cfg).unwrap();
    let mcts = MctsConfig {
        rollouts: 4,
        max_depth: 6,
        block_size: 20,
        ..MctsConfig::default()
    };
    let out = adaptive_retrain(&tree, &report, &new, &qn, &cfg, &mcts).unwrap();
    assert!(out.tree_sr <= out.original_sr);
    assert!(out.tree.is_complete());
    assert_eq!(out.recommend_full_retrain, out.improvement < retrain::MIN_IMPROVEMENT);
}
