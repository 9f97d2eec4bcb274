//! An in-memory block index over the full dataset, keyed by a tree's SFC
//! values, with block-access counting and a brute-force oracle.

use std::fmt;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bmtree::BMTree;
use crate::cost_model::WindowQuery;
use crate::error::{Error, Result};
use crate::sfc::{Point, SfcValue};

pub const DEFAULT_PAGE_SIZE: usize = 200;

#[derive(Debug, Clone)]
pub struct BlockIndex {
    values: Vec<SfcValue>,
    points: Vec<Point>,
    page_size: usize,
}

#[derive(Debug, Clone)]
pub struct QueryOutcome {
    pub results: Vec<Point>,
    pub blocks_accessed: usize,
    pub wall_time: Duration,
}

impl BlockIndex {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn page_size(&self) -> usize {
        self.page_size
    }

    pub fn block_count(&self) -> usize {
        self.values.len().div_ceil(self.page_size)
    }

    /// Smallest value stored in each block.
    pub fn boundaries(&self) -> Vec<SfcValue> {
        self.values.iter().step_by(self.page_size).copied().collect()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&SfcValue, &Point)> {
        self.values.iter().zip(&self.points)
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }
}

pub fn build_index(tree: &BMTree, data: &[Point], page_size: usize) -> Result<BlockIndex> {
    if data.is_empty() {
        return Err(Error::Precondition("cannot index an empty dataset".into()));
    }
    if page_size == 0 {
        return Err(Error::Config("page size must be positive".into()));
    }
    data.iter().try_for_each(|p| tree.config().check_coords(p.coords()))?;
    let mut keyed: Vec<(SfcValue, u32)> = data
        .par_iter()
        .enumerate()
        .map(|(i, p)| (tree.evaluate_coords(p.coords()), i as u32))
        .collect();
    keyed.par_sort_unstable();
    let values = keyed.iter().map(|&(v, _)| v).collect();
    let points = keyed.iter().map(|&(_, i)| data[i as usize].clone()).collect();
    Ok(BlockIndex {
        values,
        points,
        page_size,
    })
}

/// Scans the contiguous run of blocks holding values in `[v_min, v_max]`
/// and keeps the points inside the window.
pub fn window_query(index: &BlockIndex, tree: &BMTree, query: &WindowQuery) -> QueryOutcome {
    let start = Instant::now();
    let lo_v = tree.evaluate_coords(query.min_corner().coords());
    let hi_v = tree.evaluate_coords(query.max_corner().coords());
    let lo = index.values.partition_point(|v| *v < lo_v);
    let hi = index.values.partition_point(|v| *v <= hi_v);
    let (results, blocks_accessed) = if lo >= hi {
        (Vec::new(), 0)
    } else {
        let results = index.points[lo..hi]
            .iter()
            .filter(|p| query.contains(p))
            .cloned()
            .collect();
        (results, (hi - 1) / index.page_size - lo / index.page_size + 1)
    };
    QueryOutcome {
        results,
        blocks_accessed,
        wall_time: start.elapsed(),
    }
}

pub fn brute_force_query(data: &[Point], query: &WindowQuery) -> Vec<Point> {
    data.iter().filter(|p| query.contains(p)).cloned().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub curve: String,
    pub queries: usize,
    pub total_blocks: u64,
    pub mean_blocks: f64,
    pub p50_latency_us: f64,
    pub p95_latency_us: f64,
    pub p99_latency_us: f64,
    pub recall: f64,
}

impl BenchSummary {
    pub const TABLE_HEADER: &'static str =
        "curve                 queries  total_blocks  mean_blocks   p50_us   p95_us   p99_us  recall";

    pub fn table_row(&self) -> String {
        format!(
            "{:<20} {:>8} {:>13} {:>12.3} {:>8.1} {:>8.1} {:>8.1} {:>7.4}",
            self.curve,
            self.queries,
            self.total_blocks,
            self.mean_blocks,
            self.p50_latency_us,
            self.p95_latency_us,
            self.p99_latency_us,
            self.recall
        )
    }
}

impl fmt::Display for BenchSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", Self::TABLE_HEADER)?;
        write!(f, "{}", self.table_row())
    }
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Runs every query, checks each result against the brute-force oracle and
/// summarises block accesses and latency. Any missed point is an error.
pub fn bench_workload(index: &BlockIndex, tree: &BMTree, queries: &[WindowQuery], curve: &str) -> Result<BenchSummary> {
    if queries.is_empty() {
        return Err(Error::Precondition("the benchmark workload has no queries".into()));
    }
    let outcomes: Vec<QueryOutcome> = queries.iter().map(|q| window_query(index, tree, q)).collect();
    let expected: Vec<usize> = queries
        .par_iter()
        .map(|q| index.points.iter().filter(|p| q.contains(p)).count())
        .collect();
    let found: usize = outcomes.iter().map(|o| o.results.len()).sum();
    let want: usize = expected.iter().sum();
    if let Some(i) = (0..queries.len()).find(|&i| outcomes[i].results.len() != expected[i]) {
        return Err(Error::Recall(format!(
            "query {i} returned {} of {} points under curve {curve}",
            outcomes[i].results.len(),
            expected[i]
        )));
    }
    let total_blocks: u64 = outcomes.iter().map(|o| o.blocks_accessed as u64).sum();
    let mut lat: Vec<f64> = outcomes.iter().map(|o| o.wall_time.as_secs_f64() * 1e6).collect();
    lat.sort_by(f64::total_cmp);
    Ok(BenchSummary {
        curve: curve.to_string(),
        queries: queries.len(),
        total_blocks,
        mean_blocks: total_blocks as f64 / queries.len() as f64,
        p50_latency_us: percentile(&lat, 50.0),
        p95_latency_us: percentile(&lat, 95.0),
        p99_latency_us: percentile(&lat, 99.0),
        recall: if want == 0 { 1.0 } else { found as f64 / want as f64 },
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::bmtree::LevelAction;
    use crate::cost_model::{build_layout_for, scan_range};
    use crate::sfc::{classic_bmp, Bmp, ClassicCurve, GridConfig};

    fn pt(c: &[u32]) -> Point {
        Point::new_unchecked(c.to_vec())
    }

    fn wq(lo: &[u32], hi: &[u32]) -> WindowQuery {
        WindowQuery::new_unchecked(pt(lo), pt(hi))
    }

    fn random_points(n: usize, side: u32, rng: &mut impl Rng) -> Vec<Point> {
        (0..n).map(|_| pt(&[rng.random_range(0..side), rng.random_range(0..side)])).collect()
    }

    fn sorted(mut v: Vec<Point>) -> Vec<Point> {
        v.sort();
        v
    }

    #[test]
    fn block_counts_and_whole_space() {
        let c = GridConfig::new(2, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = random_points(1000, 256, &mut rng);
        let t = BMTree::empty(c);
        let idx = build_index(&t, &data, 200).unwrap();
        assert_eq!(idx.block_count(), 5);
        assert_eq!(idx.boundaries().len(), 5);
        let all = window_query(&idx, &t, &wq(&[0, 0], &[255, 255]));
        assert_eq!(all.blocks_accessed, 5);
        assert_eq!(sorted(all.results), sorted(data.clone()));
        assert!(build_index(&t, &[], 10).is_err());
    }

    #[test]
    fn chain_and_empty_tree_index_identically() {
        let c = GridConfig::new(2, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = random_points(300, 64, &mut rng);
        let z = BMTree::from_single_bmp(&classic_bmp(ClassicCurve::Z, &c), c).unwrap();
        let a = build_index(&z, &data, 16).unwrap();
        let b = build_index(&BMTree::empty(c), &data, 16).unwrap();
        assert!(a.entries().eq(b.entries()));
    }

    #[test]
    fn micro_world_piecewise_curve_reads_two_blocks_per_query() {
        let c = GridConfig::new(2, 2).unwrap();
        let data: Vec<Point> = (0..4).flat_map(|x| (0..4).map(move |y| pt(&[x, y]))).collect();
        // Left half ordered by XYYX, right half by XYXY.
        let mut t = BMTree::empty(c);
        for a in ["X", "yy", "yx", "xy"] {
            t.apply_level_action_in_place(&LevelAction::parse(a).unwrap()).unwrap();
        }
        let left = Bmp::parse("XYYX", &c).unwrap();
        let right = Bmp::parse("XYXY", &c).unwrap();
        for p in &data {
            let bmp = if p.coords()[0] < 2 { &left } else { &right };
            assert_eq!(t.evaluate(p).unwrap(), crate::sfc::bmp_value(bmp, p, &c).unwrap());
        }
        let idx = build_index(&t, &data, 1).unwrap();
        assert_eq!(window_query(&idx, &t, &wq(&[0, 3], &[1, 3])).blocks_accessed, 2);
        assert_eq!(window_query(&idx, &t, &wq(&[2, 2], &[2, 3])).blocks_accessed, 2);
    }

    #[test]
    fn empty_region_and_point_queries() {
        let c = GridConfig::new(2, 6).unwrap();
        let data = vec![pt(&[1, 1]), pt(&[60, 60]), pt(&[30, 2])];
        let t = BMTree::empty(c);
        let idx = build_index(&t, &data, 1).unwrap();
        let none = window_query(&idx, &t, &wq(&[10, 10], &[20, 20]));
        assert!(none.results.is_empty());
        let one = window_query(&idx, &t, &wq(&[30, 2], &[30, 2]));
        assert_eq!(one.results, vec![pt(&[30, 2])]);
        assert_eq!(brute_force_query(&data, &wq(&[30, 2], &[30, 2])), vec![pt(&[30, 2])]);
        assert_eq!(brute_force_query(&data, &wq(&[0, 0], &[63, 63])).len(), 3);
    }

    #[test]
    fn summaries_add_up() {
        let c = GridConfig::new(2, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = random_points(2000, 256, &mut rng);
        let t = BMTree::empty(c);
        let idx = build_index(&t, &data, 50).unwrap();
        let q = wq(&[10, 10], &[90, 40]);
        let single = bench_workload(&idx, &t, std::slice::from_ref(&q), "Z").unwrap();
        assert_eq!(single.total_blocks as usize, window_query(&idx, &t, &q).blocks_accessed);
        let qs = vec![q.clone(), wq(&[0, 200], &[255, 210])];
        let once = bench_workload(&idx, &t, &qs, "Z").unwrap();
        let twice = bench_workload(&idx, &t, &[qs.clone(), qs.clone()].concat(), "Z").unwrap();
        assert_eq!(twice.total_blocks, 2 * once.total_blocks);
        let reversed: Vec<_> = qs.iter().rev().cloned().collect();
        assert_eq!(bench_workload(&idx, &t, &reversed, "Z").unwrap().total_blocks, once.total_blocks);
        assert_eq!(once.recall, 1.0);
        let json = serde_json::to_string(&once).unwrap();
        assert!(json.contains("\"total_blocks\""));
        assert!(once.to_string().lines().count() == 2);
    }

    proptest! {
        #[test]
        fn index_matches_oracle_and_scan_range(seed in any::<u64>()) {
            let c = GridConfig::new(2, 7).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut t = BMTree::empty(c);
            for _ in 0..5 {
                let fills = t.frontier().iter().map(|&id| {
                    let legal = t.legal_dims(id);
                    crate::bmtree::NodeFill::new(legal[rng.random_range(0..legal.len())], rng.random_bool(0.6))
                }).collect();
                t.apply_level_action_in_place(&LevelAction(fills)).unwrap();
            }
            // Distinct points: duplicates of the max corner may span extra blocks.
            let data: Vec<Point> = rand::seq::index::sample(&mut rng, 128 * 128, 500)
                .into_iter()
                .map(|i| pt(&[i as u32 % 128, i as u32 / 128]))
                .collect();
            let p = rng.random_range(1..40);
            let idx = build_index(&t, &data, p).unwrap();
            let layout = build_layout_for(&t, &data, p).unwrap();
            for _ in 0..20 {
                let (x0, x1) = (rng.random_range(0..128u32), rng.random_range(0..128u32));
                let (y0, y1) = (rng.random_range(0..128u32), rng.random_range(0..128u32));
                let q = wq(&[x0.min(x1), y0.min(y1)], &[x0.max(x1), y0.max(y1)]);
                let out = window_query(&idx, &t, &q);
                prop_assert_eq!(sorted(out.results), sorted(brute_force_query(&data, &q)));
                let sr = scan_range(&layout, &t, &q) as usize;
                prop_assert!(sr <= out.blocks_accessed && out.blocks_accessed <= sr + 1);
            }
        }
    }
}
