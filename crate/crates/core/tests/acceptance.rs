//! End-to-end acceptance checks. Each criterion prints one PASS or FAIL line;
//! the process exits non-zero if any criterion fails.

use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use piecewise_sfc::bmtree::{to_document, BMTree, LevelAction, NodeFill};
use piecewise_sfc::cost_model::{build_layout, scan_range, SampleSet, WindowQuery};
use piecewise_sfc::drift::{self, adaptive_retrain, data_shift, detect, query_shift, DriftConfig, QueryCategory};
use piecewise_sfc::index_bench::{bench_workload, brute_force_query, build_index, window_query, DEFAULT_PAGE_SIZE};
use piecewise_sfc::learner::{train, MctsConfig};
use piecewise_sfc::sfc::{bmp_value, classic_bmp, Bmp, ClassicCurve, GridConfig, Point};
use piecewise_sfc::workload::{gen_data, gen_queries, mix_shift, DataDist, DataSpec, QueryDist, QuerySpec};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(cond: bool, msg: String) -> Outcome {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn random_complete_tree(grid: GridConfig, rng: &mut ChaCha8Rng) -> BMTree {
    let mut t = BMTree::empty(grid);
    while !t.is_complete() {
        let fills = t
            .frontier()
            .iter()
            .map(|&id| {
                let legal = t.legal_dims(id);
                NodeFill::new(legal[rng.random_range(0..legal.len())], rng.random_bool(0.5))
            })
            .collect();
        t.apply_level_action_in_place(&LevelAction(fills)).unwrap();
    }
    t
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let grid = GridConfig::new(2, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cells: Vec<[u32; 2]> = (0..16).flat_map(|x| (0..16).map(move |y| [x, y])).collect();
    let mut injection = 0;
    let mut monotone = 0;
    for _ in 0..50 {
        let t = random_complete_tree(grid, &mut rng);
        let vals: Vec<_> = cells.iter().map(|c| t.evaluate_coords(c)).collect();
        let mut sorted = vals.clone();
        sorted.sort_unstable();
        sorted.dedup();
        injection += 256 - sorted.len();
        for (i, a) in cells.iter().enumerate() {
            for (j, b) in cells.iter().enumerate() {
                if i != j && a[0] <= b[0] && a[1] <= b[1] && vals[i] >= vals[j] {
                    monotone += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        injection == 0 && monotone == 0 && secs < 10.0,
        format!("50 trees: {injection} injection and {monotone} monotonicity violations in {secs:.2}s"),
    )
}

fn interleave(x: u32, y: u32, m: u32) -> u128 {
    (0..m).fold(0u128, |acc, i| {
        let bit = m - 1 - i;
        (acc << 2) | (((x >> bit) & 1) << 1 | ((y >> bit) & 1)) as u128
    })
}

fn criterion_2() -> Outcome {
    let grid = GridConfig::new(2, 6).unwrap();
    let z = BMTree::from_single_bmp(&classic_bmp(ClassicCurve::Z, &grid), grid).unwrap();
    let mut mismatches = 0;
    for x in 0..64 {
        for y in 0..64 {
            if z.evaluate_coords(&[x, y]).to_u128() != Some(interleave(x, y, 6)) {
                mismatches += 1;
            }
        }
    }
    let small = GridConfig::new(2, 2).unwrap();
    let fig = bmp_value(
        &Bmp::parse("XYXY", &small).unwrap(),
        &Point::new(vec![2, 3], &small).unwrap(),
        &small,
    )
    .unwrap()
    .to_u128();
    check(
        mismatches == 0 && fig == Some(13),
        format!("{mismatches} mismatches over 4096 cells at m=6; (2,3) under XYXY -> {fig:?}"),
    )
}

fn random_windows(grid: &GridConfig, count: usize, seed: u64) -> Vec<WindowQuery> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = grid.side();
    (0..count)
        .map(|_| {
            let (w, h) = (rng.random_range(1..side / 8), rng.random_range(1..side / 8));
            let (x, y) = (rng.random_range(0..side - w), rng.random_range(0..side - h));
            WindowQuery::new(
                Point::new(vec![x, y], grid).unwrap(),
                Point::new(vec![x + w, y + h], grid).unwrap(),
                grid,
            )
            .unwrap()
        })
        .collect()
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let grid = GridConfig::new(2, 16).unwrap();
    let data = gen_data(&DataSpec::new(DataDist::Gau, 10_000, grid, 3)).unwrap();
    let queries = random_windows(&grid, 1000, 4);
    let sample = SampleSet::draw(&data, 0.2, 5).unwrap();
    let cfg = MctsConfig {
        rollouts: 4,
        max_depth: 8,
        ..MctsConfig::default()
    };
    let learned = train(&sample, &queries, grid, &cfg).unwrap().tree;
    let curves = [
        ("Z", BMTree::empty(grid)),
        ("C", BMTree::from_single_bmp(&classic_bmp(ClassicCurve::C, &grid), grid).unwrap()),
        ("learned", learned),
    ];
    let mut bad = Vec::new();
    for (name, tree) in &curves {
        let index = build_index(tree, &data, DEFAULT_PAGE_SIZE).unwrap();
        for q in &queries {
            let mut got = window_query(&index, tree, q).results;
            let mut want = brute_force_query(&data, q);
            got.sort();
            want.sort();
            if got != want {
                bad.push(*name);
                break;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        bad.is_empty() && secs < 60.0,
        format!("1000 queries x 3 curves, mismatching curves {bad:?}, {secs:.2}s"),
    )
}

fn single_thread<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

struct Desk {
    grid: GridConfig,
    data: Vec<Point>,
    train_q: Vec<WindowQuery>,
    test_q: Vec<WindowQuery>,
    mcts: MctsConfig,
}

fn desk() -> Desk {
    let grid = GridConfig::new(2, 20).unwrap();
    let data = gen_data(&DataSpec::new(DataDist::Gau, 100_000, grid, 42)).unwrap();
    let ske = |count, seed| QuerySpec {
        cluster_seed: Some(7),
        ..QuerySpec::new(QueryDist::Ske, count, seed)
    };
    Desk {
        grid,
        data,
        train_q: gen_queries(&ske(1000, 1), &grid).unwrap(),
        test_q: gen_queries(&ske(2000, 2), &grid).unwrap(),
        mcts: MctsConfig {
            seed: 42,
            ..MctsConfig::default()
        },
    }
}

fn total_blocks(tree: &BMTree, data: &[Point], queries: &[WindowQuery], name: &str) -> u64 {
    let index = build_index(tree, data, DEFAULT_PAGE_SIZE).unwrap();
    bench_workload(&index, tree, queries, name).unwrap().total_blocks
}

fn criterion_4(d: &Desk) -> Outcome {
    let sample = SampleSet::draw(&d.data, d.mcts.sample_rate, d.mcts.seed).unwrap();
    let start = Instant::now();
    let out = single_thread(|| train(&sample, &d.train_q, d.grid, &d.mcts)).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let z = total_blocks(&BMTree::empty(d.grid), &d.data, &d.test_q, "Z");
    let learned = total_blocks(&out.tree, &d.data, &d.test_q, "learned");
    let ratio = learned as f64 / z as f64;
    check(
        ratio <= 0.95 && secs < 1800.0 && out.reward >= 0.05,
        format!(
            "test blocks learned {learned} vs Z {z} (ratio {ratio:.3}), train reward {:.3}, train {secs:.1}s single-threaded",
            out.reward
        ),
    )
}

fn criterion_5(d: &Desk) -> Outcome {
    let sample = SampleSet::draw(&d.data, d.mcts.sample_rate, d.mcts.seed).unwrap();
    let tree = BMTree::empty(d.grid);
    let layout = build_layout(&tree, &sample, d.mcts.block_size).unwrap();
    let index = build_index(&tree, &d.data, DEFAULT_PAGE_SIZE).unwrap();
    let queries = &d.test_q[..1000];
    let time = |f: &dyn Fn() -> u64| {
        let start = Instant::now();
        let mut sink = 0;
        for _ in 0..5 {
            sink += std::hint::black_box(f());
        }
        (start.elapsed() / 5, sink)
    };
    let (sr_time, _) = time(&|| queries.iter().map(|q| scan_range(&layout, &tree, q)).sum());
    let (wq_time, _) = time(&|| {
        queries
            .iter()
            .map(|q| window_query(&index, &tree, q).results.len() as u64)
            .sum()
    });
    let speedup = wq_time.as_secs_f64() / sr_time.as_secs_f64().max(1e-9);
    check(
        speedup >= 20.0,
        format!("1000 scan_range {:?} vs 1000 window queries {:?}: {speedup:.1}x", sr_time, wq_time),
    )
}

fn criterion_6(d: &Desk) -> Outcome {
    let mcts = &d.mcts;
    let old_sample = SampleSet::draw(&d.data, mcts.sample_rate, mcts.seed).unwrap();
    let stale = single_thread(|| train(&old_sample, &d.train_q, d.grid, mcts)).unwrap().tree;

    let uni = gen_data(&DataSpec::new(DataDist::Uni, 100_000, d.grid, 43)).unwrap();
    let new_data = mix_shift(&d.data, &uni, 0.9, 44).unwrap();
    let new_sample = SampleSet::draw(&new_data, mcts.sample_rate, mcts.seed).unwrap();

    let start = Instant::now();
    let full = single_thread(|| train(&new_sample, &d.train_q, d.grid, mcts)).unwrap().tree;
    let full_time = start.elapsed();

    let cfg = DriftConfig {
        rrc: 0.5,
        ..DriftConfig::default()
    };
    let detect_start = Instant::now();
    let report = single_thread(|| {
        detect(
            &stale,
            old_sample.points(),
            new_sample.points(),
            &d.train_q,
            &d.train_q,
            &cfg,
        )
    })
    .unwrap();
    let detect_time = detect_start.elapsed();
    let start = Instant::now();
    let partial =
        single_thread(|| adaptive_retrain(&stale, &report, new_sample.points(), &d.train_q, &cfg, mcts)).unwrap();
    let partial_time = start.elapsed();

    let b_stale = total_blocks(&stale, &new_data, &d.test_q, "stale");
    let b_full = total_blocks(&full, &new_data, &d.test_q, "full");
    let b_partial = total_blocks(&partial.tree, &new_data, &d.test_q, "partial");
    let full_gain = b_stale as f64 - b_full as f64;
    let partial_gain = b_stale as f64 - b_partial as f64;

    let retrained: Vec<_> = partial.retrained.iter().map(|&id| piecewise_sfc::bmtree::NodeId(id)).collect();
    let moved = if partial.kept_original {
        0
    } else {
        new_data
            .iter()
            .filter(|p| !stale.path(p.coords()).iter().any(|n| retrained.contains(n)))
            .filter(|p| stale.evaluate_coords(p.coords()) != partial.tree.evaluate_coords(p.coords()))
            .count()
    };
    let time_ratio = partial_time.as_secs_f64() / full_time.as_secs_f64();
    let gain_ratio = if full_gain > 0.0 { partial_gain / full_gain } else { f64::NAN };
    check(
        full_gain > 0.0 && gain_ratio >= 0.5 && time_ratio <= 0.5 && moved == 0,
        format!(
            "blocks stale {b_stale} full {b_full} partial {b_partial} (gain ratio {gain_ratio:.3}); \
             time partial {} vs full {} (ratio {time_ratio:.3}, detection {}); nodes {:?}{}; \
             {moved} outside points moved",
            fmt_dur(partial_time),
            fmt_dur(full_time),
            fmt_dur(detect_time),
            partial.retrained,
            if partial.escalated { " after escalation" } else { "" },
        ),
    )
}

fn fmt_dur(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn criterion_7() -> Outcome {
    let same = data_shift(&[4, 1, 0, 7], &[4, 1, 0, 7]);
    let cat = |a, b| QueryCategory { log_area: a, aspect: b };
    let cells = vec![[(cat(10, 0), 3u64), (cat(12, 1), 2)].into_iter().collect(); 4];
    let same_q = query_shift(&cells, &cells);
    let disjoint = data_shift(&[5, 3, 0, 0], &[0, 0, 2, 9]);
    let p = [7.0, 3.0, 6.0, 6.0].map(|c: f64| c / 22.0);
    let q = [5.0, 6.0, 8.0, 3.0].map(|c: f64| c / 22.0);
    let mut oracle = 0.0;
    for i in 0..4 {
        let m = 0.5 * (p[i] + q[i]);
        oracle += 0.5 * p[i] * (p[i] / m).ln() / 2f64.ln() + 0.5 * q[i] * (q[i] / m).ln() / 2f64.ln();
    }
    let published = data_shift(&[7, 3, 6, 6], &[5, 6, 8, 3]);
    let err = (published - oracle).abs();
    check(
        same == 0.0 && same_q == 0.0 && disjoint == 1.0 && err <= 1e-12 && drift::js_divergence(&p, &p) == 0.0,
        format!("identical {same}/{same_q}, disjoint {disjoint}, published {published:.15} (oracle error {err:.1e})"),
    )
}

fn criterion_8() -> Outcome {
    let grid = GridConfig::new(2, 16).unwrap();
    let data = gen_data(&DataSpec::new(DataDist::Gau, 20_000, grid, 8)).unwrap();
    let queries = gen_queries(&QuerySpec::new(QueryDist::Ske, 300, 9), &grid).unwrap();
    let uni = gen_data(&DataSpec::new(DataDist::Uni, 20_000, grid, 10)).unwrap();
    let shifted = mix_shift(&data, &uni, 0.7, 11).unwrap();
    let mcts = MctsConfig {
        rollouts: 4,
        max_depth: 8,
        sample_rate: 0.2,
        seed: 12,
        ..MctsConfig::default()
    };
    let run = || {
        let sample = SampleSet::draw(&data, mcts.sample_rate, mcts.seed).unwrap();
        let trained = train(&sample, &queries, grid, &mcts).unwrap().tree;
        let new_sample = SampleSet::draw(&shifted, mcts.sample_rate, mcts.seed).unwrap();
        let cfg = DriftConfig::default();
        let report = detect(&trained, sample.points(), new_sample.points(), &queries, &queries, &cfg).unwrap();
        let retrained = adaptive_retrain(&trained, &report, new_sample.points(), &queries, &cfg, &mcts).unwrap();
        (to_document(&trained), to_document(&retrained.tree))
    };
    let a = run();
    let b = run();
    check(
        a == b,
        format!("train {} bytes, retrain {} bytes, identical across runs: {}", a.0.len(), a.1.len(), a == b),
    )
}

fn main() {
    let desk = desk();
    let criteria: Vec<Criterion> = vec![
        ("1 correctness properties", Box::new(criterion_1)),
        ("2 baseline equivalence", Box::new(criterion_2)),
        ("3 oracle query equivalence", Box::new(criterion_3)),
        ("4 learned-curve improvement", Box::new(|| criterion_4(&desk))),
        ("5 scan-range efficiency", Box::new(|| criterion_5(&desk))),
        ("6 partial-retrain effectiveness", Box::new(|| criterion_6(&desk))),
        ("7 drift-score sanity", Box::new(criterion_7)),
        ("8 determinism", Box::new(criterion_8)),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in &criteria {
        if !only.is_empty() && !only.iter().any(|o| name.starts_with(o.as_str())) {
            continue;
        }
        let result = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(msg) => println!("PASS criterion {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {name}: {msg}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
