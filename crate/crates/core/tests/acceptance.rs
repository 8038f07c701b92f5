//! Acceptance suite. Prints one `[PASS]` or `[FAIL]` line per criterion to
//! stderr (visible without `--nocapture`) and fails if any hard gate fails.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use fuseplan_core::cost_model::iterative_sink_ram_bytes;
use fuseplan_core::fusion_graph::{path_peak_ram, path_total_macs};
use fuseplan_core::model_ir::tensor_bytes;
use fuseplan_core::optimizer::{
    heuristic_head_fusion, min_macs_path, minimax_ram_path, solve_p1, solve_p2, sweep, Constraint,
};
use fuseplan_core::oracle::{
    brute_force, enumerate_settings, random_model, run_fused, run_vanilla, RandomModelConfig,
    Tensor, Weights,
};
use fuseplan_core::report::format_kb;
use fuseplan_core::{
    build_graph, parse_model, Edge, FusionGraph, LayerSpec, NetworkModel, PlanResult, TensorShape,
};
use num_rational::Ratio;

const CORPUS_SIZE: u64 = 500;

enum Outcome {
    Pass(String),
    Fail(String),
}

use Outcome::{Fail, Pass};

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn corpus() -> impl Iterator<Item = (u64, NetworkModel)> {
    (0..CORPUS_SIZE).map(|seed| {
        let depth = 1 + (seed % 10) as usize;
        (
            seed,
            random_model(
                seed,
                RandomModelConfig {
                    depth,
                    max_spatial: 16,
                    max_channels: 8,
                },
            ),
        )
    })
}

/// Five caps spanning the graph's edge costs, the lowest below every edge.
fn p2_caps(g: &FusionGraph) -> Vec<u64> {
    let mut rams: Vec<u64> = g.edges().iter().map(|e| e.ram_bytes).collect();
    rams.sort_unstable();
    rams.dedup();
    let last = rams.len() - 1;
    vec![
        rams[0].saturating_sub(1),
        rams[last / 4],
        rams[last / 2],
        rams[3 * last / 4],
        rams[last],
    ]
}

fn cost(r: &Option<PlanResult>) -> Option<(u64, u64)> {
    r.as_ref().map(|r| (r.total_macs, r.peak_ram_bytes))
}

fn shipped(name: &str) -> NetworkModel {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../models")
        .join(name);
    parse_model(&std::fs::read_to_string(&path).expect("shipped model readable"))
        .expect("shipped model valid")
}

const SHIPPED: [&str; 3] = [
    "mbv2_w035_144.json",
    "mn2_vww5_80.json",
    "mn2_320k_176.json",
];

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let (mut cases, mut mismatches) = (0, Vec::new());
    for (seed, m) in corpus() {
        let g = build_graph(&m).unwrap();
        for p in p2_caps(&g) {
            cases += 1;
            let want = brute_force(&g, Constraint::MaxPeakRam(Some(p))).unwrap();
            if cost(&solve_p2(&g, Some(p))) != cost(&want) {
                mismatches.push(format!("seed {seed} P_max {p}"));
            }
        }
    }
    let elapsed = start.elapsed();
    check(
        mismatches.is_empty() && elapsed < Duration::from_secs(120),
        format!(
            "solve_p2 equals brute force on {}/{cases} constrained cases ({CORPUS_SIZE} chains) in {:.1}s{}",
            cases - mismatches.len(),
            elapsed.as_secs_f64(),
            mismatches.first().map_or(String::new(), |m| format!("; first mismatch {m}"))
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut bad = Vec::new();
    for (seed, m) in corpus() {
        let g = build_graph(&m).unwrap();
        let eval = |s| PlanResult::evaluate(&g, s, None);
        if cost(&min_macs_path(&g).map(eval))
            != cost(&brute_force(&g, Constraint::MaxPeakRam(None)).unwrap())
        {
            bad.push(format!("seed {seed} min-MAC"));
        }
        let minimax = cost(&minimax_ram_path(&g).map(eval));
        if minimax != cost(&brute_force(&g, Constraint::MaxOverheadFactor(None)).unwrap()) {
            bad.push(format!("seed {seed} minimax"));
        }
    }
    check(
        bad.is_empty(),
        format!("min-MAC and minimax paths equal brute force on {CORPUS_SIZE} chains, {} mismatches {bad:?}", bad.len()),
    )
}

fn criterion_3() -> Outcome {
    let (mut instances, mut feasible_misses, mut matches) = (0u64, Vec::new(), 0u64);
    let mut max_gap = Ratio::from_integer(0u64);
    for (seed, m) in corpus() {
        let g = build_graph(&m).unwrap();
        for f in [Ratio::new(11, 10), Ratio::new(13, 10), Ratio::new(3, 2)] {
            instances += 1;
            let got = solve_p1(&g, Some(f));
            let want = brute_force(&g, Constraint::MaxOverheadFactor(Some(f))).unwrap();
            match (&got, &want) {
                (Some(r), Some(b)) if r.constraint_satisfied => {
                    if r.peak_ram_bytes == b.peak_ram_bytes {
                        matches += 1;
                    }
                    let gap = Ratio::new(r.peak_ram_bytes - b.peak_ram_bytes, b.peak_ram_bytes);
                    max_gap = max_gap.max(gap);
                }
                (None, None) => matches += 1,
                _ => feasible_misses.push(format!("seed {seed} F_max {f}")),
            }
        }
    }
    let gap = *max_gap.numer() as f64 / *max_gap.denom() as f64;
    check(
        feasible_misses.is_empty(),
        format!(
            "P1 candidate set feasible whenever brute force is: {} misses; optimum matched on {matches}/{instances} ({:.1}%), max relative RAM gap {:.1}%",
            feasible_misses.len(),
            100.0 * matches as f64 / instances as f64,
            100.0 * gap
        ),
    )
}

struct ExecStats {
    pairs: u64,
    output_mismatch: Vec<String>,
    mac_mismatch: Vec<String>,
    ram_violations: Vec<String>,
}

fn executor_stats() -> ExecStats {
    let mut stats = ExecStats {
        pairs: 0,
        output_mismatch: vec![],
        mac_mismatch: vec![],
        ram_violations: vec![],
    };
    for seed in 0..200u64 {
        let depth = 1 + (seed % 6) as usize;
        let m = random_model(
            seed,
            RandomModelConfig {
                depth,
                max_spatial: 16,
                max_channels: 8,
            },
        );
        let g = build_graph(&m).unwrap();
        let input = Tensor::random(m.input_shape, seed);
        let weights = Weights::random(&m, seed);
        let reference = run_vanilla(&m, &input, &weights).unwrap().output;
        for s in enumerate_settings(&g).unwrap().take(8) {
            stats.pairs += 1;
            let t = run_fused(&m, &s, &input, &weights).unwrap();
            let id = format!("seed {seed} setting {:?}", s.span_key());
            if t.output != reference {
                stats.output_mismatch.push(id.clone());
            }
            if t.mac_count != path_total_macs(&s) {
                stats.mac_mismatch.push(id.clone());
            }
            if t.peak_live_bytes > path_peak_ram(&s) {
                stats.ram_violations.push(id);
            }
        }
    }
    stats
}

fn criterion_4(stats: &ExecStats) -> Outcome {
    check(
        stats.pairs >= 200 && stats.output_mismatch.is_empty() && stats.mac_mismatch.is_empty(),
        format!(
            "fused execution matches vanilla output and analytic MACs on {} (model, setting) pairs: {} output and {} MAC mismatches {:?}",
            stats.pairs,
            stats.output_mismatch.len(),
            stats.mac_mismatch.len(),
            stats.output_mismatch.iter().chain(&stats.mac_mismatch).take(3).collect::<Vec<_>>()
        ),
    )
}

fn criterion_5(stats: &ExecStats) -> Outcome {
    check(
        stats.pairs >= 200 && stats.ram_violations.is_empty(),
        format!(
            "measured peak live bytes within the analytic peak on {} pairs, {} violations {:?}",
            stats.pairs,
            stats.ram_violations.len(),
            stats.ram_violations.iter().take(3).collect::<Vec<_>>()
        ),
    )
}

fn criterion_6() -> Outcome {
    let mut bad = Vec::new();
    for v in 3..=14usize {
        let mut edges = Vec::new();
        for src in 0..v {
            for dst in src + 1..v {
                edges.push(Edge {
                    src,
                    dst,
                    ram_bytes: 1,
                    macs: 1,
                });
            }
        }
        let g = FusionGraph::from_edges(v, edges).unwrap();
        let n = enumerate_settings(&g).unwrap().count();
        if n != 1 << (v - 2) {
            bad.push(format!("complete DAG V={v}: {n}"));
        }
    }
    for m in 1..=12usize {
        let layers = vec![LayerSpec::conv(1, 1, 0, 2, 2); m];
        let model = NetworkModel::new("chain", TensorShape::new(3, 3, 2), layers, 1).unwrap();
        let g = build_graph(&model).unwrap();
        let n = enumerate_settings(&g).unwrap().count();
        if n != 1 << (m - 1) {
            bad.push(format!("fusible chain m={m}: {n}"));
        }
    }
    check(
        bad.is_empty(),
        format!("2^(V-2) paths for V=3..14 and 2^(m-1) settings for m=1..12; wrong: {bad:?}"),
    )
}

fn p1_grid() -> Vec<Constraint> {
    [
        Some(Ratio::new(11, 10)),
        Some(Ratio::new(6, 5)),
        Some(Ratio::new(13, 10)),
        Some(Ratio::new(7, 5)),
        Some(Ratio::new(3, 2)),
        None,
    ]
    .into_iter()
    .map(Constraint::MaxOverheadFactor)
    .collect()
}

fn p2_grid() -> Vec<Constraint> {
    [16_000u64, 32_000, 64_000, 128_000, 256_000]
        .into_iter()
        .map(|p| Constraint::MaxPeakRam(Some(p)))
        .collect()
}

fn criterion_7() -> Outcome {
    let mut bad = Vec::new();
    for name in SHIPPED {
        let g = build_graph(&shipped(name)).unwrap();
        let mut last = u64::MAX;
        for e in sweep(&g, &p1_grid()) {
            let Some(r) = e.result else {
                bad.push(format!("{name}: no P1 solution at {}", e.constraint));
                continue;
            };
            let Constraint::MaxOverheadFactor(cap) = e.constraint else {
                unreachable!()
            };
            if cap.is_some_and(|f| r.overhead_factor > f) || !r.constraint_satisfied {
                bad.push(format!("{name}: {} violated", e.constraint));
            }
            if r.peak_ram_bytes > last {
                bad.push(format!("{name}: RAM rises at {}", e.constraint));
            }
            last = r.peak_ram_bytes;
        }
        let mut last = u64::MAX;
        for e in sweep(&g, &p2_grid()) {
            let Some(r) = e.result else { continue };
            let Constraint::MaxPeakRam(Some(p)) = e.constraint else {
                unreachable!()
            };
            if r.peak_ram_bytes > p || !r.constraint_satisfied {
                bad.push(format!("{name}: {} violated", e.constraint));
            }
            if r.total_macs > last {
                bad.push(format!("{name}: MACs rise at {}", e.constraint));
            }
            last = r.total_macs;
        }
    }
    check(bad.is_empty(), format!("P1 RAM and P2 MAC columns monotone and feasible on the shipped models; problems: {bad:?}"))
}

fn criterion_8() -> Outcome {
    let g = build_graph(&shipped("mbv2_w035_144.json")).unwrap();
    let vanilla = g.vanilla_ram();
    let target = 194_440f64;
    let rel = (vanilla as f64 - target).abs() / target;
    let best = solve_p1(&g, None).unwrap();
    let reduction = 1.0 - best.peak_ram_bytes as f64 / vanilla as f64;
    check(
        rel <= 0.15 && reduction > 0.90,
        format!(
            "mbv2-w0.35: vanilla {} kB vs 194.440 kB target ({:.2}% off, tolerance 15%); unconstrained P1 {} kB, reduction {:.1}% (target > 90%)",
            format_kb(vanilla),
            100.0 * rel,
            format_kb(best.peak_ram_bytes),
            100.0 * reduction
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut detail = Vec::new();
    let mut ok = true;
    for name in SHIPPED {
        let g = build_graph(&shipped(name)).unwrap();
        let h = heuristic_head_fusion(&g).unwrap();
        let r = solve_p1(&g, Some(h.overhead_factor)).unwrap();
        ok &= r.peak_ram_bytes <= h.peak_ram_bytes;
        detail.push(format!(
            "{name} {} kB vs heuristic {} kB",
            format_kb(r.peak_ram_bytes),
            format_kb(h.peak_ram_bytes)
        ));
    }
    check(
        ok,
        format!(
            "P1 at the heuristic's F never needs more RAM: {}",
            detail.join(", ")
        ),
    )
}

fn criterion_10() -> Outcome {
    let mut bad = Vec::new();
    let dense = LayerSpec::dense(1024, 256);
    let dense_ratio = iterative_sink_ram_bytes(&dense, 1).unwrap() as f64 / (1024 + 256) as f64;
    if dense_ratio > 0.21 {
        bad.push(format!("dense ratio {dense_ratio:.4}"));
    }
    let mut worst_pool = 0f64;
    for c in [64u32, 128, 320, 1024] {
        let pool = LayerSpec::global_pool(c);
        let full =
            tensor_bytes(TensorShape::new(7, 7, c), 1) + tensor_bytes(TensorShape::new(1, 1, c), 1);
        let ratio = iterative_sink_ram_bytes(&pool, 1).unwrap() as f64 / full as f64;
        worst_pool = worst_pool.max(ratio);
        if ratio > 0.04 {
            bad.push(format!("pool c={c} ratio {ratio:.4}"));
        }
    }
    // Executed sinks behind a fused block.
    let cases = [
        (
            TensorShape::new(9, 9, 64),
            vec![
                LayerSpec::dwconv(3, 1, 0, 64),
                LayerSpec::global_pool(64),
                LayerSpec::dense(64, 16),
            ],
        ),
        (
            TensorShape::new(1, 1, 1024),
            vec![LayerSpec::dense(1024, 256)],
        ),
    ];
    for (i, (shape, layers)) in cases.into_iter().enumerate() {
        let m = NetworkModel::new("sinks", shape, layers, 1).unwrap();
        let input = Tensor::random(m.input_shape, i as u64);
        let weights = Weights::random(&m, i as u64);
        let t = run_vanilla(&m, &input, &weights).unwrap();
        for (j, l) in m.layers.iter().enumerate().filter(|(_, l)| !l.fusible()) {
            let want = iterative_sink_ram_bytes(l, 1).unwrap();
            if t.edge_peak_bytes[j] != want {
                bad.push(format!(
                    "case {i} layer {j}: executed {} vs formula {want}",
                    t.edge_peak_bytes[j]
                ));
            }
        }
    }
    check(
        bad.is_empty(),
        format!("iterative sinks: dense 1024->256 ratio {dense_ratio:.3}, worst 7x7 pool ratio {worst_pool:.3}, executed peaks equal formula; problems: {bad:?}"),
    )
}

fn synthetic_chain(depth: usize) -> NetworkModel {
    let mut layers = Vec::with_capacity(depth);
    let mut c = 8;
    for i in 0..depth {
        let stride = if i % 25 == 24 { 2 } else { 1 };
        layers.push(match i % 3 {
            0 => LayerSpec::dwconv(3, stride, 1, c),
            1 => {
                let out = 8 + (i as u32 * 5) % 9;
                let l = LayerSpec::conv(1, stride, 0, c, out);
                c = out;
                l
            }
            _ => LayerSpec::conv(3, stride, 1, c, c),
        });
    }
    NetworkModel::new("synthetic-100", TensorShape::new(160, 160, 8), layers, 1).unwrap()
}

fn criterion_11() -> Outcome {
    let m = synthetic_chain(100);
    let start = Instant::now();
    let g = build_graph(&m).unwrap();
    let p1 = sweep(&g, &p1_grid());
    let p2 = sweep(
        &g,
        &[16_000u64, 32_000, 64_000, 128_000, 256_000].map(|p| Constraint::MaxPeakRam(Some(p))),
    );
    let elapsed = start.elapsed();
    let solved = p1.iter().chain(&p2).filter(|e| e.result.is_some()).count();
    check(
        elapsed < Duration::from_secs(5),
        format!(
            "100-layer chain ({} edges): graph + P1 and P2 sweeps in {:.2}s, {solved}/{} rows solved",
            g.edges().len(),
            elapsed.as_secs_f64(),
            p1.len() + p2.len()
        ),
    )
}

#[test]
fn acceptance() {
    let stats = AssertUnwindSafe(executor_stats);
    let stats = catch_unwind(stats).ok();
    let criteria: Vec<(u32, bool, Box<dyn Fn() -> Outcome + '_>)> = vec![
        (1, true, Box::new(criterion_1)),
        (2, true, Box::new(criterion_2)),
        (3, true, Box::new(criterion_3)),
        (
            4,
            true,
            Box::new(|| {
                stats
                    .as_ref()
                    .map_or(Fail("executor panicked".into()), criterion_4)
            }),
        ),
        (
            5,
            true,
            Box::new(|| {
                stats
                    .as_ref()
                    .map_or(Fail("executor panicked".into()), criterion_5)
            }),
        ),
        (6, true, Box::new(criterion_6)),
        (7, true, Box::new(criterion_7)),
        // Calibration against published figures: reported, never fatal.
        (8, false, Box::new(criterion_8)),
        (9, true, Box::new(criterion_9)),
        (10, true, Box::new(criterion_10)),
        (11, true, Box::new(criterion_11)),
    ];
    let mut failed = Vec::new();
    let mut err = std::io::stderr();
    for (n, hard, run) in criteria {
        let outcome =
            catch_unwind(AssertUnwindSafe(&run)).unwrap_or_else(|_| Fail("panicked".into()));
        let line = match outcome {
            Pass(d) => format!("[PASS] criterion {n}: {d}\n"),
            Fail(d) if hard => {
                failed.push(n);
                format!("[FAIL] criterion {n}: {d}\n")
            }
            Fail(d) => format!("[FAIL] criterion {n} (soft gate, see README): {d}\n"),
        };
        err.write_all(line.as_bytes()).unwrap();
    }
    assert!(
        failed.is_empty(),
        "hard acceptance criteria failed: {failed:?}"
    );
}
