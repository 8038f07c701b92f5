//! Invariant suite behind `fuseplan verify`.

use anyhow::Result;
use fuseplan_core::fusion_graph::{path_peak_ram, path_total_macs};
use fuseplan_core::optimizer::{
    min_macs_path, minimax_ram_path, solve_p1, solve_p2, Constraint, PlanResult,
};
use fuseplan_core::oracle::{
    brute_force, enumerate_settings, random_model, run_fused, run_vanilla, RandomModelConfig,
    Tensor, Weights, MAX_ENUMERATION_NODES,
};
use fuseplan_core::report::segments_text;
use fuseplan_core::{build_graph, FusionGraph, FusionSetting, NetworkModel};
use num_rational::Ratio;

const EXIT_FAILURE: u8 = 1;
const EXIT_GUARD: u8 = 3;

/// Settings executed per model file; the optimizer checks always see all of them.
const EXECUTED_SETTINGS_LIMIT: usize = 256;
/// Settings executed per random chain, besides the optimizer's picks.
const RANDOM_EXECUTED_SETTINGS: usize = 16;

struct Failure {
    setting: String,
    what: String,
}

fn cost(r: &Option<PlanResult>) -> Option<(u64, u64)> {
    r.as_ref().map(|r| (r.total_macs, r.peak_ram_bytes))
}

fn describe(r: &Option<PlanResult>) -> String {
    r.as_ref()
        .map_or("none".into(), |r| segments_text(&r.setting))
}

/// RAM caps that exercise the solver: one below every edge, a few inside
/// the range of edge costs, and no cap at all.
pub fn p2_levels(graph: &FusionGraph) -> Vec<Option<u64>> {
    let mut rams: Vec<u64> = graph.edges().iter().map(|e| e.ram_bytes).collect();
    rams.sort_unstable();
    rams.dedup();
    let mut levels = vec![Some(rams[0].saturating_sub(1).max(1))];
    for q in 1..=4 {
        levels.push(Some(rams[(rams.len() - 1) * q / 4]));
    }
    levels.push(None);
    levels.dedup();
    levels
}

fn optimizer_checks(graph: &FusionGraph, failures: &mut Vec<Failure>) -> Result<()> {
    let mut compare = |label: String, got: Option<PlanResult>, want: Option<PlanResult>| {
        if cost(&got) != cost(&want) {
            failures.push(Failure {
                setting: describe(&got),
                what: format!(
                    "{label}: planner {:?} vs brute force {:?} ({})",
                    cost(&got),
                    cost(&want),
                    describe(&want)
                ),
            });
        }
    };
    let unconstrained =
        |s: Option<FusionSetting>, c| s.map(|s| PlanResult::evaluate(graph, s, Some(c)));

    let c = Constraint::MaxPeakRam(None);
    compare(
        "min-MAC path".into(),
        unconstrained(min_macs_path(graph), c),
        brute_force(graph, c)?,
    );
    let c = Constraint::MaxOverheadFactor(None);
    compare(
        "minimax path".into(),
        unconstrained(minimax_ram_path(graph), c),
        brute_force(graph, c)?,
    );
    for p in p2_levels(graph) {
        let c = Constraint::MaxPeakRam(p);
        compare(
            format!("P2 {c}"),
            solve_p2(graph, p),
            brute_force(graph, c)?,
        );
    }
    for f in [Ratio::new(11, 10), Ratio::new(13, 10), Ratio::new(3, 2)] {
        let c = Constraint::MaxOverheadFactor(Some(f));
        let got = solve_p1(graph, Some(f));
        let want = brute_force(graph, c)?;
        if got.is_some() != want.is_some() || got.as_ref().is_some_and(|r| !r.constraint_satisfied)
        {
            failures.push(Failure {
                setting: describe(&got),
                what: format!(
                    "P1 {c}: planner feasibility differs from brute force ({})",
                    describe(&want)
                ),
            });
        }
    }
    Ok(())
}

struct ExecRow {
    setting: String,
    analytic_macs: u64,
    executed_macs: u64,
    analytic_ram: u64,
    measured_ram: u64,
    output_equal: bool,
}

impl ExecRow {
    fn ok(&self) -> bool {
        self.output_equal
            && self.analytic_macs == self.executed_macs
            && self.measured_ram <= self.analytic_ram
    }
}

fn execute(
    model: &NetworkModel,
    setting: &FusionSetting,
    seed: u64,
    reference: &Tensor,
) -> Result<ExecRow> {
    let input = Tensor::random(model.input_shape, seed);
    let weights = Weights::random(model, seed);
    let trace = run_fused(model, setting, &input, &weights)?;
    Ok(ExecRow {
        setting: segments_text(setting),
        analytic_macs: path_total_macs(setting),
        executed_macs: trace.mac_count,
        analytic_ram: path_peak_ram(setting),
        measured_ram: trace.peak_live_bytes,
        output_equal: trace.output == *reference,
    })
}

fn reference(model: &NetworkModel, seed: u64) -> Result<Tensor> {
    let input = Tensor::random(model.input_shape, seed);
    Ok(run_vanilla(model, &input, &Weights::random(model, seed))?.output)
}

fn exec_failure(row: &ExecRow) -> Failure {
    Failure {
        setting: row.setting.clone(),
        what: format!(
            "executor: output equal {}, MACs {} analytic vs {} executed, RAM {} measured vs {} bound",
            row.output_equal, row.analytic_macs, row.executed_macs, row.measured_ram, row.analytic_ram
        ),
    }
}

fn guard_exceeded(nodes: usize) -> bool {
    if nodes > MAX_ENUMERATION_NODES {
        eprintln!(
            "guard: the exhaustive oracle handles at most {} layers ({} requested)",
            MAX_ENUMERATION_NODES - 1,
            nodes - 1
        );
        return true;
    }
    false
}

pub fn verify_model(model: &NetworkModel) -> Result<u8> {
    let graph = build_graph(model)?;
    if guard_exceeded(graph.node_count()) {
        return Ok(EXIT_GUARD);
    }
    let mut failures = Vec::new();
    optimizer_checks(&graph, &mut failures)?;

    let seed = 0;
    let expected = reference(model, seed)?;
    println!(
        "| Setting | Analytic MACs | Executed MACs | Equal | Analytic RAM | Measured RAM | Sound |"
    );
    println!("|---|---:|---:|---|---:|---:|---|");
    let mut total = 0;
    for setting in enumerate_settings(&graph)? {
        total += 1;
        if total > EXECUTED_SETTINGS_LIMIT {
            continue;
        }
        let row = execute(model, &setting, seed, &expected)?;
        println!(
            "| {} | {} | {} | {} | {} | {} | {} |",
            row.setting,
            row.analytic_macs,
            row.executed_macs,
            if row.analytic_macs == row.executed_macs && row.output_equal {
                "yes"
            } else {
                "NO"
            },
            row.analytic_ram,
            row.measured_ram,
            if row.measured_ram <= row.analytic_ram {
                "yes"
            } else {
                "NO"
            },
        );
        if !row.ok() {
            failures.push(exec_failure(&row));
        }
    }
    if total > EXECUTED_SETTINGS_LIMIT {
        println!("\nexecuted {EXECUTED_SETTINGS_LIMIT} of {total} settings; optimizer checks covered all of them");
    }
    for f in &failures {
        eprintln!(
            "FAIL model={} setting={}: {}",
            model.name, f.setting, f.what
        );
    }
    println!(
        "\n{}: {} settings, {} failures",
        model.name,
        total,
        failures.len()
    );
    Ok(if failures.is_empty() { 0 } else { EXIT_FAILURE })
}

pub fn verify_random(count: u64, depth: usize, first_seed: u64) -> Result<u8> {
    if depth == 0 {
        anyhow::bail!("--depth must be at least 1");
    }
    if guard_exceeded(depth + 1) {
        return Ok(EXIT_GUARD);
    }
    let config = RandomModelConfig {
        depth,
        max_spatial: 16,
        max_channels: 8,
    };
    let mut failed_seeds = 0;
    for seed in first_seed..first_seed + count {
        let model = random_model(seed, config);
        let graph = build_graph(&model)?;
        let mut failures = Vec::new();
        optimizer_checks(&graph, &mut failures)?;

        let expected = reference(&model, seed)?;
        let mut settings: Vec<FusionSetting> = enumerate_settings(&graph)?
            .take(RANDOM_EXECUTED_SETTINGS)
            .collect();
        settings.extend(min_macs_path(&graph));
        settings.extend(minimax_ram_path(&graph));
        for setting in &settings {
            let row = execute(&model, setting, seed, &expected)?;
            if !row.ok() {
                failures.push(exec_failure(&row));
            }
        }
        for f in &failures {
            eprintln!(
                "FAIL seed={seed} depth={depth} setting={}: {}",
                f.setting, f.what
            );
        }
        if !failures.is_empty() {
            failed_seeds += 1;
        }
    }
    println!(
        "verified {count} random chains of depth {depth}: {} passed, {failed_seeds} failed",
        count - failed_seeds
    );
    Ok(if failed_seeds == 0 { 0 } else { EXIT_FAILURE })
}
