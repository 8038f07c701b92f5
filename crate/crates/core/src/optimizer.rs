//! Solvers for the two dual planning problems.
//!
//! * P1: minimize peak RAM subject to `F <= F_max`.
//! * P2: minimize total MACs subject to `P <= P_max`.
//!
//! Every solver is exact on its own objective and breaks ties the same way:
//! first the other objective, then the lexicographically smallest sequence
//! of edge spans. Ties are resolved by successive edge filtering: after each
//! objective only the edges lying on some optimal path are kept, and the
//! final path is picked greedily by smallest span.

use std::fmt;

use num_rational::Ratio;

use crate::fusion_graph::{
    path_peak_ram, path_total_macs, ratio_or_one, Edge, FusionGraph, FusionSetting,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Constraint {
    /// `F <= F_max`; `None` is an unbounded cap.
    MaxOverheadFactor(Option<Ratio<u64>>),
    /// `P <= P_max` in bytes; `None` is an unbounded cap.
    MaxPeakRam(Option<u64>),
}

impl Constraint {
    pub fn is_satisfied(&self, peak_ram: u64, overhead: Ratio<u64>) -> bool {
        match *self {
            Constraint::MaxOverheadFactor(cap) => cap.is_none_or(|f| overhead <= f),
            Constraint::MaxPeakRam(cap) => cap.is_none_or(|p| peak_ram <= p),
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constraint::MaxOverheadFactor(None) => write!(f, "F_max=inf"),
            Constraint::MaxOverheadFactor(Some(r)) => {
                write!(f, "F_max={}", crate::report::format_ratio(*r, 3))
            }
            Constraint::MaxPeakRam(None) => write!(f, "P_max=inf"),
            Constraint::MaxPeakRam(Some(b)) => {
                write!(f, "P_max={}", crate::report::format_bytes(*b))
            }
        }
    }
}

/// One iteration of the P1 candidate construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CandidateStep {
    pub iteration: usize,
    /// RAM level whose edges were removed to form this subgraph; `None` for
    /// the full graph.
    pub pruned_ram_level: Option<u64>,
    pub macs: u64,
    pub peak_ram: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanResult {
    pub setting: FusionSetting,
    pub peak_ram_bytes: u64,
    pub total_macs: u64,
    pub overhead_factor: Ratio<u64>,
    pub constraint_satisfied: bool,
    pub candidate_trace: Option<Vec<CandidateStep>>,
}

impl PlanResult {
    pub fn evaluate(
        graph: &FusionGraph,
        setting: FusionSetting,
        constraint: Option<Constraint>,
    ) -> Self {
        let peak_ram_bytes = path_peak_ram(&setting);
        let total_macs = path_total_macs(&setting);
        let overhead_factor = ratio_or_one(total_macs, graph.vanilla_macs());
        let constraint_satisfied =
            constraint.is_none_or(|c| c.is_satisfied(peak_ram_bytes, overhead_factor));
        Self {
            setting,
            peak_ram_bytes,
            total_macs,
            overhead_factor,
            constraint_satisfied,
            candidate_trace: None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Objective {
    /// Sum of edge MACs.
    Macs,
    /// Maximum edge RAM.
    Ram,
}

type Mask = Vec<bool>;

fn alive_edges<'a>(
    graph: &'a FusionGraph,
    mask: &'a [bool],
    node: usize,
) -> impl Iterator<Item = &'a Edge> + 'a {
    graph
        .outgoing(node)
        .filter(move |(i, _)| mask[*i])
        .map(|(_, e)| e)
}

/// Forward DP over nodes in index order (edges always point forward).
fn from_source(graph: &FusionGraph, mask: &[bool], objective: Objective) -> Vec<Option<u64>> {
    let mut best = vec![None; graph.node_count()];
    best[0] = Some(0);
    for u in 0..graph.node_count() {
        let Some(at) = best[u] else { continue };
        for e in alive_edges(graph, mask, u) {
            let via = match objective {
                Objective::Macs => at + e.macs,
                Objective::Ram => at.max(e.ram_bytes),
            };
            if best[e.dst].is_none_or(|b| via < b) {
                best[e.dst] = Some(via);
            }
        }
    }
    best
}

fn to_sink(graph: &FusionGraph, mask: &[bool], objective: Objective) -> Vec<Option<u64>> {
    let mut best = vec![None; graph.node_count()];
    best[graph.sink()] = Some(0);
    for u in (0..graph.node_count()).rev() {
        for e in alive_edges(graph, mask, u) {
            let Some(rest) = best[e.dst] else { continue };
            let via = match objective {
                Objective::Macs => rest + e.macs,
                Objective::Ram => rest.max(e.ram_bytes),
            };
            if best[u].is_none_or(|b| via < b) {
                best[u] = Some(via);
            }
        }
    }
    best
}

/// Keeps only edges that lie on some path optimal for `objective`.
/// Returns `None` when the sink is unreachable.
fn keep_optimal(graph: &FusionGraph, mask: &[bool], objective: Objective) -> Option<Mask> {
    let fwd = from_source(graph, mask, objective);
    let opt = fwd[graph.sink()]?;
    let kept = match objective {
        Objective::Macs => {
            let bwd = to_sink(graph, mask, objective);
            graph
                .edges()
                .iter()
                .zip(mask)
                .map(|(e, &alive)| {
                    alive
                        && matches!((fwd[e.src], bwd[e.dst]), (Some(a), Some(b)) if a + e.macs + b == opt)
                })
                .collect()
        }
        // Every path whose edges all stay within the optimal bottleneck is
        // itself optimal.
        Objective::Ram => graph
            .edges()
            .iter()
            .zip(mask)
            .map(|(e, &alive)| alive && e.ram_bytes <= opt)
            .collect(),
    };
    Some(kept)
}

/// Lexicographically smallest span sequence among all paths in `mask`.
fn first_path(graph: &FusionGraph, mask: &[bool]) -> Option<FusionSetting> {
    let mut reaches = vec![false; graph.node_count()];
    reaches[graph.sink()] = true;
    for u in (0..graph.node_count()).rev() {
        if alive_edges(graph, mask, u).any(|e| reaches[e.dst]) {
            reaches[u] = true;
        }
    }
    if !reaches[0] {
        return None;
    }
    let mut path = Vec::new();
    let mut at = 0;
    while at != graph.sink() {
        // Outgoing edges are sorted by destination.
        let e = alive_edges(graph, mask, at).find(|e| reaches[e.dst])?;
        path.push(*e);
        at = e.dst;
    }
    FusionSetting::new(path, graph.sink()).ok()
}

fn best_path(graph: &FusionGraph, mask: &[bool], order: [Objective; 2]) -> Option<FusionSetting> {
    let mut m = keep_optimal(graph, mask, order[0])?;
    m = keep_optimal(graph, &m, order[1])?;
    first_path(graph, &m)
}

fn full_mask(graph: &FusionGraph) -> Mask {
    vec![true; graph.edges().len()]
}

fn min_macs_in(graph: &FusionGraph, mask: &[bool]) -> Option<FusionSetting> {
    best_path(graph, mask, [Objective::Macs, Objective::Ram])
}

/// Path with the fewest total MACs; ties by lower peak RAM.
pub fn min_macs_path(graph: &FusionGraph) -> Option<FusionSetting> {
    min_macs_in(graph, &full_mask(graph))
}

/// Path with the smallest bottleneck edge RAM; ties by fewer MACs.
pub fn minimax_ram_path(graph: &FusionGraph) -> Option<FusionSetting> {
    best_path(graph, &full_mask(graph), [Objective::Ram, Objective::Macs])
}

/// Minimum-MAC path using only edges within the RAM cap.
pub fn solve_p2(graph: &FusionGraph, p_max: Option<u64>) -> Option<PlanResult> {
    let mask: Mask = graph
        .edges()
        .iter()
        .map(|e| p_max.is_none_or(|cap| e.ram_bytes <= cap))
        .collect();
    let setting = min_macs_in(graph, &mask)?;
    Some(PlanResult::evaluate(
        graph,
        setting,
        Some(Constraint::MaxPeakRam(p_max)),
    ))
}

/// Candidate solutions for P1: `S_i` is the MAC-optimal path of `G_i`, and
/// `G_{i+1}` drops every edge of `G_i` at its highest RAM level. Stops once
/// input and output disconnect.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub candidates: Vec<FusionSetting>,
    pub trace: Vec<CandidateStep>,
}

pub fn candidate_set(graph: &FusionGraph) -> CandidateSet {
    let mut mask = full_mask(graph);
    let mut candidates: Vec<FusionSetting> = Vec::new();
    let mut trace = Vec::new();
    let mut level = None;
    let mut current: Option<FusionSetting> = None;
    for iteration in 0.. {
        let still_valid = current
            .as_ref()
            .is_some_and(|s| s.edges().iter().all(|e| mask[edge_index(graph, e)]));
        if !still_valid {
            // Removing edges off the current path cannot displace it.
            match min_macs_in(graph, &mask) {
                Some(s) => {
                    candidates.push(s.clone());
                    current = Some(s);
                }
                None => break,
            }
        }
        let s = current.as_ref().expect("candidate present");
        trace.push(CandidateStep {
            iteration,
            pruned_ram_level: level,
            macs: path_total_macs(s),
            peak_ram: path_peak_ram(s),
        });
        let top = graph
            .edges()
            .iter()
            .zip(&mask)
            .filter(|(_, &alive)| alive)
            .map(|(e, _)| e.ram_bytes)
            .max();
        let Some(top) = top else { break };
        for (e, alive) in graph.edges().iter().zip(mask.iter_mut()) {
            if e.ram_bytes == top {
                *alive = false;
            }
        }
        level = Some(top);
    }
    CandidateSet { candidates, trace }
}

fn edge_index(graph: &FusionGraph, e: &Edge) -> usize {
    graph
        .outgoing(e.src)
        .find(|(_, x)| x.dst == e.dst)
        .map(|(i, _)| i)
        .expect("edge belongs to graph")
}

fn select_p1(graph: &FusionGraph, set: &CandidateSet, f_max: Ratio<u64>) -> Option<PlanResult> {
    let constraint = Constraint::MaxOverheadFactor(Some(f_max));
    let best = set
        .candidates
        .iter()
        .map(|s| PlanResult::evaluate(graph, s.clone(), Some(constraint)))
        .filter(|r| r.constraint_satisfied)
        .min_by(|a, b| {
            (a.peak_ram_bytes, a.total_macs, a.setting.span_key()).cmp(&(
                b.peak_ram_bytes,
                b.total_macs,
                b.setting.span_key(),
            ))
        })?;
    Some(PlanResult {
        candidate_trace: Some(set.trace.clone()),
        ..best
    })
}

/// Minimum peak RAM under an overhead cap, chosen from the candidate set.
/// An unbounded cap is the minimax path.
pub fn solve_p1(graph: &FusionGraph, f_max: Option<Ratio<u64>>) -> Option<PlanResult> {
    match f_max {
        None => minimax_ram_path(graph)
            .map(|s| PlanResult::evaluate(graph, s, Some(Constraint::MaxOverheadFactor(None)))),
        Some(f) => select_p1(graph, &candidate_set(graph), f),
    }
}

/// Baseline that only fuses a prefix of the network: the best setting of
/// the form `[0..=j fused] + singles`, by peak RAM then MACs.
pub fn heuristic_head_fusion(graph: &FusionGraph) -> Option<PlanResult> {
    let n = graph.sink();
    let mut best: Option<PlanResult> = None;
    for head_end in 1..=n {
        if graph.edge(0, head_end).is_none() {
            break;
        }
        let spans: Vec<_> = std::iter::once(0..head_end)
            .chain((head_end..n).map(|i| i..i + 1))
            .collect();
        let Ok(setting) = FusionSetting::from_spans(graph, &spans) else {
            continue;
        };
        let r = PlanResult::evaluate(graph, setting, None);
        let better = best
            .as_ref()
            .is_none_or(|b| (r.peak_ram_bytes, r.total_macs) < (b.peak_ram_bytes, b.total_macs));
        if better {
            best = Some(r);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepEntry {
    pub constraint: Constraint,
    pub result: Option<PlanResult>,
    /// Same setting as the preceding entry of the same problem.
    pub same_as_above: bool,
}

/// Solves each constraint independently; the P1 candidate set is built once
/// and shared.
pub fn sweep(graph: &FusionGraph, constraints: &[Constraint]) -> Vec<SweepEntry> {
    let mut candidates: Option<CandidateSet> = None;
    let mut out: Vec<SweepEntry> = Vec::with_capacity(constraints.len());
    for &c in constraints {
        let result = match c {
            Constraint::MaxPeakRam(p) => solve_p2(graph, p),
            Constraint::MaxOverheadFactor(None) => solve_p1(graph, None),
            Constraint::MaxOverheadFactor(Some(f)) => {
                let set = candidates.get_or_insert_with(|| candidate_set(graph));
                select_p1(graph, set, f)
            }
        };
        let same_as_above = match (out.last(), &result) {
            (Some(prev), Some(r)) => {
                same_problem(prev.constraint, c)
                    && prev.result.as_ref().is_some_and(|p| p.setting == r.setting)
            }
            _ => false,
        };
        out.push(SweepEntry {
            constraint: c,
            result,
            same_as_above,
        });
    }
    out
}

fn same_problem(a: Constraint, b: Constraint) -> bool {
    std::mem::discriminant(&a) == std::mem::discriminant(&b)
}
