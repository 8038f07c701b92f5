use crate::error::{Error, Result};
use crate::fusion_graph::{path_peak_ram, path_total_macs, Edge, FusionGraph, FusionSetting};
use crate::optimizer::{Constraint, PlanResult};

/// Largest graph (in nodes) the exhaustive enumerator accepts.
pub const MAX_ENUMERATION_NODES: usize = 22;

/// Depth-first walk over all complete compute paths, in lexicographic span
/// order.
pub struct Settings<'a> {
    graph: &'a FusionGraph,
    /// (node, next outgoing position to try)
    stack: Vec<(usize, usize)>,
    path: Vec<Edge>,
}

impl Iterator for Settings<'_> {
    type Item = FusionSetting;

    fn next(&mut self) -> Option<FusionSetting> {
        while let Some(top) = self.stack.last_mut() {
            let (node, cursor) = *top;
            if node == self.graph.sink() {
                let setting = FusionSetting::new(self.path.clone(), node).ok();
                self.stack.pop();
                self.path.pop();
                if setting.is_some() {
                    return setting;
                }
                continue;
            }
            match self.graph.outgoing(node).nth(cursor) {
                Some((_, e)) => {
                    top.1 += 1;
                    self.path.push(*e);
                    self.stack.push((e.dst, 0));
                }
                None => {
                    self.stack.pop();
                    self.path.pop();
                }
            }
        }
        None
    }
}

/// Every complete compute path of `graph`, each exactly once.
pub fn enumerate_settings(graph: &FusionGraph) -> Result<Settings<'_>> {
    if graph.node_count() > MAX_ENUMERATION_NODES {
        return Err(Error::TooLarge {
            nodes: graph.node_count(),
            limit: MAX_ENUMERATION_NODES,
        });
    }
    Ok(Settings {
        graph,
        stack: vec![(0, 0)],
        path: Vec::new(),
    })
}

/// Exact optimum by exhaustive search. P2 constraints minimize MACs then
/// RAM, P1 constraints minimize RAM then MACs; remaining ties go to the
/// smallest span sequence.
pub fn brute_force(graph: &FusionGraph, constraint: Constraint) -> Result<Option<PlanResult>> {
    let mut best: Option<(u64, u64, Vec<(usize, usize)>, FusionSetting)> = None;
    for setting in enumerate_settings(graph)? {
        let ram = path_peak_ram(&setting);
        let macs = path_total_macs(&setting);
        let r = PlanResult::evaluate(graph, setting, Some(constraint));
        if !r.constraint_satisfied {
            continue;
        }
        let (a, b) = match constraint {
            Constraint::MaxPeakRam(_) => (macs, ram),
            Constraint::MaxOverheadFactor(_) => (ram, macs),
        };
        let key = r.setting.span_key();
        let better = best
            .as_ref()
            .is_none_or(|(ba, bb, bk, _)| (a, b, &key) < (*ba, *bb, bk));
        if better {
            best = Some((a, b, key, r.setting));
        }
    }
    Ok(best.map(|(_, _, _, s)| PlanResult::evaluate(graph, s, Some(constraint))))
}
