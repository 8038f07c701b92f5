//! The fusion DAG: tensor nodes `v_0 .. v_n` and one edge per single layer
//! or feasible fusion block, each annotated with its RAM and MAC cost.

use std::ops::Range;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::cost_model::{block_cost, iterative_sink_ram_bytes};
use crate::error::{Error, Result};
use crate::model_ir::{infer_shapes, NetworkModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    #[serde(rename = "ram")]
    pub ram_bytes: u64,
    pub macs: u64,
}

impl Edge {
    /// Layers covered by this edge.
    pub fn span(&self) -> Range<usize> {
        self.src..self.dst
    }

    pub fn is_fused(&self) -> bool {
        self.dst - self.src >= 2
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusionGraph {
    node_count: usize,
    edges: Vec<Edge>,
    /// Edge indices leaving each node, ordered by destination.
    outgoing: Vec<Vec<usize>>,
    vanilla_macs: u64,
    vanilla_ram: u64,
}

impl FusionGraph {
    /// Builds a graph from explicit edges. The vanilla totals are taken from
    /// the single-step edges `(i, i + 1)` when all of them exist.
    pub fn from_edges(node_count: usize, mut edges: Vec<Edge>) -> Result<Self> {
        if node_count < 2 {
            return Err(Error::InvalidSetting(
                "graph needs at least two nodes".into(),
            ));
        }
        for e in &edges {
            if e.src >= e.dst || e.dst >= node_count {
                return Err(Error::InvalidSetting(format!(
                    "edge {}->{} is not a forward edge of a {node_count}-node graph",
                    e.src, e.dst
                )));
            }
        }
        edges.sort_by_key(|e| (e.src, e.dst));
        if edges
            .windows(2)
            .any(|w| (w[0].src, w[0].dst) == (w[1].src, w[1].dst))
        {
            return Err(Error::InvalidSetting("duplicate edge".into()));
        }
        let mut outgoing = vec![Vec::new(); node_count];
        for (i, e) in edges.iter().enumerate() {
            outgoing[e.src].push(i);
        }
        let singles: Vec<&Edge> = edges.iter().filter(|e| e.dst == e.src + 1).collect();
        let (vanilla_macs, vanilla_ram) = if singles.len() == node_count - 1 {
            (
                singles.iter().map(|e| e.macs).sum(),
                singles.iter().map(|e| e.ram_bytes).max().unwrap_or(0),
            )
        } else {
            (0, 0)
        };
        Ok(Self {
            node_count,
            edges,
            outgoing,
            vanilla_macs,
            vanilla_ram,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Index of the output node `v_n`.
    pub fn sink(&self) -> usize {
        self.node_count - 1
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn outgoing(&self, node: usize) -> impl Iterator<Item = (usize, &Edge)> + '_ {
        self.outgoing[node]
            .iter()
            .map(move |&i| (i, &self.edges[i]))
    }

    pub fn edge(&self, src: usize, dst: usize) -> Option<&Edge> {
        self.outgoing
            .get(src)?
            .iter()
            .map(|&i| &self.edges[i])
            .find(|e| e.dst == dst)
    }

    pub fn vanilla_macs(&self) -> u64 {
        self.vanilla_macs
    }

    pub fn vanilla_ram(&self) -> u64 {
        self.vanilla_ram
    }

    /// Graph dump: edge list plus vanilla totals.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "schema": 1,
            "nodes": self.node_count,
            "vanilla_macs": self.vanilla_macs,
            "vanilla_ram": self.vanilla_ram,
            "edges": self.edges,
        })
    }
}

/// Encodes every layer and every feasible contiguous fusion block of the
/// model as an edge. Blocks only cover runs of fusible layers; blocks whose
/// tile does not fit the feature map are left out.
pub fn build_graph(model: &NetworkModel) -> Result<FusionGraph> {
    let shapes = infer_shapes(model)?;
    let n = model.num_layers();
    let eb = model.element_bytes;
    let mut edges = Vec::new();
    for start in 0..n {
        let layer = &model.layers[start];
        let cost = block_cost(&model.layers[start..=start], &shapes[start..=start + 1], eb)
            .map_err(|e| at_layer(e, start))?;
        let ram_bytes = if layer.fusible() {
            cost.ram_bytes
        } else {
            iterative_sink_ram_bytes(layer, eb)?
        };
        let single = Edge {
            src: start,
            dst: start + 1,
            ram_bytes,
            macs: cost.macs,
        };
        edges.push(single);
        if !layer.fusible() {
            continue;
        }
        for end in start + 2..=n {
            if !model.layers[end - 1].fusible() {
                break;
            }
            match block_cost(&model.layers[start..end], &shapes[start..=end], eb) {
                Ok(cost) => edges.push(Edge {
                    src: start,
                    dst: end,
                    ram_bytes: cost.ram_bytes,
                    macs: cost.macs,
                }),
                // Deeper blocks only grow the tile further.
                Err(Error::Shape { .. }) => break,
                Err(e) => return Err(e),
            }
        }
    }
    FusionGraph::from_edges(n + 1, edges)
}

fn at_layer(e: Error, offset: usize) -> Error {
    match e {
        Error::Shape { layer, msg } => Error::Shape {
            layer: layer + offset,
            msg,
        },
        other => other,
    }
}

/// A complete compute path `v_0 -> v_n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FusionSetting {
    edges: Vec<Edge>,
}

impl FusionSetting {
    /// Checks that `edges` chain from node 0 to `sink` without gaps.
    pub fn new(edges: Vec<Edge>, sink: usize) -> Result<Self> {
        let mut at = 0;
        for e in &edges {
            if e.src != at || e.dst <= e.src {
                return Err(Error::InvalidSetting(format!(
                    "edge {}->{} does not continue from node {at}",
                    e.src, e.dst
                )));
            }
            at = e.dst;
        }
        if at != sink || edges.is_empty() {
            return Err(Error::InvalidSetting(format!(
                "path ends at node {at}, expected {sink}"
            )));
        }
        Ok(Self { edges })
    }

    /// Looks up the edges of `spans` in `graph`.
    pub fn from_spans(graph: &FusionGraph, spans: &[Range<usize>]) -> Result<Self> {
        let edges = spans
            .iter()
            .map(|s| {
                graph.edge(s.start, s.end).copied().ok_or_else(|| {
                    Error::InvalidSetting(format!("no edge for layers {}..{}", s.start, s.end))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(edges, graph.sink())
    }

    /// The all-singles setting.
    pub fn vanilla(graph: &FusionGraph) -> Result<Self> {
        let spans: Vec<_> = (0..graph.sink()).map(|i| i..i + 1).collect();
        Self::from_spans(graph, &spans)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn spans(&self) -> Vec<Range<usize>> {
        self.edges.iter().map(Edge::span).collect()
    }

    /// Span endpoints, the total order used for deterministic tie-breaks.
    pub fn span_key(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|e| (e.src, e.dst)).collect()
    }
}

/// `max` of edge RAM along the path.
pub fn path_peak_ram(setting: &FusionSetting) -> u64 {
    setting.edges.iter().map(|e| e.ram_bytes).max().unwrap_or(0)
}

pub fn path_total_macs(setting: &FusionSetting) -> u64 {
    setting.edges.iter().map(|e| e.macs).sum()
}

/// `C_S / C_vanilla` as an exact ratio. A model without any MACs has
/// factor 1.
pub fn overhead_factor(setting: &FusionSetting, graph: &FusionGraph) -> Ratio<u64> {
    ratio_or_one(path_total_macs(setting), graph.vanilla_macs())
}

pub(crate) fn ratio_or_one(macs: u64, vanilla: u64) -> Ratio<u64> {
    if vanilla == 0 {
        Ratio::from_integer(1)
    } else {
        Ratio::new(macs, vanilla)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost_model::{fused_block_macs, vanilla_macs};
    use crate::model_ir::{LayerSpec, TensorShape};

    fn toy3() -> NetworkModel {
        let conv = LayerSpec::conv(3, 1, 0, 1, 1);
        NetworkModel::new("toy3", TensorShape::new(10, 10, 1), vec![conv; 3], 1).unwrap()
    }

    #[test]
    fn one_layer_graph() {
        let m = NetworkModel::new(
            "one",
            TensorShape::new(4, 4, 1),
            vec![LayerSpec::conv(3, 1, 0, 1, 1)],
            1,
        )
        .unwrap();
        let g = build_graph(&m).unwrap();
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edges().len(), 1);
        assert_eq!(g.vanilla_ram(), 20);
        assert_eq!(g.vanilla_macs(), 36);
    }

    #[test]
    fn toy_chain_annotations() {
        let g = build_graph(&toy3()).unwrap();
        // 3 singles + 2 two-layer blocks + 1 three-layer block
        assert_eq!(g.edges().len(), 6);
        let e = |s, d| *g.edge(s, d).unwrap();
        // Singles: 10x10 -> 8x8 -> 6x6 -> 4x4
        assert_eq!((e(0, 1).ram_bytes, e(0, 1).macs), (100 + 64, 64 * 9));
        assert_eq!((e(1, 2).ram_bytes, e(1, 2).macs), (64 + 36, 36 * 9));
        assert_eq!((e(2, 3).ram_bytes, e(2, 3).macs), (36 + 16, 16 * 9));
        // Block 0..2: t = [5, 3]; buffer 3*3*1
        // layer 1: ((10-5)+1)*(8) tiles, 3 rows each; layer 2: 36 outputs
        assert_eq!(e(0, 2).ram_bytes, 100 + 36 + 9);
        assert_eq!(e(0, 2).macs, 6 * 8 * 3 * 9 + 36 * 9);
        // Block 1..3 on 8x8
        assert_eq!(e(1, 3).ram_bytes, 64 + 16 + 9);
        assert_eq!(e(1, 3).macs, 4 * 6 * 3 * 9 + 16 * 9);
        // Block 0..3: t = [7, 5, 3]; buffer 5*3 + 3*3
        // layer 1: 4*8 tiles * 5 rows; layer 2: 4*6 tiles * 3 rows; layer 3: 16
        assert_eq!(e(0, 3).ram_bytes, 100 + 16 + 15 + 9);
        assert_eq!(e(0, 3).macs, (4 * 8 * 5 + 4 * 6 * 3 + 16) * 9);

        assert_eq!(g.vanilla_ram(), 164);
        assert_eq!(g.vanilla_macs(), (64 + 36 + 16) * 9);
    }

    #[test]
    fn run_edge_count() {
        let conv = LayerSpec::conv(1, 1, 0, 2, 2);
        for m in 1..8usize {
            let model =
                NetworkModel::new("pw", TensorShape::new(4, 4, 2), vec![conv; m], 1).unwrap();
            let g = build_graph(&model).unwrap();
            assert_eq!(g.edges().len(), m * (m + 1) / 2);
        }
    }

    #[test]
    fn sinks_terminate_runs() {
        let model = NetworkModel::new(
            "head",
            TensorShape::new(8, 8, 4),
            vec![
                LayerSpec::conv(3, 1, 1, 4, 8),
                LayerSpec::dwconv(3, 1, 1, 8),
                LayerSpec::global_pool(8),
                LayerSpec::dense(8, 3),
            ],
            1,
        )
        .unwrap();
        let g = build_graph(&model).unwrap();
        let spans: Vec<_> = g.edges().iter().map(|e| (e.src, e.dst)).collect();
        assert_eq!(spans, vec![(0, 1), (0, 2), (1, 2), (2, 3), (3, 4)]);
        assert_eq!(g.edge(2, 3).unwrap().ram_bytes, 9);
        assert_eq!(g.edge(3, 4).unwrap().ram_bytes, 4);
        assert_eq!(g.edge(3, 4).unwrap().macs, 24);
    }

    #[test]
    fn single_edges_match_vanilla_costs() {
        let m = toy3();
        let shapes = infer_shapes(&m).unwrap();
        let g = build_graph(&m).unwrap();
        for (i, l) in m.layers.iter().enumerate() {
            let e = g.edge(i, i + 1).unwrap();
            assert_eq!(e.macs, vanilla_macs(l, shapes[i]).unwrap());
            assert_eq!(
                e.macs,
                fused_block_macs(&m.layers[i..=i], &shapes[i..=i + 1]).unwrap()
            );
        }
    }

    #[test]
    fn path_metrics() {
        let g = build_graph(&toy3()).unwrap();
        let vanilla = FusionSetting::vanilla(&g).unwrap();
        assert_eq!(path_peak_ram(&vanilla), g.vanilla_ram());
        assert_eq!(overhead_factor(&vanilla, &g), Ratio::from_integer(1));

        let fused = FusionSetting::from_spans(&g, &[0..2, 2..3]).unwrap();
        assert!(overhead_factor(&fused, &g) > Ratio::from_integer(1));

        let edges = vec![
            Edge {
                src: 0,
                dst: 1,
                ram_bytes: 20,
                macs: 10,
            },
            Edge {
                src: 1,
                dst: 2,
                ram_bytes: 72,
                macs: 20,
            },
            Edge {
                src: 2,
                dst: 3,
                ram_bytes: 15,
                macs: 0,
            },
        ];
        let g = FusionGraph::from_edges(4, edges.clone()).unwrap();
        let s = FusionSetting::new(edges, 3).unwrap();
        assert_eq!(path_peak_ram(&s), 72);
        assert_eq!(path_total_macs(&s), 30);
        assert_eq!(overhead_factor(&s, &g), Ratio::from_integer(1));
    }

    #[test]
    fn setting_must_tile_layers() {
        let g = build_graph(&toy3()).unwrap();
        assert!(FusionSetting::from_spans(&g, &[0..2]).is_err());
        let e = *g.edge(0, 1).unwrap();
        let f = *g.edge(2, 3).unwrap();
        assert!(FusionSetting::new(vec![e, f], 3).is_err());
    }

    #[test]
    fn deterministic_dump() {
        let a = build_graph(&toy3()).unwrap().to_json().to_string();
        let b = build_graph(&toy3()).unwrap().to_json().to_string();
        assert_eq!(a, b);
    }
}
