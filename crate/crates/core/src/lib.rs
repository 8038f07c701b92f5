//! Multi-stage layer-fusion planning for convolutional networks on
//! memory-constrained devices.
//!
//! A network is modeled as a DAG over its tensors. Every single layer and
//! every feasible fusion block becomes an edge annotated with its RAM and
//! MAC cost, so a fusion setting is a path from the input to the output
//! tensor. [`optimizer`] searches that graph; [`oracle`] provides exhaustive
//! search and a reference executor to check the analytical model against.

pub mod cost_model;
pub mod error;
pub mod fusion_graph;
pub mod model_ir;
pub mod optimizer;
pub mod oracle;
pub mod report;

pub use error::{Error, Result};
pub use fusion_graph::{build_graph, Edge, FusionGraph, FusionSetting};
pub use model_ir::{parse_model, LayerKind, LayerSpec, NetworkModel, TensorShape};
pub use optimizer::{Constraint, PlanResult};
