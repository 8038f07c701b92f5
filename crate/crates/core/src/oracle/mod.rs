//! Ground truth for the planner: exhaustive path enumeration, a reference
//! integer executor and a generator of small random models.

mod enumerate;
mod executor;
mod random;

pub use enumerate::{brute_force, enumerate_settings, Settings, MAX_ENUMERATION_NODES};
pub use executor::{
    block_row_windows, run_fused, run_vanilla, weight_count, ExecTrace, Tensor, Weights,
};
pub use random::{random_model, RandomModelConfig};
