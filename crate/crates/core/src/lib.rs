//! Topology-guided architecture search over block-structured networks.
//!
//! - [`arch`]: block representation, validity rules, codecs, enumeration.
//! - [`features`]: per-layer state features and discounted feature counts.
//! - [`irl`]: the mirror stimuli function and its max-margin IRL training.
//! - [`qagent`]: tabular Q-learning search with the combined reward.
//! - [`eval`]: accuracy evaluators (surrogate, external plugin), cache, and
//!   the parallel evaluation window.
//! - [`diff`]: softmax architecture parameters and the REINFORCE topology
//!   gradient for differentiable search.

pub mod arch;
pub mod diff;
pub mod eval;
pub mod features;
pub mod irl;
pub mod qagent;
