#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod engine;
pub mod graph;
pub mod protocol;
pub mod rng;
pub mod scalar;
pub mod schedule;
pub mod stats;

pub use graph::DirectedGraph;
pub use schedule::{NetworkParams, ScheduleTrace};

pub type HypothesisModelF64 = stats::HypothesisModel<f64>;
pub type HypothesisModelF32 = stats::HypothesisModel<f32>;
pub type LearningNodeStateF64 = protocol::LearningNodeState<f64>;
pub type LearningNodeStateF32 = protocol::LearningNodeState<f32>;
pub type RapsNodeStateF64 = protocol::RapsNodeState<f64>;
pub type RapsNodeStateF32 = protocol::RapsNodeState<f32>;
pub type BeliefTraceF64 = engine::BeliefTrace<f64>;
pub type BeliefTraceF32 = engine::BeliefTrace<f32>;
pub type RapsTraceF64 = engine::RapsTrace<f64>;
pub type RapsTraceF32 = engine::RapsTrace<f32>;
