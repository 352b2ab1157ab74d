//! Graph-neural-network routing for simulated microservice meshes.
//!
//! The pipeline: [`topogen`] builds a replica graph, [`sim`] drives traffic
//! through it and labels every routing decision with the counterfactually
//! best replica, [`train`] fits the edge-aware attention model in [`gnn`],
//! and [`eval`] compares it with classical load-balancing policies.

pub mod eval;
pub mod gnn;
pub mod graph;
pub mod persist;
pub mod sim;
pub mod tensor;
pub mod topogen;
pub mod train;
