//! Grid-house object-approaching stack: a procedural indoor simulator with a
//! raycast renderer, attention-mask state encoding, an actor-critic policy
//! trained asynchronously, a small joint segmentation/depth network, and the
//! evaluation and feature-distance analyses built on top.

pub mod analysis;
pub mod checkpoint;
pub mod cli;
pub mod eval;
pub mod perception;
pub mod gridhouse;
pub mod policynet;
pub mod state;
pub mod trainer;
