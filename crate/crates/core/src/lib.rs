//! Supervised contrastive disentanglement for fixed-topology triangle meshes.

pub mod diffcore;
pub mod losses;
pub mod metrics;
pub mod mesh;
pub mod model;
pub mod torusgen;
pub mod trainer;
