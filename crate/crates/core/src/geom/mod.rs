//! Exact self-collision oracle.
//!
//! Non-adjacent triangle pairs are pruned with a BVH and tested with a
//! separating-axis predicate. The signed penetration measure is positive for
//! penetrating meshes (largest per-pair separating-axis depth) and negative for
//! collision-free ones (negated minimum separation). Triangle pairs that share
//! a vertex are treated as adjacent and never tested.

mod bvh;
mod collide;
mod label;
mod triangle;

use thiserror::Error;

pub use bvh::{build_bvh, build_bvh_with_leaf_size, Aabb, Bvh, BvhNode, NodeKind, DEFAULT_LEAF_SIZE};
pub use collide::{
    brute_force_min_separation, brute_force_pairs, min_separation, self_collide, CollisionReport, DomainMap,
    OracleConfig,
};
pub use label::{label_latent, label_latents, CollisionOracle, CollisionSample, LatentDecoder};
pub use triangle::{
    closest_point_on_triangle, pair_penetration, segment_segment_dist2, tri_tri_intersect, triangle_distance,
    Triangle,
};

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("degenerate (zero-area) triangle")]
    DegenerateTriangle,
    #[error("mesh has no triangles")]
    EmptyMesh,
    #[error("inconsistent domain map: {0}")]
    DomainMap(String),
    #[error("latent code has length {got}, decoder expects {expected}")]
    LatentDim { got: usize, expected: usize },
    #[error(transparent)]
    Mesh(#[from] crate::mesh::MeshError),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
}
