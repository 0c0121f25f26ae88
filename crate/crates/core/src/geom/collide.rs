use serde::{Deserialize, Serialize};

use super::bvh::Bvh;
use super::triangle::{distance_unchecked, intersect_unchecked, penetration_unchecked, Triangle};
use super::GeomError;
use crate::mesh::Mesh;

/// Vertex to sub-domain assignment; domain ids are `1..=num_domains`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainMap {
    pub domain_of: Vec<usize>,
    pub num_domains: usize,
}

impl DomainMap {
    /// Every vertex in domain 1.
    pub fn single(num_vertices: usize, num_domains: usize) -> Self {
        DomainMap {
            domain_of: vec![1; num_vertices],
            num_domains,
        }
    }

    pub fn check(&self, num_vertices: usize) -> Result<(), GeomError> {
        if self.domain_of.len() != num_vertices {
            return Err(GeomError::DomainMap(format!(
                "map covers {} vertices, mesh has {num_vertices}",
                self.domain_of.len()
            )));
        }
        if let Some((v, &d)) = self
            .domain_of
            .iter()
            .enumerate()
            .find(|(_, &d)| d == 0 || d > self.num_domains)
        {
            return Err(GeomError::DomainMap(format!(
                "vertex {v} has domain {d}, expected 1..={}",
                self.num_domains
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Separation beyond which collision-free meshes all report `pd = -margin`.
    pub margin: f64,
}

impl OracleConfig {
    /// Margin as a fraction of the rest-pose bounding-box diagonal.
    pub fn relative_to(mesh: &Mesh, fraction: f64) -> Self {
        OracleConfig {
            margin: fraction * crate::mesh::bbox_diagonal(&mesh.rest),
        }
    }
}

/// Ground-truth collision state of one mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    /// Signed penetration: max per-pair penetration when colliding, otherwise
    /// the negated minimum separation (capped at the oracle margin).
    pub pd: f64,
    /// Per-domain maximum penetration; all zero when collision-free.
    pub pd_per_domain: Vec<f64>,
    /// Penetrating non-adjacent triangle pairs `(i, j)`, `i < j`, sorted.
    #[serde(skip)]
    pub pairs: Vec<(usize, usize)>,
    pub label: bool,
}

impl CollisionReport {
    /// JSON summary: pd, label, pair count and per-domain depths.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "pd": self.pd,
            "label": u8::from(self.label),
            "pair_count": self.pairs.len(),
            "pd_per_domain": self.pd_per_domain,
        })
    }
}

pub(crate) fn shares_vertex(a: &[usize; 3], b: &[usize; 3]) -> bool {
    a.iter().any(|v| b.contains(v))
}

fn tri(mesh: &Mesh, t: usize) -> Triangle {
    Triangle(mesh.triangle(t))
}

fn check_mesh(mesh: &Mesh) -> Result<(), GeomError> {
    for t in 0..mesh.num_triangles() {
        if tri(mesh, t).is_degenerate() {
            return Err(GeomError::DegenerateTriangle);
        }
    }
    Ok(())
}

/// Penetration of a candidate pair if it counts as a collision.
fn penetrating(mesh: &Mesh, i: usize, j: usize) -> Option<f64> {
    let (ti, tj) = (&mesh.triangles[i], &mesh.triangles[j]);
    if shares_vertex(ti, tj) {
        return None;
    }
    let (a, b) = (tri(mesh, i), tri(mesh, j));
    if !intersect_unchecked(&a, &b) {
        return None;
    }
    Some(penetration_unchecked(&a, &b))
}

/// Exact self-collision query using the BVH for pruning.
///
/// Pairs sharing a vertex are never tested. Exactly-touching pairs (zero
/// penetration) give `pd = 0` but are not listed in `pairs`.
pub fn self_collide(
    mesh: &Mesh,
    bvh: &Bvh,
    domains: &DomainMap,
    cfg: &OracleConfig,
) -> Result<CollisionReport, GeomError> {
    domains.check(mesh.num_vertices())?;
    check_mesh(mesh)?;
    let mut hits: Vec<(usize, usize, f64)> = Vec::new();
    bvh.for_each_overlapping_pair(0.0, |i, j| {
        if let Some(p) = penetrating(mesh, i, j) {
            hits.push((i, j, p));
        }
    });
    Ok(assemble(mesh, bvh, domains, cfg, hits))
}

fn assemble(
    mesh: &Mesh,
    bvh: &Bvh,
    domains: &DomainMap,
    cfg: &OracleConfig,
    mut hits: Vec<(usize, usize, f64)>,
) -> CollisionReport {
    hits.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let touching = hits.iter().any(|h| h.2 <= 0.0);
    hits.retain(|h| h.2 > 0.0);
    let mut pd_per_domain = vec![0.0; domains.num_domains];
    if hits.is_empty() {
        let pd = if touching {
            0.0
        } else {
            -min_separation(mesh, bvh, cfg.margin)
        };
        return CollisionReport {
            pd,
            pd_per_domain,
            pairs: Vec::new(),
            label: false,
        };
    }
    let mut pd = 0.0f64;
    for &(i, j, p) in &hits {
        pd = pd.max(p);
        for &v in mesh.triangles[i].iter().chain(mesh.triangles[j].iter()) {
            let slot = &mut pd_per_domain[domains.domain_of[v] - 1];
            *slot = slot.max(p);
        }
    }
    CollisionReport {
        pd,
        pd_per_domain,
        pairs: hits.into_iter().map(|(i, j, _)| (i, j)).collect(),
        label: pd > 0.0,
    }
}

/// Minimum distance over non-adjacent triangle pairs, capped at `cap`.
pub fn min_separation(mesh: &Mesh, bvh: &Bvh, cap: f64) -> f64 {
    bvh.min_pair_distance(cap, |i, j| {
        if shares_vertex(&mesh.triangles[i], &mesh.triangles[j]) {
            None
        } else {
            Some(distance_unchecked(&tri(mesh, i), &tri(mesh, j)))
        }
    })
}

/// O(T^2) reference for [`self_collide`]'s pair set.
pub fn brute_force_pairs(mesh: &Mesh) -> Vec<(usize, usize)> {
    let n = mesh.num_triangles();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if penetrating(mesh, i, j).is_some_and(|p| p > 0.0) {
                out.push((i, j));
            }
        }
    }
    out
}

/// O(T^2) reference for the minimum non-adjacent separation.
pub fn brute_force_min_separation(mesh: &Mesh, cap: f64) -> f64 {
    let n = mesh.num_triangles();
    let mut best = cap;
    for i in 0..n {
        for j in i + 1..n {
            if !shares_vertex(&mesh.triangles[i], &mesh.triangles[j]) {
                best = best.min(distance_unchecked(&tri(mesh, i), &tri(mesh, j)));
            }
        }
    }
    best
}
