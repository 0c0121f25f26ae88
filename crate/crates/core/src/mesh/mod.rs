//! Fixed-topology triangle meshes, manifold validation and the rigid-invariant
//! feature transform.
//!
//! Every mesh of a dataset shares one triangle list and one rest pose; only the
//! deformed vertex positions differ. The feature transform aligns the deformed
//! vertices to the rest pose with the least-squares rigid motion (Kabsch) and
//! returns the residual displacement field, so any rigid motion applied to a
//! mesh leaves its features unchanged.

mod features;
pub mod obj;

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::Point3;
use thiserror::Error;

pub use features::{feature_inverse, feature_transform, rigid_align, FeatureVector, RigidMotion};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("vertex count mismatch: {deformed} deformed vs {rest} rest vertices")]
    VertexCountMismatch { deformed: usize, rest: usize },
    #[error("feature length {got} does not match 3 x {vertices} vertices")]
    FeatureLength { got: usize, vertices: usize },
    #[error("rigid alignment undefined: point set is degenerate (collinear)")]
    DegenerateAlignment,
    #[error("triangle {triangle} references vertex {index} out of range (|V| = {vertices})")]
    IndexOutOfRange { triangle: usize, index: usize, vertices: usize },
    #[error("topology mismatch between meshes")]
    TopologyMismatch,
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("bad feature file: {0}")]
    FeatureFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Triangle connectivity shared by all meshes of a dataset.
pub type Topology = Arc<[[usize; 3]]>;

/// A deformed triangle mesh together with its rest pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Topology,
    pub rest: Arc<[Point3<f64>]>,
}

impl Mesh {
    /// The undeformed mesh: vertices equal the rest pose.
    pub fn from_rest(rest: Vec<Point3<f64>>, triangles: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let n = rest.len();
        check_indices(&triangles, n)?;
        Ok(Mesh {
            vertices: rest.clone(),
            triangles: triangles.into(),
            rest: rest.into(),
        })
    }

    /// A new deformation of the same rest pose and topology.
    pub fn with_vertices(&self, vertices: Vec<Point3<f64>>) -> Result<Self, MeshError> {
        if vertices.len() != self.rest.len() {
            return Err(MeshError::VertexCountMismatch {
                deformed: vertices.len(),
                rest: self.rest.len(),
            });
        }
        Ok(Mesh {
            vertices,
            triangles: Arc::clone(&self.triangles),
            rest: Arc::clone(&self.rest),
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle(&self, t: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Diagonal length of the axis-aligned bounding box of the deformed vertices.
    pub fn bbox_diagonal(&self) -> f64 {
        bbox_diagonal(&self.vertices)
    }

    pub fn same_topology(&self, other: &Mesh) -> bool {
        Arc::ptr_eq(&self.triangles, &other.triangles) || self.triangles == other.triangles
    }
}

pub fn bbox_diagonal(points: &[Point3<f64>]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (hi - lo).norm()
}

fn check_indices(triangles: &[[usize; 3]], n: usize) -> Result<(), MeshError> {
    for (t, tri) in triangles.iter().enumerate() {
        for &i in tri {
            if i >= n {
                return Err(MeshError::IndexOutOfRange {
                    triangle: t,
                    index: i,
                    vertices: n,
                });
            }
        }
    }
    Ok(())
}

/// An undirected edge with `0 <= lo < hi`.
pub type Edge = (usize, usize);

fn edge(a: usize, b: usize) -> Edge {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Result of [`validate_manifold`]. Empty means the mesh is a valid manifold.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    /// Triangles with a repeated vertex index.
    pub degenerate_triangles: Vec<usize>,
    /// Triangles referencing a vertex outside `[0, |V|)`.
    pub out_of_range: Vec<usize>,
    /// Edges incident to more than two triangles, with their incidence count.
    pub nonmanifold_edges: Vec<(Edge, usize)>,
    /// Edges incident to exactly one triangle. These are legal for a manifold
    /// with boundary, so they do not make the report invalid.
    pub boundary_edges: Vec<Edge>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.degenerate_triangles.is_empty()
            && self.out_of_range.is_empty()
            && self.nonmanifold_edges.is_empty()
    }

    /// Valid and without boundary edges.
    pub fn is_closed(&self) -> bool {
        self.is_valid() && self.boundary_edges.is_empty()
    }
}

/// Check that every edge is shared by at most two triangles and no triangle
/// repeats a vertex.
pub fn validate_manifold(mesh: &Mesh) -> ValidationReport {
    validate_topology(&mesh.triangles, mesh.num_vertices())
}

pub fn validate_topology(triangles: &[[usize; 3]], num_vertices: usize) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut incidence: BTreeMap<Edge, usize> = BTreeMap::new();
    for (t, &[a, b, c]) in triangles.iter().enumerate() {
        if a >= num_vertices || b >= num_vertices || c >= num_vertices {
            report.out_of_range.push(t);
            continue;
        }
        if a == b || b == c || a == c {
            report.degenerate_triangles.push(t);
            continue;
        }
        for e in [edge(a, b), edge(b, c), edge(c, a)] {
            *incidence.entry(e).or_default() += 1;
        }
    }
    for (e, count) in incidence {
        if count > 2 {
            report.nonmanifold_edges.push((e, count));
        } else if count == 1 {
            report.boundary_edges.push(e);
        }
    }
    report
}
