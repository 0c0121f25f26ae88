//! Axis-aligned bounding volume hierarchy over the triangles of one mesh.

use nalgebra::{Point3, Vector3};

use super::GeomError;
use crate::mesh::Mesh;

pub const DEFAULT_LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            min: Point3::from(Vector3::repeat(f64::INFINITY)),
            max: Point3::from(Vector3::repeat(f64::NEG_INFINITY)),
        }
    }

    pub fn from_points(points: &[Point3<f64>]) -> Self {
        let mut b = Aabb::empty();
        for p in points {
            b.grow_point(p);
        }
        b
    }

    pub fn grow_point(&mut self, p: &Point3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn grow(&mut self, other: &Aabb) {
        self.min = self.min.inf(&other.min);
        self.max = self.max.sup(&other.max);
    }

    pub fn contains(&self, other: &Aabb) -> bool {
        (0..3).all(|k| self.min[k] <= other.min[k] && self.max[k] >= other.max[k])
    }

    /// Closed overlap test after inflating both boxes by `margin / 2`.
    pub fn overlaps(&self, other: &Aabb, margin: f64) -> bool {
        (0..3).all(|k| self.min[k] <= other.max[k] + margin && other.min[k] <= self.max[k] + margin)
    }

    /// Euclidean distance between the boxes (zero if they overlap).
    pub fn distance(&self, other: &Aabb) -> f64 {
        let mut d2 = 0.0;
        for k in 0..3 {
            let gap = (self.min[k] - other.max[k]).max(other.min[k] - self.max[k]).max(0.0);
            d2 += gap * gap;
        }
        d2.sqrt()
    }

    fn longest_axis(&self) -> usize {
        let e = self.max - self.min;
        if e.x >= e.y && e.x >= e.z {
            0
        } else if e.y >= e.z {
            1
        } else {
            2
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Leaf { start: usize, count: usize },
    Inner { left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BvhNode {
    pub aabb: Aabb,
    pub kind: NodeKind,
}

/// Binary tree of boxes; `order[start..start + count]` lists a leaf's triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct Bvh {
    pub nodes: Vec<BvhNode>,
    pub order: Vec<usize>,
    pub tri_boxes: Vec<Aabb>,
    pub leaf_size: usize,
}

pub fn build_bvh(mesh: &Mesh) -> Result<Bvh, GeomError> {
    build_bvh_with_leaf_size(mesh, DEFAULT_LEAF_SIZE)
}

/// Top-down build splitting at the centroid median along the node's longest
/// axis. Ties are broken by triangle index, so the tree depends only on the
/// input.
pub fn build_bvh_with_leaf_size(mesh: &Mesh, leaf_size: usize) -> Result<Bvh, GeomError> {
    let n = mesh.num_triangles();
    if n == 0 {
        return Err(GeomError::EmptyMesh);
    }
    let leaf_size = leaf_size.max(1);
    let tri_boxes: Vec<Aabb> = (0..n).map(|t| Aabb::from_points(&mesh.triangle(t))).collect();
    let centroids: Vec<Point3<f64>> = tri_boxes.iter().map(|b| nalgebra::center(&b.min, &b.max)).collect();
    let mut bvh = Bvh {
        nodes: Vec::with_capacity(2 * n / leaf_size + 1),
        order: (0..n).collect(),
        tri_boxes,
        leaf_size,
    };
    build_node(&mut bvh, &centroids, 0, n);
    Ok(bvh)
}

fn build_node(bvh: &mut Bvh, centroids: &[Point3<f64>], start: usize, end: usize) -> usize {
    let mut aabb = Aabb::empty();
    for &t in &bvh.order[start..end] {
        aabb.grow(&bvh.tri_boxes[t]);
    }
    let id = bvh.nodes.len();
    let count = end - start;
    bvh.nodes.push(BvhNode {
        aabb,
        kind: NodeKind::Leaf { start, count },
    });
    if count <= bvh.leaf_size {
        return id;
    }
    let axis = aabb.longest_axis();
    let mid = start + count / 2;
    bvh.order[start..end].select_nth_unstable_by(count / 2, |&a, &b| {
        centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b))
    });
    let left = build_node(bvh, centroids, start, mid);
    let right = build_node(bvh, centroids, mid, end);
    bvh.nodes[id].kind = NodeKind::Inner { left, right };
    id
}

impl Bvh {
    pub fn root(&self) -> &BvhNode {
        &self.nodes[0]
    }

    pub fn leaf_triangles(&self, node: &BvhNode) -> &[usize] {
        match node.kind {
            NodeKind::Leaf { start, count } => &self.order[start..start + count],
            NodeKind::Inner { .. } => &[],
        }
    }

    /// Calls `visit(i, j)` with `i < j` for every triangle pair whose boxes
    /// overlap after inflation by `margin`. Each pair is reported once.
    pub fn for_each_overlapping_pair(&self, margin: f64, mut visit: impl FnMut(usize, usize)) {
        let mut stack = vec![(0usize, 0usize)];
        while let Some((a, b)) = stack.pop() {
            let na = &self.nodes[a];
            let nb = &self.nodes[b];
            if a == b {
                match na.kind {
                    NodeKind::Leaf { .. } => {
                        let tris = self.leaf_triangles(na);
                        for (k, &i) in tris.iter().enumerate() {
                            for &j in &tris[k + 1..] {
                                if self.tri_boxes[i].overlaps(&self.tri_boxes[j], margin) {
                                    visit(i.min(j), i.max(j));
                                }
                            }
                        }
                    }
                    NodeKind::Inner { left, right } => {
                        stack.push((left, left));
                        stack.push((right, right));
                        stack.push((left, right));
                    }
                }
                continue;
            }
            if !na.aabb.overlaps(&nb.aabb, margin) {
                continue;
            }
            match (na.kind, nb.kind) {
                (NodeKind::Leaf { .. }, NodeKind::Leaf { .. }) => {
                    for &i in self.leaf_triangles(na) {
                        for &j in self.leaf_triangles(nb) {
                            if self.tri_boxes[i].overlaps(&self.tri_boxes[j], margin) {
                                visit(i.min(j), i.max(j));
                            }
                        }
                    }
                }
                (NodeKind::Inner { left, right }, NodeKind::Leaf { .. }) => {
                    stack.push((left, b));
                    stack.push((right, b));
                }
                (NodeKind::Leaf { .. }, NodeKind::Inner { left, right }) => {
                    stack.push((a, left));
                    stack.push((a, right));
                }
                (NodeKind::Inner { left: al, right: ar }, NodeKind::Inner { left: bl, right: br }) => {
                    stack.push((al, bl));
                    stack.push((al, br));
                    stack.push((ar, bl));
                    stack.push((ar, br));
                }
            }
        }
    }

    /// Branch-and-bound minimum of `pair_dist(i, j)` over triangle pairs whose
    /// box distance is below the running best, starting from `cap`.
    /// `pair_dist` returns `None` for pairs to skip.
    pub fn min_pair_distance(&self, cap: f64, mut pair_dist: impl FnMut(usize, usize) -> Option<f64>) -> f64 {
        let mut best = cap;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((a, b)) = stack.pop() {
            let na = &self.nodes[a];
            let nb = &self.nodes[b];
            if a != b && na.aabb.distance(&nb.aabb) >= best {
                continue;
            }
            let mut leaf_pair = |i: usize, j: usize, best: &mut f64| {
                if self.tri_boxes[i].distance(&self.tri_boxes[j]) < *best {
                    if let Some(d) = pair_dist(i.min(j), i.max(j)) {
                        *best = best.min(d);
                    }
                }
            };
            match (na.kind, nb.kind) {
                (NodeKind::Leaf { .. }, NodeKind::Leaf { .. }) => {
                    let ta = self.leaf_triangles(na);
                    if a == b {
                        for (k, &i) in ta.iter().enumerate() {
                            for &j in &ta[k + 1..] {
                                leaf_pair(i, j, &mut best);
                            }
                        }
                    } else {
                        for &i in ta {
                            for &j in self.leaf_triangles(nb) {
                                leaf_pair(i, j, &mut best);
                            }
                        }
                    }
                }
                (NodeKind::Inner { left, right }, _) if a == b => {
                    stack.push((left, right));
                    stack.push((left, left));
                    stack.push((right, right));
                }
                (NodeKind::Inner { left, right }, NodeKind::Leaf { .. }) => {
                    stack.push((left, b));
                    stack.push((right, b));
                }
                (NodeKind::Leaf { .. }, NodeKind::Inner { left, right }) => {
                    stack.push((a, left));
                    stack.push((a, right));
                }
                (NodeKind::Inner { left: al, right: ar }, NodeKind::Inner { left: bl, right: br }) => {
                    stack.push((al, bl));
                    stack.push((al, br));
                    stack.push((ar, bl));
                    stack.push((ar, br));
                }
            }
        }
        best
    }
}
