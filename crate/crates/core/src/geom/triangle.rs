//! Triangle-triangle predicates: closed intersection, separating-axis
//! penetration and exact Euclidean distance.

use nalgebra::{Point3, Vector3};

use super::GeomError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangle(pub [Point3<f64>; 3]);

impl Triangle {
    pub fn new(a: Point3<f64>, b: Point3<f64>, c: Point3<f64>) -> Self {
        Triangle([a, b, c])
    }

    pub fn edges(&self) -> [Vector3<f64>; 3] {
        let [a, b, c] = self.0;
        [b - a, c - b, a - c]
    }

    /// Unnormalized normal `(b - a) x (c - a)`.
    pub fn normal(&self) -> Vector3<f64> {
        let [a, b, c] = self.0;
        (b - a).cross(&(c - a))
    }

    fn max_edge(&self) -> f64 {
        self.edges().iter().map(|e| e.norm()).fold(0.0, f64::max)
    }

    pub fn is_degenerate(&self) -> bool {
        let scale = self.max_edge();
        !(self.normal().norm() > 1e-12 * scale * scale)
    }

    fn check(&self) -> Result<(), GeomError> {
        if self.is_degenerate() {
            Err(GeomError::DegenerateTriangle)
        } else {
            Ok(())
        }
    }

    fn project(&self, axis: &Vector3<f64>) -> (f64, f64) {
        let d = self.0.map(|p| p.coords.dot(axis));
        (d[0].min(d[1]).min(d[2]), d[0].max(d[1]).max(d[2]))
    }

    fn key(&self) -> [f64; 9] {
        let [a, b, c] = self.0;
        [a.x, a.y, a.z, b.x, b.y, b.z, c.x, c.y, c.z]
    }
}

/// Depth of the projected interval overlap along `axis`; negative when the
/// intervals are disjoint. Invariant under swapping the triangles and under
/// negating the axis.
fn interval_overlap(a: &Triangle, b: &Triangle, axis: &Vector3<f64>) -> f64 {
    let (amin, amax) = a.project(axis);
    let (bmin, bmax) = b.project(axis);
    (amax - bmin).min(bmax - amin)
}

/// Candidate separating axes. Face normals, all edge-edge cross products and
/// the in-plane edge normals; together these are complete for two triangles
/// in any configuration, including coplanar ones.
fn all_axes(a: &Triangle, b: &Triangle) -> Vec<Vector3<f64>> {
    let na = a.normal();
    let nb = b.normal();
    let ea = a.edges();
    let eb = b.edges();
    let mut axes = Vec::with_capacity(17);
    axes.push(na);
    axes.push(nb);
    for e in &ea {
        for f in &eb {
            axes.push(e.cross(f));
        }
    }
    for e in &ea {
        axes.push(na.cross(e));
    }
    for f in &eb {
        axes.push(nb.cross(f));
    }
    axes.retain(|v| v.norm_squared() > 0.0);
    axes
}

/// True iff the closed triangles share at least one point.
pub fn tri_tri_intersect(a: &Triangle, b: &Triangle) -> Result<bool, GeomError> {
    a.check()?;
    b.check()?;
    Ok(intersect_unchecked(a, b))
}

pub(crate) fn intersect_unchecked(a: &Triangle, b: &Triangle) -> bool {
    all_axes(a, b).iter().all(|axis| interval_overlap(a, b, axis) >= 0.0)
}

fn coplanar(a: &Triangle, b: &Triangle) -> bool {
    let na = a.normal();
    let nb = b.normal();
    let scale = a.max_edge().max(b.max_edge());
    let unit = na / na.norm();
    na.cross(&nb).norm() <= 1e-10 * na.norm() * nb.norm()
        && b.0.iter().all(|p| (p - a.0[0]).dot(&unit).abs() <= 1e-10 * scale)
}

/// Signed per-pair penetration measure.
///
/// Intersecting pairs return the smallest interval overlap over the
/// separating-axis candidates: two face normals plus nine edge cross products,
/// or the six in-plane edge normals for coplanar pairs. Disjoint pairs return
/// the negated minimum distance. Exactly symmetric in its arguments.
pub fn pair_penetration(a: &Triangle, b: &Triangle) -> Result<f64, GeomError> {
    a.check()?;
    b.check()?;
    Ok(penetration_unchecked(a, b))
}

pub(crate) fn penetration_unchecked(a: &Triangle, b: &Triangle) -> f64 {
    let (a, b) = if b.key() < a.key() { (b, a) } else { (a, b) };
    if !intersect_unchecked(a, b) {
        return -distance_unchecked(a, b);
    }
    let na = a.normal();
    let mut axes: Vec<Vector3<f64>> = Vec::with_capacity(11);
    if coplanar(a, b) {
        axes.extend(a.edges().iter().map(|e| na.cross(e)));
        axes.extend(b.edges().iter().map(|f| na.cross(f)));
    } else {
        axes.push(na);
        axes.push(b.normal());
        for e in &a.edges() {
            for f in &b.edges() {
                axes.push(e.cross(f));
            }
        }
    }
    axes.iter()
        .filter(|v| v.norm_squared() > 0.0)
        .map(|v| interval_overlap(a, b, &(v / v.norm())))
        .fold(f64::INFINITY, f64::min)
        .max(0.0)
}

/// Minimum Euclidean distance between two closed triangles (zero when they
/// intersect).
pub fn triangle_distance(a: &Triangle, b: &Triangle) -> Result<f64, GeomError> {
    a.check()?;
    b.check()?;
    if intersect_unchecked(a, b) {
        return Ok(0.0);
    }
    Ok(distance_unchecked(a, b))
}

/// Distance assuming the triangles do not intersect: the minimum is then
/// attained at a vertex-face or edge-edge pair.
pub(crate) fn distance_unchecked(a: &Triangle, b: &Triangle) -> f64 {
    let mut best = f64::INFINITY;
    for p in &a.0 {
        best = best.min((p - closest_point_on_triangle(p, b)).norm_squared());
    }
    for p in &b.0 {
        best = best.min((p - closest_point_on_triangle(p, a)).norm_squared());
    }
    for i in 0..3 {
        let (p0, p1) = (a.0[i], a.0[(i + 1) % 3]);
        for j in 0..3 {
            let (q0, q1) = (b.0[j], b.0[(j + 1) % 3]);
            best = best.min(segment_segment_dist2(&p0, &p1, &q0, &q1));
        }
    }
    best.sqrt()
}

/// Closest point on a triangle to `p` (Voronoi-region walk).
pub fn closest_point_on_triangle(p: &Point3<f64>, t: &Triangle) -> Point3<f64> {
    let [a, b, c] = t.0;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Squared distance between segments `[p0, p1]` and `[q0, q1]`.
pub fn segment_segment_dist2(p0: &Point3<f64>, p1: &Point3<f64>, q0: &Point3<f64>, q1: &Point3<f64>) -> f64 {
    let d1 = p1 - p0;
    let d2 = q1 - q0;
    let r = p0 - q0;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let (s, t);
    if a <= f64::EPSILON && e <= f64::EPSILON {
        return r.norm_squared();
    }
    if a <= f64::EPSILON {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= f64::EPSILON {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let s0 = if denom > 0.0 {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t = 0.0;
                s = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t = 1.0;
                s = ((b - c) / a).clamp(0.0, 1.0);
            } else {
                t = t0;
                s = s0;
            }
        }
    }
    let c1 = p0 + d1 * s;
    let c2 = q0 + d2 * t;
    (c1 - c2).norm_squared()
}
