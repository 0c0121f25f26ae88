use std::io::{Read, Write};

use nalgebra::{Matrix3, Point3, Vector3};

use super::{Mesh, MeshError};

const FEATURE_MAGIC: [u8; 4] = *b"SCFV";
const FEATURE_VERSION: u32 = 1;

/// Rigid-aligned displacement field, flattened as `[x0, y0, z0, x1, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn zeros(num_vertices: usize) -> Self {
        FeatureVector(vec![0.0; 3 * num_vertices])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Writes the 16-byte header (magic, version, length) followed by
    /// little-endian `f64` values.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), MeshError> {
        w.write_all(&FEATURE_MAGIC)?;
        w.write_all(&FEATURE_VERSION.to_le_bytes())?;
        w.write_all(&(self.0.len() as u64).to_le_bytes())?;
        for v in &self.0 {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, MeshError> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        if header[0..4] != FEATURE_MAGIC {
            return Err(MeshError::FeatureFile("bad magic".into()));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != FEATURE_VERSION {
            return Err(MeshError::FeatureFile(format!("unsupported version {version}")));
        }
        let len = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
        let mut bytes = vec![0u8; len * 8];
        r.read_exact(&mut bytes)
            .map_err(|_| MeshError::FeatureFile(format!("truncated payload, expected {len} values")))?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(FeatureVector(values))
    }
}

/// `x -> rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidMotion {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidMotion {
    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }
}

fn centroid(points: &[Point3<f64>]) -> Vector3<f64> {
    let sum = points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords);
    sum / points.len() as f64
}

/// Least-squares rigid motion taking `source[i]` onto `target[i]` (Kabsch).
///
/// Singular vectors are sorted by decreasing singular value and each pair is
/// sign-normalized so the largest-magnitude entry of the left vector is
/// positive; a reflection is corrected on the smallest singular direction, so
/// the result is always a proper rotation.
pub fn rigid_align(source: &[Point3<f64>], target: &[Point3<f64>]) -> Result<RigidMotion, MeshError> {
    if source.len() != target.len() {
        return Err(MeshError::VertexCountMismatch {
            deformed: source.len(),
            rest: target.len(),
        });
    }
    if source.len() < 3 {
        return Err(MeshError::DegenerateAlignment);
    }
    let cs = centroid(source);
    let ct = centroid(target);
    let mut h = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        h += (s.coords - cs) * (t.coords - ct).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.ok_or(MeshError::DegenerateAlignment)?;
    let v = svd.v_t.ok_or(MeshError::DegenerateAlignment)?.transpose();
    let sigma = svd.singular_values;

    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
    if !(sigma[order[0]] > 0.0) || sigma[order[1]] <= 1e-12 * sigma[order[0]] {
        return Err(MeshError::DegenerateAlignment);
    }
    let mut us = Matrix3::zeros();
    let mut vs = Matrix3::zeros();
    for (k, &i) in order.iter().enumerate() {
        let mut ui = u.column(i).into_owned();
        let mut vi = v.column(i).into_owned();
        let lead = ui.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            ui = -ui;
            vi = -vi;
        }
        us.set_column(k, &ui);
        vs.set_column(k, &vi);
    }
    let d = (vs * us.transpose()).determinant().signum();
    let rotation = vs * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * us.transpose();
    let translation = ct - rotation * cs;
    Ok(RigidMotion { rotation, translation })
}

/// Displacements from the rest pose after optimal rigid alignment of the
/// deformed vertices onto the rest vertices.
pub fn feature_transform(mesh: &Mesh) -> Result<FeatureVector, MeshError> {
    let motion = rigid_align(&mesh.vertices, &mesh.rest)?;
    let mut out = Vec::with_capacity(3 * mesh.num_vertices());
    for (v, r) in mesh.vertices.iter().zip(mesh.rest.iter()) {
        let aligned = motion.apply(v);
        out.extend_from_slice(&[aligned.x - r.x, aligned.y - r.y, aligned.z - r.z]);
    }
    Ok(FeatureVector(out))
}

/// Mesh in the rest frame whose vertices are `rest + features`.
///
/// Exact inverse of [`feature_transform`] on its image: features produced by
/// the transform are already expressed in the canonical (rest-aligned) frame.
pub fn feature_inverse(features: &FeatureVector, rest: &Mesh) -> Result<Mesh, MeshError> {
    let n = rest.rest.len();
    if features.len() != 3 * n {
        return Err(MeshError::FeatureLength {
            got: features.len(),
            vertices: n,
        });
    }
    let vertices = rest
        .rest
        .iter()
        .zip(features.0.chunks_exact(3))
        .map(|(r, d)| Point3::new(r.x + d[0], r.y + d[1], r.z + d[2]))
        .collect();
    rest.with_vertices(vertices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blob(n: usize, seed: u64) -> Mesh {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rest: Vec<_> = (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.3..0.3),
                )
            })
            .collect();
        let tris = (0..n - 2).map(|i| [i, i + 1, i + 2]).collect();
        Mesh::from_rest(rest, tris).unwrap()
    }

    fn random_motion(rng: &mut ChaCha8Rng) -> RigidMotion {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let angle = rng.random_range(-3.1..3.1);
        let rotation = *Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).matrix();
        let translation = Vector3::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
        );
        RigidMotion { rotation, translation }
    }

    fn bend(mesh: &Mesh) -> Mesh {
        let verts = mesh
            .rest
            .iter()
            .map(|p| Point3::new(p.x, p.y + 0.3 * p.x * p.x, p.z + 0.1 * p.x.sin()))
            .collect();
        mesh.with_vertices(verts).unwrap()
    }

    #[test]
    fn identity_gives_zero() {
        let mesh = blob(30, 1);
        let f = feature_transform(&mesh).unwrap();
        assert!(f.max_abs() < 1e-12);
    }

    #[test]
    fn rotated_and_translated_rest_gives_zero() {
        let mesh = blob(30, 2);
        let rot = *Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2).matrix();
        let motion = RigidMotion {
            rotation: rot,
            translation: Vector3::new(1.0, 2.0, 3.0),
        };
        let moved = mesh.with_vertices(mesh.rest.iter().map(|p| motion.apply(p)).collect()).unwrap();
        assert!(feature_transform(&moved).unwrap().max_abs() <= 1e-9);
    }

    #[test]
    fn bend_features_invariant_under_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bent = bend(&blob(40, 3));
        let reference = feature_transform(&bent).unwrap();
        assert!(reference.max_abs() > 1e-3);
        for _ in 0..100 {
            let m = random_motion(&mut rng);
            let moved = bent.with_vertices(bent.vertices.iter().map(|p| m.apply(p)).collect()).unwrap();
            let f = feature_transform(&moved).unwrap();
            for (a, b) in f.0.iter().zip(&reference.0) {
                assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_features_invert_to_rest() {
        let mesh = blob(12, 4);
        let back = feature_inverse(&FeatureVector::zeros(12), &mesh).unwrap();
        assert_eq!(back.vertices, mesh.rest.to_vec());
    }

    #[test]
    fn inverse_of_transform_is_rigidly_equivalent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bent = bend(&blob(25, 5));
        let m = random_motion(&mut rng);
        let moved = bent.with_vertices(bent.vertices.iter().map(|p| m.apply(p)).collect()).unwrap();
        let back = feature_inverse(&feature_transform(&moved).unwrap(), &moved).unwrap();
        // pairwise distances are preserved by rigid motions
        for i in 0..25 {
            for j in 0..25 {
                let d0 = (moved.vertices[i] - moved.vertices[j]).norm();
                let d1 = (back.vertices[i] - back.vertices[j]).norm();
                assert!((d0 - d1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn collinear_rest_is_rejected() {
        let rest: Vec<_> = (0..5).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        let mesh = Mesh::from_rest(rest, vec![[0, 1, 2]]).unwrap();
        assert!(matches!(feature_transform(&mesh), Err(MeshError::DegenerateAlignment)));
    }

    #[test]
    fn inverse_rejects_wrong_length() {
        let mesh = blob(6, 6);
        let err = feature_inverse(&FeatureVector(vec![0.0; 5]), &mesh).unwrap_err();
        assert!(matches!(err, MeshError::FeatureLength { got: 5, vertices: 6 }));
    }

    #[test]
    fn feature_file_roundtrip_and_header() {
        let f = FeatureVector(vec![1.5, -2.0, 3.25]);
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 24);
        assert_eq!(&buf[0..4], b"SCFV");
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 3);
        assert_eq!(FeatureVector::read_from(&buf[..]).unwrap(), f);
        assert!(FeatureVector::read_from(&buf[..20]).is_err());
    }
}
