use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::bvh::build_bvh;
use super::collide::{self_collide, CollisionReport, DomainMap, OracleConfig};
use super::GeomError;
use crate::mesh::{feature_inverse, FeatureVector, Mesh};
use crate::nn::NnError;

/// Anything that maps latent codes (rows) to feature vectors (rows).
pub trait LatentDecoder {
    fn latent_dim(&self) -> usize;
    fn feature_dim(&self) -> usize;
    fn decode_rows(&self, z: &Array2<f64>) -> Result<Array2<f64>, NnError>;
}

/// A labeled latent code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionSample {
    pub z: Vec<f64>,
    pub pd: f64,
    pub pd_per_domain: Vec<f64>,
    pub label: bool,
}

impl CollisionSample {
    fn from_report(z: Vec<f64>, r: CollisionReport) -> Self {
        CollisionSample {
            z,
            pd: r.pd,
            pd_per_domain: r.pd_per_domain,
            label: r.label,
        }
    }
}

/// Ground-truth labeler: decode, invert features, run the exact collider.
pub struct CollisionOracle<'a, D: LatentDecoder + ?Sized> {
    pub decoder: &'a D,
    pub rest: &'a Mesh,
    pub domains: &'a DomainMap,
    pub config: OracleConfig,
}

impl<D: LatentDecoder + ?Sized> CollisionOracle<'_, D> {
    /// Decoded mesh for one latent code.
    pub fn mesh(&self, z: &[f64]) -> Result<Mesh, GeomError> {
        let mut meshes = self.meshes(&[z.to_vec()])?;
        Ok(meshes.pop().expect("one mesh"))
    }

    pub fn meshes(&self, zs: &[Vec<f64>]) -> Result<Vec<Mesh>, GeomError> {
        let dim = self.decoder.latent_dim();
        if let Some(z) = zs.iter().find(|z| z.len() != dim) {
            return Err(GeomError::LatentDim {
                got: z.len(),
                expected: dim,
            });
        }
        if zs.is_empty() {
            return Ok(Vec::new());
        }
        let flat: Vec<f64> = zs.iter().flatten().copied().collect();
        let batch = Array2::from_shape_vec((zs.len(), dim), flat).expect("latent batch");
        let features = self.decoder.decode_rows(&batch)?;
        features
            .rows()
            .into_iter()
            .map(|row| Ok(feature_inverse(&FeatureVector(row.to_vec()), self.rest)?))
            .collect()
    }

    pub fn report(&self, mesh: &Mesh) -> Result<CollisionReport, GeomError> {
        let bvh = build_bvh(mesh)?;
        self_collide(mesh, &bvh, self.domains, &self.config)
    }

    pub fn label(&self, z: &[f64]) -> Result<CollisionSample, GeomError> {
        let mesh = self.mesh(z)?;
        Ok(CollisionSample::from_report(z.to_vec(), self.report(&mesh)?))
    }

    /// Labels a batch; results are in input order.
    pub fn label_batch(&self, zs: &[Vec<f64>]) -> Result<Vec<CollisionSample>, GeomError> {
        // decode in chunks so the feature matrix stays small
        let mut out = Vec::with_capacity(zs.len());
        for chunk in zs.chunks(256) {
            for (z, mesh) in chunk.iter().zip(self.meshes(chunk)?) {
                out.push(CollisionSample::from_report(z.clone(), self.report(&mesh)?));
            }
        }
        Ok(out)
    }
}

pub fn label_latent<D: LatentDecoder + ?Sized>(
    z: &[f64],
    decoder: &D,
    rest: &Mesh,
    domains: &DomainMap,
    config: OracleConfig,
) -> Result<CollisionSample, GeomError> {
    CollisionOracle {
        decoder,
        rest,
        domains,
        config,
    }
    .label(z)
}

pub fn label_latents<D: LatentDecoder + ?Sized>(
    zs: &[Vec<f64>],
    decoder: &D,
    rest: &Mesh,
    domains: &DomainMap,
    config: OracleConfig,
) -> Result<Vec<CollisionSample>, GeomError> {
    CollisionOracle {
        decoder,
        rest,
        domains,
        config,
    }
    .label_batch(zs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;

    /// Moves the second of two stacked triangles along z by `z[0]`.
    struct Shift;

    impl LatentDecoder for Shift {
        fn latent_dim(&self) -> usize {
            1
        }
        fn feature_dim(&self) -> usize {
            18
        }
        fn decode_rows(&self, z: &Array2<f64>) -> Result<Array2<f64>, NnError> {
            let mut f = Array2::zeros((z.nrows(), 18));
            for r in 0..z.nrows() {
                for v in 3..6 {
                    f[[r, 3 * v + 2]] = z[[r, 0]];
                }
            }
            Ok(f)
        }
    }

    fn rest() -> Mesh {
        Mesh::from_rest(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(0.0, 0.0, 0.5),
                Point3::new(1.0, 0.2, 0.5),
                Point3::new(0.2, 1.0, 0.5),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap()
    }

    #[test]
    fn labels_follow_decoded_geometry() {
        let m = rest();
        let d = DomainMap::single(6, 1);
        let cfg = OracleConfig { margin: 2.0 };
        let s = label_latent(&[0.0], &Shift, &m, &d, cfg).unwrap();
        assert!(!s.label && s.pd < 0.0);
        let again = label_latent(&[0.0], &Shift, &m, &d, cfg).unwrap();
        assert_eq!(s, again);
        assert!(label_latent(&[0.0, 1.0], &Shift, &m, &d, cfg).is_err());
    }
}
