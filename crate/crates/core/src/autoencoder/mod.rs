//! Bilevel mesh autoencoder.
//!
//! The level-1 code `Z0` has one axis per sub-domain. A learnable attention
//! matrix softly assigns vertices to domains; each level-2 code `Z_i` encodes
//! the attention-masked residual left over by the level-1 decoder. Decoding is
//! an explicit sum: `D0(Z0) + sum_i mask_i * D_i([Z_i, Z0_i])`.

mod train;

use nalgebra::Point3;
use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{DomainMap, LatentDecoder};
use crate::mesh::{FeatureVector, Mesh, MeshError};
use crate::nn::{Activation, Checkpoint, Mlp, NnError, NodeId, ParamLayout, Tape};

pub use train::{reconstruction_report, train_autoencoder, ReconstructionReport, TrainLog};

#[derive(Debug, Error)]
pub enum AeError {
    #[error("latent code has length {got}, expected {expected}")]
    LatentDim { got: usize, expected: usize },
    #[error("feature vector has length {got}, expected {expected}")]
    FeatureDim { got: usize, expected: usize },
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },
    #[error("invalid training set: {0}")]
    Dataset(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AeConfig {
    /// `|Z0|`, the number of sub-domains.
    pub num_domains: usize,
    /// Length of each level-2 code.
    pub sub_dim: usize,
    pub width: usize,
    pub sparsity: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for AeConfig {
    fn default() -> Self {
        AeConfig {
            num_domains: 8,
            sub_dim: 4,
            width: 128,
            sparsity: 0.01,
            lr: 0.01,
            batch_size: 128,
            epochs: 300,
            seed: 0,
        }
    }
}

/// Structured view of a flat latent vector `[Z0, Z1, ..., ZK]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    pub z0: Vec<f64>,
    pub sub: Vec<Vec<f64>>,
}

impl LatentCode {
    pub fn from_flat(flat: &[f64], num_domains: usize, sub_dim: usize) -> Result<Self, AeError> {
        let expected = num_domains * (1 + sub_dim);
        if flat.len() != expected {
            return Err(AeError::LatentDim {
                got: flat.len(),
                expected,
            });
        }
        let (z0, rest) = flat.split_at(num_domains);
        Ok(LatentCode {
            z0: z0.to_vec(),
            sub: rest.chunks(sub_dim.max(1)).take(num_domains).map(<[f64]>::to_vec).collect(),
        })
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = self.z0.clone();
        for s in &self.sub {
            out.extend_from_slice(s);
        }
        out
    }
}

/// Argmax per attention row (1-based), ties to the lowest domain.
pub fn domain_map(attention: &Array2<f64>) -> DomainMap {
    let domain_of = attention
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &a) in row.iter().enumerate() {
                if a > row[best] {
                    best = j;
                }
            }
            best + 1
        })
        .collect();
    DomainMap {
        domain_of,
        num_domains: attention.ncols(),
    }
}

/// Mean Shannon entropy (nats) of the attention rows.
pub fn mean_row_entropy(attention: &Array2<f64>) -> f64 {
    let total: f64 = attention
        .iter()
        .map(|&a| if a > 0.0 { -a * a.ln() } else { 0.0 })
        .sum();
    total / attention.nrows() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Autoencoder {
    pub num_vertices: usize,
    pub num_domains: usize,
    pub sub_dim: usize,
    /// Features are divided by this before encoding and multiplied back after
    /// decoding.
    pub feature_scale: f64,
    pub layout: ParamLayout,
    pub params: Vec<f64>,
    e0: Mlp,
    e_sub: Vec<Mlp>,
    d0: Mlp,
    d_sub: Vec<Mlp>,
    attn: usize,
}

/// Tape nodes of one encode/decode pass, in normalized feature units.
pub(crate) struct Pass {
    pub attention: NodeId,
    pub level1: NodeId,
    pub output: NodeId,
}

fn farthest_point_seeds(points: &[Point3<f64>], k: usize) -> Vec<usize> {
    let mut seeds = vec![0];
    let mut dist: Vec<f64> = points.iter().map(|p| (p - points[0]).norm_squared()).collect();
    while seeds.len() < k.min(points.len()) {
        let mut next = 0;
        for (i, &d) in dist.iter().enumerate() {
            if d > dist[next] {
                next = i;
            }
        }
        seeds.push(next);
        for (i, p) in points.iter().enumerate() {
            dist[i] = dist[i].min((p - points[next]).norm_squared());
        }
    }
    seeds
}

impl Autoencoder {
    /// Freshly initialized network for meshes sharing `rest`'s topology.
    ///
    /// Attention logits start from a spatial soft clustering of the rest pose
    /// around farthest-point seeds; training is free to move them.
    pub fn new(rest: &Mesh, cfg: &AeConfig, feature_scale: f64) -> Self {
        let n = rest.num_vertices();
        let (k, l2, w) = (cfg.num_domains, cfg.sub_dim, cfg.width);
        let f = 3 * n;
        let mut layout = ParamLayout::new();
        let h = Activation::Tanh;
        let id = Activation::Identity;
        let e0 = Mlp::new(&mut layout, "enc0", &[f, w, w, k], h, id);
        let e_sub = (1..=k)
            .map(|i| Mlp::new(&mut layout, &format!("enc{i}"), &[f, w, w, l2], h, id))
            .collect();
        let d0 = Mlp::new(&mut layout, "dec0", &[k, w, w, f], h, id);
        let d_sub = (1..=k)
            .map(|i| Mlp::new(&mut layout, &format!("dec{i}"), &[l2 + 1, w, w, f], h, id))
            .collect();
        let attn = layout.alloc("attention.logits", &[n, k]);
        let mut ae = Autoencoder {
            num_vertices: n,
            num_domains: k,
            sub_dim: l2,
            feature_scale: feature_scale.max(1e-12),
            params: vec![0.0; layout.len()],
            layout,
            e0,
            e_sub,
            d0,
            d_sub,
            attn,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let nets: Vec<Mlp> = std::iter::once(&ae.e0)
            .chain(&ae.e_sub)
            .chain(std::iter::once(&ae.d0))
            .chain(&ae.d_sub)
            .cloned()
            .collect();
        for net in &nets {
            net.init(&mut ae.params, &mut rng);
        }
        let seeds = farthest_point_seeds(&rest.rest, k);
        let sigma = crate::mesh::bbox_diagonal(&rest.rest).max(1e-12) / k as f64;
        for (v, p) in rest.rest.iter().enumerate() {
            for j in 0..k {
                let c = &rest.rest[seeds[j.min(seeds.len() - 1)]];
                let d2 = (p - c).norm_squared();
                ae.params[attn + v * k + j] = -d2 / (2.0 * sigma * sigma) + rng.random_range(-1e-3..1e-3);
            }
        }
        ae
    }

    pub fn latent_dim(&self) -> usize {
        self.num_domains * (1 + self.sub_dim)
    }

    pub fn feature_dim(&self) -> usize {
        3 * self.num_vertices
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Row-stochastic `V x K` attention matrix.
    pub fn attention(&self) -> Array2<f64> {
        let mut t = Tape::new(&self.params);
        let a = self.attention_node(&mut t);
        t.value(a).clone()
    }

    pub fn domain_map(&self) -> DomainMap {
        domain_map(&self.attention())
    }

    pub(crate) fn attention_node(&self, tape: &mut Tape) -> NodeId {
        let logits = tape.param(self.attn, self.num_vertices, self.num_domains);
        tape.softmax_rows(logits)
    }

    fn masks(&self, tape: &mut Tape, attention: NodeId) -> Vec<NodeId> {
        (0..self.num_domains).map(|i| tape.expand_column(attention, i, 3)).collect()
    }

    /// Level-1 and full decoder outputs (normalized units) from split codes.
    fn decode_parts(
        &self,
        tape: &mut Tape,
        z0: NodeId,
        subs: &[NodeId],
        masks: &[NodeId],
        level1: Option<NodeId>,
    ) -> (NodeId, Vec<NodeId>) {
        let d0 = level1.unwrap_or_else(|| self.d0.forward(tape, z0));
        let mut terms = vec![d0];
        for i in 0..self.num_domains {
            let z0i = tape.slice_cols(z0, i, 1);
            let inp = tape.concat(&[subs[i], z0i]);
            let di = self.d_sub[i].forward(tape, inp);
            terms.push(tape.mul_row(di, masks[i]));
        }
        (d0, terms)
    }

    fn split_latent(&self, tape: &mut Tape, z: NodeId) -> (NodeId, Vec<NodeId>) {
        let k = self.num_domains;
        let z0 = tape.slice_cols(z, 0, k);
        let subs = (0..k).map(|i| tape.slice_cols(z, k + i * self.sub_dim, self.sub_dim)).collect();
        (z0, subs)
    }

    fn sum(tape: &mut Tape, terms: &[NodeId]) -> NodeId {
        terms[1..].iter().fold(terms[0], |acc, &t| tape.add(acc, t))
    }

    /// Decoder on a tape: latent rows -> features (physical units).
    pub fn decode_on_tape(&self, tape: &mut Tape, z: NodeId) -> NodeId {
        let attention = self.attention_node(tape);
        let masks = self.masks(tape, attention);
        let (z0, subs) = self.split_latent(tape, z);
        let (_, terms) = self.decode_parts(tape, z0, &subs, &masks, None);
        let out = Self::sum(tape, &terms);
        tape.scale(out, self.feature_scale)
    }

    /// Encoder on a tape: features (physical units) -> latent rows.
    pub fn encode_on_tape(&self, tape: &mut Tape, f: NodeId) -> NodeId {
        let attention = self.attention_node(tape);
        let masks = self.masks(tape, attention);
        let fin = tape.scale(f, 1.0 / self.feature_scale);
        self.encode_inner(tape, fin, &masks).0
    }

    fn encode_inner(&self, tape: &mut Tape, fin: NodeId, masks: &[NodeId]) -> (NodeId, NodeId, Vec<NodeId>, NodeId) {
        let z0 = self.e0.forward(tape, fin);
        let d0 = self.d0.forward(tape, z0);
        let resid = tape.sub(fin, d0);
        let subs: Vec<NodeId> = (0..self.num_domains)
            .map(|i| {
                let masked = tape.mul_row(resid, masks[i]);
                self.e_sub[i].forward(tape, masked)
            })
            .collect();
        let mut parts = vec![z0];
        parts.extend_from_slice(&subs);
        let latent = tape.concat(&parts);
        (latent, z0, subs, d0)
    }

    /// Full encode + decode pass on normalized features, used for training.
    pub(crate) fn autoencode(&self, tape: &mut Tape, fin: NodeId) -> Pass {
        let attention = self.attention_node(tape);
        let masks = self.masks(tape, attention);
        let (_, z0, subs, d0) = self.encode_inner(tape, fin, &masks);
        let (level1, terms) = self.decode_parts(tape, z0, &subs, &masks, Some(d0));
        let output = Self::sum(tape, &terms);
        Pass {
            attention,

            level1,
            output,
        }
    }

    fn check_cols(&self, m: &Array2<f64>, expected: usize, latent: bool) -> Result<(), AeError> {
        if m.ncols() == expected {
            Ok(())
        } else if latent {
            Err(AeError::LatentDim {
                got: m.ncols(),
                expected,
            })
        } else {
            Err(AeError::FeatureDim {
                got: m.ncols(),
                expected,
            })
        }
    }

    pub fn encode_rows(&self, f: &Array2<f64>) -> Result<Array2<f64>, AeError> {
        self.check_cols(f, self.feature_dim(), false)?;
        let mut t = Tape::new(&self.params);
        let x = t.input(f.clone());
        let z = self.encode_on_tape(&mut t, x);
        t.check_finite()?;
        Ok(t.value(z).clone())
    }

    pub fn decode_batch(&self, z: &Array2<f64>) -> Result<Array2<f64>, AeError> {
        self.check_cols(z, self.latent_dim(), true)?;
        let mut t = Tape::new(&self.params);
        let x = t.input(z.clone());
        let y = self.decode_on_tape(&mut t, x);
        t.check_finite()?;
        Ok(t.value(y).clone())
    }

    /// The `K + 1` decoder terms in normalized units, level-1 first.
    /// `decode = feature_scale * (((t0 + t1) + t2) + ...)`.
    pub fn decode_terms(&self, z: &Array2<f64>) -> Result<Vec<Array2<f64>>, AeError> {
        self.check_cols(z, self.latent_dim(), true)?;
        let mut t = Tape::new(&self.params);
        let x = t.input(z.clone());
        let attention = self.attention_node(&mut t);
        let masks = self.masks(&mut t, attention);
        let (z0, subs) = self.split_latent(&mut t, x);
        let (_, terms) = self.decode_parts(&mut t, z0, &subs, &masks, None);
        Ok(terms.iter().map(|&n| t.value(n).clone()).collect())
    }

    pub fn encode(&self, f: &FeatureVector) -> Result<LatentCode, AeError> {
        let m = Array2::from_shape_vec((1, f.len()), f.0.clone()).map_err(|_| AeError::FeatureDim {
            got: f.len(),
            expected: self.feature_dim(),
        })?;
        let z = self.encode_rows(&m)?;
        LatentCode::from_flat(z.row(0).as_slice().unwrap(), self.num_domains, self.sub_dim)
    }

    pub fn decode(&self, z: &LatentCode) -> Result<FeatureVector, AeError> {
        let flat = z.flat();
        let m = Array2::from_shape_vec((1, flat.len()), flat).expect("row");
        let f = self.decode_batch(&m)?;
        Ok(FeatureVector(f.row(0).to_vec()))
    }

    /// Encodes many feature vectors as latent rows.
    pub fn encode_all(&self, features: &[FeatureVector]) -> Result<Vec<Vec<f64>>, AeError> {
        let mut out = Vec::with_capacity(features.len());
        for chunk in features.chunks(256) {
            let flat: Vec<f64> = chunk.iter().flat_map(|f| f.0.iter().copied()).collect();
            let m = Array2::from_shape_vec((chunk.len(), self.feature_dim()), flat).map_err(|_| {
                AeError::FeatureDim {
                    got: chunk[0].len(),
                    expected: self.feature_dim(),
                }
            })?;
            out.extend(self.encode_rows(&m)?.axis_iter(Axis(0)).map(|r| r.to_vec()));
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut meta = serde_json::to_value(self).expect("serializable");
        if let Some(obj) = meta.as_object_mut() {
            obj.remove("params");
            obj.remove("layout");
        }
        Checkpoint {
            layout: self.layout.clone(),
            params: self.params.clone(),
            meta,
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self, AeError> {
        let mut meta = ckpt.meta;
        let obj = meta
            .as_object_mut()
            .ok_or_else(|| NnError::Checkpoint("autoencoder metadata missing".into()))?;
        obj.insert("params".into(), serde_json::Value::Array(Vec::new()));
        obj.insert("layout".into(), serde_json::to_value(&ckpt.layout).expect("layout"));
        let mut ae: Autoencoder = serde_json::from_value(meta).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        if ckpt.params.len() != ae.layout.len() {
            return Err(NnError::Checkpoint("parameter count does not match layout".into()).into());
        }
        ae.params = ckpt.params;
        Ok(ae)
    }
}

impl LatentDecoder for Autoencoder {
    fn latent_dim(&self) -> usize {
        Autoencoder::latent_dim(self)
    }

    fn feature_dim(&self) -> usize {
        Autoencoder::feature_dim(self)
    }

    fn decode_rows(&self, z: &Array2<f64>) -> Result<Array2<f64>, NnError> {
        self.decode_batch(z).map_err(|e| match e {
            AeError::Nn(n) => n,
            AeError::LatentDim { got, expected } => NnError::ShapeMismatch {
                what: "latent code",
                expected,
                got,
            },
            other => NnError::Checkpoint(other.to_string()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn latent_code_flat_round_trip() {
        let flat: Vec<f64> = (0..15).map(f64::from).collect();
        let c = LatentCode::from_flat(&flat, 3, 4).unwrap();
        assert_eq!(c.z0, vec![0.0, 1.0, 2.0]);
        assert_eq!(c.sub[2], vec![11.0, 12.0, 13.0, 14.0]);
        assert_eq!(c.flat(), flat);
        assert!(LatentCode::from_flat(&flat[..14], 3, 4).is_err());
    }

    #[test]
    fn domain_map_tie_breaks_low() {
        let a = array![[0.0, 1.0, 0.0], [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], [0.2, 0.4, 0.4]];
        let d = domain_map(&a);
        assert_eq!(d.domain_of, vec![2, 1, 2]);
        assert_eq!(d.num_domains, 3);
    }

    #[test]
    fn entropy_of_one_hot_is_zero() {
        assert_eq!(mean_row_entropy(&array![[1.0, 0.0], [0.0, 1.0]]), 0.0);
        assert!((mean_row_entropy(&array![[0.5, 0.5]]) - 2f64.ln()).abs() < 1e-15);
    }
}
