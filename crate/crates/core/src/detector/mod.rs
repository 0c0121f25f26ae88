//! Neural collision detector over flat latent codes.
//!
//! `S0 = CSE(Z_all)` summarizes the global state, one shared predictor gives
//! `S_i = CP(S0, Z_i)` per sub-domain, and `MLP_c(S_1..S_K)` yields a logit
//! whose sigmoid is the collision probability. Inputs are mapped to `[-1, 1]`
//! with the latent box fixed at construction.

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Activation, Checkpoint, Gradients, Mlp, NnError, NodeId, ParamLayout, Tape};

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("latent code has length {got}, detector expects {expected}")]
    LatentDim { got: usize, expected: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub cse_width: usize,
    /// Length of the global state `S0`.
    pub state_dim: usize,
    pub cp_width: usize,
    pub classifier_width: usize,
    pub celu_alpha: f64,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            cse_width: 64,
            state_dim: 16,
            cp_width: 32,
            classifier_width: 32,
            celu_alpha: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    pub num_domains: usize,
    pub sub_dim: usize,
    pub layout: ParamLayout,
    pub params: Vec<f64>,
    cse: Mlp,
    cp: Mlp,
    classifier: Mlp,
    /// Box center and reciprocal half-widths used to normalize inputs.
    center: Vec<f64>,
    inv_half: Vec<f64>,
    /// Penetration depths are regressed in units of this scale.
    pub pd_scale: f64,
}

/// Tape nodes of a detector pass.
#[derive(Debug, Clone, Copy)]
pub struct DetectorNodes {
    pub input: NodeId,
    /// `B x K` local predictions `S_i`.
    pub s: NodeId,
    pub logit: NodeId,
    pub prob: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorOutput {
    pub prob: Vec<f64>,
    pub logit: Vec<f64>,
    pub s: Array2<f64>,
}

impl DetectorOutput {
    /// Predicted collision flags, `prob >= 0.5`.
    pub fn labels(&self) -> Vec<bool> {
        self.prob.iter().map(|&p| p >= 0.5).collect()
    }
}

/// Number of detector parameters for the given sizes.
pub fn detector_param_count(num_domains: usize, sub_dim: usize, cfg: &DetectorConfig) -> usize {
    let lo = vec![0.0; num_domains * (1 + sub_dim)];
    Detector::new(num_domains, sub_dim, &lo, &lo, cfg).num_params()
}

impl Detector {
    /// Fresh detector for latent codes inside the box `[lo, hi]`.
    pub fn new(num_domains: usize, sub_dim: usize, lo: &[f64], hi: &[f64], cfg: &DetectorConfig) -> Self {
        let dim = num_domains * (1 + sub_dim);
        assert_eq!(lo.len(), dim, "box dimension");
        assert_eq!(hi.len(), dim, "box dimension");
        let celu = Activation::Celu(cfg.celu_alpha);
        let mut layout = ParamLayout::new();
        let cse = Mlp::new(
            &mut layout,
            "cse",
            &[dim, cfg.cse_width, cfg.cse_width, cfg.state_dim],
            celu,
            Activation::Tanh,
        );
        let cp = Mlp::new(
            &mut layout,
            "cp",
            &[cfg.state_dim + sub_dim, cfg.cp_width, cfg.cp_width, 1],
            Activation::Tanh,
            Activation::Identity,
        );
        let classifier = Mlp::new(
            &mut layout,
            "classifier",
            &[num_domains, cfg.classifier_width, cfg.classifier_width, 1],
            celu,
            Activation::Identity,
        );
        let mut params = vec![0.0; layout.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for net in [&cse, &cp, &classifier] {
            net.init(&mut params, &mut rng);
        }
        let center = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let inv_half = lo
            .iter()
            .zip(hi)
            .map(|(a, b)| {
                let h = 0.5 * (b - a);
                if h > 1e-12 {
                    1.0 / h
                } else {
                    1.0
                }
            })
            .collect();
        Detector {
            num_domains,
            sub_dim,
            layout,
            params,
            cse,
            cp,
            classifier,
            center,
            inv_half,
            pd_scale: 1.0,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.num_domains * (1 + self.sub_dim)
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Offsets of the shared local-predictor block; one per detector.
    pub fn cp_block(&self) -> (usize, usize) {
        let first = &self.cp.layers[0];
        (first.w, self.cp.num_params())
    }

    pub fn classifier(&self) -> &Mlp {
        &self.classifier
    }

    fn check(&self, z: &Array2<f64>) -> Result<(), DetectorError> {
        if z.ncols() != self.latent_dim() {
            return Err(DetectorError::LatentDim {
                got: z.ncols(),
                expected: self.latent_dim(),
            });
        }
        Ok(())
    }

    /// Maps latent rows into the normalized input space.
    pub fn normalize(&self, z: &Array2<f64>) -> Array2<f64> {
        let mut x = z.clone();
        for mut row in x.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.center[j]) * self.inv_half[j];
            }
        }
        x
    }

    /// Converts a gradient w.r.t. normalized inputs into one w.r.t. `z`.
    pub fn denormalize_grad(&self, gx: &Array2<f64>) -> Array2<f64> {
        let mut g = gx.clone();
        for mut row in g.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v *= self.inv_half[j];
            }
        }
        g
    }

    /// Records the detector on `tape` (which must borrow `self.params`).
    pub fn graph(&self, tape: &mut Tape, z: &Array2<f64>) -> DetectorNodes {
        let input = tape.input(self.normalize(z));
        let s0 = self.cse.forward(tape, input);
        let k = self.num_domains;
        // the shared CP runs once over all domains stacked as row blocks
        let blocks: Vec<NodeId> = (0..k)
            .map(|i| {
                let zi = tape.slice_cols(input, k + i * self.sub_dim, self.sub_dim);
                tape.concat(&[s0, zi])
            })
            .collect();
        let stacked = tape.concat_rows(&blocks);
        let local = self.cp.forward(tape, stacked);
        let s = tape.fold_rows(local, k);
        let logit = self.classifier.forward(tape, s);
        let prob = tape.sigmoid(logit);
        DetectorNodes { input, s, logit, prob }
    }

    pub fn forward(&self, z: &Array2<f64>) -> Result<DetectorOutput, DetectorError> {
        self.check(z)?;
        let mut out = DetectorOutput {
            prob: Vec::with_capacity(z.nrows()),
            logit: Vec::with_capacity(z.nrows()),
            s: Array2::zeros((0, self.num_domains)),
        };
        let mut s_parts = Vec::new();
        for chunk in z.axis_chunks_iter(Axis(0), 2048) {
            let mut t = Tape::new(&self.params);
            let n = self.graph(&mut t, &chunk.to_owned());
            t.check_finite()?;
            out.prob.extend(t.value(n.prob).iter());
            out.logit.extend(t.value(n.logit).iter());
            s_parts.push(t.value(n.s).clone());
        }
        if !s_parts.is_empty() {
            let views: Vec<_> = s_parts.iter().map(|a| a.view()).collect();
            out.s = ndarray::concatenate(Axis(0), &views).expect("same width");
        }
        Ok(out)
    }

    /// Probabilities for latent rows given as vectors.
    pub fn probs(&self, zs: &[Vec<f64>]) -> Result<Vec<f64>, DetectorError> {
        if zs.is_empty() {
            return Ok(Vec::new());
        }
        Ok(self.forward(&rows(zs, self.latent_dim())?)?.prob)
    }

    /// Collision probability and its gradient w.r.t. each latent row.
    pub fn prob_grad(&self, z: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>), DetectorError> {
        self.check(z)?;
        let mut t = Tape::new(&self.params);
        let n = self.graph(&mut t, z);
        let prob = t.value(n.prob).iter().copied().collect();
        let g: Gradients = t.input_gradients(&[(n.prob, Array2::ones((z.nrows(), 1)))])?;
        let gx = g
            .wrt(n.input)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(z.dim()));
        Ok((prob, self.denormalize_grad(&gx)))
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

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self, DetectorError> {
        let mut meta = ckpt.meta;
        let obj = meta
            .as_object_mut()
            .ok_or_else(|| NnError::Checkpoint("detector metadata missing".into()))?;
        obj.insert("params".into(), serde_json::Value::Array(Vec::new()));
        obj.insert("layout".into(), serde_json::to_value(&ckpt.layout).expect("layout"));
        let mut det: Detector = serde_json::from_value(meta).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        if ckpt.params.len() != det.layout.len() {
            return Err(NnError::Checkpoint("parameter count does not match layout".into()).into());
        }
        det.params = ckpt.params;
        Ok(det)
    }
}

/// Stacks equal-length vectors into a matrix.
pub fn rows(zs: &[Vec<f64>], dim: usize) -> Result<Array2<f64>, DetectorError> {
    if let Some(z) = zs.iter().find(|z| z.len() != dim) {
        return Err(DetectorError::LatentDim {
            got: z.len(),
            expected: dim,
        });
    }
    let flat: Vec<f64> = zs.iter().flatten().copied().collect();
    Ok(Array2::from_shape_vec((zs.len(), dim), flat).expect("row-major"))
}
