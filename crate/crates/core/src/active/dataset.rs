use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ActiveError;
use crate::geom::CollisionSample;

/// Three-way split of labeled samples by penetration depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Subset {
    Positive,
    Negative,
    Boundary,
}

/// Positive iff `pd > eps`, negative iff `pd < 0`, boundary otherwise.
pub fn partition(pd: f64, eps: f64) -> Subset {
    if pd > eps {
        Subset::Positive
    } else if pd < 0.0 {
        Subset::Negative
    } else {
        Subset::Boundary
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    Bootstrap,
    Projected,
    Uniform,
}

impl Origin {
    fn code(self) -> u8 {
        match self {
            Origin::Bootstrap => 0,
            Origin::Projected => 1,
            Origin::Uniform => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        [Origin::Bootstrap, Origin::Projected, Origin::Uniform].get(c as usize).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub sample: CollisionSample,
    /// In the 80% training split (otherwise validation).
    pub train: bool,
    pub origin: Origin,
    pub iteration: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetCounts {
    pub positive: usize,
    pub negative: usize,
    pub boundary: usize,
}

impl SubsetCounts {
    pub fn total(&self) -> usize {
        self.positive + self.negative + self.boundary
    }
}

/// Append-only labeled dataset with a fixed train/validation split.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionDataset {
    pub entries: Vec<Entry>,
    pub eps: f64,
    pub train_fraction: f64,
}

const MAGIC: &[u8; 4] = b"SCDS";

impl CollisionDataset {
    pub fn new(eps: f64) -> Self {
        CollisionDataset {
            entries: Vec::new(),
            eps,
            train_fraction: 0.8,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends a batch; `round(train_fraction * n)` of it, chosen at random,
    /// joins the training split.
    pub fn extend(&mut self, samples: Vec<CollisionSample>, origin: Origin, iteration: usize, rng: &mut impl Rng) {
        let n = samples.len();
        let n_train = (self.train_fraction * n as f64).round() as usize;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let mut is_train = vec![false; n];
        for &i in &idx[..n_train] {
            is_train[i] = true;
        }
        self.entries
            .extend(samples.into_iter().zip(is_train).map(|(sample, train)| Entry {
                sample,
                train,
                origin,
                iteration,
            }));
    }

    pub fn subset(&self, s: &CollisionSample) -> Subset {
        partition(s.pd, self.eps)
    }

    pub fn counts(&self) -> SubsetCounts {
        let mut c = SubsetCounts::default();
        for e in &self.entries {
            match self.subset(&e.sample) {
                Subset::Positive => c.positive += 1,
                Subset::Negative => c.negative += 1,
                Subset::Boundary => c.boundary += 1,
            }
        }
        c
    }

    pub fn train(&self) -> Vec<&CollisionSample> {
        self.entries.iter().filter(|e| e.train).map(|e| &e.sample).collect()
    }

    pub fn validation(&self) -> Vec<&CollisionSample> {
        self.entries.iter().filter(|e| !e.train).map(|e| &e.sample).collect()
    }

    pub fn codes(&self) -> Vec<&[f64]> {
        self.entries.iter().map(|e| e.sample.z.as_slice()).collect()
    }

    /// Writes `<stem>.bin` (samples) and `<stem>.json` (summary).
    pub fn save(&self, dir: &Path, stem: &str, extra: serde_json::Value) -> Result<(), ActiveError> {
        let dim = self.entries.first().map_or(0, |e| e.sample.z.len());
        let k = self.entries.first().map_or(0, |e| e.sample.pd_per_domain.len());
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
        buf.extend_from_slice(&(k as u32).to_le_bytes());
        for e in &self.entries {
            for v in e.sample.z.iter().chain([&e.sample.pd]).chain(&e.sample.pd_per_domain) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            buf.extend_from_slice(&[u8::from(e.sample.label), u8::from(e.train), e.origin.code()]);
            buf.extend_from_slice(&(e.iteration as u32).to_le_bytes());
        }
        fs::File::create(dir.join(format!("{stem}.bin")))?.write_all(&buf)?;
        let manifest = serde_json::json!({
            "count": self.entries.len(),
            "latent_dim": dim,
            "num_domains": k,
            "eps": self.eps,
            "train_fraction": self.train_fraction,
            "subsets": self.counts(),
            "extra": extra,
        });
        fs::write(
            dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&manifest).expect("json"),
        )?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self, ActiveError> {
        let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.json")))?)
            .map_err(|e| ActiveError::Format(e.to_string()))?;
        let mut bytes = Vec::new();
        fs::File::open(dir.join(format!("{stem}.bin")))?.read_to_end(&mut bytes)?;
        let bad = |m: &str| ActiveError::Format(m.to_string());
        if bytes.len() < 24 || &bytes[0..4] != MAGIC {
            return Err(bad("not a sample file"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        if u32_at(4) != 1 {
            return Err(bad("unsupported version"));
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let (dim, k) = (u32_at(16) as usize, u32_at(20) as usize);
        let rec = 8 * (dim + 1 + k) + 3 + 4;
        if bytes.len() != 24 + n * rec {
            return Err(bad("truncated sample file"));
        }
        let mut entries = Vec::with_capacity(n);
        for r in bytes[24..].chunks_exact(rec) {
            let f: Vec<f64> = r[..8 * (dim + 1 + k)]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let tail = &r[8 * (dim + 1 + k)..];
            entries.push(Entry {
                sample: CollisionSample {
                    z: f[..dim].to_vec(),
                    pd: f[dim],
                    pd_per_domain: f[dim + 1..].to_vec(),
                    label: tail[0] != 0,
                },
                train: tail[1] != 0,
                origin: Origin::from_code(tail[2]).ok_or_else(|| bad("unknown origin"))?,
                iteration: u32::from_le_bytes(tail[3..7].try_into().unwrap()) as usize,
            });
        }
        Ok(CollisionDataset {
            entries,
            eps: manifest["eps"].as_f64().ok_or_else(|| bad("manifest lacks eps"))?,
            train_fraction: manifest["train_fraction"].as_f64().unwrap_or(0.8),
        })
    }
}
