//! Experiment configuration, read from and written to TOML.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use selfcol::active::{LossWeights, ProjectionConfig, TrainSchedule};
use selfcol::autoencoder::AeConfig;
use selfcol::datagen::PoseFamily;
use selfcol::detector::DetectorConfig;
use selfcol::handler::AlmConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "active+bd")]
    ActiveBd,
    #[serde(rename = "supv+bd")]
    SupvBd,
    #[serde(rename = "supv")]
    Supv,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::ActiveBd, Method::SupvBd, Method::Supv];

    pub fn name(self) -> &'static str {
        match self {
            Method::ActiveBd => "active+bd",
            Method::SupvBd => "supv+bd",
            Method::Supv => "supv",
        }
    }

    /// Directory-safe name.
    pub fn slug(self) -> &'static str {
        match self {
            Method::ActiveBd => "active_bd",
            Method::SupvBd => "supv_bd",
            Method::Supv => "supv",
        }
    }

    /// Whether the boundary subset and boundary loss are used.
    pub fn boundary(self) -> bool {
        self != Method::Supv
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s || m.slug() == s)
            .ok_or_else(|| format!("unknown method {s:?} (expected active+bd, supv+bd or supv)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    TwoLinkArm,
    ThreeLinkChain,
}

impl Family {
    pub fn build(self) -> PoseFamily {
        match self {
            Family::TwoLinkArm => PoseFamily::two_link_arm(),
            Family::ThreeLinkChain => PoseFamily::three_link_chain(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// `|z - z_user|^2 / 2`.
    Latent,
    /// `|V(z) - V_user|^2 / 2` through the decoder.
    Cartesian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub family: Family,
    /// Posed meshes synthesized; the collision-free ones train the autoencoder.
    pub n_meshes: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            family: Family::TwoLinkArm,
            n_meshes: 600,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActiveConfig {
    /// Boundary threshold on penetration depth.
    pub eps: f64,
    pub n_init: usize,
    pub n_aug: usize,
    /// Aggregation rounds `k`.
    pub iterations: usize,
    /// Candidate bootstrap sizes; when non-empty the elbow of accuracy vs.
    /// size replaces `n_init`.
    pub init_growth: Vec<usize>,
    pub bootstrap: TrainSchedule,
    pub fine_tune: TrainSchedule,
}

impl Default for ActiveConfig {
    fn default() -> Self {
        ActiveConfig {
            eps: 1e-4,
            n_init: 2000,
            n_aug: 500,
            iterations: 4,
            init_growth: Vec::new(),
            bootstrap: TrainSchedule::bootstrap(),
            fine_tune: TrainSchedule::fine_tune(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub n_test: usize,
    /// Penetrating user codes handed to the collision handler per checkpoint.
    pub n_handle: usize,
    pub objective: Objective,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_test: 20_000,
            n_handle: 200,
            objective: Objective::Latent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub dataset: DatasetConfig,
    pub autoencoder: AeConfig,
    pub detector: DetectorConfig,
    pub loss: LossWeights,
    pub active: ActiveConfig,
    pub projection: ProjectionConfig,
    pub eval: EvalConfig,
    pub alm: AlmConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::desk()
    }
}

impl ExperimentConfig {
    /// Laptop-scale defaults.
    pub fn desk() -> Self {
        ExperimentConfig {
            seeds: (0..5).collect(),
            methods: Method::ALL.to_vec(),
            dataset: DatasetConfig::default(),
            autoencoder: AeConfig {
                epochs: 100,
                ..AeConfig::default()
            },
            detector: DetectorConfig::default(),
            loss: LossWeights::default(),
            active: ActiveConfig::default(),
            projection: ProjectionConfig::default(),
            eval: EvalConfig::default(),
            alm: AlmConfig::default(),
        }
    }

    /// Full-size sample counts for one of the original datasets (`scape`,
    /// `swing`, `jump`, `skirt`, `hand`); everything else as in `desk`.
    pub fn full_scale(dataset: &str) -> Result<Self, ConfigError> {
        let (n_init, n_aug) = match dataset {
            "scape" | "hand" => (200_000, 50_000),
            "swing" | "jump" => (10_000, 5_000),
            "skirt" => (5_000, 5_000),
            other => return Err(ConfigError::Invalid(format!("no full-scale profile named {other:?}"))),
        };
        let mut cfg = ExperimentConfig::desk();
        cfg.autoencoder.epochs = 3000;
        cfg.active.n_init = n_init;
        cfg.active.n_aug = n_aug;
        cfg.eval.n_test = 750_000;
        cfg.eval.n_handle = 10_000;
        Ok(cfg)
    }

    /// A profile by name: `desk` or `full-<dataset>`.
    pub fn profile(name: &str) -> Result<Self, ConfigError> {
        match name {
            "desk" => Ok(ExperimentConfig::desk()),
            _ => match name.strip_prefix("full-") {
                Some(d) => ExperimentConfig::full_scale(d),
                None => Err(ConfigError::Invalid(format!("unknown profile {name:?}"))),
            },
        }
    }

    /// Keys missing from `text`, at any depth, keep their desk values.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let user: toml::Table = text.parse()?;
        let mut merged = toml::Table::try_from(ExperimentConfig::desk()).expect("config is serializable");
        overlay(&mut merged, user);
        let cfg: ExperimentConfig = toml::Value::Table(merged).try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        ExperimentConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return bad("methods must not repeat".into());
        }
        let a = &self.active;
        if !(a.eps > 0.0 && a.eps.is_finite()) {
            return bad(format!("active.eps must be positive, got {}", a.eps));
        }
        if a.n_init < 2 {
            return bad("active.n_init must be at least 2".into());
        }
        if a.iterations > 0 && a.n_aug < 2 {
            return bad("active.n_aug must be at least 2 when iterations > 0".into());
        }
        if a.init_growth.windows(2).any(|w| w[0] >= w[1]) || (!a.init_growth.is_empty() && a.init_growth.len() < 3) {
            return bad("active.init_growth needs at least 3 increasing sizes".into());
        }
        for (name, s) in [("bootstrap", &a.bootstrap), ("fine_tune", &a.fine_tune)] {
            if !(s.lr > 0.0) || s.batch_size == 0 {
                return bad(format!("active.{name}: lr must be positive and batch_size nonzero"));
            }
        }
        self.loss.validate().map_err(ConfigError::Invalid)?;
        let ae = &self.autoencoder;
        if ae.num_domains == 0 || ae.sub_dim == 0 || ae.width == 0 || ae.batch_size == 0 {
            return bad("autoencoder sizes must be nonzero".into());
        }
        if !(ae.lr > 0.0) || ae.sparsity < 0.0 {
            return bad("autoencoder.lr must be positive and sparsity non-negative".into());
        }
        if self.dataset.n_meshes < 2 {
            return bad("dataset.n_meshes must be at least 2".into());
        }
        let d = &self.detector;
        if d.cse_width == 0 || d.state_dim == 0 || d.cp_width == 0 || d.classifier_width == 0 || !(d.celu_alpha > 0.0) {
            return bad("detector widths and celu_alpha must be positive".into());
        }
        if !(self.projection.eps_z > 0.0) || self.projection.max_iter == 0 {
            return bad("projection.eps_z and max_iter must be positive".into());
        }
        if self.eval.n_test == 0 {
            return bad("eval.n_test must be positive".into());
        }
        let alm = &self.alm;
        if !(alm.rho_init > 0.0) || alm.rho_factor < 1.0 || alm.rho_max < alm.rho_init || alm.max_outer == 0 {
            return bad("alm: need rho_init > 0, rho_factor >= 1, rho_max >= rho_init, max_outer > 0".into());
        }
        Ok(())
    }

    /// Labels consumed by any method once all `iterations` rounds ran.
    pub fn label_budget(&self) -> usize {
        self.active.n_init + self.active.iterations * self.active.n_aug
    }
}

fn overlay(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => overlay(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
