//! Synthetic articulated meshes: closed capsule-link chains posed by
//! two-influence linear blend skinning.

use std::f64::consts::PI;

use nalgebra::{Isometry3, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{build_bvh, self_collide, DomainMap, GeomError, OracleConfig};
use crate::mesh::{validate_manifold, Mesh, MeshError};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("pose has {got} parameters, family expects {expected}")]
    PoseLength { got: usize, expected: usize },
    #[error("invalid family: {0}")]
    Family(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// Geometry of a straight capped tube along +x, split into equal links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeSpec {
    pub links: usize,
    pub link_length: f64,
    pub radius: f64,
    /// Vertices per ring.
    pub segments: usize,
    /// Body rings per link.
    pub rings_per_link: usize,
    /// Rings on each hemispherical cap, excluding the apex.
    pub cap_rings: usize,
    /// Half-width of the skinning blend zone around each joint.
    pub blend: f64,
}

impl TubeSpec {
    pub fn length(&self) -> f64 {
        self.links as f64 * self.link_length
    }

    /// Rest vertices and triangles (outward-facing).
    pub fn build(&self) -> (Vec<Point3<f64>>, Vec<[usize; 3]>) {
        let (r, seg) = (self.radius, self.segments);
        let len = self.length();
        let mut rings: Vec<(f64, f64)> = Vec::new();
        for c in 1..=self.cap_rings {
            let phi = PI / 2.0 * c as f64 / (self.cap_rings + 1) as f64;
            rings.push((-r * phi.cos(), r * phi.sin()));
        }
        let body = self.links * self.rings_per_link;
        for i in 0..=body {
            rings.push((len * i as f64 / body as f64, r));
        }
        for c in (1..=self.cap_rings).rev() {
            let phi = PI / 2.0 * c as f64 / (self.cap_rings + 1) as f64;
            rings.push((len + r * phi.cos(), r * phi.sin()));
        }
        let mut v = vec![Point3::new(-r, 0.0, 0.0)];
        for &(x, rad) in &rings {
            for s in 0..seg {
                let a = 2.0 * PI * s as f64 / seg as f64;
                v.push(Point3::new(x, rad * a.cos(), rad * a.sin()));
            }
        }
        v.push(Point3::new(len + r, 0.0, 0.0));
        let apex_end = v.len() - 1;
        let ring = |k: usize, s: usize| 1 + k * seg + s % seg;
        let mut t = Vec::new();
        for s in 0..seg {
            t.push([0, ring(0, s + 1), ring(0, s)]);
        }
        for k in 0..rings.len() - 1 {
            for s in 0..seg {
                let (a, b) = (ring(k, s), ring(k, s + 1));
                let (c, d) = (ring(k + 1, s), ring(k + 1, s + 1));
                t.push([a, b, d]);
                t.push([a, d, c]);
            }
        }
        let last = rings.len() - 1;
        for s in 0..seg {
            t.push([apex_end, ring(last, s), ring(last, s + 1)]);
        }
        (v, t)
    }
}

/// An articulated chain with two bend angles (about z, then y) per joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseFamily {
    pub name: String,
    pub tube: TubeSpec,
    /// Sampling interval per pose parameter, `[z-bend, y-bend]` per joint.
    pub ranges: Vec<(f64, f64)>,
    #[serde(skip)]
    rest: Option<Mesh>,
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

impl PoseFamily {
    pub fn new(name: &str, tube: TubeSpec, ranges: Vec<(f64, f64)>) -> Result<Self, DatagenError> {
        if tube.links < 2 || tube.segments < 3 || tube.rings_per_link < 1 {
            return Err(DatagenError::Family("need >= 2 links, >= 3 segments, >= 1 ring per link".into()));
        }
        if ranges.len() != 2 * (tube.links - 1) || ranges.iter().any(|r| !(r.0 <= r.1)) {
            return Err(DatagenError::Family(format!(
                "expected {} ordered ranges",
                2 * (tube.links - 1)
            )));
        }
        let (v, t) = tube.build();
        let rest = Mesh::from_rest(v, t)?;
        Ok(PoseFamily {
            name: name.into(),
            tube,
            ranges,
            rest: Some(rest),
        })
    }

    /// Two links, one 2-DOF joint; about 600 triangles.
    pub fn two_link_arm() -> Self {
        let tube = TubeSpec {
            links: 2,
            link_length: 1.0,
            radius: 0.16,
            segments: 12,
            rings_per_link: 11,
            cap_rings: 2,
            blend: 0.12,
        };
        Self::new("two-link-arm", tube, vec![(-2.9, 2.9), (-1.2, 1.2)]).expect("default family")
    }

    /// Three links, two 2-DOF joints; about 700 triangles.
    pub fn three_link_chain() -> Self {
        let tube = TubeSpec {
            links: 3,
            link_length: 0.8,
            radius: 0.13,
            segments: 10,
            rings_per_link: 10,
            cap_rings: 2,
            blend: 0.1,
        };
        Self::new(
            "three-link-chain",
            tube,
            vec![(-2.6, 2.6), (-1.0, 1.0), (-2.6, 2.6), (-1.0, 1.0)],
        )
        .expect("default family")
    }

    pub fn rest(&self) -> &Mesh {
        self.rest.as_ref().expect("rest mesh is built on construction")
    }

    pub fn num_params(&self) -> usize {
        self.ranges.len()
    }

    /// Per-link world transforms for a pose.
    fn link_transforms(&self, pose: &[f64]) -> Vec<Isometry3<f64>> {
        let mut out = vec![Isometry3::identity()];
        for j in 1..self.tube.links {
            let pivot = Vector3::new(j as f64 * self.tube.link_length, 0.0, 0.0);
            let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), pose[2 * (j - 1)])
                * Rotation3::from_axis_angle(&Vector3::y_axis(), pose[2 * (j - 1) + 1]);
            let local = Translation3::from(pivot)
                * UnitQuaternion::from_rotation_matrix(&rot)
                * Translation3::from(-pivot);
            out.push(out[j - 1] * local);
        }
        out
    }

    pub fn pose(&self, pose: &[f64]) -> Result<Mesh, DatagenError> {
        if pose.len() != self.num_params() {
            return Err(DatagenError::PoseLength {
                got: pose.len(),
                expected: self.num_params(),
            });
        }
        let xf = self.link_transforms(pose);
        let (ll, b) = (self.tube.link_length, self.tube.blend);
        let links = self.tube.links;
        let verts = self
            .rest()
            .rest
            .iter()
            .map(|p| {
                let j = ((p.x / ll).round() as isize).clamp(1, links as isize - 1) as usize;
                let d = p.x - j as f64 * ll;
                if d.abs() < b {
                    // two influences across the joint's blend zone
                    let w = smoothstep((d + b) / (2.0 * b));
                    Point3::from((xf[j - 1] * p).coords * (1.0 - w) + (xf[j] * p).coords * w)
                } else {
                    let own = ((p.x / ll).floor() as isize).clamp(0, links as isize - 1) as usize;
                    xf[own] * p
                }
            })
            .collect();
        Ok(self.rest().with_vertices(verts)?)
    }

    pub fn sample_poses(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| self.ranges.iter().map(|&(lo, hi)| if lo == hi { lo } else { rng.random_range(lo..hi) }).collect())
            .collect()
    }

    pub fn oracle_config(&self) -> OracleConfig {
        OracleConfig::relative_to(self.rest(), 0.1)
    }

    /// Signed penetration of a posed mesh (single domain).
    pub fn penetration(&self, pose: &[f64]) -> Result<f64, DatagenError> {
        let mesh = self.pose(pose)?;
        let bvh = build_bvh(&mesh)?;
        let d = DomainMap::single(mesh.num_vertices(), 1);
        Ok(self_collide(&mesh, &bvh, &d, &self.oracle_config())?.pd)
    }

    /// Checks the family invariants: valid closed rest mesh, collision-free
    /// rest pose with a margin of at least 1% of the diagonal, and a sweep of
    /// the first joint that reaches self-penetration.
    pub fn validate(&self) -> Result<(), DatagenError> {
        let report = validate_manifold(self.rest());
        if !report.is_valid() || !report.is_closed() {
            return Err(DatagenError::Family(format!("rest mesh is not a closed manifold: {report:?}")));
        }
        let zero = vec![0.0; self.num_params()];
        let pd = self.penetration(&zero)?;
        let need = 0.01 * self.rest().bbox_diagonal();
        if pd > -need {
            return Err(DatagenError::Family(format!(
                "rest pose margin {:.4} below required {need:.4}",
                -pd
            )));
        }
        let sweep = self.first_joint_sweep(21)?;
        if !sweep.iter().any(|&(_, pd)| pd > 0.0) {
            return Err(DatagenError::Family("sampling range never self-collides".into()));
        }
        Ok(())
    }

    /// `(angle, pd)` for the first z-bend swept from 0 to its range maximum,
    /// all other parameters zero.
    pub fn first_joint_sweep(&self, steps: usize) -> Result<Vec<(f64, f64)>, DatagenError> {
        let hi = self.ranges[0].1;
        (0..steps)
            .map(|i| {
                let a = hi * i as f64 / (steps - 1) as f64;
                let mut pose = vec![0.0; self.num_params()];
                pose[0] = a;
                Ok((a, self.penetration(&pose)?))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSample {
    pub pose: Vec<f64>,
    pub pd: f64,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub family: String,
    pub seed: u64,
    pub count: usize,
    pub collision_free: usize,
    pub collision_free_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub meshes: Vec<Mesh>,
    pub samples: Vec<SynthSample>,
    pub report: SynthReport,
}

impl SynthDataset {
    /// Meshes the oracle found collision-free, for autoencoder training.
    pub fn collision_free(&self) -> Vec<&Mesh> {
        self.meshes
            .iter()
            .zip(&self.samples)
            .filter(|(_, s)| !s.label)
            .map(|(m, _)| m)
            .collect()
    }

    pub fn manifest(&self) -> serde_json::Value {
        serde_json::json!({
            "report": self.report,
            "samples": self.samples,
        })
    }
}

/// `n` posed meshes with oracle labels.
pub fn synth_dataset(family: &PoseFamily, n: usize, seed: u64) -> Result<SynthDataset, DatagenError> {
    family.validate()?;
    let poses = family.sample_poses(n, seed);
    let cfg = family.oracle_config();
    let mut meshes = Vec::with_capacity(n);
    let mut samples = Vec::with_capacity(n);
    for pose in poses {
        let mesh = family.pose(&pose)?;
        debug_assert!(validate_manifold(&mesh).is_valid());
        let bvh = build_bvh(&mesh)?;
        let r = self_collide(&mesh, &bvh, &DomainMap::single(mesh.num_vertices(), 1), &cfg)?;
        samples.push(SynthSample {
            pose,
            pd: r.pd,
            label: r.label,
        });
        meshes.push(mesh);
    }
    let free = samples.iter().filter(|s| !s.label).count();
    let report = SynthReport {
        family: family.name.clone(),
        seed,
        count: n,
        collision_free: free,
        collision_free_fraction: if n == 0 { 0.0 } else { free as f64 / n as f64 },
    };
    log::info!(
        "{}: {free}/{n} poses collision-free (seed {seed})",
        family.name
    );
    Ok(SynthDataset {
        meshes,
        samples,
        report,
    })
}
