//! Quick internal consistency checks, runnable from the command line.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use selfcol::autoencoder::{AeConfig, Autoencoder};
use selfcol::datagen::PoseFamily;
use selfcol::detector::{Detector, DetectorConfig};
use selfcol::geom::{brute_force_pairs, build_bvh, self_collide, DomainMap};
use selfcol::handler::{alm_solve, AlmConfig, DiskConstraint, LatentTarget};
use selfcol::mesh::{feature_inverse, feature_transform, validate_manifold};
use selfcol::nn::{central_difference, max_relative_error};

pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn detector_gradient(rng: &mut ChaCha8Rng) -> Check {
    let (k, l2) = (3, 2);
    let dim = k * (1 + l2);
    let det = Detector::new(k, l2, &vec![-1.0; dim], &vec![1.0; dim], &DetectorConfig::default());
    let mut worst: f64 = 0.0;
    for _ in 0..16 {
        let z: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, g) = det.prob_grad(&Array2::from_shape_vec((1, dim), z.clone()).unwrap()).unwrap();
        let fd = central_difference(
            |x| det.probs(&[x.to_vec()]).unwrap()[0],
            &z,
            1e-5,
        );
        worst = worst.max(max_relative_error(g.row(0).as_slice().unwrap(), &fd));
    }
    check("detector gradient", worst < 1e-4, format!("max relative error {worst:.2e}"))
}

fn oracle_vs_brute_force() -> Check {
    let fam = PoseFamily::two_link_arm();
    let mut mismatches = 0;
    let poses = fam.sample_poses(5, 7);
    for p in &poses {
        let m = fam.pose(p).unwrap();
        let bvh = build_bvh(&m).unwrap();
        let r = self_collide(&m, &bvh, &DomainMap::single(m.num_vertices(), 1), &fam.oracle_config()).unwrap();
        let mut fast = r.pairs.clone();
        fast.sort();
        if fast != brute_force_pairs(&m) || !validate_manifold(&m).is_valid() {
            mismatches += 1;
        }
    }
    check(
        "oracle vs. brute force",
        mismatches == 0,
        format!("{mismatches} of {} poses differ", poses.len()),
    )
}

fn feature_round_trip() -> Check {
    let fam = PoseFamily::two_link_arm();
    let m = fam.pose(&[1.0, 0.3]).unwrap();
    let f = feature_transform(&m).unwrap();
    let back = feature_transform(&feature_inverse(&f, fam.rest()).unwrap()).unwrap();
    let err = f.0.iter().zip(&back.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check("feature round trip", err < 1e-9, format!("max error {err:.2e}"))
}

fn decoder_gradient(rng: &mut ChaCha8Rng) -> Check {
    let fam = PoseFamily::two_link_arm();
    let cfg = AeConfig {
        num_domains: 2,
        sub_dim: 2,
        width: 8,
        ..AeConfig::default()
    };
    let ae = Autoencoder::new(fam.rest(), &cfg, 1.0);
    let dim = ae.latent_dim();
    let z: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w: Vec<f64> = (0..ae.feature_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let f = |x: &[f64]| {
        let y = ae.decode_batch(&Array2::from_shape_vec((1, dim), x.to_vec()).unwrap()).unwrap();
        y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
    };
    let mut tape = selfcol::nn::Tape::new(&ae.params);
    let zi = tape.input(Array2::from_shape_vec((1, dim), z.clone()).unwrap());
    let out = ae.decode_on_tape(&mut tape, zi);
    let seed = Array2::from_shape_vec((1, w.len()), w.clone()).unwrap();
    let g = tape.backward(&[(out, seed)]).unwrap();
    let analytic = g.wrt(zi).unwrap().row(0).to_vec();
    let err = max_relative_error(&analytic, &central_difference(f, &z, 1e-5));
    check("decoder gradient", err < 1e-4, format!("max relative error {err:.2e}"))
}

fn alm_disk() -> Check {
    let disk = DiskConstraint {
        center: vec![0.0, 0.0],
        radius: 1.0,
    };
    let starts = vec![vec![2.0, 1.0], vec![-0.5, 3.0]];
    let targets = Array2::from_shape_vec((2, 2), starts.concat()).unwrap();
    let res = alm_solve(&starts, &LatentTarget { targets }, &disk, &AlmConfig::default()).unwrap();
    let err = res
        .iter()
        .zip(&starts)
        .flat_map(|(r, s)| r.z.iter().zip(disk.project(s)).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max);
    check("ALM vs. disk projection", err < 1e-4, format!("max error {err:.2e}"))
}

pub fn run_selftest() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    vec![
        feature_round_trip(),
        oracle_vs_brute_force(),
        detector_gradient(&mut rng),
        decoder_gradient(&mut rng),
        alm_disk(),
    ]
}

#[cfg(test)]
mod tests {
    #[test]
    fn selftest_passes() {
        for c in super::run_selftest() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
