use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use selfcol::autoencoder::{
    domain_map, mean_row_entropy, reconstruction_report, train_autoencoder, AeConfig, Autoencoder, LatentCode,
};
use selfcol::datagen::{synth_dataset, PoseFamily};
use selfcol::mesh::{feature_transform, FeatureVector};
use selfcol::nn::{central_difference, max_relative_error, Tape};

fn small() -> AeConfig {
    AeConfig {
        num_domains: 3,
        sub_dim: 2,
        width: 16,
        ..AeConfig::default()
    }
}

fn arm_features(n: usize, seed: u64) -> (PoseFamily, Vec<FeatureVector>) {
    let fam = PoseFamily::two_link_arm();
    let poses = fam.sample_poses(n, seed);
    let f = poses
        .iter()
        .map(|p| feature_transform(&fam.pose(&[0.6 * p[0], 0.6 * p[1]]).unwrap()).unwrap())
        .collect();
    (fam, f)
}

fn random(rng: &mut ChaCha8Rng, n: usize, amp: f64) -> Vec<f64> {
    (0..n).map(|_| amp * rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn code_has_flat_length_and_is_pure() {
    let (fam, feats) = arm_features(3, 1);
    let ae = Autoencoder::new(fam.rest(), &small(), 0.5);
    for f in &feats {
        let a = ae.encode(f).unwrap();
        assert_eq!(a.flat().len(), 3 * (1 + 2));
        assert_eq!(a, ae.encode(f).unwrap());
        assert_eq!(ae.decode(&a).unwrap().len(), f.len());
    }
    assert!(ae.encode(&FeatureVector(vec![0.0; 7])).is_err());
    assert!(LatentCode::from_flat(&[0.0; 8], 3, 2).is_err());
}

#[test]
fn decode_is_the_sum_of_its_terms() {
    let (fam, _) = arm_features(1, 0);
    let ae = Autoencoder::new(fam.rest(), &small(), 0.7);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let z = Array2::from_shape_vec((4, ae.latent_dim()), random(&mut rng, 4 * ae.latent_dim(), 2.0)).unwrap();
    let terms = ae.decode_terms(&z).unwrap();
    assert_eq!(terms.len(), 1 + 3);
    let mut sum = terms[0].clone();
    for t in &terms[1..] {
        sum = &sum + t;
    }
    assert_eq!(ae.decode_batch(&z).unwrap(), sum * 0.7);

    // dropping one sub-decoder changes the output by exactly that term
    for j in 1..terms.len() {
        let mut without = terms[0].clone();
        for (i, t) in terms.iter().enumerate().skip(1) {
            if i != j {
                without = &without + t;
            }
        }
        let diff = &ae.decode_batch(&z).unwrap() - &(without * 0.7);
        let expect = &terms[j] * 0.7;
        let err = (&diff - &expect).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-12, "term {j}: {err:e}");
    }
}

#[test]
fn decoder_gradient_matches_finite_differences_on_64_probes() {
    let (fam, _) = arm_features(1, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for probe in 0..64 {
        let ae = Autoencoder::new(fam.rest(), &AeConfig { seed: probe, ..small() }, 0.3);
        let dim = ae.latent_dim();
        let z = random(&mut rng, dim, 1.5);
        let w = random(&mut rng, ae.feature_dim(), 1.0);
        let f = |x: &[f64]| {
            let y = ae.decode_batch(&Array2::from_shape_vec((1, dim), x.to_vec()).unwrap()).unwrap();
            y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut tape = Tape::new(&ae.params);
        let zi = tape.input(Array2::from_shape_vec((1, dim), z.clone()).unwrap());
        let out = ae.decode_on_tape(&mut tape, zi);
        let g = tape.backward(&[(out, Array2::from_shape_vec((1, w.len()), w.clone()).unwrap())]).unwrap();
        let analytic = g.wrt(zi).unwrap().row(0).to_vec();
        worst = worst.max(max_relative_error(&analytic, &central_difference(f, &z, 1e-5)));
    }
    assert!(worst < 1e-4, "max relative error {worst:e}");
}

#[test]
fn encoder_gradient_matches_finite_differences() {
    let (fam, feats) = arm_features(4, 2);
    let ae = Autoencoder::new(fam.rest(), &small(), 0.4);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for f in &feats {
        let w = random(&mut rng, ae.latent_dim(), 1.0);
        let obj = |x: &[f64]| {
            let z = ae.encode(&FeatureVector(x.to_vec())).unwrap().flat();
            z.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut tape = Tape::new(&ae.params);
        let fi = tape.input(Array2::from_shape_vec((1, f.len()), f.0.clone()).unwrap());
        let z = ae.encode_on_tape(&mut tape, fi);
        let g = tape.backward(&[(z, Array2::from_shape_vec((1, w.len()), w.clone()).unwrap())]).unwrap();
        let analytic = g.wrt(fi).unwrap().row(0).to_vec();
        let err = max_relative_error(&analytic, &central_difference(obj, &f.0, 1e-6));
        assert!(err < 1e-4, "{err:e}");
    }
}

#[test]
fn attention_rows_are_stochastic() {
    let (fam, _) = arm_features(1, 0);
    let ae = Autoencoder::new(fam.rest(), &AeConfig::default(), 1.0);
    let a = ae.attention();
    assert_eq!(a.dim(), (fam.rest().num_vertices(), 8));
    for row in a.rows() {
        assert!((row.sum() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn domain_map_takes_row_argmax_with_low_index_ties() {
    let a = Array2::from_shape_vec((3, 3), vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]).unwrap();
    let d = domain_map(&a);
    assert_eq!(d.domain_of, vec![2, 3, 1]);
    assert_eq!(d.num_domains, 3);
    let uniform = Array2::from_elem((2, 4), 0.25);
    assert!((mean_row_entropy(&uniform) - 4.0f64.ln()).abs() < 1e-12);
}

#[test]
fn memorizes_a_repeated_mesh() {
    let (fam, feats) = arm_features(1, 3);
    let data = vec![feats[0].clone(); 8];
    let cfg = AeConfig {
        epochs: 2000,
        batch_size: 8,
        ..small()
    };
    let (ae, log) = train_autoencoder(fam.rest(), &data, &cfg).unwrap();
    let rep = reconstruction_report(&ae, fam.rest(), &data).unwrap();
    assert!(log.final_loss() < 1e-3 * log.initial_loss(), "{} -> {}", log.initial_loss(), log.final_loss());
    assert!(rep.relative_error < 0.01, "{rep:?}");
}

#[test]
fn training_reduces_loss_tenfold_and_reconstructs_the_arm() {
    let fam = PoseFamily::two_link_arm();
    let synth = synth_dataset(&fam, 200, 0).unwrap();
    let feats: Vec<FeatureVector> = synth.collision_free().into_iter().map(|m| feature_transform(m).unwrap()).collect();
    let cfg = AeConfig {
        width: 64,
        epochs: 60,
        ..AeConfig::default()
    };
    let (ae, log) = train_autoencoder(fam.rest(), &feats, &cfg).unwrap();
    assert!(log.initial_loss() >= 10.0 * log.final_loss(), "{} -> {}", log.initial_loss(), log.final_loss());
    let rep = reconstruction_report(&ae, fam.rest(), &feats).unwrap();
    assert!(rep.mean_vertex_error < 0.02, "{rep:?}");
    for row in ae.attention().rows() {
        assert!((row.sum() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn sparsity_prior_lowers_attention_entropy() {
    let (fam, feats) = arm_features(24, 4);
    let run = |sparsity: f64| {
        let cfg = AeConfig {
            sparsity,
            epochs: 40,
            batch_size: 8,
            ..small()
        };
        let (ae, _) = train_autoencoder(fam.rest(), &feats, &cfg).unwrap();
        mean_row_entropy(&ae.attention())
    };
    let (with, without) = (run(0.01), run(0.0));
    assert!(with < without, "entropy {with} with prior vs {without} without");
}

#[test]
fn too_few_meshes_is_an_error() {
    let (fam, feats) = arm_features(1, 0);
    assert!(train_autoencoder(fam.rest(), &feats, &small()).is_err());
}
