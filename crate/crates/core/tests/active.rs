use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use selfcol::active::{
    aggregate, batch_loss, boundary_term, bootstrap, calibrate_pd_scale, damped_step, dataset_ce, elbow_point,
    model_update, near_boundary_fraction, partition, project_to_boundary, ActiveError, CollisionDataset, Labeler,
    LatentBox, LossWeights, Origin, ProjectionConfig, Subset, TrainSchedule,
};
use selfcol::detector::{Detector, DetectorConfig};
use selfcol::geom::CollisionSample;

/// Analytic labels: a disk of radius 0.5 at the origin collides, with
/// penetration depth equal to the depth inside the disk.
struct Disk;

impl Labeler for Disk {
    fn label(&self, zs: &[Vec<f64>]) -> Result<Vec<CollisionSample>, ActiveError> {
        Ok(zs
            .iter()
            .map(|z| {
                let pd = 0.5 - z.iter().map(|v| v * v).sum::<f64>().sqrt();
                CollisionSample {
                    z: z.clone(),
                    pd,
                    pd_per_domain: vec![pd],
                    label: pd > 0.0,
                }
            })
            .collect())
    }
}

fn unit_box() -> LatentBox {
    LatentBox {
        lo: vec![-1.0, -1.0],
        hi: vec![1.0, 1.0],
    }
}

fn fresh(seed: u64) -> Detector {
    let bx = unit_box();
    Detector::new(1, 1, &bx.lo, &bx.hi, &DetectorConfig { seed, ..DetectorConfig::default() })
}

fn trained(seed: u64) -> (Detector, CollisionDataset) {
    let bx = unit_box();
    let mut data = CollisionDataset::new(1e-4);
    let boot = bootstrap(2000, &bx, &Disk, seed).unwrap();
    data.extend(boot, Origin::Bootstrap, 0, &mut ChaCha8Rng::seed_from_u64(seed));
    let mut det = fresh(seed);
    let train = data.train();
    calibrate_pd_scale(&mut det, &train);
    model_update(&mut det, &train, 1e-4, &LossWeights::default(), true, &TrainSchedule::bootstrap(), seed).unwrap();
    (det, data)
}

#[test]
fn box_of_codes() {
    let b = LatentBox::from_codes(&[vec![1.0, 2.0], vec![3.0, 0.0]]).unwrap();
    assert_eq!((b.lo.clone(), b.hi.clone()), (vec![1.0, 0.0], vec![3.0, 2.0]));
    let one = LatentBox::from_codes(&[vec![0.5, -0.5]]).unwrap();
    assert_eq!(one.lo, one.hi);
    assert!(LatentBox::from_codes(&[]).is_err());
    assert!(LatentBox::from_codes(&[vec![0.0], vec![0.0, 1.0]]).is_err());
}

#[test]
fn uniform_sampling_statistics() {
    let b = LatentBox {
        lo: vec![0.0, 0.0],
        hi: vec![1.0, 1.0],
    };
    let zs = b.sample_uniform(10_000, 3);
    for axis in 0..2 {
        let mean = zs.iter().map(|z| z[axis]).sum::<f64>() / zs.len() as f64;
        assert!((mean - 0.5).abs() < 0.02, "axis {axis}: {mean}");
    }
    assert!(zs.iter().all(|z| b.contains(z)));
    assert_eq!(zs, b.sample_uniform(10_000, 3));
    assert_ne!(zs, b.sample_uniform(10_000, 4));
    let point = LatentBox {
        lo: vec![0.25, -2.0],
        hi: vec![0.25, -2.0],
    };
    assert!(point.sample_uniform(50, 1).iter().all(|z| z == &vec![0.25, -2.0]));
}

#[test]
fn partition_examples() {
    assert_eq!(partition(-0.1, 1e-4), Subset::Negative);
    assert_eq!(partition(5e-5, 1e-4), Subset::Boundary);
    assert_eq!(partition(0.01, 1e-4), Subset::Positive);
    assert_eq!(partition(0.0, 1e-4), Subset::Boundary);
    assert_eq!(partition(1e-4, 1e-4), Subset::Boundary);
}

proptest! {
    #[test]
    fn box_contains_its_codes(codes in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..40)) {
        let b = LatentBox::from_codes(&codes).unwrap();
        prop_assert!(codes.iter().all(|c| b.contains(c)));
        prop_assert!(b.lo.iter().zip(&b.hi).all(|(l, h)| l <= h));
    }

    #[test]
    fn partition_is_total_and_disjoint(pd in -1.0f64..1.0, eps in 1e-9f64..0.5) {
        let s = partition(pd, eps);
        let memberships = [pd > eps, pd < 0.0, (0.0..=eps).contains(&pd)];
        prop_assert_eq!(memberships.iter().filter(|&&m| m).count(), 1);
        let expected = if memberships[0] { Subset::Positive } else if memberships[1] { Subset::Negative } else { Subset::Boundary };
        prop_assert_eq!(s, expected);
    }

    #[test]
    fn dataset_counts_cover_every_sample(pds in prop::collection::vec(-0.01f64..0.01, 0..200), eps in 1e-6f64..5e-3) {
        let mut data = CollisionDataset::new(eps);
        let samples: Vec<CollisionSample> = pds.iter().map(|&pd| CollisionSample { z: vec![0.0], pd, pd_per_domain: vec![pd], label: pd > 0.0 }).collect();
        data.extend(samples, Origin::Uniform, 1, &mut ChaCha8Rng::seed_from_u64(0));
        let c = data.counts();
        prop_assert_eq!(c.positive + c.negative + c.boundary, pds.len());
        prop_assert_eq!(data.train().len() + data.validation().len(), pds.len());
    }

    #[test]
    fn projection_stays_in_box(start in prop::collection::vec(-3.0f64..3.0, 2), seed in 0u64..4) {
        let det = fresh(seed);
        let p = project_to_boundary(&det, &unit_box(), &[start], &ProjectionConfig::default()).unwrap();
        prop_assert!(unit_box().contains(&p[0].z));
        prop_assert!(p[0].iters <= 100);
    }
}

#[test]
fn projection_fixed_point_at_half() {
    let mut det = fresh(0);
    // a zero output layer makes the logit exactly 0 everywhere
    let last = det.classifier().layers.last().unwrap().clone();
    det.params[last.w..last.w + last.n_in].fill(0.0);
    det.params[last.b] = 0.0;
    let z = vec![0.3, -0.2];
    let p = project_to_boundary(&det, &unit_box(), &[z.clone()], &ProjectionConfig::default()).unwrap();
    assert_eq!(p[0].z, z);
    assert_eq!(p[0].iters, 0);
    assert!(p[0].converged);
    assert_eq!(p[0].prob, 0.5);
}

#[test]
fn damping_limit_shrinks_the_step() {
    let g = [0.3, -1.2, 0.5];
    let r = 0.2;
    let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut prev = f64::INFINITY;
    for lambda_rel in [1e-6, 1.0, 1e3, 1e6, 1e9] {
        let s = damped_step(&g, r, lambda_rel);
        let n = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let lambda = lambda_rel * (1.0 + gnorm * gnorm);
        assert!(n <= gnorm * r / lambda * (1.0 + 1e-12) || lambda_rel < 1.0);
        assert!(n < prev);
        prev = n;
    }
    assert!(prev < 1e-9);
    // undamped limit is the Gauss-Newton step -g r / |g|^2
    let s = damped_step(&g, r, 0.0);
    for (a, b) in s.iter().zip(&g) {
        assert!((a + b * r / (gnorm * gnorm)).abs() < 1e-15);
    }
}

#[test]
fn projection_is_deterministic() {
    let det = fresh(2);
    let starts = unit_box().sample_uniform(50, 9);
    let a = project_to_boundary(&det, &unit_box(), &starts, &ProjectionConfig::default()).unwrap();
    let b = project_to_boundary(&det, &unit_box(), &starts, &ProjectionConfig::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn projections_on_a_trained_detector_reach_the_level_set() {
    let (det, _) = trained(0);
    let starts = unit_box().sample_uniform(1000, 17);
    let p = project_to_boundary(&det, &unit_box(), &starts, &ProjectionConfig::default()).unwrap();
    let close = p.iter().filter(|q| (q.prob - 0.5).abs() <= 0.05).count();
    assert!(close >= 900, "{close} of 1000 within 0.05");
}

#[test]
fn aggregation_size_determinism_and_risk_seeking() {
    let (det, data) = trained(1);
    let codes = data.codes();
    let run = |seed| aggregate(&codes, &det, &unit_box(), &Disk, 500, &ProjectionConfig::default(), seed).unwrap();
    let a = run(5);
    assert_eq!(a.len(), 500);
    assert_eq!((a.projected.len(), a.uniform.len()), (250, 250));
    assert_eq!(a, run(5));
    assert_ne!(a, run(6));
    // near-boundary band |pd| < 0.03, about 6% of the disk radius
    let eps = 3e-3;
    assert!(near_boundary_fraction(&a.projected, eps) > near_boundary_fraction(&a.uniform, eps));
    assert!(a.projected.iter().chain(&a.uniform).all(|s| unit_box().contains(&s.z)));
}

#[test]
fn dataset_grows_by_n_aug_per_iteration() {
    let (det, mut data) = trained(2);
    let n_init = data.len();
    for it in 1..=3 {
        let codes: Vec<Vec<f64>> = data.codes().iter().map(|c| c.to_vec()).collect();
        let refs: Vec<&[f64]> = codes.iter().map(|c| c.as_slice()).collect();
        let agg = aggregate(&refs, &det, &unit_box(), &Disk, 100, &ProjectionConfig::default(), it).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(it);
        data.extend(agg.projected, Origin::Projected, it as usize, &mut rng);
        data.extend(agg.uniform, Origin::Uniform, it as usize, &mut rng);
        assert_eq!(data.len(), n_init + it as usize * 100);
    }
    assert_eq!(data.train().len(), (0.8 * n_init as f64).round() as usize + 3 * 80);
}

#[test]
fn elbow_of_hand_computed_curve() {
    let (xs, ys) = ([1.0, 2.0, 3.0, 4.0], [0.5, 0.9, 0.92, 0.93]);
    // normalized difference curve by hand: y_n - x_n
    let d: Vec<f64> = (0..4).map(|i| (ys[i] - 0.5) / 0.43 - (xs[i] - 1.0) / 3.0).collect();
    let best = (0..4).max_by(|&a, &b| d[a].partial_cmp(&d[b]).unwrap()).unwrap();
    let e = elbow_point(&xs, &ys).unwrap();
    assert_eq!(best, 1);
    assert_eq!((e.x, e.index, e.found), (2.0, 1, true));
}

#[test]
fn linear_curve_has_no_elbow() {
    let xs: Vec<f64> = (1..=6).map(f64::from).collect();
    let ys: Vec<f64> = xs.iter().map(|x| 0.1 * x + 0.3).collect();
    let e = elbow_point(&xs, &ys).unwrap();
    assert!(!e.found);
    assert_eq!(e.x, 6.0);
    assert!(elbow_point(&[1.0, 2.0], &[0.0, 1.0]).is_err());
    assert!(elbow_point(&[1.0, 1.0, 2.0], &[0.0, 0.5, 1.0]).is_err());
}

#[test]
fn elbow_of_saturating_exponential_is_at_max_curvature() {
    // y = 1 - exp(-a u) on u in [0, 1]; after normalization the curvature
    // a s / (1 + s^2)^1.5 with s = a exp(-a u) / (1 - exp(-a)) peaks at s = 1/sqrt(2)
    let a: f64 = 5.0;
    let c = 1.0 - (-a).exp();
    let u_star = (a / (c * 2f64.sqrt())).ln() / a;
    let n = 10;
    let h = 1.0 / (n - 1) as f64;
    let xs: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
    let ys: Vec<f64> = xs.iter().map(|u| 1.0 - (-a * u).exp()).collect();
    let e = elbow_point(&xs, &ys).unwrap();
    assert!(e.found);
    assert!((e.x - u_star).abs() <= h, "elbow {} vs {u_star}", e.x);
}

#[test]
fn boundary_loss_vanishes_at_half() {
    assert_eq!(boundary_term(0.5), 0.0);
    assert!(boundary_term(0.5 + 1e-9) > 0.0);
}

#[test]
fn ranking_loss_is_zero_when_order_holds_with_margin() {
    let det = fresh(4);
    let zs = unit_box().sample_uniform(400, 2);
    let out = det.forward(&selfcol::detector::rows(&zs, 2).unwrap()).unwrap();
    let mut sums: Vec<(f64, usize)> = out.s.rows().into_iter().map(|r| r.sum()).zip(0..).collect();
    sums.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let w = LossWeights::default();
    // keep codes whose predicted sums are at least alpha apart
    let mut keep = vec![sums[0]];
    for &s in &sums[1..] {
        if s.0 - keep.last().unwrap().0 >= 1.5 * w.alpha {
            keep.push(s);
        }
    }
    assert!(keep.len() >= 3, "{}", keep.len());
    let make = |flip: bool| -> Vec<CollisionSample> {
        keep.iter()
            .map(|&(s, i)| {
                let pd = if flip { -s } else { s } * det.pd_scale;
                CollisionSample { z: zs[i].clone(), pd, pd_per_domain: vec![pd], label: pd > 0.0 }
            })
            .collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let ordered = make(false);
    let refs: Vec<&CollisionSample> = ordered.iter().collect();
    let (terms, _) = batch_loss(&det, &refs, 1e-4, &w, true, &mut rng, false).unwrap();
    assert_eq!(terms.rank, 0.0);
    let flipped = make(true);
    let refs: Vec<&CollisionSample> = flipped.iter().collect();
    let (terms, _) = batch_loss(&det, &refs, 1e-4, &w, true, &mut rng, false).unwrap();
    assert!(terms.rank > 0.0);
}

/// On the disk the regression term dominates early, so only the net drop is
/// required here; strict per-epoch decrease is checked on the mesh runs.
#[test]
fn training_cross_entropy_drops_over_first_epochs() {
    let bx = unit_box();
    for seed in 0..5 {
        let samples = bootstrap(2000, &bx, &Disk, 100 + seed).unwrap();
        let refs: Vec<&CollisionSample> = samples.iter().collect();
        let mut det = fresh(seed);
        calibrate_pd_scale(&mut det, &refs);
        let start = dataset_ce(&det, &refs).unwrap();
        let schedule = TrainSchedule {
            epochs: 10,
            ..TrainSchedule::bootstrap()
        };
        let log = model_update(&mut det, &refs, 1e-4, &LossWeights::default(), true, &schedule, seed).unwrap();
        assert_eq!(log.len(), 10);
        let end = log.last().unwrap().train_ce;
        assert!(end < 0.9 * start, "seed {seed}: {start} -> {end}");
    }
}

#[test]
fn bootstrap_is_sized_and_deterministic() {
    let a = bootstrap(300, &unit_box(), &Disk, 8).unwrap();
    assert_eq!(a.len(), 300);
    assert_eq!(a, bootstrap(300, &unit_box(), &Disk, 8).unwrap());
}
