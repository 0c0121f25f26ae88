use nalgebra::{Point3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use selfcol::datagen::{PoseFamily, TubeSpec};
use selfcol::geom::{
    brute_force_min_separation, brute_force_pairs, build_bvh, pair_penetration, self_collide, tri_tri_intersect,
    triangle_distance, DomainMap, OracleConfig, Triangle,
};
use selfcol::mesh::Mesh;

fn t(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> Triangle {
    Triangle::new(Point3::from(a), Point3::from(b), Point3::from(c))
}

/// Independent intersection oracle: clip `b` against `a`'s plane, then test
/// the resulting segment against `a` inside that plane. Returns `None` when
/// the configuration is too close to touching or coplanar to call.
fn clipping_oracle(a: &Triangle, b: &Triangle) -> Option<bool> {
    let [p0, p1, p2] = a.0;
    let n = (p1 - p0).cross(&(p2 - p0)).normalize();
    let d: Vec<f64> = b.0.iter().map(|q| n.dot(&(q - p0))).collect();
    if d.iter().any(|x| x.abs() < 1e-9) {
        return None;
    }
    if d.iter().all(|&x| x > 0.0) || d.iter().all(|&x| x < 0.0) {
        return Some(false);
    }
    let mut pts = Vec::new();
    for (i, j) in [(0, 1), (1, 2), (2, 0)] {
        if (d[i] > 0.0) != (d[j] > 0.0) {
            let s = d[i] / (d[i] - d[j]);
            pts.push(b.0[i] + (b.0[j] - b.0[i]) * s);
        }
    }
    // 2D coordinates in a's plane
    let u = (p1 - p0).normalize();
    let v = n.cross(&u);
    let to2 = |p: &Point3<f64>| [u.dot(&(p - p0)), v.dot(&(p - p0))];
    let tri2 = [to2(&p0), to2(&p1), to2(&p2)];
    let (s0, s1) = (to2(&pts[0]), to2(&pts[1]));
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let inside = |p: [f64; 2]| {
        let c: Vec<f64> = (0..3).map(|i| cross(tri2[i], tri2[(i + 1) % 3], p)).collect();
        c.iter().all(|&x| x >= 0.0) || c.iter().all(|&x| x <= 0.0)
    };
    let mut margin = f64::INFINITY;
    for i in 0..3 {
        margin = margin.min(cross(tri2[i], tri2[(i + 1) % 3], s0).abs());
        margin = margin.min(cross(tri2[i], tri2[(i + 1) % 3], s1).abs());
    }
    if margin < 1e-9 {
        return None;
    }
    if inside(s0) || inside(s1) {
        return Some(true);
    }
    let crosses = (0..3).any(|i| {
        let (e0, e1) = (tri2[i], tri2[(i + 1) % 3]);
        let d1 = cross(e0, e1, s0);
        let d2 = cross(e0, e1, s1);
        let d3 = cross(s0, s1, e0);
        let d4 = cross(s0, s1, e1);
        d1 * d2 < 0.0 && d3 * d4 < 0.0
    });
    Some(crosses)
}

/// Penetration as the minimum projection overlap over densely sampled unit
/// directions (Fibonacci sphere), refined by local perturbation.
fn dense_direction_depth(a: &Triangle, b: &Triangle) -> f64 {
    let overlap = |n: &Vector3<f64>| {
        let pa: Vec<f64> = a.0.iter().map(|p| n.dot(&p.coords)).collect();
        let pb: Vec<f64> = b.0.iter().map(|p| n.dot(&p.coords)).collect();
        let (amin, amax) = (pa.iter().cloned().fold(f64::INFINITY, f64::min), pa.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        let (bmin, bmax) = (pb.iter().cloned().fold(f64::INFINITY, f64::min), pb.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        (amax - bmin).min(bmax - amin)
    };
    let n = 40_000;
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let mut best = (f64::INFINITY, Vector3::z());
    for i in 0..n {
        let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        let r = (1.0 - y * y).sqrt();
        let th = golden * i as f64;
        let dir = Vector3::new(r * th.cos(), y, r * th.sin());
        let o = overlap(&dir);
        if o < best.0 {
            best = (o, dir);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut step = 0.02;
    for _ in 0..4000 {
        let trial = (best.1 + Vector3::new(rng.random_range(-step..step), rng.random_range(-step..step), rng.random_range(-step..step))).normalize();
        let o = overlap(&trial);
        if o < best.0 {
            best = (o, trial);
        } else {
            step *= 0.999;
        }
    }
    best.0
}

/// Minimum distance over a dense barycentric grid on both triangles.
fn dense_point_distance(a: &Triangle, b: &Triangle) -> f64 {
    let grid = |tr: &Triangle| {
        let k = 60;
        let mut pts = Vec::new();
        for i in 0..=k {
            for j in 0..=k - i {
                let (u, v) = (i as f64 / k as f64, j as f64 / k as f64);
                pts.push(tr.0[0] + (tr.0[1] - tr.0[0]) * u + (tr.0[2] - tr.0[0]) * v);
            }
        }
        pts
    };
    let (ga, gb) = (grid(a), grid(b));
    let mut best = f64::INFINITY;
    for p in &ga {
        for q in &gb {
            best = best.min((p - q).norm());
        }
    }
    best
}

#[test]
fn crossing_pair_intersects_by_both_tests() {
    let a = t([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
    let b = t([0.2, 0.2, -1.0], [0.3, 0.2, 1.0], [0.2, 0.3, 1.0]);
    assert_eq!(clipping_oracle(&a, &b), Some(true));
    assert!(tri_tri_intersect(&a, &b).unwrap());
    let far = t([10.0, 0.0, 0.0], [11.0, 0.0, 0.0], [10.0, 1.0, 0.0]);
    assert!(!tri_tri_intersect(&a, &far).unwrap());
}

#[test]
fn crossing_pair_depth_matches_dense_directions() {
    let a = t([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
    let b = t([0.2, 0.2, -1.0], [0.3, 0.2, 1.0], [0.2, 0.3, 1.0]);
    let sat = pair_penetration(&a, &b).unwrap();
    let dense = dense_direction_depth(&a, &b);
    assert!(sat > 0.0);
    assert!(dense >= sat - 1e-12, "dense {dense} below SAT {sat}");
    assert!((dense - sat) / sat < 0.05, "dense {dense} vs SAT {sat}");
}

#[test]
fn coincident_triangles_depth_matches_dense_directions() {
    let a = t([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
    let sat = pair_penetration(&a, &a).unwrap();
    // coplanar: the normal separates nothing, candidate axes lie in the plane
    let dense = (0..100_000)
        .map(|i| {
            let th = std::f64::consts::PI * i as f64 / 100_000.0;
            let n = Vector3::new(th.cos(), th.sin(), 0.0);
            let p: Vec<f64> = a.0.iter().map(|q| n.dot(&q.coords)).collect();
            p.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - p.iter().cloned().fold(f64::INFINITY, f64::min)
        })
        .fold(f64::INFINITY, f64::min);
    assert!((dense - 0.5f64.sqrt()).abs() < 1e-9);
    assert!(sat > 0.0);
    assert!(dense >= sat - 1e-12);
    assert!((dense - sat) / sat < 0.05, "dense {dense} vs SAT {sat}");
}

#[test]
fn disjoint_pair_distance() {
    let a = t([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
    let b = t([0.0, 0.0, 0.5], [1.0, 0.0, 0.5], [0.0, 1.0, 0.5]);
    assert!((pair_penetration(&a, &b).unwrap() + 0.5).abs() < 1e-9);
    let c = t([0.3, 0.4, 0.7], [1.4, 0.1, 1.2], [0.9, 1.3, 0.9]);
    let exact = triangle_distance(&a, &c).unwrap();
    let dense = dense_point_distance(&a, &c);
    assert!(dense >= exact - 1e-12 && dense - exact < 0.02, "dense {dense} vs exact {exact}");
    assert!((pair_penetration(&a, &c).unwrap() + exact).abs() < 1e-12);
}

fn tri_strategy() -> impl Strategy<Value = Triangle> {
    prop::array::uniform3(prop::array::uniform3(-1.0f64..1.0))
        .prop_map(|[a, b, c]| t(a, b, c))
        .prop_filter("non-degenerate", |tr| tr.normal().norm() > 1e-3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn intersection_agrees_with_clipping_oracle(a in tri_strategy(), b in tri_strategy()) {
        if let (Some(x), Some(y)) = (clipping_oracle(&a, &b), clipping_oracle(&b, &a)) {
            prop_assert_eq!(x, y);
            prop_assert_eq!(tri_tri_intersect(&a, &b).unwrap(), x);
        }
    }

    #[test]
    fn penetration_is_symmetric(a in tri_strategy(), b in tri_strategy()) {
        let ab = pair_penetration(&a, &b).unwrap();
        let ba = pair_penetration(&b, &a).unwrap();
        prop_assert_eq!(ab.to_bits(), ba.to_bits());
        prop_assert_eq!(ab > 0.0, tri_tri_intersect(&a, &b).unwrap() && ab > 0.0);
    }
}

#[test]
fn degenerate_triangles_are_errors() {
    let a = t([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]);
    let b = t([0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [0.0, 1.0, 1.0]);
    assert!(tri_tri_intersect(&a, &b).is_err());
    assert!(pair_penetration(&b, &a).is_err());
}

/// A random tube family with random pose; at most 1,000 triangles.
fn random_mesh(rng: &mut ChaCha8Rng) -> Mesh {
    let links = rng.random_range(2..=3);
    let tube = TubeSpec {
        links,
        link_length: rng.random_range(0.6..1.2),
        radius: rng.random_range(0.1..0.2),
        segments: rng.random_range(6..=12),
        rings_per_link: rng.random_range(4..=10),
        cap_rings: rng.random_range(1..=2),
        blend: 0.1,
    };
    let ranges = vec![(-3.0, 3.0); 2 * (links - 1)];
    let fam = PoseFamily::new("random", tube, ranges).unwrap();
    let pose = fam.sample_poses(1, rng.random())[0].clone();
    let m = fam.pose(&pose).unwrap();
    assert!(m.num_triangles() <= 1000);
    m
}

#[test]
fn bvh_pairs_equal_brute_force_on_random_meshes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut colliding = 0;
    for _ in 0..30 {
        let m = random_mesh(&mut rng);
        let bvh = build_bvh(&m).unwrap();
        let r = self_collide(&m, &bvh, &DomainMap::single(m.num_vertices(), 1), &OracleConfig { margin: 0.2 }).unwrap();
        assert_eq!(r.pairs, brute_force_pairs(&m));
        assert_eq!(r.label, r.pd > 0.0);
        assert_eq!(r.pairs.is_empty(), r.pd <= 0.0);
        colliding += r.label as usize;
    }
    assert!(colliding > 0 && colliding < 30, "{colliding} colliding meshes");
}

#[test]
fn rest_chain_reports_negated_min_separation() {
    let fam = PoseFamily::three_link_chain();
    let m = fam.rest().clone();
    let cfg = fam.oracle_config();
    let r = self_collide(&m, &build_bvh(&m).unwrap(), &DomainMap::single(m.num_vertices(), 1), &cfg).unwrap();
    let d = brute_force_min_separation(&m, cfg.margin);
    assert!(!r.label && r.pairs.is_empty());
    assert!(d > 0.0 && (r.pd + d).abs() < 1e-12, "pd {} vs -{d}", r.pd);
}

#[test]
fn folded_chain_collides_and_domains_share_the_max() {
    let fam = PoseFamily::two_link_arm();
    let m = fam.pose(&[2.8, 0.0]).unwrap();
    let n = m.num_vertices();
    let domains = DomainMap {
        domain_of: (0..n).map(|v| 1 + (4 * v) / n).collect(),
        num_domains: 4,
    };
    let r = self_collide(&m, &build_bvh(&m).unwrap(), &domains, &fam.oracle_config()).unwrap();
    assert!(r.label && r.pd > 0.0 && !r.pairs.is_empty());
    assert_eq!(r.pairs, brute_force_pairs(&m));
    let max = r.pd_per_domain.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(max, r.pd);
}

#[test]
fn first_contact_sweep_is_monotone_through_zero() {
    let fam = PoseFamily::two_link_arm();
    let samples: Vec<(f64, f64)> = (0..21)
        .map(|i| {
            // first contact is near 1.108; deep in penetration the max-pair
            // depth has facet transitions, so the window brackets the crossing
            let a = 1.05 + 0.12 * i as f64 / 20.0;
            (a, fam.penetration(&[a, 0.0]).unwrap())
        })
        .collect();
    assert!(samples[0].1 < 0.0 && samples[20].1 > 0.0, "{samples:?}");
    for w in samples.windows(2) {
        assert!(w[1].1 >= w[0].1, "not monotone: {w:?}");
    }
}
