use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use selfcol::nn::{
    central_difference, load_checkpoint, max_relative_error, save_checkpoint, Activation, AdamConfig, AdamState,
    Checkpoint, Mlp, ParamLayout, Tape,
};

fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// A graph touching every tape operation, reduced to `sum(out * w)`.
struct Graph {
    layout: ParamLayout,
    a: Mlp,
    b: Mlp,
    soft: usize,
}

impl Graph {
    fn new() -> Self {
        let mut layout = ParamLayout::new();
        let a = Mlp::new(&mut layout, "a", &[4, 6, 3], Activation::Celu(0.7), Activation::Tanh);
        let b = Mlp::new(&mut layout, "b", &[5, 4, 2], Activation::Tanh, Activation::Sigmoid);
        let soft = layout.alloc("soft", &[2, 3]);
        Graph { layout, a, b, soft }
    }

    fn build(&self, t: &mut Tape, x: Array2<f64>) -> (usize, usize) {
        let xi = t.input(x);
        let h = self.a.forward(t, xi);
        let s = t.slice_cols(xi, 1, 2);
        let c = t.concat(&[h, s]);
        let y = self.b.forward(t, c);
        let p = t.param(self.soft, 2, 3);
        let sm = t.softmax_rows(p);
        let e = t.expand_column(sm, 1, 1);
        let masked = t.mul_row(y, e);
        let prod = t.mul(masked, y);
        let diff = t.sub(prod, y);
        let sc = t.scale(diff, 1.7);
        let sum = t.add(sc, y);
        let col = t.slice_cols(h, 0, 2);
        let stacked = t.concat_rows(&[sum, col]);
        let first = t.slice_cols(stacked, 0, 1);
        let folded = t.fold_rows(first, 2);
        let mixed = t.add(sum, folded);
        let out = t.add(mixed, col);
        let sq = t.sigmoid(out);
        (xi, sq)
    }
}

#[test]
fn composite_graph_gradients_match_finite_differences() {
    let g = Graph::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut params = vec![0.0; g.layout.len()];
    g.a.init(&mut params, &mut rng);
    g.b.init(&mut params, &mut rng);
    for p in &mut params[g.soft..g.soft + 6] {
        *p = rng.random_range(-1.0..1.0);
    }
    let batch = 3;
    let w = Array2::from_shape_vec((batch, 2), random(&mut rng, batch * 2)).unwrap();
    for _ in 0..16 {
        let x = random(&mut rng, batch * 4);
        let xa = Array2::from_shape_vec((batch, 4), x.clone()).unwrap();
        let mut t = Tape::new(&params);
        let (xi, out) = g.build(&mut t, xa);
        let grads = t.backward(&[(out, w.clone())]).unwrap();
        let value = |p: &[f64], xv: &[f64]| {
            let mut t = Tape::new(p);
            let (_, o) = g.build(&mut t, Array2::from_shape_vec((batch, 4), xv.to_vec()).unwrap());
            (t.value(o) * &w).sum()
        };
        let fd_x = central_difference(|xv| value(&params, xv), &x, 1e-6);
        let an_x = grads.wrt(xi).unwrap().iter().copied().collect::<Vec<_>>();
        assert!(max_relative_error(&an_x, &fd_x) < 1e-6, "input gradient");
        let fd_p = central_difference(|pv| value(pv, &x), &params, 1e-6);
        assert!(max_relative_error(&grads.params, &fd_p) < 1e-6, "parameter gradient");
    }
}

#[test]
fn fold_rows_places_blocks_in_columns() {
    let mut t = Tape::new(&[]);
    let a = t.input(Array2::from_shape_vec((2, 1), vec![1.0, 2.0]).unwrap());
    let b = t.input(Array2::from_shape_vec((2, 1), vec![3.0, 4.0]).unwrap());
    let c = t.concat_rows(&[a, b]);
    let f = t.fold_rows(c, 2);
    assert_eq!(t.value(f), &Array2::from_shape_vec((2, 2), vec![1.0, 3.0, 2.0, 4.0]).unwrap());
}

#[test]
fn softmax_rows_are_stochastic() {
    let params = vec![3.0, -1.0, 700.0, 0.0, 0.0, 0.0];
    let mut t = Tape::new(&params);
    let p = t.param(0, 2, 3);
    let s = t.softmax_rows(p);
    for row in t.value(s).rows() {
        assert!((row.sum() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}

#[test]
fn adam_minimizes_a_quadratic() {
    let target = [1.0, -2.0, 0.5];
    let mut x = vec![0.0; 3];
    let mut adam = AdamState::new(3, AdamConfig::with_lr(0.05));
    for _ in 0..2000 {
        let g: Vec<f64> = x.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
        adam.step(&mut x, &g).unwrap();
    }
    for (a, b) in x.iter().zip(&target) {
        assert!((a - b).abs() < 1e-3);
    }
    assert!(adam.step(&mut x, &[0.0; 2]).is_err());
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let mut layout = ParamLayout::new();
    layout.alloc("w", &[2, 3]);
    layout.alloc("b", &[3]);
    let params: Vec<f64> = (0..9).map(|i| (i as f64).sin() * 1e-7 + i as f64).collect();
    let ckpt = Checkpoint {
        layout,
        params: params.clone(),
        meta: serde_json::json!({"kind": "test"}),
    };
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), "net", &ckpt).unwrap();
    let back = load_checkpoint(dir.path(), "net").unwrap();
    assert_eq!(back.params, params);
    assert_eq!(back.layout, ckpt.layout);
    assert_eq!(back.meta, ckpt.meta);
}

#[test]
fn input_only_sweep_matches_full_backward() {
    let g = Graph::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut params = vec![0.0; g.layout.len()];
    g.a.init(&mut params, &mut rng);
    g.b.init(&mut params, &mut rng);
    let mut t = Tape::new(&params);
    let (xi, out) = g.build(&mut t, Array2::from_shape_vec((2, 4), random(&mut rng, 8)).unwrap());
    let seed = Array2::ones((2, 2));
    let full = t.backward(&[(out, seed.clone())]).unwrap();
    let inputs = t.input_gradients(&[(out, seed)]).unwrap();
    assert_eq!(full.wrt(xi), inputs.wrt(xi));
    assert!(inputs.params.is_empty());
}
