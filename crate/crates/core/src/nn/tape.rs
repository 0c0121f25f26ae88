//! Reverse-mode tape over row-batched matrices.
//!
//! Every node holds a `batch x width` matrix. Nodes are appended in
//! evaluation order, so the tape is its own topological order and the
//! backward pass is a single reverse sweep. Learnable weights are read from a
//! flat parameter slice borrowed for the tape's lifetime; their gradients come
//! back as a flat vector of the same length.

use ndarray::{s, Array2, ArrayView2, ArrayViewMut2, Axis};

use super::NnError;

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param { offset: usize },
    Affine { x: NodeId, w: usize, b: usize, n_in: usize, n_out: usize },
    Tanh(NodeId),
    Celu(NodeId, f64),
    Sigmoid(NodeId),
    SoftmaxRows(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Concat(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    FoldRows(NodeId),
    SliceCols(NodeId, usize),
    ExpandColumn { src: NodeId, col: usize, repeat: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param { .. } => "param",
            Op::Affine { .. } => "affine",
            Op::Tanh(_) => "tanh",
            Op::Celu(..) => "celu",
            Op::Sigmoid(_) => "sigmoid",
            Op::SoftmaxRows(_) => "softmax",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MulRow(..) => "mul_row",
            Op::Scale(..) => "scale",
            Op::Concat(_) => "concat",
            Op::ConcatRows(_) => "concat_rows",
            Op::FoldRows(_) => "fold_rows",
            Op::SliceCols(..) => "slice",
            Op::ExpandColumn { .. } => "expand_column",
        }
    }
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p [f64],
    nodes: Vec<Node>,
    poisoned: Option<(NodeId, &'static str)>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    pub params: Vec<f64>,
    nodes: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Adjoint of a node, `None` if nothing flowed into it.
    pub fn wrt(&self, id: NodeId) -> Option<&Array2<f64>> {
        self.nodes.get(id).and_then(|a| a.as_ref())
    }
}

fn weight_view(params: &[f64], offset: usize, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), &params[offset..offset + rows * cols]).expect("param layout")
}

fn celu(x: f64, alpha: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        alpha * (x / alpha).exp_m1()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [f64]) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(64),
            poisoned: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> NodeId {
        let id = self.nodes.len();
        if self.poisoned.is_none() && !value.iter().all(|v| v.is_finite()) {
            self.poisoned = Some((id, op.name()));
        }
        self.nodes.push(Node { value, op });
        id
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id].value
    }

    /// Error naming the first node whose value was NaN or infinite.
    pub fn check_finite(&self) -> Result<(), NnError> {
        match self.poisoned {
            Some((node, op)) => Err(NnError::Poisoned { node, op }),
            None => Ok(()),
        }
    }

    pub fn input(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Input)
    }

    /// A parameter matrix as a node (e.g. attention logits).
    pub fn param(&mut self, offset: usize, rows: usize, cols: usize) -> NodeId {
        let value = weight_view(self.params, offset, rows, cols).to_owned();
        self.push(value, Op::Param { offset })
    }

    /// `x W^T + b` with `W` stored row-major as `n_out x n_in`.
    pub fn affine(&mut self, x: NodeId, w: usize, b: usize, n_in: usize, n_out: usize) -> NodeId {
        let xv = &self.nodes[x].value;
        assert_eq!(xv.ncols(), n_in, "affine input width");
        let wv = weight_view(self.params, w, n_out, n_in);
        let bv = ndarray::ArrayView1::from(&self.params[b..b + n_out]);
        let mut y = xv.dot(&wv.t());
        y += &bv;
        self.push(y, Op::Affine { x, w, b, n_in, n_out })
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let y = self.nodes[x].value.mapv(f64::tanh);
        self.push(y, Op::Tanh(x))
    }

    pub fn celu(&mut self, x: NodeId, alpha: f64) -> NodeId {
        let y = self.nodes[x].value.mapv(|v| celu(v, alpha));
        self.push(y, Op::Celu(x, alpha))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let y = self.nodes[x].value.mapv(sigmoid);
        self.push(y, Op::Sigmoid(x))
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let mut y = self.nodes[x].value.clone();
        for mut row in y.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|v| (v - m).exp());
            let s = row.sum();
            row /= s;
        }
        self.push(y, Op::SoftmaxRows(x))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let y = &self.nodes[a].value + &self.nodes[b].value;
        self.push(y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let y = &self.nodes[a].value - &self.nodes[b].value;
        self.push(y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let y = &self.nodes[a].value * &self.nodes[b].value;
        self.push(y, Op::Mul(a, b))
    }

    /// Elementwise product of a `B x n` node with a `1 x n` row node.
    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        assert_eq!(self.nodes[row].value.nrows(), 1, "mul_row expects a single row");
        let y = &self.nodes[a].value * &self.nodes[row].value;
        self.push(y, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let y = &self.nodes[a].value * k;
        self.push(y, Op::Scale(a, k))
    }

    /// Column-wise concatenation of nodes with equal row counts.
    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.nodes[p].value.view()).collect();
        let y = ndarray::concatenate(Axis(1), &views).expect("concat columns");
        self.push(y, Op::Concat(parts.to_vec()))
    }

    /// Row-wise stacking of nodes with equal column counts.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.nodes[p].value.view()).collect();
        let y = ndarray::concatenate(Axis(0), &views).expect("concat rows");
        self.push(y, Op::ConcatRows(parts.to_vec()))
    }

    /// A `(k * B) x 1` column made of `k` stacked blocks becomes `B x k`, block
    /// `i` landing in column `i`.
    pub fn fold_rows(&mut self, x: NodeId, k: usize) -> NodeId {
        let v = &self.nodes[x].value;
        assert!(v.ncols() == 1 && v.nrows() % k == 0, "fold_rows expects a (k * B) x 1 column");
        let b = v.nrows() / k;
        let y = Array2::from_shape_fn((b, k), |(r, i)| v[[i * b + r, 0]]);
        self.push(y, Op::FoldRows(x))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let y = self.nodes[x].value.slice(s![.., start..start + len]).to_owned();
        self.push(y, Op::SliceCols(x, start))
    }

    /// Column `col` of a `rows x k` node as a `1 x (rows * repeat)` row, each
    /// entry repeated `repeat` times consecutively.
    pub fn expand_column(&mut self, src: NodeId, col: usize, repeat: usize) -> NodeId {
        let v = &self.nodes[src].value;
        let rows = v.nrows();
        let mut y = Array2::zeros((1, rows * repeat));
        for r in 0..rows {
            let a = v[[r, col]];
            for k in 0..repeat {
                y[[0, r * repeat + k]] = a;
            }
        }
        self.push(y, Op::ExpandColumn { src, col, repeat })
    }

    /// Propagates the seed adjoints back through the tape.
    pub fn backward(&self, seeds: &[(NodeId, Array2<f64>)]) -> Result<Gradients, NnError> {
        self.sweep(seeds, true)
    }

    /// Like [`Tape::backward`] but skips parameter gradients; `params` comes
    /// back empty.
    pub fn input_gradients(&self, seeds: &[(NodeId, Array2<f64>)]) -> Result<Gradients, NnError> {
        self.sweep(seeds, false)
    }

    fn sweep(&self, seeds: &[(NodeId, Array2<f64>)], want_params: bool) -> Result<Gradients, NnError> {
        self.check_finite()?;
        let mut adj: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        for (id, seed) in seeds {
            let shape = self.nodes[*id].value.dim();
            if seed.dim() != shape {
                return Err(NnError::ShapeMismatch {
                    what: "backward seed",
                    expected: shape.0 * shape.1,
                    got: seed.len(),
                });
            }
            accumulate(&mut adj[*id], seed.view());
        }
        let mut pgrad = vec![0.0; if want_params { self.params.len() } else { 0 }];
        for id in (0..self.nodes.len()).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Input => {}
                Op::Param { .. } if !want_params => {}
                Op::Param { offset } => {
                    let (r, c) = g.dim();
                    let mut gp = ArrayViewMut2::from_shape((r, c), &mut pgrad[*offset..offset + r * c]).unwrap();
                    gp += &g;
                }
                &Op::Affine { x, w, b, n_in, n_out } => {
                    let wv = weight_view(self.params, w, n_out, n_in);
                    if want_params {
                        let mut gw = ArrayViewMut2::from_shape((n_out, n_in), &mut pgrad[w..w + n_out * n_in]).unwrap();
                        gw += &g.t().dot(&self.nodes[x].value);
                    }
                    if want_params {
                        for (gb, col) in pgrad[b..b + n_out].iter_mut().zip(g.sum_axis(Axis(0))) {
                            *gb += col;
                        }
                    }
                    let gx = g.dot(&wv);
                    accumulate(&mut adj[x], gx.view());
                }
                &Op::Tanh(x) => {
                    let gx = ndarray::Zip::from(&g).and(&node.value).map_collect(|&g, &y| g * (1.0 - y * y));
                    accumulate(&mut adj[x], gx.view());
                }
                &Op::Celu(x, alpha) => {
                    let gx = ndarray::Zip::from(&g)
                        .and(&self.nodes[x].value)
                        .and(&node.value)
                        .map_collect(|&g, &xi, &y| if xi >= 0.0 { g } else { g * (y / alpha + 1.0) });
                    accumulate(&mut adj[x], gx.view());
                }
                &Op::Sigmoid(x) => {
                    let gx = ndarray::Zip::from(&g).and(&node.value).map_collect(|&g, &y| g * y * (1.0 - y));
                    accumulate(&mut adj[x], gx.view());
                }
                &Op::SoftmaxRows(x) => {
                    let y = &node.value;
                    let mut gx = &g * y;
                    let dots = gx.sum_axis(Axis(1));
                    for (mut row, (yr, d)) in gx.rows_mut().into_iter().zip(y.rows().into_iter().zip(dots)) {
                        row.zip_mut_with(&yr, |v, &yy| *v -= yy * d);
                    }
                    accumulate(&mut adj[x], gx.view());
                }
                &Op::Add(a, b) => {
                    accumulate(&mut adj[a], g.view());
                    accumulate(&mut adj[b], g.view());
                }
                &Op::Sub(a, b) => {
                    accumulate(&mut adj[a], g.view());
                    let neg = -&g;
                    accumulate(&mut adj[b], neg.view());
                }
                &Op::Mul(a, b) => {
                    let ga = &g * &self.nodes[b].value;
                    let gb = &g * &self.nodes[a].value;
                    accumulate(&mut adj[a], ga.view());
                    accumulate(&mut adj[b], gb.view());
                }
                &Op::MulRow(a, row) => {
                    let ga = &g * &self.nodes[row].value;
                    let gr = (&g * &self.nodes[a].value).sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut adj[a], ga.view());
                    accumulate(&mut adj[row], gr.view());
                }
                &Op::Scale(a, k) => {
                    let ga = &g * k;
                    accumulate(&mut adj[a], ga.view());
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.nodes[p].value.ncols();
                        accumulate(&mut adj[p], g.slice(s![.., start..start + w]));
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let h = self.nodes[p].value.nrows();
                        accumulate(&mut adj[p], g.slice(s![start..start + h, ..]));
                        start += h;
                    }
                }
                &Op::FoldRows(x) => {
                    let (b, k) = g.dim();
                    let gx = Array2::from_shape_fn((b * k, 1), |(j, _)| g[[j % b, j / b]]);
                    accumulate(&mut adj[x], gx.view());
                }
                &Op::SliceCols(x, start) => {
                    let shape = self.nodes[x].value.dim();
                    let slot = adj[x].get_or_insert_with(|| Array2::zeros(shape));
                    let w = g.ncols();
                    let mut dst = slot.slice_mut(s![.., start..start + w]);
                    dst += &g;
                }
                &Op::ExpandColumn { src, col, repeat } => {
                    let shape = self.nodes[src].value.dim();
                    let slot = adj[src].get_or_insert_with(|| Array2::zeros(shape));
                    for r in 0..shape.0 {
                        let mut acc = 0.0;
                        for k in 0..repeat {
                            acc += g[[0, r * repeat + k]];
                        }
                        slot[[r, col]] += acc;
                    }
                }
            }
            // keep input adjoints for the caller
            if matches!(node.op, Op::Input) {
                adj[id] = Some(g);
            }
        }
        Ok(Gradients { params: pgrad, nodes: adj })
    }
}

fn accumulate(slot: &mut Option<Array2<f64>>, g: ArrayView2<f64>) {
    match slot {
        Some(a) => *a += &g,
        None => *slot = Some(g.to_owned()),
    }
}
