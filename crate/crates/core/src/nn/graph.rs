//! Reverse-mode automatic differentiation over dense row-major matrices.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] walks the record in reverse and returns the gradient
//! of a scalar output with respect to every parameter and input leaf.
//! Everything is a 2-D `f64` matrix; row vectors are `[1, n]` and scalars
//! are `[1, 1]`.

use std::collections::HashMap;

use ndarray::{s, Array2, Axis};

use super::params::{ParamId, ParamStore};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    /// `[m, n] + [1, n]` broadcast over rows.
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// Matrix times a `[1, 1]` variable.
    ScaleBy(Var, Var),
    Relu(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Mat,
        inv_std: Vec<f64>,
    },
    Gather(Var, Vec<usize>),
    ScatterAdd(Var, Vec<usize>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    Sum(Var),
    Entry(Var, usize, usize),
    PickSum(Var, Vec<(usize, usize)>),
    Log(Var, f64),
}

struct Node {
    value: Option<Mat>,
    op: Op,
}

/// Computation record. Parameter leaves borrow their values from the store.
pub struct Graph<'s> {
    store: Option<&'s ParamStore>,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'s> Graph<'s> {
    /// A graph with no parameter store; only constants and inputs.
    pub fn new() -> Self {
        Graph {
            store: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn with_params(store: &'s ParamStore) -> Self {
        Graph {
            store: Some(store),
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`. Vars created past
    /// that point become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
        self.param_vars.retain(|_, v| v.0 < len);
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(id), None) => self
                .store
                .expect("parameter node without a store")
                .value(*id),
            (_, Some(value)) => value,
            _ => unreachable!("node without a value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// Leaf whose gradient is never requested.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf whose gradient can be read back with [`Gradients::wrt`].
    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        assert!(self.store.is_some(), "graph was built without a parameter store");
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn param_named(&mut self, name: &str) -> Var {
        let id = self
            .store
            .expect("graph was built without a parameter store")
            .id(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.param(id)
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        self.push(value, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) + self.value(row);
        self.push(value, Op::AddRow(a, row))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        self.push(value, Op::Scale(a, c))
    }

    pub fn scale_by(&mut self, a: Var, c: Var) -> Var {
        let k = self.scalar(c);
        let value = self.value(a) * k;
        self.push(value, Op::ScaleBy(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        self.push(value, Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let value = log_softmax_rows(self.value(a));
        self.push(value, Op::LogSoftmax(a))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.dim();
        let mut normed = Mat::zeros((rows, cols));
        let mut inv_std = Vec::with_capacity(rows);
        for (r, row) in xv.outer_iter().enumerate() {
            let mean = row.sum() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for c in 0..cols {
                normed[[r, c]] = (row[c] - mean) * is;
            }
        }
        let value = &normed * self.value(gain) + self.value(bias);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
        )
    }

    /// Rows of `a` selected by `indices` (repeats allowed).
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Var {
        let value = self.value(a).select(Axis(0), indices);
        self.push(value, Op::Gather(a, indices.to_vec()))
    }

    /// `out[indices[i]] += a[i]` into a fresh `[rows, cols]` matrix.
    pub fn scatter_add(&mut self, a: Var, indices: &[usize], rows: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.nrows(), indices.len());
        let mut value = Mat::zeros((rows, av.ncols()));
        for (i, &dst) in indices.iter().enumerate() {
            let mut out = value.row_mut(dst);
            out += &av.row(i);
        }
        self.push(value, Op::ScatterAdd(a, indices.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(value, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|v| self.value(*v).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("row counts differ");
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|v| self.value(*v).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("column counts differ");
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let value = av
            .mean_axis(Axis(0))
            .expect("mean over zero rows")
            .insert_axis(Axis(0));
        self.push(value, Op::MeanRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Mat::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn entry(&mut self, a: Var, row: usize, col: usize) -> Var {
        let value = Mat::from_elem((1, 1), self.value(a)[[row, col]]);
        self.push(value, Op::Entry(a, row, col))
    }

    /// Sum of the selected `(row, col)` entries as a scalar.
    pub fn pick_sum(&mut self, a: Var, picks: &[(usize, usize)]) -> Var {
        let av = self.value(a);
        let total: f64 = picks.iter().map(|&(r, c)| av[[r, c]]).sum();
        self.push(Mat::from_elem((1, 1), total), Op::PickSum(a, picks.to_vec()))
    }

    /// Natural log with the argument clamped from below at `floor`.
    pub fn log(&mut self, a: Var, floor: f64) -> Var {
        let value = self.value(a).mapv(|x| x.max(floor).ln());
        self.push(value, Op::Log(a, floor))
    }

    /// Gradients of the scalar `root` with respect to every node.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.shape(root), (1, 1), "backward root must be a scalar");
        self.backward_seeded(&[(root, Mat::from_elem((1, 1), 1.0))])
    }

    /// Backpropagate from arbitrary upstream gradients.
    pub fn backward_seeded(&self, seeds: &[(Var, Mat)]) -> Gradients {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut last = 0;
        for (v, g) in seeds {
            accumulate(&mut grads, *v, g.clone());
            last = last.max(v.0);
        }
        for i in (0..=last).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut params = HashMap::new();
        for (id, v) in &self.param_vars {
            if let Some(g) = grads[v.0].take() {
                params.insert(*id, g);
            }
        }
        Gradients { nodes: grads, params }
    }

    fn backprop_node(&self, i: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        match &self.nodes[i].op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                accumulate(grads, *a, g.dot(&self.value(*b).t()));
                accumulate(grads, *b, self.value(*a).t().dot(g));
            }
            Op::MatMulT(a, b) => {
                accumulate(grads, *a, g.dot(self.value(*b)));
                accumulate(grads, *b, g.t().dot(self.value(*a)));
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g * self.value(*b));
                accumulate(grads, *b, g * self.value(*a));
            }
            Op::Scale(a, c) => accumulate(grads, *a, g * *c),
            Op::ScaleBy(a, c) => {
                let k = self.scalar(*c);
                accumulate(grads, *a, g * k);
                let dk = (g * self.value(*a)).sum();
                accumulate(grads, *c, Mat::from_elem((1, 1), dk));
            }
            Op::Relu(a) => {
                let mut d = g.clone();
                d.zip_mut_with(self.value(*a), |d, &x| {
                    if x <= 0.0 {
                        *d = 0.0;
                    }
                });
                accumulate(grads, *a, d);
            }
            Op::Softmax(a) => {
                let y = self.nodes[i].value.as_ref().expect("softmax value");
                let mut d = g * y;
                for (mut row, yrow) in d.outer_iter_mut().zip(y.outer_iter()) {
                    let dot: f64 = row.sum();
                    row.zip_mut_with(&yrow, |dv, &yv| *dv -= yv * dot);
                }
                accumulate(grads, *a, d);
            }
            Op::LogSoftmax(a) => {
                let y = self.nodes[i].value.as_ref().expect("log-softmax value");
                let mut d = g.clone();
                for (mut row, yrow) in d.outer_iter_mut().zip(y.outer_iter()) {
                    let total: f64 = row.sum();
                    row.zip_mut_with(&yrow, |dv, &lp| *dv -= lp.exp() * total);
                }
                accumulate(grads, *a, d);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            } => {
                let gv = self.value(*gain);
                accumulate(grads, *bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                accumulate(
                    grads,
                    *gain,
                    (g * normed).sum_axis(Axis(0)).insert_axis(Axis(0)),
                );
                let dn = g * gv;
                let cols = dn.ncols() as f64;
                let mut dx = Mat::zeros(dn.dim());
                for r in 0..dn.nrows() {
                    let drow = dn.row(r);
                    let nrow = normed.row(r);
                    let mean_d = drow.sum() / cols;
                    let mean_dn = drow.iter().zip(nrow.iter()).map(|(a, b)| a * b).sum::<f64>() / cols;
                    for c in 0..dn.ncols() {
                        dx[[r, c]] = inv_std[r] * (drow[c] - mean_d - nrow[c] * mean_dn);
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::Gather(a, indices) => {
                let mut d = Mat::zeros(self.value(*a).dim());
                for (row, &src) in indices.iter().enumerate() {
                    let mut out = d.row_mut(src);
                    out += &g.row(row);
                }
                accumulate(grads, *a, d);
            }
            Op::ScatterAdd(a, indices) => {
                accumulate(grads, *a, g.select(Axis(0), indices));
            }
            Op::SliceCols(a, start) => {
                let mut d = Mat::zeros(self.value(*a).dim());
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                accumulate(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).ncols();
                    accumulate(grads, *p, g.slice(s![.., offset..offset + w]).to_owned());
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let h = self.value(*p).nrows();
                    accumulate(grads, *p, g.slice(s![offset..offset + h, ..]).to_owned());
                    offset += h;
                }
            }
            Op::MeanRows(a) => {
                let (rows, cols) = self.value(*a).dim();
                let row = g.row(0).to_owned() / rows as f64;
                let d = row.broadcast((rows, cols)).expect("broadcast").to_owned();
                accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let d = Mat::from_elem(self.value(*a).dim(), g[[0, 0]]);
                accumulate(grads, *a, d);
            }
            Op::Entry(a, r, c) => {
                let mut d = Mat::zeros(self.value(*a).dim());
                d[[*r, *c]] = g[[0, 0]];
                accumulate(grads, *a, d);
            }
            Op::PickSum(a, picks) => {
                let mut d = Mat::zeros(self.value(*a).dim());
                for &(r, c) in picks {
                    d[[r, c]] += g[[0, 0]];
                }
                accumulate(grads, *a, d);
            }
            Op::Log(a, floor) => {
                let mut d = g.clone();
                d.zip_mut_with(self.value(*a), |dv, &x| {
                    *dv = if x > *floor { *dv / x } else { 0.0 };
                });
                accumulate(grads, *a, d);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot => *slot = Some(g),
    }
}

/// Result of a backward pass.
pub struct Gradients {
    nodes: Vec<Option<Mat>>,
    params: HashMap<ParamId, Mat>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.nodes[v.0].as_ref()
    }

    pub fn param(&self, id: ParamId) -> Option<&Mat> {
        self.params.get(&id)
    }

    pub fn into_params(self) -> HashMap<ParamId, Mat> {
        self.params
    }
}

/// Row-wise softmax; `-inf` entries map to exactly zero.
pub fn softmax_rows(x: &Mat) -> Mat {
    let mut out = x.clone();
    for mut row in out.outer_iter_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    out
}

pub fn log_softmax_rows(x: &Mat) -> Mat {
    let mut out = x.clone();
    for mut row in out.outer_iter_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}
