//! A small reverse-mode differentiation tape over dense `f64` matrices.
//!
//! Every forward pass builds a fresh [`Graph`] borrowing a [`ParamStore`];
//! parameters are bound lazily as leaves and [`Graph::backward`] returns one
//! gradient slot per stored parameter.

use std::rc::Rc;

use ndarray::{s, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Boolean attention mask, `true` = may attend.
pub type Mask = Rc<Array2<bool>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    Normal(f64),
    /// Normal with std `sqrt(2 / (rows + cols))`.
    Xavier,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn add_init<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut R,
    ) -> ParamId {
        let value = match init {
            Init::Zeros => Array2::zeros((rows, cols)),
            Init::Ones => Array2::ones((rows, cols)),
            Init::Normal(std) => sample_normal(rows, cols, std, rng),
            Init::Xavier => sample_normal(rows, cols, (2.0 / (rows + cols) as f64).sqrt(), rng),
        };
        self.add(name, value)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Same names in the same order with the same shapes.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.names == other.names
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.dim() == b.dim())
    }
}

fn sample_normal<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

/// Per-parameter gradients; `None` for parameters the loss never touched.
#[derive(Debug, Clone)]
pub struct Gradients(Vec<Option<Array2<f64>>>);

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients(vec![None; store.len()])
    }

    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.0[id.0].as_ref()
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (mine, theirs) in self.0.iter_mut().zip(&other.0) {
            if let Some(g) = theirs {
                match mine {
                    Some(m) => *m += g,
                    None => *mine = Some(g.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.0.iter_mut().flatten() {
            g.mapv_inplace(|x| x * factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().flatten().all(|g| g.iter().all(|x| x.is_finite()))
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const LN_EPS: f64 = 1e-5;

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gather(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Gelu(Var),
    Tanh(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Array2<f64>,
    },
    Sum(Vec<Var>),
}

struct Node {
    op: Op,
    value: Array2<f64>,
}

pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    bound: Vec<Option<Var>>,
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            bound: vec![None; store.len()],
        }
    }

    fn push(&mut self, op: Op, value: Array2<f64>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Input, value)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.push(Op::Param(id), self.store.get(id).clone());
        self.bound[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(Op::MatMul(a, b), value)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        self.push(Op::Transpose(a), value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), value)
    }

    /// `a` (n×c) plus the single row `b` (1×c) broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(Op::AddRow(a, b), value)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a) * factor;
        self.push(Op::Scale(a, factor), value)
    }

    /// Rows of `table` at `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let value = t.select(Axis(0), ids);
        self.push(Op::Gather(table, ids.to_vec()), value)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|v| self.value(*v).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        self.push(Op::ConcatCols(parts.to_vec()), value)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(Op::SliceCols(a, start), value)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()));
        self.push(Op::Gelu(a), value)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.push(Op::Tanh(a), value)
    }

    /// Row-wise softmax. Masked-out entries get probability exactly zero;
    /// every row must keep at least one entry.
    pub fn softmax(&mut self, a: Var, mask: Option<&Mask>) -> Var {
        let value = softmax_rows(self.value(a), mask.map(|m| m.as_ref()));
        self.push(Op::Softmax(a), value)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let cols = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / cols;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
            inv_std.push(inv);
        }
        let value = &xhat * self.value(gamma) + self.value(beta);
        self.push(
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            value,
        )
    }

    /// `Σ_i weights[i] · −log softmax(logits_i)[targets[i]]` as a 1×1 node.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), targets.len());
        assert_eq!(lv.nrows(), weights.len());
        let probs = softmax_rows(lv, None);
        let mut total = 0.0;
        for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
            if w != 0.0 {
                let row = lv.row(i);
                let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
                total += w * (lse - row[t]);
            }
        }
        self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
            Array2::from_elem((1, 1), total),
        )
    }

    /// Sum of 1×1 nodes.
    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let total: f64 = parts.iter().map(|v| self.scalar(*v)).sum();
        self.push(Op::Sum(parts.to_vec()), Array2::from_elem((1, 1), total))
    }

    /// Gradients of the 1×1 node `loss` with respect to every bound parameter.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        let mut out = Gradients(vec![None; self.store.len()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.0[id.0] = Some(g),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddRow(a, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *a, g);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, f) => acc(&mut grads, *a, g * *f),
                Op::Gather(table, ids) => {
                    let mut gt = Array2::zeros(self.value(*table).dim());
                    for (row, &id) in ids.iter().enumerate() {
                        let mut dst = gt.row_mut(id);
                        dst += &g.row(row);
                    }
                    acc(&mut grads, *table, gt);
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        acc(&mut grads, *p, g.slice(s![.., col..col + w]).to_owned());
                        col += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::Gelu(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(self.value(*a), |gv, &x| {
                        let inner = GELU_C * (x + 0.044715 * x * x * x);
                        let t = inner.tanh();
                        let d = 0.5 * (1.0 + t)
                            + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                        *gv *= d;
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(&node.value, |gv, &y| *gv *= 1.0 - y * y);
                    acc(&mut grads, *a, ga);
                }
                Op::Softmax(a) => {
                    let p = &node.value;
                    let mut ga = &g * p;
                    for (mut row, prow) in ga.rows_mut().into_iter().zip(p.rows()) {
                        let dot = row.sum();
                        row.zip_mut_with(&prow, |v, &pv| *v -= pv * dot);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gamma);
                    let dgamma = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dbeta = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxhat = &g * gv;
                    let cols = xhat.ncols() as f64;
                    let mut dx = Array2::zeros(xhat.dim());
                    for r in 0..xhat.nrows() {
                        let dh = dxhat.row(r);
                        let xh = xhat.row(r);
                        let sum_dh = dh.sum();
                        let sum_dh_xh = dh.dot(&xh);
                        let inv = inv_std[r];
                        for c in 0..xhat.ncols() {
                            dx[[r, c]] = inv / cols * (cols * dh[c] - sum_dh - xh[c] * sum_dh_xh);
                        }
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *gamma, dgamma);
                    acc(&mut grads, *beta, dbeta);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    weights,
                    probs,
                } => {
                    let up = g[[0, 0]];
                    let mut gl = probs.clone();
                    for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        let mut row = gl.row_mut(i);
                        if w == 0.0 {
                            row.fill(0.0);
                        } else {
                            row[t] -= 1.0;
                            row.mapv_inplace(|v| v * w * up);
                        }
                    }
                    acc(&mut grads, *logits, gl);
                }
                Op::Sum(parts) => {
                    for p in parts {
                        acc(&mut grads, *p, g.clone());
                    }
                }
            }
        }
        out
    }
}

/// Numerically stable row-wise softmax with an optional mask.
pub fn softmax_rows(x: &Array2<f64>, mask: Option<&Array2<bool>>) -> Array2<f64> {
    let mut out = x.clone();
    for (r, mut row) in out.rows_mut().into_iter().enumerate() {
        let allowed = |c: usize| mask.is_none_or(|m| m[[r, c]]);
        let mut max = f64::NEG_INFINITY;
        for (c, &v) in row.iter().enumerate() {
            if allowed(c) && v > max {
                max = v;
            }
        }
        let mut total = 0.0;
        for (c, v) in row.iter_mut().enumerate() {
            if allowed(c) {
                *v = (*v - max).exp();
                total += *v;
            } else {
                *v = 0.0;
            }
        }
        row.mapv_inplace(|v| v / total);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central differences of `f` at every scalar of every parameter.
    fn numeric(store: &ParamStore, f: &dyn Fn(&ParamStore) -> f64) -> Vec<Array2<f64>> {
        let h = 1e-6;
        let mut work = store.clone();
        store
            .ids()
            .map(|id| {
                let mut g = Array2::zeros(store.get(id).dim());
                for idx in 0..g.len() {
                    let r = idx / g.ncols();
                    let c = idx % g.ncols();
                    let orig = work.get(id)[[r, c]];
                    work.get_mut(id)[[r, c]] = orig + h;
                    let plus = f(&work);
                    work.get_mut(id)[[r, c]] = orig - h;
                    let minus = f(&work);
                    work.get_mut(id)[[r, c]] = orig;
                    g[[r, c]] = (plus - minus) / (2.0 * h);
                }
                g
            })
            .collect()
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let table = store.add_init("table", 5, 4, Init::Normal(1.0), &mut rng);
        let w = store.add_init("w", 6, 4, Init::Normal(0.5), &mut rng);
        let b = store.add_init("b", 1, 4, Init::Normal(0.5), &mut rng);
        let gamma = store.add_init("gamma", 1, 4, Init::Normal(1.0), &mut rng);
        let beta = store.add_init("beta", 1, 4, Init::Normal(1.0), &mut rng);
        let extra = store.add_init("extra", 3, 2, Init::Normal(1.0), &mut rng);
        let mask: Mask = Rc::new(array![[true, false, true], [true, true, false], [false, false, true]]);

        let f = |st: &ParamStore| -> (f64, Gradients) {
            let mut g = Graph::new(st);
            let t = g.param(table);
            let e = g.gather(t, &[0, 3, 3]);
            let x = g.param(extra);
            let cat = g.concat_cols(&[e, x]);
            let wv = g.param(w);
            let h = g.matmul(cat, wv);
            let bv = g.param(b);
            let h = g.add_row(h, bv);
            let h = g.gelu(h);
            let ht = g.transpose(h);
            let scores = g.matmul(h, ht);
            let scores = g.scale(scores, 0.5);
            let p = g.softmax(scores, Some(&mask));
            let mixed = g.matmul(p, h);
            let left = g.slice_cols(mixed, 1, 3);
            let right = g.slice_cols(h, 0, 2);
            let both = g.add(left, right);
            let both = g.tanh(both);
            let both = g.concat_cols(&[both, right]);
            let (ga, be) = (g.param(gamma), g.param(beta));
            let n = g.layer_norm(both, ga, be);
            let l1 = g.cross_entropy(n, &[1, 0, 3], &[0.5, 1.0, 0.0]);
            let l2 = g.cross_entropy(h, &[2, 2, 1], &[1.0, 1.0, 1.0]);
            let loss = g.sum(&[l1, l2]);
            (g.scalar(loss), g.backward(loss))
        };
        let (_, analytic) = f(&store);
        let num = numeric(&store, &|st| f(st).0);
        for id in store.ids() {
            let a = analytic.get(id).expect("every param used");
            for (x, y) in a.iter().zip(num[id.0].iter()) {
                let denom = x.abs().max(y.abs()).max(1e-6);
                assert!((x - y).abs() / denom < 1e-5, "{}: {x} vs {y}", store.name(id));
            }
        }
    }

    #[test]
    fn masked_softmax_zeroes_and_normalizes() {
        let x = array![[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]];
        let m = array![[true, false, true], [false, true, false]];
        let p = softmax_rows(&x, Some(&m));
        assert_eq!(p[[0, 1]], 0.0);
        assert_eq!(p[[1, 1]], 1.0);
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
