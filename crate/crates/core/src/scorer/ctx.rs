//! One forward-model definition, two execution backends.
//!
//! [`MathCtx`] is the small vector-op vocabulary the model is written
//! against. [`EvalCtx`] computes plain arrays for inference; [`TapeCtx`]
//! records every op and replays the tape backwards for exact gradients.
//! Writing the forward pass once keeps training and search numerically
//! identical.

use ndarray::Array1;

use super::params::{GradStore, ParamId, ParamStore};
use super::scalar::Scalar;

pub trait MathCtx<F: Scalar> {
    type V: Clone;

    /// One row of a parameter matrix (embedding lookup / bias row).
    fn param_row(&mut self, p: ParamId, row: usize) -> Self::V;
    /// Full-matrix product `W x`.
    fn matvec(&mut self, p: ParamId, x: &Self::V) -> Self::V;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn concat(&mut self, parts: &[Self::V]) -> Self::V;
    fn slice(&mut self, x: &Self::V, start: usize, len: usize) -> Self::V;
    fn sigmoid(&mut self, x: &Self::V) -> Self::V;
    fn tanh(&mut self, x: &Self::V) -> Self::V;
    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    /// Elementwise product with a constant (dropout masks).
    fn mul_const(&mut self, x: &Self::V, c: Array1<F>) -> Self::V;
    /// Dot product, returned as a length-1 vector.
    fn dot(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn softmax(&mut self, x: &Self::V) -> Self::V;
    fn log_softmax(&mut self, x: &Self::V) -> Self::V;
    /// log(sum(exp(x))), returned as a length-1 vector.
    fn logsumexp(&mut self, x: &Self::V) -> Self::V;
    /// Element `i`, returned as a length-1 vector.
    fn index(&mut self, x: &Self::V, i: usize) -> Self::V;
    /// Sum of all elements, returned as a length-1 vector.
    fn sum(&mut self, x: &Self::V) -> Self::V;
    /// `sum_i weights[i] * items[i]` (attention-style context).
    fn weighted_sum(&mut self, weights: &Self::V, items: &[Self::V]) -> Self::V;
    fn zeros(&mut self, n: usize) -> Self::V;
    fn constant(&mut self, a: Array1<F>) -> Self::V;

    fn value(&self, v: &Self::V) -> Array1<F>;
    fn len_of(&self, v: &Self::V) -> usize;
    fn scalar_value(&self, v: &Self::V) -> F {
        self.value(v)[0]
    }
}

fn softmax_arr<F: Scalar>(x: &Array1<F>) -> Array1<F> {
    let max = x.iter().cloned().fold(F::neg_infinity(), F::max);
    let exps = x.mapv(|v| (v - max).exp());
    let sum = exps.sum();
    exps.mapv(|v| v / sum)
}

fn logsumexp_arr<F: Scalar>(x: &Array1<F>) -> F {
    let max = x.iter().cloned().fold(F::neg_infinity(), F::max);
    if max == F::neg_infinity() {
        return max;
    }
    max + x.mapv(|v| (v - max).exp()).sum().ln()
}

/// Plain evaluation: values are arrays, nothing is recorded.
pub struct EvalCtx<'p, F: Scalar> {
    params: &'p ParamStore<F>,
}

impl<'p, F: Scalar> EvalCtx<'p, F> {
    pub fn new(params: &'p ParamStore<F>) -> Self {
        EvalCtx { params }
    }
}

impl<'p, F: Scalar> MathCtx<F> for EvalCtx<'p, F> {
    type V = Array1<F>;

    fn param_row(&mut self, p: ParamId, row: usize) -> Array1<F> {
        self.params.row(p, row).to_owned()
    }

    fn matvec(&mut self, p: ParamId, x: &Array1<F>) -> Array1<F> {
        self.params.value(p).dot(x)
    }

    fn add(&mut self, a: &Array1<F>, b: &Array1<F>) -> Array1<F> {
        a + b
    }

    fn concat(&mut self, parts: &[Array1<F>]) -> Array1<F> {
        let total: usize = parts.iter().map(|p| p.len()).sum();
        let mut out = Array1::zeros(total);
        let mut at = 0;
        for p in parts {
            out.slice_mut(ndarray::s![at..at + p.len()]).assign(p);
            at += p.len();
        }
        out
    }

    fn slice(&mut self, x: &Array1<F>, start: usize, len: usize) -> Array1<F> {
        x.slice(ndarray::s![start..start + len]).to_owned()
    }

    fn sigmoid(&mut self, x: &Array1<F>) -> Array1<F> {
        x.mapv(|v| F::one() / (F::one() + (-v).exp()))
    }

    fn tanh(&mut self, x: &Array1<F>) -> Array1<F> {
        x.mapv(|v| v.tanh())
    }

    fn mul(&mut self, a: &Array1<F>, b: &Array1<F>) -> Array1<F> {
        a * b
    }

    fn mul_const(&mut self, x: &Array1<F>, c: Array1<F>) -> Array1<F> {
        x * &c
    }

    fn dot(&mut self, a: &Array1<F>, b: &Array1<F>) -> Array1<F> {
        ndarray::arr1(&[a.dot(b)])
    }

    fn softmax(&mut self, x: &Array1<F>) -> Array1<F> {
        softmax_arr(x)
    }

    fn log_softmax(&mut self, x: &Array1<F>) -> Array1<F> {
        let lse = logsumexp_arr(x);
        x.mapv(|v| v - lse)
    }

    fn logsumexp(&mut self, x: &Array1<F>) -> Array1<F> {
        ndarray::arr1(&[logsumexp_arr(x)])
    }

    fn index(&mut self, x: &Array1<F>, i: usize) -> Array1<F> {
        ndarray::arr1(&[x[i]])
    }

    fn sum(&mut self, x: &Array1<F>) -> Array1<F> {
        ndarray::arr1(&[x.sum()])
    }

    fn weighted_sum(&mut self, weights: &Array1<F>, items: &[Array1<F>]) -> Array1<F> {
        debug_assert_eq!(weights.len(), items.len());
        let mut out = Array1::zeros(items[0].len());
        for (w, item) in weights.iter().zip(items) {
            out.scaled_add(*w, item);
        }
        out
    }

    fn zeros(&mut self, n: usize) -> Array1<F> {
        Array1::zeros(n)
    }

    fn constant(&mut self, a: Array1<F>) -> Array1<F> {
        a
    }

    fn value(&self, v: &Array1<F>) -> Array1<F> {
        v.clone()
    }

    fn len_of(&self, v: &Array1<F>) -> usize {
        v.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op<F: Scalar> {
    Leaf,
    ParamRow(ParamId, usize),
    MatVec(ParamId, NodeId),
    Add(NodeId, NodeId),
    Concat(Vec<NodeId>),
    Slice(NodeId, usize),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Mul(NodeId, NodeId),
    MulConst(NodeId, Array1<F>),
    Dot(NodeId, NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    LogSumExp(NodeId),
    Index(NodeId, usize),
    Sum(NodeId),
    WeightedSum(NodeId, Vec<NodeId>),
}

struct Node<F: Scalar> {
    value: Array1<F>,
    op: Op<F>,
}

/// Recording evaluation: every op lands on a tape that
/// [`TapeCtx::backward`] walks in reverse.
pub struct TapeCtx<'p, F: Scalar> {
    params: &'p ParamStore<F>,
    nodes: Vec<Node<F>>,
}

impl<'p, F: Scalar> TapeCtx<'p, F> {
    pub fn new(params: &'p ParamStore<F>) -> Self {
        TapeCtx {
            params,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Array1<F>, op: Op<F>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Accumulate d(loss)/d(param) into `grads` for a scalar loss node.
    pub fn backward(&self, loss: NodeId, grads: &mut GradStore<F>) {
        debug_assert_eq!(self.nodes[loss.0].value.len(), 1);
        let mut adj: Vec<Option<Array1<F>>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(ndarray::arr1(&[F::one()]));

        for i in (0..self.nodes.len()).rev() {
            let g = match adj[i].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::ParamRow(p, row) => grads.add_row(*p, *row, &g),
                Op::MatVec(p, x) => {
                    let xv = &self.nodes[x.0].value;
                    grads.add_outer(*p, &g, xv);
                    let gx = self.params.value(*p).t().dot(&g);
                    accumulate(&mut adj[x.0], gx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj[a.0], g.clone());
                    accumulate(&mut adj[b.0], g);
                }
                Op::Concat(parts) => {
                    let mut at = 0;
                    for part in parts {
                        let len = self.nodes[part.0].value.len();
                        let piece = g.slice(ndarray::s![at..at + len]).to_owned();
                        accumulate(&mut adj[part.0], piece);
                        at += len;
                    }
                }
                Op::Slice(x, start) => {
                    let mut gx = Array1::zeros(self.nodes[x.0].value.len());
                    gx.slice_mut(ndarray::s![*start..*start + g.len()]).assign(&g);
                    accumulate(&mut adj[x.0], gx);
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    let gx = &g * &y.mapv(|v| v * (F::one() - v));
                    accumulate(&mut adj[x.0], gx);
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    let gx = &g * &y.mapv(|v| F::one() - v * v);
                    accumulate(&mut adj[x.0], gx);
                }
                Op::Mul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    accumulate(&mut adj[a.0], &g * bv);
                    accumulate(&mut adj[b.0], &g * av);
                }
                Op::MulConst(x, c) => {
                    accumulate(&mut adj[x.0], &g * c);
                }
                Op::Dot(a, b) => {
                    let s = g[0];
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    accumulate(&mut adj[a.0], bv.mapv(|v| v * s));
                    accumulate(&mut adj[b.0], av.mapv(|v| v * s));
                }
                Op::Softmax(x) => {
                    // dx = y * (g - <y, g>)
                    let y = &node.value;
                    let inner = y.dot(&g);
                    let gx = y * &g.mapv(|v| v - inner);
                    accumulate(&mut adj[x.0], gx);
                }
                Op::LogSoftmax(x) => {
                    // dx = g - softmax(x) * sum(g); softmax(x) = exp(y)
                    let total = g.sum();
                    let gx = &g - &node.value.mapv(|v| v.exp() * total);
                    accumulate(&mut adj[x.0], gx);
                }
                Op::LogSumExp(x) => {
                    let s = g[0];
                    let sm = softmax_arr(&self.nodes[x.0].value);
                    accumulate(&mut adj[x.0], sm.mapv(|v| v * s));
                }
                Op::Index(x, at) => {
                    let mut gx = Array1::zeros(self.nodes[x.0].value.len());
                    gx[*at] = g[0];
                    accumulate(&mut adj[x.0], gx);
                }
                Op::Sum(x) => {
                    let gx = Array1::from_elem(self.nodes[x.0].value.len(), g[0]);
                    accumulate(&mut adj[x.0], gx);
                }
                Op::WeightedSum(w, items) => {
                    let wv = &self.nodes[w.0].value;
                    let mut gw = Array1::zeros(wv.len());
                    for (k, item) in items.iter().enumerate() {
                        let iv = &self.nodes[item.0].value;
                        gw[k] = iv.dot(&g);
                        accumulate(&mut adj[item.0], g.mapv(|v| v * wv[k]));
                    }
                    accumulate(&mut adj[w.0], gw);
                }
            }
        }
    }
}

fn accumulate<F: Scalar>(slot: &mut Option<Array1<F>>, g: Array1<F>) {
    match slot {
        Some(existing) => *existing += &g,
        None => *slot = Some(g),
    }
}

impl<'p, F: Scalar> MathCtx<F> for TapeCtx<'p, F> {
    type V = NodeId;

    fn param_row(&mut self, p: ParamId, row: usize) -> NodeId {
        let value = self.params.row(p, row).to_owned();
        self.push(value, Op::ParamRow(p, row))
    }

    fn matvec(&mut self, p: ParamId, x: &NodeId) -> NodeId {
        let value = self.params.value(p).dot(&self.nodes[x.0].value);
        self.push(value, Op::MatVec(p, *x))
    }

    fn add(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(value, Op::Add(*a, *b))
    }

    fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let total: usize = parts.iter().map(|p| self.nodes[p.0].value.len()).sum();
        let mut out = Array1::zeros(total);
        let mut at = 0;
        for p in parts {
            let v = &self.nodes[p.0].value;
            out.slice_mut(ndarray::s![at..at + v.len()]).assign(v);
            at += v.len();
        }
        self.push(out, Op::Concat(parts.to_vec()))
    }

    fn slice(&mut self, x: &NodeId, start: usize, len: usize) -> NodeId {
        let value = self.nodes[x.0]
            .value
            .slice(ndarray::s![start..start + len])
            .to_owned();
        self.push(value, Op::Slice(*x, start))
    }

    fn sigmoid(&mut self, x: &NodeId) -> NodeId {
        let value = self.nodes[x.0]
            .value
            .mapv(|v| F::one() / (F::one() + (-v).exp()));
        self.push(value, Op::Sigmoid(*x))
    }

    fn tanh(&mut self, x: &NodeId) -> NodeId {
        let value = self.nodes[x.0].value.mapv(|v| v.tanh());
        self.push(value, Op::Tanh(*x))
    }

    fn mul(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(value, Op::Mul(*a, *b))
    }

    fn mul_const(&mut self, x: &NodeId, c: Array1<F>) -> NodeId {
        let value = &self.nodes[x.0].value * &c;
        self.push(value, Op::MulConst(*x, c))
    }

    fn dot(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        let value = ndarray::arr1(&[self.nodes[a.0].value.dot(&self.nodes[b.0].value)]);
        self.push(value, Op::Dot(*a, *b))
    }

    fn softmax(&mut self, x: &NodeId) -> NodeId {
        let value = softmax_arr(&self.nodes[x.0].value);
        self.push(value, Op::Softmax(*x))
    }

    fn log_softmax(&mut self, x: &NodeId) -> NodeId {
        let lse = logsumexp_arr(&self.nodes[x.0].value);
        let value = self.nodes[x.0].value.mapv(|v| v - lse);
        self.push(value, Op::LogSoftmax(*x))
    }

    fn logsumexp(&mut self, x: &NodeId) -> NodeId {
        let value = ndarray::arr1(&[logsumexp_arr(&self.nodes[x.0].value)]);
        self.push(value, Op::LogSumExp(*x))
    }

    fn index(&mut self, x: &NodeId, i: usize) -> NodeId {
        let value = ndarray::arr1(&[self.nodes[x.0].value[i]]);
        self.push(value, Op::Index(*x, i))
    }

    fn sum(&mut self, x: &NodeId) -> NodeId {
        let value = ndarray::arr1(&[self.nodes[x.0].value.sum()]);
        self.push(value, Op::Sum(*x))
    }

    fn weighted_sum(&mut self, weights: &NodeId, items: &[NodeId]) -> NodeId {
        let wv = self.nodes[weights.0].value.clone();
        debug_assert_eq!(wv.len(), items.len());
        let mut out = Array1::zeros(self.nodes[items[0].0].value.len());
        for (w, item) in wv.iter().zip(items) {
            out.scaled_add(*w, &self.nodes[item.0].value);
        }
        self.push(out, Op::WeightedSum(*weights, items.to_vec()))
    }

    fn zeros(&mut self, n: usize) -> NodeId {
        self.push(Array1::zeros(n), Op::Leaf)
    }

    fn constant(&mut self, a: Array1<F>) -> NodeId {
        self.push(a, Op::Leaf)
    }

    fn value(&self, v: &NodeId) -> Array1<F> {
        self.nodes[v.0].value.clone()
    }

    fn len_of(&self, v: &NodeId) -> usize {
        self.nodes[v.0].value.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Tiny closed-form check: loss = logsumexp(W x) picked through the
    /// full op set, gradient vs central differences.
    #[test]
    fn tape_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut params: ParamStore<f64> = ParamStore::new();
        let w = params.add_uniform("w", 4, 3, 0.5, &mut rng);
        let b = params.add_uniform("b", 1, 4, 0.5, &mut rng);
        let e = params.add_uniform("e", 5, 3, 0.5, &mut rng);

        let loss_of = |params: &ParamStore<f64>| -> f64 {
            let mut ctx = TapeCtx::new(params);
            let x = ctx.param_row(e, 2);
            let y = ctx.param_row(e, 4);
            let wx = ctx.matvec(w, &x);
            let bias = ctx.param_row(b, 0);
            let z = ctx.add(&wx, &bias);
            let s = ctx.sigmoid(&z);
            let t = ctx.tanh(&z);
            let m = ctx.mul(&s, &t);
            let sm = ctx.log_softmax(&m);
            let i0 = ctx.index(&sm, 1);
            let wy = ctx.matvec(w, &y);
            let d = ctx.dot(&m, &wy);
            let joined = ctx.concat(&[i0, d]);
            let lse = ctx.logsumexp(&joined);
            ctx.scalar_value(&lse)
        };

        // analytic
        let mut ctx = TapeCtx::new(&params);
        let x = ctx.param_row(e, 2);
        let y = ctx.param_row(e, 4);
        let wx = ctx.matvec(w, &x);
        let bias = ctx.param_row(b, 0);
        let z = ctx.add(&wx, &bias);
        let s = ctx.sigmoid(&z);
        let t = ctx.tanh(&z);
        let m = ctx.mul(&s, &t);
        let sm = ctx.log_softmax(&m);
        let i0 = ctx.index(&sm, 1);
        let wy = ctx.matvec(w, &y);
        let d = ctx.dot(&m, &wy);
        let joined = ctx.concat(&[i0, d]);
        let lse = ctx.logsumexp(&joined);
        let mut grads = GradStore::zeros_like(&params);
        ctx.backward(lse, &mut grads);

        let eps = 1e-6;
        for at in 0..params.scalar_count() {
            let orig = params.get_flat(at);
            params.set_flat(at, orig + eps);
            let up = loss_of(&params);
            params.set_flat(at, orig - eps);
            let down = loss_of(&params);
            params.set_flat(at, orig);
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads.get_flat(at);
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4);
            assert!(
                err < 1e-6,
                "param {at}: analytic {analytic} vs numeric {numeric}"
            );
        }
    }

    #[test]
    fn eval_and_tape_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut params: ParamStore<f64> = ParamStore::new();
        let w = params.add_uniform("w", 3, 3, 0.5, &mut rng);
        let e = params.add_uniform("e", 2, 3, 0.5, &mut rng);

        let mut eval = EvalCtx::new(&params);
        let mut tape = TapeCtx::new(&params);

        let xe = eval.param_row(e, 0);
        let xt = tape.param_row(e, 0);
        let ae = eval.matvec(w, &xe);
        let at = tape.matvec(w, &xt);
        let se = eval.softmax(&ae);
        let st = tape.softmax(&at);
        assert_eq!(eval.value(&se), tape.value(&st));
    }
}
