//! Reverse-mode differentiation over coarse vector operations.
//!
//! A [`Graph`] records every operation of one forward pass. Values are
//! computed eagerly; [`Graph::backward`] walks the tape in reverse and
//! accumulates parameter gradients into a [`Gradients`] buffer.

use super::params::{Gradients, ParamId, ParameterStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Row { table: ParamId, row: usize },
    LinearCols { weight: ParamId, start: usize, input: Var },
    Linear { weight: ParamId, bias: Option<ParamId>, input: Var },
    Concat(Vec<Var>),
    Slice { input: Var, start: usize },
    Add(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Mask { input: Var, mask: Vec<f64> },
    Softmax(Var),
    WeightedSum { weights: Var, items: Vec<Var> },
    Mean(Vec<Var>),
    MarginalNll { scores: Var, gold: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

pub struct Graph<'p> {
    store: &'p ParameterStore,
    nodes: Vec<Node>,
}

pub(crate) fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

pub(crate) fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParameterStore) -> Self {
        Graph {
            store,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn store(&self) -> &'p ParameterStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].value.len(), 1);
        self.nodes[v.0].value[0]
    }

    pub fn dim(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    /// A constant; no gradient flows into it.
    pub fn input(&mut self, values: Vec<f64>) -> Var {
        self.push(values, Op::Input)
    }

    pub fn zeros(&mut self, dim: usize) -> Var {
        self.input(vec![0.0; dim])
    }

    /// A whole parameter array as a vector.
    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.store.values(id).to_vec();
        self.push(value, Op::Param(id))
    }

    /// Row `row` of a `[rows, dim]` table.
    pub fn row(&mut self, table: ParamId, row: usize) -> Var {
        let p = self.store.get(table);
        let dim = p.shape[1];
        let value = p.values[row * dim..(row + 1) * dim].to_vec();
        self.push(value, Op::Row { table, row })
    }

    /// `weight · input + bias` with `weight` of shape `[out, in]`.
    pub fn linear(&mut self, weight: ParamId, bias: Option<ParamId>, input: Var) -> Var {
        let w = self.store.get(weight);
        let (rows, cols) = (w.shape[0], w.shape[1]);
        let x = &self.nodes[input.0].value;
        assert_eq!(x.len(), cols, "linear input dimension for {}", w.name);
        let mut out = match bias {
            Some(b) => self.store.values(b).to_vec(),
            None => vec![0.0; rows],
        };
        for (o, row) in out.iter_mut().zip(w.values.chunks_exact(cols)) {
            *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        self.push(out, Op::Linear { weight, bias, input })
    }

    /// `weight[:, start..start + dim(input)] · input`: one column block of a
    /// layer whose input is a concatenation.
    pub fn linear_cols(&mut self, weight: ParamId, start: usize, input: Var) -> Var {
        let w = self.store.get(weight);
        let cols = w.shape[1];
        let x = &self.nodes[input.0].value;
        assert!(start + x.len() <= cols, "column block outside {}", w.name);
        let out = w
            .values
            .chunks_exact(cols)
            .map(|row| row[start..start + x.len()].iter().zip(x).map(|(a, b)| a * b).sum())
            .collect();
        self.push(out, Op::LinearCols { weight, start, input })
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let total = parts.iter().map(|p| self.nodes[p.0].value.len()).sum();
        let mut value = Vec::with_capacity(total);
        for p in parts {
            value.extend_from_slice(&self.nodes[p.0].value);
        }
        self.push(value, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, input: Var, start: usize, len: usize) -> Var {
        let value = self.nodes[input.0].value[start..start + len].to_vec();
        self.push(value, Op::Slice { input, start })
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(x.len(), y.len(), "elementwise operand dimensions");
        x.iter().zip(y).map(|(p, q)| f(*p, *q)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes[a.0].value.iter().map(|x| f(*x)).collect()
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.map(a, |x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.map(a, sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.map(a, f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mask(&mut self, input: Var, mask: Vec<f64>) -> Var {
        let v: Vec<f64> = self.nodes[input.0].value.iter().zip(&mask).map(|(x, m)| x * m).collect();
        self.push(v, Op::Mask { input, mask })
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let mut v = self.nodes[a.0].value.clone();
        softmax_in_place(&mut v);
        self.push(v, Op::Softmax(a))
    }

    /// `Σ_i weights[i] · items[i]`.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Var {
        let w = &self.nodes[weights.0].value;
        assert_eq!(w.len(), items.len(), "one weight per item");
        let dim = self.nodes[items[0].0].value.len();
        let mut out = vec![0.0; dim];
        for (wi, item) in w.iter().zip(items) {
            for (o, x) in out.iter_mut().zip(&self.nodes[item.0].value) {
                *o += wi * x;
            }
        }
        self.push(out, Op::WeightedSum { weights, items: items.to_vec() })
    }

    pub fn mean(&mut self, items: &[Var]) -> Var {
        assert!(!items.is_empty(), "mean of nothing");
        let dim = self.nodes[items[0].0].value.len();
        let mut out = vec![0.0; dim];
        for item in items {
            for (o, x) in out.iter_mut().zip(&self.nodes[item.0].value) {
                *o += x;
            }
        }
        let n = items.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        self.push(out, Op::Mean(items.to_vec()))
    }

    /// `-ln(Σ_{c ∈ gold} e^{s_c} / Σ_n e^{s_n})` over the entries of `scores`.
    pub fn marginal_nll(&mut self, scores: Var, gold: &[usize]) -> Var {
        assert!(!gold.is_empty(), "marginal likelihood needs a correct entry");
        let s = &self.nodes[scores.0].value;
        let all = log_sum_exp(s.iter().copied());
        let correct = log_sum_exp(gold.iter().map(|&i| s[i]));
        self.push(vec![all - correct], Op::MarginalNll { scores, gold: gold.to_vec() })
    }

    /// Back-propagates from the scalar `output`, adding into `grads`.
    pub fn backward(&self, output: Var, grads: &mut Gradients) {
        let mut adj: Vec<Vec<f64>> = vec![Vec::new(); output.0 + 1];
        debug_assert_eq!(self.nodes[output.0].value.len(), 1);
        adj[output.0] = vec![1.0];

        fn acc(adj: &mut [Vec<f64>], v: Var, dim: usize) -> &mut Vec<f64> {
            let slot = &mut adj[v.0];
            if slot.is_empty() {
                slot.resize(dim, 0.0);
            }
            slot
        }

        for idx in (0..=output.0).rev() {
            if adj[idx].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut adj[idx]);
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    grads.get_mut(*id).iter_mut().zip(&g).for_each(|(d, x)| *d += x);
                }
                Op::LinearCols { weight, start, input } => {
                    let w = self.store.get(*weight);
                    let cols = w.shape[1];
                    let x = &self.nodes[input.0].value;
                    let len = x.len();
                    {
                        let gw = grads.get_mut(*weight);
                        for (gi, grow) in g.iter().zip(gw.chunks_exact_mut(cols)) {
                            if *gi != 0.0 {
                                grow[*start..*start + len].iter_mut().zip(x).for_each(|(d, xv)| *d += gi * xv);
                            }
                        }
                    }
                    if !matches!(self.nodes[input.0].op, Op::Input) {
                        let gx = acc(&mut adj, *input, len);
                        for (gi, wrow) in g.iter().zip(w.values.chunks_exact(cols)) {
                            if *gi != 0.0 {
                                gx.iter_mut().zip(&wrow[*start..*start + len]).for_each(|(d, wv)| *d += gi * wv);
                            }
                        }
                    }
                }
                Op::Row { table, row } => {
                    let dim = g.len();
                    let dst = &mut grads.get_mut(*table)[row * dim..(row + 1) * dim];
                    dst.iter_mut().zip(&g).for_each(|(d, x)| *d += x);
                }
                Op::Linear { weight, bias, input } => {
                    let w = self.store.get(*weight);
                    let cols = w.shape[1];
                    let x = &self.nodes[input.0].value;
                    {
                        let gw = grads.get_mut(*weight);
                        for (gi, grow) in g.iter().zip(gw.chunks_exact_mut(cols)) {
                            if *gi != 0.0 {
                                grow.iter_mut().zip(x).for_each(|(d, xv)| *d += gi * xv);
                            }
                        }
                    }
                    if let Some(b) = bias {
                        grads.get_mut(*b).iter_mut().zip(&g).for_each(|(d, x)| *d += x);
                    }
                    if !matches!(self.nodes[input.0].op, Op::Input) {
                        let gx = acc(&mut adj, *input, cols);
                        for (gi, wrow) in g.iter().zip(w.values.chunks_exact(cols)) {
                            if *gi != 0.0 {
                                gx.iter_mut().zip(wrow).for_each(|(d, wv)| *d += gi * wv);
                            }
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let dim = self.nodes[p.0].value.len();
                        let gp = acc(&mut adj, *p, dim);
                        gp.iter_mut().zip(&g[offset..offset + dim]).for_each(|(d, x)| *d += x);
                        offset += dim;
                    }
                }
                Op::Slice { input, start } => {
                    let dim = self.nodes[input.0].value.len();
                    let gi = acc(&mut adj, *input, dim);
                    gi[*start..*start + g.len()].iter_mut().zip(&g).for_each(|(d, x)| *d += x);
                }
                Op::Add(a, b) => {
                    for v in [a, b] {
                        let gv = acc(&mut adj, *v, g.len());
                        gv.iter_mut().zip(&g).for_each(|(d, x)| *d += x);
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let ga: Vec<f64> = g.iter().zip(vb).map(|(x, y)| x * y).collect();
                    let gb: Vec<f64> = g.iter().zip(va).map(|(x, y)| x * y).collect();
                    acc(&mut adj, *a, g.len()).iter_mut().zip(&ga).for_each(|(d, x)| *d += x);
                    acc(&mut adj, *b, g.len()).iter_mut().zip(&gb).for_each(|(d, x)| *d += x);
                }
                Op::Relu(a) => {
                    let out = &node.value;
                    let ga = acc(&mut adj, *a, g.len());
                    for ((d, x), y) in ga.iter_mut().zip(&g).zip(out) {
                        if *y > 0.0 {
                            *d += x;
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let out = &node.value;
                    let ga = acc(&mut adj, *a, g.len());
                    for ((d, x), y) in ga.iter_mut().zip(&g).zip(out) {
                        *d += x * y * (1.0 - y);
                    }
                }
                Op::Tanh(a) => {
                    let out = &node.value;
                    let ga = acc(&mut adj, *a, g.len());
                    for ((d, x), y) in ga.iter_mut().zip(&g).zip(out) {
                        *d += x * (1.0 - y * y);
                    }
                }
                Op::Mask { input, mask } => {
                    let gi = acc(&mut adj, *input, g.len());
                    for ((d, x), m) in gi.iter_mut().zip(&g).zip(mask) {
                        *d += x * m;
                    }
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let dot: f64 = g.iter().zip(y).map(|(x, p)| x * p).sum();
                    let ga = acc(&mut adj, *a, g.len());
                    for ((d, x), p) in ga.iter_mut().zip(&g).zip(y) {
                        *d += p * (x - dot);
                    }
                }
                Op::WeightedSum { weights, items } => {
                    let w = &self.nodes[weights.0].value;
                    let gw: Vec<f64> = items
                        .iter()
                        .map(|it| self.nodes[it.0].value.iter().zip(&g).map(|(a, b)| a * b).sum())
                        .collect();
                    for (wi, it) in w.iter().zip(items) {
                        let gi = acc(&mut adj, *it, g.len());
                        gi.iter_mut().zip(&g).for_each(|(d, x)| *d += wi * x);
                    }
                    acc(&mut adj, *weights, w.len())
                        .iter_mut()
                        .zip(&gw)
                        .for_each(|(d, x)| *d += x);
                }
                Op::Mean(items) => {
                    let n = items.len() as f64;
                    for it in items {
                        let gi = acc(&mut adj, *it, g.len());
                        gi.iter_mut().zip(&g).for_each(|(d, x)| *d += x / n);
                    }
                }
                Op::MarginalNll { scores, gold } => {
                    let s = &self.nodes[scores.0].value;
                    let mut all = s.clone();
                    softmax_in_place(&mut all);
                    let mut correct: Vec<f64> = gold.iter().map(|&i| s[i]).collect();
                    softmax_in_place(&mut correct);
                    let gs = acc(&mut adj, *scores, s.len());
                    for (d, p) in gs.iter_mut().zip(&all) {
                        *d += g[0] * p;
                    }
                    for (&i, q) in gold.iter().zip(&correct) {
                        gs[i] -= g[0] * q;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: Vec<f64>, shape: &[usize]) -> (ParameterStore, ParamId) {
        let mut s = ParameterStore::new();
        let id = s.add("w", shape, values, true).unwrap();
        (s, id)
    }

    #[test]
    fn linear_forward_and_backward() {
        let (store, w) = store_with(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        let mut g = Graph::new(&store);
        let x = g.input(vec![1.0, 0.5, -1.0]);
        let y = g.linear(w, None, x);
        assert_eq!(g.value(y), &[-1.0, 0.5]);
        let (y0, y1) = (g.slice(y, 0, 1), g.slice(y, 1, 1));
        let weights = g.input(vec![2.0, 0.0]);
        let loss = g.weighted_sum(weights, &[y0, y1]);
        let mut grads = Gradients::zeros_like(&store);
        g.backward(loss, &mut grads);
        assert_eq!(&grads.get(w)[..3], &[2.0, 1.0, -2.0]);
        assert_eq!(&grads.get(w)[3..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant() {
        let store = ParameterStore::new();
        let mut g = Graph::new(&store);
        let a = g.input(vec![1.0, 2.0, 3.0]);
        let b = g.input(vec![101.0, 102.0, 103.0]);
        let (sa, sb) = (g.softmax(a), g.softmax(b));
        let sum: f64 = g.value(sa).iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        for (x, y) in g.value(sa).iter().zip(g.value(sb)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn marginal_nll_of_uniform_scores() {
        let store = ParameterStore::new();
        let mut g = Graph::new(&store);
        let s = g.input(vec![0.3; 4]);
        let l = g.marginal_nll(s, &[2]);
        assert!((g.scalar(l) - 4f64.ln()).abs() < 1e-12);
        let all = g.marginal_nll(s, &[0, 1, 2, 3]);
        assert!(g.scalar(all).abs() < 1e-12);
    }
}
