//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive applied during a forward pass. Each
//! node keeps its value and the inputs it was computed from; [`Tape::backward`]
//! sweeps the record in reverse and accumulates adjoints. Parameters enter the
//! tape by reference, so building a tape never copies the parameter set.
//!
//! Besides the elementwise and matrix primitives there are two composite
//! primitives: a tanh recurrent layer with its own backpropagation-through-time
//! rule, and [`Tape::fused_scalar`], which records a scalar-valued function
//! together with its precomputed partial derivatives.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::numcore::tensor::{ParamSet, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Gather { table: Var, ids: Vec<usize> },
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sum(Var),
    ConcatCols(Var, Var),
    Recurrent {
        input: Var,
        w_in: Var,
        w_hid: Var,
        bias: Var,
        reverse: bool,
    },
    Fused {
        name: &'static str,
        inputs: Vec<Var>,
        partials: Vec<Tensor>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Gather { .. } => "gather",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Tanh(_) => "tanh",
            Op::Sum(_) => "sum",
            Op::ConcatCols(..) => "concat_cols",
            Op::Recurrent { .. } => "recurrent",
            Op::Fused { name, .. } => name,
        }
    }
}

#[derive(Debug)]
struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
}

/// Computation record for one forward pass.
///
/// Confined to the thread that builds it; independent tapes can run in
/// parallel.
#[derive(Debug, Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
    params: Vec<(String, Var)>,
    fault: Option<String>,
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
            fault: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, Tensor>, op: Op) -> Var {
        if self.fault.is_none() && !value.is_finite() {
            self.fault = Some(op.name().to_string());
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Registers a named parameter. Registering the same name twice returns
    /// the existing node.
    pub fn param(&mut self, name: &str, value: &'p Tensor) -> Var {
        if let Some((_, v)) = self.params.iter().find(|(n, _)| n == name) {
            return *v;
        }
        let v = self.push(Cow::Borrowed(value), Op::Leaf);
        self.params.push((name.to_string(), v));
        v
    }

    /// Registers every entry of `params` and returns the handles in
    /// iteration order.
    pub fn params(&mut self, params: &'p ParamSet) -> Vec<(String, Var)> {
        params
            .iter()
            .map(|(name, t)| (name.clone(), self.param(name, t)))
            .collect()
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf)
    }

    pub fn constant_ref(&mut self, value: &'p Tensor) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Fails if any recorded value was non-finite.
    pub fn check(&self) -> Result<()> {
        match &self.fault {
            Some(op) => Err(Error::NonFinite { op: op.clone() }),
            None => Ok(()),
        }
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        assert_eq!(t.shape().len(), 2, "gather expects a matrix table");
        let cols = t.cols();
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            data.extend_from_slice(t.row(id));
        }
        let value = Tensor::from_parts(vec![ids.len(), cols], data);
        self.push(
            Cow::Owned(value),
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = dims2(av);
        let (k2, n) = dims2(bv);
        assert_eq!(k, k2, "matmul inner dimensions differ");
        let mut out = vec![0.0; m * n];
        matmul_into(av.data(), bv.data(), m, k, n, &mut out);
        let value = Tensor::from_parts(vec![m, n], out);
        self.push(Cow::Owned(value), Op::MatMul(a, b))
    }

    /// Adds a bias vector to every row of a matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(bias));
        let cols = av.cols();
        assert_eq!(bv.len(), cols, "bias length must match column count");
        let mut value = av.clone();
        for row in value.data_mut().chunks_mut(cols) {
            for (x, b) in row.iter_mut().zip(bv.data()) {
                *x += b;
            }
        }
        self.push(Cow::Owned(value), Op::AddBias(a, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.zip_values(a, b, |x, y| x + y);
        self.push(Cow::Owned(value), Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.zip_values(a, b, |x, y| x - y);
        self.push(Cow::Owned(value), Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.zip_values(a, b, |x, y| x * y);
        self.push(Cow::Owned(value), Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| factor * x);
        self.push(Cow::Owned(value), Op::Scale(a, factor))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(Cow::Owned(value), Op::Tanh(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(Cow::Owned(value), Op::Sum(a))
    }

    /// Sum of a non-empty list of same-shaped nodes.
    pub fn add_all(&mut self, vars: &[Var]) -> Var {
        let mut acc = vars[0];
        for &v in &vars[1..] {
            acc = self.add(acc, v);
        }
        acc
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let rows = av.rows();
        assert_eq!(rows, bv.rows(), "concat_cols needs equal row counts");
        let (ca, cb) = (av.cols(), bv.cols());
        let mut data = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            data.extend_from_slice(av.row(r));
            data.extend_from_slice(bv.row(r));
        }
        let value = Tensor::from_parts(vec![rows, ca + cb], data);
        self.push(Cow::Owned(value), Op::ConcatCols(a, b))
    }

    /// Elman recurrence `h_t = tanh(x_t W_in + h_prev W_hid + b)` over the
    /// rows of `input`, right to left when `reverse` is set. The initial
    /// state is zero.
    pub fn recurrent(&mut self, input: Var, w_in: Var, w_hid: Var, bias: Var, reverse: bool) -> Var {
        let x = self.value(input);
        let wi = self.value(w_in);
        let wh = self.value(w_hid);
        let b = self.value(bias);
        let (n, d) = dims2(x);
        let (d2, h) = dims2(wi);
        assert_eq!(d, d2, "recurrent input width must match W_in rows");
        assert_eq!(wh.shape(), [h, h], "W_hid must be square");
        assert_eq!(b.len(), h, "recurrent bias length");

        let mut out = vec![0.0; n * h];
        let mut pre = vec![0.0; h];
        let mut state = vec![0.0; h];
        for s in 0..n {
            let t = if reverse { n - 1 - s } else { s };
            pre.copy_from_slice(b.data());
            vec_mat_acc(&x.data()[t * d..(t + 1) * d], wi.data(), h, &mut pre);
            if s > 0 {
                vec_mat_acc(&state, wh.data(), h, &mut pre);
            }
            for (o, a) in state.iter_mut().zip(&pre) {
                *o = a.tanh();
            }
            out[t * h..(t + 1) * h].copy_from_slice(&state);
        }
        let value = Tensor::from_parts(vec![n, h], out);
        self.push(
            Cow::Owned(value),
            Op::Recurrent {
                input,
                w_in,
                w_hid,
                bias,
                reverse,
            },
        )
    }

    /// Records a scalar function of `inputs` whose partial derivatives were
    /// computed by the caller. `partials[i]` must have the shape of
    /// `inputs[i]`.
    pub fn fused_scalar(
        &mut self,
        name: &'static str,
        inputs: &[Var],
        value: f64,
        partials: Vec<Tensor>,
    ) -> Var {
        assert_eq!(inputs.len(), partials.len(), "one partial per input");
        for (v, p) in inputs.iter().zip(&partials) {
            assert_eq!(self.value(*v).shape(), p.shape(), "partial shape for {name}");
        }
        if self.fault.is_none() && partials.iter().any(|p| !p.is_finite()) {
            self.fault = Some(name.to_string());
        }
        self.push(
            Cow::Owned(Tensor::scalar(value)),
            Op::Fused {
                name,
                inputs: inputs.to_vec(),
                partials,
            },
        )
    }

    fn zip_values(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise shapes differ");
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_parts(av.shape().to_vec(), data)
    }

    /// Adjoints of `loss` with respect to every node, `None` where the loss
    /// does not depend on a node.
    pub fn adjoints(&self, loss: Var) -> Result<Vec<Option<Tensor>>> {
        self.check()?;
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_parts(lv.shape().to_vec(), vec![1.0]));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut sink = Sink {
                grads: &mut grads,
                op: node.op.name(),
            };
            self.propagate(&node.op, &node.value, &g, &mut sink)?;
            grads[idx] = Some(g);
        }
        Ok(grads)
    }

    /// Gradient of `loss` for every entry of `params`. Entries that are not on
    /// the tape, or that the loss does not reach, get zero tensors.
    pub fn backward(&self, loss: Var, params: &ParamSet) -> Result<ParamSet> {
        let mut adj = self.adjoints(loss)?;
        let mut out = ParamSet::new();
        for (name, t) in params.iter() {
            let g = self
                .param_var(name)
                .and_then(|v| adj[v.0].take())
                .unwrap_or_else(|| t.zeros_like());
            if g.shape() != t.shape() {
                return Err(Error::shape(name.clone(), t.shape(), g.shape()));
            }
            out.insert(name.clone(), g)?;
        }
        Ok(out)
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, sink: &mut Sink<'_>) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::Gather { table, ids } => {
                let tv = self.value(*table);
                let cols = tv.cols();
                let mut dt = vec![0.0; tv.len()];
                for (r, &id) in ids.iter().enumerate() {
                    for (d, s) in dt[id * cols..(id + 1) * cols].iter_mut().zip(g.row(r)) {
                        *d += s;
                    }
                }
                sink.add(*table, Tensor::from_parts(tv.shape().to_vec(), dt))?;
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = dims2(av);
                let n = bv.cols();
                let mut da = vec![0.0; m * k];
                matmul_bt_into(g.data(), bv.data(), m, n, k, &mut da);
                let mut db = vec![0.0; k * n];
                matmul_at_into(av.data(), g.data(), m, k, n, &mut db);
                sink.add(*a, Tensor::from_parts(vec![m, k], da))?;
                sink.add(*b, Tensor::from_parts(bv.shape().to_vec(), db))?;
            }
            Op::AddBias(a, bias) => {
                let cols = g.cols();
                let mut db = vec![0.0; cols];
                for row in g.data().chunks(cols) {
                    for (d, s) in db.iter_mut().zip(row) {
                        *d += s;
                    }
                }
                sink.add(*a, g.clone())?;
                let shape = self.value(*bias).shape().to_vec();
                sink.add(*bias, Tensor::from_parts(shape, db))?;
            }
            Op::Add(a, b) => {
                sink.add(*a, g.clone())?;
                sink.add(*b, g.clone())?;
            }
            Op::Sub(a, b) => {
                sink.add(*a, g.clone())?;
                sink.add(*b, g.map(|x| -x))?;
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                sink.add(*a, elementwise(g, bv, |x, y| x * y))?;
                sink.add(*b, elementwise(g, av, |x, y| x * y))?;
            }
            Op::Scale(a, factor) => sink.add(*a, g.map(|x| factor * x))?,
            Op::Tanh(a) => sink.add(*a, elementwise(g, out, |x, y| x * (1.0 - y * y)))?,
            Op::Sum(a) => {
                let shape = self.value(*a).shape();
                sink.add(*a, Tensor::full(shape, g.item()))?;
            }
            Op::ConcatCols(a, b) => {
                let (ca, cb) = (self.value(*a).cols(), self.value(*b).cols());
                let rows = g.rows();
                let mut da = Vec::with_capacity(rows * ca);
                let mut db = Vec::with_capacity(rows * cb);
                for r in 0..rows {
                    let row = g.row(r);
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                sink.add(*a, Tensor::from_parts(vec![rows, ca], da))?;
                sink.add(*b, Tensor::from_parts(vec![rows, cb], db))?;
            }
            Op::Recurrent {
                input,
                w_in,
                w_hid,
                bias,
                reverse,
            } => {
                let grads = recurrent_backward(
                    self.value(*input),
                    self.value(*w_in),
                    self.value(*w_hid),
                    out,
                    g,
                    *reverse,
                );
                let [dx, dwi, dwh, db] = grads;
                sink.add(*input, dx)?;
                sink.add(*w_in, dwi)?;
                sink.add(*w_hid, dwh)?;
                let shape = self.value(*bias).shape().to_vec();
                sink.add(*bias, Tensor::from_parts(shape, db.into_data()))?;
            }
            Op::Fused {
                inputs, partials, ..
            } => {
                let upstream = g.item();
                for (v, p) in inputs.iter().zip(partials) {
                    sink.add(*v, p.map(|x| upstream * x))?;
                }
            }
        }
        Ok(())
    }
}

struct Sink<'a> {
    grads: &'a mut Vec<Option<Tensor>>,
    op: &'static str,
}

impl Sink<'_> {
    fn add(&mut self, v: Var, contribution: Tensor) -> Result<()> {
        if !contribution.is_finite() {
            return Err(Error::NonFinite {
                op: format!("{} (backward)", self.op),
            });
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.add_scaled(&contribution, 1.0),
            slot @ None => *slot = Some(contribution),
        }
        Ok(())
    }
}

fn dims2(t: &Tensor) -> (usize, usize) {
    assert_eq!(t.shape().len(), 2, "expected a matrix, got shape {:?}", t.shape());
    (t.shape()[0], t.shape()[1])
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

/// `out += x · W` for a row vector `x` and a row-major `W` with `cols` columns.
fn vec_mat_acc(x: &[f64], w: &[f64], cols: usize, out: &mut [f64]) {
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (o, wij) in out.iter_mut().zip(&w[i * cols..(i + 1) * cols]) {
            *o += xi * wij;
        }
    }
}

/// `out += W · y` where `W` is row-major `rows × cols`.
fn mat_vec_acc(w: &[f64], y: &[f64], cols: usize, out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(w.chunks(cols)) {
        *o += row.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out = A(m×k) · B(k×n)`.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        row.iter_mut().for_each(|v| *v = 0.0);
        vec_mat_acc(&a[i * k..(i + 1) * k], b, n, row);
    }
}

/// `out = G(m×n) · Bᵀ` where `B` is `k×n`.
fn matmul_bt_into(g: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    for i in 0..m {
        let gi = &g[i * n..(i + 1) * n];
        for j in 0..k {
            out[i * k + j] = gi.iter().zip(&b[j * n..(j + 1) * n]).map(|(x, y)| x * y).sum();
        }
    }
}

/// `out = Aᵀ · G` where `A` is `m×k` and `G` is `m×n`.
fn matmul_at_into(a: &[f64], g: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let gi = &g[i * n..(i + 1) * n];
        for j in 0..k {
            let aij = a[i * k + j];
            if aij == 0.0 {
                continue;
            }
            for (o, v) in out[j * n..(j + 1) * n].iter_mut().zip(gi) {
                *o += aij * v;
            }
        }
    }
}

/// Backpropagation through time for [`Tape::recurrent`].
fn recurrent_backward(
    x: &Tensor,
    w_in: &Tensor,
    w_hid: &Tensor,
    hidden: &Tensor,
    g: &Tensor,
    reverse: bool,
) -> [Tensor; 4] {
    let (n, d) = dims2(x);
    let h = w_hid.rows();
    let mut dx = vec![0.0; n * d];
    let mut dwi = vec![0.0; d * h];
    let mut dwh = vec![0.0; h * h];
    let mut db = vec![0.0; h];
    let mut carry = vec![0.0; h];
    let mut da = vec![0.0; h];
    let order = |s: usize| if reverse { n - 1 - s } else { s };

    for s in (0..n).rev() {
        let t = order(s);
        let ht = hidden.row(t);
        for j in 0..h {
            let dh = g.row(t)[j] + carry[j];
            da[j] = dh * (1.0 - ht[j] * ht[j]);
            db[j] += da[j];
        }
        let xt = x.row(t);
        for (i, &xi) in xt.iter().enumerate() {
            for (o, a) in dwi[i * h..(i + 1) * h].iter_mut().zip(&da) {
                *o += xi * a;
            }
        }
        mat_vec_acc(w_in.data(), &da, h, &mut dx[t * d..(t + 1) * d]);
        carry.iter_mut().for_each(|c| *c = 0.0);
        if s > 0 {
            let prev = hidden.row(order(s - 1));
            for (i, &pi) in prev.iter().enumerate() {
                for (o, a) in dwh[i * h..(i + 1) * h].iter_mut().zip(&da) {
                    *o += pi * a;
                }
            }
            mat_vec_acc(w_hid.data(), &da, h, &mut carry);
        }
    }
    [
        Tensor::from_parts(vec![n, d], dx),
        Tensor::from_parts(vec![d, h], dwi),
        Tensor::from_parts(vec![h, h], dwh),
        Tensor::from_parts(vec![h], db),
    ]
}

/// Computes `loss_fn` on a fresh tape and returns its value and gradient.
pub fn value_and_grad<F>(params: &ParamSet, loss_fn: F) -> Result<(f64, ParamSet)>
where
    F: for<'p> FnOnce(&mut Tape<'p>, &'p ParamSet) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, params)?;
    tape.check()?;
    let grads = tape.backward(loss, params)?;
    Ok((tape.value(loss).item(), grads))
}
