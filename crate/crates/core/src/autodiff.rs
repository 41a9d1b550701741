//! Reverse-mode differentiation over dense 2-D matrices.
//!
//! A [`Tape`] records every operation of a forward pass in creation order, which is already a
//! topological order of the computation: each node's inputs were pushed before it. Calling
//! [`Tape::backward`] walks the record once in reverse and returns the [`Gradients`] of every
//! parameter and tracked input the loss depends on.
//!
//! Trainable weights live outside the tape in a [`ParamSet`]; [`Tape::param`] copies a weight onto
//! the tape and remembers where it came from so gradients can be routed back with
//! [`ParamSet::accumulate`].

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use ndarray::{Array2, Axis, Zip};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

pub type Matrix = Array2<f64>;

static NEXT_SET_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_set_id() -> u64 {
    NEXT_SET_ID.fetch_add(1, Ordering::Relaxed)
}

/// Index of a parameter inside its [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Globally unique handle of a parameter: owning set plus index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamKey {
    set: u64,
    index: usize,
}

/// Named trainable matrices together with their accumulated gradients.
#[derive(Debug)]
pub struct ParamSet {
    id: u64,
    names: Vec<String>,
    values: Vec<Matrix>,
    grads: Vec<Matrix>,
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl Clone for ParamSet {
    // A clone is an independent set of weights and must not receive the original's gradients.
    fn clone(&self) -> Self {
        ParamSet {
            id: fresh_set_id(),
            names: self.names.clone(),
            values: self.values.clone(),
            grads: self.grads.clone(),
        }
    }
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet {
            id: fresh_set_id(),
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.names.push(name.into());
        self.grads.push(Matrix::zeros(value.raw_dim()));
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn key(&self, id: ParamId) -> ParamKey {
        ParamKey {
            set: self.id,
            index: id.0,
        }
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.grads[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// `(name, value)` pairs in insertion order.
    pub fn named_values(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    /// Adds the gradients that belong to this set; gradients of other sets are ignored.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (key, g) in &grads.params {
            if key.set == self.id {
                self.grads[key.index] += g;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    pub fn grads(&self) -> &[Matrix] {
        &self.grads
    }

    pub(crate) fn values_and_grads_mut(&mut self) -> impl Iterator<Item = (&mut Matrix, &Matrix)> {
        self.values.iter_mut().zip(self.grads.iter())
    }

    /// Total number of scalar weights.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }
}

/// Handle of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamKey),
    MatMul(Var, Var),
    SpMM(Arc<CsrMatrix>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    SelectRows(Var, Vec<usize>),
    ConcatCols(Var, Var),
    SoftmaxXent { logits: Var, targets: Vec<usize>, probs: Matrix },
    BceLogits { logits: Var, targets: Matrix },
    BernoulliLogLik { logits: Var, selected: Vec<bool>, eps: f64 },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    tracked: bool,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Default)]
pub struct Gradients {
    params: HashMap<ParamKey, Matrix>,
    inputs: HashMap<Var, Matrix>,
}

impl Gradients {
    /// Gradient of a tracked input created with [`Tape::input`].
    pub fn input(&self, v: Var) -> Option<&Matrix> {
        self.inputs.get(&v)
    }

    pub fn param(&self, key: ParamKey) -> Option<&Matrix> {
        self.params.get(&key)
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }
}

/// Record of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn add_into(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Logistic function.
pub fn sigmoid(x: f64) -> f64 {
    sigmoid_scalar(x)
}

/// Clamped Bernoulli log-probabilities `(ln p, ln(1-p))` for `p = clamp(σ(z), ε, 1-ε)`, plus
/// whether the clamp was active.
pub fn clamped_log_probs(z: f64, eps: f64) -> (f64, f64, bool) {
    let p = sigmoid_scalar(z);
    if p < eps {
        (eps.ln(), (-eps).ln_1p(), true)
    } else if p > 1.0 - eps {
        ((-eps).ln_1p(), eps.ln(), true)
    } else {
        (-softplus(-z), -softplus(z), false)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// First entry of a node's value; intended for `1×1` losses.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    /// A value that never receives gradients.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.constant(Matrix::from_elem((1, 1), value))
    }

    /// A leaf whose gradient is reported in [`Gradients::input`].
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Copies parameter `id` of `params` onto the tape.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        self.push(params.value(id).clone(), Op::Param(params.key(id)), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(Error::shape("matmul", format!("{ar}x{ac} times {br}x{bc}")));
        }
        let value = self.value(a).dot(self.value(b));
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::MatMul(a, b), tracked))
    }

    /// Sparse-dense product `adj · h`; the sparse values are constants.
    pub fn spmm(&mut self, adj: Arc<CsrMatrix>, h: Var) -> Result<Var> {
        let value = adj.mul_dense(self.value(h).view())?;
        let tracked = self.tracked(h);
        Ok(self.push(value, Op::SpMM(adj, h), tracked))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a) + self.value(b);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Add(a, b), tracked))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a) - self.value(b);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Sub(a, b), tracked))
    }

    /// Adds the `1×c` row `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, ac) = self.shape(a);
        if self.shape(row) != (1, ac) {
            return Err(Error::shape("add_row", format!("row {:?} for {} columns", self.shape(row), ac)));
        }
        let value = self.value(a) + self.value(row);
        let tracked = self.tracked(a) || self.tracked(row);
        Ok(self.push(value, Op::AddRow(a, row), tracked))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a) * self.value(b);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Mul(a, b), tracked))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a) * factor;
        let tracked = self.tracked(a);
        self.push(value, Op::Scale(a, factor), tracked)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        let tracked = self.tracked(a);
        self.push(value, Op::Relu(a), tracked)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid_scalar);
        let tracked = self.tracked(a);
        self.push(value, Op::Sigmoid(a), tracked)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x * x);
        let tracked = self.tracked(a);
        self.push(value, Op::Square(a), tracked)
    }

    /// Sum of all entries as a `1×1` value.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::from_elem((1, 1), self.value(a).sum());
        let tracked = self.tracked(a);
        self.push(value, Op::Sum(a), tracked)
    }

    /// Mean of all entries as a `1×1` value (zero for an empty matrix).
    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mean = if m.is_empty() { 0.0 } else { m.sum() / m.len() as f64 };
        let tracked = self.tracked(a);
        self.push(Matrix::from_elem((1, 1), mean), Op::Mean(a), tracked)
    }

    /// Column means, `r×c → 1×c`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if r == 0 {
            return Err(Error::EmptyInput("mean_rows"));
        }
        let value = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("non-empty")
            .into_shape_with_order((1, c))
            .expect("row vector");
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::MeanRows(a), tracked))
    }

    /// Gathers `rows` of `a` (repetitions allowed).
    pub fn select_rows(&mut self, a: Var, rows: Vec<usize>) -> Result<Var> {
        let (r, _) = self.shape(a);
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::shape("select_rows", format!("row {bad} of {r}")));
        }
        let value = self.value(a).select(Axis(0), &rows);
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::SelectRows(a, rows), tracked))
    }

    /// `[a | b]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, _) = self.shape(a);
        let (br, _) = self.shape(b);
        if ar != br {
            return Err(Error::shape("concat_cols", format!("{ar} rows vs {br} rows")));
        }
        let value = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("row counts checked");
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::ConcatCols(a, b), tracked))
    }

    /// Mean over rows of `-log softmax(logits)[class]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, classes: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(logits);
        if r != classes.len() {
            return Err(Error::shape("softmax_cross_entropy", format!("{r} rows for {} targets", classes.len())));
        }
        if let Some(&bad) = classes.iter().find(|&&k| k >= c) {
            return Err(Error::shape("softmax_cross_entropy", format!("class {bad} with {c} logits")));
        }
        if r == 0 {
            return Err(Error::EmptyInput("softmax_cross_entropy"));
        }
        let x = self.value(logits);
        let mut probs = Matrix::zeros((r, c));
        let mut total = 0.0;
        for i in 0..r {
            let row = x.row(i);
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let denom: f64 = row.iter().map(|&v| (v - max).exp()).sum();
            let log_denom = denom.ln();
            for j in 0..c {
                probs[[i, j]] = ((row[j] - max).exp()) / denom;
            }
            total += log_denom - (row[classes[i]] - max);
        }
        let value = Matrix::from_elem((1, 1), total / r as f64);
        let tracked = self.tracked(logits);
        Ok(self.push(
            value,
            Op::SoftmaxXent {
                logits,
                targets: classes.to_vec(),
                probs,
            },
            tracked,
        ))
    }

    /// Mean over all entries of the logistic loss in its stable logit form.
    pub fn binary_cross_entropy(&mut self, logits: Var, targets: &Matrix) -> Result<Var> {
        if self.shape(logits) != targets.dim() {
            return Err(Error::shape(
                "binary_cross_entropy",
                format!("{:?} logits vs {:?} targets", self.shape(logits), targets.dim()),
            ));
        }
        if targets.is_empty() {
            return Err(Error::EmptyInput("binary_cross_entropy"));
        }
        let x = self.value(logits);
        let total: f64 = Zip::from(x).and(targets).fold(0.0, |acc, &xi, &yi| {
            acc + xi.max(0.0) - xi * yi + (-xi.abs()).exp().ln_1p()
        });
        let value = Matrix::from_elem((1, 1), total / x.len() as f64);
        let tracked = self.tracked(logits);
        Ok(self.push(
            value,
            Op::BceLogits {
                logits,
                targets: targets.clone(),
            },
            tracked,
        ))
    }

    /// Unconditional Bernoulli log-likelihood `Σ s·ln p + (1-s)·ln(1-p)` of a selection mask
    /// under `p = clamp(σ(logits), ε, 1-ε)`. `logits` is `n×1`.
    pub fn bernoulli_log_likelihood(&mut self, logits: Var, selected: &[bool], eps: f64) -> Result<Var> {
        let (r, c) = self.shape(logits);
        if c != 1 || r != selected.len() {
            return Err(Error::shape(
                "bernoulli_log_likelihood",
                format!("{r}x{c} logits for {} selections", selected.len()),
            ));
        }
        let z = self.value(logits);
        let total: f64 = selected
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let (lp, lq, _) = clamped_log_probs(z[[i, 0]], eps);
                if s {
                    lp
                } else {
                    lq
                }
            })
            .sum();
        let tracked = self.tracked(logits);
        Ok(self.push(
            Matrix::from_elem((1, 1), total),
            Op::BernoulliLogLik {
                logits,
                selected: selected.to_vec(),
                eps,
            },
            tracked,
        ))
    }

    /// Reverse pass from a `1×1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::shape("backward", format!("loss of shape {:?} is not scalar", self.shape(loss))));
        }
        let mut grads: Vec<Option<Matrix>> = (0..=loss.0).map(|_| None).collect();
        let mut out = Gradients::default();
        if !self.tracked(loss) {
            return Ok(out);
        }
        grads[loss.0] = Some(Matrix::ones((1, 1)));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let mut send = |v: Var, g: Matrix| {
                if self.tracked(v) {
                    add_into(&mut grads[v.0], g);
                }
            };
            match &node.op {
                Op::Leaf => {
                    out.inputs
                        .entry(Var(idx))
                        .and_modify(|acc| *acc += &g)
                        .or_insert(g);
                }
                Op::Param(key) => {
                    out.params.entry(*key).and_modify(|acc| *acc += &g).or_insert(g);
                }
                Op::MatMul(a, b) => {
                    if self.tracked(*a) {
                        send(*a, g.dot(&self.value(*b).t()));
                    }
                    if self.tracked(*b) {
                        send(*b, self.value(*a).t().dot(&g));
                    }
                }
                Op::SpMM(adj, h) => {
                    send(*h, adj.transpose_mul_dense(g.view())?);
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    send(*a, g.clone());
                    send(*b, -g);
                }
                Op::AddRow(a, row) => {
                    let c = g.ncols();
                    let row_grad = g.sum_axis(Axis(0)).into_shape_with_order((1, c)).expect("row");
                    send(*row, row_grad);
                    send(*a, g);
                }
                Op::Mul(a, b) => {
                    if self.tracked(*a) {
                        send(*a, &g * self.value(*b));
                    }
                    if self.tracked(*b) {
                        send(*b, &g * self.value(*a));
                    }
                }
                Op::Scale(a, factor) => send(*a, g * *factor),
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|gi, &x| if x <= 0.0 { *gi = 0.0 });
                    send(*a, ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|gi, &y| *gi *= y * (1.0 - y));
                    send(*a, ga);
                }
                Op::Square(a) => {
                    let ga = &g * &(self.value(*a) * 2.0);
                    send(*a, ga);
                }
                Op::Sum(a) => {
                    send(*a, Matrix::from_elem(self.value(*a).raw_dim(), g[[0, 0]]));
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len().max(1) as f64;
                    send(*a, Matrix::from_elem(self.value(*a).raw_dim(), g[[0, 0]] / n));
                }
                Op::MeanRows(a) => {
                    let (r, _) = self.shape(*a);
                    let row = &g / r as f64;
                    let ga = row.broadcast(self.value(*a).raw_dim()).expect("broadcast row").to_owned();
                    send(*a, ga);
                }
                Op::SelectRows(a, rows) => {
                    let mut ga = Matrix::zeros(self.value(*a).raw_dim());
                    for (out_row, &src) in rows.iter().enumerate() {
                        let mut target = ga.row_mut(src);
                        target += &g.row(out_row);
                    }
                    send(*a, ga);
                }
                Op::ConcatCols(a, b) => {
                    let split = self.shape(*a).1;
                    if self.tracked(*a) {
                        send(*a, g.slice(ndarray::s![.., ..split]).to_owned());
                    }
                    if self.tracked(*b) {
                        send(*b, g.slice(ndarray::s![.., split..]).to_owned());
                    }
                }
                Op::SoftmaxXent { logits, targets, probs } => {
                    let r = targets.len() as f64;
                    let mut ga = probs.clone();
                    for (i, &k) in targets.iter().enumerate() {
                        ga[[i, k]] -= 1.0;
                    }
                    ga *= g[[0, 0]] / r;
                    send(*logits, ga);
                }
                Op::BceLogits { logits, targets } => {
                    let n = targets.len() as f64;
                    let scale = g[[0, 0]] / n;
                    let mut ga = self.value(*logits).mapv(sigmoid_scalar);
                    ga -= targets;
                    ga *= scale;
                    send(*logits, ga);
                }
                Op::BernoulliLogLik { logits, selected, eps } => {
                    let z = self.value(*logits);
                    let mut ga = Matrix::zeros(z.raw_dim());
                    for (i, &s) in selected.iter().enumerate() {
                        let zi = z[[i, 0]];
                        let (_, _, clamped) = clamped_log_probs(zi, *eps);
                        if !clamped {
                            let p = sigmoid_scalar(zi);
                            ga[[i, 0]] = g[[0, 0]] * (if s { 1.0 } else { 0.0 } - p);
                        }
                    }
                    send(*logits, ga);
                }
            }
        }
        Ok(out)
    }
}
