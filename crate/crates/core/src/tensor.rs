//! Dense `f64` arrays and a reverse-mode differentiation tape.
//!
//! The op set is closed: it covers the memory network forward pass and the
//! closed-form divergence, nothing more. Tensors are at most two-dimensional
//! in practice; a 1-element tensor broadcasts against anything in `add`,
//! `sub` and `mul`, and a length-`n` vector broadcasts over the rows of an
//! `m × n` matrix.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tmath;

/// Floor applied to the target probability inside [`Tape::nll`].
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::shape(
                "Tensor::new",
                format!("zero-sized dimension in {shape:?}"),
            ));
        }
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!(
                    "shape {shape:?} needs {expected} values, got {}",
                    values.len()
                ),
            ));
        }
        Ok(Tensor { shape, values })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            values: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            values: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            values: vec![value],
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![values.len()],
            values,
        }
    }

    /// Column vector, `n × 1`.
    pub fn column(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![values.len(), 1],
            values,
        }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The single value of a 1-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.values.len(), 1);
        self.values[0]
    }

    /// `(rows, cols)`, treating a 1-D tensor as a column.
    pub fn dims2(&self) -> Option<(usize, usize)> {
        match self.shape.as_slice() {
            [n] => Some((*n, 1)),
            [r, c] => Some((*r, *c)),
            _ => None,
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let cols = self.dims2().map_or(1, |(_, c)| c);
        &self.values[r * cols..(r + 1) * cols]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn squared_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.values)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Broadcast {
    Same,
    Scalar,
    Row(usize),
}

impl Broadcast {
    fn resolve(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Self> {
        if a.shape == b.shape {
            return Ok(Broadcast::Same);
        }
        if b.len() == 1 {
            return Ok(Broadcast::Scalar);
        }
        if let (Some((_, cols)), true) = (a.dims2(), a.shape.len() == 2) {
            let b_is_row = matches!(b.shape.as_slice(), [n] if *n == cols)
                || matches!(b.shape.as_slice(), [1, n] if *n == cols);
            if b_is_row {
                return Ok(Broadcast::Row(cols));
            }
        }
        Err(Error::shape(
            op,
            format!("cannot combine {:?} with {:?}", a.shape, b.shape),
        ))
    }

    #[inline]
    fn index(self, i: usize) -> usize {
        match self {
            Broadcast::Same => i,
            Broadcast::Scalar => 0,
            Broadcast::Row(cols) => i % cols,
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    /// Second operand may be broadcast.
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Scale(Var, f64),
    Offset(Var),
    Sum(Var),
    Softmax(Var),
    Nll {
        probs: Var,
        target: usize,
    },
    Lgamma(Var),
    Softplus(Var),
    Sqrt(Var),
    Powf(Var, f64),
    Recip(Var),
    Ln(Var),
    Exp(Var),
    Embed(Box<EmbedOp>),
}

#[derive(Debug)]
struct EmbedOp {
    table: Var,
    ids: Arc<[usize]>,
    positions: Arc<Tensor>,
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only record of a computation. Nodes are stored in creation order,
/// which is a topological order; [`Tape::backward`] walks them in reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Registers a trainable leaf under `name`.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        let v = self.constant(value);
        self.params.push((name.into(), v));
        v
    }

    /// A leaf that is not reported in the gradient map.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NumericFault {
                at: op_name.to_string(),
                detail: format!("non-finite output of shape {:?}", value.shape),
            });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let ((m, k), (k2, n)) = match (av.dims2(), bv.dims2()) {
            (Some(x), Some(y)) => (x, y),
            _ => return Err(Error::shape("matmul", "operands must be at most 2-D")),
        };
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", av.shape, bv.shape),
            ));
        }
        let out = matmul_raw(&av.values, &bv.values, m, k, n);
        self.push(
            "matmul",
            Tensor {
                shape: vec![m, n],
                values: out,
            },
            Op::MatMul(a, b),
        )
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (r, c) = av
            .dims2()
            .ok_or_else(|| Error::shape("transpose", "operand must be at most 2-D"))?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = av.values[i * c + j];
            }
        }
        self.push(
            "transpose",
            Tensor {
                shape: vec![c, r],
                values: out,
            },
            Op::Transpose(a),
        )
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(Var, Var, Broadcast) -> Op,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        // Commutative ops accept the broadcast operand on either side and
        // normalize it to the right.
        let (a, b, swapped, bc) = match Broadcast::resolve(name, av, bv) {
            Ok(bc) => (a, b, false, bc),
            Err(e) if name == "sub" => return Err(e),
            Err(e) => match Broadcast::resolve(name, bv, av) {
                Ok(bc) => (b, a, true, bc),
                Err(_) => return Err(e),
            },
        };
        let (av, bv) = (self.value(a), self.value(b));
        let values = av
            .values
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = bv.values[bc.index(i)];
                if swapped {
                    f(y, x)
                } else {
                    f(x, y)
                }
            })
            .collect();
        let shape = av.shape.clone();
        self.push(name, Tensor { shape, values }, make(a, b, bc))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    /// `a - b`; `b` may broadcast, `a` may not.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.value(a).map(|x| c * x);
        self.push("scale", value, Op::Scale(a, c))
    }

    /// `a + c` for a constant `c`.
    pub fn offset(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x + c);
        self.push("offset", value, Op::Offset(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a))
    }

    /// Max-shifted softmax over all entries.
    pub fn softmax(&mut self, z: Var) -> Result<Var> {
        self.softmax_masked(z, None)
    }

    /// Softmax where entries with `mask[i] == false` get probability zero.
    pub fn softmax_masked(&mut self, z: Var, mask: Option<&[bool]>) -> Result<Var> {
        let zv = self.value(z);
        if let Some(m) = mask {
            if m.len() != zv.len() {
                return Err(Error::shape(
                    "softmax",
                    format!("mask of {} for {} logits", m.len(), zv.len()),
                ));
            }
            if !m.iter().any(|&keep| keep) {
                return Err(Error::Model("softmax over an all-masked input".into()));
            }
        }
        let keep = |i: usize| mask.is_none_or(|m| m[i]);
        let max = zv
            .values
            .iter()
            .enumerate()
            .filter(|(i, _)| keep(*i))
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut values: Vec<f64> = zv
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| if keep(i) { (v - max).exp() } else { 0.0 })
            .collect();
        let total: f64 = values.iter().sum();
        values.iter_mut().for_each(|v| *v /= total);
        let shape = zv.shape.clone();
        self.push("softmax", Tensor { shape, values }, Op::Softmax(z))
    }

    /// `-ln max(probs[target], 1e-12)`.
    pub fn nll(&mut self, probs: Var, target: usize) -> Result<Var> {
        let pv = self.value(probs);
        if target >= pv.len() {
            return Err(Error::shape(
                "nll",
                format!("target {target} out of range for {} classes", pv.len()),
            ));
        }
        let loss = -pv.values[target].max(PROB_FLOOR).ln();
        self.push("nll", Tensor::scalar(loss), Op::Nll { probs, target })
    }

    pub fn lgamma(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if let Some(bad) = av.values.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::domain(
                "lgamma",
                format!("non-positive argument {bad}"),
            ));
        }
        let value = av.map(tmath::ln_gamma_unchecked);
        self.push("lgamma", value, Op::Lgamma(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(softplus);
        self.push("softplus", value, Op::Softplus(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::sqrt);
        self.push("sqrt", value, Op::Sqrt(a))
    }

    /// Elementwise `a^c` for a constant exponent.
    pub fn powf(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x.powf(c));
        self.push("powf", value, Op::Powf(a, c))
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| 1.0 / x);
        self.push("recip", value, Op::Recip(a))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::ln);
        self.push("ln", value, Op::Ln(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::exp);
        self.push("exp", value, Op::Exp(a))
    }

    /// Position-weighted bag-of-words lookup.
    ///
    /// `ids` is a row-major `rows × J` matrix of token ids, `positions` a
    /// `J × d` weight matrix, `table` a `V × d` embedding. Output row `r` is
    /// `Σ_j positions[j] ⊙ table[ids[r, j]]`; id 0 (nil) contributes nothing.
    pub fn embed(&mut self, table: Var, ids: Arc<[usize]>, positions: Arc<Tensor>) -> Result<Var> {
        let tv = self.value(table);
        let (vocab, width) = tv
            .dims2()
            .ok_or_else(|| Error::shape("embed", "table must be 2-D"))?;
        let (sent_len, pw) = positions
            .dims2()
            .ok_or_else(|| Error::shape("embed", "positions must be 2-D"))?;
        if pw != width {
            return Err(Error::shape(
                "embed",
                format!("position width {pw} vs embedding width {width}"),
            ));
        }
        if !ids.len().is_multiple_of(sent_len) {
            return Err(Error::shape(
                "embed",
                format!("{} ids is not a multiple of J={sent_len}", ids.len()),
            ));
        }
        if let Some(bad) = ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::shape(
                "embed",
                format!("token id {bad} out of range for V={vocab}"),
            ));
        }
        let rows = ids.len() / sent_len;
        let mut out = vec![0.0; rows * width];
        for r in 0..rows {
            let dst = &mut out[r * width..(r + 1) * width];
            for j in 0..sent_len {
                let id = ids[r * sent_len + j];
                if id == 0 {
                    continue;
                }
                let emb = tv.row(id);
                let pos = positions.row(j);
                for k in 0..width {
                    dst[k] += pos[k] * emb[k];
                }
            }
        }
        self.push(
            "embed",
            Tensor {
                shape: vec![rows, width],
                values: out,
            },
            Op::Embed(Box::new(EmbedOp {
                table,
                ids,
                positions,
            })),
        )
    }

    /// Reverse sweep from the scalar `loss`, returning the gradient of every
    /// registered parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", "loss must be a scalar"));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::filled(&self.value(loss).shape, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut out = Vec::with_capacity(self.params.len());
        for (name, v) in &self.params {
            let g = grads
                .get(v.0)
                .and_then(|g| g.clone())
                .unwrap_or_else(|| Tensor::zeros(&self.value(*v).shape));
            if !g.is_finite() {
                return Err(Error::NumericFault {
                    at: name.clone(),
                    detail: "non-finite gradient".into(),
                });
            }
            out.push((name.clone(), g));
        }
        Ok(Gradients { entries: out })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gv = &g.values;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.dims2().unwrap();
                let n = bv.dims2().unwrap().1;
                // dA = G Bᵀ, dB = Aᵀ G
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += gv[i * n + j] * bv.values[p * n + j];
                        }
                        da[i * k + p] = s;
                    }
                }
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let a_ip = av.values[i * k + p];
                        if a_ip == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[p * n + j] += a_ip * gv[i * n + j];
                        }
                    }
                }
                accumulate(grads, *a, &av.shape, |dst| add_into(dst, &da));
                accumulate(grads, *b, &bv.shape, |dst| add_into(dst, &db));
            }
            Op::Transpose(a) => {
                let (r, c) = self.value(*a).dims2().unwrap();
                accumulate(grads, *a, &self.value(*a).shape, |dst| {
                    for i in 0..r {
                        for j in 0..c {
                            dst[i * c + j] += gv[j * r + i];
                        }
                    }
                });
            }
            Op::Add(a, b, bc) | Op::Sub(a, b, bc) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -1.0
                } else {
                    1.0
                };
                accumulate(grads, *a, &self.value(*a).shape, |dst| add_into(dst, gv));
                accumulate(grads, *b, &self.value(*b).shape, |dst| {
                    for (i, gi) in gv.iter().enumerate() {
                        dst[bc.index(i)] += sign * gi;
                    }
                });
            }
            Op::Mul(a, b, bc) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, &av.shape, |dst| {
                    for (i, gi) in gv.iter().enumerate() {
                        dst[i] += gi * bv.values[bc.index(i)];
                    }
                });
                accumulate(grads, *b, &bv.shape, |dst| {
                    for (i, gi) in gv.iter().enumerate() {
                        dst[bc.index(i)] += gi * av.values[i];
                    }
                });
            }
            Op::Scale(a, c) => {
                accumulate(grads, *a, &self.value(*a).shape, |dst| {
                    dst.iter_mut().zip(gv).for_each(|(d, gi)| *d += c * gi)
                });
            }
            Op::Offset(a) => accumulate(grads, *a, &self.value(*a).shape, |dst| add_into(dst, gv)),
            Op::Sum(a) => {
                let g0 = gv[0];
                accumulate(grads, *a, &self.value(*a).shape, |dst| {
                    dst.iter_mut().for_each(|d| *d += g0)
                });
            }
            Op::Softmax(z) => {
                let y = &node.value.values;
                let dot: f64 = y.iter().zip(gv).map(|(y, g)| y * g).sum();
                accumulate(grads, *z, &self.value(*z).shape, |dst| {
                    for i in 0..y.len() {
                        dst[i] += y[i] * (gv[i] - dot);
                    }
                });
            }
            Op::Nll { probs, target } => {
                let p = self.value(*probs).values[*target];
                if p > PROB_FLOOR {
                    accumulate(grads, *probs, &self.value(*probs).shape, |dst| {
                        dst[*target] -= gv[0] / p
                    });
                }
            }
            Op::Lgamma(a) => self.unary_grad(*a, gv, grads, |x, _| tmath::digamma_unchecked(x)),
            Op::Softplus(a) => self.unary_grad(*a, gv, grads, |x, _| sigmoid(x)),
            Op::Sqrt(a) => self.unary_grad_out(*a, node, gv, grads, |_, y| 0.5 / y),
            Op::Powf(a, c) => self.unary_grad(*a, gv, grads, |x, _| c * x.powf(c - 1.0)),
            Op::Recip(a) => self.unary_grad_out(*a, node, gv, grads, |_, y| -y * y),
            Op::Ln(a) => self.unary_grad(*a, gv, grads, |x, _| 1.0 / x),
            Op::Exp(a) => self.unary_grad_out(*a, node, gv, grads, |_, y| y),
            Op::Embed(e) => {
                let tv = self.value(e.table);
                let width = tv.dims2().unwrap().1;
                let sent_len = e.positions.dims2().unwrap().0;
                let rows = e.ids.len() / sent_len;
                accumulate(grads, e.table, &tv.shape, |dst| {
                    for r in 0..rows {
                        let gr = &gv[r * width..(r + 1) * width];
                        for j in 0..sent_len {
                            let id = e.ids[r * sent_len + j];
                            if id == 0 {
                                continue;
                            }
                            let pos = e.positions.row(j);
                            let d = &mut dst[id * width..(id + 1) * width];
                            for k in 0..width {
                                d[k] += pos[k] * gr[k];
                            }
                        }
                    }
                });
            }
        }
    }

    fn unary_grad(
        &self,
        a: Var,
        gv: &[f64],
        grads: &mut [Option<Tensor>],
        d: impl Fn(f64, f64) -> f64,
    ) {
        let av = self.value(a);
        accumulate(grads, a, &av.shape, |dst| {
            for (i, gi) in gv.iter().enumerate() {
                dst[i] += gi * d(av.values[i], 0.0);
            }
        });
    }

    /// Like `unary_grad` but the derivative is expressed through the output.
    fn unary_grad_out(
        &self,
        a: Var,
        node: &Node,
        gv: &[f64],
        grads: &mut [Option<Tensor>],
        d: impl Fn(f64, f64) -> f64,
    ) {
        let av = self.value(a);
        accumulate(grads, a, &av.shape, |dst| {
            for (i, gi) in gv.iter().enumerate() {
                dst[i] += gi * d(av.values[i], node.value.values[i]);
            }
        });
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], f: impl FnOnce(&mut [f64])) {
    let slot = &mut grads[v.0];
    let g = slot.get_or_insert_with(|| Tensor::zeros(shape));
    f(&mut g.values);
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for j in 0..n {
                row[j] += a_ip * b_row[j];
            }
        }
    }
    out
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
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

/// Named parameter gradients in registration order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    entries: Vec<(String, Tensor)>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, g)| g)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, g)| (n.as_str(), g))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, g)| (n.as_str(), g))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn global_norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|(_, g)| g.squared_norm())
            .sum::<f64>()
            .sqrt()
    }
}

/// Outcome of comparing tape gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, flat coordinate)` of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

/// Entries whose analytic and numeric gradients are both below this are
/// compared in absolute terms.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Relative error used by [`finite_diff_check`].
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

/// Checks the gradient of a scalar function against central differences.
///
/// `build` records the function on a fresh tape given one parameter leaf per
/// entry of `params` and returns the scalar output. Every coordinate of every
/// parameter is perturbed by `±h`.
pub fn finite_diff_check<F>(build: F, params: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    finite_diff_check_with(build, params, h, |_| {})
}

/// [`finite_diff_check`] with a hook that may alter the analytic gradients
/// before comparison. Used to confirm that the check catches a broken backward
/// pass.
pub fn finite_diff_check_with<F, T>(
    mut build: F,
    params: &[Tensor],
    h: f64,
    tamper: T,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
    T: FnOnce(&mut Gradients),
{
    let eval = |build: &mut F, params: &[Tensor]| -> Result<(Tape, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params
            .iter()
            .enumerate()
            .map(|(i, p)| tape.param(format!("p{i}"), p.clone()))
            .collect();
        let out = build(&mut tape, &vars)?;
        Ok((tape, out))
    };
    let (tape, out) = eval(&mut build, params)?;
    let mut grads = tape.backward(out)?;
    tamper(&mut grads);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, (_, g)) in grads.iter().enumerate() {
        for ci in 0..params[pi].len() {
            let orig = params[pi].values[ci];
            work[pi].values[ci] = orig + h;
            let (t_plus, o_plus) = eval(&mut build, &work)?;
            work[pi].values[ci] = orig - h;
            let (t_minus, o_minus) = eval(&mut build, &work)?;
            work[pi].values[ci] = orig;
            let numeric = (t_plus.value(o_plus).item() - t_minus.value(o_minus).item()) / (2.0 * h);
            let analytic = g.values[ci];
            let err = relative_error(analytic, numeric);
            report.coordinates += 1;
            if err > report.max_rel_error || report.coordinates == 1 {
                report = GradCheckReport {
                    max_rel_error: err,
                    worst: (pi, ci),
                    analytic,
                    numeric,
                    ..report
                };
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn tensor_shape_validation() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
        assert_eq!(Tensor::zeros(&[2, 2]).len(), 4);
    }

    #[test]
    fn matmul_values() {
        let mut tape = Tape::new();
        let eye = tape.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let m = tape.constant(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let p = tape.matmul(eye, m).unwrap();
        assert_eq!(tape.value(p), tape.value(m));

        let a = tape.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let ones = tape.constant(Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap());
        let r = tape.matmul(a, ones).unwrap();
        assert_eq!(tape.value(r).values(), &[3.0, 7.0]);
        assert_eq!(tape.value(r).shape(), &[2, 1]);
        assert!(tape.matmul(m, m).is_err());
    }

    #[test]
    fn matmul_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = [
            random_tensor(&mut rng, &[4, 5]),
            random_tensor(&mut rng, &[5, 3]),
        ];
        let report = finite_diff_check(
            |t, v| {
                let p = t.matmul(v[0], v[1])?;
                let sq = t.mul(p, p)?;
                t.sum(sq)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
        assert_eq!(report.coordinates, 35);
    }

    #[test]
    fn elementwise_identities() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, -2.0, 3.5]));
        let b = tape.constant(Tensor::vector(vec![0.5, 4.0, -1.0]));
        let zero = tape.constant(Tensor::zeros(&[3]));
        let one = tape.constant(Tensor::scalar(1.0));
        let s = tape.add(a, zero).unwrap();
        assert_eq!(tape.value(s), tape.value(a));
        let m = tape.mul(a, one).unwrap();
        assert_eq!(tape.value(m), tape.value(a));
        let ab = tape.add(a, b).unwrap();
        let ba = tape.add(b, a).unwrap();
        assert_eq!(tape.value(ab), tape.value(ba));
        let ab = tape.mul(a, b).unwrap();
        let ba = tape.mul(b, a).unwrap();
        assert_eq!(tape.value(ab), tape.value(ba));
        let sc = tape.scale(a, 0.0).unwrap();
        assert_eq!(tape.value(sc).values(), &[0.0, 0.0, 0.0]);
        let total = tape.sum(a).unwrap();
        assert_eq!(tape.value(total).item(), 2.5);
    }

    #[test]
    fn row_broadcast() {
        let mut tape = Tape::new();
        let m = tape.constant(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let r = tape.constant(Tensor::vector(vec![10.0, 20.0, 30.0]));
        let s = tape.add(m, r).unwrap();
        assert_eq!(
            tape.value(s).values(),
            &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]
        );
        let bad = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        assert!(tape.add(m, bad).is_err());
    }

    #[test]
    fn softmax_cases() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let p = tape.softmax(z).unwrap();
        for v in tape.value(p).values() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let z = tape.constant(Tensor::vector(vec![1000.0, 0.0]));
        let p = tape.softmax(z).unwrap();
        assert!((tape.value(p).values()[0] - 1.0).abs() < 1e-12);
        assert!(tape.value(p).values()[1] < 1e-300);
    }

    #[test]
    fn softmax_mask() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::vector(vec![3.0, 1.0, 2.0]));
        let p = tape.softmax_masked(z, Some(&[true, false, true])).unwrap();
        let v = tape.value(p).values();
        assert_eq!(v[1], 0.0);
        assert!((v[0] + v[2] - 1.0).abs() < 1e-15);
        assert!(tape
            .softmax_masked(z, Some(&[false, false, false]))
            .is_err());
    }

    #[test]
    fn softmax_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = [random_tensor(&mut rng, &[6]), random_tensor(&mut rng, &[6])];
        // Jacobian-vector product through a fixed projection.
        let report = finite_diff_check(
            |t, v| {
                let p = t.softmax(v[0])?;
                let proj = t.mul(p, v[1])?;
                t.sum(proj)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }

    #[test]
    fn nll_cases() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::vector(vec![1.0, 0.0, 0.0]));
        let l = tape.nll(p, 0).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
        let l = tape.nll(p, 1).unwrap();
        assert!((tape.value(l).item() + PROB_FLOOR.ln()).abs() < 1e-12);
        let u = tape.constant(Tensor::filled(&[4], 0.25));
        for target in 0..4 {
            let l = tape.nll(u, target).unwrap();
            assert!((tape.value(l).item() - 4f64.ln()).abs() < 1e-15);
        }
        assert!(tape.nll(u, 4).is_err());
    }

    #[test]
    fn softmax_nll_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = [random_tensor(&mut rng, &[5])];
        let report = finite_diff_check(
            |t, v| {
                let p = t.softmax(v[0])?;
                t.nll(p, 2)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }

    #[test]
    fn softplus_values() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(50.0) - 50.0).abs() < 1e-15);
        assert!(softplus(-800.0) >= 0.0);
        for &y in &[0.05, 1.0, 100.0, 1e4] {
            assert!((softplus(softplus_inv(y)) - y).abs() < 1e-9 * y.max(1.0));
        }
    }

    #[test]
    fn lgamma_gradient_is_digamma() {
        let mut tape = Tape::new();
        let x = tape.param("x", Tensor::vector(vec![0.3, 2.5, 17.0]));
        let l = tape.lgamma(x).unwrap();
        let s = tape.sum(l).unwrap();
        let g = tape.backward(s).unwrap();
        let h = 1e-6;
        for (i, &xv) in [0.3, 2.5, 17.0].iter().enumerate() {
            let fd =
                (tmath::log_gamma(xv + h).unwrap() - tmath::log_gamma(xv - h).unwrap()) / (2.0 * h);
            assert!((g.get("x").unwrap().values()[i] - fd).abs() < 1e-6);
        }
        let bad = tape.constant(Tensor::scalar(-1.0));
        assert!(tape.lgamma(bad).is_err());
    }

    #[test]
    fn backward_simple_sums() {
        let mut tape = Tape::new();
        let p = tape.param("p", Tensor::vector(vec![1.0, -2.0, 0.5]));
        let s = tape.sum(p).unwrap();
        assert_eq!(
            tape.backward(s).unwrap().get("p").unwrap().values(),
            &[1.0, 1.0, 1.0]
        );

        let mut tape = Tape::new();
        let p = tape.param("p", Tensor::vector(vec![1.0, -2.0, 0.5]));
        let sq = tape.mul(p, p).unwrap();
        let s = tape.sum(sq).unwrap();
        assert_eq!(
            tape.backward(s).unwrap().get("p").unwrap().values(),
            &[2.0, -4.0, 1.0]
        );
    }

    #[test]
    fn embed_forward_and_gradient() {
        // 3-token vocabulary (nil + 2 words), δ = 2, J = 2.
        let table = Tensor::matrix(3, 2, vec![9.0, 9.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let positions = Arc::new(Tensor::matrix(2, 2, vec![1.0, 0.5, 0.25, 2.0]).unwrap());
        let ids: Arc<[usize]> = Arc::from(vec![1, 2, 2, 0, 0, 0]);
        let mut tape = Tape::new();
        let t = tape.param("t", table.clone());
        let e = tape.embed(t, ids.clone(), positions.clone()).unwrap();
        // row 0: [1,.5]⊙[1,2] + [.25,2]⊙[3,4] = [1.75, 9]
        // row 1: [1,.5]⊙[3,4] = [3, 2]; row 2: nil → 0
        assert_eq!(tape.value(e).values(), &[1.75, 9.0, 3.0, 2.0, 0.0, 0.0]);
        let bad_ids: Arc<[usize]> = Arc::from(vec![1, 3]);
        assert!(tape.embed(t, bad_ids, positions.clone()).is_err());

        let report = finite_diff_check(
            |tp, v| {
                let e = tp.embed(v[0], ids.clone(), positions.clone())?;
                let sq = tp.mul(e, e)?;
                tp.sum(sq)
            },
            &[table],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-7, "{report:?}");
    }

    #[test]
    fn quadratic_grad_check() {
        let params = [Tensor::vector(vec![0.3, -1.2, 2.0])];
        let report = finite_diff_check(
            |t, v| {
                let sq = t.mul(v[0], v[0])?;
                let sc = t.scale(sq, 1.5)?;
                t.sum(sc)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-7, "{report:?}");
    }

    #[test]
    fn non_finite_is_a_fault() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::scalar(0.0));
        assert!(matches!(tape.recip(z), Err(Error::NumericFault { .. })));
        assert!(matches!(tape.ln(z), Err(Error::NumericFault { .. })));
    }

    /// Random composed graph over the whole op set.
    fn random_graph(t: &mut Tape, v: &[Var], recipe: &[u8]) -> Result<Var> {
        let (mut cur, other, pos) = (v[0], v[1], v[2]);
        for &step in recipe {
            cur = match step % 12 {
                0 => t.add(cur, other)?,
                1 => t.mul(cur, other)?,
                2 => t.scale(cur, -0.7)?,
                3 => t.softmax(cur)?,
                4 => {
                    let sp = t.softplus(cur)?;
                    t.lgamma(sp)?
                }
                5 => t.softplus(cur)?,
                6 => {
                    let sp = t.softplus(cur)?;
                    t.sqrt(sp)?
                }
                7 => {
                    let sp = t.softplus(cur)?;
                    t.powf(sp, 1.3)?
                }
                8 => {
                    let sp = t.offset(pos, 1.0)?;
                    let r = t.recip(sp)?;
                    t.mul(cur, r)?
                }
                9 => {
                    let s = t.sum(cur)?;
                    let e = t.scale(s, 0.1)?;
                    let e = t.exp(e)?;
                    t.mul(cur, e)?
                }
                10 => {
                    let ct = t.transpose(cur)?;
                    let inner = t.matmul(ct, other)?;
                    t.mul(cur, inner)?
                }
                _ => t.sub(cur, other)?,
            };
        }
        let sq = t.mul(cur, cur)?;
        t.sum(sq)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]

        #[test]
        fn composed_graphs_match_finite_differences(
            seed in 0u64..1_000,
            recipe in proptest::collection::vec(0u8..12, 1..8),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 4;
            let params = [
                random_tensor(&mut rng, &[n, 1]),
                random_tensor(&mut rng, &[n, 1]),
                random_tensor(&mut rng, &[n, 1]).map(f64::abs),
            ];
            let report = finite_diff_check(
                |t, v| {
                    // Route through matmul/transpose once so every op appears.
                    let vt = t.transpose(v[1])?;
                    let outer = t.matmul(v[0], vt)?;
                    let back = t.matmul(outer, v[1])?;
                    let mixed = t.scale(back, 0.1)?;
                    let first = t.add(v[0], mixed)?;
                    random_graph(t, &[first, v[1], v[2]], &recipe)
                },
                &params,
                1e-5,
            ).unwrap();
            prop_assert!(report.max_rel_error < 1e-4, "{:?}", report);
        }

        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            z in proptest::collection::vec(-50.0f64..50.0, 1..20),
            shift in -100.0f64..100.0,
        ) {
            let mut tape = Tape::new();
            let a = tape.constant(Tensor::vector(z.clone()));
            let b = tape.constant(Tensor::vector(z.iter().map(|v| v + shift).collect()));
            let pa = tape.softmax(a).unwrap();
            let pb = tape.softmax(b).unwrap();
            prop_assert!((tape.value(pa).sum() - 1.0).abs() < 1e-12);
            for (x, y) in tape.value(pa).values().iter().zip(tape.value(pb).values()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn replay_is_bit_identical() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let a = random_tensor(&mut rng, &[3, 3]);
            let b = random_tensor(&mut rng, &[3, 1]);
            let mut tape = Tape::new();
            let av = tape.param("a", a);
            let bv = tape.param("b", b);
            let m = tape.matmul(av, bv).unwrap();
            let p = tape.softmax(m).unwrap();
            let l = tape.nll(p, 1).unwrap();
            tape.backward(l).unwrap()
        };
        assert_eq!(run(), run());
    }
}
