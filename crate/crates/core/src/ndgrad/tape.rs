use std::sync::atomic::{AtomicU32, Ordering};

use super::{gemm, GradError, Real, Tensor};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    index: u32,
}

enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    AddBias {
        x: Var,
        bias: Var,
    },
    Conv1d {
        input: Var,
        weight: Var,
        bias: Var,
        // im2col rows, one per (batch, output position); column index is c * width + k
        cols: Vec<T>,
    },
    MaskedMaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Tanh(Var),
    Sigmoid(Var),
    Ln(Var),
    Softplus(Var),
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    SliceRows {
        input: Var,
        start: usize,
    },
    SliceCols {
        input: Var,
        start: usize,
    },
    Softmax(Var),
    LogSoftmax(Var),
    Reshape(Var),
    Sum(Var),
    RnnCell {
        x: Var,
        h: Var,
        w_ih: Var,
        w_hh: Var,
        b: Var,
    },
    LstmCell {
        x: Var,
        h: Var,
        c: Var,
        w_ih: Var,
        w_hh: Var,
        b: Var,
        // activated gates i, f, g, o laid out as [batch, 4 * hidden]
        gates: Vec<T>,
        tanh_c: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Single-writer record of primitive applications.
///
/// Nodes are appended in execution order, so inputs always precede outputs.
/// A tape and the values on it belong to one worker; build one tape per
/// forward/backward step.
pub struct Tape<T: Real> {
    id: u32,
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn col_sums<T: Real>(rows: usize, cols: usize, g: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); cols];
    for r in 0..rows {
        for (o, &v) in out.iter_mut().zip(&g[r * cols..(r + 1) * cols]) {
            *o += v;
        }
    }
    out
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> GradError {
    GradError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        let index = u32::try_from(self.nodes.len()).expect("tape too long");
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var { tape: self.id, index }
    }

    fn node(&self, v: Var) -> Result<&Node<T>, GradError> {
        if v.tape != self.id {
            return Err(GradError::ForeignVar);
        }
        self.nodes.get(v.index as usize).ok_or(GradError::ForeignVar)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.index as usize].requires_grad)
    }

    /// Record a tensor that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, false, Op::Leaf)
    }

    /// Record a trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, true, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor<T>, GradError> {
        Ok(&self.node(v)?.value)
    }

    /// Gradient of the last `backward` loss with respect to `v`, if any flowed into it.
    pub fn grad(&self, v: Var) -> Result<Option<&[T]>, GradError> {
        Ok(self.node(v)?.grad.as_deref())
    }

    fn shape(&self, v: Var) -> Result<&[usize], GradError> {
        Ok(self.node(v)?.value.shape())
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize), GradError> {
        match self.shape(v)? {
            &[r, c] => Ok((r, c)),
            s => Err(GradError::InvalidInput {
                op,
                detail: format!("expected a matrix, got shape {s:?}"),
            }),
        }
    }

    // ----- primitives -----

    /// `[m, k] · [k, n] -> [m, n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(mismatch("matmul", &[m, k], &[k2, n]));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, self.value(a)?.data(), false, self.value(b)?.data(), false, &mut out, false);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, rg, Op::MatMul { a, b }))
    }

    /// Adds a `[C]` bias to every row of a `[.., C]` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, GradError> {
        let xs = self.shape(x)?.to_vec();
        let bs = self.shape(bias)?;
        if bs.len() != 1 || bs[0] != *xs.last().unwrap() {
            return Err(mismatch("add_bias", &xs, bs));
        }
        let xv = self.value(x)?;
        let b = self.value(bias)?.data();
        let c = b.len();
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(c) {
            for (o, &bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(Tensor::new(xs, out)?, rg, Op::AddBias { x, bias }))
    }

    /// Valid 1-D convolution over time.
    ///
    /// `input` is `[batch, len, in_channels]`, `weight` is
    /// `[in_channels, width, out_channels]`, `bias` is `[out_channels]`.
    /// Output is `[batch, len - width + 1, out_channels]`.
    pub fn conv1d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var, GradError> {
        let is = self.shape(input)?.to_vec();
        let ws = self.shape(weight)?.to_vec();
        let &[batch, len, cin] = is.as_slice() else {
            return Err(GradError::InvalidInput {
                op: "conv1d",
                detail: format!("input must be [batch, len, channels], got {is:?}"),
            });
        };
        let &[wcin, width, cout] = ws.as_slice() else {
            return Err(GradError::InvalidInput {
                op: "conv1d",
                detail: format!("weight must be [in, width, out], got {ws:?}"),
            });
        };
        if wcin != cin {
            return Err(mismatch("conv1d", &is, &ws));
        }
        if len < width {
            return Err(GradError::InvalidInput {
                op: "conv1d",
                detail: format!("sequence length {len} shorter than kernel width {width}"),
            });
        }
        let bs = self.shape(bias)?;
        if bs != [cout] {
            return Err(mismatch("conv1d", &ws, bs));
        }
        let out_len = len - width + 1;
        let patch = cin * width;
        let x = self.value(input)?.data();
        let mut cols = vec![T::zero(); batch * out_len * patch];
        for b in 0..batch {
            for t in 0..out_len {
                let row = &mut cols[(b * out_len + t) * patch..(b * out_len + t + 1) * patch];
                for k in 0..width {
                    let src = &x[(b * len + t + k) * cin..(b * len + t + k + 1) * cin];
                    for (c, &v) in src.iter().enumerate() {
                        row[c * width + k] = v;
                    }
                }
            }
        }
        let rows = batch * out_len;
        let mut out = vec![T::zero(); rows * cout];
        gemm(rows, patch, cout, &cols, false, self.value(weight)?.data(), false, &mut out, false);
        let bv = self.value(bias)?.data();
        for row in out.chunks_mut(cout) {
            for (o, &b) in row.iter_mut().zip(bv) {
                *o += b;
            }
        }
        let rg = self.rg(&[input, weight, bias]);
        Ok(self.push(
            Tensor::new(vec![batch, out_len, cout], out)?,
            rg,
            Op::Conv1d {
                input,
                weight,
                bias,
                cols,
            },
        ))
    }

    /// Max over time of `[batch, len, channels]`, restricted to positions where
    /// `mask[b * len + t]` is set. Output is `[batch, channels]`.
    pub fn masked_max_pool(&mut self, input: Var, mask: &[bool]) -> Result<Var, GradError> {
        let is = self.shape(input)?.to_vec();
        let &[batch, len, ch] = is.as_slice() else {
            return Err(GradError::InvalidInput {
                op: "masked_max_pool",
                detail: format!("input must be [batch, len, channels], got {is:?}"),
            });
        };
        if mask.len() != batch * len {
            return Err(mismatch("masked_max_pool", &is, &[mask.len()]));
        }
        let x = self.value(input)?.data();
        let mut out = vec![T::zero(); batch * ch];
        let mut argmax = vec![0usize; batch * ch];
        for b in 0..batch {
            let valid: Vec<usize> = (0..len).filter(|&t| mask[b * len + t]).collect();
            if valid.is_empty() {
                return Err(GradError::EmptyMask { row: b });
            }
            for c in 0..ch {
                let mut best = (b * len + valid[0]) * ch + c;
                for &t in &valid[1..] {
                    let idx = (b * len + t) * ch + c;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out[b * ch + c] = x[best];
                argmax[b * ch + c] = best;
            }
        }
        let rg = self.rg(&[input]);
        Ok(self.push(
            Tensor::new(vec![batch, ch], out)?,
            rg,
            Op::MaskedMaxPool { input, argmax },
        ))
    }

    fn zip_same(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        record: Op<T>,
    ) -> Result<Var, GradError> {
        let sa = self.shape(a)?;
        let sb = self.shape(b)?;
        if sa != sb {
            return Err(mismatch(op, sa, sb));
        }
        let shape = sa.to_vec();
        let out = self
            .value(a)?
            .data()
            .iter()
            .zip(self.value(b)?.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, rg, record))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, x: Var, f: impl Fn(T) -> T, record: Op<T>) -> Result<Var, GradError> {
        let v = self.value(x)?;
        let shape = v.shape().to_vec();
        let out = v.data().iter().map(|&e| f(e)).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, rg, record))
    }

    pub fn scale(&mut self, x: Var, k: T) -> Result<Var, GradError> {
        self.map(x, |e| e * k, Op::Scale(x, k))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, GradError> {
        self.map(x, |e| e.tanh(), Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, GradError> {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    /// Natural logarithm; non-positive inputs are rejected.
    pub fn ln(&mut self, x: Var) -> Result<Var, GradError> {
        if self.value(x)?.data().iter().any(|&e| e <= T::zero()) {
            return Err(GradError::InvalidInput {
                op: "ln",
                detail: "input must be strictly positive".into(),
            });
        }
        self.map(x, |e| e.ln(), Op::Ln(x))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Result<Var, GradError> {
        self.map(x, softplus, Op::Softplus(x))
    }

    /// Concatenates matrices with equal row counts along the feature axis.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var, GradError> {
        let first = *inputs.first().ok_or(GradError::InvalidInput {
            op: "concat",
            detail: "no inputs".into(),
        })?;
        let (rows, _) = self.matrix_dims("concat", first)?;
        let mut widths = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let (r, c) = self.matrix_dims("concat", v)?;
            if r != rows {
                return Err(mismatch("concat", self.shape(first)?, self.shape(v)?));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &v in inputs {
                out.extend_from_slice(self.nodes[v.index as usize].value.row(r));
            }
        }
        let rg = self.rg(inputs);
        Ok(self.push(Tensor::new(vec![rows, total], out)?, rg, Op::Concat(inputs.to_vec())))
    }

    /// Stacks matrices with equal column counts along the row axis.
    pub fn stack_rows(&mut self, inputs: &[Var]) -> Result<Var, GradError> {
        let first = *inputs.first().ok_or(GradError::InvalidInput {
            op: "stack_rows",
            detail: "no inputs".into(),
        })?;
        let (_, cols) = self.matrix_dims("stack_rows", first)?;
        let mut rows = 0;
        for &v in inputs {
            let (r, c) = self.matrix_dims("stack_rows", v)?;
            if c != cols {
                return Err(mismatch("stack_rows", self.shape(first)?, self.shape(v)?));
            }
            rows += r;
        }
        let mut out = Vec::with_capacity(rows * cols);
        for &v in inputs {
            out.extend_from_slice(self.nodes[v.index as usize].value.data());
        }
        let rg = self.rg(inputs);
        Ok(self.push(Tensor::new(vec![rows, cols], out)?, rg, Op::StackRows(inputs.to_vec())))
    }

    pub fn slice_rows(&mut self, input: Var, start: usize, len: usize) -> Result<Var, GradError> {
        let (rows, cols) = self.matrix_dims("slice_rows", input)?;
        if len == 0 || start + len > rows {
            return Err(GradError::InvalidInput {
                op: "slice_rows",
                detail: format!("rows {start}..{} out of 0..{rows}", start + len),
            });
        }
        let out = self.value(input)?.data()[start * cols..(start + len) * cols].to_vec();
        let rg = self.rg(&[input]);
        Ok(self.push(Tensor::new(vec![len, cols], out)?, rg, Op::SliceRows { input, start }))
    }

    pub fn slice_cols(&mut self, input: Var, start: usize, len: usize) -> Result<Var, GradError> {
        let (rows, cols) = self.matrix_dims("slice_cols", input)?;
        if len == 0 || start + len > cols {
            return Err(GradError::InvalidInput {
                op: "slice_cols",
                detail: format!("columns {start}..{} out of 0..{cols}", start + len),
            });
        }
        let v = self.value(input)?;
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&v.row(r)[start..start + len]);
        }
        let rg = self.rg(&[input]);
        Ok(self.push(Tensor::new(vec![rows, len], out)?, rg, Op::SliceCols { input, start }))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var, GradError> {
        let v = self.value(x)?;
        let shape = v.shape().to_vec();
        let cols = v.cols();
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(cols) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for e in row.iter_mut() {
                *e = (*e - max).exp();
                total += *e;
            }
            for e in row.iter_mut() {
                *e = *e / total;
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::Softmax(x)))
    }

    /// `x - logsumexp(x)` over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var, GradError> {
        let v = self.value(x)?;
        let shape = v.shape().to_vec();
        let cols = v.cols();
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(cols) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&e| (e - max).exp()).sum::<T>().ln();
            row.iter_mut().for_each(|e| *e -= lse);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::LogSoftmax(x)))
    }

    /// Same values under a new shape with equal element count.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, GradError> {
        let v = self.value(x)?;
        if shape.iter().product::<usize>() != v.len() {
            return Err(mismatch("reshape", v.shape(), shape));
        }
        let out = Tensor::new(shape.to_vec(), v.data().to_vec())?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, rg, Op::Reshape(x)))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var, GradError> {
        let total = self.value(x)?.data().iter().copied().sum();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(total), rg, Op::Sum(x)))
    }

    #[allow(clippy::too_many_arguments)]
    fn check_cell(
        &self,
        op: &'static str,
        x: Var,
        h: Var,
        w_ih: Var,
        w_hh: Var,
        b: Var,
        gates: usize,
    ) -> Result<(usize, usize, usize), GradError> {
        let (batch, input) = self.matrix_dims(op, x)?;
        let (hb, hidden) = self.matrix_dims(op, h)?;
        if hb != batch {
            return Err(mismatch(op, self.shape(x)?, self.shape(h)?));
        }
        let width = gates * hidden;
        if self.shape(w_ih)? != [input, width] {
            return Err(mismatch(op, self.shape(x)?, self.shape(w_ih)?));
        }
        if self.shape(w_hh)? != [hidden, width] {
            return Err(mismatch(op, self.shape(h)?, self.shape(w_hh)?));
        }
        if self.shape(b)? != [width] {
            return Err(mismatch(op, self.shape(w_ih)?, self.shape(b)?));
        }
        Ok((batch, input, hidden))
    }

    fn preactivation(
        &self,
        batch: usize,
        input: usize,
        hidden: usize,
        width: usize,
        vars: [Var; 4],
    ) -> Result<Vec<T>, GradError> {
        let [x, h, w_ih, w_hh] = vars;
        let mut z = vec![T::zero(); batch * width];
        gemm(batch, input, width, self.value(x)?.data(), false, self.value(w_ih)?.data(), false, &mut z, false);
        gemm(batch, hidden, width, self.value(h)?.data(), false, self.value(w_hh)?.data(), false, &mut z, true);
        Ok(z)
    }

    /// One simple-RNN step: `tanh(x·W_ih + h·W_hh + b)`.
    ///
    /// `x` is `[batch, input]`, `h` is `[batch, hidden]`, `w_ih` is
    /// `[input, hidden]`, `w_hh` is `[hidden, hidden]`, `b` is `[hidden]`.
    pub fn rnn_cell(&mut self, x: Var, h: Var, w_ih: Var, w_hh: Var, b: Var) -> Result<Var, GradError> {
        let (batch, input, hidden) = self.check_cell("rnn_cell", x, h, w_ih, w_hh, b, 1)?;
        let mut z = self.preactivation(batch, input, hidden, hidden, [x, h, w_ih, w_hh])?;
        let bv = self.value(b)?.data();
        for row in z.chunks_mut(hidden) {
            for (e, &bb) in row.iter_mut().zip(bv) {
                *e = (*e + bb).tanh();
            }
        }
        let rg = self.rg(&[x, h, w_ih, w_hh, b]);
        Ok(self.push(
            Tensor::new(vec![batch, hidden], z)?,
            rg,
            Op::RnnCell { x, h, w_ih, w_hh, b },
        ))
    }

    /// One LSTM step with gate order input, forget, cell, output.
    ///
    /// `w_ih` is `[input, 4·hidden]`, `w_hh` is `[hidden, 4·hidden]`, `b` is
    /// `[4·hidden]`. Returns `[batch, 2·hidden]` holding the new hidden state
    /// followed by the new cell state; split it with [`Tape::slice_cols`].
    #[allow(clippy::too_many_arguments)]
    pub fn lstm_cell(
        &mut self,
        x: Var,
        h: Var,
        c: Var,
        w_ih: Var,
        w_hh: Var,
        b: Var,
    ) -> Result<Var, GradError> {
        let (batch, input, hidden) = self.check_cell("lstm_cell", x, h, w_ih, w_hh, b, 4)?;
        if self.shape(c)? != self.shape(h)? {
            return Err(mismatch("lstm_cell", self.shape(h)?, self.shape(c)?));
        }
        let width = 4 * hidden;
        let mut gates = self.preactivation(batch, input, hidden, width, [x, h, w_ih, w_hh])?;
        let bv = self.value(b)?.data();
        let cv = self.value(c)?.data();
        let mut out = vec![T::zero(); batch * 2 * hidden];
        let mut tanh_c = vec![T::zero(); batch * hidden];
        for r in 0..batch {
            let g = &mut gates[r * width..(r + 1) * width];
            for (j, e) in g.iter_mut().enumerate() {
                let z = *e + bv[j];
                *e = if (2 * hidden..3 * hidden).contains(&j) {
                    z.tanh()
                } else {
                    sigmoid(z)
                };
            }
            for j in 0..hidden {
                let (i, f, gg, o) = (g[j], g[hidden + j], g[2 * hidden + j], g[3 * hidden + j]);
                let c_new = f * cv[r * hidden + j] + i * gg;
                let tc = c_new.tanh();
                tanh_c[r * hidden + j] = tc;
                out[r * 2 * hidden + j] = o * tc;
                out[r * 2 * hidden + hidden + j] = c_new;
            }
        }
        let rg = self.rg(&[x, h, c, w_ih, w_hh, b]);
        Ok(self.push(
            Tensor::new(vec![batch, 2 * hidden], out)?,
            rg,
            Op::LstmCell {
                x,
                h,
                c,
                w_ih,
                w_hh,
                b,
                gates,
                tanh_c,
            },
        ))
    }

    // ----- reverse sweep -----

    /// Computes `∂loss/∂v` for every node that requires gradients.
    ///
    /// All gradients from a previous call are cleared first, so calling this
    /// twice on the same tape yields the same gradients rather than their sum.
    pub fn backward(&mut self, loss: Var) -> Result<(), GradError> {
        let shape = self.shape(loss)?;
        if shape.iter().product::<usize>() != 1 {
            return Err(GradError::NonScalarLoss(shape.to_vec()));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        let last = loss.index as usize;
        self.nodes[last].grad = Some(vec![T::one()]);
        for i in (0..=last).rev() {
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = if self.nodes[i].requires_grad {
                self.local_grads(i, &g)
            } else {
                Vec::new()
            };
            self.nodes[i].grad = Some(g);
            for (v, d) in contributions {
                let node = &mut self.nodes[v.index as usize];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, &x)| *a += x),
                    None => node.grad = Some(d),
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let val = |v: Var| &self.nodes[v.index as usize].value;
        let needs = |v: Var| self.nodes[v.index as usize].requires_grad;
        let out = &self.nodes[i].value;
        let mut res: Vec<(Var, Vec<T>)> = Vec::new();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
                let n = val(*b).shape()[1];
                if needs(*a) {
                    let mut d = vec![T::zero(); m * k];
                    gemm(m, n, k, g, false, val(*b).data(), true, &mut d, false);
                    res.push((*a, d));
                }
                if needs(*b) {
                    let mut d = vec![T::zero(); k * n];
                    gemm(k, m, n, val(*a).data(), true, g, false, &mut d, false);
                    res.push((*b, d));
                }
            }
            Op::AddBias { x, bias } => {
                if needs(*x) {
                    res.push((*x, g.to_vec()));
                }
                if needs(*bias) {
                    let c = val(*bias).len();
                    res.push((*bias, col_sums(g.len() / c, c, g)));
                }
            }
            Op::Conv1d {
                input,
                weight,
                bias,
                cols,
            } => {
                let is = val(*input).shape();
                let (batch, len, cin) = (is[0], is[1], is[2]);
                let ws = val(*weight).shape();
                let (width, cout) = (ws[1], ws[2]);
                let out_len = len - width + 1;
                let rows = batch * out_len;
                let patch = cin * width;
                if needs(*weight) {
                    let mut d = vec![T::zero(); patch * cout];
                    gemm(patch, rows, cout, cols, true, g, false, &mut d, false);
                    res.push((*weight, d));
                }
                if needs(*bias) {
                    res.push((*bias, col_sums(rows, cout, g)));
                }
                if needs(*input) {
                    let mut dcols = vec![T::zero(); rows * patch];
                    gemm(rows, cout, patch, g, false, val(*weight).data(), true, &mut dcols, false);
                    let mut d = vec![T::zero(); batch * len * cin];
                    for b in 0..batch {
                        for t in 0..out_len {
                            let row = &dcols[(b * out_len + t) * patch..(b * out_len + t + 1) * patch];
                            for k in 0..width {
                                let dst = (b * len + t + k) * cin;
                                for c in 0..cin {
                                    d[dst + c] += row[c * width + k];
                                }
                            }
                        }
                    }
                    res.push((*input, d));
                }
            }
            Op::MaskedMaxPool { input, argmax } => {
                if needs(*input) {
                    let mut d = vec![T::zero(); val(*input).len()];
                    for (&idx, &gv) in argmax.iter().zip(g) {
                        d[idx] += gv;
                    }
                    res.push((*input, d));
                }
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    res.push((*a, g.to_vec()));
                }
                if needs(*b) {
                    res.push((*b, g.to_vec()));
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    res.push((*a, g.to_vec()));
                }
                if needs(*b) {
                    res.push((*b, g.iter().map(|&x| -x).collect()));
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    res.push((*a, g.iter().zip(val(*b).data()).map(|(&x, &y)| x * y).collect()));
                }
                if needs(*b) {
                    res.push((*b, g.iter().zip(val(*a).data()).map(|(&x, &y)| x * y).collect()));
                }
            }
            Op::Scale(x, k) => {
                res.push((*x, g.iter().map(|&e| e * *k).collect()));
            }
            Op::Tanh(x) => {
                let d = g.iter().zip(out.data()).map(|(&gv, &y)| gv * (T::one() - y * y));
                res.push((*x, d.collect()));
            }
            Op::Sigmoid(x) => {
                let d = g.iter().zip(out.data()).map(|(&gv, &y)| gv * y * (T::one() - y));
                res.push((*x, d.collect()));
            }
            Op::Ln(x) => {
                res.push((*x, g.iter().zip(val(*x).data()).map(|(&gv, &e)| gv / e).collect()));
            }
            Op::Softplus(x) => {
                let d = g.iter().zip(val(*x).data()).map(|(&gv, &e)| gv * sigmoid(e));
                res.push((*x, d.collect()));
            }
            Op::Concat(inputs) => {
                let total = out.cols();
                let rows = out.rows();
                let mut offset = 0;
                for &v in inputs {
                    let w = val(v).cols();
                    if needs(v) {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        res.push((v, d));
                    }
                    offset += w;
                }
            }
            Op::StackRows(inputs) => {
                let mut offset = 0;
                for &v in inputs {
                    let n = val(v).len();
                    if needs(v) {
                        res.push((v, g[offset..offset + n].to_vec()));
                    }
                    offset += n;
                }
            }
            Op::SliceRows { input, start } => {
                let cols = out.cols();
                let mut d = vec![T::zero(); val(*input).len()];
                d[start * cols..start * cols + g.len()].copy_from_slice(g);
                res.push((*input, d));
            }
            Op::SliceCols { input, start } => {
                let src = val(*input);
                let (cols, w) = (src.cols(), out.cols());
                let mut d = vec![T::zero(); src.len()];
                for r in 0..out.rows() {
                    d[r * cols + start..r * cols + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                res.push((*input, d));
            }
            Op::Softmax(x) => {
                let cols = out.cols();
                let mut d = vec![T::zero(); g.len()];
                for ((dr, gr), yr) in d.chunks_mut(cols).zip(g.chunks(cols)).zip(out.data().chunks(cols)) {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for ((de, &ge), &ye) in dr.iter_mut().zip(gr).zip(yr) {
                        *de = ye * (ge - dot);
                    }
                }
                res.push((*x, d));
            }
            Op::LogSoftmax(x) => {
                let cols = out.cols();
                let mut d = vec![T::zero(); g.len()];
                for ((dr, gr), yr) in d.chunks_mut(cols).zip(g.chunks(cols)).zip(out.data().chunks(cols)) {
                    let total: T = gr.iter().copied().sum();
                    for ((de, &ge), &ye) in dr.iter_mut().zip(gr).zip(yr) {
                        *de = ge - ye.exp() * total;
                    }
                }
                res.push((*x, d));
            }
            Op::Reshape(x) => {
                res.push((*x, g.to_vec()));
            }
            Op::Sum(x) => {
                res.push((*x, vec![g[0]; val(*x).len()]));
            }
            Op::RnnCell { x, h, w_ih, w_hh, b } => {
                let dz: Vec<T> = g.iter().zip(out.data()).map(|(&gv, &y)| gv * (T::one() - y * y)).collect();
                self.cell_grads(&mut res, &dz, out.shape()[1], [*x, *h, *w_ih, *w_hh, *b]);
            }
            Op::LstmCell {
                x,
                h,
                c,
                w_ih,
                w_hh,
                b,
                gates,
                tanh_c,
            } => {
                let hidden = out.cols() / 2;
                let batch = out.rows();
                let width = 4 * hidden;
                let cv = val(*c).data();
                let mut dz = vec![T::zero(); batch * width];
                let mut dc_prev = vec![T::zero(); batch * hidden];
                for r in 0..batch {
                    let gr = &gates[r * width..(r + 1) * width];
                    for j in 0..hidden {
                        let (i, f, gg, o) = (gr[j], gr[hidden + j], gr[2 * hidden + j], gr[3 * hidden + j]);
                        let tc = tanh_c[r * hidden + j];
                        let dh = g[r * 2 * hidden + j];
                        let dc = g[r * 2 * hidden + hidden + j] + dh * o * (T::one() - tc * tc);
                        let z = &mut dz[r * width..(r + 1) * width];
                        z[j] = dc * gg * i * (T::one() - i);
                        z[hidden + j] = dc * cv[r * hidden + j] * f * (T::one() - f);
                        z[2 * hidden + j] = dc * i * (T::one() - gg * gg);
                        z[3 * hidden + j] = dh * tc * o * (T::one() - o);
                        dc_prev[r * hidden + j] = dc * f;
                    }
                }
                if needs(*c) {
                    res.push((*c, dc_prev));
                }
                self.cell_grads(&mut res, &dz, width, [*x, *h, *w_ih, *w_hh, *b]);
            }
        }
        res
    }

    /// Shared tail of the recurrent cell backward passes: given the gradient
    /// `dz` of the pre-activation `[batch, width]`, distribute it to the cell inputs.
    fn cell_grads(&self, res: &mut Vec<(Var, Vec<T>)>, dz: &[T], width: usize, vars: [Var; 5]) {
        let [x, h, w_ih, w_hh, b] = vars;
        let val = |v: Var| &self.nodes[v.index as usize].value;
        let needs = |v: Var| self.nodes[v.index as usize].requires_grad;
        let batch = dz.len() / width;
        let input = val(x).cols();
        let hidden = val(h).cols();
        if needs(x) {
            let mut d = vec![T::zero(); batch * input];
            gemm(batch, width, input, dz, false, val(w_ih).data(), true, &mut d, false);
            res.push((x, d));
        }
        if needs(h) {
            let mut d = vec![T::zero(); batch * hidden];
            gemm(batch, width, hidden, dz, false, val(w_hh).data(), true, &mut d, false);
            res.push((h, d));
        }
        if needs(w_ih) {
            let mut d = vec![T::zero(); input * width];
            gemm(input, batch, width, val(x).data(), true, dz, false, &mut d, false);
            res.push((w_ih, d));
        }
        if needs(w_hh) {
            let mut d = vec![T::zero(); hidden * width];
            gemm(hidden, batch, width, val(h).data(), true, dz, false, &mut d, false);
            res.push((w_hh, d));
        }
        if needs(b) {
            res.push((b, col_sums(batch, width, dz)));
        }
    }
}
