//! Reverse-mode differentiation over a recorded operation list.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and `backward` visits each node once, from the loss
//! towards the leaves. Every op checks its output for NaN/Inf.

use super::{ComputeError, Tensor};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Axis selector for two-dimensional reductions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Along rows: each column is treated independently.
    Rows,
    /// Along columns: each row is treated independently.
    Cols,
}

/// One weighted reference to a source row, used by the gather ops.
pub type WeightedIndex<T> = (usize, T);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Recip(Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Clamp(Var, T, T),
    Reshape(Var),
    Conv1d { input: Var, filters: Var, bias: Var },
    ConcatRows(Vec<Var>),
    SliceRows { src: Var, start: usize },
    MatMulT(Var, Var),
    Softmax { src: Var, axis: Axis },
    SumOthers { src: Var, axis: Axis },
    GatherSum { src: Var, groups: Vec<Vec<WeightedIndex<T>>> },
    GatherMax { src: Var, picks: Vec<Option<WeightedIndex<T>>> },
    ScatterRows { src: Var, rows: Vec<usize> },
    Pick { src: Var, idx: Vec<usize> },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Operation recorder for one forward pass.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of its shape when the loss does not reach it.
    pub fn get_or_zeros(&self, var: Var) -> Tensor<T> {
        match self.get(var) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }
}

fn mismatch(op: &'static str, detail: String) -> ComputeError {
    ComputeError::ShapeMismatch { op, detail }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Records a leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Result<Var, ComputeError> {
        if !value.is_finite() {
            return Err(ComputeError::NonFinite { op: name });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), ComputeError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(mismatch(op, format!("{:?} vs {:?}", sa, sb)));
        }
        Ok(())
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var, ComputeError> {
        self.same_shape(name, a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push(name, out, op, &[a, b])
    }

    fn unary(&mut self, name: &'static str, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var, ComputeError> {
        let out = self.value(a).map(f);
        self.push(name, out, op, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, ComputeError> {
        self.zip_with("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, ComputeError> {
        self.zip_with("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, ComputeError> {
        self.zip_with("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var, ComputeError> {
        self.unary("scale", a, Op::Scale(a, c), |x| x * c)
    }

    pub fn recip(&mut self, a: Var) -> Result<Var, ComputeError> {
        self.unary("recip", a, Op::Recip(a), |x| x.recip())
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, ComputeError> {
        self.unary("exp", a, Op::Exp(a), |x| x.exp())
    }

    pub fn log(&mut self, a: Var) -> Result<Var, ComputeError> {
        self.unary("log", a, Op::Log(a), |x| x.ln())
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, ComputeError> {
        self.unary("relu", a, Op::Relu(a), |x| x.max(T::zero()))
    }

    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Result<Var, ComputeError> {
        self.unary("clamp", a, Op::Clamp(a, lo, hi), |x| x.max(lo).min(hi))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, ComputeError> {
        let out = self.value(a).clone().reshaped(shape)?;
        self.push("reshape", out, Op::Reshape(a), &[a])
    }

    /// Same-padded 1-D convolution.
    ///
    /// `input` is `n × d_in`, `filters` is `width × d_in × d_out`, `bias` is
    /// `d_out`. Zero padding of `width / 2` rows on the left and the remainder
    /// on the right keeps the output at `n` rows.
    pub fn conv1d(&mut self, input: Var, filters: Var, bias: Var) -> Result<Var, ComputeError> {
        let x = self.value(input);
        let w = self.value(filters);
        let b = self.value(bias);
        if x.ndim() != 2 || w.ndim() != 3 || b.ndim() != 1 {
            return Err(mismatch(
                "conv1d",
                format!("ranks input {:?} filters {:?} bias {:?}", x.shape(), w.shape(), b.shape()),
            ));
        }
        let (n, d_in) = (x.shape()[0], x.shape()[1]);
        let (width, f_in, d_out) = (w.shape()[0], w.shape()[1], w.shape()[2]);
        if f_in != d_in || b.shape()[0] != d_out || width == 0 {
            return Err(mismatch(
                "conv1d",
                format!("input {:?} filters {:?} bias {:?}", x.shape(), w.shape(), b.shape()),
            ));
        }
        let left = width / 2;
        let (xd, wd, bd) = (x.data(), w.data(), b.data());
        let mut out = vec![T::zero(); n * d_out];
        for t in 0..n {
            let row = &mut out[t * d_out..(t + 1) * d_out];
            row.copy_from_slice(bd);
            for k in 0..width {
                let src = t as isize + k as isize - left as isize;
                if src < 0 || src >= n as isize {
                    continue;
                }
                let xr = &xd[src as usize * d_in..(src as usize + 1) * d_in];
                for (i, &xv) in xr.iter().enumerate() {
                    if xv == T::zero() {
                        continue;
                    }
                    let wr = &wd[(k * d_in + i) * d_out..(k * d_in + i + 1) * d_out];
                    for (o, &wv) in row.iter_mut().zip(wr) {
                        *o = *o + xv * wv;
                    }
                }
            }
        }
        let out = Tensor::matrix(n, d_out, out)?;
        self.push("conv1d", out, Op::Conv1d { input, filters, bias }, &[input, filters, bias])
    }

    /// Stacks matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, ComputeError> {
        let cols = match parts.first() {
            Some(p) => self.value(*p).cols(),
            None => return Err(ComputeError::EmptyInput { op: "concat_rows" }),
        };
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let v = self.value(*p);
            if v.ndim() != 2 || v.cols() != cols {
                return Err(mismatch("concat_rows", format!("part {:?}, expected {} cols", v.shape(), cols)));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = Tensor::matrix(rows, cols, data)?;
        self.push("concat_rows", out, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn slice_rows(&mut self, src: Var, start: usize, len: usize) -> Result<Var, ComputeError> {
        let v = self.value(src);
        if v.ndim() != 2 || start + len > v.rows() {
            return Err(mismatch("slice_rows", format!("{:?} rows {}..{}", v.shape(), start, start + len)));
        }
        let c = v.cols();
        let out = Tensor::matrix(len, c, v.data()[start * c..(start + len) * c].to_vec())?;
        self.push("slice_rows", out, Op::SliceRows { src, start }, &[src])
    }

    /// `a · bᵀ` for `a: n × k` and `b: m × k`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, ComputeError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ndim() != 2 || vb.ndim() != 2 || va.cols() != vb.cols() {
            return Err(mismatch("matmul_t", format!("{:?} · {:?}ᵀ", va.shape(), vb.shape())));
        }
        let (n, m) = (va.rows(), vb.rows());
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let ar = va.row(i);
            for j in 0..m {
                out.push(ar.iter().zip(vb.row(j)).map(|(&x, &y)| x * y).sum());
            }
        }
        let out = Tensor::matrix(n, m, out)?;
        self.push("matmul_t", out, Op::MatMulT(a, b), &[a, b])
    }

    /// Max-shifted softmax. Vectors are normalized as a whole.
    pub fn softmax(&mut self, src: Var, axis: Axis) -> Result<Var, ComputeError> {
        let v = self.value(src);
        if v.numel() == 0 {
            return Err(ComputeError::EmptyInput { op: "softmax" });
        }
        let axis = if v.ndim() < 2 { Axis::Rows } else { axis };
        let mut out = v.data().to_vec();
        for_each_lane(v.rows(), v.cols(), axis, |lane| {
            let m = lane.iter().map(|&i| out[i]).fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for &i in lane {
                out[i] = (out[i] - m).exp();
                z = z + out[i];
            }
            for &i in lane {
                out[i] = out[i] / z;
            }
        });
        let out = Tensor::new(v.shape().to_vec(), out)?;
        self.push("softmax", out, Op::Softmax { src, axis }, &[src])
    }

    /// For each element, the sum of the other elements in its lane.
    ///
    /// Computed with prefix and suffix sums rather than `total - x`, which
    /// loses precision when one element dominates the lane.
    pub fn sum_others(&mut self, src: Var, axis: Axis) -> Result<Var, ComputeError> {
        let v = self.value(src);
        if v.ndim() != 2 {
            return Err(mismatch("sum_others", format!("{:?}", v.shape())));
        }
        let out = sum_others_data(v.data(), v.rows(), v.cols(), axis);
        let out = Tensor::new(v.shape().to_vec(), out)?;
        self.push("sum_others", out, Op::SumOthers { src, axis }, &[src])
    }

    /// Weighted row pooling: `out[g] = Σ_{(i, w) ∈ groups[g]} w · src[i]`.
    ///
    /// A vector source is treated as a single column and yields a vector.
    pub fn gather_sum(&mut self, src: Var, groups: Vec<Vec<WeightedIndex<T>>>) -> Result<Var, ComputeError> {
        let v = self.value(src);
        let (n, c) = (v.rows(), v.cols());
        let mut out = vec![T::zero(); groups.len() * c];
        for (g, group) in groups.iter().enumerate() {
            for &(i, w) in group {
                if i >= n {
                    return Err(ComputeError::IndexOutOfRange { op: "gather_sum", index: i, len: n });
                }
                for (o, &x) in out[g * c..(g + 1) * c].iter_mut().zip(v.row(i)) {
                    *o = *o + w * x;
                }
            }
        }
        let shape = if v.ndim() < 2 { vec![groups.len()] } else { vec![groups.len(), c] };
        let out = Tensor::new(shape, out)?;
        self.push("gather_sum", out, Op::GatherSum { src, groups }, &[src])
    }

    /// Weighted row max: `out[g][c] = max_{(i, w) ∈ groups[g]} w · src[i][c]`.
    ///
    /// Empty groups produce zero. The gradient flows to the maximizing entry.
    pub fn gather_max(&mut self, src: Var, groups: &[Vec<WeightedIndex<T>>]) -> Result<Var, ComputeError> {
        let v = self.value(src);
        let (n, c) = (v.rows(), v.cols());
        let mut out = vec![T::zero(); groups.len() * c];
        let mut picks = vec![None; groups.len() * c];
        for (g, group) in groups.iter().enumerate() {
            for col in 0..c {
                let mut best: Option<(T, WeightedIndex<T>)> = None;
                for &(i, w) in group {
                    if i >= n {
                        return Err(ComputeError::IndexOutOfRange { op: "gather_max", index: i, len: n });
                    }
                    let s = w * v.get2(i, col);
                    if best.is_none_or(|(b, _)| s > b) {
                        best = Some((s, (i, w)));
                    }
                }
                if let Some((s, pick)) = best {
                    out[g * c + col] = s;
                    picks[g * c + col] = Some(pick);
                }
            }
        }
        let shape = if v.ndim() < 2 { vec![groups.len()] } else { vec![groups.len(), c] };
        let out = Tensor::new(shape, out)?;
        self.push("gather_max", out, Op::GatherMax { src, picks }, &[src])
    }

    /// Places vector `src` on the listed rows of an `n × len(src)` zero matrix.
    pub fn scatter_rows(&mut self, src: Var, rows: Vec<usize>, n: usize) -> Result<Var, ComputeError> {
        let v = self.value(src);
        if v.ndim() != 1 {
            return Err(mismatch("scatter_rows", format!("{:?}", v.shape())));
        }
        let e = v.numel();
        let mut out = vec![T::zero(); n * e];
        for &r in &rows {
            if r >= n {
                return Err(ComputeError::IndexOutOfRange { op: "scatter_rows", index: r, len: n });
            }
            out[r * e..(r + 1) * e].copy_from_slice(v.data());
        }
        let out = Tensor::matrix(n, e, out)?;
        self.push("scatter_rows", out, Op::ScatterRows { src, rows }, &[src])
    }

    /// Selects elements by flat index into a vector.
    pub fn pick(&mut self, src: Var, idx: Vec<usize>) -> Result<Var, ComputeError> {
        let v = self.value(src);
        let mut out = Vec::with_capacity(idx.len());
        for &i in &idx {
            if i >= v.numel() {
                return Err(ComputeError::IndexOutOfRange { op: "pick", index: i, len: v.numel() });
            }
            out.push(v.data()[i]);
        }
        self.push("pick", Tensor::vector(out), Op::Pick { src, idx }, &[src])
    }

    pub fn sum(&mut self, src: Var) -> Result<Var, ComputeError> {
        let s = self.value(src).sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(src), &[src])
    }

    pub fn mean(&mut self, src: Var) -> Result<Var, ComputeError> {
        let v = self.value(src);
        if v.numel() == 0 {
            return Err(ComputeError::EmptyInput { op: "mean" });
        }
        let m = v.sum() / T::lit(v.numel() as f64);
        self.push("mean", Tensor::scalar(m), Op::Mean(src), &[src])
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, ComputeError> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(ComputeError::NonScalarLoss { shape: lv.shape().to_vec() });
        }
        if !lv.is_finite() {
            return Err(ComputeError::NonFinite { op: "loss" });
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| match g {
                Some(g) if n.requires_grad => Tensor::new(n.value.shape().to_vec(), g).ok(),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |d| axpy(d, g, T::one()));
                self.accumulate(grads, *b, |d| axpy(d, g, T::one()));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |d| axpy(d, g, T::one()));
                self.accumulate(grads, *b, |d| axpy(d, g, -T::one()));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |d| {
                    for ((d, &gi), &y) in d.iter_mut().zip(g).zip(vb) {
                        *d = *d + gi * y;
                    }
                });
                self.accumulate(grads, *b, |d| {
                    for ((d, &gi), &x) in d.iter_mut().zip(g).zip(va) {
                        *d = *d + gi * x;
                    }
                });
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, |d| axpy(d, g, *c)),
            Op::Recip(a) => self.accumulate(grads, *a, |d| {
                for ((d, &gi), &y) in d.iter_mut().zip(g).zip(out) {
                    *d = *d - gi * y * y;
                }
            }),
            Op::Exp(a) => self.accumulate(grads, *a, |d| {
                for ((d, &gi), &y) in d.iter_mut().zip(g).zip(out) {
                    *d = *d + gi * y;
                }
            }),
            Op::Log(a) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, |d| {
                    for ((d, &gi), &xi) in d.iter_mut().zip(g).zip(x) {
                        *d = *d + gi / xi;
                    }
                })
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, |d| {
                    for ((d, &gi), &xi) in d.iter_mut().zip(g).zip(x) {
                        if xi > T::zero() {
                            *d = *d + gi;
                        }
                    }
                })
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, |d| {
                    for ((d, &gi), &xi) in d.iter_mut().zip(g).zip(x) {
                        if xi >= *lo && xi <= *hi {
                            *d = *d + gi;
                        }
                    }
                })
            }
            Op::Reshape(a) => self.accumulate(grads, *a, |d| axpy(d, g, T::one())),
            Op::Conv1d { input, filters, bias } => self.conv1d_backward(*input, *filters, *bias, g, grads),
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).numel();
                    self.accumulate(grads, *p, |d| axpy(d, &g[offset..offset + len], T::one()));
                    offset += len;
                }
            }
            Op::SliceRows { src, start } => {
                let c = self.value(*src).cols();
                let off = start * c;
                self.accumulate(grads, *src, |d| axpy(&mut d[off..off + g.len()], g, T::one()));
            }
            Op::MatMulT(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (n, k, m) = (va.rows(), va.cols(), vb.rows());
                self.accumulate(grads, *a, |d| {
                    for i in 0..n {
                        for j in 0..m {
                            let gij = g[i * m + j];
                            if gij == T::zero() {
                                continue;
                            }
                            for (dl, &bl) in d[i * k..(i + 1) * k].iter_mut().zip(vb.row(j)) {
                                *dl = *dl + gij * bl;
                            }
                        }
                    }
                });
                self.accumulate(grads, *b, |d| {
                    for i in 0..n {
                        for j in 0..m {
                            let gij = g[i * m + j];
                            if gij == T::zero() {
                                continue;
                            }
                            for (dl, &al) in d[j * k..(j + 1) * k].iter_mut().zip(va.row(i)) {
                                *dl = *dl + gij * al;
                            }
                        }
                    }
                });
            }
            Op::Softmax { src, axis } => {
                let v = self.value(*src);
                self.accumulate(grads, *src, |d| {
                    for_each_lane(v.rows(), v.cols(), *axis, |lane| {
                        let dot: T = lane.iter().map(|&i| out[i] * g[i]).sum();
                        for &i in lane {
                            d[i] = d[i] + out[i] * (g[i] - dot);
                        }
                    });
                });
            }
            Op::SumOthers { src, axis } => {
                let v = self.value(*src);
                let back = sum_others_data(g, v.rows(), v.cols(), *axis);
                self.accumulate(grads, *src, |d| axpy(d, &back, T::one()));
            }
            Op::GatherSum { src, groups } => {
                let c = self.value(*src).cols();
                self.accumulate(grads, *src, |d| {
                    for (gi, group) in groups.iter().enumerate() {
                        for &(i, w) in group {
                            for (dv, &gv) in d[i * c..(i + 1) * c].iter_mut().zip(&g[gi * c..(gi + 1) * c]) {
                                *dv = *dv + w * gv;
                            }
                        }
                    }
                });
            }
            Op::GatherMax { src, picks } => {
                let c = self.value(*src).cols();
                self.accumulate(grads, *src, |d| {
                    for (slot, pick) in picks.iter().enumerate() {
                        if let Some((i, w)) = pick {
                            let col = slot % c;
                            d[i * c + col] = d[i * c + col] + *w * g[slot];
                        }
                    }
                });
            }
            Op::ScatterRows { src, rows } => {
                let e = self.value(*src).numel();
                self.accumulate(grads, *src, |d| {
                    for &r in rows {
                        axpy(d, &g[r * e..(r + 1) * e], T::one());
                    }
                });
            }
            Op::Pick { src, idx } => self.accumulate(grads, *src, |d| {
                for (&i, &gi) in idx.iter().zip(g) {
                    d[i] = d[i] + gi;
                }
            }),
            Op::Sum(src) => self.accumulate(grads, *src, |d| {
                for x in d.iter_mut() {
                    *x = *x + g[0];
                }
            }),
            Op::Mean(src) => {
                let n = T::lit(self.value(*src).numel() as f64);
                self.accumulate(grads, *src, |d| {
                    for x in d.iter_mut() {
                        *x = *x + g[0] / n;
                    }
                })
            }
        }
    }

    fn conv1d_backward(&self, input: Var, filters: Var, bias: Var, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let x = self.value(input);
        let w = self.value(filters);
        let (n, d_in) = (x.shape()[0], x.shape()[1]);
        let (width, d_out) = (w.shape()[0], w.shape()[2]);
        let left = width / 2;
        let (xd, wd) = (x.data(), w.data());
        let windows = |f: &mut dyn FnMut(usize, usize, usize)| {
            for t in 0..n {
                for k in 0..width {
                    let src = t as isize + k as isize - left as isize;
                    if src >= 0 && src < n as isize {
                        f(t, k, src as usize);
                    }
                }
            }
        };
        self.accumulate(grads, bias, |d| {
            for t in 0..n {
                axpy(d, &g[t * d_out..(t + 1) * d_out], T::one());
            }
        });
        self.accumulate(grads, filters, |d| {
            windows(&mut |t, k, src| {
                let gr = &g[t * d_out..(t + 1) * d_out];
                for i in 0..d_in {
                    let xv = xd[src * d_in + i];
                    if xv == T::zero() {
                        continue;
                    }
                    let dw = &mut d[(k * d_in + i) * d_out..(k * d_in + i + 1) * d_out];
                    axpy(dw, gr, xv);
                }
            });
        });
        self.accumulate(grads, input, |d| {
            windows(&mut |t, k, src| {
                let gr = &g[t * d_out..(t + 1) * d_out];
                for i in 0..d_in {
                    let wr = &wd[(k * d_in + i) * d_out..(k * d_in + i + 1) * d_out];
                    let s: T = wr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    d[src * d_in + i] = d[src * d_in + i] + s;
                }
            });
        });
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], target: Var, f: impl FnOnce(&mut [T])) {
        let node = &self.nodes[target.0];
        if !node.requires_grad {
            return;
        }
        let buf = grads[target.0].get_or_insert_with(|| vec![T::zero(); node.value.numel()]);
        f(buf);
    }
}

fn axpy<T: Scalar>(dst: &mut [T], src: &[T], a: T) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + a * s;
    }
}

fn for_each_lane(rows: usize, cols: usize, axis: Axis, mut f: impl FnMut(&[usize])) {
    let mut lane = Vec::new();
    match axis {
        Axis::Rows => {
            for c in 0..cols {
                lane.clear();
                lane.extend((0..rows).map(|r| r * cols + c));
                f(&lane);
            }
        }
        Axis::Cols => {
            for r in 0..rows {
                lane.clear();
                lane.extend((0..cols).map(|c| r * cols + c));
                f(&lane);
            }
        }
    }
}

fn sum_others_data<T: Scalar>(x: &[T], rows: usize, cols: usize, axis: Axis) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for_each_lane(rows, cols, axis, |lane| {
        let mut prefix = T::zero();
        for &i in lane {
            out[i] = prefix;
            prefix = prefix + x[i];
        }
        let mut suffix = T::zero();
        for &i in lane.iter().rev() {
            out[i] = out[i] + suffix;
            suffix = suffix + x[i];
        }
    });
    out
}
