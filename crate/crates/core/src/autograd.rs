//! Tape-based reverse-mode differentiation over [`Tensor`] kernels.
//!
//! Model code is written once against the [`Backend`] trait. [`Eager`] runs
//! the kernels directly on tensors; [`Tape`] runs the same kernels and records
//! each call so [`Tape::backward`] can replay the adjoints in reverse order.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{self, LayerNormCache, NceAxis, Tensor};

/// Handle to a node on a [`Tape`]. Node ids are assigned in creation order, so
/// inputs always precede outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Exp(Var),
    MaskMul(Var, Arc<Tensor>),
    Relu(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    Sum(Var),
    SoftmaxRows {
        x: Var,
        scale: f64,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        cache: LayerNormCache,
    },
    L2NormalizeRows {
        x: Var,
        norms: Vec<f64>,
    },
    InfoNce {
        s: Var,
        probs: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when no tracked path reaches the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, materializing zeros of `shape` when none flowed.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
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

    /// Drops every recorded node. Previously issued `Var`s become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    /// Registers a differentiable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Registers a value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Exact gradients of the scalar node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                if self.nodes[a.0].needs_grad {
                    let da = tensor::matmul(g, &tensor::transpose(bv)?)?
                        .reshaped(av.shape().to_vec())?;
                    self.accumulate(grads, *a, da);
                }
                if self.nodes[b.0].needs_grad {
                    let db = tensor::matmul(&tensor::transpose(av)?, g)?
                        .reshaped(bv.shape().to_vec())?;
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Transpose(a) => {
                let da = tensor::transpose(g)?.reshaped(self.value(*a).shape().to_vec())?;
                self.accumulate(grads, *a, da);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, tensor::scale(g, *s)?),
            Op::ScaleBy(x, s) => {
                let sv = self.value(*s).scalar()?;
                let xv = self.value(*x);
                self.accumulate(grads, *x, tensor::scale(g, sv)?);
                let ds: f64 = g.data().iter().zip(xv.data()).map(|(a, b)| a * b).sum();
                self.accumulate(grads, *s, Tensor::filled(self.value(*s).shape(), ds));
            }
            Op::Exp(a) => {
                self.accumulate(grads, *a, tensor::mul_elementwise(g, &node.value)?);
            }
            Op::MaskMul(a, mask) => {
                self.accumulate(grads, *a, tensor::mul_elementwise(g, mask)?);
            }
            Op::Relu(a) => {
                let xv = self.value(*a);
                let data = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(&d, &x)| if x > 0.0 { d } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, Tensor::new(xv.shape().to_vec(), data)?);
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let (r, c) = xv.dims2()?;
                let (_, w) = g.dims2()?;
                let mut dx = Tensor::zeros(xv.shape());
                let d = dx.data_mut();
                for i in 0..r {
                    d[i * c + start..i * c + start + w]
                        .copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let pv = self.value(*p);
                    let (_, w) = pv.dims2()?;
                    let dp = tensor::slice_cols(g, start, w)?.reshaped(pv.shape().to_vec())?;
                    self.accumulate(grads, *p, dp);
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let pv = self.value(*p);
                    let n = pv.len();
                    let dp =
                        Tensor::new(pv.shape().to_vec(), g.data()[offset..offset + n].to_vec())?;
                    self.accumulate(grads, *p, dp);
                    offset += n;
                }
            }
            Op::MeanRows(x) => {
                let xv = self.value(*x);
                let (r, c) = xv.dims2()?;
                let inv = 1.0 / r as f64;
                let mut data = Vec::with_capacity(r * c);
                for _ in 0..r {
                    data.extend(g.data().iter().map(|v| v * inv));
                }
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), data)?);
            }
            Op::Sum(x) => {
                let gv = g.scalar()?;
                self.accumulate(grads, *x, Tensor::filled(self.value(*x).shape(), gv));
            }
            Op::SoftmaxRows { x, scale } => {
                let y = &node.value;
                let (r, c) = y.dims2()?;
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let yr = &y.data()[i * c..(i + 1) * c];
                    let gr = &g.data()[i * c..(i + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for k in 0..c {
                        dx[i * c + k] = scale * yr[k] * (gr[k] - dot);
                    }
                }
                self.accumulate(grads, *x, Tensor::new(y.shape().to_vec(), dx)?);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                cache,
            } => {
                let gv = self.value(*gain);
                let (r, d) = node.value.dims2()?;
                let xhat = cache.normalized.data();
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                let mut dx = vec![0.0; r * d];
                for i in 0..r {
                    let gr = &g.data()[i * d..(i + 1) * d];
                    let xr = &xhat[i * d..(i + 1) * d];
                    let mut mean_dxhat = 0.0;
                    let mut mean_dxhat_xhat = 0.0;
                    for k in 0..d {
                        dgain[k] += gr[k] * xr[k];
                        dbias[k] += gr[k];
                        let dxh = gr[k] * gv.data()[k];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xr[k];
                    }
                    mean_dxhat /= d as f64;
                    mean_dxhat_xhat /= d as f64;
                    let inv = cache.inv_std[i];
                    for k in 0..d {
                        let dxh = gr[k] * gv.data()[k];
                        dx[i * d + k] = inv * (dxh - mean_dxhat - xr[k] * mean_dxhat_xhat);
                    }
                }
                let xs = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, Tensor::new(xs, dx)?);
                self.accumulate(grads, *gain, Tensor::new(gv.shape().to_vec(), dgain)?);
                let bs = self.value(*bias).shape().to_vec();
                self.accumulate(grads, *bias, Tensor::new(bs, dbias)?);
            }
            Op::L2NormalizeRows { x, norms } => {
                let y = &node.value;
                let (r, c) = y.dims2()?;
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let yr = &y.data()[i * c..(i + 1) * c];
                    let gr = &g.data()[i * c..(i + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for k in 0..c {
                        dx[i * c + k] = (gr[k] - yr[k] * dot) / norms[i];
                    }
                }
                self.accumulate(grads, *x, Tensor::new(y.shape().to_vec(), dx)?);
            }
            Op::InfoNce { s, probs } => {
                let gv = g.scalar()?;
                let (b, _) = probs.dims2()?;
                let inv = gv / b as f64;
                let mut ds: Vec<f64> = probs.data().iter().map(|p| p * inv).collect();
                for i in 0..b {
                    ds[i * b + i] -= inv;
                }
                self.accumulate(grads, *s, Tensor::new(vec![b, b], ds)?);
            }
        }
        Ok(())
    }
}

/// The kernel vocabulary shared by eager evaluation and the tape.
pub trait Backend {
    type T: Clone;

    fn constant(&mut self, t: Tensor) -> Self::T;
    fn value<'a>(&'a self, v: &'a Self::T) -> &'a Tensor;
    fn matmul(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T>;
    fn transpose(&mut self, a: &Self::T) -> Result<Self::T>;
    fn add(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T>;
    fn scale(&mut self, a: &Self::T, s: f64) -> Result<Self::T>;
    /// Multiplies every entry of `a` by the single-entry tensor `s`.
    fn scale_by(&mut self, a: &Self::T, s: &Self::T) -> Result<Self::T>;
    fn exp(&mut self, a: &Self::T) -> Result<Self::T>;
    fn mask_mul(&mut self, a: &Self::T, mask: Arc<Tensor>) -> Result<Self::T>;
    fn relu(&mut self, a: &Self::T) -> Result<Self::T>;
    fn slice_cols(&mut self, a: &Self::T, start: usize, len: usize) -> Result<Self::T>;
    fn concat_cols(&mut self, parts: &[Self::T]) -> Result<Self::T>;
    fn concat_rows(&mut self, parts: &[Self::T]) -> Result<Self::T>;
    fn mean_rows(&mut self, a: &Self::T) -> Result<Self::T>;
    fn sum(&mut self, a: &Self::T) -> Result<Self::T>;
    fn softmax_rows(&mut self, a: &Self::T, scale: f64) -> Result<Self::T>;
    fn layer_norm(
        &mut self,
        x: &Self::T,
        gain: &Self::T,
        bias: &Self::T,
        eps: f64,
    ) -> Result<Self::T>;
    fn l2_normalize_rows(&mut self, a: &Self::T) -> Result<Self::T>;
    fn info_nce(&mut self, s: &Self::T, axis: NceAxis) -> Result<Self::T>;
}

/// Direct evaluation with no recording.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

impl Backend for Eager {
    type T = Tensor;

    fn constant(&mut self, t: Tensor) -> Tensor {
        t
    }
    fn value<'a>(&'a self, v: &'a Tensor) -> &'a Tensor {
        v
    }
    fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        tensor::matmul(a, b)
    }
    fn transpose(&mut self, a: &Tensor) -> Result<Tensor> {
        tensor::transpose(a)
    }
    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        tensor::add(a, b)
    }
    fn scale(&mut self, a: &Tensor, s: f64) -> Result<Tensor> {
        tensor::scale(a, s)
    }
    fn scale_by(&mut self, a: &Tensor, s: &Tensor) -> Result<Tensor> {
        tensor::scale(a, s.scalar()?)
    }
    fn exp(&mut self, a: &Tensor) -> Result<Tensor> {
        tensor::exp(a)
    }
    fn mask_mul(&mut self, a: &Tensor, mask: Arc<Tensor>) -> Result<Tensor> {
        tensor::mul_elementwise(a, &mask)
    }
    fn relu(&mut self, a: &Tensor) -> Result<Tensor> {
        Ok(tensor::relu(a))
    }
    fn slice_cols(&mut self, a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        tensor::slice_cols(a, start, len)
    }
    fn concat_cols(&mut self, parts: &[Tensor]) -> Result<Tensor> {
        tensor::concat_cols(&parts.iter().collect::<Vec<_>>())
    }
    fn concat_rows(&mut self, parts: &[Tensor]) -> Result<Tensor> {
        tensor::concat_rows(&parts.iter().collect::<Vec<_>>())
    }
    fn mean_rows(&mut self, a: &Tensor) -> Result<Tensor> {
        tensor::mean_rows(a)
    }
    fn sum(&mut self, a: &Tensor) -> Result<Tensor> {
        Ok(tensor::sum(a))
    }
    fn softmax_rows(&mut self, a: &Tensor, scale: f64) -> Result<Tensor> {
        tensor::softmax_rows(a, scale)
    }
    fn layer_norm(&mut self, x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        tensor::layer_norm(x, gain, bias, eps)
    }
    fn l2_normalize_rows(&mut self, a: &Tensor) -> Result<Tensor> {
        tensor::l2_normalize_rows(a).map(|(t, _)| t)
    }
    fn info_nce(&mut self, s: &Tensor, axis: NceAxis) -> Result<Tensor> {
        let (loss, _) = tensor::info_nce(s, axis)?;
        Ok(Tensor::filled(&[1], loss))
    }
}

impl Backend for Tape {
    type T = Var;

    fn constant(&mut self, t: Tensor) -> Var {
        Tape::constant(self, t)
    }
    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        Tape::value(self, *v)
    }
    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = tensor::matmul(self.value(*a), self.value(*b))?;
        let t = self.tracked(&[*a, *b]);
        Ok(self.push(out, Op::MatMul(*a, *b), t))
    }
    fn transpose(&mut self, a: &Var) -> Result<Var> {
        let out = tensor::transpose(self.value(*a))?;
        let t = self.tracked(&[*a]);
        Ok(self.push(out, Op::Transpose(*a), t))
    }
    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = tensor::add(self.value(*a), self.value(*b))?;
        let t = self.tracked(&[*a, *b]);
        Ok(self.push(out, Op::Add(*a, *b), t))
    }
    fn scale(&mut self, a: &Var, s: f64) -> Result<Var> {
        let out = tensor::scale(self.value(*a), s)?;
        let t = self.tracked(&[*a]);
        Ok(self.push(out, Op::Scale(*a, s), t))
    }
    fn scale_by(&mut self, a: &Var, s: &Var) -> Result<Var> {
        let out = tensor::scale(self.value(*a), self.value(*s).scalar()?)?;
        let t = self.tracked(&[*a, *s]);
        Ok(self.push(out, Op::ScaleBy(*a, *s), t))
    }
    fn exp(&mut self, a: &Var) -> Result<Var> {
        let out = tensor::exp(self.value(*a))?;
        let t = self.tracked(&[*a]);
        Ok(self.push(out, Op::Exp(*a), t))
    }
    fn mask_mul(&mut self, a: &Var, mask: Arc<Tensor>) -> Result<Var> {
        let out = tensor::mul_elementwise(self.value(*a), &mask)?;
        let t = self.tracked(&[*a]);
        Ok(self.push(out, Op::MaskMul(*a, mask), t))
    }
    fn relu(&mut self, a: &Var) -> Result<Var> {
        let out = tensor::relu(self.value(*a));
        let t = self.tracked(&[*a]);
        Ok(self.push(out, Op::Relu(*a), t))
    }
    fn slice_cols(&mut self, a: &Var, start: usize, len: usize) -> Result<Var> {
        let out = tensor::slice_cols(self.value(*a), start, len)?;
        let t = self.tracked(&[*a]);
        Ok(self.push(out, Op::SliceCols { x: *a, start }, t))
    }
    fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
        let out = tensor::concat_cols(&vals)?;
        let t = self.tracked(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), t))
    }
    fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
        let out = tensor::concat_rows(&vals)?;
        let t = self.tracked(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), t))
    }
    fn mean_rows(&mut self, a: &Var) -> Result<Var> {
        let out = tensor::mean_rows(self.value(*a))?;
        let t = self.tracked(&[*a]);
        Ok(self.push(out, Op::MeanRows(*a), t))
    }
    fn sum(&mut self, a: &Var) -> Result<Var> {
        let out = tensor::sum(self.value(*a));
        let t = self.tracked(&[*a]);
        Ok(self.push(out, Op::Sum(*a), t))
    }
    fn softmax_rows(&mut self, a: &Var, scale: f64) -> Result<Var> {
        let out = tensor::softmax_rows(self.value(*a), scale)?;
        let t = self.tracked(&[*a]);
        Ok(self.push(out, Op::SoftmaxRows { x: *a, scale }, t))
    }
    fn layer_norm(&mut self, x: &Var, gain: &Var, bias: &Var, eps: f64) -> Result<Var> {
        let (out, cache) =
            tensor::layer_norm_rows(self.value(*x), self.value(*gain), self.value(*bias), eps)?;
        let t = self.tracked(&[*x, *gain, *bias]);
        let op = Op::LayerNorm {
            x: *x,
            gain: *gain,
            bias: *bias,
            cache,
        };
        Ok(self.push(out, op, t))
    }
    fn l2_normalize_rows(&mut self, a: &Var) -> Result<Var> {
        let (out, norms) = tensor::l2_normalize_rows(self.value(*a))?;
        let t = self.tracked(&[*a]);
        Ok(self.push(out, Op::L2NormalizeRows { x: *a, norms }, t))
    }
    fn info_nce(&mut self, s: &Var, axis: NceAxis) -> Result<Var> {
        let (loss, probs) = tensor::info_nce(self.value(*s), axis)?;
        let t = self.tracked(&[*s]);
        Ok(self.push(Tensor::filled(&[1], loss), Op::InfoNce { s: *s, probs }, t))
    }
}

/// Central-difference gradient `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_diff_gradient<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!(
                "objective is non-finite near coordinate {i}"
            )));
        }
        out.data_mut()[i] = (up - down) / (2.0 * h);
    }
    Ok(out)
}
