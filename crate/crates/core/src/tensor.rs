//! Dense row-major `f64` tensors and the handful of kernels the model needs.
//!
//! Every kernel here is a pure function of its inputs. The gradient tape in
//! [`crate::autograd`] records calls to these kernels and supplies their
//! adjoints; evaluation code calls them directly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense tensor. Rank-1 tensors of shape `[d]` are treated as `1 × d` rows
/// by every matrix kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::dim(format!("invalid shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// A `1 × d` row.
    pub fn row(values: Vec<f64>) -> Result<Self> {
        let d = values.len();
        Self::new(vec![1, d], values)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::dim("ragged rows"));
        }
        Self::new(vec![r, c], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Matrix view `(rows, cols)`; `[d]` is `(1, d)`.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [d] => Ok((1, *d)),
            [r, c] => Ok((*r, *c)),
            s => Err(Error::dim(format!("expected rank 1 or 2, got shape {s:?}"))),
        }
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        let c = *self.shape.last().unwrap();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn scalar(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::Contract(format!(
                "expected a scalar, got shape {:?}",
                self.shape
            )))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} to {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    fn same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_finite(t: &Tensor, op: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{op} produced a non-finite value")))
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul: {:?} x {:?} inner dimensions disagree",
            a.shape, b.shape
        )));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        let o_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    let t = Tensor::new(vec![m, n], out)?;
    check_finite(&t, "matmul")?;
    Ok(t)
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (r, c) = a.dims2()?;
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a.data[i * c + j];
        }
    }
    Tensor::new(vec![c, r], out)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.same_shape(b, "add")?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    let t = Tensor::new(a.shape.clone(), data)?;
    check_finite(&t, "add")?;
    Ok(t)
}

pub fn scale(a: &Tensor, s: f64) -> Result<Tensor> {
    let t = Tensor::new(a.shape.clone(), a.data.iter().map(|x| x * s).collect())?;
    check_finite(&t, "scale")?;
    Ok(t)
}

pub fn mul_elementwise(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.same_shape(b, "mul")?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape.clone(), data)
}

pub fn relu(a: &Tensor) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().map(|&x| x.max(0.0)).collect(),
    }
}

pub fn exp(a: &Tensor) -> Result<Tensor> {
    let t = Tensor::new(a.shape.clone(), a.data.iter().map(|x| x.exp()).collect())?;
    check_finite(&t, "exp")?;
    Ok(t)
}

pub fn sum(a: &Tensor) -> Tensor {
    Tensor {
        shape: vec![1],
        data: vec![a.data.iter().sum()],
    }
}

pub fn slice_cols(a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let (r, c) = a.dims2()?;
    if len == 0 || start + len > c {
        return Err(Error::dim(format!(
            "slice_cols: [{start}, {}) out of {c} columns",
            start + len
        )));
    }
    let mut out = Vec::with_capacity(r * len);
    for i in 0..r {
        out.extend_from_slice(&a.data[i * c + start..i * c + start + len]);
    }
    Tensor::new(vec![r, len], out)
}

pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::dim("concat of nothing"))?;
    let (r, _) = first.dims2()?;
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        let (pr, pc) = p.dims2()?;
        if pr != r {
            return Err(Error::dim("concat_cols: row counts differ"));
        }
        widths.push(pc);
    }
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(r * total);
    for i in 0..r {
        for (p, &w) in parts.iter().zip(&widths) {
            out.extend_from_slice(&p.data[i * w..(i + 1) * w]);
        }
    }
    Tensor::new(vec![r, total], out)
}

pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::dim("concat of nothing"))?;
    let (_, c) = first.dims2()?;
    let mut rows = 0;
    let mut out = Vec::new();
    for p in parts {
        let (pr, pc) = p.dims2()?;
        if pc != c {
            return Err(Error::dim("concat_rows: column counts differ"));
        }
        rows += pr;
        out.extend_from_slice(&p.data);
    }
    Tensor::new(vec![rows, c], out)
}

pub fn mean_rows(a: &Tensor) -> Result<Tensor> {
    let (r, c) = a.dims2()?;
    let mut out = vec![0.0; c];
    for i in 0..r {
        for (o, v) in out.iter_mut().zip(&a.data[i * c..(i + 1) * c]) {
            *o += v;
        }
    }
    let inv = 1.0 / r as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    Tensor::new(vec![1, c], out)
}

/// Row-wise `softmax(scale · row)` with row-max subtraction.
pub fn softmax_rows(m: &Tensor, scale: f64) -> Result<Tensor> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Contract(format!(
            "softmax scale must be > 0, got {scale}"
        )));
    }
    let (r, c) = m.dims2()?;
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = &m.data[i * c..(i + 1) * c];
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let o = &mut out[i * c..(i + 1) * c];
        let mut z = 0.0;
        for (o, &x) in o.iter_mut().zip(row) {
            *o = (scale * (x - max)).exp();
            z += *o;
        }
        o.iter_mut().for_each(|v| *v /= z);
    }
    let t = Tensor::new(m.shape.clone(), out)?;
    check_finite(&t, "softmax_rows")?;
    Ok(t)
}

/// Per-row statistics kept by [`layer_norm_rows`] for the backward pass.
#[derive(Clone, Debug)]
pub struct LayerNormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
}

/// Layer normalization over the last dimension of every row, population variance.
pub fn layer_norm_rows(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
    eps: f64,
) -> Result<(Tensor, LayerNormCache)> {
    let (r, d) = x.dims2()?;
    if d < 2 {
        return Err(Error::dim(format!("layer_norm needs d >= 2, got {d}")));
    }
    if gain.len() != d || bias.len() != d {
        return Err(Error::dim(format!(
            "layer_norm: gain/bias lengths {}/{} do not match d = {d}",
            gain.len(),
            bias.len()
        )));
    }
    if !(eps >= 0.0) {
        return Err(Error::Contract(format!(
            "layer_norm eps must be >= 0, got {eps}"
        )));
    }
    let mut normalized = vec![0.0; r * d];
    let mut out = vec![0.0; r * d];
    let mut inv_std = Vec::with_capacity(r);
    for i in 0..r {
        let row = &x.data[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let denom = (var + eps).sqrt();
        let inv = if denom > 0.0 { 1.0 / denom } else { 0.0 };
        inv_std.push(inv);
        for k in 0..d {
            let n = (row[k] - mean) * inv;
            normalized[i * d + k] = n;
            out[i * d + k] = n * gain.data[k] + bias.data[k];
        }
    }
    let out = Tensor::new(x.shape.clone(), out)?;
    check_finite(&out, "layer_norm")?;
    Ok((
        out,
        LayerNormCache {
            normalized: Tensor::new(x.shape.clone(), normalized)?,
            inv_std,
        },
    ))
}

pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    layer_norm_rows(x, gain, bias, eps).map(|(t, _)| t)
}

/// Divides every row by its L2 norm. Returns the normalized tensor and the norms.
pub fn l2_normalize_rows(x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    let (r, c) = x.dims2()?;
    let mut out = x.data.clone();
    let mut norms = Vec::with_capacity(r);
    for i in 0..r {
        let row = &mut out[i * c..(i + 1) * c];
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n == 0.0 {
            return Err(Error::Normalization { row: i });
        }
        row.iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((Tensor::new(x.shape.clone(), out)?, norms))
}

/// Which axis of a square score matrix holds the softmax in [`info_nce`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NceAxis {
    /// Softmax over row `i` (candidates `j` for the fixed text `i`).
    Rows,
    /// Softmax over column `i`.
    Cols,
}

/// `-(1/B) Σ_i log softmax(axis i)[i]` evaluated with log-sum-exp.
/// Returns the loss and the softmax probabilities laid out like `s`.
pub fn info_nce(s: &Tensor, axis: NceAxis) -> Result<(f64, Tensor)> {
    let (r, c) = s.dims2()?;
    if r != c {
        return Err(Error::dim(format!(
            "info_nce needs a square matrix, got {r}x{c}"
        )));
    }
    let b = r;
    let at = |i: usize, j: usize| match axis {
        NceAxis::Rows => s.data[i * b + j],
        NceAxis::Cols => s.data[j * b + i],
    };
    let mut probs = vec![0.0; b * b];
    let mut loss = 0.0;
    for i in 0..b {
        let max = (0..b).map(|j| at(i, j)).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..b).map(|j| (at(i, j) - max).exp()).sum();
        let lse = max + z.ln();
        loss += lse - at(i, i);
        for j in 0..b {
            let p = (at(i, j) - lse).exp();
            match axis {
                NceAxis::Rows => probs[i * b + j] = p,
                NceAxis::Cols => probs[j * b + i] = p,
            }
        }
    }
    let loss = loss / b as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric("info_nce produced a non-finite loss".into()));
    }
    Ok((loss, Tensor::new(vec![b, b], probs)?))
}
