//! Forward-only primitives on [`Tensor`]. The autodiff graph reuses the same
//! kernels, and tests use these functions to assemble independent references.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `out[m,n] += a[m,k] * b[k,n]`
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

/// `out[m,n] += a[m,k] * b[n,k]^T`
pub(crate) fn matmul_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            out[i * n + j] += a_row.iter().zip(b_row).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k,n] += a[m,k]^T * b[m,n]`
pub(crate) fn matmul_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::dim(format!("matmul inner dimensions {k} vs {k2}")));
    }
    let mut out = vec![0.0; m * n];
    matmul_acc(a.data(), b.data(), &mut out, m, k, n);
    Tensor::new(&[m, n], out)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Row-wise softmax over the last axis.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let n = x.last_dim();
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(n) {
        softmax_in_place(row);
    }
    Tensor::new(x.shape(), out)
}

/// Normalized rows plus the per-row inverse standard deviation.
pub(crate) fn layer_norm_stats(x: &[f64], d: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let rows = x.len() / d;
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[r] = is;
        for (o, v) in xhat[r * d..(r + 1) * d].iter_mut().zip(row) {
            *o = (v - mean) * is;
        }
    }
    (xhat, inv_std)
}

pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let d = x.last_dim();
    if gain.numel() != d || bias.numel() != d {
        return Err(Error::dim(format!(
            "layer_norm affine of size {}/{} for feature dim {d}",
            gain.numel(),
            bias.numel()
        )));
    }
    if eps <= 0.0 {
        return Err(Error::config("layer_norm eps must be positive"));
    }
    let (mut xhat, _) = layer_norm_stats(x.data(), d, eps);
    for row in xhat.chunks_mut(d) {
        for ((v, g), b) in row.iter_mut().zip(gain.data()).zip(bias.data()) {
            *v = *v * g + b;
        }
    }
    Tensor::new(x.shape(), xhat)
}

pub fn conv1d_param_count(c_in: usize, c_out: usize, k: usize) -> usize {
    c_out * c_in * k + c_out
}

pub(crate) fn check_kernel(k: usize) -> Result<()> {
    if k.is_multiple_of(2) {
        return Err(Error::config(format!("conv1d kernel size {k} must be odd for same padding")));
    }
    Ok(())
}

/// One-sample same-padded convolution written directly into token-major
/// output `out[t, c_out]`.
pub(crate) fn conv1d_tokens_acc(
    x: &[f64],
    w: &[f64],
    bias: &[f64],
    out: &mut [f64],
    c_in: usize,
    t_len: usize,
    c_out: usize,
    k: usize,
) {
    let half = (k / 2) as isize;
    for t in 0..t_len {
        let orow = &mut out[t * c_out..(t + 1) * c_out];
        orow.copy_from_slice(bias);
        for (o, ov) in orow.iter_mut().enumerate() {
            let mut acc = 0.0;
            for c in 0..c_in {
                let wrow = &w[(o * c_in + c) * k..(o * c_in + c + 1) * k];
                for (j, wv) in wrow.iter().enumerate() {
                    let src = t as isize + j as isize - half;
                    if src >= 0 && (src as usize) < t_len {
                        acc += wv * x[c * t_len + src as usize];
                    }
                }
            }
            *ov += acc;
        }
    }
}

/// Same-padded 1D convolution: `x[C_in,T]`, `kernels[C_out,C_in,k]` → `[C_out,T]`.
pub fn conv1d(x: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (c_in, t_len) = x.dims2()?;
    let [c_out, kc_in, k] = kernels.shape()[..] else {
        return Err(Error::dim(format!("conv kernels must be rank 3, got {:?}", kernels.shape())));
    };
    check_kernel(k)?;
    if kc_in != c_in || bias.numel() != c_out {
        return Err(Error::dim(format!(
            "conv1d kernels {:?} / bias {} incompatible with input {:?}",
            kernels.shape(),
            bias.numel(),
            x.shape()
        )));
    }
    let mut tokens = vec![0.0; t_len * c_out];
    conv1d_tokens_acc(x.data(), kernels.data(), bias.data(), &mut tokens, c_in, t_len, c_out, k);
    Tensor::new(&[t_len, c_out], tokens)?.transpose2()
}

/// `x[.., d_in] * w[d_in, d_out] + b[d_out]`
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let d_in = x.last_dim();
    let (wi, d_out) = w.dims2()?;
    if wi != d_in || b.numel() != d_out {
        return Err(Error::dim(format!(
            "linear weight {:?} / bias {} for input feature dim {d_in}",
            w.shape(),
            b.numel()
        )));
    }
    let rows = x.numel() / d_in;
    let mut out = Vec::with_capacity(rows * d_out);
    for _ in 0..rows {
        out.extend_from_slice(b.data());
    }
    matmul_acc(x.data(), w.data(), &mut out, rows, d_in, d_out);
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = d_out;
    Tensor::new(&shape, out)
}

pub fn relu(x: &Tensor) -> Tensor {
    let out = x.data().iter().map(|v| v.max(0.0)).collect();
    Tensor::new(x.shape(), out).expect("same shape")
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!("add {:?} + {:?}", a.shape(), b.shape())));
    }
    Tensor::new(a.shape(), a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect())
}

/// Identifies one dropout application: `(seed, op_id, step)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DropoutKey {
    pub seed: u64,
    pub op_id: u64,
    pub step: u64,
}

pub(crate) fn check_dropout(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::config(format!("dropout probability {p} outside [0, 1)")));
    }
    Ok(())
}

/// Inverted-dropout multipliers: each entry is `0` or `1/(1-p)`.
pub(crate) fn dropout_mask(len: usize, p: f64, key: DropoutKey) -> Vec<f64> {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&key.seed.to_le_bytes());
    seed[8..16].copy_from_slice(&key.op_id.to_le_bytes());
    seed[16..24].copy_from_slice(&key.step.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(seed);
    let keep = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| {
            let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            if u < p {
                0.0
            } else {
                keep
            }
        })
        .collect()
}

pub fn dropout(x: &Tensor, p: f64, train: bool, key: DropoutKey) -> Result<Tensor> {
    check_dropout(p)?;
    if !train || p == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.numel(), p, key);
    Tensor::new(x.shape(), x.data().iter().zip(&mask).map(|(v, m)| v * m).collect())
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`, via log-sum-exp.
pub fn cross_entropy_with_logits(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let (b, n) = logits.dims2()?;
    if labels.len() != b {
        return Err(Error::dim(format!("{} labels for {b} logit rows", labels.len())));
    }
    let mut total = 0.0;
    for (row, &y) in logits.data().chunks(n).zip(labels) {
        if y >= n {
            return Err(Error::dim(format!("label {y} outside {n} classes")));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    Ok(total / b as f64)
}
