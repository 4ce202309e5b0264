//! Dense layers on row-major (sample × feature) batches.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{encoded_len, ModelConfig};
use crate::error::{Error, Result};

/// Row-major `rows × cols` matrix of parameters with a stable name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    fn zeros(name: String, rows: usize, cols: usize) -> Self {
        Self { name, rows, cols, data: vec![0.0; rows * cols] }
    }
}

/// Weights and biases: `l{i}.w`, `l{i}.b` for the shared core, then `mu.w`,
/// `mu.b`, `sigma.w`, `sigma.b`. Every weight is `out × in`, every bias
/// `1 × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn shapes(config: &ModelConfig) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let mut prev = encoded_len(config.n, config.d);
        for (i, &w) in config.widths.iter().enumerate() {
            out.push((format!("l{i}.w"), w, prev));
            out.push((format!("l{i}.b"), 1, w));
            prev = w;
        }
        for head in ["mu", "sigma"] {
            out.push((format!("{head}.w"), config.k, prev));
            out.push((format!("{head}.b"), 1, config.k));
        }
        out
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        Self {
            tensors: Self::shapes(config)
                .into_iter()
                .map(|(name, r, c)| Tensor::zeros(name, r, c))
                .collect(),
        }
    }

    /// He-normal weights, zero biases, and a σ-head bias that starts the
    /// prediction near 5 cm.
    pub fn init(config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(config);
        for t in &mut p.tensors {
            if t.name.ends_with(".w") {
                let std = (2.0 / t.cols as f64).sqrt();
                let dist = Normal::new(0.0, std).expect("positive std");
                for v in &mut t.data {
                    *v = dist.sample(rng);
                }
                if t.name.starts_with("mu") || t.name.starts_with("sigma") {
                    for v in &mut t.data {
                        *v *= 0.5;
                    }
                }
            } else if t.name == "sigma.b" {
                let target: f64 = 0.05;
                t.data.fill(target.exp_m1().ln());
            }
        }
        p
    }

    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let want = Self::shapes(config);
        if want.len() != self.tensors.len() {
            return Err(Error::Argument(format!(
                "expected {} tensors, found {}",
                want.len(),
                self.tensors.len()
            )));
        }
        for ((name, r, c), t) in want.iter().zip(&self.tensors) {
            if *name != t.name || *r != t.rows || *c != t.cols || t.data.len() != r * c {
                return Err(Error::Argument(format!(
                    "tensor {} has shape {}x{}, expected {name} {r}x{c}",
                    t.name, t.rows, t.cols
                )));
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Round every parameter to the nearest `f32`, the precision of
    /// checkpoints.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            for v in &mut t.data {
                *v = *v as f32 as f64;
            }
        }
    }

    pub(crate) fn layer(&self, i: usize) -> (&Tensor, &Tensor) {
        (&self.tensors[2 * i], &self.tensors[2 * i + 1])
    }

    pub(crate) fn num_layers(&self) -> usize {
        self.tensors.len() / 2 - 2
    }
}

/// `C = alpha · A B + beta · C` with explicit strides; `C` is row-major `m × n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    assert!(k == 0 || (a.len() > (m - 1) * rsa + (k - 1) * csa && b.len() > (k - 1) * rsb + (n - 1) * csb));
    // SAFETY: the asserts above keep every strided access within the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `out = input · Wᵀ + b` for a batch of `rows` samples.
pub(crate) fn affine(input: &[f64], rows: usize, w: &Tensor, b: Option<&Tensor>, out: &mut Vec<f64>) {
    out.clear();
    out.resize(rows * w.rows, 0.0);
    if let Some(b) = b {
        for r in 0..rows {
            out[r * w.rows..(r + 1) * w.rows].copy_from_slice(&b.data);
        }
    }
    let beta = if b.is_some() { 1.0 } else { 0.0 };
    gemm(rows, w.cols, w.rows, input, w.cols, 1, &w.data, 1, w.cols, beta, out);
}

pub(crate) fn softplus(s: f64) -> f64 {
    if s > 30.0 {
        s
    } else {
        s.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Activations of one batched forward pass, kept for backpropagation.
#[derive(Debug, Default)]
pub(crate) struct Trace {
    pub rows: usize,
    /// Post-activation outputs; `hidden[0]` is the encoded input.
    pub hidden: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
    /// Raw σ-head outputs before the softplus.
    pub s: Vec<f64>,
}

pub(crate) fn forward_trace(params: &ModelParams, input: Vec<f64>, rows: usize) -> Trace {
    let mut hidden = vec![input];
    for i in 0..params.num_layers() {
        let (w, b) = params.layer(i);
        let mut z = Vec::new();
        affine(hidden.last().expect("input present"), rows, w, Some(b), &mut z);
        for v in &mut z {
            *v = v.max(0.0);
        }
        hidden.push(z);
    }
    let top = hidden.last().expect("input present");
    let l = params.num_layers();
    let (mw, mb) = params.layer(l);
    let (sw, sb) = params.layer(l + 1);
    let mut mu = Vec::new();
    let mut s = Vec::new();
    affine(top, rows, mw, Some(mb), &mut mu);
    affine(top, rows, sw, Some(sb), &mut s);
    Trace { rows, hidden, mu, s }
}

/// Forward-mode derivative of μ along `tangent` input directions. The
/// tangent matrix has `dirs` rows per sample, sample-major; returns
/// `(rows · dirs) × K`.
pub(crate) fn mu_tangents(params: &ModelParams, trace: &Trace, tangent: Vec<f64>, dirs: usize) -> Vec<f64> {
    let rows = trace.rows * dirs;
    let mut t = tangent;
    for i in 0..params.num_layers() {
        let (w, _) = params.layer(i);
        let mut z = Vec::new();
        affine(&t, rows, w, None, &mut z);
        let act = &trace.hidden[i + 1];
        let width = w.rows;
        for r in 0..rows {
            let sample = r / dirs;
            for j in 0..width {
                if act[sample * width + j] <= 0.0 {
                    z[r * width + j] = 0.0;
                }
            }
        }
        t = z;
    }
    let (mw, _) = params.layer(params.num_layers());
    let mut out = Vec::new();
    affine(&t, rows, mw, None, &mut out);
    out
}
