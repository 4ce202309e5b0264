//! Minibatch Adam on the negative ELBO with hand-written backpropagation.
//!
//! The NLL of a sample is averaged over its noisy draws. That average only
//! depends on the draws' mean `m` and (population) variance `v`:
//! `log σ + (v + (m − μ)²) / (2σ²) + ½ log 2π`, so training works on these
//! sufficient statistics.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::net::{self, gemm, sigmoid, softplus, ModelParams};
use super::{encode_into, encoded_len, kl_term, ModelConfig, StochasticSdf, SIGMA_FLOOR};
use crate::env::Dataset;
use crate::error::{Error, Result};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub epochs: usize,
    /// Initial learning rate.
    pub lr: f64,
    /// Cosine decay from `lr` to `lr · lr_final_ratio` over the run; 1 keeps
    /// the rate constant.
    #[serde(default = "default_ratio")]
    pub lr_final_ratio: f64,
    pub batch: usize,
    pub seed: u64,
}

fn default_ratio() -> f64 {
    0.01
}

impl TrainHyper {
    pub fn desk() -> Self {
        Self { epochs: 200, lr: 1e-3, lr_final_ratio: 0.01, batch: 256, seed: 0 }
    }

    pub fn full() -> Self {
        Self { epochs: 500, lr: 1e-4, lr_final_ratio: 0.01, batch: 512, seed: 0 }
    }
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self::desk()
    }
}

/// Encoded inputs and per-link draw statistics, sample-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub rows: usize,
    pub input: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl TrainBatch {
    pub fn from_dataset(ds: &Dataset) -> Self {
        let rows = ds.len();
        let mut input = Vec::with_capacity(rows * encoded_len(ds.n, ds.dim));
        let mut mean = Vec::with_capacity(rows * ds.links);
        let mut var = Vec::with_capacity(rows * ds.links);
        let mut q = Vec::with_capacity(ds.n);
        let mut x = Vec::with_capacity(ds.dim);
        for i in 0..rows {
            q.clear();
            q.extend(ds.q_of(i).iter().map(|v| *v as f64));
            x.clear();
            x.extend(ds.x_of(i).iter().map(|v| *v as f64));
            encode_into(&q, &x, &mut input);
            for k in 0..ds.links {
                let draws = ds.noisy_of(i, k);
                let m = draws.iter().map(|v| *v as f64).sum::<f64>() / draws.len() as f64;
                let v = draws.iter().map(|d| (*d as f64 - m).powi(2)).sum::<f64>() / draws.len() as f64;
                mean.push(m);
                var.push(v);
            }
        }
        Self { rows, input, mean, var }
    }

    fn gather(&self, idx: &[usize], width: usize, k: usize, out: &mut TrainBatch) {
        out.rows = idx.len();
        out.input.clear();
        out.mean.clear();
        out.var.clear();
        for &i in idx {
            out.input.extend_from_slice(&self.input[i * width..(i + 1) * width]);
            out.mean.extend_from_slice(&self.mean[i * k..(i + 1) * k]);
            out.var.extend_from_slice(&self.var[i * k..(i + 1) * k]);
        }
    }
}

/// Batch means of the loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub nll: f64,
    pub kl: f64,
    pub total: f64,
}

/// Loss of `params` on `batch` and its gradient, one vector per tensor.
pub fn batch_loss_and_grad(
    params: &ModelParams,
    config: &ModelConfig,
    batch: &TrainBatch,
) -> (LossParts, Vec<Vec<f64>>) {
    let rows = batch.rows;
    let k = config.k;
    let trace = net::forward_trace(params, batch.input.clone(), rows);
    let inv_b = 1.0 / rows.max(1) as f64;
    let half_log_2pi = 0.5 * (2.0 * PI).ln();
    let w = config.kl_weight;

    let mut parts = LossParts::default();
    let mut d_mu = vec![0.0; rows * k];
    let mut d_s = vec![0.0; rows * k];
    for r in 0..rows {
        for j in 0..k {
            let idx = r * k + j;
            let mu = trace.mu[idx];
            let s = trace.s[idx];
            let sigma = softplus(s) + SIGMA_FLOOR;
            let (m, v) = (batch.mean[idx], batch.var[idx]);
            let res2 = v + (m - mu) * (m - mu);
            let s2 = sigma * sigma;
            parts.nll += sigma.ln() + res2 / (2.0 * s2) + half_log_2pi;
            let (pm, ps) = (config.prior_mu[j], config.prior_sigma[j]);
            parts.kl += kl_term(config.kl, mu, sigma, pm, ps);
            let ps2 = ps * ps;
            // both KL variants share these derivatives
            let g_mu = (mu - m) / s2 + w * (mu - pm) / ps2;
            let g_sigma = 1.0 / sigma - res2 / (s2 * sigma) + w * (sigma / ps2 - 1.0 / sigma);
            d_mu[idx] = g_mu * inv_b;
            d_s[idx] = g_sigma * sigmoid(s) * inv_b;
        }
    }
    parts.nll *= inv_b;
    parts.kl *= inv_b;
    parts.total = parts.nll + w * parts.kl;

    let layers = params.num_layers();
    let mut grads: Vec<Vec<f64>> = params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect();
    let top = &trace.hidden[layers];
    let width = params.layer(layers).0.cols;
    let mut d_h = vec![0.0; rows * width];
    for (head, d_out) in [(layers, &d_mu), (layers + 1, &d_s)] {
        let (wt, _) = params.layer(head);
        // dW = dOutᵀ · H, db = column sums, dH += dOut · W
        gemm(k, rows, width, d_out, 1, k, top, width, 1, 0.0, &mut grads[2 * head]);
        for r in 0..rows {
            for j in 0..k {
                grads[2 * head + 1][j] += d_out[r * k + j];
            }
        }
        gemm(rows, k, width, d_out, k, 1, &wt.data, width, 1, 1.0, &mut d_h);
    }
    for l in (0..layers).rev() {
        let (wt, _) = params.layer(l);
        let (out_w, in_w) = (wt.rows, wt.cols);
        let act = &trace.hidden[l + 1];
        for (g, a) in d_h.iter_mut().zip(act) {
            if *a <= 0.0 {
                *g = 0.0;
            }
        }
        let below = &trace.hidden[l];
        gemm(out_w, rows, in_w, &d_h, 1, out_w, below, in_w, 1, 0.0, &mut grads[2 * l]);
        let gb = &mut grads[2 * l + 1];
        for r in 0..rows {
            for j in 0..out_w {
                gb[j] += d_h[r * out_w + j];
            }
        }
        if l > 0 {
            let mut next = vec![0.0; rows * in_w];
            gemm(rows, out_w, in_w, &d_h, out_w, 1, &wt.data, in_w, 1, 0.0, &mut next);
            d_h = next;
        }
    }
    (parts, grads)
}

/// Adam with the usual β = (0.9, 0.999), ε = 1e-8.
struct Adam {
    lr: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    fn new(params: &ModelParams, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect();
        Self { lr, t: 0, m: zeros.clone(), v: zeros }
    }

    fn step(&mut self, params: &mut ModelParams, grads: &[Vec<f64>]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for (i, t) in params.tensors.iter_mut().enumerate() {
            for (j, p) in t.data.iter_mut().enumerate() {
                let g = grads[i][j];
                let m = &mut self.m[i][j];
                let v = &mut self.v[i][j];
                *m = B1 * *m + (1.0 - B1) * g;
                *v = B2 * *v + (1.0 - B2) * g * g;
                *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + 1e-8);
            }
        }
    }
}

/// Per-epoch means of the loss terms.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub epochs: Vec<LossParts>,
}

impl LossTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,nll,kl,total\n");
        for (i, p) in self.epochs.iter().enumerate() {
            s.push_str(&format!("{},{},{},{}\n", i + 1, p.nll, p.kl, p.total));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: StochasticSdf,
    pub trace: LossTrace,
}

/// Train from the seed in `hyper`. Returned parameters are rounded to `f32`
/// so that a saved checkpoint reloads to the identical model.
pub fn train(ds: &Dataset, config: &ModelConfig, hyper: &TrainHyper) -> Result<TrainedModel> {
    config.validate()?;
    if ds.is_empty() {
        return Err(Error::Argument("empty dataset".into()));
    }
    if ds.n != config.n || ds.dim != config.d || ds.links != config.k {
        return Err(Error::Argument("dataset shape does not match the model config".into()));
    }
    if hyper.batch == 0 || hyper.epochs == 0 || !(hyper.lr > 0.0) || !(hyper.lr_final_ratio > 0.0) {
        return Err(Error::Argument("epochs, batch, lr and lr_final_ratio must be positive".into()));
    }
    let all = TrainBatch::from_dataset(ds);
    let mut params = ModelParams::init(config, &mut stream(hyper.seed, 0));
    let mut shuffle_rng = stream(hyper.seed, 1);
    let mut adam = Adam::new(&params, hyper.lr);
    let width = encoded_len(config.n, config.d);
    let mut order: Vec<usize> = (0..all.rows).collect();
    let mut batch = TrainBatch { rows: 0, input: Vec::new(), mean: Vec::new(), var: Vec::new() };
    let mut trace = LossTrace::default();
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut shuffle_rng);
        let progress = (epoch - 1) as f64 / (hyper.epochs.max(2) - 1) as f64;
        let cos = 0.5 * (1.0 + (PI * progress).cos());
        adam.lr = hyper.lr * (hyper.lr_final_ratio + (1.0 - hyper.lr_final_ratio) * cos);
        let mut sum = LossParts::default();
        for chunk in order.chunks(hyper.batch) {
            all.gather(chunk, width, config.k, &mut batch);
            let (parts, grads) = batch_loss_and_grad(&params, config, &batch);
            if !parts.total.is_finite() {
                return Err(Error::Training { epoch, reason: "loss is not finite".into() });
            }
            let f = chunk.len() as f64 / all.rows as f64;
            sum.nll += f * parts.nll;
            sum.kl += f * parts.kl;
            sum.total += f * parts.total;
            adam.step(&mut params, &grads);
        }
        if !params.is_finite() {
            return Err(Error::Training { epoch, reason: "parameters are not finite".into() });
        }
        trace.epochs.push(sum);
    }
    params.round_to_f32();
    Ok(TrainedModel { model: StochasticSdf::new(config.clone(), params)?, trace })
}
