//! Stochastic signed-distance model: an MLP from an encoded `(q, x)` to a
//! Gaussian `N(μ_k, σ_k²)` per link, trained on noisy distances.

mod checkpoint;
mod metrics;
mod net;
mod train;

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{JointVector, KinematicChain, Point};

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use metrics::{evaluate_model, LinkMetrics, ModelMetrics};
pub use net::{ModelParams, Tensor};
pub use train::{
    batch_loss_and_grad, train, LossParts, LossTrace, TrainBatch, TrainHyper, TrainedModel,
};

/// Lower bound added to every predicted σ (meters).
pub const SIGMA_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KlKind {
    /// `(σ² + (μ_p − μ)²) / (2σ_p²) − log σ`: the exact KL without its
    /// `σ_p`-only constants.
    #[default]
    Reduced,
    /// `log(σ_p/σ) + (σ² + (μ − μ_p)²) / (2σ_p²) − ½`.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub widths: Vec<usize>,
    pub prior_mu: Vec<f64>,
    pub prior_sigma: Vec<f64>,
    pub kl_weight: f64,
    #[serde(default)]
    pub kl: KlKind,
}

impl ModelConfig {
    /// Desk-scale network: four hidden layers of 64 units.
    pub fn desk(n: usize, d: usize, k: usize) -> Self {
        Self {
            n,
            d,
            k,
            widths: vec![64; 4],
            prior_mu: vec![0.5; k],
            prior_sigma: vec![0.5; k],
            kl_weight: 1e-3,
            kl: KlKind::Reduced,
        }
    }

    pub fn full(n: usize, d: usize, k: usize) -> Self {
        Self { widths: vec![256; 4], ..Self::desk(n, d, k) }
    }

    pub fn for_chain(chain: &KinematicChain) -> Self {
        Self::desk(chain.dof(), chain.dim(), chain.num_links())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 || self.k == 0 {
            return Err(Error::Argument("n, d and k must be positive".into()));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Argument("need at least one hidden layer, all widths >= 1".into()));
        }
        if self.prior_mu.len() != self.k || self.prior_sigma.len() != self.k {
            return Err(Error::Argument("prior needs one (mu, sigma) per link".into()));
        }
        if self.prior_sigma.iter().any(|s| !(*s > 0.0)) || !(self.kl_weight >= 0.0) {
            return Err(Error::Argument("prior sigma must be positive and kl_weight >= 0".into()));
        }
        Ok(())
    }
}

pub fn encoded_len(n: usize, d: usize) -> usize {
    3 * (n + d)
}

/// `[q, x, sin q, sin x, cos q, cos x]`.
pub fn encode(q: &[f64], x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 * (q.len() + x.len()));
    encode_into(q, x, &mut out);
    out
}

pub(crate) fn encode_into(q: &[f64], x: &[f64], out: &mut Vec<f64>) {
    let raw = q.iter().chain(x);
    out.extend(raw.clone());
    out.extend(raw.clone().map(|v| v.sin()));
    out.extend(raw.map(|v| v.cos()));
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistancePrediction {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    /// `∂μ_k/∂q_i` as a `K × n` matrix, when requested.
    pub grad_mu_q: Option<DMatrix<f64>>,
}

/// `Σ_k log σ_k + (d_k − μ_k)² / (2σ_k²) + K/2 · log 2π`.
pub fn nll_loss(pred: &DistancePrediction, noisy: &[f64]) -> f64 {
    let k = pred.mu.len();
    let mut total = 0.5 * k as f64 * (2.0 * PI).ln();
    for i in 0..k {
        let r = noisy[i] - pred.mu[i];
        total += pred.sigma[i].ln() + r * r / (2.0 * pred.sigma[i] * pred.sigma[i]);
    }
    total
}

/// KL of one link's prediction against its prior.
pub fn kl_term(kind: KlKind, mu: f64, sigma: f64, prior_mu: f64, prior_sigma: f64) -> f64 {
    let quad = (sigma * sigma + (prior_mu - mu) * (prior_mu - mu)) / (2.0 * prior_sigma * prior_sigma);
    match kind {
        KlKind::Reduced => quad - sigma.ln(),
        KlKind::Exact => (prior_sigma / sigma).ln() + quad - 0.5,
    }
}

pub fn kl_loss(pred: &DistancePrediction, config: &ModelConfig) -> f64 {
    (0..pred.mu.len())
        .map(|k| kl_term(config.kl, pred.mu[k], pred.sigma[k], config.prior_mu[k], config.prior_sigma[k]))
        .sum()
}

/// Anything that predicts per-link Gaussian distances.
pub trait DistanceModel: Sync {
    fn num_links(&self) -> usize;

    /// Predictions for several points at one configuration.
    fn predict_batch(&self, q: &JointVector, xs: &[Point], want_grad: bool) -> Result<Vec<DistancePrediction>>;

    fn predict(&self, q: &JointVector, x: &Point, want_grad: bool) -> Result<DistancePrediction> {
        Ok(self.predict_batch(q, std::slice::from_ref(x), want_grad)?.remove(0))
    }
}

/// The trained network.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticSdf {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl StochasticSdf {
    pub fn new(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(Self { config, params })
    }

    /// Forward pass over `(q_i, x_i)` pairs.
    pub fn forward_pairs(&self, qs: &[&[f64]], xs: &[Point], want_grad: bool) -> Result<Vec<DistancePrediction>> {
        let (n, d, k) = (self.config.n, self.config.d, self.config.k);
        if qs.len() != xs.len() {
            return Err(Error::Argument("one configuration per point".into()));
        }
        if let Some(q) = qs.iter().find(|q| q.len() != n) {
            return Err(Error::Argument(format!("configuration has {} joints, model expects {n}", q.len())));
        }
        let rows = xs.len();
        let width = encoded_len(n, d);
        let mut input = Vec::with_capacity(rows * width);
        for (q, x) in qs.iter().zip(xs) {
            encode_into(q, &x.as_slice()[..d], &mut input);
        }
        let trace = net::forward_trace(&self.params, input, rows);
        let grads = want_grad.then(|| {
            let mut tan = vec![0.0; rows * n * width];
            for (r, q) in qs.iter().enumerate() {
                for i in 0..n {
                    let row = &mut tan[(r * n + i) * width..(r * n + i + 1) * width];
                    row[i] = 1.0;
                    row[n + d + i] = q[i].cos();
                    row[2 * (n + d) + i] = -q[i].sin();
                }
            }
            net::mu_tangents(&self.params, &trace, tan, n)
        });
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let mu = trace.mu[r * k..(r + 1) * k].to_vec();
            let sigma: Vec<f64> = trace.s[r * k..(r + 1) * k]
                .iter()
                .map(|s| net::softplus(*s) + SIGMA_FLOOR)
                .collect();
            let grad_mu_q = grads.as_ref().map(|g| {
                DMatrix::from_fn(k, n, |kk, i| g[(r * n + i) * k + kk])
            });
            let finite = mu.iter().chain(&sigma).all(|v| v.is_finite())
                && grad_mu_q.as_ref().is_none_or(|g| g.iter().all(|v| v.is_finite()));
            if !finite {
                return Err(Error::Evaluation(format!("non-finite network output for sample {r}")));
            }
            out.push(DistancePrediction { mu, sigma, grad_mu_q });
        }
        Ok(out)
    }
}

impl DistanceModel for StochasticSdf {
    fn num_links(&self) -> usize {
        self.config.k
    }

    fn predict_batch(&self, q: &JointVector, xs: &[Point], want_grad: bool) -> Result<Vec<DistancePrediction>> {
        let qs = vec![q.as_slice(); xs.len()];
        self.forward_pairs(&qs, xs, want_grad)
    }
}

/// Exact capsule distances with a fixed σ: the model the network learns
/// when training succeeds, used as an oracle.
#[derive(Debug, Clone)]
pub struct ExactGaussianModel {
    pub chain: KinematicChain,
    pub sigma: f64,
}

impl DistanceModel for ExactGaussianModel {
    fn num_links(&self) -> usize {
        self.chain.num_links()
    }

    fn predict_batch(&self, q: &JointVector, xs: &[Point], want_grad: bool) -> Result<Vec<DistancePrediction>> {
        let k = self.chain.num_links();
        xs.iter()
            .map(|x| {
                let (mu, grad) = if want_grad {
                    let (d, g) = self.chain.link_point_distance_grad(q, x)?;
                    (d, Some(g))
                } else {
                    (self.chain.exact_link_point_distance(q, x)?, None)
                };
                Ok(DistancePrediction { mu, sigma: vec![self.sigma.max(SIGMA_FLOOR); k], grad_mu_q: grad })
            })
            .collect()
    }
}
