//! Held-out accuracy of a distance model against exact distances.

use serde::{Deserialize, Serialize};

use super::DistanceModel;
use crate::env::Dataset;
use crate::error::Result;
use crate::geom::{JointVector, Point};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LinkMetrics {
    /// Mean |μ − d_true| (meters).
    pub mu_mae: f64,
    /// Mean |σ − σ_sensor| (meters).
    pub sigma_mae: f64,
    /// Empirical variance of the standardized residuals (d_noisy − μ)/σ.
    pub z_var: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub samples: usize,
    pub links: Vec<LinkMetrics>,
}

impl ModelMetrics {
    pub fn to_table(&self) -> String {
        let mut s = String::from("link,mu_mae_m,sigma_mae_m,z_var\n");
        for (k, m) in self.links.iter().enumerate() {
            s.push_str(&format!("{k},{:.6},{:.6},{:.4}\n", m.mu_mae, m.sigma_mae, m.z_var));
        }
        s
    }
}

pub fn evaluate_model(model: &dyn DistanceModel, ds: &Dataset) -> Result<ModelMetrics> {
    let k = ds.links;
    let mut out = vec![LinkMetrics::default(); k];
    let mut z_sum = vec![0.0; k];
    let mut z_sq = vec![0.0; k];
    let mut z_n = 0.0;
    let mut i = 0;
    while i < ds.len() {
        // consecutive samples share a configuration
        let q = ds.q_of(i);
        let mut j = i;
        while j < ds.len() && ds.q_of(j) == q {
            j += 1;
        }
        let qv = JointVector(q.iter().map(|v| *v as f64).collect());
        let xs: Vec<Point> = (i..j)
            .map(|s| {
                let x = ds.x_of(s);
                let mut p = Point::zeros();
                for (a, v) in x.iter().enumerate() {
                    p[a] = *v as f64;
                }
                p
            })
            .collect();
        let preds = model.predict_batch(&qv, &xs, false)?;
        for (s, p) in (i..j).zip(&preds) {
            for l in 0..k {
                out[l].mu_mae += (p.mu[l] - ds.true_of(s)[l] as f64).abs();
                out[l].sigma_mae += (p.sigma[l] - ds.sigma).abs();
                for d in ds.noisy_of(s, l) {
                    let z = (*d as f64 - p.mu[l]) / p.sigma[l];
                    z_sum[l] += z;
                    z_sq[l] += z * z;
                }
            }
            z_n += ds.draws as f64;
        }
        i = j;
    }
    let n = ds.len().max(1) as f64;
    for l in 0..k {
        out[l].mu_mae /= n;
        out[l].sigma_mae /= n;
        let mean = z_sum[l] / z_n;
        out[l].z_var = z_sq[l] / z_n - mean * mean;
    }
    Ok(ModelMetrics { samples: ds.len(), links: out })
}
