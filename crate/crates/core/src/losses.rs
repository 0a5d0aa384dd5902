//! Normal-consistency loss and assembly of the per-step objective.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldParams, FieldSample, SampleGrad};

/// Samples at or below this density are left out of the normal loss batch.
pub const NORMAL_LOSS_MIN_SIGMA: f64 = 1e-3;

pub const CSV_HEADER: &str = "step,sds_c_gradnorm,sds_o_gradnorm,normal_loss,total";

#[derive(Debug, Clone, PartialEq)]
pub struct NormalLoss {
    pub value: f64,
    /// Per-sample gradient with respect to σ and n; `∇σ` is held constant.
    pub grads: Vec<SampleGrad>,
}

/// `b = |1 − e^{−σ}|`.
pub fn normal_weight(sigma: f64) -> f64 {
    (-(-sigma).exp_m1()).abs()
}

/// `L_n = mean_i b_i ‖∇σ_i − n_i‖²` over every given sample.
pub fn normal_consistency_loss(samples: &[FieldSample]) -> Result<NormalLoss> {
    if samples.is_empty() {
        return Ok(NormalLoss {
            value: 0.0,
            grads: Vec::new(),
        });
    }
    let inv_n = 1.0 / samples.len() as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let g = s.density_gradient.ok_or(Error::MissingGradient(i))?;
        let r = [s.normal[0] - g[0], s.normal[1] - g[1], s.normal[2] - g[2]];
        let r2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
        let b = normal_weight(s.sigma);
        value += b * r2;
        // d|1 − e^{−σ}|/dσ = sign(1 − e^{−σ}) e^{−σ}
        let db = (-s.sigma).exp() * if s.sigma >= 0.0 { 1.0 } else { -1.0 };
        grads.push(SampleGrad {
            dsigma: inv_n * db * r2,
            dcolor: [0.0; 4],
            dnormal: r.map(|v| inv_n * 2.0 * b * v),
        });
    }
    Ok(NormalLoss {
        value: value * inv_n,
        grads,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_sds: f64,
    pub lambda_n: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_sds: 1.0,
            lambda_n: 5e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Norm of the canonical-space score-distillation pixel gradient.
    pub sds_canonical: f64,
    pub sds_observation: f64,
    pub normal_loss: f64,
    pub total_weighted: f64,
    pub lambda_sds: f64,
    pub lambda_n: f64,
}

impl LossReport {
    pub fn csv_row(&self, step: usize) -> String {
        format!(
            "{step},{},{},{},{}",
            self.sds_canonical, self.sds_observation, self.normal_loss, self.total_weighted
        )
    }
}

/// Per-space parameter gradients of one step.
pub struct StepGradients<'a> {
    pub sds_canonical: &'a FieldParams,
    pub sds_observation: &'a FieldParams,
    pub normal: &'a FieldParams,
}

/// `λ_SDS·(g_c + g_o) + λ_n·∇L_n`, summed canonical first. Non-finite inputs
/// abort with the offending component named.
pub fn total_step_loss(
    weights: &LossWeights,
    grads: &StepGradients,
    sds_norms: (f64, f64),
    normal_loss: f64,
) -> Result<(LossReport, FieldParams)> {
    let checks = [
        ("canonical score-distillation gradient", grads.sds_canonical.is_finite() && sds_norms.0.is_finite()),
        ("observation score-distillation gradient", grads.sds_observation.is_finite() && sds_norms.1.is_finite()),
        ("normal loss", grads.normal.is_finite() && normal_loss.is_finite()),
    ];
    for (what, ok) in checks {
        if !ok {
            return Err(Error::Numeric(format!("non-finite {what}")));
        }
    }
    let mut total = grads.sds_canonical.zeros_like();
    total.axpy(weights.lambda_sds, grads.sds_canonical);
    total.axpy(weights.lambda_sds, grads.sds_observation);
    total.axpy(weights.lambda_n, grads.normal);
    let report = LossReport {
        sds_canonical: sds_norms.0,
        sds_observation: sds_norms.1,
        normal_loss,
        total_weighted: weights.lambda_sds * (sds_norms.0 + sds_norms.1) + weights.lambda_n * normal_loss,
        lambda_sds: weights.lambda_sds,
        lambda_n: weights.lambda_n,
    };
    Ok((report, total))
}

/// Appends loss rows to a CSV file, writing the header first.
pub struct LossCsv<W: Write> {
    out: W,
}

impl<W: Write> LossCsv<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{CSV_HEADER}")?;
        Ok(Self { out })
    }

    /// Continues an existing file without a new header.
    pub fn resume(out: W) -> Self {
        Self { out }
    }

    pub fn push(&mut self, step: usize, report: &LossReport) -> Result<()> {
        writeln!(self.out, "{}", report.csv_row(step))?;
        self.out.flush()?;
        Ok(())
    }
}
