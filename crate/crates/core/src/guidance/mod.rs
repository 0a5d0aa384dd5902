//! Noise schedule, score-distillation pixel gradients and the denoiser
//! interface with its mock, echo and remote implementations.

mod remote;
pub mod wire;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::LATENT_CHANNELS;
use crate::render::{LatentImage, ViewTag};

pub use remote::{RemoteConfig, RemoteDenoiser, BRIDGE_URL_ENV};

pub const DEFAULT_GUIDANCE_SCALE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(1000, 8.5e-4, 1.2e-2)
    }
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Self {
        let betas: Vec<f64> = (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps.max(2) - 1) as f64)
            .collect();
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Self { betas, alpha_bars }
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// `w(t) = 1 − ᾱ_t`.
    pub fn weight(&self, t: usize) -> f64 {
        1.0 - self.alpha_bars[t]
    }

    /// Inclusive range `[0.02 T, 0.98 T]` of sampled timesteps.
    pub fn t_range(&self) -> (usize, usize) {
        let n = self.steps() as f64;
        ((0.02 * n).round() as usize, ((0.98 * n).round() as usize).min(self.steps() - 1))
    }

    pub fn sample_t(&self, rng: &mut impl Rng) -> usize {
        let (lo, hi) = self.t_range();
        rng.gen_range(lo..=hi)
    }
}

/// `x_t = √ᾱ·x + √(1−ᾱ)·ε`.
pub fn add_noise(x: &[f64], eps: &[f64], alpha_bar: f64) -> Result<Vec<f64>> {
    if x.len() != eps.len() {
        return Err(Error::DimensionMismatch(format!(
            "latent has {} values, noise has {}",
            x.len(),
            eps.len()
        )));
    }
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    Ok(x.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

/// One noise-prediction query. Latents are `[H, W, 4]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceRequest {
    pub width: usize,
    pub height: usize,
    pub noisy_latent: Vec<f64>,
    pub t: usize,
    pub alpha_bar: f64,
    pub prompt: String,
    pub view_tag: ViewTag,
    pub guidance_scale: f64,
}

impl GuidanceRequest {
    pub fn validate(&self) -> Result<()> {
        if self.noisy_latent.len() != self.width * self.height * LATENT_CHANNELS {
            return Err(Error::DimensionMismatch(format!(
                "latent of {} values for {}x{}x{}",
                self.noisy_latent.len(),
                self.height,
                self.width,
                LATENT_CHANNELS
            )));
        }
        if !self.noisy_latent.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite noisy latent".into()));
        }
        Ok(())
    }
}

/// Predicts the noise in a noisy latent. Output length equals input length.
pub trait Denoiser: Send + Sync {
    fn predict_noise(&self, req: &GuidanceRequest) -> Result<Vec<f64>>;

    /// Variant that also sees the noise actually added; only test oracles
    /// use it.
    fn predict_noise_with_record(&self, req: &GuidanceRequest, _eps: &[f64]) -> Result<Vec<f64>> {
        self.predict_noise(req)
    }

    fn name(&self) -> String;
}

/// Target of the analytic denoiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockTarget {
    /// The same latent at every pixel.
    Flat([f64; LATENT_CHANNELS]),
    Image {
        width: usize,
        height: usize,
        data: Vec<f64>,
    },
}

impl MockTarget {
    pub fn latent(&self, width: usize, height: usize) -> Result<Vec<f64>> {
        match self {
            MockTarget::Flat(c) => Ok(c.repeat(width * height)),
            MockTarget::Image { width: w, height: h, data } => {
                if (*w, *h) != (width, height) || data.len() != w * h * LATENT_CHANNELS {
                    return Err(Error::DimensionMismatch(format!(
                        "mock target is {w}x{h}, render is {width}x{height}"
                    )));
                }
                Ok(data.clone())
            }
        }
    }
}

/// `ε̂ = (x_t − √ᾱ·z*) / √(1−ᾱ)`, which makes score distillation pull renders
/// towards `z*`.
#[derive(Debug, Clone)]
pub struct MockDenoiser {
    pub target: MockTarget,
}

impl MockDenoiser {
    pub fn new(target: MockTarget) -> Self {
        Self { target }
    }
}

impl Denoiser for MockDenoiser {
    fn predict_noise(&self, req: &GuidanceRequest) -> Result<Vec<f64>> {
        req.validate()?;
        let z = self.target.latent(req.width, req.height)?;
        let (a, b) = (req.alpha_bar.sqrt(), (1.0 - req.alpha_bar).sqrt());
        Ok(req.noisy_latent.iter().zip(&z).map(|(x, z)| (x - a * z) / b).collect())
    }

    fn name(&self) -> String {
        "mock".into()
    }
}

/// Returns exactly the noise that was added, so score distillation is zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoDenoiser;

impl Denoiser for EchoDenoiser {
    fn predict_noise(&self, _req: &GuidanceRequest) -> Result<Vec<f64>> {
        Err(Error::Denoiser("echo denoiser needs the noising record".into()))
    }

    fn predict_noise_with_record(&self, req: &GuidanceRequest, eps: &[f64]) -> Result<Vec<f64>> {
        req.validate()?;
        Ok(eps.to_vec())
    }

    fn name(&self) -> String {
        "echo".into()
    }
}

/// Result of one score-distillation query.
#[derive(Debug, Clone, PartialEq)]
pub struct SdsSample {
    /// `w(t)·(ε̂ − ε)`, `[H, W, 4]`.
    pub grad: Vec<f64>,
    pub t: usize,
    pub eps: Vec<f64>,
}

impl SdsSample {
    pub fn norm(&self) -> f64 {
        self.grad.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Text prompt with the view suffix appended.
pub fn view_prompt(prompt: &str, tag: ViewTag) -> String {
    format!("{prompt}, {tag} view")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdsQuery<'a> {
    pub prompt: &'a str,
    pub view_tag: ViewTag,
    pub guidance_scale: f64,
}

/// Samples `t` and `ε`, queries the denoiser and returns `w(t)·(ε̂ − ε)`.
/// The denoiser output is treated as a constant.
pub fn sds_pixel_grad(
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    x: &LatentImage,
    query: &SdsQuery,
    rng: &mut impl Rng,
) -> Result<SdsSample> {
    let t = schedule.sample_t(rng);
    let eps: Vec<f64> = (0..x.features.len()).map(|_| rng.sample(StandardNormal)).collect();
    let grad = sds_grad_at(denoiser, schedule, x, query, t, &eps)?;
    Ok(SdsSample { grad, t, eps })
}

/// Score-distillation gradient for a given timestep and noise draw.
pub fn sds_grad_at(
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    x: &LatentImage,
    query: &SdsQuery,
    t: usize,
    eps: &[f64],
) -> Result<Vec<f64>> {
    let alpha_bar = schedule.alpha_bar(t);
    let req = GuidanceRequest {
        width: x.width,
        height: x.height,
        noisy_latent: add_noise(&x.features, eps, alpha_bar)?,
        t,
        alpha_bar,
        prompt: query.prompt.to_string(),
        view_tag: query.view_tag,
        guidance_scale: query.guidance_scale,
    };
    let eps_hat = denoiser.predict_noise_with_record(&req, eps)?;
    if eps_hat.len() != eps.len() {
        return Err(Error::Denoiser(format!(
            "denoiser returned {} values for a latent of {}",
            eps_hat.len(),
            eps.len()
        )));
    }
    let w = schedule.weight(t);
    Ok(eps_hat.iter().zip(eps).map(|(e_hat, e)| w * (e_hat - e)).collect())
}
