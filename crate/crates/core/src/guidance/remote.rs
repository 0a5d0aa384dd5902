use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::wire::{
    DecodeRequest, DecodeResponse, DenoiseRequest, DenoiseResponse, EmbedRequest, EmbedResponse, HealthResponse,
    WireTensor,
};
use super::{view_prompt, Denoiser, GuidanceRequest};
use crate::error::{Error, Result};

/// Environment variable overriding the configured bridge URL.
pub const BRIDGE_URL_ENV: &str = "AVATARFORGE_BRIDGE_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub url: String,
    pub timeout_secs: f64,
    pub attempts: u32,
    /// First retry delay; doubles on each further attempt.
    pub backoff_ms: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8765".into(),
            timeout_secs: 120.0,
            attempts: 3,
            backoff_ms: 200,
        }
    }
}

impl RemoteConfig {
    /// Applies the environment override, if set.
    pub fn with_env_override(mut self) -> Self {
        if let Ok(url) = std::env::var(BRIDGE_URL_ENV) {
            if !url.is_empty() {
                self.url = url;
            }
        }
        self
    }
}

/// HTTP client for a denoiser bridge.
pub struct RemoteDenoiser {
    cfg: RemoteConfig,
    agent: ureq::Agent,
    prompt_ids: Mutex<HashMap<String, String>>,
}

impl RemoteDenoiser {
    pub fn new(cfg: RemoteConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build();
        Self {
            cfg,
            agent,
            prompt_ids: Mutex::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}/{}", self.cfg.url.trim_end_matches('/'), path)
    }

    fn call<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: Option<&B>) -> Result<R> {
        let url = self.endpoint(path);
        let attempts = self.cfg.attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(self.cfg.backoff_ms << (attempt - 1)));
            }
            let resp = match body {
                Some(b) => self.agent.post(&url).send_json(b),
                None => self.agent.get(&url).call(),
            };
            match resp {
                Ok(r) => {
                    return r
                        .into_json::<R>()
                        .map_err(|e| Error::Denoiser(format!("{url}: malformed reply: {e}")));
                }
                Err(ureq::Error::Status(code, r)) => {
                    let text = r.into_string().unwrap_or_default();
                    last = format!("HTTP {code}: {}", text.chars().take(200).collect::<String>());
                }
                Err(e) => last = e.to_string(),
            }
            log::warn!("{url}: attempt {}/{attempts} failed: {last}", attempt + 1);
        }
        Err(Error::Denoiser(format!("{url}: giving up after {attempts} attempts: {last}")))
    }

    /// Model id reported by `/health`.
    pub fn health(&self) -> Result<String> {
        Ok(self.call::<(), HealthResponse>("health", None)?.model)
    }

    /// Prompt id from `/embed`, cached per prompt.
    pub fn embed(&self, prompt: &str) -> Result<String> {
        if let Some(id) = self.prompt_ids.lock().unwrap().get(prompt) {
            return Ok(id.clone());
        }
        let r: EmbedResponse = self.call(
            "embed",
            Some(&EmbedRequest {
                prompt: prompt.to_string(),
            }),
        )?;
        self.prompt_ids.lock().unwrap().insert(prompt.to_string(), r.prompt_id.clone());
        Ok(r.prompt_id)
    }

    /// PNG bytes of a decoded `[H, W, 4]` latent.
    pub fn decode(&self, hwc: &[f64], width: usize, height: usize) -> Result<Vec<u8>> {
        use base64::Engine;
        let r: DecodeResponse = self.call(
            "decode",
            Some(&DecodeRequest {
                latent: WireTensor::from_hwc(hwc, width, height),
            }),
        )?;
        base64::engine::general_purpose::STANDARD
            .decode(r.png)
            .map_err(|e| Error::Denoiser(format!("bad png payload: {e}")))
    }
}

impl Denoiser for RemoteDenoiser {
    fn predict_noise(&self, req: &GuidanceRequest) -> Result<Vec<f64>> {
        req.validate()?;
        let prompt_id = self.embed(&view_prompt(&req.prompt, req.view_tag))?;
        let body = DenoiseRequest {
            prompt_id,
            view_tag: req.view_tag,
            t: req.t,
            guidance_scale: req.guidance_scale,
            latent: WireTensor::from_hwc(&req.noisy_latent, req.width, req.height),
        };
        let r: DenoiseResponse = self.call("denoise", Some(&body))?;
        r.eps.to_hwc(req.width, req.height)
    }

    fn name(&self) -> String {
        format!("remote({})", self.cfg.url)
    }
}
