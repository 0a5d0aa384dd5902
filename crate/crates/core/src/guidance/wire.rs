//! JSON bodies of the denoiser bridge protocol. Tensors travel as base64 of
//! little-endian f32 in channel-major `[C, H, W]` order.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::LATENT_CHANNELS;
use crate::render::ViewTag;

pub const DTYPE: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireTensor {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub data: String,
}

impl WireTensor {
    /// Encodes an `[H, W, C]` latent.
    pub fn from_hwc(hwc: &[f64], width: usize, height: usize) -> Self {
        let c = LATENT_CHANNELS;
        assert_eq!(hwc.len(), width * height * c);
        let mut bytes = Vec::with_capacity(hwc.len() * 4);
        for ch in 0..c {
            for p in 0..width * height {
                bytes.extend_from_slice(&(hwc[p * c + ch] as f32).to_le_bytes());
            }
        }
        Self {
            shape: vec![c, height, width],
            dtype: DTYPE.into(),
            data: STANDARD.encode(bytes),
        }
    }

    /// Decodes to `[H, W, C]`, checking dtype and shape.
    pub fn to_hwc(&self, width: usize, height: usize) -> Result<Vec<f64>> {
        let c = LATENT_CHANNELS;
        if self.dtype != DTYPE {
            return Err(Error::Denoiser(format!("unsupported dtype '{}'", self.dtype)));
        }
        if self.shape != [c, height, width] {
            return Err(Error::Denoiser(format!(
                "reply shape {:?}, expected {:?}",
                self.shape,
                [c, height, width]
            )));
        }
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| Error::Denoiser(format!("bad base64 payload: {e}")))?;
        let n = c * width * height;
        if bytes.len() != n * 4 {
            return Err(Error::Denoiser(format!("payload has {} bytes, expected {}", bytes.len(), n * 4)));
        }
        let chw: Vec<f32> = bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        let mut out = vec![0.0; n];
        for ch in 0..c {
            for p in 0..width * height {
                out[p * c + ch] = chw[ch * width * height + p] as f64;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub prompt_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseRequest {
    pub prompt_id: String,
    pub view_tag: ViewTag,
    pub t: usize,
    pub guidance_scale: f64,
    pub latent: WireTensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseResponse {
    pub eps: WireTensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeRequest {
    pub latent: WireTensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResponse {
    pub png: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hwc_round_trip_and_order() {
        let hwc: Vec<f64> = (0..2 * 3 * 4).map(|i| i as f64 * 0.25).collect();
        let t = WireTensor::from_hwc(&hwc, 3, 2);
        assert_eq!(t.shape, vec![4, 2, 3]);
        let bytes = STANDARD.decode(&t.data).unwrap();
        // first channel-major value after pixel 0 is pixel 1, channel 0
        assert_eq!(f32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1.0);
        assert_eq!(t.to_hwc(3, 2).unwrap(), hwc);
        assert!(t.to_hwc(2, 3).is_err());
    }
}
