//! JSON messages exchanged with a guidance service.
//!
//! Float arrays travel as base64 of little-endian `f32`, row-major
//! `H x W x 3`.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SDS_PATH: &str = "/v1/sds_grad";
pub const HEALTH_PATH: &str = "/v1/health";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdsRequestBody {
    pub image_b64: String,
    pub height: usize,
    pub width: usize,
    pub prompt: String,
    pub view_suffix: String,
    pub t: usize,
    pub epsilon_b64: String,
    pub guidance_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdsResponseBody {
    pub grad_b64: String,
    pub model_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HealthBody {
    pub status: String,
    pub model_id: String,
}

pub fn encode_f32(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_f32(text: &str, expected: usize, field: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| Error::Protocol(format!("{field}: invalid base64: {e}")))?;
    if bytes.len() != expected * 4 {
        return Err(Error::Protocol(format!(
            "{field}: expected {expected} float32 values, got {} bytes",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub fn parse_response(body: &str) -> Result<SdsResponseBody> {
    serde_json::from_str(body).map_err(|e| Error::Protocol(format!("malformed guidance response: {e}")))
}

pub fn parse_health(body: &str) -> Result<HealthBody> {
    serde_json::from_str(body).map_err(|e| Error::Protocol(format!("malformed health response: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip_is_exact_for_f32_values() {
        let v = vec![0.0, -1.5, 0.1f32 as f64, 3.25e-7f32 as f64, f32::MAX as f64];
        let s = encode_f32(&v);
        assert_eq!(decode_f32(&s, v.len(), "x").unwrap(), v);
    }

    #[test]
    fn known_little_endian_bytes() {
        // 1.0f32 = 0x3f800000, little-endian 00 00 80 3f
        assert_eq!(encode_f32(&[1.0]), STANDARD.encode([0u8, 0, 0x80, 0x3f]));
    }

    #[test]
    fn decode_errors_are_protocol_errors() {
        assert!(matches!(decode_f32("!!!", 1, "g"), Err(Error::Protocol(_))));
        assert!(matches!(decode_f32(&encode_f32(&[1.0, 2.0]), 3, "g"), Err(Error::Protocol(_))));
        assert!(matches!(parse_response("{\"grad\": 1}"), Err(Error::Protocol(_))));
    }

    #[test]
    fn request_field_names() {
        let body = SdsRequestBody {
            image_b64: String::new(),
            height: 1,
            width: 2,
            prompt: "p".into(),
            view_suffix: "front view".into(),
            t: 5,
            epsilon_b64: String::new(),
            guidance_scale: 100.0,
        };
        let v: serde_json::Value = serde_json::to_value(&body).unwrap();
        for k in ["image_b64", "height", "width", "prompt", "view_suffix", "t", "epsilon_b64", "guidance_scale"] {
            assert!(v.get(k).is_some(), "{k}");
        }
    }
}
