//! JSON bodies exchanged with the model server.
//!
//! | endpoint                | request              | response           |
//! |-------------------------|----------------------|--------------------|
//! | `GET /v1/health`        | -                    | [`HealthResponse`] |
//! | `GET /v1/schedule`      | -                    | [`ScheduleResponse`] |
//! | `POST /v1/logits`       | [`LogitsRequest`]    | [`LogitsResponse`] |
//! | `POST /v1/denoise_error`| [`DenoiseRequest`]   | [`DenoiseResponse`] |
//!
//! Failures carry an [`ErrorBody`] with a 4xx/5xx status. Images travel as
//! base64-encoded 8-bit PNG.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::Image;

pub const HEALTH_PATH: &str = "/v1/health";
pub const SCHEDULE_PATH: &str = "/v1/schedule";
pub const LOGITS_PATH: &str = "/v1/logits";
pub const DENOISE_PATH: &str = "/v1/denoise_error";

/// `error` value the server uses for an out-of-schedule timestep.
pub const RANGE_ERROR: &str = "range_error";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub models: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preprocessing: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleResponse {
    pub num_timesteps: usize,
    pub betas: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogitsRequest {
    pub image_png_b64: String,
    pub prompts: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitsResponse {
    pub logits: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiseRequest {
    pub image_png_b64: String,
    pub timestep: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiseResponse {
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
}

pub fn encode_image(image: &Image) -> String {
    STANDARD.encode(image.to_png_bytes())
}

pub fn decode_image(b64: &str) -> Result<Image> {
    let bytes = STANDARD
        .decode(b64)
        .map_err(|e| crate::error::Error::Argument(format!("invalid base64 image: {e}")))?;
    Image::from_png_bytes(&bytes, std::path::Path::new("<request>"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_field_names() {
        let req = DenoiseRequest {
            image_png_b64: "AAAA".into(),
            timestep: 50,
            seed: 7,
        };
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"image_png_b64":"AAAA","timestep":50,"seed":7}"#
        );
        let req = LogitsRequest {
            image_png_b64: "AAAA".into(),
            prompts: vec!["a photo of a cat".into()],
        };
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"image_png_b64":"AAAA","prompts":["a photo of a cat"]}"#
        );
        assert!(serde_json::from_str::<LogitsRequest>(r#"{"image_png_b64":"A","prompts":[],"x":1}"#).is_err());
    }

    #[test]
    fn floats_round_trip_exactly() {
        let values = vec![0.1, 1.0 / 3.0, -2.5e-300, 0.123_456_789_012_345_68, f64::MAX];
        let body = serde_json::to_string(&LogitsResponse { logits: values.clone() }).unwrap();
        let back: LogitsResponse = serde_json::from_str(&body).unwrap();
        assert_eq!(back.logits, values);
    }

    #[test]
    fn image_round_trip_within_quantization() {
        let img = Image::from_fn(5, 4, |y, x| [y as f64 / 4.0, x as f64 / 3.0, 0.3]).unwrap();
        let back = decode_image(&encode_image(&img)).unwrap();
        let worst = img
            .pixels()
            .iter()
            .zip(back.pixels())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 0.5 / 255.0 + 1e-12);
    }
}
