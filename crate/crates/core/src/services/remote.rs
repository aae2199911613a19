//! JSON-over-HTTP clients with retries and an on-disk response cache.

use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    EditPlan, EditRequest, EditResponse, ImageEditor, Instruction, LabelInfo, PromptRefiner,
};
use crate::error::{Error, Result};
use crate::imaging::{Image, Mask};

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub base_url: String,
    pub token: Option<String>,
    pub timeout: Duration,
    pub retries: u32,
    /// First retry delay; doubles on each further attempt.
    pub backoff: Duration,
    pub cache_dir: Option<PathBuf>,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            token: None,
            timeout: Duration::from_secs(120),
            retries: 2,
            backoff: Duration::from_millis(500),
            cache_dir: None,
        }
    }

    /// Reads `url_var` and `SERVICE_TOKEN` from the environment.
    pub fn from_env(url_var: &str) -> Option<Self> {
        let url = std::env::var(url_var).ok().filter(|u| !u.is_empty())?;
        let mut cfg = Self::new(url);
        cfg.token = std::env::var("SERVICE_TOKEN")
            .ok()
            .filter(|t| !t.is_empty());
        Some(cfg)
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}/{}", self.base_url.trim_end_matches('/'), path)
    }
}

fn cache_path(dir: &Path, url: &str, body: &str) -> PathBuf {
    let mut h = Sha256::new();
    h.update(url.as_bytes());
    h.update([0u8]);
    h.update(body.as_bytes());
    let hex: String = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    dir.join(format!("{hex}.json"))
}

/// POSTs `body` and returns the response text, consulting and filling the
/// cache. Transport failures, 429 and 5xx are retried; other non-2xx
/// statuses fail immediately with the body captured.
fn post(cfg: &RemoteConfig, path: &str, body: &str) -> Result<String> {
    let url = cfg.endpoint(path);
    let cached = cfg.cache_dir.as_ref().map(|d| cache_path(d, &url, body));
    if let Some(p) = cached.as_ref().filter(|p| p.is_file()) {
        return std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
    }
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(cfg.timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let mut last = String::new();
    for attempt in 0..=cfg.retries {
        if attempt > 0 {
            std::thread::sleep(cfg.backoff * 2u32.pow(attempt - 1));
        }
        let mut req = agent.post(&url).header("Content-Type", "application/json");
        if let Some(t) = &cfg.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        match req.send(body) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                let text = resp.body_mut().read_to_string().unwrap_or_default();
                if (200..300).contains(&status) {
                    if let Some(p) = &cached {
                        if let Some(dir) = p.parent() {
                            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                        }
                        std::fs::write(p, &text).map_err(|e| Error::io(p, e))?;
                    }
                    return Ok(text);
                }
                if status != 429 && status < 500 {
                    return Err(Error::Service { status, body: text });
                }
                last = format!("status {status}: {text}");
            }
            Err(e) => last = e.to_string(),
        }
        log::warn!("{url}: attempt {} failed: {last}", attempt + 1);
    }
    Err(Error::Retryable(format!("{url}: {last}")))
}

pub fn encode_png(image: &Image) -> Result<String> {
    let buf = image::RgbImage::from_raw(image.width as u32, image.height as u32, image.to_rgb8())
        .expect("buffer matches dimensions");
    let mut bytes = Vec::new();
    buf.write_to(&mut Cursor::new(&mut bytes), image::ImageFormat::Png)?;
    Ok(STANDARD.encode(bytes))
}

fn encode_mask_png(mask: &Mask) -> Result<String> {
    let raw = mask.bits.iter().map(|b| if *b { 255 } else { 0 }).collect();
    let buf = image::GrayImage::from_raw(mask.width as u32, mask.height as u32, raw)
        .expect("buffer matches dimensions");
    let mut bytes = Vec::new();
    buf.write_to(&mut Cursor::new(&mut bytes), image::ImageFormat::Png)?;
    Ok(STANDARD.encode(bytes))
}

pub fn decode_png(b64: &str) -> Result<Image> {
    let bytes = STANDARD
        .decode(b64.trim())
        .map_err(|e| Error::Contract(format!("bad base64 image: {e}")))?;
    let img = image::load_from_memory(&bytes)?.to_rgb8();
    Image::from_rgb8(img.width() as usize, img.height() as usize, img.as_raw())
}

#[derive(Serialize)]
struct RefineBody<'a> {
    prompt: &'a str,
    labels: &'a [LabelInfo],
}

#[derive(Deserialize)]
struct RefineReply {
    #[serde(default)]
    instructions: Option<Vec<Instruction>>,
    #[serde(default)]
    refusal: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RemoteRefiner {
    pub config: RemoteConfig,
}

impl PromptRefiner for RemoteRefiner {
    fn refine(&self, prompt: &str, labels: &[LabelInfo]) -> Result<EditPlan> {
        let body = serde_json::to_string(&RefineBody { prompt, labels })?;
        let text = post(&self.config, "refine", &body)?;
        let reply: RefineReply = serde_json::from_str(&text).map_err(|e| {
            Error::Contract(format!("refiner reply does not match the plan schema: {e}"))
        })?;
        match (reply.instructions, reply.refusal) {
            (_, Some(reason)) => Err(Error::Refusal(reason)),
            (Some(instructions), None) => Ok(EditPlan { instructions }),
            (None, None) => Err(Error::Contract(
                "refiner reply has neither instructions nor refusal".into(),
            )),
        }
    }
}

#[derive(Serialize)]
struct EditBody<'a> {
    image_b64: String,
    mask_b64: String,
    instruction: &'a str,
    seed: u64,
}

#[derive(Deserialize)]
struct EditReply {
    image_b64: String,
    #[serde(default)]
    status: Option<String>,
}

/// Remote editor. Responses are PNG, so the contract is checked against
/// the 8-bit quantized source by [`super::edit_image`].
#[derive(Debug, Clone)]
pub struct RemoteEditor {
    pub config: RemoteConfig,
}

impl ImageEditor for RemoteEditor {
    fn edit(&self, req: &EditRequest) -> Result<EditResponse> {
        let body = serde_json::to_string(&EditBody {
            image_b64: encode_png(&req.image)?,
            mask_b64: encode_mask_png(&req.mask)?,
            instruction: &req.instruction,
            seed: req.seed,
        })?;
        let text = post(&self.config, "edit", &body)?;
        let reply: EditReply = serde_json::from_str(&text)
            .map_err(|e| Error::Contract(format!("editor reply is malformed: {e}")))?;
        Ok(EditResponse {
            image: decode_png(&reply.image_b64)?,
            status: reply.status.unwrap_or_else(|| "ok".into()),
        })
    }
}
