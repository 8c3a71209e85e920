//! Client for the model sidecar's HTTP/JSON protocol.
//!
//! Endpoints: `POST /image` (multipart upload), `POST /meta`,
//! `POST /attention`, `POST /generate`, `POST /logprob`, `GET /healthz`.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use ureq::unversioned::multipart::Form;
use ureq::Agent;

use super::{approx_tokens, Backend, BackendCaps, DescribeCache, Generation, ImageHandle, Region, ViewSpec};
use crate::attention::AttentionGrid;
use crate::error::{invalid, Error, Result};
use crate::focus::PixelRect;
use crate::scoring::{ReasoningStep, TERMINATOR};

#[derive(Clone, Debug)]
pub struct HttpOptions {
    pub timeout: Duration,
    /// Extra attempts for idempotent requests.
    pub retries: u32,
    pub retry_backoff: Duration,
}

impl Default for HttpOptions {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(60),
            retries: 2,
            retry_backoff: Duration::from_millis(200),
        }
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct MetaRequest {
    pub image_id: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct MetaResponse {
    pub grid_h: usize,
    pub grid_w: usize,
    pub h_px: u32,
    pub w_px: u32,
    pub patch_px: u32,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct AttentionRequest {
    pub image_id: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub region: Option<PixelRect>,
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct AttentionResponse {
    pub grid: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct GenerateRequest {
    pub image_id: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub region: Option<PixelRect>,
    pub question: String,
    pub chain: Vec<String>,
    pub temperature: f64,
    pub max_steps: usize,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct GenerateResponse {
    pub steps: Vec<String>,
    pub p_prefix: Vec<f64>,
    pub terminator_seen: bool,
    /// Optional; whitespace tokens are counted when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_tokens: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct LogprobRequest {
    pub image_id: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub region: Option<PixelRect>,
    pub question: String,
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct LogprobResponse {
    pub mean_logprob: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ImageResponse {
    pub image_id: String,
}

#[derive(Debug)]
pub struct HttpBackend {
    base: String,
    agent: Agent,
    options: HttpOptions,
    cache: DescribeCache,
    round_trips: AtomicU64,
}

fn region_of(view: &ViewSpec) -> Option<PixelRect> {
    match view.region {
        Region::Original => None,
        Region::Pixels(r) => Some(r),
    }
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, options: HttpOptions) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(options.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base: endpoint.into().trim_end_matches('/').to_owned(),
            agent,
            options,
            cache: DescribeCache::default(),
            round_trips: AtomicU64::new(0),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.base
    }

    /// Completed HTTP exchanges, including failed attempts.
    pub fn round_trips(&self) -> u64 {
        self.round_trips.load(Ordering::Relaxed)
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn read_reply<T: DeserializeOwned>(path: &str, resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<T> {
        let mut resp = resp.map_err(|e| match e {
            ureq::Error::Timeout(_) => Error::BackendUnavailable(format!("{path}: timed out")),
            e => Error::BackendUnavailable(format!("{path}: {e}")),
        })?;
        let status = resp.status().as_u16();
        if status == 200 {
            return resp
                .body_mut()
                .read_json::<T>()
                .map_err(|e| Error::Protocol(format!("{path}: bad response body: {e}")));
        }
        let body = resp.body_mut().read_to_string().unwrap_or_default();
        let msg = format!("{path}: HTTP {status} {}", body.trim());
        Err(match status {
            400 | 413 | 422 => Error::InvalidInput(msg),
            404 => Error::NotFound(msg),
            429 => Error::Capacity(msg),
            s if s >= 500 => Error::BackendUnavailable(msg),
            _ => Error::Protocol(msg),
        })
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B, idempotent: bool) -> Result<T> {
        let attempts = if idempotent { self.options.retries + 1 } else { 1 };
        let mut last = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.options.retry_backoff * attempt);
            }
            self.round_trips.fetch_add(1, Ordering::Relaxed);
            let resp = self.agent.post(self.url(path)).send_json(body);
            match Self::read_reply(path, resp) {
                Err(e @ (Error::BackendUnavailable(_) | Error::Capacity(_))) => last = Some(e),
                other => return other,
            }
        }
        Err(last.expect("at least one attempt"))
    }

    pub fn healthz(&self) -> Result<()> {
        self.round_trips.fetch_add(1, Ordering::Relaxed);
        let resp = self
            .agent
            .get(self.url("/healthz"))
            .call()
            .map_err(|e| Error::BackendUnavailable(format!("/healthz: {e}")))?;
        match resp.status().as_u16() {
            200 => Ok(()),
            s => Err(Error::BackendUnavailable(format!("/healthz: HTTP {s}"))),
        }
    }

    pub fn meta(&self, image_id: &str) -> Result<ImageHandle> {
        let m: MetaResponse = self.post(
            "/meta",
            &MetaRequest {
                image_id: image_id.to_owned(),
            },
            true,
        )?;
        ImageHandle::new(image_id, (m.grid_h, m.grid_w), (m.h_px, m.w_px), m.patch_px)
    }

    /// Uploads an image file and fetches its geometry.
    pub fn register_image(&self, path: &Path) -> Result<ImageHandle> {
        let form = Form::new().file("image", path)?;
        self.round_trips.fetch_add(1, Ordering::Relaxed);
        let resp = self.agent.post(self.url("/image")).send(form);
        let reply: ImageResponse = Self::read_reply("/image", resp)?;
        self.meta(&reply.image_id)
    }

    /// Places a grid reported over `region` back into the original frame.
    /// Cells whose centre lies outside the region get the grid's minimum.
    pub fn embed_in_original(image: &ImageHandle, region: Option<PixelRect>, rows: &[Vec<f64>]) -> Result<AttentionGrid> {
        let view = AttentionGrid::from_rows(rows).map_err(|e| Error::Protocol(format!("attention grid: {e}")))?;
        let Some(region) = region else {
            if view.shape() != image.grid_shape {
                return Err(Error::Protocol(format!(
                    "attention grid {:?} does not match image grid {:?}",
                    view.shape(),
                    image.grid_shape
                )));
            }
            return Ok(view);
        };
        let (h, w) = image.grid_shape;
        let (gh, gw) = view.shape();
        let floor = view.values().iter().copied().fold(f64::INFINITY, f64::min);
        let p = image.patch_px as f64;
        let mut values = vec![floor; h * w];
        for r in 0..h {
            let cy = (r as f64 + 0.5) * p - region.y as f64;
            if cy < 0.0 || cy >= region.height as f64 {
                continue;
            }
            let i = ((cy / region.height as f64 * gh as f64) as usize).min(gh - 1);
            for c in 0..w {
                let cx = (c as f64 + 0.5) * p - region.x as f64;
                if cx < 0.0 || cx >= region.width as f64 {
                    continue;
                }
                let j = ((cx / region.width as f64 * gw as f64) as usize).min(gw - 1);
                values[r * w + c] = view.get(i, j);
            }
        }
        AttentionGrid::new(h, w, values)
    }
}

impl Backend for HttpBackend {
    fn caps(&self) -> BackendCaps {
        BackendCaps {
            supports_attention: true,
            supports_logprob: true,
            deterministic: false,
        }
    }

    fn attention_for(&self, view: &ViewSpec, text: &str) -> Result<AttentionGrid> {
        if text.trim().is_empty() {
            return Err(invalid("text must be non-empty"));
        }
        let region = region_of(view);
        let resp: AttentionResponse = self.post(
            "/attention",
            &AttentionRequest {
                image_id: view.image.id.clone(),
                region,
                text: text.to_owned(),
            },
            true,
        )?;
        Self::embed_in_original(&view.image, region, &resp.grid)
    }

    fn generate(
        &self,
        view: &ViewSpec,
        question: &str,
        chain: &[ReasoningStep],
        temperature: f64,
        max_steps: usize,
    ) -> Result<Generation> {
        let resp: GenerateResponse = self.post(
            "/generate",
            &GenerateRequest {
                image_id: view.image.id.clone(),
                region: region_of(view),
                question: question.to_owned(),
                chain: chain.iter().map(|s| s.text().to_owned()).collect(),
                temperature,
                max_steps,
            },
            false,
        )?;
        if resp.steps.is_empty() || resp.steps.len() != resp.p_prefix.len() {
            return Err(Error::Protocol(format!(
                "/generate returned {} steps and {} prefix log-probs",
                resp.steps.len(),
                resp.p_prefix.len()
            )));
        }
        if resp.steps.len() > max_steps {
            return Err(Error::Protocol(format!(
                "/generate returned {} steps for max_steps {max_steps}",
                resp.steps.len()
            )));
        }
        let steps = resp
            .steps
            .into_iter()
            .map(ReasoningStep::new)
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Protocol(format!("/generate: {e}")))?;
        let seen = steps.iter().any(|s| s.text().contains(TERMINATOR));
        if seen != resp.terminator_seen {
            return Err(Error::Protocol("/generate terminator_seen disagrees with step text".into()));
        }
        Ok(Generation {
            generated_tokens: resp.n_tokens.unwrap_or_else(|| approx_tokens(&steps)),
            steps,
            prefix_mean_logprobs: resp.p_prefix,
            terminator_seen: seen,
        })
    }

    fn prefix_mean_logprob(&self, view: &ViewSpec, question: &str, text: &str) -> Result<f64> {
        if text.trim().is_empty() {
            return Err(invalid("text must be non-empty"));
        }
        let resp: LogprobResponse = self.post(
            "/logprob",
            &LogprobRequest {
                image_id: view.image.id.clone(),
                region: region_of(view),
                question: question.to_owned(),
                text: text.to_owned(),
            },
            true,
        )?;
        if resp.mean_logprob.is_nan() || resp.mean_logprob > 0.0 {
            return Err(Error::Protocol(format!("/logprob returned {} > 0", resp.mean_logprob)));
        }
        Ok(resp.mean_logprob)
    }

    fn describe_cache(&self) -> &DescribeCache {
        &self.cache
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unreachable_sidecar_is_unavailable() {
        let b = HttpBackend::new(
            "http://127.0.0.1:9",
            HttpOptions {
                timeout: Duration::from_secs(2),
                retries: 1,
                retry_backoff: Duration::from_millis(1),
            },
        );
        let img = ImageHandle::synthetic("x", (2, 2), 14);
        let err = b.attention_for(&ViewSpec::original(&img), "hello").unwrap_err();
        assert!(matches!(err, Error::BackendUnavailable(_)), "{err}");
        assert_eq!(b.round_trips(), 2);
        assert!(b.healthz().is_err());
    }

    #[test]
    fn embed_crop_into_original_frame() {
        let img = ImageHandle::synthetic("x", (4, 4), 10);
        let region = PixelRect { x: 20, y: 0, width: 20, height: 20 };
        let g = HttpBackend::embed_in_original(&img, Some(region), &[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(
            g.values(),
            &[1.0, 1.0, 1.0, 2.0, 1.0, 1.0, 3.0, 4.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]
        );
        assert!(HttpBackend::embed_in_original(&img, None, &[vec![1.0]]).is_err());
    }

    #[test]
    fn wire_format_field_names() {
        let req = GenerateRequest {
            image_id: "a".into(),
            region: None,
            question: "q".into(),
            chain: vec!["s1".into()],
            temperature: 0.5,
            max_steps: 5,
        };
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"image_id":"a","question":"q","chain":["s1"],"temperature":0.5,"max_steps":5}"#
        );
        let r: AttentionRequest =
            serde_json::from_str(r#"{"image_id":"a","region":{"x":1,"y":2,"width":3,"height":4},"text":"t"}"#).unwrap();
        assert_eq!(r.region, Some(PixelRect { x: 1, y: 2, width: 3, height: 4 }));
    }
}
