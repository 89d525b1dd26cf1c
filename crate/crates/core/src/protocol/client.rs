use std::time::Duration;

use reqwest::header::CONTENT_TYPE;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    BackendError, ChatRequest, ChatResponse, GlobalEditRequest, GlobalEditResponse,
    GroundRequest, GroundResponse, InpaintRequest, InpaintResponse, Transcript, CHAT_PATH,
    GLOBAL_EDIT_PATH, GROUND_PATH, INPAINT_PATH,
};
use crate::codec;
use crate::model::{BoundingBox, ImageBuffer, Mask};

/// Retries after transport failures and 503s. `backoff.len()` is the retry
/// count; the delay before retry `i` is `backoff[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    #[serde(rename = "backoff_ms", with = "millis")]
    pub backoff: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            backoff: vec![
                Duration::from_millis(250),
                Duration::from_secs(1),
                Duration::from_secs(4),
            ],
        }
    }
}

impl RetryPolicy {
    /// Same retry count with zero delays. Handy for tests.
    pub fn immediate(retries: usize) -> Self {
        Self {
            backoff: vec![Duration::ZERO; retries],
        }
    }

    pub fn max_attempts(&self) -> usize {
        self.backoff.len() + 1
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[Duration], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|d| d.as_millis() as u64))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Duration>, D::Error> {
        let ms = Vec::<u64>::deserialize(d)?;
        Ok(ms.into_iter().map(Duration::from_millis).collect())
    }
}

/// Stateless HTTP transport shared by all backend calls.
#[derive(Debug, Clone)]
pub struct BackendClient {
    http: reqwest::Client,
    retry: RetryPolicy,
    transcript: Option<Transcript>,
}

impl BackendClient {
    pub fn new(retry: RetryPolicy) -> Self {
        let http = reqwest::Client::builder()
            .connect_timeout(Duration::from_secs(5))
            .timeout(Duration::from_secs(600))
            .build()
            .expect("default HTTP client configuration");
        Self {
            http,
            retry,
            transcript: None,
        }
    }

    pub fn retry(&self) -> &RetryPolicy {
        &self.retry
    }

    pub fn with_transcript(&self, transcript: Transcript) -> Self {
        Self {
            transcript: Some(transcript),
            ..self.clone()
        }
    }

    /// Posts an envelope and returns the raw response body of the first
    /// successful attempt. Bytes are passed through untouched.
    pub async fn post_raw(&self, url: &str, body: Vec<u8>) -> Result<(Vec<u8>, usize), BackendError> {
        let attempts_allowed = self.retry.max_attempts();
        let mut last_error = String::new();
        for attempt in 0..attempts_allowed {
            if attempt > 0 {
                tokio::time::sleep(self.retry.backoff[attempt - 1]).await;
            }
            let sent = self
                .http
                .post(url)
                .header(CONTENT_TYPE, "application/json")
                .body(body.clone())
                .send()
                .await;
            let resp = match sent {
                Ok(resp) => resp,
                Err(e) => {
                    last_error = e.to_string();
                    tracing::debug!(url, attempt, error = %last_error, "backend transport failure");
                    continue;
                }
            };
            let status = resp.status();
            if status == reqwest::StatusCode::SERVICE_UNAVAILABLE {
                last_error = "503 service unavailable".into();
                continue;
            }
            if !status.is_success() {
                let text = resp.text().await.unwrap_or_default();
                return Err(BackendError::Rejected {
                    url: url.to_string(),
                    status: status.as_u16(),
                    body: text.chars().take(512).collect(),
                });
            }
            match resp.bytes().await {
                Ok(bytes) => return Ok((bytes.to_vec(), attempt + 1)),
                Err(e) => last_error = e.to_string(),
            }
        }
        Err(BackendError::Unreachable {
            url: url.to_string(),
            attempts: attempts_allowed,
            last_error,
        })
    }

    /// Typed envelope exchange. Records a transcript entry when recording.
    pub async fn post_envelope<Req, Resp>(&self, url: &str, route: &str, req: &Req) -> Result<Resp, BackendError>
    where
        Req: Serialize,
        Resp: DeserializeOwned + Serialize,
    {
        let body = serde_json::to_vec(req).expect("envelopes always serialize");
        let result = self.post_raw(url, body).await.and_then(|(bytes, attempts)| {
            serde_json::from_slice::<Resp>(&bytes)
                .map(|r| (r, attempts))
                .map_err(|e| BackendError::ContractViolation {
                    url: url.to_string(),
                    detail: format!("undecodable envelope: {e}"),
                })
        });
        if let Some(t) = &self.transcript {
            let request = serde_json::to_value(req).unwrap_or_default();
            match &result {
                Ok((resp, attempts)) => t.record(
                    route,
                    *attempts,
                    request,
                    serde_json::to_value(resp).ok(),
                    None,
                ),
                Err(e) => t.record(route, 0, request, None, Some(e.to_string())),
            }
        }
        result.map(|(r, _)| r)
    }

    pub async fn call_chat(&self, endpoint: &str, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.post_envelope(&join(endpoint, CHAT_PATH), CHAT_PATH, req).await
    }

    pub async fn call_ground(
        &self,
        endpoint: &str,
        image: &ImageBuffer,
        phrase: &str,
    ) -> Result<Vec<GroundedDetection>, BackendError> {
        let url = join(endpoint, GROUND_PATH);
        let req = GroundRequest {
            image: codec::image_to_base64(image),
            phrase: phrase.to_string(),
        };
        let resp: GroundResponse = self.post_envelope(&url, GROUND_PATH, &req).await?;
        let violation = |detail: String| BackendError::ContractViolation {
            url: url.clone(),
            detail,
        };
        let mut out = Vec::with_capacity(resp.detections.len());
        let mut previous = f64::INFINITY;
        for (i, d) in resp.detections.into_iter().enumerate() {
            if !(0.0..=1.0).contains(&d.confidence) {
                return Err(violation(format!("detection {i} confidence {} outside [0,1]", d.confidence)));
            }
            if d.confidence > previous {
                return Err(violation("detections are not sorted by descending confidence".into()));
            }
            previous = d.confidence;
            let mask = codec::mask_from_base64(&d.mask)
                .map_err(|e| violation(format!("detection {i} mask: {e}")))?;
            out.push(GroundedDetection {
                mask,
                bbox: d.bbox,
                confidence: d.confidence,
            });
        }
        Ok(out)
    }

    pub async fn call_inpaint(
        &self,
        endpoint: &str,
        image: &ImageBuffer,
        mask: &Mask,
        prompt: &str,
        seed: u64,
    ) -> Result<ImageBuffer, BackendError> {
        let url = join(endpoint, INPAINT_PATH);
        let req = InpaintRequest {
            image: codec::image_to_base64(image),
            mask: codec::mask_to_base64(mask),
            prompt: prompt.to_string(),
            seed,
        };
        let resp: InpaintResponse = self.post_envelope(&url, INPAINT_PATH, &req).await?;
        decode_same_size(&url, &resp.image, image)
    }

    pub async fn call_global(
        &self,
        endpoint: &str,
        image: &ImageBuffer,
        instruction: &str,
        target_prompt: &str,
        seed: u64,
    ) -> Result<ImageBuffer, BackendError> {
        let url = join(endpoint, GLOBAL_EDIT_PATH);
        let req = GlobalEditRequest {
            image: codec::image_to_base64(image),
            instruction: instruction.to_string(),
            target_prompt: target_prompt.to_string(),
            seed,
        };
        let resp: GlobalEditResponse = self.post_envelope(&url, GLOBAL_EDIT_PATH, &req).await?;
        decode_same_size(&url, &resp.image, image)
    }
}

fn decode_same_size(url: &str, payload: &str, source: &ImageBuffer) -> Result<ImageBuffer, BackendError> {
    let out = codec::image_from_base64(payload).map_err(|e| BackendError::ContractViolation {
        url: url.to_string(),
        detail: format!("response image: {e}"),
    })?;
    if out.dims() != source.dims() {
        return Err(BackendError::ContractViolation {
            url: url.to_string(),
            detail: format!(
                "response image is {}x{}, request was {}x{}",
                out.width(),
                out.height(),
                source.width(),
                source.height()
            ),
        });
    }
    Ok(out)
}

fn join(base: &str, path: &str) -> String {
    format!("{}{}", base.trim_end_matches('/'), path)
}

/// A grounding detection with its mask decoded. The mask may differ in size
/// from the image; the mask engine resamples it.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundedDetection {
    pub mask: Mask,
    pub bbox: BoundingBox,
    pub confidence: f64,
}

/// Base URLs of the four backends. Route paths are appended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Endpoints {
    pub chat: String,
    pub ground: String,
    pub inpaint: String,
    pub global_edit: String,
}

impl Endpoints {
    /// One backend per port starting at `port_base` on loopback:
    /// chat, ground, inpaint, global edit.
    pub fn loopback(port_base: u16) -> Self {
        let url = |offset: u16| format!("http://127.0.0.1:{}", port_base + offset);
        Self {
            chat: url(0),
            ground: url(1),
            inpaint: url(2),
            global_edit: url(3),
        }
    }
}

impl Default for Endpoints {
    fn default() -> Self {
        Self::loopback(7860)
    }
}

/// Client plus endpoint set; what the pipeline stages hold.
#[derive(Debug, Clone)]
pub struct Backends {
    pub client: BackendClient,
    pub endpoints: Endpoints,
}

impl Backends {
    pub fn new(endpoints: Endpoints, retry: RetryPolicy) -> Self {
        Self {
            client: BackendClient::new(retry),
            endpoints,
        }
    }

    /// A copy whose calls are appended to a fresh transcript.
    pub fn recording(&self) -> (Backends, Transcript) {
        let t = Transcript::new();
        (
            Backends {
                client: self.client.with_transcript(t.clone()),
                endpoints: self.endpoints.clone(),
            },
            t,
        )
    }

    pub async fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.client.call_chat(&self.endpoints.chat, req).await
    }

    pub async fn ground(&self, image: &ImageBuffer, phrase: &str) -> Result<Vec<GroundedDetection>, BackendError> {
        self.client.call_ground(&self.endpoints.ground, image, phrase).await
    }

    pub async fn inpaint(
        &self,
        image: &ImageBuffer,
        mask: &Mask,
        prompt: &str,
        seed: u64,
    ) -> Result<ImageBuffer, BackendError> {
        self.client
            .call_inpaint(&self.endpoints.inpaint, image, mask, prompt, seed)
            .await
    }

    pub async fn global_edit(
        &self,
        image: &ImageBuffer,
        instruction: &str,
        target_prompt: &str,
        seed: u64,
    ) -> Result<ImageBuffer, BackendError> {
        self.client
            .call_global(&self.endpoints.global_edit, image, instruction, target_prompt, seed)
            .await
    }
}
