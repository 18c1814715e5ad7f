use std::io::Cursor;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Oracle, OracleError, OracleRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub url: String,
    /// Environment variable holding a bearer token.
    pub token_env: Option<String>,
    pub timeout_secs: f64,
    pub retries: u32,
    pub backoff_ms: u64,
    /// Cap on each encoded PNG, bytes.
    pub max_image_bytes: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8080/oracle".into(),
            token_env: Some("EQA_ORACLE_TOKEN".into()),
            timeout_secs: 60.0,
            retries: 2,
            backoff_ms: 250,
            max_image_bytes: 4 << 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransportError {
    Timeout,
    Io(String),
}

/// One HTTP POST of a JSON body; returns status and response body.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        body: &str,
        token: Option<&str>,
        timeout: Duration,
    ) -> Result<(u16, String), TransportError>;
}

#[derive(Debug, Clone, Default)]
pub struct UreqTransport;

impl Transport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        body: &str,
        token: Option<&str>,
        timeout: Duration,
    ) -> Result<(u16, String), TransportError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.post(url).header("Content-Type", "application/json");
        if let Some(t) = token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let mut resp = req.send(body).map_err(|e| match e {
            ureq::Error::Timeout(_) => TransportError::Timeout,
            ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => TransportError::Timeout,
            other => TransportError::Io(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| match e {
            ureq::Error::Timeout(_) => TransportError::Timeout,
            other => TransportError::Io(other.to_string()),
        })?;
        Ok((status, text))
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    template_id: &'a str,
    prompt: &'a str,
    images: Vec<String>,
}

#[derive(Deserialize)]
struct WireResponse {
    text: String,
}

/// JSON-over-HTTP oracle: `{template_id, prompt, images: [base64 PNG]}` in,
/// `{text}` out.
pub struct RemoteOracle<T: Transport = UreqTransport> {
    config: EndpointConfig,
    transport: T,
}

impl RemoteOracle<UreqTransport> {
    pub fn new(config: EndpointConfig) -> Self {
        Self::with_transport(config, UreqTransport)
    }
}

impl<T: Transport> RemoteOracle<T> {
    pub fn with_transport(config: EndpointConfig, transport: T) -> Self {
        Self { config, transport }
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    /// The request body that would be sent.
    pub fn encode(&self, req: &OracleRequest) -> Result<String, OracleError> {
        let mut images = Vec::with_capacity(req.images.len());
        for img in &req.images {
            let mut png = Vec::new();
            img.rgb
                .write_to(&mut Cursor::new(&mut png), image::ImageFormat::Png)
                .map_err(|e| OracleError::Transport(format!("png encoding: {e}")))?;
            if png.len() > self.config.max_image_bytes {
                return Err(OracleError::OverSize {
                    bytes: png.len(),
                    cap: self.config.max_image_bytes,
                });
            }
            images.push(base64::engine::general_purpose::STANDARD.encode(&png));
        }
        let wire = WireRequest {
            template_id: req.template.as_str(),
            prompt: &req.prompt,
            images,
        };
        Ok(serde_json::to_string(&wire).expect("request serializes"))
    }
}

impl<T: Transport> Oracle for RemoteOracle<T> {
    fn call(&self, req: &OracleRequest) -> Result<String, OracleError> {
        let body = self.encode(req)?;
        let token = self
            .config
            .token_env
            .as_deref()
            .and_then(|v| std::env::var(v).ok())
            .filter(|t| !t.is_empty());
        let timeout = Duration::from_secs_f64(self.config.timeout_secs.max(0.001));
        let attempts = self.config.retries + 1;
        let mut last = OracleError::Transport("no attempt made".into());
        for attempt in 1..=attempts {
            if attempt > 1 && self.config.backoff_ms > 0 {
                std::thread::sleep(Duration::from_millis(self.config.backoff_ms * (attempt as u64 - 1)));
            }
            let err = match self.transport.post_json(&self.config.url, &body, token.as_deref(), timeout) {
                Ok((status, text)) if (200..300).contains(&status) => {
                    return serde_json::from_str::<WireResponse>(&text)
                        .map(|r| r.text)
                        .map_err(|e| OracleError::Malformed(format!("response body: {e}")));
                }
                Ok((code, text)) => OracleError::Status {
                    code,
                    body: text.chars().take(200).collect(),
                },
                Err(TransportError::Timeout) => OracleError::Timeout { attempts: attempt },
                Err(TransportError::Io(m)) => OracleError::Transport(m),
            };
            log::warn!("oracle attempt {attempt}/{attempts} failed: {err}");
            if !err.is_retryable() {
                return Err(err);
            }
            last = err;
        }
        Err(last)
    }
}
