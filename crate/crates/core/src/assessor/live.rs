//! Client for an OpenAI-compatible chat completions endpoint with image input.

use std::time::Duration;

use base64::Engine;
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{ModelError, ModelProvider, ModelRequest};
use crate::config::LiveModelConfig;

pub struct LiveModel {
    cfg: LiveModelConfig,
    model_id: String,
    key: String,
    client: Client,
}

impl LiveModel {
    /// The API key is read from the configured environment variable and is
    /// never persisted.
    pub fn new(cfg: &LiveModelConfig, model_id: &str) -> Result<Self, ModelError> {
        if cfg.endpoint.is_empty() {
            return Err(ModelError::Permanent("assessor.live.endpoint is empty".into()));
        }
        let key = std::env::var(&cfg.api_key_env)
            .map_err(|_| ModelError::Permanent(format!("environment variable {} is not set", cfg.api_key_env)))?;
        let client = Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_s.max(1)))
            .build()
            .map_err(|e| ModelError::Permanent(e.to_string()))?;
        Ok(LiveModel { cfg: cfg.clone(), model_id: model_id.to_string(), key, client })
    }
}

pub(crate) fn request_body(model_id: &str, max_tokens: u32, prompt: &str, image: &[u8]) -> Value {
    let mime = if image.starts_with(b"\x89PNG") { "image/png" } else { "image/jpeg" };
    let data = base64::engine::general_purpose::STANDARD.encode(image);
    json!({
        "model": model_id,
        "max_tokens": max_tokens,
        "messages": [{
            "role": "user",
            "content": [
                {"type": "text", "text": prompt},
                {"type": "image_url", "image_url": {"url": format!("data:{mime};base64,{data}")}}
            ]
        }]
    })
}

pub(crate) fn response_text(body: &Value) -> Result<String, ModelError> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| ModelError::Permanent("response has no choices[0].message.content".into()))
}

fn classify(status: StatusCode) -> Result<(), ModelError> {
    if status.is_success() {
        Ok(())
    } else if status == StatusCode::TOO_MANY_REQUESTS || status == StatusCode::REQUEST_TIMEOUT || status.is_server_error()
    {
        Err(ModelError::Transient(format!("HTTP {status}")))
    } else {
        Err(ModelError::Permanent(format!("HTTP {status}")))
    }
}

impl ModelProvider for LiveModel {
    fn model_id(&self) -> String {
        self.model_id.clone()
    }

    fn complete(&self, req: &ModelRequest<'_>) -> Result<String, ModelError> {
        let body = request_body(&self.model_id, self.cfg.max_tokens, &req.prompt.text, req.image);
        let resp = self
            .client
            .post(&self.cfg.endpoint)
            .bearer_auth(&self.key)
            .json(&body)
            .send()
            .map_err(|e| ModelError::Transient(e.to_string()))?;
        classify(resp.status())?;
        let v: Value = resp.json().map_err(|e| ModelError::Transient(format!("response body: {e}")))?;
        response_text(&v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn body_carries_prompt_and_inline_image() {
        let b = request_body("m", 2000, "hello", b"\x89PNG....");
        assert_eq!(b["model"], "m");
        assert_eq!(b["messages"][0]["content"][0]["text"], "hello");
        let url = b["messages"][0]["content"][1]["image_url"]["url"].as_str().unwrap();
        assert!(url.starts_with("data:image/png;base64,"));
    }

    #[test]
    fn extracts_message_content() {
        let v = json!({"choices": [{"message": {"role": "assistant", "content": "{}"}}]});
        assert_eq!(response_text(&v).unwrap(), "{}");
        assert!(response_text(&json!({"choices": []})).is_err());
    }

    #[test]
    fn status_classes() {
        assert!(matches!(classify(StatusCode::SERVICE_UNAVAILABLE), Err(ModelError::Transient(_))));
        assert!(matches!(classify(StatusCode::UNAUTHORIZED), Err(ModelError::Permanent(_))));
    }
}
