//! OpenAI-compatible HTTP transport (`/chat/completions`, `/embeddings`).

use std::path::Path;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use base64::Engine as _;
use serde_json::{json, Value};

use super::{Backend, BackendProfile, ChatMessage, MessageRole, RawEmbeddings, RawReply, Role, TokenUsage};
use crate::error::{Error, Result};

pub struct HttpBackend {
    client: reqwest::Client,
}

impl Default for HttpBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl HttpBackend {
    pub fn new() -> Self {
        Self {
            client: reqwest::Client::new(),
        }
    }

    fn url(profile: &BackendProfile, path: &str) -> String {
        format!("{}/{}", profile.endpoint.trim_end_matches('/'), path)
    }

    /// POSTs `body`, retrying timeouts, connection errors, 429 and 5xx.
    async fn post(&self, profile: &BackendProfile, path: &str, body: &Value) -> Result<(Value, u64)> {
        let role = profile.role;
        let url = Self::url(profile, path);
        let token = profile
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok());
        let started = Instant::now();
        let mut attempt = 0u32;
        loop {
            let mut req = self
                .client
                .post(&url)
                .timeout(Duration::from_secs_f64(profile.timeout_s))
                .json(body);
            if let Some(t) = &token {
                req = req.bearer_auth(t);
            }

            let failure = match req.send().await {
                Ok(resp) if resp.status().is_success() => {
                    let bytes = resp.bytes().await.map_err(|e| Error::RetryableTransport {
                        role,
                        message: format!("reading body: {e}"),
                    })?;
                    let value: Value = serde_json::from_slice(&bytes).map_err(|e| Error::Protocol {
                        role,
                        message: format!("response is not JSON: {e}"),
                    })?;
                    return Ok((value, started.elapsed().as_millis() as u64));
                }
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().await.unwrap_or_default();
                    let err = Error::BackendFailure {
                        role,
                        status: Some(status.as_u16()),
                        message: truncate(&text, 300),
                    };
                    if status.as_u16() != 429 && !status.is_server_error() {
                        return Err(err);
                    }
                    err
                }
                Err(e) if e.is_timeout() || e.is_connect() => Error::RetryableTransport {
                    role,
                    message: e.to_string(),
                },
                Err(e) => {
                    return Err(Error::BackendFailure {
                        role,
                        status: e.status().map(|s| s.as_u16()),
                        message: e.to_string(),
                    })
                }
            };

            if attempt >= profile.max_retries {
                return Err(failure);
            }
            let delay = profile.retry_backoff_ms.saturating_mul(1 << attempt.min(16));
            tracing::warn!(%role, attempt = attempt + 1, delay_ms = delay, "retrying: {failure}");
            tokio::time::sleep(Duration::from_millis(delay)).await;
            attempt += 1;
        }
    }
}

fn truncate(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_string(),
    }
}

fn mime_for(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        _ => "image/jpeg",
    }
}

/// Request body for `/chat/completions`. Frames become base64 `image_url` parts.
pub fn build_chat_body(profile: &BackendProfile, messages: &[ChatMessage]) -> Result<Value> {
    let mut out = Vec::with_capacity(messages.len());
    for m in messages {
        let role = match m.role {
            MessageRole::System => "system",
            MessageRole::User => "user",
            MessageRole::Assistant => "assistant",
        };
        let content = if m.frames.is_empty() {
            Value::String(m.text.clone())
        } else {
            let mut parts = vec![json!({"type": "text", "text": m.text})];
            for frame in &m.frames {
                let bytes = std::fs::read(frame).map_err(|e| Error::io(frame, e))?;
                let data = base64::engine::general_purpose::STANDARD.encode(bytes);
                parts.push(json!({
                    "type": "image_url",
                    "image_url": {"url": format!("data:{};base64,{data}", mime_for(frame))}
                }));
            }
            Value::Array(parts)
        };
        out.push(json!({"role": role, "content": content}));
    }
    Ok(json!({
        "model": profile.model_id,
        "messages": out,
        "stream": false,
    }))
}

pub fn build_embeddings_body(profile: &BackendProfile, texts: &[String]) -> Value {
    json!({"model": profile.model_id, "input": texts})
}

fn parse_chat(role: Role, body: &Value) -> Result<(String, Option<TokenUsage>)> {
    let protocol = |message: &str| Error::Protocol {
        role,
        message: message.to_string(),
    };
    let content = body
        .pointer("/choices/0/message/content")
        .ok_or_else(|| protocol("missing choices[0].message.content"))?;
    let text = match content {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join(""),
        _ => return Err(protocol("message content is neither string nor parts")),
    };
    let usage = body.get("usage").and_then(|u| {
        Some(TokenUsage {
            prompt_tokens: u.get("prompt_tokens")?.as_u64()?,
            completion_tokens: u.get("completion_tokens")?.as_u64()?,
        })
    });
    Ok((text, usage))
}

fn parse_embeddings(role: Role, body: &Value, expected: usize) -> Result<Vec<Vec<f64>>> {
    let protocol = |message: String| Error::Protocol { role, message };
    let data = body
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| protocol("missing data array".into()))?;
    let mut slots: Vec<Option<Vec<f64>>> = vec![None; expected];
    for (pos, item) in data.iter().enumerate() {
        let idx = item.get("index").and_then(Value::as_u64).map(|i| i as usize).unwrap_or(pos);
        let values = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| protocol(format!("data[{pos}] has no embedding")))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| protocol(format!("data[{pos}] has a non-numeric value"))))
            .collect::<Result<Vec<f64>>>()?;
        let slot = slots
            .get_mut(idx)
            .ok_or_else(|| protocol(format!("embedding index {idx} out of range")))?;
        *slot = Some(values);
    }
    slots
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or_else(|| protocol(format!("no embedding returned for input {i}"))))
        .collect()
}

#[async_trait]
impl Backend for HttpBackend {
    async fn chat(&self, profile: &BackendProfile, messages: &[ChatMessage]) -> Result<RawReply> {
        let body = build_chat_body(profile, messages)?;
        let (resp, latency_ms) = self.post(profile, "chat/completions", &body).await?;
        let (text, usage) = parse_chat(profile.role, &resp)?;
        Ok(RawReply { text, latency_ms, usage })
    }

    async fn embed(&self, profile: &BackendProfile, texts: &[String]) -> Result<RawEmbeddings> {
        let body = build_embeddings_body(profile, texts);
        let (resp, latency_ms) = self.post(profile, "embeddings", &body).await?;
        let vectors = parse_embeddings(profile.role, &resp, texts.len())?;
        Ok(RawEmbeddings { vectors, latency_ms })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_string_and_part_contents() {
        let body = json!({"choices": [{"message": {"content": "hi"}}], "usage": {"prompt_tokens": 3, "completion_tokens": 1}});
        let (text, usage) = parse_chat(Role::Reasoner, &body).unwrap();
        assert_eq!(text, "hi");
        assert_eq!(usage.unwrap().completion_tokens, 1);

        let body = json!({"choices": [{"message": {"content": [{"type": "text", "text": "a"}, {"type": "text", "text": "b"}]}}]});
        assert_eq!(parse_chat(Role::Reasoner, &body).unwrap().0, "ab");

        assert!(matches!(parse_chat(Role::Reasoner, &json!({"x": 1})), Err(Error::Protocol { .. })));
    }

    #[test]
    fn embeddings_follow_index_field() {
        let body = json!({"data": [{"index": 1, "embedding": [0, 1]}, {"index": 0, "embedding": [1, 0]}]});
        let v = parse_embeddings(Role::Embedder, &body, 2).unwrap();
        assert_eq!(v, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(parse_embeddings(Role::Embedder, &json!({"data": []}), 1).is_err());
    }

    #[test]
    fn chat_body_without_frames_is_plain_text() {
        let p = BackendProfile::new(Role::Router, "http://h/v1", "router-1b");
        let body = build_chat_body(&p, &[ChatMessage::system("s"), ChatMessage::user("u")]).unwrap();
        assert_eq!(body["model"], "router-1b");
        assert_eq!(body["messages"][1]["content"], "u");
    }
}
