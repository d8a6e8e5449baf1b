//! Adapter for OpenAI-compatible HTTP endpoints.
//!
//! `POST {endpoint}/chat/completions` with
//! `{"model", "messages": [{"role": "user", "content"}], "max_tokens", "temperature"?}`
//! and `POST {endpoint}/embeddings` with `{"model", "input": [..]}`.
//! 429 and 5xx responses are transport errors (retried); other 4xx are
//! content errors.

use std::fmt;
use std::time::Duration;

use serde_json::{json, Value};

use super::{
    CompletionProvider, CompletionRequest, EmbeddingProvider, ProviderError, ProviderReply,
    TokenUsage,
};

struct HttpClient {
    base: String,
    api_key: String,
    agent: ureq::Agent,
}

impl fmt::Debug for HttpClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpClient")
            .field("base", &self.base)
            .field("api_key", &"<redacted>")
            .finish()
    }
}

impl HttpClient {
    fn new(endpoint: &str, api_key: String, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base: endpoint.trim_end_matches('/').to_string(),
            api_key,
            agent,
        }
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, ProviderError> {
        let url = format!("{}/{}", self.base, path);
        let mut resp = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body)
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::Transport(format!("reading body: {e}")))?;
        if status == 429 || status >= 500 {
            return Err(ProviderError::Transport(format!(
                "HTTP {status}: {}",
                snippet(&text)
            )));
        }
        if status >= 400 {
            return Err(ProviderError::Content(format!(
                "HTTP {status}: {}",
                snippet(&text)
            )));
        }
        serde_json::from_str(&text)
            .map_err(|e| ProviderError::Content(format!("invalid JSON: {e}")))
    }
}

fn snippet(s: &str) -> &str {
    let end = s.char_indices().nth(200).map_or(s.len(), |(i, _)| i);
    &s[..end]
}

#[derive(Debug)]
pub struct OpenAiCompatible {
    client: HttpClient,
}

impl OpenAiCompatible {
    pub fn new(endpoint: &str, api_key: String, timeout: Duration) -> Self {
        Self {
            client: HttpClient::new(endpoint, api_key, timeout),
        }
    }
}

impl CompletionProvider for OpenAiCompatible {
    fn complete(&self, req: &CompletionRequest) -> Result<ProviderReply, ProviderError> {
        let mut body = json!({
            "model": req.model_id,
            "messages": [{"role": "user", "content": req.prompt}],
            "max_tokens": req.max_tokens,
        });
        if let Some(t) = req.temperature {
            body["temperature"] = json!(t);
        }
        let v = self.client.post("chat/completions", &body)?;
        let choice = &v["choices"][0];
        if choice["finish_reason"] == "content_filter" {
            return Err(ProviderError::Content("refused by content filter".into()));
        }
        let text = choice["message"]["content"]
            .as_str()
            .ok_or_else(|| ProviderError::Content("no message content in response".into()))?;
        let usage = v.get("usage").and_then(|u| {
            Some(TokenUsage {
                prompt_tokens: u.get("prompt_tokens")?.as_u64()?,
                completion_tokens: u.get("completion_tokens")?.as_u64()?,
            })
        });
        Ok(ProviderReply {
            text: text.to_string(),
            usage,
        })
    }
}

#[derive(Debug)]
pub struct OpenAiCompatibleEmbedder {
    client: HttpClient,
}

impl OpenAiCompatibleEmbedder {
    pub fn new(endpoint: &str, api_key: String, timeout: Duration) -> Self {
        Self {
            client: HttpClient::new(endpoint, api_key, timeout),
        }
    }
}

impl EmbeddingProvider for OpenAiCompatibleEmbedder {
    fn embed_batch(
        &self,
        model_id: &str,
        texts: &[String],
    ) -> Result<Vec<Vec<f64>>, ProviderError> {
        let v = self
            .client
            .post("embeddings", &json!({"model": model_id, "input": texts}))?;
        let data = v["data"]
            .as_array()
            .ok_or_else(|| ProviderError::Content("no data array in embedding response".into()))?;
        let mut out = vec![None; texts.len()];
        for (pos, item) in data.iter().enumerate() {
            let idx = item["index"].as_u64().map_or(pos, |i| i as usize);
            let values = item["embedding"]
                .as_array()
                .ok_or_else(|| ProviderError::Content("embedding is not an array".into()))?
                .iter()
                .map(|x| {
                    x.as_f64()
                        .ok_or_else(|| ProviderError::Content("non-numeric embedding".into()))
                })
                .collect::<Result<Vec<f64>, _>>()?;
            if idx >= out.len() {
                return Err(ProviderError::Content(format!(
                    "embedding index {idx} out of range"
                )));
            }
            out[idx] = Some(values);
        }
        out.into_iter()
            .map(|v| {
                v.ok_or_else(|| ProviderError::Content("missing embedding for an input".into()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves one canned response per accepted connection and returns the
    /// request bodies it saw.
    fn serve(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}/v1", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (addr, handle)
    }

    fn req() -> CompletionRequest {
        CompletionRequest {
            model_id: "gpt-test".into(),
            prompt: "question?".into(),
            temperature: Some(0.0),
            max_tokens: 8,
            request_tag: "t".into(),
        }
    }

    #[test]
    fn chat_completion_wire_shape() {
        let (addr, h) = serve(vec![(
            200,
            r#"{"choices":[{"message":{"content":"Correct answer: B."},"finish_reason":"stop"}],"usage":{"prompt_tokens":5,"completion_tokens":4}}"#.into(),
        )]);
        let p = OpenAiCompatible::new(&addr, "k".into(), Duration::from_secs(5));
        let reply = p.complete(&req()).unwrap();
        assert_eq!(reply.text, "Correct answer: B.");
        assert_eq!(reply.usage.unwrap().completion_tokens, 4);
        let bodies = h.join().unwrap();
        let sent: Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(sent["model"], "gpt-test");
        assert_eq!(sent["messages"][0]["content"], "question?");
        assert_eq!(sent["temperature"], 0.0);
    }

    #[test]
    fn server_errors_are_transport_client_errors_are_content() {
        let (addr, h) = serve(vec![(503, "{}".into()), (400, r#"{"error":"bad"}"#.into())]);
        let p = OpenAiCompatible::new(&addr, "k".into(), Duration::from_secs(5));
        assert!(matches!(
            p.complete(&req()),
            Err(ProviderError::Transport(_))
        ));
        assert!(matches!(p.complete(&req()), Err(ProviderError::Content(_))));
        h.join().unwrap();
    }

    #[test]
    fn embeddings_reordered_by_index() {
        let (addr, h) = serve(vec![(
            200,
            r#"{"data":[{"index":1,"embedding":[0.0,1.0]},{"index":0,"embedding":[1.0,0.0]}]}"#
                .into(),
        )]);
        let p = OpenAiCompatibleEmbedder::new(&addr, "k".into(), Duration::from_secs(5));
        let out = p.embed_batch("emb", &["a".into(), "b".into()]).unwrap();
        assert_eq!(out, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        h.join().unwrap();
    }

    #[test]
    fn debug_output_redacts_key() {
        let p = OpenAiCompatible::new("http://x", "sk-secret".into(), Duration::from_secs(1));
        assert!(!format!("{p:?}").contains("sk-secret"));
    }
}
