use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ChatMessage, ChatProvider, CompletionParams, ProviderReply};
use crate::embedding::http::{check_status, classify};
use crate::retry::ProviderError;

/// Client for the common chat-completions wire format.
pub struct HttpChatProvider {
    endpoint: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

impl HttpChatProvider {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .expect("static client configuration");
        Self { endpoint: endpoint.into(), api_key, client }
    }
}

fn decode(resp: ChatResponse) -> Result<ProviderReply, ProviderError> {
    let text = resp
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| ProviderError::Rejected("response has no choices".into()))?
        .message
        .content
        .unwrap_or_default();
    Ok(ProviderReply { text, usage: resp.usage.map(|u| (u.prompt_tokens, u.completion_tokens)) })
}

impl ChatProvider for HttpChatProvider {
    fn complete(&self, messages: &[ChatMessage], params: &CompletionParams) -> Result<ProviderReply, ProviderError> {
        let body = ChatRequest {
            model: &params.model,
            messages,
            temperature: params.temperature,
            max_tokens: params.max_output,
        };
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = check_status(req.send().map_err(classify)?)?;
        decode(resp.json().map_err(classify)?)
    }
}
