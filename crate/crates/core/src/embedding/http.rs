use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::EmbeddingProvider;
use crate::retry::ProviderError;

/// Client for any service speaking the common embeddings wire format:
/// `{"model", "input": [...]}` in, `{"data": [{"index", "embedding"}]}` out.
pub struct HttpEmbeddingProvider {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
pub(crate) struct EmbeddingRequest<'a> {
    pub model: &'a str,
    pub input: &'a [String],
}

#[derive(Deserialize)]
pub(crate) struct EmbeddingResponse {
    pub data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
pub(crate) struct EmbeddingDatum {
    pub index: usize,
    pub embedding: Vec<f64>,
}

impl HttpEmbeddingProvider {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .expect("static client configuration");
        Self { endpoint: endpoint.into(), model: model.into(), api_key, client }
    }
}

/// Reorders response rows by their `index` field and checks coverage.
pub(crate) fn align_response(resp: EmbeddingResponse, expected: usize) -> Result<Vec<Vec<f64>>, ProviderError> {
    let mut slots: Vec<Option<Vec<f64>>> = vec![None; expected];
    for datum in resp.data {
        let slot = slots
            .get_mut(datum.index)
            .ok_or_else(|| ProviderError::Rejected(format!("response index {} out of range", datum.index)))?;
        if slot.replace(datum.embedding).is_some() {
            return Err(ProviderError::Rejected(format!("duplicate response index {}", datum.index)));
        }
    }
    slots
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or_else(|| ProviderError::Rejected(format!("missing embedding for input {i}"))))
        .collect()
}

pub(crate) fn classify(err: reqwest::Error) -> ProviderError {
    if err.is_decode() || err.is_builder() {
        ProviderError::Rejected(err.to_string())
    } else {
        ProviderError::Transport(err.to_string())
    }
}

pub(crate) fn check_status(resp: reqwest::blocking::Response) -> Result<reqwest::blocking::Response, ProviderError> {
    let status = resp.status();
    if status.is_success() {
        return Ok(resp);
    }
    let body = resp.text().unwrap_or_default();
    let msg = format!("HTTP {status}: {}", body.chars().take(200).collect::<String>());
    if status.is_server_error() || status.as_u16() == 429 {
        Err(ProviderError::Transport(msg))
    } else {
        Err(ProviderError::Rejected(msg))
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn identity(&self) -> String {
        format!("http/{}", self.model)
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        let mut req = self.client.post(&self.endpoint).json(&EmbeddingRequest { model: &self.model, input: texts });
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = check_status(req.send().map_err(classify)?)?;
        let body: EmbeddingResponse = resp.json().map_err(classify)?;
        align_response(body, texts.len())
    }
}
