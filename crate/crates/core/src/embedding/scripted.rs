use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use super::{EmbedError, EmbeddingProvider};
use crate::digest::sha256_hex;
use crate::retry::ProviderError;

/// Replays vectors from a line-JSON fixture of `{"text", "embedding"}`
/// records. Unknown texts are rejected.
pub struct ScriptedEmbeddingProvider {
    identity: String,
    vectors: HashMap<String, Vec<f64>>,
}

#[derive(Deserialize)]
struct Row {
    text: String,
    embedding: Vec<f64>,
}

impl ScriptedEmbeddingProvider {
    pub fn parse(source: &str) -> Result<Self, EmbedError> {
        let mut vectors = HashMap::new();
        for (i, line) in source.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: Row = serde_json::from_str(line)
                .map_err(|e| EmbedError::Contract(format!("embedding fixture line {}: {e}", i + 1)))?;
            vectors.insert(row.text, row.embedding);
        }
        Ok(Self { identity: format!("scripted/{}", &sha256_hex(source)[..16]), vectors })
    }

    pub fn from_file(path: &Path) -> Result<Self, EmbedError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| EmbedError::Contract(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

impl EmbeddingProvider for ScriptedEmbeddingProvider {
    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        texts
            .iter()
            .map(|t| {
                self.vectors
                    .get(t)
                    .cloned()
                    .ok_or_else(|| ProviderError::Rejected(format!("no scripted embedding for {t:?}")))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replays_known_and_rejects_unknown() {
        let p = ScriptedEmbeddingProvider::parse(
            "{\"text\":\"a\",\"embedding\":[1,0]}\n\n{\"text\":\"b\",\"embedding\":[0,1]}\n",
        )
        .unwrap();
        assert_eq!(p.embed_batch(&["b".into(), "a".into()]).unwrap(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert!(p.embed_batch(&["c".into()]).is_err());
        assert!(ScriptedEmbeddingProvider::parse("{").is_err());
    }
}
