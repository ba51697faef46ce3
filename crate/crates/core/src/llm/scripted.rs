use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatMessage, ChatProvider, CompletionParams, LlmError, ProviderReply};
use crate::digest::sha256_hex;
use crate::retry::ProviderError;

/// SHA-256 of the JSON array of messages. Completion parameters are not part
/// of the key.
pub fn messages_digest(messages: &[ChatMessage]) -> String {
    sha256_hex(serde_json::to_vec(messages).expect("messages serialize"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub digest: String,
    pub response_text: String,
}

/// Replays canned completions keyed by [`messages_digest`].
#[derive(Debug, Default)]
pub struct ScriptedChatProvider {
    responses: HashMap<String, String>,
}

impl ScriptedChatProvider {
    pub fn new(records: impl IntoIterator<Item = FixtureRecord>) -> Self {
        Self { responses: records.into_iter().map(|r| (r.digest, r.response_text)).collect() }
    }

    /// Line-JSON `{digest, response_text}`; blank lines are skipped and a
    /// later record for the same digest wins.
    pub fn parse(text: &str) -> Result<Self, LlmError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: FixtureRecord =
                serde_json::from_str(line).map_err(|e| LlmError::Fixture { line: i + 1, reason: e.to_string() })?;
            records.push(rec);
        }
        Ok(Self::new(records))
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Fixture { line: 0, reason: format!("{}: {e}", path.display()) })?;
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl ChatProvider for ScriptedChatProvider {
    fn complete(&self, messages: &[ChatMessage], _: &CompletionParams) -> Result<ProviderReply, ProviderError> {
        let digest = messages_digest(messages);
        match self.responses.get(&digest) {
            Some(text) => Ok(ProviderReply { text: text.clone(), usage: None }),
            None => Err(ProviderError::Rejected(format!("no scripted response for digest {digest}"))),
        }
    }
}

/// Answers with a closure and records every exchange as a fixture record.
pub struct RecordingChatProvider<F> {
    respond: F,
    records: Mutex<Vec<FixtureRecord>>,
}

impl<F> RecordingChatProvider<F>
where
    F: Fn(&[ChatMessage]) -> String + Send + Sync,
{
    pub fn new(respond: F) -> Self {
        Self { respond, records: Mutex::new(Vec::new()) }
    }

    pub fn records(&self) -> Vec<FixtureRecord> {
        self.records.lock().expect("records lock").clone()
    }

    /// Writes the recorded exchanges, sorted by digest and deduplicated.
    pub fn write_fixture<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut records = self.records();
        records.sort_by(|a, b| a.digest.cmp(&b.digest));
        records.dedup_by(|a, b| a.digest == b.digest);
        for r in records {
            serde_json::to_writer(&mut out, &r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

impl<F> ChatProvider for RecordingChatProvider<F>
where
    F: Fn(&[ChatMessage]) -> String + Send + Sync,
{
    fn complete(&self, messages: &[ChatMessage], _: &CompletionParams) -> Result<ProviderReply, ProviderError> {
        let text = (self.respond)(messages);
        self.records
            .lock()
            .expect("records lock")
            .push(FixtureRecord { digest: messages_digest(messages), response_text: text.clone() });
        Ok(ProviderReply { text, usage: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{LlmGateway, Phase};

    #[test]
    fn replays_fixture_verbatim() {
        let msgs = vec![ChatMessage::user("Who is Tom's wife?")];
        let line = serde_json::to_string(&FixtureRecord {
            digest: messages_digest(&msgs),
            response_text: "Length 1 reasoning path: {people.person.spouse_s}.".into(),
        })
        .unwrap();
        let gw = LlmGateway::new(Box::new(ScriptedChatProvider::parse(&line).unwrap()), CompletionParams::default());
        let r = gw.complete(Phase::InitialPlanning, &msgs).unwrap();
        assert_eq!(r.text, "Length 1 reasoning path: {people.person.spouse_s}.");
        assert!(r.estimated);
    }

    #[test]
    fn missing_key_names_digest() {
        let msgs = vec![ChatMessage::user("unknown")];
        let gw = LlmGateway::new(Box::new(ScriptedChatProvider::default()), CompletionParams::default());
        let err = gw.complete(Phase::Reasoning, &msgs).unwrap_err().to_string();
        assert!(err.contains(&messages_digest(&msgs)), "{err}");
    }

    #[test]
    fn digest_depends_on_role_and_content() {
        let a = messages_digest(&[ChatMessage::user("x")]);
        assert_ne!(a, messages_digest(&[ChatMessage::system("x")]));
        assert_ne!(a, messages_digest(&[ChatMessage::user("x ")]));
        assert_eq!(a, messages_digest(&[ChatMessage::user("x")]));
    }

    #[test]
    fn recorder_output_replays() {
        let rec = RecordingChatProvider::new(|m: &[ChatMessage]| format!("{{{}}}", m[0].content));
        let msgs = [ChatMessage::user("hello")];
        rec.complete(&msgs, &CompletionParams::default()).unwrap();
        rec.complete(&msgs, &CompletionParams::default()).unwrap();
        let mut buf = Vec::new();
        rec.write_fixture(&mut buf).unwrap();
        let replay = ScriptedChatProvider::parse(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(replay.len(), 1);
        assert_eq!(replay.complete(&msgs, &CompletionParams::default()).unwrap().text, "{hello}");
    }

    #[test]
    fn bad_fixture_line_reported() {
        assert!(matches!(ScriptedChatProvider::parse("\n{oops"), Err(LlmError::Fixture { line: 2, .. })));
    }
}
