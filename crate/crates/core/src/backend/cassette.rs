use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{AgentTranscript, CompletionRequest, Provider, ProviderKind, RawCompletion};
use crate::error::{Error, Result};

/// A cassette is a JSON array of transcripts from one run.
pub fn load_cassette(path: &Path) -> Result<Vec<AgentTranscript>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn save_cassette(path: &Path, transcripts: &[AgentTranscript]) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(transcripts)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Serves recorded responses keyed by request content hash.
#[derive(Debug, Default)]
pub struct ReplayProvider {
    entries: HashMap<String, RawCompletion>,
}

impl ReplayProvider {
    pub fn new(transcripts: impl IntoIterator<Item = AgentTranscript>) -> Self {
        let mut entries = HashMap::new();
        for t in transcripts {
            // identical requests got identical answers; keep the first
            entries.entry(t.request.cassette_key()).or_insert(RawCompletion {
                text: t.raw_response,
                input_tokens: Some(t.input_tokens),
                output_tokens: Some(t.output_tokens),
                origin: Some(t.provider),
            });
        }
        Self { entries }
    }

    pub fn from_files(paths: &[impl AsRef<Path>]) -> Result<Self> {
        let mut all = Vec::new();
        for p in paths {
            all.extend(load_cassette(p.as_ref())?);
        }
        Ok(Self::new(all))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Provider for ReplayProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Replay
    }

    fn complete_raw(&self, request: &CompletionRequest) -> Result<RawCompletion> {
        let key = request.cassette_key();
        self.entries.get(&key).cloned().ok_or_else(|| Error::ReplayMiss {
            request_id: request.request_id.clone(),
            key,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{schema, Backend, PriceTable, Validation};

    #[test]
    fn replay_returns_recorded_response() {
        let req = CompletionRequest::new("r1", "sys", "payload", schema::SCORING);
        let recorded = AgentTranscript {
            request: req.clone(),
            raw_response: "{\"assignments\":{}}".into(),
            input_tokens: 120,
            output_tokens: 7,
            cost: 0.0,
            validation: Validation::Valid,
            provider: ProviderKind::Live,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        save_cassette(&path, std::slice::from_ref(&recorded)).unwrap();

        let prices = PriceTable {
            input_per_mtok: 1.0,
            output_per_mtok: 4.0,
        };
        let backend = Backend::new(Box::new(ReplayProvider::from_files(&[&path]).unwrap()), prices);
        let mut again = req.clone();
        again.request_id = "regenerated".into();
        let t = backend.complete(again).unwrap();
        assert_eq!(t.raw_response, recorded.raw_response);
        assert_eq!((t.input_tokens, t.output_tokens), (120, 7));
        assert_eq!(t.cost, prices.cost(120, 7));
        // replay keeps the provider that produced the response
        assert_eq!(t.provider, ProviderKind::Live);
        assert_eq!(backend.kind(), ProviderKind::Replay);

        let miss = backend
            .complete(CompletionRequest::new("r2", "sys", "other", schema::SCORING))
            .unwrap_err();
        assert!(matches!(miss, Error::ReplayMiss { ref request_id, .. } if request_id == "r2"));
    }

    #[test]
    fn missing_cassette() {
        assert!(matches!(
            load_cassette(Path::new("/no/such/cassette.json")),
            Err(Error::MissingFile(_))
        ));
    }
}
