//! Run configuration: JSON file with command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::PromptCondition;
use crate::backend::{Backend, LiveConfig, LiveProvider, MockProvider, PriceTable, ProviderKind, ReplayProvider, Rulebook};
use crate::error::{Error, Result};
use crate::evaluation::ScoringOptions;
use crate::model::Condition;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunPaths {
    pub discovery: Option<PathBuf>,
    pub heldout: Option<PathBuf>,
    /// Recorded transcripts served by the replay provider.
    pub cassettes: Vec<PathBuf>,
    /// Mock provider rules.
    pub rulebook: Option<PathBuf>,
    /// Replaces the built-in Agent 1 template of the chosen condition.
    pub prompt_template: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for RunPaths {
    fn default() -> Self {
        Self {
            discovery: None,
            heldout: None,
            cassettes: Vec::new(),
            rulebook: None,
            prompt_template: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: Option<String>,
    pub condition: Condition,
    pub provider: ProviderKind,
    /// Records per Agent 1 call.
    pub discovery_batch_size: usize,
    /// Features per Agent 2 call.
    pub consolidation_batch_size: usize,
    pub consolidation_passes: usize,
    /// Features per Agent 3 call.
    pub scoring_feature_batch: usize,
    /// Records per Agent 3 call.
    pub scoring_entity_batch: usize,
    pub min_support_count: u64,
    pub top_k: usize,
    /// Maximum concurrent provider calls.
    pub parallelism: usize,
    pub seed: u64,
    pub prices: PriceTable,
    pub live: LiveConfig,
    pub paths: RunPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run_id: None,
            condition: Condition::Cognitive,
            provider: ProviderKind::Mock,
            discovery_batch_size: 50,
            consolidation_batch_size: 100,
            consolidation_passes: 1,
            scoring_feature_batch: 100,
            scoring_entity_batch: 1000,
            min_support_count: 100,
            top_k: 10,
            parallelism: 4,
            seed: 0,
            prices: PriceTable::default(),
            live: LiveConfig::default(),
            paths: RunPaths::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let config: Self = serde_json::from_slice(&bytes)
            .map_err(|e| Error::parse(Some(e.line()), format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("discovery_batch_size", self.discovery_batch_size),
            ("consolidation_batch_size", self.consolidation_batch_size),
            ("scoring_feature_batch", self.scoring_feature_batch),
            ("scoring_entity_batch", self.scoring_entity_batch),
            ("parallelism", self.parallelism),
        ] {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn run_id(&self) -> String {
        self.run_id
            .clone()
            .unwrap_or_else(|| format!("{}-seed{}", self.condition, self.seed))
    }

    pub fn scoring_options(&self) -> ScoringOptions {
        ScoringOptions {
            feature_batch: self.scoring_feature_batch,
            entity_batch: self.scoring_entity_batch,
            parallelism: self.parallelism,
        }
    }

    pub fn prompt(&self) -> Result<PromptCondition> {
        match &self.paths.prompt_template {
            Some(p) => PromptCondition::from_file(self.condition, p),
            None => Ok(PromptCondition::builtin(self.condition)),
        }
    }

    /// Provider selected by `provider`, wrapped with the price table.
    pub fn backend(&self) -> Result<Backend> {
        match self.provider {
            ProviderKind::Mock => {
                let rulebook = match &self.paths.rulebook {
                    Some(p) => load_rulebook(p)?,
                    None => Rulebook::default(),
                };
                Ok(MockProvider::backend(rulebook, self.prices))
            }
            ProviderKind::Replay => {
                if self.paths.cassettes.is_empty() {
                    return Err(Error::ProviderConfig("replay provider needs at least one cassette".into()));
                }
                let replay = ReplayProvider::from_files(&self.paths.cassettes)?;
                Ok(Backend::new(Box::new(replay), self.prices))
            }
            ProviderKind::Live => {
                let live = LiveProvider::from_env(self.live.clone())?;
                Ok(Backend::new(Box::new(live), self.prices))
            }
        }
    }
}

pub fn load_rulebook(path: &Path) -> Result<Rulebook> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}
