use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Condition;

const COGNITIVE: &str = include_str!("../../prompts/agent1_cognitive.txt");
const VANILLA: &str = include_str!("../../prompts/agent1_vanilla.txt");
const DISCOVERY_OUTPUT: &str = include_str!("../../prompts/agent1_output.txt");
pub const CONSOLIDATION_PROMPT: &str = include_str!("../../prompts/agent2_consolidation.txt");
pub const SCORING_PROMPT: &str = include_str!("../../prompts/agent3_scoring.txt");

const BATCH_SIZE_SLOT: &str = "{{batch_size}}";

/// The four subgoal categories permitted under the cognitive condition.
pub const PERMITTED_SUBGOALS: [&str; 4] = [
    "founder capability formation",
    "team coordination and complementarity",
    "market structure and constraints",
    "early execution dynamics",
];

pub const MAX_SUBGOALS: usize = 4;

/// Subgoal recorded for every vanilla-condition feature.
pub const VANILLA_SUBGOAL: &str = "unspecified";

/// Agent 1 system prompt for one condition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptCondition {
    pub kind: Condition,
    pub template_text: String,
}

impl PromptCondition {
    pub fn builtin(kind: Condition) -> Self {
        let template_text = match kind {
            Condition::Cognitive => COGNITIVE,
            Condition::Vanilla => VANILLA,
        };
        Self {
            kind,
            template_text: template_text.to_string(),
        }
    }

    /// Loads a template from disk; the output-format section is still appended.
    pub fn from_file(kind: Condition, path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let template_text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self { kind, template_text })
    }

    pub fn system_prompt(&self, batch_size: usize) -> String {
        let mut prompt = self.template_text.replace(BATCH_SIZE_SLOT, &batch_size.to_string());
        prompt.push_str(DISCOVERY_OUTPUT);
        prompt
    }
}

/// Lowercased, whitespace-collapsed form used to compare subgoal labels.
pub fn normalize_subgoal(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}
