use serde::{Deserialize, Serialize};

use super::AgentTranscript;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Discovery,
    Consolidation,
    Scoring,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Discovery => "discovery",
            Stage::Consolidation => "consolidation",
            Stage::Scoring => "scoring",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTotals {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cost: f64,
}

impl StageTotals {
    fn add(&mut self, other: &StageTotals) {
        self.calls += other.calls;
        self.input_tokens += other.input_tokens;
        self.output_tokens += other.output_tokens;
        self.cost += other.cost;
    }
}

/// Per-stage call, token and cost totals for one run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CostLedger {
    pub discovery: StageTotals,
    pub consolidation: StageTotals,
    pub scoring: StageTotals,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stage(&self, stage: Stage) -> &StageTotals {
        match stage {
            Stage::Discovery => &self.discovery,
            Stage::Consolidation => &self.consolidation,
            Stage::Scoring => &self.scoring,
        }
    }

    fn stage_mut(&mut self, stage: Stage) -> &mut StageTotals {
        match stage {
            Stage::Discovery => &mut self.discovery,
            Stage::Consolidation => &mut self.consolidation,
            Stage::Scoring => &mut self.scoring,
        }
    }

    pub fn record(&mut self, transcript: &AgentTranscript, stage: Stage) {
        self.stage_mut(stage).add(&StageTotals {
            calls: 1,
            input_tokens: transcript.input_tokens,
            output_tokens: transcript.output_tokens,
            cost: transcript.cost,
        });
    }

    pub fn record_all<'a>(&mut self, transcripts: impl IntoIterator<Item = &'a AgentTranscript>, stage: Stage) {
        for t in transcripts {
            self.record(t, stage);
        }
    }

    pub fn total(&self) -> StageTotals {
        let mut total = StageTotals::default();
        for stage in [Stage::Discovery, Stage::Consolidation, Stage::Scoring] {
            total.add(self.stage(stage));
        }
        total
    }
}

/// Functional form of [`CostLedger::record`].
pub fn accumulate_cost(mut ledger: CostLedger, transcript: &AgentTranscript, stage: Stage) -> CostLedger {
    ledger.record(transcript, stage);
    ledger
}
