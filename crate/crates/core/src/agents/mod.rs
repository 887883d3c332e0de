//! The three agent stages: discovery (Agent 1), consolidation (Agent 2) and
//! scoring (Agent 3).
//!
//! Every agent response is validated before use. A response that fails
//! validation gets exactly one corrective re-prompt carrying the error text;
//! a second failure is final.

mod consolidation;
mod discovery;
pub mod payload;
pub mod prompts;
mod scoring;

pub use consolidation::{apply_merges, consolidate, consolidate_passes, pre_cluster, validate_merge_response, Consolidation};
pub use discovery::{
    accumulate_master_list, build_discovery_batches, discover_all, discover_features, validate_discovery_response,
    DiscoveryBatch, RejectionCause,
};
pub use payload::MergeDecision;
pub use prompts::PromptCondition;
pub use scoring::{score_features, validate_assignments, Scoring};

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::debug;

use crate::backend::{AgentTranscript, Backend, CompletionRequest, Validation};
use crate::error::{Error, Result};

fn is_retryable_validation(err: &Error) -> bool {
    matches!(
        err,
        Error::SchemaViolation(_)
            | Error::SubgoalViolation(_)
            | Error::UnknownMemberId(_)
            | Error::OverlappingMergeGroups(_)
            | Error::UnknownEntityId(_)
    )
}

fn corrective_payload(original: &str, err: &Error) -> String {
    format!(
        "{original}\n\nYour previous response was rejected ({}: {err}). \
         Reply again with only JSON that conforms exactly to the required format.",
        err.code()
    )
}

/// Sends `request`, validates the reply, and re-prompts once on a
/// validation failure. All transcripts are returned on success.
pub(crate) fn complete_validated<T>(
    backend: &Backend,
    request: CompletionRequest,
    validate: impl Fn(&str) -> Result<T>,
) -> Result<(T, Vec<AgentTranscript>)> {
    let mut transcripts = Vec::with_capacity(2);
    let mut first = backend.complete(request.clone())?;
    match validate(&first.raw_response) {
        Ok(value) => {
            first.validation = Validation::Valid;
            transcripts.push(first);
            Ok((value, transcripts))
        }
        Err(err) if is_retryable_validation(&err) => {
            debug!("{} rejected, re-prompting: {err}", request.request_id);
            first.validation = Validation::Invalid(err.to_string());
            transcripts.push(first);
            let retry = CompletionRequest {
                request_id: format!("{}/retry", request.request_id),
                user_payload: corrective_payload(&request.user_payload, &err),
                ..request
            };
            let mut second = backend.complete(retry)?;
            match validate(&second.raw_response) {
                Ok(value) => {
                    second.validation = Validation::Valid;
                    transcripts.push(second);
                    Ok((value, transcripts))
                }
                Err(err) => Err(err),
            }
        }
        Err(err) => Err(err),
    }
}

/// Runs `f` over `items` on at most `limit` threads, returning results in
/// input order.
pub(crate) fn run_parallel<I, T, F>(items: &[I], limit: usize, f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync,
{
    let workers = limit.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= items.len() {
                    break;
                }
                let out = f(&items[idx]);
                slots.lock().unwrap()[idx] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|s| s.expect("every slot is filled"))
        .collect()
}
