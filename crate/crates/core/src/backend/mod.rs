//! The pluggable nonlinear-transformation provider: episode synthesis, graph
//! extraction, relation inference, commonality aggregation, salience
//! extraction, synergy/tension analysis, answer generation, judging, and
//! embeddings.
//!
//! Two implementations ship: a deterministic mock whose contracts double as
//! test oracles, and a remote chat-completions client.

mod mock;
mod remote;

pub use mock::{MockBackend, MockLexicon};
pub use remote::RemoteBackend;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::UnitId;

// ---------------------------------------------------------------------------
// Tasks and budgets
// ---------------------------------------------------------------------------

/// The transformation a request asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Synthesize,
    Extract,
    InferRelation,
    AggregateCommon,
    ExtractSalient,
    SynergyTension,
    Answer,
    Judge,
    Embed,
}

impl Task {
    /// Max output tokens granted to each task.
    pub fn budget(&self) -> u32 {
        match self {
            Task::Synthesize => 400,
            Task::Extract => 400,
            Task::InferRelation => 300,
            Task::AggregateCommon | Task::ExtractSalient => 400,
            Task::SynergyTension => 500,
            Task::Answer => 600,
            Task::Judge => 16,
            Task::Embed => 0,
        }
    }
}

// ---------------------------------------------------------------------------
// Payloads
// ---------------------------------------------------------------------------

/// One dialogue turn as seen by the synthesis task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TurnRef {
    pub speaker: String,
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesizeInput {
    pub session_id: String,
    pub turn_span: (u32, u32),
    /// Full rendered window text ("speaker: utterance" lines).
    pub window_text: String,
    pub turns: Vec<TurnRef>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractInput {
    pub unit_id: UnitId,
    pub session_id: String,
    /// Rendered unit text: core fact plus conclusions.
    pub text: String,
    /// Abstract categories the extractor may target.
    pub known_abstracts: Vec<String>,
}

/// One evidence unit as seen by the relation-inference task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvidenceRef {
    pub unit_id: UnitId,
    /// The unit's source digest; the mock builds summaries from these.
    pub digest: String,
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferRelationInput {
    pub edge_label: String,
    pub old_summary: String,
    pub old_version: u64,
    pub evidence: Vec<EvidenceRef>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateInput {
    /// Texts of the selected evidence set, theories first.
    pub items: Vec<String>,
    pub old_sigma: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SalientInput {
    pub items: Vec<String>,
    pub old_delta: String,
}

/// One child theory as seen by synergy/tension analysis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChildTheory {
    pub name: String,
    pub scale: u32,
    pub sigma: String,
    pub delta: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynergyInput {
    pub parent_name: String,
    pub children: Vec<ChildTheory>,
    pub old_sigma: String,
    pub old_delta: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnswerInput {
    pub question: String,
    /// The rendered context document, exactly as assembled.
    pub context_text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeInput {
    pub question: String,
    pub gold: String,
    pub answer: String,
}

/// Task-specific structured payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskPayload {
    Synthesize(SynthesizeInput),
    Extract(ExtractInput),
    InferRelation(InferRelationInput),
    AggregateCommon(AggregateInput),
    ExtractSalient(SalientInput),
    SynergyTension(SynergyInput),
    Answer(AnswerInput),
    Judge(JudgeInput),
}

impl TaskPayload {
    pub fn task(&self) -> Task {
        match self {
            TaskPayload::Synthesize(_) => Task::Synthesize,
            TaskPayload::Extract(_) => Task::Extract,
            TaskPayload::InferRelation(_) => Task::InferRelation,
            TaskPayload::AggregateCommon(_) => Task::AggregateCommon,
            TaskPayload::ExtractSalient(_) => Task::ExtractSalient,
            TaskPayload::SynergyTension(_) => Task::SynergyTension,
            TaskPayload::Answer(_) => Task::Answer,
            TaskPayload::Judge(_) => Task::Judge,
        }
    }
}

/// A complete backend request: task, payload, and output-token budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendRequest {
    pub task: Task,
    pub payload: TaskPayload,
    pub budget: u32,
}

impl BackendRequest {
    pub fn new(payload: TaskPayload) -> Self {
        let task = payload.task();
        Self { task, budget: task.budget(), payload }
    }

    fn check(&self) -> Result<()> {
        if self.payload.task() != self.task {
            return Err(Error::SchemaViolation(format!(
                "payload does not match task {:?}",
                self.task
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Responses
// ---------------------------------------------------------------------------

/// Synthesis output before ids are assigned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisDraft {
    pub lambda_fact: String,
    pub base_conclusions: Vec<String>,
    pub rel_conclusions: Vec<String>,
}

/// Extraction output: names only; the applier resolves them against the
/// graph.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProposalDraft {
    /// (name, description)
    pub instance_entities: Vec<(String, String)>,
    /// (instance_name, general_name)
    pub general_links: Vec<(String, String)>,
    /// (general_name, abstract_name)
    pub abstract_links: Vec<(String, String)>,
    /// (src_name, dst_name, label, unit_id)
    pub event_relations: Vec<(String, String, String, UnitId)>,
}

impl ProposalDraft {
    pub fn is_empty(&self) -> bool {
        self.instance_entities.is_empty()
            && self.general_links.is_empty()
            && self.abstract_links.is_empty()
            && self.event_relations.is_empty()
    }
}

/// Binary judgment from the judge task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Judgment {
    Correct,
    Incorrect,
}

/// Structured response; the variant always matches the requested task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendResponse {
    Synthesis(SynthesisDraft),
    Extraction(ProposalDraft),
    RelationSummary(String),
    Sigma(String),
    Delta(String),
    Synergy { sigma: String, delta: String },
    Answer(String),
    Judgment(Judgment),
}

// ---------------------------------------------------------------------------
// The backend trait
// ---------------------------------------------------------------------------

/// A nonlinear-transformation provider. Stateless per call and safe for
/// concurrent use.
pub trait Backend: Send + Sync {
    /// Dispatch a structured request. The response always validates against
    /// the task's output shape or the call errors; nothing is silently
    /// truncated.
    fn call(&self, request: &BackendRequest) -> Result<BackendResponse>;

    /// Unit-norm embedding of the given text.
    fn embed(&self, text: &str) -> Result<Vec<f64>>;

    /// Embedding dimension this backend produces.
    fn embed_dim(&self) -> usize;

    // -- typed convenience wrappers -----------------------------------------

    fn synthesize(&self, input: SynthesizeInput) -> Result<SynthesisDraft> {
        match self.call(&BackendRequest::new(TaskPayload::Synthesize(input)))? {
            BackendResponse::Synthesis(d) => Ok(d),
            other => Err(schema_mismatch("synthesize", &other)),
        }
    }

    fn extract(&self, input: ExtractInput) -> Result<ProposalDraft> {
        match self.call(&BackendRequest::new(TaskPayload::Extract(input)))? {
            BackendResponse::Extraction(p) => Ok(p),
            other => Err(schema_mismatch("extract", &other)),
        }
    }

    fn infer_relation(&self, input: InferRelationInput) -> Result<String> {
        match self.call(&BackendRequest::new(TaskPayload::InferRelation(input)))? {
            BackendResponse::RelationSummary(s) => Ok(s),
            other => Err(schema_mismatch("infer_relation", &other)),
        }
    }

    fn aggregate_common(&self, input: AggregateInput) -> Result<String> {
        match self.call(&BackendRequest::new(TaskPayload::AggregateCommon(input)))? {
            BackendResponse::Sigma(s) => Ok(s),
            other => Err(schema_mismatch("aggregate_common", &other)),
        }
    }

    fn extract_salient(&self, input: SalientInput) -> Result<String> {
        match self.call(&BackendRequest::new(TaskPayload::ExtractSalient(input)))? {
            BackendResponse::Delta(s) => Ok(s),
            other => Err(schema_mismatch("extract_salient", &other)),
        }
    }

    fn synergy_tension(&self, input: SynergyInput) -> Result<(String, String)> {
        match self.call(&BackendRequest::new(TaskPayload::SynergyTension(input)))? {
            BackendResponse::Synergy { sigma, delta } => Ok((sigma, delta)),
            other => Err(schema_mismatch("synergy_tension", &other)),
        }
    }

    fn answer(&self, input: AnswerInput) -> Result<String> {
        match self.call(&BackendRequest::new(TaskPayload::Answer(input)))? {
            BackendResponse::Answer(a) => Ok(a),
            other => Err(schema_mismatch("answer", &other)),
        }
    }

    fn judge(&self, input: JudgeInput) -> Result<Judgment> {
        match self.call(&BackendRequest::new(TaskPayload::Judge(input)))? {
            BackendResponse::Judgment(v) => Ok(v),
            other => Err(schema_mismatch("judge", &other)),
        }
    }
}

fn schema_mismatch(task: &str, got: &BackendResponse) -> Error {
    Error::SchemaViolation(format!("task {task} got mismatched response variant {got:?}"))
}

/// Lowercase alphanumeric tokenization shared by the mock backend and the
/// lexical index: split on non-alphanumerics, drop empties.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// Normalize free text for judge comparisons: lowercase, strip punctuation,
/// collapse whitespace.
pub fn normalize_for_match(text: &str) -> String {
    tokenize(text).join(" ")
}

pub(crate) fn validate_request(request: &BackendRequest) -> Result<()> {
    request.check()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_splits_on_non_alphanumerics() {
        assert_eq!(tokenize("Hello, World! 42"), vec!["hello", "world", "42"]);
        assert!(tokenize("...!!!").is_empty());
    }

    #[test]
    fn normalization_for_judge() {
        assert_eq!(normalize_for_match("  Fur   Elise,  by Beethoven! "), "fur elise by beethoven");
    }

    #[test]
    fn mismatched_payload_task_rejected() {
        let req = BackendRequest {
            task: Task::Judge,
            payload: TaskPayload::Answer(AnswerInput {
                question: "q".into(),
                context_text: String::new(),
            }),
            budget: 10,
        };
        assert!(validate_request(&req).is_err());
    }
}
