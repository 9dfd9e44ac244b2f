//! Deterministic mock backend.
//!
//! Every contract below is exact and stable across runs and process
//! restarts, so higher layers can freeze expected values against it:
//!
//! - synthesize: `lambda_fact = "FACT(" + fnv8(window_text) + ")"` where
//!   fnv8 is the 16-hex-char FNV-1a digest; one base conclusion per distinct
//!   speaker in order of first appearance, rendered
//!   `"{speaker} spoke in session {session_id} turns {a}-{b}"`; one rel
//!   conclusion per turn whose text carries a preference marker, rendered
//!   `"{speaker}: {turn text}"`.
//! - extract: keyword-table lookup over unit tokens. Each hit token `t`
//!   mapping to `(general, abstract)` yields an instance entity
//!   `"{general}@{session_id}"`, the two classification links, and one event
//!   relation `(user:self, instance, "mentions", unit_id)`.
//! - infer_relation: `"REL[v+1]: {old} ⊕ {digests}"` with the evidence
//!   units' source digests sorted and comma-joined.
//! - aggregate_common: regime tag `[+]` when at least half the items carry a
//!   positive marker, else `[-]`; core is the common text verbatim when all
//!   items are identical, else the sorted intersection of the items' token
//!   sets joined by spaces (`"(no common core)"` when empty). Rendered
//!   `"{core} [{tag}]"`.
//! - extract_salient: minority-regime item texts, sorted, deduplicated,
//!   joined by `"; "`.
//! - synergy_tension: children sorted by name;
//!   sigma `"SYN({name}={sigma}; ...)"`, delta `"TENSION({name}={delta}; ...)"`
//!   over children with non-empty deltas (empty string when none).
//! - answer: echoes the first bullet line of the EVIDENCE section of the
//!   rendered context; falls back to the first MACRO PROFILE bullet, then
//!   the first RELATION SUMMARIES bullet, then the literal `"NO EVIDENCE"`.
//! - judge: correct iff the normalized gold string is a substring of the
//!   normalized answer.
//! - embed: d-dimensional hash projection. Dimension i of token t is
//!   FNV-1a of `"{t}\x1f{i}"` mapped linearly onto [-1, 1]; token vectors
//!   are summed and the sum L2-normalized. Texts with no tokens embed the
//!   empty token.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::Result;
use crate::hash::fnv1a64;

use super::{
    tokenize, validate_request, AggregateInput, AnswerInput, Backend, BackendRequest,
    BackendResponse, ExtractInput, InferRelationInput, JudgeInput, Judgment, ProposalDraft,
    SalientInput, SynergyInput, SynthesisDraft, SynthesizeInput, TaskPayload,
};

/// Marker and topic tables driving the mock's behavior.
#[derive(Debug, Clone)]
pub struct MockLexicon {
    pub preference_markers: Vec<String>,
    pub positive_markers: Vec<String>,
    pub negative_markers: Vec<String>,
    /// token -> (general name, abstract name)
    pub topic_table: BTreeMap<String, (String, String)>,
}

impl Default for MockLexicon {
    fn default() -> Self {
        let mut topic_table = BTreeMap::new();
        for (token, general, abstract_name) in [
            ("hiking", "hiking", "Hobbies & Interests"),
            ("piano", "piano", "Hobbies & Interests"),
            ("guitar", "guitar", "Hobbies & Interests"),
            ("painting", "painting", "Hobbies & Interests"),
            ("chess", "chess", "Hobbies & Interests"),
            ("running", "running", "Health & Fitness"),
            ("yoga", "yoga", "Health & Fitness"),
            ("gym", "gym", "Health & Fitness"),
            ("pasta", "pasta", "Food & Diet"),
            ("sushi", "sushi", "Food & Diet"),
            ("coffee", "coffee", "Food & Diet"),
            ("vegetarian", "vegetarian", "Food & Diet"),
            ("sister", "family", "Social & Family"),
            ("brother", "family", "Social & Family"),
            ("friend", "friends", "Social & Family"),
            ("anxious", "anxiety", "Emotions & Wellbeing"),
            ("stressed", "stress", "Emotions & Wellbeing"),
            ("tokyo", "tokyo trip", "Travel"),
            ("paris", "paris trip", "Travel"),
            ("camping", "camping", "Travel"),
            ("promotion", "career growth", "Work & Career"),
            ("manager", "management", "Work & Career"),
            ("startup", "startup work", "Work & Career"),
            ("budget", "budgeting", "Finance"),
            ("savings", "savings", "Finance"),
        ] {
            topic_table.insert(token.to_string(), (general.to_string(), abstract_name.to_string()));
        }
        Self {
            preference_markers: ["love", "like", "prefer", "hate", "always", "never"]
                .map(String::from)
                .to_vec(),
            positive_markers: ["love", "like", "prefer", "always"].map(String::from).to_vec(),
            negative_markers: ["hate", "never"].map(String::from).to_vec(),
            topic_table,
        }
    }
}

impl MockLexicon {
    pub fn has_preference_marker(&self, text: &str) -> bool {
        let tokens = tokenize(text);
        tokens.iter().any(|t| self.preference_markers.contains(t))
    }

    pub fn is_positive(&self, text: &str) -> bool {
        let tokens = tokenize(text);
        tokens.iter().any(|t| self.positive_markers.contains(t))
    }

    pub fn is_negative(&self, text: &str) -> bool {
        let tokens = tokenize(text);
        tokens.iter().any(|t| self.negative_markers.contains(t))
    }
}

/// The deterministic backend used by tests, fixtures, and offline runs.
#[derive(Debug, Clone)]
pub struct MockBackend {
    lexicon: MockLexicon,
    embed_dim: usize,
}

impl Default for MockBackend {
    fn default() -> Self {
        Self::new(64)
    }
}

impl MockBackend {
    pub fn new(embed_dim: usize) -> Self {
        Self { lexicon: MockLexicon::default(), embed_dim }
    }

    pub fn with_lexicon(lexicon: MockLexicon, embed_dim: usize) -> Self {
        Self { lexicon, embed_dim }
    }

    pub fn lexicon(&self) -> &MockLexicon {
        &self.lexicon
    }

    fn synthesize_impl(&self, input: &SynthesizeInput) -> SynthesisDraft {
        let lambda_fact = format!("FACT({})", crate::hash::fnv1a64_hex(&input.window_text));
        let mut seen = BTreeSet::new();
        let mut base = Vec::new();
        for turn in &input.turns {
            if seen.insert(turn.speaker.clone()) {
                base.push(format!(
                    "{} spoke in session {} turns {}-{}",
                    turn.speaker, input.session_id, input.turn_span.0, input.turn_span.1
                ));
            }
        }
        let rel = input
            .turns
            .iter()
            .filter(|t| self.lexicon.has_preference_marker(&t.text))
            .map(|t| format!("{}: {}", t.speaker, t.text))
            .collect();
        SynthesisDraft { lambda_fact, base_conclusions: base, rel_conclusions: rel }
    }

    fn extract_impl(&self, input: &ExtractInput) -> ProposalDraft {
        let tokens: BTreeSet<String> = tokenize(&input.text).into_iter().collect();
        let hits: Vec<&String> =
            tokens.iter().filter(|t| self.lexicon.topic_table.contains_key(*t)).collect();
        let mut proposal = ProposalDraft::default();
        if hits.is_empty() {
            return proposal;
        }
        proposal.instance_entities.push(("user:self".into(), "the user".into()));
        for token in hits {
            let (general, abstract_name) = &self.lexicon.topic_table[token];
            let instance = format!("{}@{}", general, input.session_id);
            proposal
                .instance_entities
                .push((instance.clone(), format!("{general} in session {}", input.session_id)));
            proposal.general_links.push((instance.clone(), general.clone()));
            proposal.abstract_links.push((general.clone(), abstract_name.clone()));
            proposal.event_relations.push((
                "user:self".into(),
                instance,
                "mentions".into(),
                input.unit_id,
            ));
        }
        proposal
    }

    fn infer_relation_impl(&self, input: &InferRelationInput) -> String {
        let mut digests: Vec<&str> =
            input.evidence.iter().map(|e| e.digest.as_str()).collect();
        digests.sort_unstable();
        format!("REL[{}]: {} ⊕ {}", input.old_version + 1, input.old_summary, digests.join(","))
    }

    fn regime_is_positive(&self, items: &[String]) -> bool {
        let positive = items.iter().filter(|i| self.lexicon.is_positive(i)).count();
        positive * 2 >= items.len()
    }

    fn aggregate_impl(&self, input: &AggregateInput) -> String {
        let tag = if self.regime_is_positive(&input.items) { "+" } else { "-" };
        let core = if !input.items.is_empty() && input.items.iter().all(|i| i == &input.items[0]) {
            input.items[0].clone()
        } else {
            let mut sets = input.items.iter().map(|i| {
                tokenize(i).into_iter().collect::<BTreeSet<String>>()
            });
            let mut common = sets.next().unwrap_or_default();
            for s in sets {
                common = common.intersection(&s).cloned().collect();
            }
            let joined = common.into_iter().collect::<Vec<_>>().join(" ");
            if joined.is_empty() {
                "(no common core)".to_string()
            } else {
                joined
            }
        };
        format!("{core} [{tag}]")
    }

    fn salient_impl(&self, input: &SalientInput) -> String {
        let majority_positive = self.regime_is_positive(&input.items);
        let mut outliers: Vec<&String> = input
            .items
            .iter()
            .filter(|i| {
                let pos = self.lexicon.is_positive(i);
                let neg = self.lexicon.is_negative(i);
                if majority_positive {
                    neg && !pos
                } else {
                    pos && !neg
                }
            })
            .collect();
        outliers.sort_unstable();
        outliers.dedup();
        outliers.into_iter().cloned().collect::<Vec<_>>().join("; ")
    }

    fn synergy_impl(&self, input: &SynergyInput) -> (String, String) {
        let mut children = input.children.clone();
        children.sort_by(|a, b| a.name.cmp(&b.name));
        let sigma_parts: Vec<String> =
            children.iter().map(|c| format!("{}={}", c.name, c.sigma)).collect();
        let sigma = format!("SYN({})", sigma_parts.join("; "));
        let delta_parts: Vec<String> = children
            .iter()
            .filter(|c| !c.delta.is_empty())
            .map(|c| format!("{}={}", c.name, c.delta))
            .collect();
        let delta = if delta_parts.is_empty() {
            String::new()
        } else {
            format!("TENSION({})", delta_parts.join("; "))
        };
        (sigma, delta)
    }

    fn answer_impl(&self, input: &AnswerInput) -> String {
        for header in ["## EVIDENCE", "## MACRO PROFILE", "## RELATION SUMMARIES"] {
            if let Some(line) = first_bullet_after(&input.context_text, header) {
                return line;
            }
        }
        "NO EVIDENCE".to_string()
    }

    fn judge_impl(&self, input: &JudgeInput) -> Judgment {
        let gold = super::normalize_for_match(&input.gold);
        let answer = super::normalize_for_match(&input.answer);
        if !gold.is_empty() && answer.contains(&gold) {
            Judgment::Correct
        } else {
            Judgment::Incorrect
        }
    }
}

/// First `- [tag] text` bullet following a section header; returns the text
/// with the bracket tag stripped.
fn first_bullet_after(context: &str, header: &str) -> Option<String> {
    let mut in_section = false;
    for line in context.lines() {
        if line.starts_with("## ") {
            in_section = line == header;
            continue;
        }
        if in_section {
            if let Some(rest) = line.strip_prefix("- [") {
                if let Some(pos) = rest.find("] ") {
                    return Some(rest[pos + 2..].to_string());
                }
            }
        }
    }
    None
}

impl Backend for MockBackend {
    fn call(&self, request: &BackendRequest) -> Result<BackendResponse> {
        validate_request(request)?;
        Ok(match &request.payload {
            TaskPayload::Synthesize(input) => {
                BackendResponse::Synthesis(self.synthesize_impl(input))
            }
            TaskPayload::Extract(input) => BackendResponse::Extraction(self.extract_impl(input)),
            TaskPayload::InferRelation(input) => {
                BackendResponse::RelationSummary(self.infer_relation_impl(input))
            }
            TaskPayload::AggregateCommon(input) => {
                BackendResponse::Sigma(self.aggregate_impl(input))
            }
            TaskPayload::ExtractSalient(input) => {
                BackendResponse::Delta(self.salient_impl(input))
            }
            TaskPayload::SynergyTension(input) => {
                let (sigma, delta) = self.synergy_impl(input);
                BackendResponse::Synergy { sigma, delta }
            }
            TaskPayload::Answer(input) => BackendResponse::Answer(self.answer_impl(input)),
            TaskPayload::Judge(input) => BackendResponse::Judgment(self.judge_impl(input)),
        })
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let mut tokens = tokenize(text);
        if tokens.is_empty() {
            tokens.push(String::new());
        }
        let mut acc = vec![0.0f64; self.embed_dim];
        for token in &tokens {
            for (i, slot) in acc.iter_mut().enumerate() {
                let h = fnv1a64(format!("{token}\u{1f}{i}").as_bytes());
                *slot += (h as f64 / u64::MAX as f64) * 2.0 - 1.0;
            }
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut acc {
                *v /= norm;
            }
        }
        Ok(acc)
    }

    fn embed_dim(&self) -> usize {
        self.embed_dim
    }
}

/// Parse the regime tag off a mock sigma string: `"core [+]"` -> `Some('+')`.
pub fn sigma_regime(sigma: &str) -> Option<char> {
    let trimmed = sigma.trim_end();
    if trimmed.ends_with("[+]") {
        Some('+')
    } else if trimmed.ends_with("[-]") {
        Some('-')
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash::fnv1a64_hex;
    use crate::store::UnitId;

    fn backend() -> MockBackend {
        MockBackend::default()
    }

    #[test]
    fn synthesize_contract() {
        let input = SynthesizeInput {
            session_id: "s1".into(),
            turn_span: (0, 2),
            window_text: "alice: I love hiking.\nbob: Nice.\nalice: Yes!\n".into(),
            turns: vec![
                super::super::TurnRef { speaker: "alice".into(), text: "I love hiking.".into() },
                super::super::TurnRef { speaker: "bob".into(), text: "Nice.".into() },
                super::super::TurnRef { speaker: "alice".into(), text: "Yes!".into() },
            ],
        };
        let draft = backend().synthesize(input.clone()).unwrap();

        // Oracle: fnv8 computed independently over the window text.
        let expected_fact =
            format!("FACT({})", fnv1a64_hex("alice: I love hiking.\nbob: Nice.\nalice: Yes!\n"));
        assert_eq!(draft.lambda_fact, expected_fact);

        // One base conclusion per distinct speaker, in order of appearance.
        assert_eq!(draft.base_conclusions.len(), 2);
        assert!(draft.base_conclusions[0].starts_with("alice spoke in session s1"));
        assert!(draft.base_conclusions[1].starts_with("bob spoke in session s1"));

        // One rel conclusion for the marker-bearing turn.
        assert_eq!(draft.rel_conclusions, vec!["alice: I love hiking.".to_string()]);

        // Determinism: rerunning yields an identical draft.
        assert_eq!(backend().synthesize(input).unwrap(), draft);
    }

    #[test]
    fn extract_contract_topic_hit() {
        let input = ExtractInput {
            unit_id: UnitId(7),
            session_id: "s1".into(),
            text: "alice: I love hiking. Alice enjoys it".into(),
            known_abstracts: vec![],
        };
        let p = backend().extract(input.clone()).unwrap();
        assert!(p
            .instance_entities
            .iter()
            .any(|(name, _)| name == "hiking@s1"));
        assert!(p.instance_entities.iter().any(|(name, _)| name == "user:self"));
        assert!(p.general_links.contains(&("hiking@s1".into(), "hiking".into())));
        assert!(p
            .abstract_links
            .contains(&("hiking".into(), "Hobbies & Interests".into())));
        assert_eq!(
            p.event_relations,
            vec![("user:self".into(), "hiking@s1".into(), "mentions".into(), UnitId(7))]
        );

        // Determinism.
        assert_eq!(backend().extract(input).unwrap(), p);
    }

    #[test]
    fn extract_without_lexicon_hits_is_empty() {
        let input = ExtractInput {
            unit_id: UnitId(1),
            session_id: "s1".into(),
            text: "nothing relevant here".into(),
            known_abstracts: vec![],
        };
        assert!(backend().extract(input).unwrap().is_empty());
    }

    #[test]
    fn infer_relation_contract() {
        let e1 = super::super::EvidenceRef {
            unit_id: UnitId(1),
            digest: fnv1a64_hex("window b"),
            text: "t1".into(),
        };
        let e2 = super::super::EvidenceRef {
            unit_id: UnitId(2),
            digest: fnv1a64_hex("window a"),
            text: "t2".into(),
        };
        let out = backend()
            .infer_relation(InferRelationInput {
                edge_label: "mentions".into(),
                old_summary: "S".into(),
                old_version: 1,
                evidence: vec![e1, e2],
            })
            .unwrap();

        // Oracle: digests sorted lexicographically, comma-joined.
        let mut digests = vec![fnv1a64_hex("window b"), fnv1a64_hex("window a")];
        digests.sort();
        assert_eq!(out, format!("REL[2]: S ⊕ {}", digests.join(",")));
    }

    #[test]
    fn aggregate_identity_case() {
        let text = "alice loves hiking".to_string();
        let sigma = backend()
            .aggregate_common(AggregateInput {
                items: vec![text.clone(), text.clone(), text.clone()],
                old_sigma: String::new(),
            })
            .unwrap();
        assert_eq!(sigma, "alice loves hiking [+]");
        assert_eq!(sigma_regime(&sigma), Some('+'));
    }

    #[test]
    fn aggregate_intersection_and_regimes() {
        let sigma = backend()
            .aggregate_common(AggregateInput {
                items: vec![
                    "alice loves hiking trails".into(),
                    "alice loves hiking boots".into(),
                ],
                old_sigma: String::new(),
            })
            .unwrap();
        // Intersection tokens sorted: alice hiking loves.
        assert_eq!(sigma, "alice hiking loves [+]");

        let sigma = backend()
            .aggregate_common(AggregateInput {
                items: vec![
                    "alice hates hiking now".into(),
                    "alice hates hiking mud".into(),
                    "alice loves tea".into(),
                ],
                old_sigma: String::new(),
            })
            .unwrap();
        // 1 of 3 positive -> minority -> negative regime.
        assert_eq!(sigma_regime(&sigma), Some('-'));
    }

    #[test]
    fn salient_extracts_minority_items() {
        let delta = backend()
            .extract_salient(SalientInput {
                items: vec![
                    "alice loves hiking".into(),
                    "alice loves trails".into(),
                    "alice hates rain".into(),
                ],
                old_delta: String::new(),
            })
            .unwrap();
        assert_eq!(delta, "alice hates rain");
    }

    #[test]
    fn synergy_sorts_children_by_name() {
        let (sigma, delta) = backend()
            .synergy_tension(SynergyInput {
                parent_name: "root".into(),
                children: vec![
                    super::super::ChildTheory {
                        name: "b".into(),
                        scale: 2,
                        sigma: "sb".into(),
                        delta: "db".into(),
                    },
                    super::super::ChildTheory {
                        name: "a".into(),
                        scale: 2,
                        sigma: "sa".into(),
                        delta: String::new(),
                    },
                ],
                old_sigma: String::new(),
                old_delta: String::new(),
            })
            .unwrap();
        assert_eq!(sigma, "SYN(a=sa; b=sb)");
        assert_eq!(delta, "TENSION(b=db)");
    }

    #[test]
    fn answer_echoes_top_evidence_then_falls_back() {
        let ctx = "## MACRO PROFILE\n- [Hobbies s=2 v1] sigma here\n## RELATION SUMMARIES\n## EVIDENCE\n- [fact 3] the fact text\n- [conc 4] a conclusion\n";
        let a = backend()
            .answer(AnswerInput { question: "q".into(), context_text: ctx.into() })
            .unwrap();
        assert_eq!(a, "the fact text");

        let ctx_no_micro = "## MACRO PROFILE\n- [Hobbies s=2 v1] sigma here\n## RELATION SUMMARIES\n## EVIDENCE\n";
        let a = backend()
            .answer(AnswerInput { question: "q".into(), context_text: ctx_no_micro.into() })
            .unwrap();
        assert_eq!(a, "sigma here");

        let a = backend()
            .answer(AnswerInput { question: "q".into(), context_text: String::new() })
            .unwrap();
        assert_eq!(a, "NO EVIDENCE");
    }

    #[test]
    fn judge_normalized_substring() {
        let b = backend();
        let correct = b
            .judge(JudgeInput {
                question: "q".into(),
                gold: "Fur Elise".into(),
                answer: "It was fur   elise, by Beethoven".into(),
            })
            .unwrap();
        assert_eq!(correct, Judgment::Correct);

        let incorrect = b
            .judge(JudgeInput {
                question: "q".into(),
                gold: "guitar".into(),
                answer: "piano forever".into(),
            })
            .unwrap();
        assert_eq!(incorrect, Judgment::Incorrect);
    }

    #[test]
    fn embed_is_unit_norm_and_deterministic() {
        let b = backend();
        let v1 = b.embed("alice loves hiking").unwrap();
        let v2 = b.embed("alice loves hiking").unwrap();
        assert_eq!(v1, v2);
        let norm: f64 = v1.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);

        let dot: f64 = v1.iter().zip(&v2).map(|(a, b)| a * b).sum();
        assert!((dot - 1.0).abs() < 1e-6);
    }

    #[test]
    fn embed_cosine_symmetric_and_overlap_sensitive() {
        let b = backend();
        let v1 = b.embed("hiking trails in autumn").unwrap();
        let v2 = b.embed("hiking boots for autumn").unwrap();
        let v3 = b.embed("quarterly budget spreadsheet review").unwrap();
        let cos = |a: &[f64], c: &[f64]| a.iter().zip(c).map(|(x, y)| x * y).sum::<f64>();
        assert!((cos(&v1, &v2) - cos(&v2, &v1)).abs() < 1e-12);
        // Token overlap dominates unrelated text.
        assert!(cos(&v1, &v2) > cos(&v1, &v3));
    }
}
