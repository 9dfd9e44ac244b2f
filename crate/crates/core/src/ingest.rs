//! Initial coarse-graining: raw dialogue streams become episodic units in
//! two stages, segmentation then synthesis.
//!
//! Windows partition a session's turns exactly: concatenating window texts
//! in order reproduces the session's rendered transcript byte for byte.

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, SynthesizeInput, TurnRef};
use crate::error::{Error, Result};
use crate::hash::fnv1a64_hex;
use crate::store::{
    ConclusionItem, ConclusionId, EpisodicUnit, MemoryState, RelevanceClass, UnitId,
};

// ---------------------------------------------------------------------------
// Raw input types
// ---------------------------------------------------------------------------

/// One dialogue turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTurn {
    pub speaker: String,
    pub text: String,
    pub turn_index: u32,
}

/// An ordered dialogue session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSession {
    pub session_id: String,
    pub turns: Vec<RawTurn>,
    pub session_timestamp: Option<String>,
}

impl RawSession {
    pub fn validate(&self) -> Result<()> {
        if self.turns.is_empty() {
            return Err(Error::EmptySession(self.session_id.clone()));
        }
        for (i, turn) in self.turns.iter().enumerate() {
            if turn.turn_index != i as u32 {
                return Err(Error::ParseError(format!(
                    "session {}: turn_index {} at position {i}, expected strictly increasing from 0",
                    self.session_id, turn.turn_index
                )));
            }
            if turn.text.trim().is_empty() {
                return Err(Error::ParseError(format!(
                    "session {}: empty utterance at turn {}",
                    self.session_id, turn.turn_index
                )));
            }
        }
        Ok(())
    }
}

/// A contiguous slice of a session rendered as "speaker: utterance" lines.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodicWindow {
    pub session_id: String,
    pub turn_span: (u32, u32),
    pub text: String,
    pub turns: Vec<RawTurn>,
}

fn render_turn(turn: &RawTurn) -> String {
    format!("{}: {}\n", turn.speaker, turn.text)
}

/// Full rendered transcript of a session; windows concatenate back to this.
pub fn render_transcript(session: &RawSession) -> String {
    session.turns.iter().map(render_turn).collect()
}

// ---------------------------------------------------------------------------
// JSON Lines wire format
// ---------------------------------------------------------------------------

/// One transcript line: {"session_id", "turn_index", "speaker", "text",
/// "timestamp"?}.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub session_id: String,
    pub turn_index: u32,
    pub speaker: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

/// Parse a JSON Lines transcript into sessions, grouped by session id in
/// order of first appearance.
pub fn parse_transcript(jsonl: &str) -> Result<Vec<RawSession>> {
    let mut order: Vec<String> = Vec::new();
    let mut sessions: std::collections::BTreeMap<String, RawSession> = Default::default();
    for (lineno, line) in jsonl.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TranscriptLine = serde_json::from_str(line).map_err(|e| {
            Error::ParseError(format!("transcript line {}: {e}", lineno + 1))
        })?;
        let entry = sessions.entry(parsed.session_id.clone()).or_insert_with(|| {
            order.push(parsed.session_id.clone());
            RawSession {
                session_id: parsed.session_id.clone(),
                turns: Vec::new(),
                session_timestamp: parsed.timestamp.clone(),
            }
        });
        entry.turns.push(RawTurn {
            speaker: parsed.speaker,
            text: parsed.text,
            turn_index: parsed.turn_index,
        });
    }
    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let session = sessions.remove(&id).expect("grouped session");
        session.validate()?;
        out.push(session);
    }
    if out.is_empty() {
        return Err(Error::EmptySession("transcript holds no turns".into()));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Segmentation
// ---------------------------------------------------------------------------

/// Partition a session's turns into contiguous windows of at most
/// `max_window_turns` turns. A boundary that would split two consecutive
/// turns by the same speaker moves back one turn when the window can spare
/// it (greedy adjustment of at most 1 turn).
pub fn segment_dialogue(
    session: &RawSession,
    max_window_turns: usize,
) -> Result<Vec<EpisodicWindow>> {
    session.validate()?;
    let max = max_window_turns.max(1);
    let turns = &session.turns;
    let mut windows = Vec::new();
    let mut start = 0usize;
    while start < turns.len() {
        let mut end = (start + max).min(turns.len()); // exclusive
        if end < turns.len() && end - start >= 2 && turns[end - 1].speaker == turns[end].speaker {
            end -= 1;
        }
        let slice = &turns[start..end];
        windows.push(EpisodicWindow {
            session_id: session.session_id.clone(),
            turn_span: (slice[0].turn_index, slice[slice.len() - 1].turn_index),
            text: slice.iter().map(render_turn).collect(),
            turns: slice.to_vec(),
        });
        start = end;
    }
    Ok(windows)
}

// ---------------------------------------------------------------------------
// Synthesis
// ---------------------------------------------------------------------------

/// Map one window to an episodic unit via the backend. Ids and the logical
/// timestamp come from the store's allocator so replay stays deterministic.
pub fn synthesize_unit(
    window: &EpisodicWindow,
    backend: &dyn Backend,
    state: &mut MemoryState,
) -> Result<EpisodicUnit> {
    let draft = backend.synthesize(SynthesizeInput {
        session_id: window.session_id.clone(),
        turn_span: window.turn_span,
        window_text: window.text.clone(),
        turns: window
            .turns
            .iter()
            .map(|t| TurnRef { speaker: t.speaker.clone(), text: t.text.clone() })
            .collect(),
    })?;
    if draft.lambda_fact.trim().is_empty() {
        return Err(Error::SchemaViolation("backend returned empty lambda_fact".into()));
    }
    build_unit(window, draft, state)
}

/// Assemble an [`EpisodicUnit`] from a synthesis draft, minting ids and
/// wiring conclusion back-references.
pub fn build_unit(
    window: &EpisodicWindow,
    draft: crate::backend::SynthesisDraft,
    state: &mut MemoryState,
) -> Result<EpisodicUnit> {
    let unit_id = UnitId(state.mint_id());
    let mut mk = |text: String, class: RelevanceClass| ConclusionItem {
        id: ConclusionId(state.mint_id()),
        text,
        relevance_class: class,
        evidence_unit: unit_id,
    };
    let conclusions_base: Vec<ConclusionItem> = draft
        .base_conclusions
        .into_iter()
        .filter(|t| !t.trim().is_empty())
        .map(|t| mk(t, RelevanceClass::Base))
        .collect();
    let conclusions_rel: Vec<ConclusionItem> = draft
        .rel_conclusions
        .into_iter()
        .filter(|t| !t.trim().is_empty())
        .map(|t| mk(t, RelevanceClass::Rel))
        .collect();
    let mut speakers: Vec<String> = Vec::new();
    for turn in &window.turns {
        if !speakers.contains(&turn.speaker) {
            speakers.push(turn.speaker.clone());
        }
    }
    Ok(EpisodicUnit {
        id: unit_id,
        session_id: window.session_id.clone(),
        turn_span: window.turn_span,
        speaker_set: speakers,
        lambda_fact: draft.lambda_fact,
        conclusions_base,
        conclusions_rel,
        created_at: state.tick(),
        source_digest: fnv1a64_hex(&window.text),
    })
}

/// The two-stage composition: segment, then synthesize each window in
/// order. Windows whose digest is already in the store are skipped.
pub fn coarse_grain(
    session: &RawSession,
    max_window_turns: usize,
    backend: &dyn Backend,
    state: &mut MemoryState,
) -> Result<Vec<EpisodicUnit>> {
    let windows = segment_dialogue(session, max_window_turns)?;
    let mut units = Vec::new();
    for window in &windows {
        if state.has_digest(&fnv1a64_hex(&window.text)) {
            continue;
        }
        units.push(synthesize_unit(window, backend, state)?);
    }
    Ok(units)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;

    fn session(n: u32) -> RawSession {
        let turns = (0..n)
            .map(|i| RawTurn {
                speaker: if i % 2 == 0 { "alice".into() } else { "bob".into() },
                text: format!("turn number {i}"),
                turn_index: i,
            })
            .collect();
        RawSession { session_id: "s1".into(), turns, session_timestamp: None }
    }

    /// Oracle: windows are a contiguous, complete, in-order partition with
    /// bounded size.
    fn assert_partition(session: &RawSession, windows: &[EpisodicWindow], max: usize) {
        let mut expected = 0u32;
        for w in windows {
            assert!(w.turns.len() <= max);
            assert!(!w.turns.is_empty());
            assert_eq!(w.turn_span.0, expected);
            for t in &w.turns {
                assert_eq!(t.turn_index, expected);
                expected += 1;
            }
            assert_eq!(w.turn_span.1, expected - 1);
        }
        assert_eq!(expected as usize, session.turns.len());
        let concatenated: String = windows.iter().map(|w| w.text.as_str()).collect();
        assert_eq!(concatenated, render_transcript(session));
    }

    #[test]
    fn twenty_five_turns_partition_into_bounded_windows() {
        let s = session(25);
        let windows = segment_dialogue(&s, 10).unwrap();
        assert_eq!(windows.len(), 3);
        assert_partition(&s, &windows, 10);
    }

    #[test]
    fn single_turn_session_is_one_window() {
        let s = session(1);
        let windows = segment_dialogue(&s, 10).unwrap();
        assert_eq!(windows.len(), 1);
        assert_partition(&s, &windows, 10);
    }

    #[test]
    fn exact_fit_is_the_identity_window() {
        let s = session(10);
        let windows = segment_dialogue(&s, 10).unwrap();
        assert_eq!(windows.len(), 1);
        assert_eq!(windows[0].text, render_transcript(&s));
    }

    #[test]
    fn boundary_avoids_splitting_same_speaker_pair() {
        // Turns 4 and 5 share a speaker; a max-5 boundary would split them,
        // so the first window shrinks to 4 turns.
        let mut s = session(8);
        s.turns[4].speaker = "alice".into();
        s.turns[5].speaker = "alice".into();
        let windows = segment_dialogue(&s, 5).unwrap();
        assert_eq!(windows[0].turns.len(), 4);
        assert_partition(&s, &windows, 5);
    }

    #[test]
    fn empty_session_rejected() {
        let s = RawSession { session_id: "s0".into(), turns: vec![], session_timestamp: None };
        assert!(matches!(segment_dialogue(&s, 10), Err(Error::EmptySession(_))));
    }

    #[test]
    fn synthesized_unit_carries_provenance() {
        let backend = MockBackend::default();
        let mut state = MemoryState::new();
        let s = session(4);
        let windows = segment_dialogue(&s, 10).unwrap();
        let unit = synthesize_unit(&windows[0], &backend, &mut state).unwrap();
        assert!(!unit.lambda_fact.is_empty());
        assert_eq!(unit.source_digest, fnv1a64_hex(&windows[0].text));
        for c in unit.conclusions() {
            assert_eq!(c.evidence_unit, unit.id);
        }
        assert_eq!(unit.speaker_set, vec!["alice".to_string(), "bob".to_string()]);
    }

    #[test]
    fn synthesis_matches_mock_contract() {
        let backend = MockBackend::default();
        let mut state = MemoryState::new();
        let s = RawSession {
            session_id: "s9".into(),
            turns: vec![
                RawTurn { speaker: "alice".into(), text: "I love hiking".into(), turn_index: 0 },
                RawTurn { speaker: "bob".into(), text: "ok".into(), turn_index: 1 },
            ],
            session_timestamp: None,
        };
        let windows = segment_dialogue(&s, 10).unwrap();
        let unit = synthesize_unit(&windows[0], &backend, &mut state).unwrap();

        // Oracle: fnv8 of the rendered window computed independently.
        let window_text = "alice: I love hiking\nbob: ok\n";
        assert_eq!(unit.lambda_fact, format!("FACT({})", fnv1a64_hex(window_text)));
        assert_eq!(unit.conclusions_base.len(), 2); // one per distinct speaker
        assert_eq!(unit.conclusions_rel.len(), 1); // one marker-bearing turn
        assert_eq!(unit.conclusions_rel[0].text, "alice: I love hiking");
    }

    #[test]
    fn rerun_synthesis_is_identical_except_ids_and_timestamp() {
        let backend = MockBackend::default();
        let mut state = MemoryState::new();
        let s = session(6);
        let windows = segment_dialogue(&s, 10).unwrap();
        let u1 = synthesize_unit(&windows[0], &backend, &mut state).unwrap();
        let u2 = synthesize_unit(&windows[0], &backend, &mut state).unwrap();
        assert_eq!(u1.lambda_fact, u2.lambda_fact);
        assert_eq!(u1.source_digest, u2.source_digest);
        assert_eq!(
            u1.conclusions().map(|c| &c.text).collect::<Vec<_>>(),
            u2.conclusions().map(|c| &c.text).collect::<Vec<_>>()
        );
        assert_ne!(u1.id, u2.id);
    }

    #[test]
    fn coarse_grain_composes_and_dedups() {
        let backend = MockBackend::default();
        let mut state = MemoryState::new();
        let s = session(25);

        let units = coarse_grain(&s, 10, &backend, &mut state).unwrap();
        assert_eq!(units.len(), 3);
        let spans: Vec<_> = units.iter().map(|u| u.turn_span).collect();
        assert!(spans.windows(2).all(|w| w[0].1 < w[1].0));

        // Commit then re-run: everything is a duplicate window.
        for u in units {
            state.add_episodic_unit(u).unwrap();
        }
        let again = coarse_grain(&s, 10, &backend, &mut state).unwrap();
        assert!(again.is_empty());
    }

    #[test]
    fn transcript_jsonl_round_trip() {
        let jsonl = concat!(
            "{\"session_id\":\"s1\",\"turn_index\":0,\"speaker\":\"alice\",\"text\":\"hi\"}\n",
            "{\"session_id\":\"s1\",\"turn_index\":1,\"speaker\":\"bob\",\"text\":\"hello\",\"timestamp\":\"t\"}\n",
            "{\"session_id\":\"s2\",\"turn_index\":0,\"speaker\":\"alice\",\"text\":\"next day\"}\n",
        );
        let sessions = parse_transcript(jsonl).unwrap();
        assert_eq!(sessions.len(), 2);
        assert_eq!(sessions[0].session_id, "s1");
        assert_eq!(sessions[0].turns.len(), 2);
        assert_eq!(sessions[1].turns[0].text, "next day");

        let bad = "{\"session_id\":\"s1\",\"turn_index\":1,\"speaker\":\"a\",\"text\":\"skipped zero\"}";
        assert!(parse_transcript(bad).is_err());
    }
}
