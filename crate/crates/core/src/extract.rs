//! Builds and incrementally extends the three-tier graph from episodic
//! units: proposal generation via the backend, entity resolution, and
//! monotone proposal application.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, ExtractInput, ProposalDraft};
use crate::error::{Error, Result};
use crate::store::{
    normalize_name, EdgeId, GraphEdge, GraphNode, MemoryState, NodeId, Tier, UnitId,
};

/// Cosine above which two same-tier entities merge during resolution.
/// Stricter than retrieval's threshold because merging destroys
/// distinctions.
pub const MERGE_THRESHOLD: f64 = 0.85;

/// One abstract category available at extraction time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaxonomyEntry {
    pub name: String,
    pub description: String,
    /// Optional parent category; lets a taxonomy file define an abstract
    /// hierarchy. The built-in default is flat.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
}

/// The built-in seed taxonomy.
pub fn default_taxonomy() -> Vec<TaxonomyEntry> {
    [
        ("Hobbies & Interests", "Recurring leisure activities and interests"),
        ("Work & Career", "Professional life, jobs, skills, ambitions"),
        ("Health & Fitness", "Exercise, medical matters, physical wellbeing"),
        ("Food & Diet", "Eating habits, preferences, restrictions"),
        ("Social & Family", "Relationships with family and friends"),
        ("Emotions & Wellbeing", "Moods, mental state, coping patterns"),
        ("Travel", "Trips, destinations, travel plans"),
        ("Finance", "Money, budgeting, purchases, savings"),
    ]
    .iter()
    .map(|(name, description)| TaxonomyEntry {
        name: (*name).into(),
        description: (*description).into(),
        parent: None,
    })
    .collect()
}

/// Load a taxonomy from a JSON array of {"name", "description", "parent"?}.
pub fn load_taxonomy(text: &str) -> Result<Vec<TaxonomyEntry>> {
    let entries: Vec<TaxonomyEntry> =
        serde_json::from_str(text).map_err(|e| Error::ParseError(format!("taxonomy: {e}")))?;
    if entries.is_empty() {
        return Err(Error::ParseError("taxonomy file holds no categories".into()));
    }
    Ok(entries)
}

/// A resolved extraction proposal ready for application.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractionProposal {
    pub unit_id: UnitId,
    pub draft: ProposalDraft,
}

/// What applying a proposal changed. Also serves as the replayable effect
/// record for the operation log.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AppliedProposal {
    pub new_nodes: Vec<GraphNode>,
    pub new_edges: Vec<GraphEdge>,
    /// (edge, unit) evidence attachments.
    pub attachments: Vec<(EdgeId, UnitId)>,
    /// (abstract node, unit) pending-count attributions.
    pub attributions: Vec<(NodeId, UnitId)>,
}

impl AppliedProposal {
    pub fn nodes_created(&self) -> usize {
        self.new_nodes.len()
    }
    pub fn edges_created(&self) -> usize {
        self.new_edges.len()
    }
    pub fn pendings_incremented(&self) -> usize {
        self.attributions.len()
    }
    pub fn is_empty(&self) -> bool {
        self.new_nodes.is_empty()
            && self.new_edges.is_empty()
            && self.attachments.is_empty()
            && self.attributions.is_empty()
    }
}

/// Ask the backend for an extraction proposal over one unit.
pub fn propose_extraction(
    state: &MemoryState,
    unit_id: UnitId,
    backend: &dyn Backend,
    taxonomy: &[TaxonomyEntry],
) -> Result<ExtractionProposal> {
    let unit = state.unit(unit_id)?;
    let draft = backend.extract(ExtractInput {
        unit_id,
        session_id: unit.session_id.clone(),
        text: unit.rendered_text(),
        known_abstracts: taxonomy.iter().map(|t| t.name.clone()).collect(),
    })?;
    for (_, _, _, uid) in &draft.event_relations {
        if *uid != unit_id {
            return Err(Error::SchemaViolation(format!(
                "event relation references unit {uid}, expected {unit_id}"
            )));
        }
    }
    Ok(ExtractionProposal { unit_id, draft })
}

/// Resolve a name to an existing node in a tier: canonical/alias match
/// after normalization first, then embedding merge above
/// [`MERGE_THRESHOLD`] when an embedding for the name is supplied.
pub fn resolve_entity(
    state: &MemoryState,
    tier: Tier,
    name: &str,
    name_embedding: Option<&[f64]>,
) -> Option<NodeId> {
    if let Some(id) = state.node_by_name(tier, name) {
        return Some(id);
    }
    let query = name_embedding?;
    state
        .nodes()
        .filter(|n| n.tier == tier)
        .filter_map(|n| {
            let emb = n.embedding.as_ref()?;
            if emb.len() != query.len() {
                return None;
            }
            let cos: f64 = emb.iter().zip(query).map(|(a, b)| a * b).sum();
            (cos >= MERGE_THRESHOLD).then_some((n.id, cos))
        })
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0)))
        .map(|(id, _)| id)
}

/// Apply a proposal: create unresolved entities at their stated tiers, add
/// deduplicated classification edges, upsert event edges with evidence
/// attached, and attribute the unit to affected abstract ancestors.
/// Extraction is monotone: nothing is ever deleted.
pub fn apply_proposal(
    state: &mut MemoryState,
    proposal: &ExtractionProposal,
    backend: &dyn Backend,
    embeddings_enabled: bool,
) -> Result<AppliedProposal> {
    let mut applied = AppliedProposal::default();
    let draft = &proposal.draft;

    // Tier assignment for every name mentioned anywhere in the proposal.
    let mut tiers: BTreeMap<String, Tier> = BTreeMap::new();
    let mut descriptions: BTreeMap<String, String> = BTreeMap::new();
    for (name, desc) in &draft.instance_entities {
        tiers.insert(name.clone(), Tier::Instance);
        descriptions.insert(name.clone(), desc.clone());
    }
    for (inst, general) in &draft.general_links {
        tiers.entry(inst.clone()).or_insert(Tier::Instance);
        tiers.entry(general.clone()).or_insert(Tier::General);
    }
    for (general, abstract_name) in &draft.abstract_links {
        tiers.entry(general.clone()).or_insert(Tier::General);
        tiers.entry(abstract_name.clone()).or_insert(Tier::Abstract);
    }
    for (src, dst, _, _) in &draft.event_relations {
        for name in [src, dst] {
            if !tiers.contains_key(name) && state.node_by_name(Tier::Instance, name).is_none() {
                return Err(Error::ParseError(format!(
                    "event relation references {name:?}, absent from proposal and graph"
                )));
            }
        }
    }

    // Resolve or create every named entity.
    let mut resolved: BTreeMap<String, NodeId> = BTreeMap::new();
    for (name, tier) in &tiers {
        let embedding = if embeddings_enabled {
            Some(backend.embed(name)?)
        } else {
            None
        };
        let found = resolve_entity(state, *tier, name, embedding.as_deref());
        let id = match found {
            Some(id) => id,
            None => {
                let id = NodeId(state.mint_id());
                let node = GraphNode {
                    id,
                    tier: *tier,
                    canonical_name: name.clone(),
                    aliases: vec![],
                    description: descriptions.get(name).cloned().unwrap_or_default(),
                    embedding,
                    theory: None,
                    pending_count: 0,
                    dirty: false,
                    attributed_units: BTreeSet::new(),
                };
                state.add_node(node.clone())?;
                applied.new_nodes.push(node);
                id
            }
        };
        resolved.insert(name.clone(), id);
    }
    let lookup = |state: &MemoryState, name: &str| -> Result<NodeId> {
        resolved
            .get(name)
            .copied()
            .or_else(|| state.node_by_name(Tier::Instance, name))
            .ok_or_else(|| Error::ParseError(format!("unresolved entity {name:?}")))
    };

    // Classification backbone, deduplicated and tier-checked by the store.
    for (src_name, dst_name) in draft.general_links.iter().chain(draft.abstract_links.iter()) {
        let src = lookup(state, src_name)?;
        let dst = lookup(state, dst_name)?;
        let before = state.edge_count();
        let edge_id = state.add_classification_edge(src, dst)?;
        if state.edge_count() > before {
            applied.new_edges.push(state.edge(edge_id)?.clone());
        }
    }

    // Event relations: reuse by (src, dst, normalized label), attach
    // evidence, and attribute the unit to abstract ancestors of both
    // endpoints.
    for (src_name, dst_name, label, unit_id) in &draft.event_relations {
        let src = lookup(state, src_name)?;
        let dst = lookup(state, dst_name)?;
        let before = state.edge_count();
        let edge_id = state.add_event_edge(src, dst, label)?;
        if state.edge_count() > before {
            applied.new_edges.push(state.edge(edge_id)?.clone());
        }
        let pending_before = state.edge(edge_id)?.pending_evidence.len();
        let pending_after = state.attach_evidence_to_edge(edge_id, *unit_id)?;
        if pending_after > pending_before {
            applied.attachments.push((edge_id, *unit_id));
        }
        let mut ancestors = state.abstract_ancestors(src);
        ancestors.extend(state.abstract_ancestors(dst));
        for node in [src, dst] {
            if state.node(node)?.tier == Tier::Abstract {
                ancestors.insert(node);
            }
        }
        for ancestor in ancestors {
            if state.attribute_unit(ancestor, *unit_id)? {
                applied.attributions.push((ancestor, *unit_id));
            }
        }
    }
    Ok(applied)
}

/// Re-apply a logged effect record without invoking the backend; used by
/// recovery replay.
pub fn replay_applied(state: &mut MemoryState, applied: &AppliedProposal) -> Result<()> {
    let mut max_id = 0u64;
    for node in &applied.new_nodes {
        max_id = max_id.max(node.id.0);
        state.add_node(node.clone())?;
    }
    for edge in &applied.new_edges {
        max_id = max_id.max(edge.id.0);
        if state.edge(edge.id).is_ok() {
            continue;
        }
        match edge.kind {
            crate::store::EdgeKind::Classification => {
                state.add_classification_edge(edge.src, edge.dst)?;
            }
            crate::store::EdgeKind::Event => {
                state.add_event_edge(edge.src, edge.dst, &edge.label)?;
            }
        }
    }
    for (edge_id, unit_id) in &applied.attachments {
        state.attach_evidence_to_edge(*edge_id, *unit_id)?;
    }
    for (node_id, unit_id) in &applied.attributions {
        state.attribute_unit(*node_id, *unit_id)?;
    }
    state.observe_replayed(0, max_id);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;
    use crate::hash::fnv1a64_hex;
    use crate::store::{EdgeKind, EpisodicUnit};

    fn seed_unit(state: &mut MemoryState, text: &str, session: &str) -> UnitId {
        let id = UnitId(state.mint_id());
        let ts = state.tick();
        let unit = EpisodicUnit {
            id,
            session_id: session.into(),
            turn_span: (0, 1),
            speaker_set: vec!["alice".into()],
            lambda_fact: text.into(),
            conclusions_base: vec![],
            conclusions_rel: vec![],
            created_at: ts,
            source_digest: fnv1a64_hex(text),
        };
        state.add_episodic_unit(unit).unwrap()
    }

    #[test]
    fn fresh_proposal_on_empty_graph_matches_hand_count() {
        let backend = MockBackend::default();
        let mut state = MemoryState::new();
        let unit = seed_unit(&mut state, "alice loves hiking today", "s1");
        let proposal =
            propose_extraction(&state, unit, &backend, &default_taxonomy()).unwrap();
        let applied = apply_proposal(&mut state, &proposal, &backend, true).unwrap();

        // Hand count: user:self + hiking@s1 + hiking + Hobbies & Interests
        // nodes; 2 classification edges; 1 event edge with pending 1.
        assert_eq!(applied.nodes_created(), 4);
        assert_eq!(applied.edges_created(), 3);
        let event_edges: Vec<_> =
            state.edges().filter(|e| e.kind == EdgeKind::Event).collect();
        assert_eq!(event_edges.len(), 1);
        assert_eq!(event_edges[0].pending_evidence, vec![unit]);
        let cls_count = state.edges().filter(|e| e.kind == EdgeKind::Classification).count();
        assert_eq!(cls_count, 2);

        // The abstract ancestor got one pending attribution.
        let abs = state.node_by_name(Tier::Abstract, "Hobbies & Interests").unwrap();
        assert_eq!(state.node(abs).unwrap().pending_count, 1);
        state.check_invariants().unwrap();
    }

    #[test]
    fn reapplying_same_proposal_is_idempotent() {
        let backend = MockBackend::default();
        let mut state = MemoryState::new();
        let unit = seed_unit(&mut state, "alice loves hiking today", "s1");
        let proposal =
            propose_extraction(&state, unit, &backend, &default_taxonomy()).unwrap();
        apply_proposal(&mut state, &proposal, &backend, true).unwrap();
        let nodes_before = state.node_count();
        let edges_before = state.edge_count();
        let abs = state.node_by_name(Tier::Abstract, "Hobbies & Interests").unwrap();
        let pending_before = state.node(abs).unwrap().pending_count;

        let again = apply_proposal(&mut state, &proposal, &backend, true).unwrap();
        assert!(again.is_empty());
        assert_eq!(state.node_count(), nodes_before);
        assert_eq!(state.edge_count(), edges_before);
        assert_eq!(state.node(abs).unwrap().pending_count, pending_before);
    }

    #[test]
    fn unit_without_lexicon_hits_yields_empty_proposal() {
        let backend = MockBackend::default();
        let mut state = MemoryState::new();
        let unit = seed_unit(&mut state, "completely unrelated text", "s1");
        let proposal =
            propose_extraction(&state, unit, &backend, &default_taxonomy()).unwrap();
        assert!(proposal.draft.is_empty());
        let applied = apply_proposal(&mut state, &proposal, &backend, true).unwrap();
        assert!(applied.is_empty());
    }

    #[test]
    fn proposal_is_deterministic() {
        let backend = MockBackend::default();
        let mut state = MemoryState::new();
        let unit = seed_unit(&mut state, "alice loves hiking and pasta", "s1");
        let p1 = propose_extraction(&state, unit, &backend, &default_taxonomy()).unwrap();
        let p2 = propose_extraction(&state, unit, &backend, &default_taxonomy()).unwrap();
        assert_eq!(p1.draft, p2.draft);
    }

    #[test]
    fn resolution_normalizes_names() {
        let backend = MockBackend::default();
        let mut state = MemoryState::new();
        let id = NodeId(state.mint_id());
        state
            .add_node(GraphNode {
                id,
                tier: Tier::General,
                canonical_name: "trail running".into(),
                aliases: vec!["jogging trails".into()],
                description: String::new(),
                embedding: Some(backend.embed("trail running").unwrap()),
                theory: None,
                pending_count: 0,
                dirty: false,
                attributed_units: BTreeSet::new(),
            })
            .unwrap();

        assert_eq!(resolve_entity(&state, Tier::General, "  Trail   Running ", None), Some(id));
        assert_eq!(resolve_entity(&state, Tier::General, "Jogging Trails", None), Some(id));
        // Same name, different tier: no match.
        assert_eq!(resolve_entity(&state, Tier::Instance, "trail running", None), None);
        // Empty graph tier.
        assert_eq!(resolve_entity(&state, Tier::Abstract, "anything", None), None);
        // Embedding merge: identical text embeds at cosine 1 >= 0.85.
        let emb = backend.embed("trail running!").unwrap();
        assert_eq!(
            resolve_entity(&state, Tier::General, "unmatched-name", Some(&emb)),
            Some(id)
        );
    }

    #[test]
    fn graph_stays_tier_consistent_under_repeated_application() {
        let backend = MockBackend::default();
        let mut state = MemoryState::new();
        for (i, text) in [
            "alice loves hiking",
            "bob likes pasta and sushi",
            "alice prefers yoga over gym",
            "they always discuss budget and savings",
        ]
        .iter()
        .enumerate()
        {
            let unit = seed_unit(&mut state, text, &format!("s{i}"));
            let proposal =
                propose_extraction(&state, unit, &backend, &default_taxonomy()).unwrap();
            apply_proposal(&mut state, &proposal, &backend, true).unwrap();
        }
        state.check_invariants().unwrap();
        // Every event edge's pending evidence resolves to stored units.
        for edge in state.edges() {
            for unit in &edge.pending_evidence {
                state.unit(*unit).unwrap();
            }
        }
    }

    #[test]
    fn replay_reproduces_applied_effects() {
        let backend = MockBackend::default();
        let mut live = MemoryState::new();
        let unit_text = "alice loves hiking today";
        let unit = seed_unit(&mut live, unit_text, "s1");
        let proposal = propose_extraction(&live, unit, &backend, &default_taxonomy()).unwrap();
        let applied = apply_proposal(&mut live, &proposal, &backend, true).unwrap();

        let mut replayed = MemoryState::new();
        seed_unit(&mut replayed, unit_text, "s1");
        replay_applied(&mut replayed, &applied).unwrap();
        assert_eq!(live.snapshot_state(), replayed.snapshot_state());
    }

    #[test]
    fn taxonomy_file_round_trip() {
        let text = r#"[
            {"name": "Hobbies & Interests", "description": "fun"},
            {"name": "User Profile", "description": "root"},
            {"name": "Work & Career", "description": "jobs", "parent": "User Profile"}
        ]"#;
        let taxonomy = load_taxonomy(text).unwrap();
        assert_eq!(taxonomy.len(), 3);
        assert_eq!(taxonomy[2].parent.as_deref(), Some("User Profile"));
        assert!(load_taxonomy("[]").is_err());
        assert!(load_taxonomy("{bad").is_err());
    }
}
