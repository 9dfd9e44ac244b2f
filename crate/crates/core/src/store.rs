//! Unified memory state: episodic unit storage plus the three-tier knowledge
//! graph with theory annotations, pending-evidence counters, and dirty flags.
//!
//! The state is a single-writer structure. All mutating methods take `&mut
//! self`; readers operate on `&self` views. Iteration everywhere is over
//! `BTreeMap`s so serialization and replay are deterministic.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::fnv1a64_hex;

// ---------------------------------------------------------------------------
// Identifiers
// ---------------------------------------------------------------------------

macro_rules! id_newtype {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u64);

        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_newtype!(
    /// Identifier of an episodic unit.
    UnitId
);
id_newtype!(
    /// Identifier of a graph node.
    NodeId
);
id_newtype!(
    /// Identifier of a graph edge.
    EdgeId
);
id_newtype!(
    /// Identifier of a single conclusion item.
    ConclusionId
);

// ---------------------------------------------------------------------------
// Episodic units
// ---------------------------------------------------------------------------

/// Whether a conclusion is an objective event statement or a high-relevance
/// preference signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceClass {
    Base,
    Rel,
}

/// One user-centric conclusion distilled from a dialogue window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConclusionItem {
    pub id: ConclusionId,
    pub text: String,
    pub relevance_class: RelevanceClass,
    /// Back-reference to the unit that evidences this conclusion.
    pub evidence_unit: UnitId,
}

/// The microscopic memory record distilled from one dialogue window: an
/// objective core fact plus two disjoint conclusion subsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodicUnit {
    pub id: UnitId,
    pub session_id: String,
    /// Inclusive turn range this unit covers.
    pub turn_span: (u32, u32),
    pub speaker_set: Vec<String>,
    pub lambda_fact: String,
    pub conclusions_base: Vec<ConclusionItem>,
    pub conclusions_rel: Vec<ConclusionItem>,
    /// Logical timestamp assigned at insertion.
    pub created_at: u64,
    /// 16-hex-char content hash of the raw window text; dedup key.
    pub source_digest: String,
}

impl EpisodicUnit {
    /// All conclusions, base first.
    pub fn conclusions(&self) -> impl Iterator<Item = &ConclusionItem> {
        self.conclusions_base.iter().chain(self.conclusions_rel.iter())
    }

    /// Flat text rendering used as evolution-operator input: the core fact
    /// followed by every conclusion.
    pub fn rendered_text(&self) -> String {
        let mut parts = vec![self.lambda_fact.clone()];
        parts.extend(self.conclusions().map(|c| c.text.clone()));
        parts.join("; ")
    }

    fn validate(&self) -> Result<()> {
        if self.lambda_fact.trim().is_empty() {
            return Err(Error::InvalidUnit("lambda_fact is empty".into()));
        }
        if self.turn_span.0 > self.turn_span.1 {
            return Err(Error::InvalidUnit(format!(
                "turn_span start {} > end {}",
                self.turn_span.0, self.turn_span.1
            )));
        }
        if self.source_digest.len() != 16
            || !self.source_digest.chars().all(|c| c.is_ascii_hexdigit())
        {
            return Err(Error::InvalidUnit(format!(
                "source_digest {:?} is not a 16-hex-char hash",
                self.source_digest
            )));
        }
        let mut seen = BTreeSet::new();
        for c in self.conclusions() {
            if c.text.trim().is_empty() {
                return Err(Error::InvalidUnit(format!("conclusion {} has empty text", c.id)));
            }
            if !seen.insert(c.id) {
                return Err(Error::InvalidUnit(format!(
                    "conclusion id {} appears in both subsets",
                    c.id
                )));
            }
        }
        for c in &self.conclusions_base {
            if c.relevance_class != RelevanceClass::Base {
                return Err(Error::InvalidUnit("base subset holds a rel-classed item".into()));
            }
        }
        for c in &self.conclusions_rel {
            if c.relevance_class != RelevanceClass::Rel {
                return Err(Error::InvalidUnit("rel subset holds a base-classed item".into()));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Graph nodes and edges
// ---------------------------------------------------------------------------

/// Node tier in the multi-scale lattice. Ordering is the classification
/// direction: instance < general < abstract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Instance,
    General,
    Abstract,
}

impl Tier {
    pub fn as_str(&self) -> &'static str {
        match self {
            Tier::Instance => "instance",
            Tier::General => "general",
            Tier::Abstract => "abstract",
        }
    }
}

impl std::fmt::Display for Tier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Versioned mesoscopic theory attached to an event edge: a rolling summary
/// of the relation with the evidence it has integrated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeTheory {
    pub version: u64,
    pub summary: String,
    pub evidence_ids: Vec<UnitId>,
    pub updated_at: u64,
}

/// Versioned macroscopic theory attached to an abstract node: an order
/// parameter (sigma) and a correction term (delta) at scale >= 2.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeTheory {
    pub version: u64,
    pub scale: u32,
    pub sigma: String,
    pub delta: String,
    /// Content hashes of every input this theory has consumed, cumulative
    /// across versions. Used to exclude already-synthesized inputs from the
    /// next projection window.
    pub input_digests: Vec<String>,
    pub updated_at: u64,
}

/// A node of the knowledge graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: NodeId,
    pub tier: Tier,
    pub canonical_name: String,
    pub aliases: Vec<String>,
    pub description: String,
    pub embedding: Option<Vec<f64>>,
    /// Only abstract-tier nodes ever carry a theory.
    pub theory: Option<NodeTheory>,
    /// Count of fresh evidence units attributed to this node and not yet
    /// consumed by a synthesis pass.
    pub pending_count: u64,
    pub dirty: bool,
    /// Every unit ever counted toward `pending_count`, so re-attachment of a
    /// known unit never double-counts.
    #[serde(default)]
    pub attributed_units: BTreeSet<UnitId>,
}

/// Edge kind: static classification backbone vs dynamic event relations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Classification,
    Event,
}

/// An edge of the knowledge graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub id: EdgeId,
    pub kind: EdgeKind,
    pub src: NodeId,
    pub dst: NodeId,
    pub label: String,
    /// Only event edges ever carry a theory.
    pub theory: Option<EdgeTheory>,
    /// Evidence attached but not yet consumed by an edge-theory update.
    pub pending_evidence: Vec<UnitId>,
}

/// Read-only neighborhood view returned by [`MemoryState::get_neighborhood`].
#[derive(Debug, Clone, Serialize)]
pub struct Neighborhood {
    pub center: NodeId,
    pub radius: u32,
    pub nodes: Vec<NodeId>,
    pub edges: Vec<EdgeId>,
}

/// Normalize an entity name: case-fold, trim, collapse internal whitespace.
pub fn normalize_name(name: &str) -> String {
    name.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

// ---------------------------------------------------------------------------
// Memory state
// ---------------------------------------------------------------------------

/// The complete logical memory state of one profile: episodic store plus
/// knowledge graph, with the id allocator and logical clock that make replay
/// deterministic.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
pub struct MemoryState {
    /// Logical clock; advances once per unit insertion or theory commit.
    clock: u64,
    next_id: u64,
    units: BTreeMap<UnitId, EpisodicUnit>,
    nodes: BTreeMap<NodeId, GraphNode>,
    edges: BTreeMap<EdgeId, GraphEdge>,
    /// source_digest -> unit. Derived; rebuilt on restore.
    #[serde(skip)]
    digest_index: BTreeMap<String, UnitId>,
    /// "tier/normalized-name" -> node. Derived; rebuilt on restore.
    #[serde(skip)]
    name_index: BTreeMap<String, NodeId>,
}

fn name_key(tier: Tier, normalized: &str) -> String {
    format!("{}/{}", tier.as_str(), normalized)
}

impl MemoryState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Allocate a fresh opaque id.
    pub fn mint_id(&mut self) -> u64 {
        self.next_id += 1;
        self.next_id
    }

    /// Advance the logical clock and return the new timestamp.
    pub fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    /// Raise the clock and id allocator at least to the given values. Used
    /// by log replay so that replayed records land on identical timestamps.
    pub fn observe_replayed(&mut self, clock: u64, max_id: u64) {
        self.clock = self.clock.max(clock);
        self.next_id = self.next_id.max(max_id);
    }

    // -- episodic units -----------------------------------------------------

    /// Insert a validated unit. Fails on digest duplicates or invariant
    /// violations; on success the store grows by exactly one unit.
    pub fn add_episodic_unit(&mut self, unit: EpisodicUnit) -> Result<UnitId> {
        unit.validate()?;
        if self.digest_index.contains_key(&unit.source_digest) {
            return Err(Error::DuplicateUnit(unit.source_digest));
        }
        let id = unit.id;
        if self.units.contains_key(&id) {
            return Err(Error::InvalidUnit(format!("unit id {id} already present")));
        }
        self.digest_index.insert(unit.source_digest.clone(), id);
        self.units.insert(id, unit);
        Ok(id)
    }

    pub fn unit(&self, id: UnitId) -> Result<&EpisodicUnit> {
        self.units.get(&id).ok_or(Error::UnknownUnit(id.0))
    }

    pub fn has_digest(&self, digest: &str) -> bool {
        self.digest_index.contains_key(digest)
    }

    pub fn unit_count(&self) -> usize {
        self.units.len()
    }

    pub fn units(&self) -> impl Iterator<Item = &EpisodicUnit> {
        self.units.values()
    }

    /// Units of one session ordered by turn span.
    pub fn units_by_session(&self, session_id: &str) -> Vec<&EpisodicUnit> {
        let mut out: Vec<_> =
            self.units.values().filter(|u| u.session_id == session_id).collect();
        out.sort_by_key(|u| (u.turn_span, u.id));
        out
    }

    // -- nodes ---------------------------------------------------------------

    /// Insert a node. The canonical name must be unique within its tier
    /// after normalization; instance/general nodes must not carry a theory.
    pub fn add_node(&mut self, node: GraphNode) -> Result<NodeId> {
        if node.tier != Tier::Abstract && node.theory.is_some() {
            return Err(Error::InvalidUnit(format!(
                "{}-tier node {:?} may not carry a theory",
                node.tier, node.canonical_name
            )));
        }
        let key = name_key(node.tier, &normalize_name(&node.canonical_name));
        if self.name_index.contains_key(&key) {
            return Err(Error::InvalidUnit(format!(
                "canonical name {:?} already exists in tier {}",
                node.canonical_name, node.tier
            )));
        }
        let id = node.id;
        if self.nodes.contains_key(&id) {
            return Err(Error::InvalidUnit(format!("node id {id} already present")));
        }
        self.name_index.insert(key, id);
        self.nodes.insert(id, node);
        Ok(id)
    }

    pub fn node(&self, id: NodeId) -> Result<&GraphNode> {
        self.nodes.get(&id).ok_or(Error::UnknownNode(id.0))
    }

    pub fn node_mut(&mut self, id: NodeId) -> Result<&mut GraphNode> {
        self.nodes.get_mut(&id).ok_or(Error::UnknownNode(id.0))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &GraphNode> {
        self.nodes.values()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Look up a node by canonical name or alias within a tier, after
    /// normalization.
    pub fn node_by_name(&self, tier: Tier, name: &str) -> Option<NodeId> {
        let normalized = normalize_name(name);
        if let Some(&id) = self.name_index.get(&name_key(tier, &normalized)) {
            return Some(id);
        }
        self.nodes
            .values()
            .find(|n| {
                n.tier == tier && n.aliases.iter().any(|a| normalize_name(a) == normalized)
            })
            .map(|n| n.id)
    }

    // -- edges ---------------------------------------------------------------

    /// Insert a classification edge. Tier must strictly increase, except
    /// that abstract->abstract links are allowed when they keep the backbone
    /// acyclic (this is what lets the abstract layer form a hierarchy).
    pub fn add_classification_edge(&mut self, src: NodeId, dst: NodeId) -> Result<EdgeId> {
        let src_tier = self.node(src)?.tier;
        let dst_tier = self.node(dst)?.tier;
        let ok = src_tier < dst_tier
            || (src_tier == Tier::Abstract && dst_tier == Tier::Abstract && src != dst);
        if !ok {
            return Err(Error::TierViolation(format!(
                "{} ({}) -> {} ({})",
                src, src_tier, dst, dst_tier
            )));
        }
        if src_tier == Tier::Abstract && self.cls_reachable(dst, src) {
            return Err(Error::TierViolation(format!(
                "{src} -> {dst} would create a classification cycle"
            )));
        }
        if let Some(existing) = self.find_classification_edge(src, dst) {
            return Ok(existing);
        }
        let id = EdgeId(self.mint_id());
        self.edges.insert(
            id,
            GraphEdge {
                id,
                kind: EdgeKind::Classification,
                src,
                dst,
                label: "is_a".into(),
                theory: None,
                pending_evidence: Vec::new(),
            },
        );
        Ok(id)
    }

    /// Insert an event edge, or return the existing one with the same
    /// (src, dst, normalized label) key.
    pub fn add_event_edge(&mut self, src: NodeId, dst: NodeId, label: &str) -> Result<EdgeId> {
        self.node(src)?;
        self.node(dst)?;
        if let Some(existing) = self.find_event_edge(src, dst, label) {
            return Ok(existing);
        }
        let id = EdgeId(self.mint_id());
        self.edges.insert(
            id,
            GraphEdge {
                id,
                kind: EdgeKind::Event,
                src,
                dst,
                label: label.to_string(),
                theory: None,
                pending_evidence: Vec::new(),
            },
        );
        Ok(id)
    }

    pub fn edge(&self, id: EdgeId) -> Result<&GraphEdge> {
        self.edges.get(&id).ok_or(Error::UnknownEdge(id.0))
    }

    pub fn edge_mut(&mut self, id: EdgeId) -> Result<&mut GraphEdge> {
        self.edges.get_mut(&id).ok_or(Error::UnknownEdge(id.0))
    }

    pub fn edges(&self) -> impl Iterator<Item = &GraphEdge> {
        self.edges.values()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn find_classification_edge(&self, src: NodeId, dst: NodeId) -> Option<EdgeId> {
        self.edges
            .values()
            .find(|e| e.kind == EdgeKind::Classification && e.src == src && e.dst == dst)
            .map(|e| e.id)
    }

    pub fn find_event_edge(&self, src: NodeId, dst: NodeId, label: &str) -> Option<EdgeId> {
        let norm = normalize_name(label);
        self.edges
            .values()
            .find(|e| {
                e.kind == EdgeKind::Event
                    && e.src == src
                    && e.dst == dst
                    && normalize_name(&e.label) == norm
            })
            .map(|e| e.id)
    }

    /// Append a unit to an event edge's pending evidence (set semantics) and
    /// return the pending count.
    pub fn attach_evidence_to_edge(&mut self, edge_id: EdgeId, unit_id: UnitId) -> Result<usize> {
        self.unit(unit_id)?;
        let edge = self.edges.get_mut(&edge_id).ok_or(Error::UnknownEdge(edge_id.0))?;
        if edge.kind != EdgeKind::Event {
            return Err(Error::WrongEdgeKind(edge_id.0));
        }
        if !edge.pending_evidence.contains(&unit_id) {
            edge.pending_evidence.push(unit_id);
        }
        Ok(edge.pending_evidence.len())
    }

    /// Count a unit toward an abstract node's pending evidence, once per
    /// (node, unit) pair over the node's lifetime. Returns true when the
    /// counter actually advanced.
    pub fn attribute_unit(&mut self, node_id: NodeId, unit_id: UnitId) -> Result<bool> {
        let node = self.node_mut(node_id)?;
        if node.attributed_units.insert(unit_id) {
            node.pending_count += 1;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    // -- dirty flags ----------------------------------------------------------

    pub fn mark_dirty(&mut self, node_id: NodeId) -> Result<()> {
        self.node_mut(node_id)?.dirty = true;
        Ok(())
    }

    /// Walk classification edges upward from a node and set the dirty flag
    /// on every abstract ancestor. Returns the ids flipped clean -> dirty.
    pub fn propagate_dirty(&mut self, node_id: NodeId) -> Result<BTreeSet<NodeId>> {
        self.node(node_id)?;
        let ancestors = self.abstract_ancestors(node_id);
        let mut flipped = BTreeSet::new();
        for id in ancestors {
            let node = self.nodes.get_mut(&id).expect("ancestor exists");
            if !node.dirty {
                node.dirty = true;
                flipped.insert(id);
            }
        }
        Ok(flipped)
    }

    /// All abstract nodes reachable from `node_id` by following
    /// classification edges src -> dst transitively (excluding the node
    /// itself).
    pub fn abstract_ancestors(&self, node_id: NodeId) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::new();
        let mut out = BTreeSet::new();
        let mut queue = VecDeque::from([node_id]);
        while let Some(current) = queue.pop_front() {
            for edge in self.edges.values() {
                if edge.kind == EdgeKind::Classification && edge.src == current {
                    if seen.insert(edge.dst) {
                        queue.push_back(edge.dst);
                        if self.nodes.get(&edge.dst).map(|n| n.tier) == Some(Tier::Abstract) {
                            out.insert(edge.dst);
                        }
                    }
                }
            }
        }
        out
    }

    /// Direct classification children of a node (edges dst == node).
    pub fn cls_children(&self, node_id: NodeId) -> Vec<NodeId> {
        self.edges
            .values()
            .filter(|e| e.kind == EdgeKind::Classification && e.dst == node_id)
            .map(|e| e.src)
            .collect()
    }

    /// All instance-tier descendants of a node via classification edges.
    pub fn descendant_instances(&self, node_id: NodeId) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::new();
        let mut out = BTreeSet::new();
        let mut queue = VecDeque::from([node_id]);
        while let Some(current) = queue.pop_front() {
            for child in self.cls_children(current) {
                if seen.insert(child) {
                    queue.push_back(child);
                    if self.nodes.get(&child).map(|n| n.tier) == Some(Tier::Instance) {
                        out.insert(child);
                    }
                }
            }
        }
        out
    }

    /// Event edges incident (either endpoint) to any of the given nodes.
    pub fn incident_event_edges(&self, nodes: &BTreeSet<NodeId>) -> Vec<&GraphEdge> {
        self.edges
            .values()
            .filter(|e| {
                e.kind == EdgeKind::Event && (nodes.contains(&e.src) || nodes.contains(&e.dst))
            })
            .collect()
    }

    fn cls_reachable(&self, from: NodeId, target: NodeId) -> bool {
        if from == target {
            return true;
        }
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([from]);
        while let Some(current) = queue.pop_front() {
            for edge in self.edges.values() {
                if edge.kind == EdgeKind::Classification
                    && edge.src == current
                    && seen.insert(edge.dst)
                {
                    if edge.dst == target {
                        return true;
                    }
                    queue.push_back(edge.dst);
                }
            }
        }
        false
    }

    /// Nodes and edges within `radius` hops of a node, both edge kinds,
    /// edges undirected for traversal.
    pub fn get_neighborhood(&self, node_id: NodeId, radius: u32) -> Result<Neighborhood> {
        self.node(node_id)?;
        let mut dist: BTreeMap<NodeId, u32> = BTreeMap::from([(node_id, 0)]);
        let mut queue = VecDeque::from([node_id]);
        while let Some(current) = queue.pop_front() {
            let d = dist[&current];
            if d == radius {
                continue;
            }
            for edge in self.edges.values() {
                let neighbor = if edge.src == current {
                    edge.dst
                } else if edge.dst == current {
                    edge.src
                } else {
                    continue;
                };
                dist.entry(neighbor).or_insert_with(|| {
                    queue.push_back(neighbor);
                    d + 1
                });
            }
        }
        let nodes: Vec<NodeId> = dist.keys().copied().collect();
        let node_set: BTreeSet<NodeId> = dist.keys().copied().collect();
        let edges: Vec<EdgeId> = self
            .edges
            .values()
            .filter(|e| node_set.contains(&e.src) && node_set.contains(&e.dst))
            .map(|e| e.id)
            .collect();
        Ok(Neighborhood { center: node_id, radius, nodes, edges })
    }

    // -- snapshot / restore ----------------------------------------------------

    /// Canonical serialized form of the logical state. Deterministic: map
    /// keys sort, struct field order is fixed.
    pub fn snapshot_state(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("state serializes")
    }

    /// Rebuild a state from snapshot bytes, restoring derived indexes.
    pub fn restore_state(bytes: &[u8]) -> Result<Self> {
        let mut state: MemoryState = serde_json::from_slice(bytes)
            .map_err(|e| Error::CorruptSnapshot(e.to_string()))?;
        state.rebuild_derived_indexes();
        Ok(state)
    }

    /// Hash of the canonical serialized state; cheap state-equality check.
    pub fn state_hash(&self) -> String {
        fnv1a64_hex(&String::from_utf8_lossy(&self.snapshot_state()))
    }

    pub fn rebuild_derived_indexes(&mut self) {
        self.digest_index =
            self.units.values().map(|u| (u.source_digest.clone(), u.id)).collect();
        self.name_index = self
            .nodes
            .values()
            .map(|n| (name_key(n.tier, &normalize_name(&n.canonical_name)), n.id))
            .collect();
    }

    // -- integrity scan ---------------------------------------------------------

    /// Exhaustive invariant scan used by tests: partition totality, backbone
    /// acyclicity and tier ordering, theory placement, evidence resolution.
    pub fn check_invariants(&self) -> Result<()> {
        for edge in self.edges.values() {
            self.node(edge.src)?;
            self.node(edge.dst)?;
            match edge.kind {
                EdgeKind::Classification => {
                    if edge.theory.is_some() {
                        return Err(Error::InvalidUnit(format!(
                            "classification edge {} carries a theory",
                            edge.id
                        )));
                    }
                    let (s, d) = (self.node(edge.src)?.tier, self.node(edge.dst)?.tier);
                    if !(s < d || (s == Tier::Abstract && d == Tier::Abstract)) {
                        return Err(Error::TierViolation(format!("edge {}", edge.id)));
                    }
                }
                EdgeKind::Event => {
                    for unit in &edge.pending_evidence {
                        self.unit(*unit)?;
                    }
                }
            }
        }
        for node in self.nodes.values() {
            if node.tier != Tier::Abstract && node.theory.is_some() {
                return Err(Error::InvalidUnit(format!(
                    "node {} tier {} carries a theory",
                    node.id, node.tier
                )));
            }
        }
        // Backbone acyclicity: DFS from every abstract node.
        for node in self.nodes.values() {
            if node.tier == Tier::Abstract {
                let mut seen = BTreeSet::new();
                let mut queue = VecDeque::from([node.id]);
                while let Some(current) = queue.pop_front() {
                    for edge in self.edges.values() {
                        if edge.kind == EdgeKind::Classification && edge.src == current {
                            if edge.dst == node.id {
                                return Err(Error::TierViolation(format!(
                                    "classification cycle through node {}",
                                    node.id
                                )));
                            }
                            if seen.insert(edge.dst) {
                                queue.push_back(edge.dst);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
