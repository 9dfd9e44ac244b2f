//! Lexical (BM25) and vector indexes powering multi-scale retrieval.
//!
//! Both are exact: the inverted index keeps full postings and true average
//! document length, and vector search is an exhaustive scan. No approximate
//! structures at desk scale.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::{tokenize, Backend};
use crate::error::{Error, Result};
use crate::store::MemoryState;

/// Which lexical corpus a document belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corpus {
    Facts,
    Conclusions,
}

impl Corpus {
    fn as_str(&self) -> &'static str {
        match self {
            Corpus::Facts => "facts",
            Corpus::Conclusions => "conclusions",
        }
    }
}

// ---------------------------------------------------------------------------
// BM25
// ---------------------------------------------------------------------------

/// Inverted index with BM25 ranking. `k1` saturates term frequency and `b`
/// normalizes by document length.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bm25Index {
    postings: BTreeMap<String, Vec<(u64, u32)>>,
    doc_lengths: BTreeMap<u64, u32>,
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Index {
    fn default() -> Self {
        Self { postings: BTreeMap::new(), doc_lengths: BTreeMap::new(), k1: 1.2, b: 0.75 }
    }
}

impl Bm25Index {
    pub fn doc_count(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        if self.doc_lengths.is_empty() {
            return 0.0;
        }
        self.doc_lengths.values().map(|&l| l as f64).sum::<f64>() / self.doc_lengths.len() as f64
    }

    pub fn contains(&self, id: u64) -> bool {
        self.doc_lengths.contains_key(&id)
    }

    fn add(&mut self, id: u64, text: &str) -> Result<()> {
        if self.doc_lengths.contains_key(&id) {
            return Err(Error::DuplicateDoc(id, "bm25".into()));
        }
        let tokens = tokenize(text);
        self.doc_lengths.insert(id, tokens.len() as u32);
        let mut freqs: BTreeMap<String, u32> = BTreeMap::new();
        for t in tokens {
            *freqs.entry(t).or_insert(0) += 1;
        }
        for (term, tf) in freqs {
            self.postings.entry(term).or_default().push((id, tf));
        }
        Ok(())
    }

    fn remove(&mut self, id: u64) -> Result<()> {
        if self.doc_lengths.remove(&id).is_none() {
            return Err(Error::UnknownDoc(id, "bm25".into()));
        }
        self.postings.retain(|_, list| {
            list.retain(|(doc, _)| *doc != id);
            !list.is_empty()
        });
        Ok(())
    }

    /// IDF with the +1 smoothing form, clamped at zero.
    fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count() as f64;
        let df = self.postings.get(term).map(|l| l.len() as f64).unwrap_or(0.0);
        if df == 0.0 {
            return 0.0;
        }
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln().max(0.0)
    }

    /// Rank documents for a query: descending score, ties broken by
    /// ascending doc id, zero-score documents excluded, at most `k` results.
    pub fn search(&self, query: &str, k: usize) -> Vec<(u64, f64)> {
        let mut terms = tokenize(query);
        terms.sort_unstable();
        terms.dedup();
        if terms.is_empty() || self.doc_lengths.is_empty() {
            return Vec::new();
        }
        let avgdl = self.avg_doc_length();
        let mut scores: BTreeMap<u64, f64> = BTreeMap::new();
        for term in &terms {
            let idf = self.idf(term);
            if idf <= 0.0 {
                continue;
            }
            if let Some(list) = self.postings.get(term) {
                for &(doc, tf) in list {
                    let len = self.doc_lengths[&doc] as f64;
                    let tf = tf as f64;
                    let denom = tf + self.k1 * (1.0 - self.b + self.b * len / avgdl);
                    *scores.entry(doc).or_insert(0.0) += idf * tf * (self.k1 + 1.0) / denom;
                }
            }
        }
        let mut ranked: Vec<(u64, f64)> =
            scores.into_iter().filter(|(_, s)| *s > 0.0).collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        ranked.truncate(k);
        ranked
    }
}

// ---------------------------------------------------------------------------
// Vector index
// ---------------------------------------------------------------------------

/// Unit-norm vector store with exact top-k cosine search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VectorIndex {
    entries: BTreeMap<u64, Vec<f64>>,
    pub dimension: usize,
}

impl VectorIndex {
    pub fn new(dimension: usize) -> Self {
        Self { entries: BTreeMap::new(), dimension }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, id: u64, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                got: vector.len(),
            });
        }
        let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::DimensionMismatch { expected: self.dimension, got: 0 });
        }
        let unit: Vec<f64> =
            if (norm - 1.0).abs() <= 1e-6 { vector } else { vector.iter().map(|v| v / norm).collect() };
        self.entries.insert(id, unit);
        Ok(())
    }

    pub fn remove(&mut self, id: u64) -> Result<()> {
        self.entries
            .remove(&id)
            .map(|_| ())
            .ok_or(Error::UnknownDoc(id, "vectors".into()))
    }

    /// Exhaustive scan: entries with cosine >= `min_cos`, descending, ties
    /// by ascending id, at most `k` results.
    pub fn top_k(&self, query: &[f64], k: usize, min_cos: f64) -> Result<Vec<(u64, f64)>> {
        if query.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                got: query.len(),
            });
        }
        let mut hits: Vec<(u64, f64)> = self
            .entries
            .iter()
            .map(|(&id, v)| (id, v.iter().zip(query).map(|(a, b)| a * b).sum::<f64>()))
            .filter(|(_, cos)| *cos >= min_cos)
            .collect();
        hits.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        hits.truncate(k);
        Ok(hits)
    }
}

// ---------------------------------------------------------------------------
// Index set
// ---------------------------------------------------------------------------

/// The three retrieval indexes kept coherent with the memory store: facts
/// and conclusions by BM25, entity nodes by embedding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexSet {
    pub facts: Bm25Index,
    pub conclusions: Bm25Index,
    pub entities: VectorIndex,
}

impl IndexSet {
    pub fn new(embed_dim: usize) -> Self {
        Self {
            facts: Bm25Index::default(),
            conclusions: Bm25Index::default(),
            entities: VectorIndex::new(embed_dim),
        }
    }

    pub fn index_document(&mut self, id: u64, text: &str, corpus: Corpus) -> Result<()> {
        let index = match corpus {
            Corpus::Facts => &mut self.facts,
            Corpus::Conclusions => &mut self.conclusions,
        };
        index.add(id, text).map_err(|e| match e {
            Error::DuplicateDoc(id, _) => Error::DuplicateDoc(id, corpus.as_str().into()),
            other => other,
        })
    }

    pub fn remove_document(&mut self, id: u64, corpus: Corpus) -> Result<()> {
        let index = match corpus {
            Corpus::Facts => &mut self.facts,
            Corpus::Conclusions => &mut self.conclusions,
        };
        index.remove(id).map_err(|e| match e {
            Error::UnknownDoc(id, _) => Error::UnknownDoc(id, corpus.as_str().into()),
            other => other,
        })
    }

    pub fn bm25_search(&self, query: &str, corpus: Corpus, k: usize) -> Vec<(u64, f64)> {
        match corpus {
            Corpus::Facts => self.facts.search(query, k),
            Corpus::Conclusions => self.conclusions.search(query, k),
        }
    }

    pub fn vector_topk(&self, query: &[f64], k: usize, min_cos: f64) -> Result<Vec<(u64, f64)>> {
        self.entities.top_k(query, k, min_cos)
    }

    /// Rebuild everything from the store. Used after restore/recovery; a
    /// second rebuild is a fixed point.
    pub fn reindex_all(&mut self, state: &MemoryState, backend: &dyn Backend) -> Result<()> {
        *self = IndexSet::new(backend.embed_dim());
        for unit in state.units() {
            self.index_document(unit.id.0, &unit.lambda_fact, Corpus::Facts)?;
            for c in unit.conclusions() {
                self.index_document(c.id.0, &c.text, Corpus::Conclusions)?;
            }
        }
        for node in state.nodes() {
            if let Some(embedding) = &node.embedding {
                self.entities.insert(node.id.0, embedding.clone())?;
            }
        }
        Ok(())
    }
}
