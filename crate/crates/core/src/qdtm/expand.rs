//! Query expansion into ranked concept terms.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::Query;
use crate::corpus::Corpus;
use crate::linalg::{cosine, dot, truncated_eigen, SparseSymmetric};
use crate::rng::{streams, Stream};
use crate::{Error, Result};

/// Smoothing constant of the KL score.
pub const KL_EPSILON: f64 = 1e-12;
/// Co-occurrence reach of the embedding method, in tokens either side.
pub const EMBEDDING_WINDOW: usize = 5;
/// Offset of reciprocal-rank fusion.
pub const FUSION_OFFSET: f64 = 60.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionMethod {
    Frequency,
    Kl,
    Embedding,
    /// Reciprocal-rank fusion of the other three.
    Fusion,
}

impl ExpansionMethod {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "frequency" => Some(Self::Frequency),
            "kl" => Some(Self::Kl),
            "embedding" => Some(Self::Embedding),
            "fusion" => Some(Self::Fusion),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Frequency => "frequency",
            Self::Kl => "kl",
            Self::Embedding => "embedding",
            Self::Fusion => "fusion",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptTerm {
    pub term_id: u32,
    pub term: String,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptTermSet {
    pub query: String,
    pub method: ExpansionMethod,
    /// Query terms first, then expansions by descending score.
    pub terms: Vec<ConceptTerm>,
    /// In-vocabulary query terms, ascending.
    pub query_term_ids: Vec<u32>,
    /// Query terms missing from the vocabulary.
    pub skipped: Vec<String>,
}

impl ConceptTermSet {
    pub fn ids(&self) -> Vec<u32> {
        self.terms.iter().map(|t| t.term_id).collect()
    }
}

/// Resolves query terms to vocabulary ids (ascending) and lists the rest.
pub fn resolve(corpus: &Corpus, query: &Query) -> (Vec<u32>, Vec<String>) {
    let vocab = corpus.vocabulary();
    let mut ids = Vec::new();
    let mut skipped = Vec::new();
    for t in &query.terms {
        match vocab.id(t).or_else(|| vocab.id(&t.trim().to_lowercase())) {
            Some(id) => ids.push(id),
            None => skipped.push(t.clone()),
        }
    }
    ids.sort_unstable();
    ids.dedup();
    (ids, skipped)
}

fn expansion_error(query: &Query, reason: &str) -> Error {
    Error::Expansion { query: query.label.clone(), reason: reason.to_string() }
}

fn resolve_checked(corpus: &Corpus, query: &Query) -> Result<(Vec<u32>, Vec<String>)> {
    let (ids, skipped) = resolve(corpus, query);
    if ids.is_empty() {
        return Err(expansion_error(query, "no query term is in the vocabulary"));
    }
    Ok((ids, skipped))
}

/// Term frequencies inside the documents containing any query term, plus
/// the size of that document set.
fn relevant_counts(corpus: &Corpus, ids: &[u32]) -> (Vec<u64>, usize) {
    let mut counts = vec![0u64; corpus.vocab_size()];
    let mut n_docs = 0;
    for doc in corpus.documents() {
        if doc.tokens.iter().any(|t| ids.binary_search(t).is_ok()) {
            n_docs += 1;
            for &t in &doc.tokens {
                counts[t as usize] += 1;
            }
        }
    }
    (counts, n_docs)
}

fn by_score_desc(scores: &[f64]) -> impl Fn(&u32, &u32) -> Ordering + '_ {
    move |a, b| scores[*b as usize].total_cmp(&scores[*a as usize]).then(a.cmp(b))
}

/// Query terms plus the `e - |query|` best positive-score terms. Query terms
/// carry the largest score present so weights stay non-increasing.
fn assemble(corpus: &Corpus, query: &Query, method: ExpansionMethod, ids: Vec<u32>, skipped: Vec<String>, scores: &[f64], e: usize) -> ConceptTermSet {
    let top = scores.iter().copied().filter(|s| s.is_finite()).fold(0.0f64, f64::max);
    let top = if top > 0.0 { top } else { 1.0 };
    let mut candidates: Vec<u32> = (0..scores.len() as u32).filter(|w| scores[*w as usize] > 0.0 && ids.binary_search(w).is_err()).collect();
    candidates.sort_by(by_score_desc(scores));
    candidates.truncate(e.saturating_sub(ids.len()));
    let vocab = corpus.vocabulary();
    let make = |id: u32, weight: f64| ConceptTerm { term_id: id, term: vocab.term(id).to_string(), weight };
    let mut terms: Vec<ConceptTerm> = ids.iter().map(|&id| make(id, top)).collect();
    terms.extend(candidates.into_iter().map(|id| make(id, scores[id as usize])));
    ConceptTermSet { query: query.label.clone(), method, terms, query_term_ids: ids, skipped }
}

fn frequency_scores(corpus: &Corpus, query: &Query, ids: &[u32]) -> Result<Vec<f64>> {
    let (counts, n_docs) = relevant_counts(corpus, ids);
    if n_docs == 0 {
        return Err(expansion_error(query, "no document contains a query term"));
    }
    Ok(counts.into_iter().map(|c| c as f64).collect())
}

fn kl_scores(corpus: &Corpus, query: &Query, ids: &[u32]) -> Result<Vec<f64>> {
    let (counts, n_docs) = relevant_counts(corpus, ids);
    if n_docs == 0 {
        return Err(expansion_error(query, "no document contains a query term"));
    }
    let local_total: u64 = counts.iter().sum();
    let global_total = corpus.num_tokens() as f64;
    let tf = corpus.vocabulary().term_freq();
    Ok(counts
        .iter()
        .zip(tf)
        .map(|(&c, &g)| {
            let p = c as f64 / local_total as f64;
            let q = g as f64 / global_total;
            if p == 0.0 {
                0.0
            } else {
                p * libm::log((p + KL_EPSILON) / (q + KL_EPSILON))
            }
        })
        .collect())
}

/// Expands by raw term frequency inside the query-relevant documents.
pub fn expand_frequency(corpus: &Corpus, query: &Query, e: usize) -> Result<ConceptTermSet> {
    let (ids, skipped) = resolve_checked(corpus, query)?;
    let scores = frequency_scores(corpus, query, &ids)?;
    Ok(assemble(corpus, query, ExpansionMethod::Frequency, ids, skipped, &scores, e))
}

/// Expands by each term's pointwise contribution to
/// `KL(p(.|relevant docs) || p(.|corpus))`.
pub fn expand_kl(corpus: &Corpus, query: &Query, e: usize) -> Result<ConceptTermSet> {
    let (ids, skipped) = resolve_checked(corpus, query)?;
    let scores = kl_scores(corpus, query, &ids)?;
    Ok(assemble(corpus, query, ExpansionMethod::Kl, ids, skipped, &scores, e))
}

/// Term vectors from a truncated eigendecomposition of the positive-PMI
/// co-occurrence matrix. A term's vector is its row of `U |Λ|^½`.
#[derive(Clone, Debug)]
pub struct TermEmbedding {
    pub dim: usize,
    pub vectors: Vec<Vec<f64>>,
}

impl TermEmbedding {
    pub fn build(corpus: &Corpus, dim: usize, seed: u64) -> Result<Self> {
        let v = corpus.vocab_size();
        if dim == 0 || dim > v {
            return Err(Error::config("embedding_dim", "must be in 1..=vocabulary size"));
        }
        let ppmi = ppmi_matrix(corpus);
        if ppmi.nnz() == 0 {
            return Err(Error::Expansion { query: String::new(), reason: "positive-PMI matrix is all zero".into() });
        }
        let mut rng = Stream::new(seed, streams::EMBEDDING);
        let (values, vectors) = truncated_eigen(&ppmi, dim, 40, &mut rng);
        let scale: Vec<f64> = values.iter().map(|l| libm::sqrt(l.abs())).collect();
        let vectors = (0..v).map(|w| vectors.iter().zip(&scale).map(|(u, s)| u[w] * s).collect()).collect();
        Ok(TermEmbedding { dim: values.len(), vectors })
    }

    pub fn expand(&self, corpus: &Corpus, query: &Query, e: usize) -> Result<ConceptTermSet> {
        let (ids, skipped) = resolve_checked(corpus, query)?;
        let scores = self.scores(query, &ids)?;
        Ok(assemble(corpus, query, ExpansionMethod::Embedding, ids, skipped, &scores, e))
    }

    fn scores(&self, query: &Query, ids: &[u32]) -> Result<Vec<f64>> {
        let mut centre = vec![0.0; self.dim];
        for &id in ids {
            for (c, x) in centre.iter_mut().zip(&self.vectors[id as usize]) {
                *c += x / ids.len() as f64;
            }
        }
        if dot(&centre, &centre) == 0.0 {
            return Err(expansion_error(query, "query terms have no co-occurrence signal"));
        }
        Ok(self.vectors.iter().map(|v| if dot(v, v) == 0.0 { 0.0 } else { cosine(v, &centre) }).collect())
    }
}

/// Positive PMI over symmetric windows of [`EMBEDDING_WINDOW`] tokens.
pub fn ppmi_matrix(corpus: &Corpus) -> SparseSymmetric {
    let v = corpus.vocab_size();
    let mut pairs: Vec<u64> = Vec::new();
    for doc in corpus.documents() {
        let t = &doc.tokens;
        for i in 0..t.len() {
            for j in i + 1..t.len().min(i + EMBEDDING_WINDOW + 1) {
                let (a, b) = (t[i] as u64, t[j] as u64);
                pairs.push(a << 32 | b);
                pairs.push(b << 32 | a);
            }
        }
    }
    pairs.sort_unstable();
    let mut entries: Vec<(usize, usize, f64)> = Vec::new();
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        while j < pairs.len() && pairs[j] == pairs[i] {
            j += 1;
        }
        entries.push(((pairs[i] >> 32) as usize, (pairs[i] & 0xFFFF_FFFF) as usize, (j - i) as f64));
        i = j;
    }
    let mut row_sum = vec![0.0; v];
    let mut total = 0.0;
    for &(a, _, c) in &entries {
        row_sum[a] += c;
        total += c;
    }
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); v];
    for (a, b, c) in entries {
        let pmi = libm::log(c * total / (row_sum[a] * row_sum[b]));
        if pmi > 0.0 {
            rows[a].push((b, pmi));
        }
    }
    SparseSymmetric::from_rows(rows)
}

/// Expands by cosine similarity to the mean query-term embedding.
pub fn expand_embedding(corpus: &Corpus, query: &Query, e: usize, dim: usize, seed: u64) -> Result<ConceptTermSet> {
    resolve_checked(corpus, query)?;
    TermEmbedding::build(corpus, dim, seed).map_err(|err| match err {
        Error::Expansion { reason, .. } => expansion_error(query, &reason),
        other => other,
    })?
    .expand(corpus, query, e)
}

/// Reciprocal-rank fusion of the three methods over their positive-score
/// candidates.
pub fn expand_fusion(corpus: &Corpus, query: &Query, e: usize, embedding: &TermEmbedding) -> Result<ConceptTermSet> {
    let (ids, skipped) = resolve_checked(corpus, query)?;
    let lists = [frequency_scores(corpus, query, &ids)?, kl_scores(corpus, query, &ids)?, embedding.scores(query, &ids)?];
    let mut fused: BTreeMap<u32, f64> = BTreeMap::new();
    for scores in &lists {
        let mut order: Vec<u32> = (0..scores.len() as u32).filter(|w| scores[*w as usize] > 0.0).collect();
        order.sort_by(by_score_desc(scores));
        for (rank, w) in order.into_iter().enumerate() {
            *fused.entry(w).or_default() += 1.0 / (FUSION_OFFSET + rank as f64 + 1.0);
        }
    }
    let mut scores = vec![0.0; corpus.vocab_size()];
    for (w, s) in fused {
        scores[w as usize] = s;
    }
    Ok(assemble(corpus, query, ExpansionMethod::Fusion, ids, skipped, &scores, e))
}
