//! Synthetic corpora drawn from the LDA generative process, with planted
//! parameters kept for recovery tests.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Corpus, Document, IngestManifest, Provenance};
use crate::digest::Hasher;
use crate::rng::{streams, Stream};
use crate::{Error, Result};

/// Splits one planted topic into child sub-distributions: each document
/// draws a single child and all of its tokens from that topic come from the
/// child.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChildMixture {
    pub parent: usize,
    pub n_children: usize,
    pub beta_child: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub k_true: usize,
    pub vocab_size: usize,
    pub n_docs: usize,
    pub doc_len_mean: f64,
    pub alpha_true: f64,
    pub beta_true: f64,
    pub seed: u64,
    #[serde(default)]
    pub children: Option<ChildMixture>,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k_true < 1 {
            return Err(Error::config("k_true", "must be >= 1"));
        }
        if self.vocab_size < self.k_true {
            return Err(Error::config("vocab_size", "must be >= k_true"));
        }
        if self.n_docs < 1 {
            return Err(Error::config("n_docs", "must be >= 1"));
        }
        if !(self.doc_len_mean > 0.0) {
            return Err(Error::config("doc_len_mean", "must be positive"));
        }
        if !(self.alpha_true > 0.0) || !(self.beta_true > 0.0) {
            return Err(Error::config("alpha_true/beta_true", "must be positive"));
        }
        if let Some(c) = &self.children {
            if c.parent >= self.k_true || c.n_children < 2 || !(c.beta_child > 0.0) {
                return Err(Error::config("children", "parent < k_true, n_children >= 2, beta_child > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    /// Planted topic-word rows (`k_true x vocab_size`).
    pub phi: Vec<Vec<f64>>,
    /// Planted document-topic rows (`n_docs x k_true`).
    pub theta: Vec<Vec<f64>>,
    /// Child rows of the split topic, empty without a child mixture.
    pub children_phi: Vec<Vec<f64>>,
    /// Child drawn by each document, when a child mixture is planted.
    pub doc_child: Vec<Option<usize>>,
}

/// Term name for synthetic id `i`; ids equal planted column indices.
pub fn synthetic_term(i: usize) -> String {
    format!("w{i:04}")
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut topic_rng = Stream::new(spec.seed, streams::SYNTH_TOPICS);
    let mut phi: Vec<Vec<f64>> = (0..spec.k_true).map(|_| topic_rng.symmetric_dirichlet(spec.beta_true, spec.vocab_size)).collect();
    let mut children_phi = Vec::new();
    if let Some(c) = &spec.children {
        children_phi = (0..c.n_children).map(|_| topic_rng.symmetric_dirichlet(c.beta_child, spec.vocab_size)).collect();
        // the parent is the equal-weight mixture of its children
        let mut parent = vec![0.0; spec.vocab_size];
        for child in &children_phi {
            for (p, x) in parent.iter_mut().zip(child) {
                *p += x / c.n_children as f64;
            }
        }
        phi[c.parent] = parent;
    }
    sample_documents(spec, phi, children_phi)
}

/// Like [`generate_synthetic`] but with caller-planted topic rows; the
/// spec's `k_true`, `vocab_size` and `beta_true` are taken from `phi`.
pub fn generate_from_topics(phi: Vec<Vec<f64>>, spec: &SynthSpec) -> Result<SynthCorpus> {
    let k = phi.len();
    let v = phi.first().map_or(0, Vec::len);
    if k == 0 || v == 0 || phi.iter().any(|r| r.len() != v) {
        return Err(Error::config("phi", "must be a non-empty rectangular matrix"));
    }
    for row in &phi {
        let s: f64 = row.iter().sum();
        if row.iter().any(|&x| x < 0.0) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::config("phi", "rows must be probability vectors"));
        }
    }
    let spec = SynthSpec { k_true: k, vocab_size: v, children: None, ..spec.clone() };
    spec.validate()?;
    sample_documents(&spec, phi, Vec::new())
}

fn sample_documents(spec: &SynthSpec, phi: Vec<Vec<f64>>, children_phi: Vec<Vec<f64>>) -> Result<SynthCorpus> {
    let mut rng = Stream::new(spec.seed, streams::SYNTH_DOCS);
    let cumulative = |row: &[f64]| -> Vec<f64> {
        let mut acc = 0.0;
        row.iter()
            .map(|x| {
                acc += x;
                acc
            })
            .collect()
    };
    let phi_cdf: Vec<Vec<f64>> = phi.iter().map(|r| cumulative(r)).collect();
    let child_cdf: Vec<Vec<f64>> = children_phi.iter().map(|r| cumulative(r)).collect();
    let mut theta = Vec::with_capacity(spec.n_docs);
    let mut documents = Vec::with_capacity(spec.n_docs);
    let mut doc_child = Vec::with_capacity(spec.n_docs);
    for d in 0..spec.n_docs {
        let th = rng.symmetric_dirichlet(spec.alpha_true, spec.k_true);
        let len = rng.poisson(spec.doc_len_mean).max(2);
        let child = spec.children.as_ref().map(|c| rng.below(c.n_children));
        let mut tokens = Vec::with_capacity(len);
        for _ in 0..len {
            let z = rng.categorical(&th, 1.0);
            let cdf = match (&spec.children, child) {
                (Some(c), Some(ch)) if c.parent == z => &child_cdf[ch],
                _ => &phi_cdf[z],
            };
            tokens.push(draw_from_cdf(cdf, &mut rng) as u32);
        }
        theta.push(th);
        doc_child.push(child);
        documents.push(Document { doc_id: d, source_id: format!("synth-{d}"), tokens });
    }
    let terms: Vec<String> = (0..spec.vocab_size).map(synthetic_term).collect();
    let n_tokens = documents.iter().map(|d| d.tokens.len() as u64).sum();
    let mut h = Hasher::new();
    h.str("synthetic/1").u64(spec.k_true as u64).u64(spec.vocab_size as u64).u64(spec.n_docs as u64);
    h.f64(spec.doc_len_mean).f64(spec.alpha_true).f64(spec.beta_true).u64(spec.seed);
    let provenance = Provenance {
        config_digest: h.finish(),
        manifest: IngestManifest {
            n_posts: spec.n_docs,
            n_documents: spec.n_docs,
            vocab_size: spec.vocab_size,
            n_tokens,
            synthetic: true,
            ..IngestManifest::default()
        },
    };
    let corpus = Corpus::from_parts(documents, terms, provenance)?;
    Ok(SynthCorpus { corpus, phi, theta, children_phi, doc_child })
}

fn draw_from_cdf(cdf: &[f64], rng: &mut Stream) -> usize {
    let total = *cdf.last().expect("non-empty row");
    let u = rng.uniform() * total;
    let i = cdf.partition_point(|&c| c <= u);
    // skip zero-mass entries at the upper edge
    i.min(cdf.len() - 1)
}
