//! Raw posts, preprocessing and the immutable tokenized corpus.

mod preprocess;
mod synth;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use preprocess::{default_lemma_exceptions, default_stoplist, lemmatize, preprocess, split_tokens, strip_urls, PreprocessConfig};
pub use synth::{synthetic_term, generate_from_topics, generate_synthetic, ChildMixture, SynthCorpus, SynthSpec};

use crate::digest::Hasher;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PostKind {
    Post,
    Comment,
}

/// One post or comment as ingested. `author_ref` is already pseudonymized.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPost {
    pub id: String,
    #[serde(default)]
    pub subreddit: String,
    #[serde(rename = "author_hash", default)]
    pub author_ref: String,
    #[serde(default)]
    pub created_utc: i64,
    pub kind: PostKind,
    #[serde(default)]
    pub parent_id: Option<String>,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: usize,
    pub source_id: String,
    pub tokens: Vec<u32>,
}

impl Document {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    terms: Vec<String>,
    doc_freq: Vec<u32>,
    term_freq: Vec<u64>,
    term_to_id: BTreeMap<String, u32>,
}

impl Vocabulary {
    /// Builds from per-id rows; ids are the row positions.
    pub fn from_rows(rows: Vec<(String, u64, u32)>) -> Result<Self> {
        let mut terms = Vec::with_capacity(rows.len());
        let mut term_freq = Vec::with_capacity(rows.len());
        let mut doc_freq = Vec::with_capacity(rows.len());
        let mut term_to_id = BTreeMap::new();
        for (i, (term, tf, df)) in rows.into_iter().enumerate() {
            if term_to_id.insert(term.clone(), i as u32).is_some() {
                return Err(Error::Build(format!("duplicate vocabulary term {term:?}")));
            }
            if (df as u64) > tf {
                return Err(Error::Build(format!("term {term:?} has doc_freq {df} > term_freq {tf}")));
            }
            terms.push(term);
            term_freq.push(tf);
            doc_freq.push(df);
        }
        Ok(Vocabulary { terms, doc_freq, term_freq, term_to_id })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn id(&self, term: &str) -> Option<u32> {
        self.term_to_id.get(term).copied()
    }

    pub fn term(&self, id: u32) -> &str {
        &self.terms[id as usize]
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn doc_freq(&self) -> &[u32] {
        &self.doc_freq
    }

    pub fn term_freq(&self) -> &[u64] {
        &self.term_freq
    }
}

/// Counts kept alongside the corpus so a build can be audited.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestManifest {
    pub n_posts: usize,
    pub n_documents: usize,
    pub vocab_size: usize,
    pub n_tokens: u64,
    pub dropped_short: usize,
    pub dropped_after_pruning: usize,
    pub pruned_terms: usize,
    #[serde(default)]
    pub synthetic: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_digest: String,
    pub manifest: IngestManifest,
}

/// Tokenized documents plus vocabulary. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    documents: Vec<Document>,
    vocabulary: Vocabulary,
    provenance: Provenance,
    digest: String,
}

impl Corpus {
    /// Assembles a corpus from stored parts, re-checking every invariant and
    /// recomputing vocabulary statistics from the token streams.
    pub fn from_parts(documents: Vec<Document>, terms: Vec<String>, provenance: Provenance) -> Result<Self> {
        if documents.is_empty() {
            return Err(Error::Build("corpus has no documents".into()));
        }
        let v = terms.len();
        let mut tf = vec![0u64; v];
        let mut df = vec![0u32; v];
        let mut seen = vec![usize::MAX; v];
        for (i, d) in documents.iter().enumerate() {
            if d.doc_id != i {
                return Err(Error::Build(format!("document {i} carries doc_id {}", d.doc_id)));
            }
            if d.tokens.is_empty() {
                return Err(Error::Build(format!("document {i} is empty")));
            }
            for &t in &d.tokens {
                let t = t as usize;
                if t >= v {
                    return Err(Error::Build(format!("document {i} has token id {t} >= vocabulary size {v}")));
                }
                tf[t] += 1;
                if seen[t] != i {
                    seen[t] = i;
                    df[t] += 1;
                }
            }
        }
        let rows = terms.into_iter().zip(tf).zip(df).map(|((t, tf), df)| (t, tf, df)).collect();
        let vocabulary = Vocabulary::from_rows(rows)?;
        let digest = corpus_digest(&documents, &vocabulary);
        Ok(Corpus { documents, vocabulary, provenance, digest })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Content digest over vocabulary terms and token streams.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn num_docs(&self) -> usize {
        self.documents.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn num_tokens(&self) -> u64 {
        self.documents.iter().map(|d| d.tokens.len() as u64).sum()
    }

    pub fn doc_lengths(&self) -> Vec<f64> {
        self.documents.iter().map(|d| d.tokens.len() as f64).collect()
    }
}

fn corpus_digest(documents: &[Document], vocabulary: &Vocabulary) -> String {
    let mut h = Hasher::new();
    h.str("corpus/1");
    h.u64(vocabulary.len() as u64);
    for t in vocabulary.terms() {
        h.str(t);
    }
    h.u64(documents.len() as u64);
    for d in documents {
        h.str(&d.source_id);
        h.u64(d.tokens.len() as u64);
        for &t in &d.tokens {
            h.u64(t as u64);
        }
    }
    h.finish()
}

/// Preprocesses every post and builds the pruned corpus.
///
/// Documents with fewer than two tokens are dropped, then terms outside
/// `[min_df, max_df_ratio * D]` document frequency are pruned and documents
/// left empty are dropped. Ids are dense, ordered by descending corpus
/// frequency with lexicographic tie-break.
pub fn build_corpus(posts: &[RawPost], config: &PreprocessConfig) -> Result<Corpus> {
    if posts.is_empty() {
        return Err(Error::Build("no posts to build from".into()));
    }
    if config.min_df == 0 {
        return Err(Error::config("min_df", "must be >= 1"));
    }
    if !(config.max_df_ratio > 0.0 && config.max_df_ratio <= 1.0) {
        return Err(Error::config("max_df_ratio", "must lie in (0, 1]"));
    }
    let mut tokenized: Vec<(&RawPost, Vec<String>)> = Vec::with_capacity(posts.len());
    let mut dropped_short = 0;
    for post in posts {
        let tokens = preprocess(&post.text, config);
        if tokens.len() < 2 {
            dropped_short += 1;
        } else {
            tokenized.push((post, tokens));
        }
    }
    let n_docs = tokenized.len();
    if n_docs == 0 {
        return Err(Error::Build(format!(
            "all {} posts have fewer than 2 tokens after preprocessing (min_token_len={}, stoplist size={})",
            posts.len(),
            config.min_token_len,
            config.stoplist.len()
        )));
    }
    if config.min_df > n_docs {
        return Err(Error::Build(format!("min_df={} exceeds the {n_docs} documents left after preprocessing", config.min_df)));
    }

    let mut stats: BTreeMap<&str, (u64, u32)> = BTreeMap::new();
    for (_, tokens) in &tokenized {
        let mut distinct: Vec<&str> = tokens.iter().map(String::as_str).collect();
        for t in &distinct {
            stats.entry(t).or_insert((0, 0)).0 += 1;
        }
        distinct.sort_unstable();
        distinct.dedup();
        for t in distinct {
            stats.get_mut(t).expect("counted above").1 += 1;
        }
    }
    let max_df = config.max_df_ratio * n_docs as f64;
    let mut kept: Vec<(&str, u64)> = stats
        .iter()
        .filter(|(_, &(_, df))| df as usize >= config.min_df && df as f64 <= max_df)
        .map(|(&t, &(tf, _))| (t, tf))
        .collect();
    let pruned_terms = stats.len() - kept.len();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let ids: BTreeMap<&str, u32> = kept.iter().enumerate().map(|(i, (t, _))| (*t, i as u32)).collect();

    let mut documents = Vec::with_capacity(n_docs);
    let mut dropped_after_pruning = 0;
    for (post, tokens) in &tokenized {
        let ids: Vec<u32> = tokens.iter().filter_map(|t| ids.get(t.as_str()).copied()).collect();
        if ids.is_empty() {
            dropped_after_pruning += 1;
            continue;
        }
        documents.push(Document { doc_id: documents.len(), source_id: post.id.clone(), tokens: ids });
    }
    if documents.is_empty() {
        return Err(Error::Build(format!(
            "vocabulary pruning removed every document (min_df={}, max_df_ratio={})",
            config.min_df, config.max_df_ratio
        )));
    }
    let terms: Vec<String> = kept.iter().map(|(t, _)| String::from(*t)).collect();
    let manifest = IngestManifest {
        n_posts: posts.len(),
        n_documents: documents.len(),
        vocab_size: terms.len(),
        n_tokens: documents.iter().map(|d| d.tokens.len() as u64).sum(),
        dropped_short,
        dropped_after_pruning,
        pruned_terms,
        synthetic: false,
    };
    Corpus::from_parts(documents, terms, Provenance { config_digest: config.digest(), manifest })
}
