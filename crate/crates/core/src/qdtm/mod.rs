//! Query-driven topic modeling: expand analyst queries into concept terms,
//! grow a seeded main topic per query, then split each main topic into
//! subtopics with an HDP sampler.

mod expand;
mod hdp;

pub use expand::*;
pub use hdp::{fit_subtopics, HdpParams, SubtopicFit, SubtopicJob};

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::digest::Hasher;
use crate::lda::rank_row;
use crate::rng::{mix, streams, Stream};
use crate::selection::cv_for_groups;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub label: String,
    pub terms: BTreeSet<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QdtmConfig {
    pub method: ExpansionMethod,
    /// Concept terms per query.
    pub expansion_size: usize,
    pub embedding_dim: usize,
    pub background_topics: usize,
    /// Pseudo-count mass spread over a query topic's concept terms.
    pub seed_boost: f64,
    /// Minimum main-topic share for a document to join the main set.
    pub threshold: f64,
    /// Document-topic prior of the main phase.
    pub alpha: f64,
    /// Topic-word prior of both phases.
    pub beta: f64,
    pub gamma: f64,
    pub alpha0: f64,
    pub max_subtopics: usize,
    pub min_subtopic_docs: usize,
    /// Sweeps of each phase.
    pub iterations: usize,
    /// Main-phase sweeps discarded before averaging.
    pub burn_in: usize,
    pub sample_lag: usize,
    pub seed: u64,
}

impl Default for QdtmConfig {
    fn default() -> Self {
        QdtmConfig {
            method: ExpansionMethod::Kl,
            expansion_size: 30,
            embedding_dim: 50,
            background_topics: 10,
            seed_boost: 50.0,
            threshold: 0.3,
            alpha: 0.1,
            beta: 0.01,
            gamma: 1.0,
            alpha0: 1.0,
            max_subtopics: 10,
            min_subtopic_docs: 5,
            iterations: 500,
            burn_in: 400,
            sample_lag: 10,
            seed: 0,
        }
    }
}

impl QdtmConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if self.expansion_size < 1 {
            return Err(Error::config("expansion_size", "must be >= 1"));
        }
        if self.embedding_dim < 1 {
            return Err(Error::config("embedding_dim", "must be >= 1"));
        }
        if self.background_topics < 1 {
            return Err(Error::config("background_topics", "must be >= 1"));
        }
        if !positive(self.seed_boost) {
            return Err(Error::config("seed_boost", "must be > 0"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config("threshold", "must lie in (0, 1)"));
        }
        for (field, x) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma), ("alpha0", self.alpha0)] {
            if !positive(x) {
                return Err(Error::config(field, "must be > 0"));
            }
        }
        if self.max_subtopics < 1 {
            return Err(Error::config("max_subtopics", "must be >= 1"));
        }
        if self.iterations < 1 {
            return Err(Error::config("iterations", "must be >= 1"));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::config("burn_in", "must be below iterations"));
        }
        if self.sample_lag < 1 {
            return Err(Error::config("sample_lag", "must be >= 1"));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        let mut h = Hasher::new();
        h.str("qdtm-config/1").str(self.method.name());
        for n in [self.expansion_size, self.embedding_dim, self.background_topics, self.max_subtopics, self.min_subtopic_docs, self.iterations, self.burn_in, self.sample_lag] {
            h.u64(n as u64);
        }
        for x in [self.seed_boost, self.threshold, self.alpha, self.beta, self.gamma, self.alpha0] {
            h.f64(x);
        }
        h.u64(self.seed);
        h.finish()
    }

    fn hdp(&self) -> HdpParams {
        HdpParams {
            gamma: self.gamma,
            alpha0: self.alpha0,
            eta: self.beta,
            truncation: self.max_subtopics,
            iterations: self.iterations,
            min_docs: self.min_subtopic_docs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subtopic {
    pub node_id: String,
    pub phi: Vec<f64>,
    pub documents: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MainTopic {
    pub node_id: String,
    pub label: String,
    pub concept_terms: ConceptTermSet,
    pub phi: Vec<f64>,
    pub documents: Vec<usize>,
    pub children: Vec<Subtopic>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unmodelable {
    pub label: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicHierarchy {
    pub topics: Vec<MainTopic>,
    pub background: Vec<Vec<f64>>,
    pub unmodelable: Vec<Unmodelable>,
    pub config: QdtmConfig,
    pub corpus_digest: String,
}

fn check_row(row: &[f64], what: &str) -> Result<()> {
    let s: f64 = row.iter().sum();
    if row.iter().any(|x| !(*x >= 0.0)) || (s - 1.0).abs() > 1e-9 {
        return Err(Error::Internal(format!("{what} is not a probability vector")));
    }
    Ok(())
}

impl TopicHierarchy {
    /// Verifies the structural invariants: stochastic rows, subtopic sets
    /// inside and partitioning their main set.
    pub fn check(&self) -> Result<()> {
        for (i, row) in self.background.iter().enumerate() {
            check_row(row, &format!("background topic {i}"))?;
        }
        for t in &self.topics {
            check_row(&t.phi, &t.node_id)?;
            let main: BTreeSet<usize> = t.documents.iter().copied().collect();
            let mut seen = BTreeSet::new();
            for c in &t.children {
                check_row(&c.phi, &c.node_id)?;
                for d in &c.documents {
                    if !main.contains(d) {
                        return Err(Error::Internal(format!("{}: document {d} outside the main set", c.node_id)));
                    }
                    if !seen.insert(*d) {
                        return Err(Error::Internal(format!("{}: document {d} in two subtopics", c.node_id)));
                    }
                }
            }
            if seen != main {
                return Err(Error::Internal(format!("{}: subtopics do not cover the main set", t.node_id)));
            }
        }
        Ok(())
    }

    pub fn node_ids(&self) -> Vec<String> {
        self.topics.iter().flat_map(|t| core::iter::once(t.node_id.clone()).chain(t.children.iter().map(|c| c.node_id.clone()))).collect()
    }

    /// Term distribution of a node by id.
    pub fn node_phi(&self, node_id: &str) -> Option<&[f64]> {
        self.topics.iter().find_map(|t| {
            if t.node_id == node_id {
                Some(t.phi.as_slice())
            } else {
                t.children.iter().find(|c| c.node_id == node_id).map(|c| c.phi.as_slice())
            }
        })
    }

    pub fn digest(&self) -> String {
        let mut h = Hasher::new();
        h.str("hierarchy/1").str(&self.corpus_digest).str(&self.config.digest());
        let rows = |h: &mut Hasher, row: &[f64]| {
            for x in row {
                h.f64(*x);
            }
        };
        for t in &self.topics {
            h.str(&t.node_id).str(&t.label);
            for c in &t.concept_terms.terms {
                h.u64(c.term_id as u64).f64(c.weight);
            }
            rows(&mut h, &t.phi);
            t.documents.iter().for_each(|d| {
                h.u64(*d as u64);
            });
            for c in &t.children {
                h.str(&c.node_id);
                rows(&mut h, &c.phi);
                c.documents.iter().for_each(|d| {
                    h.u64(*d as u64);
                });
            }
        }
        for b in &self.background {
            rows(&mut h, b);
        }
        for u in &self.unmodelable {
            h.str(&u.label).str(&u.reason);
        }
        h.finish()
    }
}

/// Expands one query with the configured method.
pub fn expand(corpus: &Corpus, query: &Query, config: &QdtmConfig, embedding: Option<&TermEmbedding>) -> Result<ConceptTermSet> {
    let e = config.expansion_size;
    match config.method {
        ExpansionMethod::Frequency => expand_frequency(corpus, query, e),
        ExpansionMethod::Kl => expand_kl(corpus, query, e),
        ExpansionMethod::Embedding => match embedding {
            Some(emb) => emb.expand(corpus, query, e),
            None => expand_embedding(corpus, query, e, config.embedding_dim, config.seed),
        },
        ExpansionMethod::Fusion => match embedding {
            Some(emb) => expand_fusion(corpus, query, e, emb),
            None => expand_fusion(corpus, query, e, &TermEmbedding::build(corpus, config.embedding_dim.min(corpus.vocab_size()), config.seed)?),
        },
    }
}

/// Output of the main phase.
#[derive(Clone, Debug, PartialEq)]
pub struct MainPhase {
    /// Query topic rows then background rows.
    pub phi: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    /// Final topic assignment of every token.
    pub assignments: Vec<Vec<u32>>,
}

/// Seeded collapsed Gibbs over `seeds.len() + B` topics. Topic `q` has word
/// prior `β + μ ω_w / Σω` on its concept terms. Tokens of the query's own
/// terms start in the query topic, all others start uniformly; starting
/// expansion terms there too lets a topic that merely co-occurs with the
/// query capture the seeded topic.
pub fn main_phase(corpus: &Corpus, seeds: &[&ConceptTermSet], config: &QdtmConfig) -> Result<MainPhase> {
    let q = seeds.len();
    let k = q + config.background_topics;
    let v = corpus.vocab_size();
    let beta = config.beta;
    let mut prior = vec![beta; v * k];
    let mut prior_total = vec![v as f64 * beta; k];
    for (t, set) in seeds.iter().enumerate() {
        let weights: Vec<f64> = set.terms.iter().map(|c| c.weight.max(0.0)).collect();
        let sum: f64 = weights.iter().sum();
        for (c, w) in set.terms.iter().zip(&weights) {
            let share = if sum > 0.0 { w / sum } else { 1.0 / set.terms.len() as f64 };
            prior[c.term_id as usize * k + t] += config.seed_boost * share;
        }
        prior_total[t] += config.seed_boost;
    }
    let mut rng = Stream::new(config.seed, streams::QDTM_MAIN);
    // query-term tokens start in their query topic (the lowest-index query
    // when several share a term); expansion terms act through the prior only
    let mut anchor: Vec<Option<u32>> = vec![None; v];
    for (t, set) in seeds.iter().enumerate() {
        for &w in &set.query_term_ids {
            anchor[w as usize].get_or_insert(t as u32);
        }
    }
    let mut assignments: Vec<Vec<u32>> = corpus
        .documents()
        .iter()
        .map(|d| d.tokens.iter().map(|&w| anchor[w as usize].unwrap_or_else(|| rng.below(k) as u32)).collect())
        .collect();
    let mut doc_topic = vec![0u32; corpus.num_docs() * k];
    let mut word_topic = vec![0u32; v * k];
    let mut total = vec![0u64; k];
    for (d, doc) in corpus.documents().iter().enumerate() {
        for (&w, &t) in doc.tokens.iter().zip(&assignments[d]) {
            doc_topic[d * k + t as usize] += 1;
            word_topic[w as usize * k + t as usize] += 1;
            total[t as usize] += 1;
        }
    }
    let alpha = config.alpha;
    let mut weights = vec![0.0; k];
    let mut phi = vec![vec![0.0; v]; k];
    let mut theta = vec![vec![0.0; k]; corpus.num_docs()];
    let mut retained = 0usize;
    for sweep in 0..config.iterations {
        for (d, doc) in corpus.documents().iter().enumerate() {
            let dt = &mut doc_topic[d * k..(d + 1) * k];
            for (i, &w) in doc.tokens.iter().enumerate() {
                let w = w as usize;
                let old = assignments[d][i] as usize;
                let wt = &mut word_topic[w * k..(w + 1) * k];
                let pw = &prior[w * k..(w + 1) * k];
                dt[old] -= 1;
                wt[old] -= 1;
                total[old] -= 1;
                let mut sum = 0.0;
                for t in 0..k {
                    let x = (dt[t] as f64 + alpha) * (wt[t] as f64 + pw[t]) / (total[t] as f64 + prior_total[t]);
                    weights[t] = x;
                    sum += x;
                }
                let new = rng.categorical(&weights, sum);
                dt[new] += 1;
                wt[new] += 1;
                total[new] += 1;
                assignments[d][i] = new as u32;
            }
        }
        if sweep >= config.burn_in && (sweep - config.burn_in) % config.sample_lag == 0 {
            for t in 0..k {
                let denom = total[t] as f64 + prior_total[t];
                for (w, x) in phi[t].iter_mut().enumerate() {
                    *x += (word_topic[w * k + t] as f64 + prior[w * k + t]) / denom;
                }
            }
            for (d, doc) in corpus.documents().iter().enumerate() {
                let denom = doc.len() as f64 + k as f64 * alpha;
                for (t, x) in theta[d].iter_mut().enumerate() {
                    *x += (doc_topic[d * k + t] as f64 + alpha) / denom;
                }
            }
            retained += 1;
        }
    }
    let scale = 1.0 / retained as f64;
    for row in phi.iter_mut().chain(theta.iter_mut()) {
        row.iter_mut().for_each(|x| *x *= scale);
    }
    Ok(MainPhase { phi, theta, assignments })
}

/// Runs the two-phase model sequentially.
pub fn run_qdtm(corpus: &Corpus, queries: &[Query], config: &QdtmConfig) -> Result<TopicHierarchy> {
    run_qdtm_with(corpus, queries, config, &|jobs, v, p| jobs.iter().map(|j| fit_subtopics(j, v, p)).collect())
}

/// Maps subtopic jobs to fits; lets callers run them concurrently.
pub type SubtopicRunner<'a> = dyn Fn(&[SubtopicJob], usize, &HdpParams) -> Vec<Result<SubtopicFit>> + 'a;

/// [`run_qdtm`] with a caller-supplied runner for the per-query subtopic
/// samplers. Results do not depend on the order the runner evaluates jobs.
pub fn run_qdtm_with(corpus: &Corpus, queries: &[Query], config: &QdtmConfig, runner: &SubtopicRunner) -> Result<TopicHierarchy> {
    config.validate()?;
    if queries.is_empty() {
        return Err(Error::config("queries", "at least one query is required"));
    }
    let mut unmodelable = Vec::new();
    let needs_embedding = matches!(config.method, ExpansionMethod::Embedding | ExpansionMethod::Fusion);
    let embedding = if needs_embedding && queries.iter().any(|q| !resolve(corpus, q).0.is_empty()) {
        match TermEmbedding::build(corpus, config.embedding_dim.min(corpus.vocab_size()), config.seed) {
            Ok(e) => Some(e),
            Err(Error::Expansion { reason, .. }) => {
                for q in queries {
                    unmodelable.push(Unmodelable { label: q.label.clone(), reason: reason.clone() });
                }
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let mut expanded: Vec<(usize, ConceptTermSet)> = Vec::new();
    if unmodelable.is_empty() {
        for (i, q) in queries.iter().enumerate() {
            match expand(corpus, q, config, embedding.as_ref()) {
                Ok(set) => expanded.push((i, set)),
                Err(Error::Expansion { reason, .. }) => unmodelable.push(Unmodelable { label: q.label.clone(), reason }),
                Err(e) => return Err(e),
            }
        }
    }
    let seeds: Vec<&ConceptTermSet> = expanded.iter().map(|(_, s)| s).collect();
    let main = main_phase(corpus, &seeds, config)?;

    let mut jobs = Vec::new();
    let mut kept = Vec::new();
    for (t, (i, set)) in expanded.iter().enumerate() {
        let docs: Vec<usize> = (0..corpus.num_docs()).filter(|&d| main.theta[d][t] >= config.threshold).collect();
        if docs.is_empty() {
            unmodelable.push(Unmodelable {
                label: queries[*i].label.clone(),
                reason: format!("no document reaches a main-topic share of {}", config.threshold),
            });
            continue;
        }
        let tokens = docs
            .iter()
            .map(|&d| {
                let doc = &corpus.documents()[d];
                let own: Vec<u32> = doc.tokens.iter().zip(&main.assignments[d]).filter(|(_, &z)| z as usize == t).map(|(&w, _)| w).collect();
                if own.is_empty() {
                    doc.tokens.clone()
                } else {
                    own
                }
            })
            .collect();
        jobs.push(SubtopicJob { query_index: *i, docs, tokens, seed: mix(config.seed, *i as u64) });
        kept.push((t, set.clone()));
    }
    let fits = runner(&jobs, corpus.vocab_size(), &config.hdp());
    if fits.len() != jobs.len() {
        return Err(Error::Internal("subtopic runner returned the wrong number of results".into()));
    }
    let mut topics = Vec::with_capacity(jobs.len());
    for ((job, fit), (t, set)) in jobs.into_iter().zip(fits).zip(kept) {
        let fit = fit?;
        let node_id = format!("q{}", job.query_index);
        let children = fit
            .phi
            .into_iter()
            .zip(fit.members)
            .enumerate()
            .map(|(j, (phi, documents))| Subtopic { node_id: format!("{node_id}.{j}"), phi, documents })
            .collect();
        topics.push(MainTopic {
            node_id,
            label: queries[job.query_index].label.clone(),
            concept_terms: set,
            phi: main.phi[t].clone(),
            documents: job.docs,
            children,
        });
    }
    unmodelable.sort_by_key(|u| queries.iter().position(|q| q.label == u.label));
    let hierarchy = TopicHierarchy {
        topics,
        background: main.phi[expanded.len()..].to_vec(),
        unmodelable,
        config: config.clone(),
        corpus_digest: corpus.digest().to_string(),
    };
    hierarchy.check()?;
    Ok(hierarchy)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeScore {
    pub node_id: String,
    pub c_v: f64,
}

/// Top-`n` term ids of a distribution.
pub fn top_ids(phi: &[f64], n: usize) -> Vec<u32> {
    rank_row(phi, n).into_iter().map(|(i, _)| i as u32).collect()
}

/// `c_v` of every main topic and subtopic over its top-10 terms.
pub fn coherence_of_hierarchy(h: &TopicHierarchy, corpus: &Corpus, window: usize) -> Result<Vec<NodeScore>> {
    let ids = h.node_ids();
    if ids.is_empty() {
        return Err(Error::config("hierarchy", "has no nodes"));
    }
    let groups: Vec<Vec<u32>> = ids.iter().map(|id| top_ids(h.node_phi(id).expect("listed node"), 10)).collect();
    let scores = cv_for_groups(corpus, &groups, 10, window)?;
    Ok(ids.into_iter().zip(scores.per_topic).map(|(node_id, c_v)| NodeScore { node_id, c_v }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, ChildMixture, SynthSpec};
    use crate::linalg::cosine;

    fn spec(seed: u64) -> SynthSpec {
        SynthSpec { k_true: 6, vocab_size: 300, n_docs: 400, doc_len_mean: 50.0, alpha_true: 0.1, beta_true: 0.05, seed, children: None }
    }

    fn fast() -> QdtmConfig {
        QdtmConfig { background_topics: 5, iterations: 120, burn_in: 80, sample_lag: 10, seed: 5, ..QdtmConfig::default() }
    }

    fn planted_query(phi: &[f64], label: &str) -> Query {
        Query { label: label.into(), terms: top_ids(phi, 3).into_iter().map(|i| crate::corpus::synthetic_term(i as usize)).collect() }
    }

    #[test]
    fn main_topic_recovers_planted_topic() {
        let s = generate_synthetic(&spec(2)).unwrap();
        let h = run_qdtm(&s.corpus, &[planted_query(&s.phi[0], "zero")], &fast()).unwrap();
        assert_eq!(h.topics.len(), 1);
        assert!(cosine(&h.topics[0].phi, &s.phi[0]) >= 0.7);
    }

    #[test]
    fn absent_terms_are_unmodelable() {
        let s = generate_synthetic(&spec(3)).unwrap();
        let queries = [planted_query(&s.phi[1], "one"), Query { label: "covid".into(), terms: BTreeSet::from(["pandemic".to_string()]) }];
        let h = run_qdtm(&s.corpus, &queries, &fast()).unwrap();
        assert_eq!(h.topics.len(), 1);
        assert_eq!(h.unmodelable.len(), 1);
        assert_eq!(h.unmodelable[0].label, "covid");
    }

    #[test]
    fn degenerate_queries_do_not_crash() {
        let s = generate_synthetic(&spec(4)).unwrap();
        let queries = [Query { label: "nothing".into(), terms: BTreeSet::new() }];
        let h = run_qdtm(&s.corpus, &queries, &fast()).unwrap();
        assert!(h.topics.is_empty());
        assert_eq!(h.background.len(), 5);
        assert!(coherence_of_hierarchy(&h, &s.corpus, 110).is_err());
    }

    #[test]
    fn threshold_shrinks_main_set() {
        let s = generate_synthetic(&spec(5)).unwrap();
        let q = [planted_query(&s.phi[2], "two")];
        let loose = run_qdtm(&s.corpus, &q, &QdtmConfig { threshold: 0.2, ..fast() }).unwrap();
        let strict = run_qdtm(&s.corpus, &q, &QdtmConfig { threshold: 0.6, ..fast() }).unwrap();
        let a: BTreeSet<usize> = loose.topics[0].documents.iter().copied().collect();
        let b: BTreeSet<usize> = strict.topics[0].documents.iter().copied().collect();
        assert!(b.is_subset(&a));
    }

    #[test]
    fn hierarchical_corpus_splits_into_children() {
        let mut sp = spec(6);
        sp.n_docs = 600;
        sp.children = Some(ChildMixture { parent: 0, n_children: 2, beta_child: 0.05 });
        let s = generate_synthetic(&sp).unwrap();
        let h = run_qdtm(&s.corpus, &[planted_query(&s.phi[0], "parent")], &fast()).unwrap();
        let kids = &h.topics[0].children;
        assert!(kids.len() >= 2, "{} subtopics", kids.len());
        for planted in &s.children_phi {
            let best = kids.iter().map(|c| cosine(&c.phi, planted)).fold(0.0, f64::max);
            assert!(best >= 0.6, "best child cosine {best}");
        }
    }

    #[test]
    fn coherence_delegates_to_cv() {
        let s = generate_synthetic(&spec(7)).unwrap();
        let h = run_qdtm(&s.corpus, &[planted_query(&s.phi[3], "three")], &fast()).unwrap();
        let scores = coherence_of_hierarchy(&h, &s.corpus, 110).unwrap();
        assert_eq!(scores.len(), h.node_ids().len());
        let direct = cv_for_groups(&s.corpus, &[top_ids(&h.topics[0].phi, 10)], 10, 110).unwrap();
        assert_eq!(scores[0].c_v, direct.per_topic[0]);
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(QdtmConfig { background_topics: 0, ..QdtmConfig::default() }.validate().is_err());
        assert!(QdtmConfig { threshold: 1.0, ..QdtmConfig::default() }.validate().is_err());
        assert!(QdtmConfig { seed_boost: 0.0, ..QdtmConfig::default() }.validate().is_err());
        assert!(QdtmConfig::default().validate().is_ok());
    }
}
