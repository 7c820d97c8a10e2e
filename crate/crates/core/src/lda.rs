//! Collapsed-Gibbs LDA with averaged posterior estimates and topic rankings.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::digest::Hasher;
use crate::rng::{streams, Stream};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdaConfig {
    /// Number of topics.
    pub k: usize,
    /// Symmetric document-topic prior.
    pub alpha: f64,
    /// Symmetric topic-word prior.
    pub beta: f64,
    /// Total Gibbs sweeps.
    pub iterations: usize,
    /// Sweeps discarded before the first retained state.
    pub burn_in: usize,
    /// Sweeps between retained states.
    pub sample_lag: usize,
    /// Retained states averaged into the estimates.
    pub n_samples: usize,
    pub seed: u64,
}

impl LdaConfig {
    /// Defaults: `alpha = 50 / k`, `beta = 0.01`, 1000 sweeps, 800 burn-in,
    /// lag 20, 10 samples.
    pub fn new(k: usize, seed: u64) -> Self {
        LdaConfig {
            k,
            alpha: if k > 0 { 50.0 / k as f64 } else { 1.0 },
            beta: 0.01,
            iterations: 1000,
            burn_in: 800,
            sample_lag: 20,
            n_samples: 10,
            seed,
        }
    }

    /// Same schedule and beta with a different `k`; alpha follows `50 / k`
    /// when `alpha_scaled` is set.
    pub fn with_k(&self, k: usize, alpha_scaled: bool) -> Self {
        let mut c = self.clone();
        c.k = k;
        if alpha_scaled && k > 0 {
            c.alpha = 50.0 / k as f64;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::config("k", "must be >= 1"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("alpha", "must be positive"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::config("beta", "must be positive"));
        }
        if self.n_samples < 1 {
            return Err(Error::config("n_samples", "must be >= 1"));
        }
        if self.sample_lag < 1 {
            return Err(Error::config("sample_lag", "must be >= 1"));
        }
        if self.burn_in + self.sample_lag * (self.n_samples - 1) >= self.iterations {
            return Err(Error::config("iterations", "must exceed burn_in + sample_lag * (n_samples - 1)"));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        let mut h = Hasher::new();
        h.str("lda-config/1").u64(self.k as u64).f64(self.alpha).f64(self.beta);
        h.u64(self.iterations as u64).u64(self.burn_in as u64).u64(self.sample_lag as u64);
        h.u64(self.n_samples as u64).u64(self.seed);
        h.finish()
    }
}

/// Final Gibbs state: per-token assignments and the count tables they imply.
#[derive(Clone, Debug, PartialEq)]
pub struct GibbsState {
    pub k: usize,
    pub v: usize,
    /// Topic of every token, per document.
    pub assignments: Vec<Vec<u32>>,
    /// `D x K`, row-major.
    pub doc_topic: Vec<u32>,
    /// `V x K`, word-major (`word * k + topic`).
    pub word_topic: Vec<u32>,
    pub topic_total: Vec<u32>,
}

impl GibbsState {
    /// Rebuilds count tables from assignments.
    pub fn from_assignments(corpus: &Corpus, k: usize, assignments: Vec<Vec<u32>>) -> Result<Self> {
        let v = corpus.vocab_size();
        let d = corpus.num_docs();
        if assignments.len() != d {
            return Err(Error::Internal(format!("{} assignment rows for {d} documents", assignments.len())));
        }
        let mut s = GibbsState { k, v, assignments: Vec::new(), doc_topic: vec![0; d * k], word_topic: vec![0; v * k], topic_total: vec![0; k] };
        for (di, (doc, z)) in corpus.documents().iter().zip(&assignments).enumerate() {
            if z.len() != doc.len() {
                return Err(Error::Internal(format!("document {di}: {} assignments for {} tokens", z.len(), doc.len())));
            }
            for (&w, &t) in doc.tokens.iter().zip(z) {
                let t = t as usize;
                if t >= k {
                    return Err(Error::Index { what: "topic", index: t, len: k });
                }
                s.doc_topic[di * k + t] += 1;
                s.word_topic[w as usize * k + t] += 1;
                s.topic_total[t] += 1;
            }
        }
        s.assignments = assignments;
        Ok(s)
    }

    pub fn n_dk(&self, d: usize, k: usize) -> u32 {
        self.doc_topic[d * self.k + k]
    }

    pub fn n_kw(&self, k: usize, w: usize) -> u32 {
        self.word_topic[w * self.k + k]
    }

    /// Checks `sum_w n_kw = n_k` and `sum_k n_dk = len(d)`.
    pub fn is_consistent(&self, corpus: &Corpus) -> bool {
        let k = self.k;
        for t in 0..k {
            let s: u64 = (0..self.v).map(|w| self.word_topic[w * k + t] as u64).sum();
            if s != self.topic_total[t] as u64 {
                return false;
            }
        }
        corpus.documents().iter().enumerate().all(|(d, doc)| {
            let s: u64 = self.doc_topic[d * k..(d + 1) * k].iter().map(|&x| x as u64).sum();
            s == doc.len() as u64
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopicModel {
    /// `K x V` topic-word probabilities.
    pub phi: Vec<Vec<f64>>,
    /// `D x K` document-topic probabilities.
    pub theta: Vec<Vec<f64>>,
    pub doc_lengths: Vec<usize>,
    pub config: LdaConfig,
    pub corpus_digest: String,
    /// Joint log-likelihood `log p(w, z)` after each sweep.
    pub log_likelihood: Vec<f64>,
    /// Final sampler state; absent for models assembled from estimates.
    pub state: Option<GibbsState>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedTerm {
    pub term_id: u32,
    pub weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedDocument {
    pub doc_id: usize,
    pub weight: f64,
}

impl TopicModel {
    /// A model from explicit estimates, with no sampler state.
    pub fn from_estimates(phi: Vec<Vec<f64>>, theta: Vec<Vec<f64>>, doc_lengths: Vec<usize>, config: LdaConfig, corpus_digest: String) -> Result<Self> {
        let k = phi.len();
        if k == 0 {
            return Err(Error::config("phi", "needs at least one topic"));
        }
        let v = phi[0].len();
        if phi.iter().any(|r| r.len() != v) {
            return Err(Error::config("phi", "rows must share one length"));
        }
        if theta.iter().any(|r| r.len() != k) || theta.len() != doc_lengths.len() {
            return Err(Error::config("theta", "must be D x K with one length per document"));
        }
        Ok(TopicModel { phi, theta, doc_lengths, config, corpus_digest, log_likelihood: Vec::new(), state: None })
    }

    pub fn k(&self) -> usize {
        self.phi.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.phi.first().map_or(0, Vec::len)
    }

    pub fn num_docs(&self) -> usize {
        self.theta.len()
    }

    /// Digest of the estimates, bit-exact.
    pub fn digest(&self) -> String {
        let mut h = Hasher::new();
        h.str("topic-model/1").str(&self.config.digest()).str(&self.corpus_digest);
        for row in self.phi.iter().chain(&self.theta) {
            for &x in row {
                h.f64(x);
            }
        }
        h.finish()
    }

    /// Reorders topics so new topic `i` is old topic `perm[i]`.
    pub fn permute_topics(&self, perm: &[usize]) -> TopicModel {
        let phi = perm.iter().map(|&p| self.phi[p].clone()).collect();
        let theta = self.theta.iter().map(|row| perm.iter().map(|&p| row[p]).collect()).collect();
        TopicModel { phi, theta, state: None, ..self.clone() }
    }
}

/// Trains LDA by collapsed Gibbs sampling.
///
/// Token update: `p(z = k) ∝ (n_dk + α)(n_kw + β) / (n_k + Vβ)` with the
/// token's own counts removed. Estimates `φ̂ = (n_kw + β)/(n_k + Vβ)` and
/// `θ̂ = (n_dk + α)/(len + Kα)` are averaged over the retained states.
pub fn train_lda(corpus: &Corpus, config: &LdaConfig) -> Result<TopicModel> {
    config.validate()?;
    let n_tokens = corpus.num_tokens();
    if config.k as u64 > n_tokens {
        return Err(Error::config("k", format!("{} topics exceed the corpus' {n_tokens} tokens", config.k)));
    }
    let k = config.k;
    let v = corpus.vocab_size();
    let (alpha, beta) = (config.alpha, config.beta);
    let vbeta = v as f64 * beta;

    let mut init_rng = Stream::new(config.seed, streams::LDA_INIT);
    let assignments: Vec<Vec<u32>> = corpus.documents().iter().map(|d| d.tokens.iter().map(|_| init_rng.below(k) as u32).collect()).collect();
    let mut state = GibbsState::from_assignments(corpus, k, assignments)?;

    let mut rng = Stream::new(config.seed, streams::LDA_GIBBS);
    let mut weights = vec![0.0f64; k];
    let mut inv_denominator: Vec<f64> = state.topic_total.iter().map(|&n| 1.0 / (n as f64 + vbeta)).collect();
    let ll = LogLikelihood::new(corpus, k, alpha, beta);
    let mut trace = Vec::with_capacity(config.iterations);
    let mut phi_acc = vec![vec![0.0f64; v]; k];
    let mut theta_acc = vec![vec![0.0f64; k]; corpus.num_docs()];
    let mut retained = 0usize;

    for sweep in 0..config.iterations {
        for (d, doc) in corpus.documents().iter().enumerate() {
            let dt = &mut state.doc_topic[d * k..(d + 1) * k];
            for (i, &w) in doc.tokens.iter().enumerate() {
                let w = w as usize;
                let old = state.assignments[d][i] as usize;
                let wt = &mut state.word_topic[w * k..(w + 1) * k];
                dt[old] -= 1;
                wt[old] -= 1;
                state.topic_total[old] -= 1;
                inv_denominator[old] = 1.0 / (state.topic_total[old] as f64 + vbeta);

                let mut total = 0.0;
                for t in 0..k {
                    let p = (dt[t] as f64 + alpha) * (wt[t] as f64 + beta) * inv_denominator[t];
                    weights[t] = p;
                    total += p;
                }
                let new = rng.categorical(&weights, total);

                dt[new] += 1;
                wt[new] += 1;
                state.topic_total[new] += 1;
                inv_denominator[new] = 1.0 / (state.topic_total[new] as f64 + vbeta);
                state.assignments[d][i] = new as u32;
            }
        }
        debug_assert!(state.is_consistent(corpus), "count tables diverged at sweep {sweep}");
        trace.push(ll.evaluate(&state));

        if retained < config.n_samples && sweep >= config.burn_in && (sweep - config.burn_in) % config.sample_lag == 0 {
            accumulate(&state, corpus, alpha, beta, &mut phi_acc, &mut theta_acc);
            retained += 1;
        }
    }
    debug_assert_eq!(retained, config.n_samples);
    let scale = 1.0 / retained as f64;
    for row in phi_acc.iter_mut().chain(theta_acc.iter_mut()) {
        for x in row.iter_mut() {
            *x *= scale;
            if !x.is_finite() {
                return Err(Error::Internal("non-finite value in LDA estimates".into()));
            }
        }
    }
    Ok(TopicModel {
        phi: phi_acc,
        theta: theta_acc,
        doc_lengths: corpus.documents().iter().map(|d| d.len()).collect(),
        config: config.clone(),
        corpus_digest: corpus.digest().into(),
        log_likelihood: trace,
        state: Some(state),
    })
}

fn accumulate(state: &GibbsState, corpus: &Corpus, alpha: f64, beta: f64, phi: &mut [Vec<f64>], theta: &mut [Vec<f64>]) {
    let k = state.k;
    let vbeta = state.v as f64 * beta;
    for t in 0..k {
        let denom = state.topic_total[t] as f64 + vbeta;
        for (w, x) in phi[t].iter_mut().enumerate() {
            *x += (state.word_topic[w * k + t] as f64 + beta) / denom;
        }
    }
    let kalpha = k as f64 * alpha;
    for (d, doc) in corpus.documents().iter().enumerate() {
        let denom = doc.len() as f64 + kalpha;
        for (t, x) in theta[d].iter_mut().enumerate() {
            *x += (state.doc_topic[d * k + t] as f64 + alpha) / denom;
        }
    }
}

/// `log p(w, z)` under the collapsed model, using lookup tables for the
/// count-dependent log-gamma terms.
struct LogLikelihood {
    k: usize,
    vbeta: f64,
    lg_word: Vec<f64>,
    lg_doc: Vec<f64>,
    constant: f64,
}

impl LogLikelihood {
    fn new(corpus: &Corpus, k: usize, alpha: f64, beta: f64) -> Self {
        let n = corpus.num_tokens() as usize;
        let max_len = corpus.documents().iter().map(|d| d.len()).max().unwrap_or(0);
        let lg_beta = libm::lgamma(beta);
        let lg_alpha = libm::lgamma(alpha);
        let lg_word = (0..=n).map(|c| libm::lgamma(c as f64 + beta) - lg_beta).collect();
        let lg_doc = (0..=max_len).map(|c| libm::lgamma(c as f64 + alpha) - lg_alpha).collect();
        let v = corpus.vocab_size() as f64;
        let kalpha = k as f64 * alpha;
        let doc_part: f64 = corpus.documents().iter().map(|d| libm::lgamma(kalpha) - libm::lgamma(d.len() as f64 + kalpha)).sum();
        let constant = k as f64 * libm::lgamma(v * beta) + doc_part;
        LogLikelihood { k, vbeta: v * beta, lg_word, lg_doc, constant }
    }

    fn evaluate(&self, state: &GibbsState) -> f64 {
        let mut ll = self.constant;
        for &n in &state.topic_total {
            ll -= libm::lgamma(n as f64 + self.vbeta);
        }
        for &c in &state.word_topic {
            if c > 0 {
                ll += self.lg_word[c as usize];
            }
        }
        for &c in &state.doc_topic {
            if c > 0 {
                ll += self.lg_doc[c as usize];
            }
        }
        debug_assert!(state.k == self.k);
        ll
    }
}

/// Top `n` terms of a topic by descending weight, ties by ascending id.
pub fn top_terms(model: &TopicModel, topic: usize, n: usize) -> Result<Vec<RankedTerm>> {
    let row = model.phi.get(topic).ok_or(Error::Index { what: "topic", index: topic, len: model.k() })?;
    if n == 0 {
        return Err(Error::config("n", "must be >= 1"));
    }
    Ok(rank_row(row, n).into_iter().map(|(i, w)| RankedTerm { term_id: i as u32, weight: w }).collect())
}

/// Top `n` documents of a topic by `theta[d][topic]`; ties go to the longer
/// document, then the lower id.
pub fn top_documents(model: &TopicModel, topic: usize, n: usize) -> Result<Vec<RankedDocument>> {
    if topic >= model.k() {
        return Err(Error::Index { what: "topic", index: topic, len: model.k() });
    }
    if n == 0 {
        return Err(Error::config("n", "must be >= 1"));
    }
    let mut ids: Vec<usize> = (0..model.num_docs()).collect();
    ids.sort_by(|&a, &b| {
        model.theta[b][topic]
            .total_cmp(&model.theta[a][topic])
            .then_with(|| model.doc_lengths[b].cmp(&model.doc_lengths[a]))
            .then_with(|| a.cmp(&b))
    });
    ids.truncate(n);
    Ok(ids.into_iter().map(|d| RankedDocument { doc_id: d, weight: model.theta[d][topic] }).collect())
}

/// Indices of the `n` largest entries, descending, ties by ascending index.
pub fn rank_row(row: &[f64], n: usize) -> Vec<(usize, f64)> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    let cmp = |a: &usize, b: &usize| -> Ordering { row[*b].total_cmp(&row[*a]).then_with(|| a.cmp(b)) };
    let n = n.min(row.len());
    if n < row.len() {
        idx.select_nth_unstable_by(n, cmp);
        idx.truncate(n);
    }
    idx.sort_by(cmp);
    idx.into_iter().map(|i| (i, row[i])).collect()
}
