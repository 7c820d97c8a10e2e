//! Direct-assignment HDP sampler (weak-limit truncation) for the subtopics
//! of one main topic.

use alloc::vec;
use alloc::vec::Vec;

use crate::rng::{streams, Stream};
use crate::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct SubtopicJob {
    /// Index of the query in the input list.
    pub query_index: usize,
    /// Main-set document ids.
    pub docs: Vec<usize>,
    /// Tokens of each main-set document attributed to the main topic.
    pub tokens: Vec<Vec<u32>>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubtopicFit {
    /// Term distribution per surviving subtopic.
    pub phi: Vec<Vec<f64>>,
    /// Document ids per subtopic; disjoint and covering the job's docs.
    pub members: Vec<Vec<usize>>,
}

#[derive(Clone, Copy, Debug)]
pub struct HdpParams {
    pub gamma: f64,
    pub alpha0: f64,
    pub eta: f64,
    pub truncation: usize,
    pub iterations: usize,
    pub min_docs: usize,
}

struct Counts {
    t: usize,
    doc_topic: Vec<u32>,
    word_topic: Vec<u32>,
    topic_total: Vec<u64>,
}

/// Samples `p(z = k) ∝ (n_dk + α0 β_k)(n_kw + η)/(n_k + Vη)`, resampling table
/// counts (Antoniak) and the global weights `β ~ Dir(γ/T + m_k)` after every
/// sweep. The final state is collapsed: every document goes to its dominant
/// subtopic, then subtopics with fewer than `min_docs` documents are folded
/// into the sibling holding the most documents.
pub fn fit_subtopics(job: &SubtopicJob, v: usize, p: &HdpParams) -> Result<SubtopicFit> {
    let t = p.truncation.max(1);
    let n_docs = job.docs.len();
    let mut rng = Stream::new(job.seed, streams::QDTM_SUB);
    let mut c = Counts { t, doc_topic: vec![0; n_docs * t], word_topic: vec![0; v * t], topic_total: vec![0; t] };
    let mut beta = vec![1.0 / t as f64; t];
    let mut weights = vec![0.0; t];
    let veta = v as f64 * p.eta;
    // sequential initialization: each token is drawn from the conditional
    // given the tokens placed before it
    let mut z: Vec<Vec<u32>> = Vec::with_capacity(n_docs);
    for (d, doc) in job.tokens.iter().enumerate() {
        let mut zd = Vec::with_capacity(doc.len());
        for &w in doc {
            let new = sample_token(&c, d, w, &beta, p, veta, &mut weights, &mut rng);
            c.add(d, w, new);
            zd.push(new as u32);
        }
        z.push(zd);
    }
    for _ in 0..p.iterations {
        for (d, doc) in job.tokens.iter().enumerate() {
            for (i, &w) in doc.iter().enumerate() {
                c.remove(d, w, z[d][i] as usize);
                let new = sample_token(&c, d, w, &beta, p, veta, &mut weights, &mut rng);
                c.add(d, w, new);
                z[d][i] = new as u32;
            }
        }
        let mut tables = vec![p.gamma / t as f64; t];
        for d in 0..n_docs {
            for k in 0..t {
                let n = c.doc_topic[d * t + k];
                let a = p.alpha0 * beta[k];
                for j in 0..n {
                    if rng.bernoulli(a / (a + j as f64)) {
                        tables[k] += 1.0;
                    }
                }
            }
        }
        beta = rng.dirichlet(&tables);
    }
    Ok(collapse(c, job, v, p))
}

impl Counts {
    fn add(&mut self, d: usize, w: u32, k: usize) {
        self.doc_topic[d * self.t + k] += 1;
        self.word_topic[w as usize * self.t + k] += 1;
        self.topic_total[k] += 1;
    }

    fn remove(&mut self, d: usize, w: u32, k: usize) {
        self.doc_topic[d * self.t + k] -= 1;
        self.word_topic[w as usize * self.t + k] -= 1;
        self.topic_total[k] -= 1;
    }
}

#[allow(clippy::too_many_arguments)]
fn sample_token(c: &Counts, d: usize, w: u32, beta: &[f64], p: &HdpParams, veta: f64, weights: &mut [f64], rng: &mut Stream) -> usize {
    let t = c.t;
    let dt = &c.doc_topic[d * t..(d + 1) * t];
    let wt = &c.word_topic[w as usize * t..(w as usize + 1) * t];
    let mut total = 0.0;
    for k in 0..t {
        let x = (dt[k] as f64 + p.alpha0 * beta[k]) * (wt[k] as f64 + p.eta) / (c.topic_total[k] as f64 + veta);
        weights[k] = x;
        total += x;
    }
    rng.categorical(weights, total)
}

fn dominant(c: &Counts, d: usize, active: &[usize]) -> usize {
    let row = &c.doc_topic[d * c.t..(d + 1) * c.t];
    let mut best = active[0];
    for &k in &active[1..] {
        if row[k] > row[best] {
            best = k;
        }
    }
    best
}

fn collapse(mut c: Counts, job: &SubtopicJob, v: usize, p: &HdpParams) -> SubtopicFit {
    let t = c.t;
    let n_docs = job.docs.len();
    let mut active: Vec<usize> = (0..t).filter(|&k| c.topic_total[k] > 0).collect();
    if active.is_empty() {
        active.push(0);
    }
    loop {
        let mut held = vec![0usize; t];
        for d in 0..n_docs {
            held[dominant(&c, d, &active)] += 1;
        }
        if active.len() < 2 {
            break;
        }
        let small = active
            .iter()
            .copied()
            .filter(|&k| held[k] < p.min_docs)
            .min_by(|&a, &b| held[a].cmp(&held[b]).then(c.topic_total[a].cmp(&c.topic_total[b])).then(b.cmp(&a)));
        let Some(small) = small else { break };
        let target = active
            .iter()
            .copied()
            .filter(|&k| k != small)
            .max_by(|&a, &b| held[a].cmp(&held[b]).then(c.topic_total[a].cmp(&c.topic_total[b])).then(b.cmp(&a)))
            .expect("at least two active subtopics");
        for d in 0..n_docs {
            let moved = core::mem::take(&mut c.doc_topic[d * t + small]);
            c.doc_topic[d * t + target] += moved;
        }
        for w in 0..v {
            let moved = core::mem::take(&mut c.word_topic[w * t + small]);
            c.word_topic[w * t + target] += moved;
        }
        c.topic_total[target] += core::mem::take(&mut c.topic_total[small]);
        active.retain(|&k| k != small);
    }
    let mut members: Vec<(usize, Vec<usize>)> = active.iter().map(|&k| (k, Vec::new())).collect();
    for d in 0..n_docs {
        let k = dominant(&c, d, &active);
        members.iter_mut().find(|(x, _)| *x == k).expect("dominant is active").1.push(job.docs[d]);
    }
    members.retain(|(_, m)| !m.is_empty());
    members.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
    let veta = v as f64 * p.eta;
    let phi = members
        .iter()
        .map(|&(k, _)| {
            let denom = c.topic_total[k] as f64 + veta;
            (0..v).map(|w| (c.word_topic[w * t + k] as f64 + p.eta) / denom).collect()
        })
        .collect();
    SubtopicFit { phi, members: members.into_iter().map(|(_, m)| m).collect() }
}
