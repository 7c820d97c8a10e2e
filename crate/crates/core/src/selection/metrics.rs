//! The four model-selection metrics: Cao (pairwise topic cosine), Arun
//! (symmetric KL between spectra), UMass and c_v coherence.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::lda::{rank_row, TopicModel};
use crate::linalg::{cosine, singular_values};
use crate::{Error, Result};

/// Floor applied inside logarithms.
pub const EPSILON: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coherence {
    pub per_topic: Vec<f64>,
    pub mean: f64,
}

impl Coherence {
    fn from_scores(per_topic: Vec<f64>) -> Self {
        let mean = if per_topic.is_empty() { 0.0 } else { per_topic.iter().sum::<f64>() / per_topic.len() as f64 };
        Coherence { per_topic, mean }
    }
}

/// Mean cosine similarity over all topic pairs (lower is better).
pub fn cao_metric(phi: &[Vec<f64>]) -> Result<f64> {
    let k = phi.len();
    if k < 2 {
        return Err(Error::UndefinedMetric { metric: "cao", reason: format!("needs K >= 2, got {k}") });
    }
    let mut total = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            total += cosine(&phi[i], &phi[j]);
        }
    }
    Ok(2.0 * total / (k * (k - 1)) as f64)
}

/// Symmetric KL divergence between the normalized singular-value spectrum of
/// `phi` and the normalized, sorted length-weighted topic mass (lower is
/// better).
pub fn arun_metric(phi: &[Vec<f64>], theta: &[Vec<f64>], doc_lengths: &[f64]) -> Result<f64> {
    let k = phi.len();
    let v = phi.first().map_or(0, Vec::len);
    if k > v {
        return Err(Error::config("k", format!("arun needs K <= V, got K={k}, V={v}")));
    }
    if k < 2 {
        return Err(Error::UndefinedMetric { metric: "arun", reason: format!("needs K >= 2, got {k}") });
    }
    if theta.len() != doc_lengths.len() {
        return Err(Error::config("doc_lengths", "one length per theta row"));
    }
    let mut c1 = singular_values(phi);
    let mut c2 = vec![0.0; k];
    for (row, &len) in theta.iter().zip(doc_lengths) {
        for (acc, &x) in c2.iter_mut().zip(row) {
            *acc += len * x;
        }
    }
    c1.sort_by(|a, b| b.total_cmp(a));
    c2.sort_by(|a, b| b.total_cmp(a));
    normalize(&mut c1);
    normalize(&mut c2);
    Ok(kl(&c1, &c2) + kl(&c2, &c1))
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(&a, &b)| if a > 0.0 { a * libm::log(a.max(EPSILON) / b.max(EPSILON)) } else { 0.0 }).sum()
}

/// Top word ids of every topic, by descending phi.
pub fn topic_top_words(model: &TopicModel, top_n: usize) -> Vec<Vec<u32>> {
    model.phi.iter().map(|row| rank_row(row, top_n).into_iter().map(|(i, _)| i as u32).collect()).collect()
}

/// Per-term sorted document lists, reusable across metric calls.
pub struct DocIndex {
    postings: Vec<Vec<u32>>,
}

impl DocIndex {
    pub fn new(corpus: &Corpus) -> Self {
        let mut postings = vec![Vec::new(); corpus.vocab_size()];
        for (d, doc) in corpus.documents().iter().enumerate() {
            for &t in &doc.tokens {
                let list: &mut Vec<u32> = &mut postings[t as usize];
                if list.last() != Some(&(d as u32)) {
                    list.push(d as u32);
                }
            }
        }
        DocIndex { postings }
    }

    pub fn doc_freq(&self, t: u32) -> usize {
        self.postings[t as usize].len()
    }

    pub fn co_doc_freq(&self, a: u32, b: u32) -> usize {
        let (x, y) = (&self.postings[a as usize], &self.postings[b as usize]);
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < x.len() && j < y.len() {
            match x[i].cmp(&y[j]) {
                core::cmp::Ordering::Less => i += 1,
                core::cmp::Ordering::Greater => j += 1,
                core::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }
}

/// UMass coherence of each topic over its top words (higher is better).
pub fn umass_coherence(model: &TopicModel, corpus: &Corpus, top_n: usize) -> Result<Coherence> {
    umass_with_index(&topic_top_words(model, top_n), &DocIndex::new(corpus), top_n)
}

pub fn umass_with_index(top_words: &[Vec<u32>], index: &DocIndex, top_n: usize) -> Result<Coherence> {
    if top_n < 2 {
        return Err(Error::config("top_n", "must be >= 2"));
    }
    let mut scores = Vec::with_capacity(top_words.len());
    for words in top_words {
        let mut score = 0.0;
        for m in 1..words.len() {
            for l in 0..m {
                let df = index.doc_freq(words[l]);
                if df == 0 {
                    return Err(Error::Internal(format!("top word {} occurs in no document", words[l])));
                }
                let co = index.co_doc_freq(words[m], words[l]);
                score += libm::log((co as f64 + 1.0) / df as f64);
            }
        }
        scores.push(score);
    }
    Ok(Coherence::from_scores(scores))
}

/// Boolean sliding-window counts for a fixed set of word groups.
///
/// A document of length `n >= window` contributes `n - window + 1` windows;
/// shorter documents contribute one window holding the whole document.
pub struct WindowCounts {
    pub windows: u64,
    /// Per group: counts of windows containing word `i`.
    pub single: Vec<Vec<u64>>,
    /// Per group: `M x M` counts of windows containing both `i` and `j`.
    pub joint: Vec<Vec<u64>>,
}

impl WindowCounts {
    pub fn count(corpus: &Corpus, groups: &[Vec<u32>], window: usize) -> Self {
        let mut slots: BTreeMap<u32, Vec<(usize, usize)>> = BTreeMap::new();
        for (g, words) in groups.iter().enumerate() {
            for (i, &w) in words.iter().enumerate() {
                slots.entry(w).or_default().push((g, i));
            }
        }
        let mut by_term: Vec<Option<usize>> = vec![None; corpus.vocab_size()];
        let distinct: Vec<u32> = slots.keys().copied().collect();
        for (slot, &w) in distinct.iter().enumerate() {
            if (w as usize) < by_term.len() {
                by_term[w as usize] = Some(slot);
            }
        }
        let slot_members: Vec<&Vec<(usize, usize)>> = distinct.iter().map(|w| &slots[w]).collect();

        let mut single: Vec<Vec<u64>> = groups.iter().map(|g| vec![0; g.len()]).collect();
        let mut joint: Vec<Vec<u64>> = groups.iter().map(|g| vec![0; g.len() * g.len()]).collect();
        let mut masks = vec![0u128; groups.len()];
        let mut present = vec![0u32; distinct.len()];
        let mut windows = 0u64;

        let emit = |masks: &[u128], single: &mut Vec<Vec<u64>>, joint: &mut Vec<Vec<u64>>| {
            for (g, &mask) in masks.iter().enumerate() {
                if mask == 0 {
                    continue;
                }
                let m = groups[g].len();
                let mut a = mask;
                while a != 0 {
                    let i = a.trailing_zeros() as usize;
                    a &= a - 1;
                    single[g][i] += 1;
                    let mut b = a;
                    while b != 0 {
                        let j = b.trailing_zeros() as usize;
                        b &= b - 1;
                        joint[g][i * m + j] += 1;
                        joint[g][j * m + i] += 1;
                    }
                }
            }
        };

        for doc in corpus.documents() {
            let toks = &doc.tokens;
            let span = window.min(toks.len());
            let add = |t: u32, present: &mut [u32], masks: &mut [u128]| {
                if let Some(Some(s)) = by_term.get(t as usize) {
                    present[*s] += 1;
                    if present[*s] == 1 {
                        for &(g, i) in slot_members[*s] {
                            masks[g] |= 1u128 << i;
                        }
                    }
                }
            };
            let remove = |t: u32, present: &mut [u32], masks: &mut [u128]| {
                if let Some(Some(s)) = by_term.get(t as usize) {
                    present[*s] -= 1;
                    if present[*s] == 0 {
                        for &(g, i) in slot_members[*s] {
                            masks[g] &= !(1u128 << i);
                        }
                    }
                }
            };
            for &t in &toks[..span] {
                add(t, &mut present, &mut masks);
            }
            windows += 1;
            emit(&masks, &mut single, &mut joint);
            for start in 1..=(toks.len() - span) {
                remove(toks[start - 1], &mut present, &mut masks);
                add(toks[start + span - 1], &mut present, &mut masks);
                windows += 1;
                emit(&masks, &mut single, &mut joint);
            }
            for &t in &toks[toks.len() - span..] {
                remove(t, &mut present, &mut masks);
            }
        }
        WindowCounts { windows, single, joint }
    }
}

/// NPMI from window counts. Zero joint count gives -1; a pair present in
/// every window gives 1.
pub fn npmi(n_i: u64, n_j: u64, n_ij: u64, windows: u64) -> f64 {
    if n_ij == 0 || windows == 0 {
        return -1.0;
    }
    let w = windows as f64;
    let p_ij = n_ij as f64 / w;
    let p_i = n_i as f64 / w;
    let p_j = n_j as f64 / w;
    let denom = -libm::log(p_ij);
    if denom < EPSILON {
        return 1.0;
    }
    libm::log(p_ij / (p_i * p_j)) / denom
}

/// c_v score of one group from its window counts.
pub fn cv_score(single: &[u64], joint: &[u64], windows: u64) -> f64 {
    let m = single.len();
    if m == 0 {
        return 0.0;
    }
    let vectors: Vec<Vec<f64>> = (0..m)
        .map(|i| (0..m).map(|j| if i == j { 1.0 } else { npmi(single[i], single[j], joint[i * m + j], windows) }).collect())
        .collect();
    let mut total = vec![0.0; m];
    for u in &vectors {
        for (t, x) in total.iter_mut().zip(u) {
            *t += x;
        }
    }
    vectors.iter().map(|u| cosine(u, &total)).sum::<f64>() / m as f64
}

/// c_v coherence of each topic over its top words (higher is better).
pub fn cv_coherence(model: &TopicModel, corpus: &Corpus, top_n: usize, window: usize) -> Result<Coherence> {
    cv_for_groups(corpus, &topic_top_words(model, top_n), top_n, window)
}

/// c_v coherence of arbitrary word groups (each at most 128 words).
pub fn cv_for_groups(corpus: &Corpus, groups: &[Vec<u32>], top_n: usize, window: usize) -> Result<Coherence> {
    if top_n < 2 {
        return Err(Error::config("top_n", "must be >= 2"));
    }
    if window < 1 {
        return Err(Error::config("window", "must be >= 1"));
    }
    if groups.iter().any(|g| g.len() > 128) {
        return Err(Error::config("top_n", "at most 128 words per group"));
    }
    let counts = WindowCounts::count(corpus, groups, window);
    let scores = counts.single.iter().zip(&counts.joint).map(|(s, j)| cv_score(s, j, counts.windows)).collect();
    Ok(Coherence::from_scores(scores))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cao_identical_rows() {
        let row = vec![0.2, 0.3, 0.5];
        assert!((cao_metric(&[row.clone(), row.clone(), row]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cao_orthogonal_rows() {
        assert_eq!(cao_metric(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap(), 0.0);
    }

    #[test]
    fn cao_hand_example() {
        let phi = [vec![0.5, 0.5, 0.0], vec![0.0, 0.5, 0.5], vec![0.5, 0.0, 0.5]];
        assert_eq!(cao_metric(&phi).unwrap(), 0.5);
    }

    #[test]
    fn cao_needs_two_topics() {
        assert!(matches!(cao_metric(&[vec![1.0]]), Err(Error::UndefinedMetric { .. })));
    }

    #[test]
    fn arun_hand_example() {
        // oracle value from the closed-form sum, evaluated at 30 digits
        let phi = [vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let theta = [vec![1.0, 0.0], vec![0.0, 1.0]];
        let v = arun_metric(&phi, &theta, &[10.0, 30.0]).unwrap();
        assert!((v - 0.274_653_072_167_027_4).abs() < 1e-12, "{v}");
    }

    #[test]
    fn arun_zero_when_spectra_match() {
        let phi = [vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let theta = [vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(arun_metric(&phi, &theta, &[20.0, 20.0]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn arun_rejects_more_topics_than_terms() {
        let phi = [vec![1.0], vec![1.0]];
        assert!(matches!(arun_metric(&phi, &[vec![0.5, 0.5]], &[1.0]), Err(Error::Config { .. })));
    }

    #[test]
    fn npmi_edges() {
        assert_eq!(npmi(3, 4, 0, 10), -1.0);
        assert_eq!(npmi(10, 10, 10, 10), 1.0);
        assert!((npmi(4, 4, 4, 10) - 1.0).abs() < 1e-12);
    }
}
