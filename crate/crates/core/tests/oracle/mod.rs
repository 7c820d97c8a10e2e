//! Brute-force reference implementations of the selection metrics, written
//! straight from their definitions, plus a generator of small random cases.

#![allow(dead_code)]

use std::collections::BTreeSet;

use cgt_core::corpus::{Corpus, Document, IngestManifest, Provenance};
use cgt_core::lda::{LdaConfig, TopicModel};
use nalgebra::DMatrix;

/// splitmix64; kept separate from the library generator.
pub struct Gen(u64);

impl Gen {
    pub fn new(seed: u64) -> Self {
        Gen(seed)
    }

    pub fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.next() % (hi - lo + 1) as u64) as usize
    }

    pub fn unit(&mut self) -> f64 {
        (self.next() >> 11) as f64 / (1u64 << 53) as f64
    }

    fn weights(&mut self, n: usize, coarse: bool) -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| if coarse { self.range(0, 3) as f64 } else { self.unit() + 1e-3 }).collect();
        let s: f64 = raw.iter().sum();
        if s == 0.0 {
            return vec![1.0 / n as f64; n];
        }
        raw.iter().map(|x| x / s).collect()
    }
}

pub struct ToyCase {
    pub phi: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    pub docs: Vec<Vec<u32>>,
    pub top_n: usize,
    pub window: usize,
}

impl ToyCase {
    /// K <= 4, V <= 12, D <= 8. Every vocabulary term occurs somewhere.
    pub fn random(seed: u64) -> Self {
        let mut g = Gen::new(seed);
        let k = g.range(2, 4);
        let v = g.range(k, 12);
        let d = g.range(1, 8);
        let mut docs: Vec<Vec<u32>> = (0..d).map(|_| (0..g.range(1, 10)).map(|_| g.range(0, v - 1) as u32).collect()).collect();
        for t in 0..v as u32 {
            if !docs.iter().any(|doc| doc.contains(&t)) {
                let i = g.range(0, d - 1);
                let at = g.range(0, docs[i].len());
                docs[i].insert(at, t);
            }
        }
        let coarse = g.range(0, 2) == 0;
        let phi = (0..k).map(|_| g.weights(v, coarse)).collect();
        let theta = (0..d).map(|_| g.weights(k, false)).collect();
        let top_n = g.range(2, v.min(10));
        let window = g.range(1, 6);
        ToyCase { phi, theta, docs, top_n, window }
    }

    pub fn corpus(&self) -> Corpus {
        let v = self.phi[0].len();
        let documents = self.docs.iter().enumerate().map(|(i, t)| Document { doc_id: i, source_id: format!("d{i}"), tokens: t.clone() }).collect();
        let terms = (0..v).map(|i| format!("w{i}")).collect();
        Corpus::from_parts(documents, terms, Provenance { config_digest: String::new(), manifest: IngestManifest::default() }).unwrap()
    }

    pub fn model(&self) -> TopicModel {
        let lengths = self.docs.iter().map(Vec::len).collect();
        TopicModel::from_estimates(self.phi.clone(), self.theta.clone(), lengths, LdaConfig::new(self.phi.len(), 0), String::new()).unwrap()
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.docs.iter().map(|d| d.len() as f64).collect()
    }
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 { 0.0 } else { dot / (na * nb) }
}

pub fn cao(phi: &[Vec<f64>]) -> f64 {
    let k = phi.len();
    let mut sum = 0.0;
    let mut pairs = 0;
    for i in 0..k {
        for j in 0..k {
            if i < j {
                sum += cos(&phi[i], &phi[j]);
                pairs += 1;
            }
        }
    }
    sum / pairs as f64
}

pub fn arun(phi: &[Vec<f64>], theta: &[Vec<f64>], lengths: &[f64]) -> f64 {
    let (k, v) = (phi.len(), phi[0].len());
    let m = DMatrix::from_fn(k, v, |i, j| phi[i][j]);
    let mut c1: Vec<f64> = m.svd(false, false).singular_values.iter().copied().collect();
    let mut c2: Vec<f64> = (0..k).map(|t| theta.iter().zip(lengths).map(|(row, l)| l * row[t]).sum()).collect();
    for c in [&mut c1, &mut c2] {
        c.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let s: f64 = c.iter().sum();
        c.iter_mut().for_each(|x| *x /= s);
    }
    let kl = |p: &[f64], q: &[f64]| -> f64 { p.iter().zip(q).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a.max(1e-12) / b.max(1e-12)).ln()).sum() };
    kl(&c1, &c2) + kl(&c2, &c1)
}

/// Top `n` term ids of a row: descending weight, ascending id on ties.
pub fn top_words(row: &[f64], n: usize) -> Vec<u32> {
    let mut ids: Vec<usize> = (0..row.len()).collect();
    ids.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
    ids.into_iter().take(n).map(|i| i as u32).collect()
}

pub fn umass(phi: &[Vec<f64>], docs: &[Vec<u32>], top_n: usize) -> Vec<f64> {
    let sets: Vec<BTreeSet<u32>> = docs.iter().map(|d| d.iter().copied().collect()).collect();
    phi.iter()
        .map(|row| {
            let w = top_words(row, top_n);
            let mut s = 0.0;
            for m in 1..w.len() {
                for l in 0..m {
                    let df = sets.iter().filter(|d| d.contains(&w[l])).count() as f64;
                    let co = sets.iter().filter(|d| d.contains(&w[l]) && d.contains(&w[m])).count() as f64;
                    s += ((co + 1.0) / df).ln();
                }
            }
            s
        })
        .collect()
}

/// Every boolean window of every document, as token sets.
pub fn windows(docs: &[Vec<u32>], size: usize) -> Vec<BTreeSet<u32>> {
    let mut out = Vec::new();
    for d in docs {
        if d.len() <= size {
            out.push(d.iter().copied().collect());
        } else {
            for start in 0..=(d.len() - size) {
                out.push(d[start..start + size].iter().copied().collect());
            }
        }
    }
    out
}

pub fn npmi(windows: &[BTreeSet<u32>], a: u32, b: u32) -> f64 {
    let n = windows.len() as f64;
    let pa = windows.iter().filter(|w| w.contains(&a)).count() as f64 / n;
    let pb = windows.iter().filter(|w| w.contains(&b)).count() as f64 / n;
    let pab = windows.iter().filter(|w| w.contains(&a) && w.contains(&b)).count() as f64 / n;
    if pab == 0.0 {
        return -1.0;
    }
    if pab == 1.0 {
        return 1.0;
    }
    (pab / (pa * pb)).ln() / -pab.ln()
}

pub fn cv(phi: &[Vec<f64>], docs: &[Vec<u32>], top_n: usize, window: usize) -> Vec<f64> {
    let wins = windows(docs, window);
    phi.iter()
        .map(|row| {
            let w = top_words(row, top_n);
            let u: Vec<Vec<f64>> = w.iter().map(|&a| w.iter().map(|&b| if a == b { 1.0 } else { npmi(&wins, a, b) }).collect()).collect();
            let total: Vec<f64> = (0..w.len()).map(|j| u.iter().map(|r| r[j]).sum()).collect();
            u.iter().map(|r| cos(r, &total)).sum::<f64>() / w.len() as f64
        })
        .collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Checks one random case against the library; returns the first mismatch.
pub fn check_case(seed: u64) -> Result<(), String> {
    use cgt_core::selection::{arun_metric, cao_metric, cv_coherence, umass_coherence};
    let c = ToyCase::random(seed);
    let (corpus, model) = (c.corpus(), c.model());
    let near = |name: &str, got: f64, want: f64, tol: f64| {
        if (got - want).abs() <= tol { Ok(()) } else { Err(format!("seed {seed}: {name} {got} vs oracle {want}")) }
    };
    near("cao", cao_metric(&c.phi).unwrap(), cao(&c.phi), 1e-9)?;
    near("arun", arun_metric(&c.phi, &c.theta, &c.lengths()).unwrap(), arun(&c.phi, &c.theta, &c.lengths()), 1e-9)?;
    let um = umass_coherence(&model, &corpus, c.top_n).unwrap();
    let um_bf = umass(&c.phi, &c.docs, c.top_n);
    for (a, b) in um.per_topic.iter().zip(&um_bf) {
        near("umass", *a, *b, 1e-9)?;
    }
    near("umass mean", um.mean, mean(&um_bf), 1e-9)?;
    let cvs = cv_coherence(&model, &corpus, c.top_n, c.window).unwrap();
    let cv_bf = cv(&c.phi, &c.docs, c.top_n, c.window);
    for (a, b) in cvs.per_topic.iter().zip(&cv_bf) {
        near("c_v", *a, *b, 1e-6)?;
    }
    near("c_v mean", cvs.mean, mean(&cv_bf), 1e-6)
}
