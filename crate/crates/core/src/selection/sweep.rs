//! Sweeps over K and rank-sum selection.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::metrics::{arun_metric, cao_metric, cv_for_groups, topic_top_words, umass_with_index, DocIndex};
use crate::corpus::Corpus;
use crate::lda::{train_lda, LdaConfig, TopicModel};
use crate::rng::mix;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub k_step: usize,
    /// Template for every model; `k` and `seed` are replaced per row.
    pub base: LdaConfig,
    /// Re-derive `alpha = 50 / K` per row instead of copying the template's.
    pub alpha_per_k: bool,
    pub coherence_top_n: usize,
    pub window_size: usize,
    /// Worker count hint; results never depend on it.
    pub jobs: usize,
}

impl SweepConfig {
    pub fn new(k_min: usize, k_max: usize, seed: u64) -> Self {
        SweepConfig {
            k_min,
            k_max,
            k_step: 1,
            base: LdaConfig::new(k_min.max(1), seed),
            alpha_per_k: true,
            coherence_top_n: 10,
            window_size: 110,
            jobs: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_min < 1 {
            return Err(Error::config("k_min", "must be >= 1"));
        }
        if self.k_max < self.k_min {
            return Err(Error::config("k_max", "must be >= k_min"));
        }
        if self.k_step < 1 {
            return Err(Error::config("k_step", "must be >= 1"));
        }
        if self.coherence_top_n < 2 {
            return Err(Error::config("coherence_top_n", "must be >= 2"));
        }
        if self.window_size < 1 {
            return Err(Error::config("window_size", "must be >= 1"));
        }
        self.base.with_k(self.k_min, self.alpha_per_k).validate()
    }

    pub fn ks(&self) -> Vec<usize> {
        (self.k_min..=self.k_max).step_by(self.k_step.max(1)).collect()
    }

    /// LDA configuration for row `k`: seed = `mix(base.seed, k)`.
    pub fn config_for(&self, k: usize) -> LdaConfig {
        let mut c = self.base.with_k(k, self.alpha_per_k);
        c.seed = mix(self.base.seed, k as u64);
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum RowStatus {
    Done,
    Failed { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub k: usize,
    pub cao: f64,
    pub arun: f64,
    pub umass: f64,
    pub c_v: f64,
    pub status: RowStatus,
    pub model_digest: String,
}

impl MetricRow {
    pub fn failed(k: usize, reason: impl ToString) -> Self {
        MetricRow {
            k,
            cao: f64::NAN,
            arun: f64::NAN,
            umass: f64::NAN,
            c_v: f64::NAN,
            status: RowStatus::Failed { reason: reason.to_string() },
            model_digest: String::new(),
        }
    }

    pub fn is_done(&self) -> bool {
        self.status == RowStatus::Done
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub rows: Vec<MetricRow>,
}

/// Min-max normalized metric columns for plotting; failed rows are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedCurves {
    pub k: Vec<usize>,
    pub cao: Vec<Option<f64>>,
    pub arun: Vec<Option<f64>>,
    pub umass: Vec<Option<f64>>,
    pub c_v: Vec<Option<f64>>,
}

impl MetricTable {
    /// Orders rows by K; errors when every row failed.
    pub fn from_rows(mut rows: Vec<MetricRow>) -> Result<Self> {
        rows.sort_by_key(|r| r.k);
        if rows.is_empty() || rows.iter().all(|r| !r.is_done()) {
            return Err(Error::Sweep);
        }
        Ok(MetricTable { rows })
    }

    pub fn row(&self, k: usize) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.k == k)
    }

    pub fn normalized(&self) -> NormalizedCurves {
        let column = |f: fn(&MetricRow) -> f64| -> Vec<Option<f64>> {
            let done: Vec<f64> = self.rows.iter().filter(|r| r.is_done()).map(f).collect();
            let lo = done.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = done.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            self.rows
                .iter()
                .map(|r| r.is_done().then(|| if hi > lo { (f(r) - lo) / (hi - lo) } else { 0.0 }))
                .collect()
        };
        NormalizedCurves {
            k: self.rows.iter().map(|r| r.k).collect(),
            cao: column(|r| r.cao),
            arun: column(|r| r.arun),
            umass: column(|r| r.umass),
            c_v: column(|r| r.c_v),
        }
    }
}

/// All four metrics for one trained model.
pub fn evaluate_model(model: &TopicModel, corpus: &Corpus, index: &DocIndex, top_n: usize, window: usize) -> Result<MetricRow> {
    let top = topic_top_words(model, top_n);
    let cao = cao_metric(&model.phi)?;
    let arun = arun_metric(&model.phi, &model.theta, &corpus.doc_lengths())?;
    let umass = umass_with_index(&top, index, top_n)?.mean;
    let c_v = cv_for_groups(corpus, &top, top_n, window)?.mean;
    Ok(MetricRow { k: model.k(), cao, arun, umass, c_v, status: RowStatus::Done, model_digest: model.digest() })
}

/// Trains and scores one K. Failures become failed rows.
pub fn evaluate_k(corpus: &Corpus, config: &SweepConfig, index: &DocIndex, k: usize) -> MetricRow {
    let run = || -> Result<MetricRow> {
        let model = train_lda(corpus, &config.config_for(k))?;
        evaluate_model(&model, corpus, index, config.coherence_top_n, config.window_size)
    };
    run().unwrap_or_else(|e| MetricRow::failed(k, e))
}

/// Sequential sweep. The `cgt` crate provides the parallel driver; both
/// produce identical tables.
pub fn sweep(corpus: &Corpus, config: &SweepConfig) -> Result<MetricTable> {
    config.validate()?;
    let index = DocIndex::new(corpus);
    MetricTable::from_rows(config.ks().into_iter().map(|k| evaluate_k(corpus, config, &index, k)).collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    #[default]
    RankSum,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankRow {
    pub k: usize,
    pub cao: usize,
    pub arun: usize,
    pub umass: usize,
    pub c_v: usize,
    pub sum: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub k: usize,
    pub policy: SelectionPolicy,
    pub ranks: Vec<RankRow>,
}

/// Ranks each metric over the finished rows (1 = best, ties share the best
/// rank), sums ranks, and returns the K with the smallest sum, preferring
/// the smaller K on ties.
pub fn select_k(table: &MetricTable, policy: SelectionPolicy) -> Result<Selection> {
    let done: Vec<&MetricRow> = table.rows.iter().filter(|r| r.is_done()).collect();
    if done.len() < 2 {
        return Err(Error::Selection(format!("need at least 2 finished rows, have {}", done.len())));
    }
    let rank = |value: f64, get: fn(&MetricRow) -> f64, lower_is_better: bool| -> usize {
        1 + done
            .iter()
            .filter(|r| {
                let other = get(r);
                if lower_is_better { other < value } else { other > value }
            })
            .count()
    };
    let mut ranks: Vec<RankRow> = done
        .iter()
        .map(|r| {
            let cao = rank(r.cao, |x| x.cao, true);
            let arun = rank(r.arun, |x| x.arun, true);
            let umass = rank(r.umass, |x| x.umass, false);
            let c_v = rank(r.c_v, |x| x.c_v, false);
            RankRow { k: r.k, cao, arun, umass, c_v, sum: cao + arun + umass + c_v }
        })
        .collect();
    ranks.sort_by_key(|r| r.k);
    let best = ranks.iter().min_by(|a, b| a.sum.cmp(&b.sum).then(a.k.cmp(&b.k))).expect("non-empty");
    Ok(Selection { k: best.k, policy, ranks: ranks.clone() })
}
