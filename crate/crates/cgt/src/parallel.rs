//! Thread-pool drivers for the embarrassingly parallel parts of the
//! pipeline. Outputs are assembled in input order, so results never depend
//! on the worker count.

use cgt_core::corpus::Corpus;
use cgt_core::qdtm::{fit_subtopics, run_qdtm_with, HdpParams, QdtmConfig, Query, SubtopicFit, SubtopicJob, TopicHierarchy};
use cgt_core::selection::{evaluate_k, DocIndex, MetricTable, SweepConfig};
use rayon::prelude::*;

use crate::{Error, Result};

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().map_err(|e| Error::invalid("jobs", e.to_string()))
}

/// Sweep over K on `config.jobs` workers.
pub fn sweep(corpus: &Corpus, config: &SweepConfig) -> Result<MetricTable> {
    config.validate()?;
    let index = DocIndex::new(corpus);
    let ks = config.ks();
    let rows = pool(config.jobs)?.install(|| ks.par_iter().map(|&k| evaluate_k(corpus, config, &index, k)).collect());
    Ok(MetricTable::from_rows(rows)?)
}

/// QDTM with the per-query subtopic samplers spread over `jobs` workers.
pub fn run_qdtm(corpus: &Corpus, queries: &[Query], config: &QdtmConfig, jobs: usize) -> Result<TopicHierarchy> {
    let pool = pool(jobs)?;
    let runner = |batch: &[SubtopicJob], v: usize, p: &HdpParams| -> Vec<cgt_core::Result<SubtopicFit>> { pool.install(|| batch.par_iter().map(|j| fit_subtopics(j, v, p)).collect()) };
    Ok(run_qdtm_with(corpus, queries, config, &runner)?)
}
