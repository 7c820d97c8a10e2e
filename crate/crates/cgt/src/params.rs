//! Partial parameter sets shared by CLI flags, the TOML config file and the
//! HTTP API. Every field is optional; [`Merge::or`] layers one set over
//! another and `resolve` fills the rest from defaults and validates.

use cgt_core::corpus::{PreprocessConfig, SynthSpec};
use cgt_core::lda::LdaConfig;
use cgt_core::qdtm::{ExpansionMethod, QdtmConfig};
use cgt_core::selection::SweepConfig;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub trait Merge {
    /// Fields set in `self` win; the rest come from `fallback`.
    fn or(self, fallback: Self) -> Self;
}

macro_rules! partial {
    ($(#[$m:meta])* $name:ident { $($(#[$fm:meta])* $f:ident : $t:ty),* $(,)? }) => {
        $(#[$m])*
        #[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, clap::Args)]
        #[serde(deny_unknown_fields)]
        pub struct $name {
            $($(#[$fm])* #[arg(long)] #[serde(default, skip_serializing_if = "Option::is_none")] pub $f: Option<$t>,)*
        }

        impl Merge for $name {
            fn or(self, fallback: Self) -> Self {
                $name { $($f: self.$f.or(fallback.$f),)* }
            }
        }
    };
}

partial!(
    /// LDA training parameters; `k` is required.
    LdaParams {
        k: usize,
        alpha: f64,
        beta: f64,
        iterations: usize,
        burn_in: usize,
        sample_lag: usize,
        n_samples: usize,
        seed: u64,
    }
);

impl LdaParams {
    pub fn resolve(&self) -> Result<LdaConfig> {
        let k = self.k.ok_or_else(|| Error::invalid("k", "is required"))?;
        let mut c = LdaConfig::new(k, self.seed.unwrap_or(0));
        set(&mut c.alpha, self.alpha);
        set(&mut c.beta, self.beta);
        set(&mut c.iterations, self.iterations);
        set(&mut c.burn_in, self.burn_in);
        set(&mut c.sample_lag, self.sample_lag);
        set(&mut c.n_samples, self.n_samples);
        c.validate()?;
        Ok(c)
    }
}

fn set<T: Copy>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

partial!(
    /// Sweep parameters; the LDA fields form the per-K template.
    SweepParams {
        k_min: usize,
        k_max: usize,
        k_step: usize,
        /// Re-derive alpha as 50/K per row.
        alpha_per_k: bool,
        coherence_top_n: usize,
        window_size: usize,
        /// Worker threads; results do not depend on it.
        jobs: usize,
        alpha: f64,
        beta: f64,
        iterations: usize,
        burn_in: usize,
        sample_lag: usize,
        n_samples: usize,
        seed: u64,
    }
);

impl SweepParams {
    pub fn resolve(&self) -> Result<SweepConfig> {
        let k_min = self.k_min.unwrap_or(5);
        let mut c = SweepConfig::new(k_min, self.k_max.unwrap_or(30), self.seed.unwrap_or(0));
        set(&mut c.k_step, self.k_step);
        set(&mut c.alpha_per_k, self.alpha_per_k);
        set(&mut c.coherence_top_n, self.coherence_top_n);
        set(&mut c.window_size, self.window_size);
        set(&mut c.jobs, self.jobs);
        if self.alpha.is_some() && self.alpha_per_k.is_none() {
            c.alpha_per_k = false;
        }
        set(&mut c.base.alpha, self.alpha);
        set(&mut c.base.beta, self.beta);
        set(&mut c.base.iterations, self.iterations);
        set(&mut c.base.burn_in, self.burn_in);
        set(&mut c.base.sample_lag, self.sample_lag);
        set(&mut c.base.n_samples, self.n_samples);
        if c.jobs == 0 {
            return Err(Error::invalid("jobs", "must be >= 1"));
        }
        c.validate()?;
        Ok(c)
    }
}

partial!(
    QdtmParams {
        /// frequency, kl, embedding or fusion.
        method: String,
        expansion_size: usize,
        embedding_dim: usize,
        background_topics: usize,
        seed_boost: f64,
        threshold: f64,
        alpha: f64,
        beta: f64,
        gamma: f64,
        alpha0: f64,
        max_subtopics: usize,
        min_subtopic_docs: usize,
        iterations: usize,
        burn_in: usize,
        sample_lag: usize,
        seed: u64,
        /// Worker threads for the subtopic samplers.
        jobs: usize,
    }
);

impl QdtmParams {
    pub fn resolve(&self) -> Result<(QdtmConfig, usize)> {
        let mut c = QdtmConfig::default();
        if let Some(m) = &self.method {
            c.method = ExpansionMethod::parse(m).ok_or_else(|| Error::invalid("method", format!("unknown expansion method {m:?}")))?;
        }
        set(&mut c.expansion_size, self.expansion_size);
        set(&mut c.embedding_dim, self.embedding_dim);
        set(&mut c.background_topics, self.background_topics);
        set(&mut c.seed_boost, self.seed_boost);
        set(&mut c.threshold, self.threshold);
        set(&mut c.alpha, self.alpha);
        set(&mut c.beta, self.beta);
        set(&mut c.gamma, self.gamma);
        set(&mut c.alpha0, self.alpha0);
        set(&mut c.max_subtopics, self.max_subtopics);
        set(&mut c.min_subtopic_docs, self.min_subtopic_docs);
        set(&mut c.iterations, self.iterations);
        set(&mut c.burn_in, self.burn_in);
        set(&mut c.sample_lag, self.sample_lag);
        set(&mut c.seed, self.seed);
        c.validate()?;
        let jobs = self.jobs.unwrap_or(1);
        if jobs == 0 {
            return Err(Error::invalid("jobs", "must be >= 1"));
        }
        Ok((c, jobs))
    }
}

partial!(
    /// Corpus build settings. `stoplist_file` replaces the bundled stoplist
    /// with one word per line.
    BuildParams {
        min_token_len: usize,
        min_df: usize,
        max_df_ratio: f64,
        keep_numbers: bool,
        stoplist_file: String,
    }
);

impl BuildParams {
    pub fn resolve(&self) -> Result<PreprocessConfig> {
        let mut c = PreprocessConfig::default();
        set(&mut c.min_token_len, self.min_token_len);
        set(&mut c.min_df, self.min_df);
        set(&mut c.max_df_ratio, self.max_df_ratio);
        set(&mut c.keep_numbers, self.keep_numbers);
        if let Some(path) = &self.stoplist_file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            c.stoplist = text.lines().map(|l| l.trim().to_lowercase()).filter(|l| !l.is_empty() && !l.starts_with('#')).collect();
        }
        if c.min_token_len == 0 {
            return Err(Error::invalid("min_token_len", "must be >= 1"));
        }
        if c.min_df == 0 {
            return Err(Error::invalid("min_df", "must be >= 1"));
        }
        if !(c.max_df_ratio > 0.0 && c.max_df_ratio <= 1.0) {
            return Err(Error::invalid("max_df_ratio", "must lie in (0, 1]"));
        }
        Ok(c)
    }
}

partial!(
    /// Synthetic corpus settings.
    SynthParams {
        k: usize,
        vocab: usize,
        docs: usize,
        doc_len: f64,
        alpha_true: f64,
        beta_true: f64,
        seed: u64,
    }
);

impl SynthParams {
    pub fn resolve(&self) -> Result<SynthSpec> {
        let spec = SynthSpec {
            k_true: self.k.unwrap_or(10),
            vocab_size: self.vocab.unwrap_or(1000),
            n_docs: self.docs.unwrap_or(2000),
            doc_len_mean: self.doc_len.unwrap_or(80.0),
            alpha_true: self.alpha_true.unwrap_or(0.1),
            beta_true: self.beta_true.unwrap_or(0.05),
            seed: self.seed.unwrap_or(0),
            children: None,
        };
        spec.validate()?;
        Ok(spec)
    }
}
