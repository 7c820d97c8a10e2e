#![allow(dead_code)]

use cgt::store::{LabelingInput, RunSpec, Store};
use cgt_core::corpus::SynthSpec;
use cgt_core::lda::LdaConfig;
use cgt_core::validation::Theme;

pub fn small_spec(seed: u64) -> SynthSpec {
    SynthSpec { k_true: 3, vocab_size: 60, n_docs: 90, doc_len_mean: 30.0, alpha_true: 0.1, beta_true: 0.3, seed, children: None }
}

pub fn quick_lda(k: usize, seed: u64) -> LdaConfig {
    LdaConfig { iterations: 40, burn_in: 20, sample_lag: 5, n_samples: 4, ..LdaConfig::new(k, seed) }
}

pub fn themes() -> Vec<Theme> {
    vec![
        Theme { theme_id: 1, label: "Pay".into(), description: String::new(), comparable: true },
        Theme { theme_id: 2, label: "Hiring".into(), description: String::new(), comparable: true },
    ]
}

pub fn label(labels: &[&str], refs: &[u32]) -> LabelingInput {
    LabelingInput { labels: labels.iter().map(|s| s.to_string()).collect(), theme_refs: refs.to_vec(), annotator: "ann".into(), timestamp: Some(1) }
}

/// A synthetic project with two labeled three-topic LDA runs. Run A covers
/// both themes; run B covers "Pay" and a novel "Scheduling" topic.
pub struct Labeled {
    pub project: String,
    pub run_a: String,
    pub run_b: String,
}

pub fn labeled_project(store: &Store, name: &str) -> Labeled {
    let p = store.create_project(name).unwrap().project_id;
    store.synth(&p, &small_spec(3)).unwrap();
    store.set_themes(&p, themes(), "ann").unwrap();
    let a = store.run_now(&p, RunSpec::Lda { config: quick_lda(3, 1) }).unwrap().run_id;
    let b = store.run_now(&p, RunSpec::Lda { config: quick_lda(3, 2) }).unwrap().run_id;
    store.put_labeling(&a, 0, label(&["Pay"], &[1]), None).unwrap();
    store.put_labeling(&a, 1, label(&["Hiring"], &[2]), None).unwrap();
    store.put_labeling(&a, 2, label(&["Random"], &[]), None).unwrap();
    store.put_labeling(&b, 0, label(&["Pay"], &[1]), None).unwrap();
    store.put_labeling(&b, 1, label(&["Scheduling"], &[]), None).unwrap();
    store.put_labeling(&b, 2, label(&["Random"], &[]), None).unwrap();
    Labeled { project: p, run_a: a, run_b: b }
}
