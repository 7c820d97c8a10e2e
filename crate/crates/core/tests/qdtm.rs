use std::collections::BTreeSet;

use cgt_core::corpus::{generate_synthetic, synthetic_term, SynthSpec};
use cgt_core::qdtm::{run_qdtm, top_ids, QdtmConfig, Query};

fn fast(seed: u64) -> QdtmConfig {
    QdtmConfig { background_topics: 4, iterations: 80, burn_in: 50, sample_lag: 10, seed, ..QdtmConfig::default() }
}

#[test]
fn subtopics_partition_their_main_topic() {
    for seed in 0..4 {
        let spec = SynthSpec { k_true: 5, vocab_size: 200, n_docs: 250, doc_len_mean: 40.0, alpha_true: 0.1, beta_true: 0.05, seed, children: None };
        let s = generate_synthetic(&spec).unwrap();
        let queries: Vec<Query> = (0..2).map(|k| Query { label: format!("q{k}"), terms: top_ids(&s.phi[k], 3).into_iter().map(|i| synthetic_term(i as usize)).collect() }).collect();
        let h = run_qdtm(&s.corpus, &queries, &fast(seed)).unwrap();
        h.check().unwrap();
        for t in &h.topics {
            let main: BTreeSet<usize> = t.documents.iter().copied().collect();
            let union: BTreeSet<usize> = t.children.iter().flat_map(|c| c.documents.iter().copied()).collect();
            let total: usize = t.children.iter().map(|c| c.documents.len()).sum();
            assert_eq!(union, main);
            assert_eq!(total, main.len());
        }
        let ids = h.node_ids();
        assert_eq!(ids.iter().collect::<BTreeSet<_>>().len(), ids.len());
        assert_eq!(h.digest(), run_qdtm(&s.corpus, &queries, &fast(seed)).unwrap().digest());
    }
}
