use cgt_core::corpus::{synthetic_term, generate_from_topics, generate_synthetic, Corpus, Document, IngestManifest, Provenance, SynthSpec};
use cgt_core::lda::{top_documents, top_terms, train_lda, LdaConfig, TopicModel};
use cgt_core::linalg::cosine;
use proptest::prelude::*;

fn small_config(k: usize, seed: u64) -> LdaConfig {
    LdaConfig { iterations: 200, burn_in: 150, sample_lag: 5, n_samples: 10, ..LdaConfig::new(k, seed) }
}

fn two_block_corpus(seed: u64) -> cgt_core::corpus::SynthCorpus {
    let phi = vec![vec![0.5, 0.5, 0.0, 0.0], vec![0.0, 0.0, 0.5, 0.5]];
    let spec = SynthSpec { k_true: 2, vocab_size: 4, n_docs: 500, doc_len_mean: 20.0, alpha_true: 0.2, beta_true: 0.1, seed, children: None };
    generate_from_topics(phi, &spec).unwrap()
}

/// Planted rows re-indexed by corpus term id (ids follow frequency order).
fn planted_in_corpus_ids(s: &cgt_core::corpus::SynthCorpus) -> Vec<Vec<f64>> {
    s.phi
        .iter()
        .map(|row| {
            let mut out = vec![0.0; row.len()];
            for (planted_id, w) in row.iter().enumerate() {
                out[s.corpus.vocabulary().id(&synthetic_term(planted_id)).unwrap() as usize] = *w;
            }
            out
        })
        .collect()
}

fn best_match(est: &[Vec<f64>], truth: &[Vec<f64>]) -> Vec<usize> {
    // K = 2 here; try both assignments.
    let direct = cosine(&est[0], &truth[0]) + cosine(&est[1], &truth[1]);
    let swapped = cosine(&est[0], &truth[1]) + cosine(&est[1], &truth[0]);
    if direct >= swapped { vec![0, 1] } else { vec![1, 0] }
}

#[test]
fn two_block_vocabulary_is_recovered() {
    let s = two_block_corpus(3);
    let m = train_lda(&s.corpus, &small_config(2, 11)).unwrap();
    let truth = planted_in_corpus_ids(&s);
    let perm = best_match(&m.phi, &truth);
    for (k, &j) in perm.iter().enumerate() {
        assert!(cosine(&m.phi[k], &truth[j]) >= 0.95, "topic {k}: {:?} vs {:?}", m.phi[k], truth[j]);
    }
}

#[test]
fn top_documents_follow_planted_mixture() {
    let s = two_block_corpus(4);
    let m = train_lda(&s.corpus, &small_config(2, 12)).unwrap();
    let truth = planted_in_corpus_ids(&s);
    let perm = best_match(&m.phi, &truth);
    for (k, &j) in perm.iter().enumerate() {
        for d in top_documents(&m, k, 5).unwrap() {
            assert!(s.theta[d.doc_id][j] > 0.5, "doc {} theta {:?}", d.doc_id, s.theta[d.doc_id]);
        }
    }
}

#[test]
fn published_ranking_is_returned_in_order() {
    let ranking = ["hour", "time", "week", "day", "work", "schedule", "book", "class", "open", "slot"];
    let v = 14;
    let mut row = vec![0.0; v];
    let total: f64 = (1..=10).sum::<usize>() as f64 + 4.0 * 0.5;
    for i in 0..10 {
        row[(i * 3) % v] = (10 - i) as f64 / total;
    }
    for x in row.iter_mut().filter(|x| **x == 0.0) {
        *x = 0.5 / total;
    }
    let mut terms = vec![String::new(); v];
    for (i, t) in ranking.iter().enumerate() {
        terms[(i * 3) % v] = t.to_string();
    }
    let mut filler = 0;
    for t in terms.iter_mut().filter(|t| t.is_empty()) {
        *t = format!("zz{filler}");
        filler += 1;
    }
    let m = TopicModel::from_estimates(vec![row.clone(), row], vec![vec![0.5, 0.5]], vec![1], LdaConfig::new(2, 0), String::new()).unwrap();
    let got: Vec<&str> = top_terms(&m, 0, 10).unwrap().iter().map(|t| terms[t.term_id as usize].as_str()).collect();
    assert_eq!(got, ranking);
}

#[test]
fn top_terms_clamps_to_vocabulary() {
    let m = TopicModel::from_estimates(vec![vec![0.2, 0.3, 0.5]], vec![vec![1.0]], vec![3], LdaConfig::new(1, 0), String::new()).unwrap();
    let t = top_terms(&m, 0, 10).unwrap();
    assert_eq!(t.iter().map(|r| r.term_id).collect::<Vec<_>>(), [2, 1, 0]);
    assert!(top_terms(&m, 1, 3).is_err());
    assert_eq!(top_documents(&m, 0, 4).unwrap()[0].doc_id, 0);
}

#[test]
fn log_likelihood_trends_upward() {
    let spec = SynthSpec { k_true: 4, vocab_size: 120, n_docs: 150, doc_len_mean: 30.0, alpha_true: 0.1, beta_true: 0.05, seed: 2, children: None };
    let s = generate_synthetic(&spec).unwrap();
    let m = train_lda(&s.corpus, &small_config(4, 1)).unwrap();
    let n = m.log_likelihood.len();
    let tenth = n / 10;
    let head: f64 = m.log_likelihood[..tenth].iter().sum::<f64>() / tenth as f64;
    let tail: f64 = m.log_likelihood[n - tenth..].iter().sum::<f64>() / tenth as f64;
    assert!(tail >= head);
}

fn toy_corpus(docs: &[Vec<u32>], v: usize) -> Corpus {
    let documents = docs.iter().enumerate().map(|(i, t)| Document { doc_id: i, source_id: format!("{i}"), tokens: t.clone() }).collect();
    Corpus::from_parts(documents, (0..v).map(|i| format!("t{i}")).collect(), Provenance { config_digest: String::new(), manifest: IngestManifest::default() }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn estimates_are_distributions_and_deterministic(
        docs in proptest::collection::vec(proptest::collection::vec(0u32..6, 1..12), 1..6),
        k in 1usize..4,
        seed in any::<u64>(),
    ) {
        let c = toy_corpus(&docs, 6);
        prop_assume!(c.num_tokens() >= k as u64);
        let cfg = LdaConfig { iterations: 30, burn_in: 10, sample_lag: 2, n_samples: 5, ..LdaConfig::new(k, seed) };
        let m = train_lda(&c, &cfg).unwrap();
        for row in m.phi.iter().chain(&m.theta) {
            prop_assert!(row.iter().all(|x| x.is_finite() && *x >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        prop_assert!(m.state.as_ref().unwrap().is_consistent(&c));
        let again = train_lda(&c, &cfg).unwrap();
        prop_assert_eq!(&m.phi, &again.phi);
        prop_assert_eq!(&m.theta, &again.theta);
    }

    #[test]
    fn rankings_follow_topic_relabeling(seed in any::<u64>()) {
        let spec = SynthSpec { k_true: 3, vocab_size: 30, n_docs: 20, doc_len_mean: 10.0, alpha_true: 0.3, beta_true: 0.1, seed, children: None };
        let s = generate_synthetic(&spec).unwrap();
        let cfg = LdaConfig { iterations: 20, burn_in: 10, sample_lag: 2, n_samples: 3, ..LdaConfig::new(3, seed) };
        let m = train_lda(&s.corpus, &cfg).unwrap();
        let perm = [2usize, 0, 1];
        let p = m.permute_topics(&perm);
        for (new, &old) in perm.iter().enumerate() {
            prop_assert_eq!(top_terms(&p, new, 5).unwrap(), top_terms(&m, old, 5).unwrap());
            prop_assert_eq!(top_documents(&p, new, 5).unwrap(), top_documents(&m, old, 5).unwrap());
        }
    }
}
