use cgt::artifacts::*;
use cgt_core::corpus::{build_corpus, generate_synthetic, PostKind, PreprocessConfig, RawPost, SynthSpec};
use cgt_core::lda::{train_lda, LdaConfig};
use cgt_core::qdtm::{coherence_of_hierarchy, run_qdtm, top_ids, QdtmConfig, Query};
use cgt_core::selection::{select_k, sweep, SelectionPolicy, SweepConfig};
use proptest::prelude::*;

fn synth() -> cgt_core::corpus::SynthCorpus {
    generate_synthetic(&SynthSpec { k_true: 3, vocab_size: 60, n_docs: 80, doc_len_mean: 20.0, alpha_true: 0.1, beta_true: 0.3, seed: 1, children: None }).unwrap()
}

#[test]
fn corpus_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let posts: Vec<RawPost> = ["teachers teaching students online", "students booking classes online", "teachers booking hours"]
        .iter()
        .enumerate()
        .map(|(i, t)| RawPost { id: format!("p{i}"), subreddit: "s".into(), author_ref: String::new(), created_utc: 0, kind: PostKind::Post, parent_id: None, text: t.to_string() })
        .collect();
    let config = PreprocessConfig { min_df: 1, max_df_ratio: 1.0, ..PreprocessConfig::default() };
    let c = build_corpus(&posts, &config).unwrap();
    save_corpus(dir.path(), &c, Some(&config)).unwrap();
    let (back, manifest) = load_corpus(dir.path()).unwrap();
    assert_eq!(back, c);
    assert_eq!(manifest.corpus_digest, c.digest());
    assert_eq!(manifest.preprocess.as_ref(), Some(&config));
    let vocab = std::fs::read_to_string(dir.path().join("vocab.tsv")).unwrap();
    assert_eq!(vocab.lines().count(), c.vocab_size() + 1);
}

#[test]
fn tampered_corpus_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let s = synth();
    save_corpus(dir.path(), &s.corpus, None).unwrap();
    let docs = std::fs::read_to_string(dir.path().join("docs.jsonl")).unwrap();
    std::fs::write(dir.path().join("docs.jsonl"), docs.replacen("[", "[0,", 1)).unwrap();
    assert!(load_corpus(dir.path()).is_err());
}

#[test]
fn model_round_trip_and_exports() {
    let dir = tempfile::tempdir().unwrap();
    let s = synth();
    let cfg = LdaConfig { iterations: 30, burn_in: 10, sample_lag: 5, n_samples: 4, ..LdaConfig::new(3, 2) };
    let m = train_lda(&s.corpus, &cfg).unwrap();
    save_model(dir.path(), &m).unwrap();
    let back = load_model(dir.path()).unwrap();
    assert_eq!(back.phi, m.phi);
    assert_eq!(back.theta, m.theta);
    assert_eq!(back.digest(), m.digest());
    let bytes = std::fs::read(dir.path().join("phi.bin")).unwrap();
    assert_eq!(&bytes[..4], b"CGTM");
    assert_eq!(bytes.len(), 24 + 8 * 3 * s.corpus.vocab_size());
    let terms = top_terms_csv(&m, &s.corpus, 20).unwrap();
    assert_eq!(terms.lines().next().unwrap(), "topic,rank,term_id,term,weight");
    assert_eq!(terms.lines().count(), 1 + 3 * 20);
    let docs = top_docs_csv(&m, &s.corpus, 5).unwrap();
    assert_eq!(docs.lines().count(), 1 + 3 * 5);
}

#[test]
fn metrics_exports() {
    let s = synth();
    let mut cfg = SweepConfig::new(2, 4, 1);
    cfg.base = LdaConfig { iterations: 30, burn_in: 10, sample_lag: 5, n_samples: 4, ..cfg.base };
    let table = sweep(&s.corpus, &cfg).unwrap();
    let csv = metrics_csv(&table);
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "K,cao,arun,umass,c_v,status,model_digest");
    assert_eq!(lines.count(), 3);
    let doc = MetricsDoc::new(&table, select_k(&table, SelectionPolicy::RankSum).ok());
    let json: MetricsDoc = serde_json::from_slice(&to_json_bytes(&doc)).unwrap();
    assert_eq!(json.table(), table);
    assert!(json.selection.is_some());
}

#[test]
fn hierarchy_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let s = synth();
    let q = Query { label: "zero".into(), terms: top_ids(&s.phi[0], 3).into_iter().map(|i| cgt_core::corpus::synthetic_term(i as usize)).collect() };
    let config = QdtmConfig { background_topics: 3, iterations: 60, burn_in: 40, sample_lag: 10, ..QdtmConfig::default() };
    let h = run_qdtm(&s.corpus, &[q], &config).unwrap();
    let scores = coherence_of_hierarchy(&h, &s.corpus, 110).unwrap();
    let doc = hierarchy_doc(&h, &s.corpus, &scores);
    save_hierarchy(dir.path(), &h, &doc).unwrap();
    let back = load_hierarchy(dir.path()).unwrap();
    assert_eq!(back.digest(), h.digest());
    assert_eq!(doc.nodes[0].top_terms.len(), HIERARCHY_TOP_TERMS);
    assert!(doc.nodes[0].c_v.is_some());
}

#[test]
fn atomic_write_leaves_no_temporaries() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a/b/c.json");
    write_json(&p, &vec![1, 2, 3]).unwrap();
    write_json(&p, &vec![4]).unwrap();
    assert_eq!(read_json::<Vec<i32>>(&p).unwrap(), [4]);
    assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
}

proptest! {
    #[test]
    fn matrix_bytes_round_trip(rows in 0usize..5, cols in 0usize..6, seed in any::<u64>()) {
        let m: Vec<Vec<f64>> = (0..rows).map(|r| (0..cols).map(|c| f64::from_bits(seed.rotate_left((r * 7 + c) as u32) >> 2)).collect()).collect();
        let bytes = matrix_bytes(&m);
        let back = parse_matrix(&bytes).unwrap();
        prop_assert_eq!(back.len(), rows);
        for (a, b) in back.iter().flatten().zip(m.iter().flatten()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
        if !bytes.is_empty() {
            prop_assert!(parse_matrix(&bytes[..bytes.len() - 1]).is_err());
        }
    }
}
