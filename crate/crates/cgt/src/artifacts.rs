//! On-disk formats.
//!
//! A corpus directory holds `vocab.tsv` (`id`, `term`, `term_freq`,
//! `doc_freq`), `docs.jsonl` (one `{doc_id, source_id, tokens}` per line) and
//! `manifest.json`.
//!
//! A model directory holds `phi.bin`, `theta.bin` and `model.json`. Matrix
//! files are little-endian: the magic `CGTM`, a `u32` format version (1),
//! `u64` rows, `u64` columns, then `rows * cols` `f64` values row-major.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use cgt_core::corpus::{Corpus, Document, PreprocessConfig, Provenance};
use cgt_core::digest::sha256_hex;
use cgt_core::lda::{rank_row, top_documents, top_terms, LdaConfig, TopicModel};
use cgt_core::qdtm::{NodeScore, TopicHierarchy, Unmodelable};
use cgt_core::selection::{MetricRow, MetricTable, NormalizedCurves, RowStatus, Selection};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::store::Judgment;
use crate::{Error, Result};

const MATRIX_MAGIC: &[u8; 4] = b"CGTM";
const MATRIX_VERSION: u32 = 1;

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes through a temporary sibling and renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("file");
    let tmp = path.with_file_name(format!(".{name}.{}.{n}.tmp", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("serializable");
    v.push(b'\n');
    v
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_json_bytes(value))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// SHA-256 over `(name, content)` of the named files, in the given order.
pub fn digest_files(dir: &Path, names: &[&str]) -> Result<String> {
    let mut buf = Vec::new();
    for name in names {
        let bytes = read_bytes(&dir.join(name))?;
        buf.extend_from_slice(name.as_bytes());
        buf.push(0);
        buf.extend_from_slice(sha256_hex(&bytes).as_bytes());
        buf.push(b'\n');
    }
    Ok(sha256_hex(&buf))
}

pub fn matrix_bytes(rows: &[Vec<f64>]) -> Vec<u8> {
    let cols = rows.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(24 + rows.len() * cols * 8);
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&MATRIX_VERSION.to_le_bytes());
    out.extend_from_slice(&(rows.len() as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    for r in rows {
        assert_eq!(r.len(), cols, "ragged matrix");
        for x in r {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn parse_matrix(bytes: &[u8]) -> std::result::Result<Vec<Vec<f64>>, String> {
    if bytes.len() < 24 || &bytes[..4] != MATRIX_MAGIC {
        return Err("not a matrix file".into());
    }
    let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap()) as usize;
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != MATRIX_VERSION {
        return Err(format!("unsupported matrix version {version}"));
    }
    let (rows, cols) = (u64_at(8), u64_at(16));
    if rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).map(|n| n + 24) != Some(bytes.len()) {
        return Err(format!("size mismatch for {rows}x{cols}"));
    }
    Ok((0..rows)
        .map(|r| (0..cols).map(|c| f64::from_le_bytes(bytes[24 + (r * cols + c) * 8..][..8].try_into().unwrap())).collect())
        .collect())
}

pub fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    parse_matrix(&read_bytes(path)?).map_err(|e| Error::format(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub corpus_digest: String,
    pub n_docs: usize,
    pub vocab_size: usize,
    pub n_tokens: u64,
    pub provenance: Provenance,
    pub preprocess: Option<PreprocessConfig>,
    /// Name of the project file holding the author-hash salt.
    pub salt_ref: String,
}

#[derive(Serialize, Deserialize)]
struct DocLine {
    doc_id: usize,
    source_id: String,
    tokens: Vec<u32>,
}

pub fn save_corpus(dir: &Path, corpus: &Corpus, preprocess: Option<&PreprocessConfig>) -> Result<()> {
    let mut tsv = csv::WriterBuilder::new().delimiter(b'\t').from_writer(Vec::new());
    tsv.write_record(["id", "term", "term_freq", "doc_freq"]).expect("in-memory write");
    let v = corpus.vocabulary();
    for (i, term) in v.terms().iter().enumerate() {
        tsv.write_record([i.to_string(), term.clone(), v.term_freq()[i].to_string(), v.doc_freq()[i].to_string()]).expect("in-memory write");
    }
    write_atomic(&dir.join("vocab.tsv"), &tsv.into_inner().expect("in-memory flush"))?;
    let mut docs = Vec::new();
    for d in corpus.documents() {
        serde_json::to_writer(&mut docs, &DocLine { doc_id: d.doc_id, source_id: d.source_id.clone(), tokens: d.tokens.clone() }).expect("in-memory write");
        docs.push(b'\n');
    }
    write_atomic(&dir.join("docs.jsonl"), &docs)?;
    write_json(
        &dir.join("manifest.json"),
        &CorpusManifest {
            corpus_digest: corpus.digest().to_string(),
            n_docs: corpus.num_docs(),
            vocab_size: corpus.vocab_size(),
            n_tokens: corpus.num_tokens(),
            provenance: corpus.provenance().clone(),
            preprocess: preprocess.cloned(),
            salt_ref: "salt".into(),
        },
    )
}

/// Loads and re-validates a corpus directory, checking the stored digest.
pub fn load_corpus(dir: &Path) -> Result<(Corpus, CorpusManifest)> {
    let manifest: CorpusManifest = read_json(&dir.join("manifest.json"))?;
    let vocab_path = dir.join("vocab.tsv");
    let mut rdr = csv::ReaderBuilder::new().delimiter(b'\t').from_path(&vocab_path).map_err(|e| Error::format(&vocab_path, e))?;
    let mut terms = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(&vocab_path, e))?;
        if rec.get(0) != Some(i.to_string().as_str()) {
            return Err(Error::format(&vocab_path, format!("row {i} is out of order")));
        }
        terms.push(rec.get(1).unwrap_or("").to_string());
    }
    let docs_path = dir.join("docs.jsonl");
    let f = fs::File::open(&docs_path).map_err(|e| Error::io(&docs_path, e))?;
    let mut documents = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(&docs_path, e))?;
        let d: DocLine = serde_json::from_str(&line).map_err(|e| Error::format(&docs_path, e))?;
        documents.push(Document { doc_id: d.doc_id, source_id: d.source_id, tokens: d.tokens });
    }
    let corpus = Corpus::from_parts(documents, terms, manifest.provenance.clone())?;
    if corpus.digest() != manifest.corpus_digest {
        return Err(Error::format(dir, "corpus digest does not match manifest"));
    }
    Ok((corpus, manifest))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub config: LdaConfig,
    pub corpus_digest: String,
    pub model_digest: String,
    pub k: usize,
    pub vocab_size: usize,
    pub num_docs: usize,
    pub doc_lengths: Vec<usize>,
    pub log_likelihood: Vec<f64>,
}

pub fn save_model(dir: &Path, model: &TopicModel) -> Result<()> {
    write_atomic(&dir.join("phi.bin"), &matrix_bytes(&model.phi))?;
    write_atomic(&dir.join("theta.bin"), &matrix_bytes(&model.theta))?;
    write_json(
        &dir.join("model.json"),
        &ModelMeta {
            config: model.config.clone(),
            corpus_digest: model.corpus_digest.clone(),
            model_digest: model.digest(),
            k: model.k(),
            vocab_size: model.vocab_size(),
            num_docs: model.num_docs(),
            doc_lengths: model.doc_lengths.clone(),
            log_likelihood: model.log_likelihood.clone(),
        },
    )
}

pub fn load_model(dir: &Path) -> Result<TopicModel> {
    let meta: ModelMeta = read_json(&dir.join("model.json"))?;
    let phi = read_matrix(&dir.join("phi.bin"))?;
    let theta = read_matrix(&dir.join("theta.bin"))?;
    let mut model = TopicModel::from_estimates(phi, theta, meta.doc_lengths, meta.config, meta.corpus_digest)?;
    model.log_likelihood = meta.log_likelihood;
    if model.digest() != meta.model_digest {
        return Err(Error::format(dir, "model digest does not match model.json"));
    }
    Ok(model)
}

fn csv_string(rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

/// `topic,rank,term_id,term,weight` for the top `n` terms of every topic.
pub fn top_terms_csv(model: &TopicModel, corpus: &Corpus, n: usize) -> Result<String> {
    let mut rows = vec![vec!["topic".into(), "rank".into(), "term_id".into(), "term".into(), "weight".into()]];
    for k in 0..model.k() {
        for (r, t) in top_terms(model, k, n)?.iter().enumerate() {
            rows.push(vec![k.to_string(), (r + 1).to_string(), t.term_id.to_string(), corpus.vocabulary().term(t.term_id).to_string(), t.weight.to_string()]);
        }
    }
    Ok(csv_string(rows))
}

/// `topic,rank,doc_id,source_id,weight` for the top `n` documents of every topic.
pub fn top_docs_csv(model: &TopicModel, corpus: &Corpus, n: usize) -> Result<String> {
    let mut rows = vec![vec!["topic".into(), "rank".into(), "doc_id".into(), "source_id".into(), "weight".into()]];
    for k in 0..model.k() {
        for (r, d) in top_documents(model, k, n)?.iter().enumerate() {
            rows.push(vec![k.to_string(), (r + 1).to_string(), d.doc_id.to_string(), corpus.documents()[d.doc_id].source_id.clone(), d.weight.to_string()]);
        }
    }
    Ok(csv_string(rows))
}

fn num(x: f64) -> String {
    if x.is_finite() { x.to_string() } else { String::new() }
}

/// `K,cao,arun,umass,c_v,status,model_digest`; failed rows leave metric
/// cells empty.
pub fn metrics_csv(table: &MetricTable) -> String {
    let mut rows = vec![["K", "cao", "arun", "umass", "c_v", "status", "model_digest"].map(String::from).to_vec()];
    for r in &table.rows {
        let status = match &r.status {
            RowStatus::Done => "done".to_string(),
            RowStatus::Failed { reason } => format!("failed: {reason}"),
        };
        rows.push(vec![r.k.to_string(), num(r.cao), num(r.arun), num(r.umass), num(r.c_v), status, r.model_digest.clone()]);
    }
    csv_string(rows)
}

/// JSON form of a metric row; metrics of failed rows are `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRowDoc {
    pub k: usize,
    pub cao: Option<f64>,
    pub arun: Option<f64>,
    pub umass: Option<f64>,
    pub c_v: Option<f64>,
    pub status: RowStatus,
    pub model_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsDoc {
    pub rows: Vec<MetricRowDoc>,
    pub normalized: NormalizedCurves,
    pub selection: Option<Selection>,
}

impl MetricsDoc {
    pub fn new(table: &MetricTable, selection: Option<Selection>) -> Self {
        let f = |x: f64| x.is_finite().then_some(x);
        MetricsDoc {
            rows: table
                .rows
                .iter()
                .map(|r| MetricRowDoc { k: r.k, cao: f(r.cao), arun: f(r.arun), umass: f(r.umass), c_v: f(r.c_v), status: r.status.clone(), model_digest: r.model_digest.clone() })
                .collect(),
            normalized: table.normalized(),
            selection,
        }
    }

    pub fn table(&self) -> MetricTable {
        let f = |x: Option<f64>| x.unwrap_or(f64::NAN);
        MetricTable {
            rows: self
                .rows
                .iter()
                .map(|r| MetricRow { k: r.k, cao: f(r.cao), arun: f(r.arun), umass: f(r.umass), c_v: f(r.c_v), status: r.status.clone(), model_digest: r.model_digest.clone() })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermWeight {
    pub term: String,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchyNode {
    pub node_id: String,
    pub label: String,
    pub top_terms: Vec<TermWeight>,
    pub documents: Vec<usize>,
    pub c_v: Option<f64>,
    pub judgment: Option<Judgment>,
    pub children: Vec<HierarchyNode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchyDoc {
    pub hierarchy_digest: String,
    pub corpus_digest: String,
    pub nodes: Vec<HierarchyNode>,
    pub background: Vec<Vec<TermWeight>>,
    pub unmodelable: Vec<Unmodelable>,
}

pub const HIERARCHY_TOP_TERMS: usize = 20;

fn term_weights(phi: &[f64], corpus: &Corpus, n: usize) -> Vec<TermWeight> {
    rank_row(phi, n).into_iter().map(|(i, w)| TermWeight { term: corpus.vocabulary().term(i as u32).to_string(), weight: w }).collect()
}

/// Nested view of a hierarchy for reading and judging. Judgments are left
/// empty; callers fill them from the project state.
pub fn hierarchy_doc(h: &TopicHierarchy, corpus: &Corpus, scores: &[NodeScore]) -> HierarchyDoc {
    let score = |id: &str| scores.iter().find(|s| s.node_id == id).map(|s| s.c_v);
    let nodes = h
        .topics
        .iter()
        .map(|t| HierarchyNode {
            node_id: t.node_id.clone(),
            label: t.label.clone(),
            top_terms: term_weights(&t.phi, corpus, HIERARCHY_TOP_TERMS),
            documents: t.documents.clone(),
            c_v: score(&t.node_id),
            judgment: None,
            children: t
                .children
                .iter()
                .map(|c| HierarchyNode {
                    node_id: c.node_id.clone(),
                    label: format!("{} / {}", t.label, c.node_id),
                    top_terms: term_weights(&c.phi, corpus, HIERARCHY_TOP_TERMS),
                    documents: c.documents.clone(),
                    c_v: score(&c.node_id),
                    judgment: None,
                    children: Vec::new(),
                })
                .collect(),
        })
        .collect();
    HierarchyDoc {
        hierarchy_digest: h.digest(),
        corpus_digest: h.corpus_digest.clone(),
        nodes,
        background: h.background.iter().map(|b| term_weights(b, corpus, 10)).collect(),
        unmodelable: h.unmodelable.clone(),
    }
}

pub fn save_hierarchy(dir: &Path, h: &TopicHierarchy, doc: &HierarchyDoc) -> Result<()> {
    write_json(&dir.join("hierarchy_model.json"), h)?;
    write_json(&dir.join("hierarchy.json"), doc)
}

pub fn load_hierarchy(dir: &Path) -> Result<TopicHierarchy> {
    let h: TopicHierarchy = read_json(&dir.join("hierarchy_model.json"))?;
    h.check()?;
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_is_bit_exact() {
        let m = vec![vec![0.1, f64::MIN_POSITIVE, 1.0 / 3.0], vec![0.0, -0.0, 7.5]];
        let back = parse_matrix(&matrix_bytes(&m)).unwrap();
        for (a, b) in m.iter().flatten().zip(back.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(parse_matrix(&matrix_bytes(&m)[..30]).is_err());
    }

    #[test]
    fn matrix_header_layout() {
        let b = matrix_bytes(&[vec![1.0, 2.0]]);
        assert_eq!(&b[..4], b"CGTM");
        assert_eq!(u64::from_le_bytes(b[8..16].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(b[16..24].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(b[32..40].try_into().unwrap()), 2.0);
    }
}
