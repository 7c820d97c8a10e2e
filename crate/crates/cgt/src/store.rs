//! Project directories: corpus, runs, human inputs and the audit log.
//!
//! A store root holds `projects/<project_id>/`. Inside a project:
//!
//! ```text
//! project.json              name, id, creation time
//! salt                      author-hash salt (never exported)
//! posts.jsonl rejects.json  ingested posts
//! corpus/                   built corpus
//! runs/<run_id>/run.json    run record plus its artifacts
//! themes.json               project themes (bundled set when absent)
//! labelings/<run_id>.json   topic labelings of one run
//! ledger_inputs.json        exclusions and proposals per ledger row
//! ledger.json queries.json  last built ledger and its queries
//! judgments.json            active judgments
//! audit.jsonl               append-only log of mutations
//! ```
//!
//! Every write goes through a temporary file and a rename. Mutations of one
//! project are serialized; entity revisions are content hashes, so a write
//! carrying a stale revision is refused.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex};

use cgt_core::corpus::{build_corpus, generate_synthetic, preprocess, split_tokens, synthetic_term, Corpus, PostKind, PreprocessConfig, RawPost, SynthSpec};
use cgt_core::digest::sha256_hex;
use cgt_core::lda::{top_documents, top_terms, train_lda, LdaConfig};
use cgt_core::qdtm::{coherence_of_hierarchy, QdtmConfig, Query};
use cgt_core::rng::{streams, Stream};
use cgt_core::selection::{select_k, SelectionPolicy, SweepConfig};
use cgt_core::validation::{build_term_ledger, compare, ledger_to_queries, ConcurrenceReport, LedgerInputs, ModelTopTerms, RunLabelings, TermLedger, Theme, TopicLabeling};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::artifacts::{self, digest_files, hierarchy_doc, load_corpus, load_hierarchy, load_model, read_json, save_corpus, save_hierarchy, save_model, to_json_bytes, write_atomic, write_json, CorpusManifest, HierarchyDoc, MetricsDoc};
use crate::ingest::{ingest_jsonl, read_posts, write_posts, Reject};
use crate::{fixtures, parallel, Error, Result};

/// Sliding-window size used when scoring hierarchy nodes.
pub const HIERARCHY_CV_WINDOW: usize = 110;

pub fn now() -> i64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs() as i64)
}

/// Content revision of a stored entity.
pub fn revision_of<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("serializable"))[..16].to_string()
}

/// Revision token that only matches an entity that does not exist yet.
pub const NO_REVISION: &str = "none";

fn check_revision(current: Option<String>, if_match: Option<&str>, what: &str) -> Result<()> {
    match (if_match.map(|s| s.trim().trim_matches('"')), current) {
        (None, _) | (Some("*"), Some(_)) | (Some(NO_REVISION), None) => Ok(()),
        (Some(want), Some(cur)) if want == cur => Ok(()),
        (Some(want), cur) => Err(Error::Conflict(format!("{what}: revision {want} is stale (current {})", cur.as_deref().unwrap_or("none")))),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectRecord {
    pub project_id: String,
    pub name: String,
    pub created_utc: i64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunKind {
    Lda,
    Sweep,
    Qdtm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Queued,
    Running,
    Done,
    Failed,
}

/// A fully resolved run request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RunSpec {
    Lda { config: LdaConfig },
    Sweep { config: SweepConfig },
    Qdtm { queries: Vec<Query>, config: QdtmConfig, jobs: usize },
}

impl RunSpec {
    pub fn kind(&self) -> RunKind {
        match self {
            RunSpec::Lda { .. } => RunKind::Lda,
            RunSpec::Sweep { .. } => RunKind::Sweep,
            RunSpec::Qdtm { .. } => RunKind::Qdtm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub project_id: String,
    pub spec: RunSpec,
    pub status: RunStatus,
    pub error: Option<String>,
    pub corpus_digest: String,
    /// Digest over `artifacts`, fixed at completion.
    pub result_digest: Option<String>,
    pub artifacts: Vec<String>,
    pub created_utc: i64,
    pub finished_utc: Option<i64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub node_id: String,
    pub coherent: bool,
    pub include: bool,
    #[serde(default)]
    pub note: String,
    pub annotator: String,
    pub timestamp: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub timestamp: i64,
    pub annotator: String,
    pub action: String,
    pub target: String,
    pub payload: Value,
}

/// The human-authored part of a project, reconstructible from the audit log.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HumanState {
    pub themes: Option<Vec<Theme>>,
    pub labelings: BTreeMap<String, RunLabelings>,
    pub inputs: LedgerInputs,
    pub judgments: Vec<Judgment>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Project {
    #[serde(flatten)]
    pub record: ProjectRecord,
    pub corpus: Option<CorpusManifest>,
    pub runs: Vec<RunRecord>,
    pub themes: Vec<Theme>,
    pub labelings: Vec<RunLabelings>,
    pub ledger_inputs: LedgerInputs,
    pub ledger: Option<TermLedger>,
    pub judgments: Vec<Judgment>,
    pub audit_len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelingInput {
    pub labels: Vec<String>,
    #[serde(default)]
    pub theme_refs: Vec<u32>,
    pub annotator: String,
    #[serde(default)]
    pub timestamp: Option<i64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgmentInput {
    pub coherent: bool,
    pub include: bool,
    #[serde(default)]
    pub note: String,
    pub annotator: String,
    #[serde(default)]
    pub timestamp: Option<i64>,
}

/// Curation choices for one ledger row.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RowSelection {
    /// Excluded terms per run id.
    #[serde(default)]
    pub exclusions: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub proposals: Vec<String>,
    #[serde(default)]
    pub annotator: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Highlight {
    /// UTF-8 byte offsets into `text`.
    pub start: usize,
    pub end: usize,
    pub term: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewTerm {
    pub term_id: u32,
    pub term: String,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewDocument {
    pub doc_id: usize,
    pub source_id: String,
    pub weight: f64,
    pub text: String,
    pub highlights: Vec<Highlight>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicView {
    pub run_id: String,
    pub topic_id: usize,
    pub terms: Vec<ViewTerm>,
    pub documents: Vec<ViewDocument>,
    pub labeling: Option<TopicLabeling>,
    pub revision: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub added: usize,
    pub duplicates: usize,
    pub rejects: Vec<Reject>,
    pub total_posts: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format: String,
    pub project: ProjectRecord,
    pub files: Vec<BundleFile>,
}

const BUNDLE_FORMAT: &str = "cgt-bundle/1";

pub struct Store {
    root: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    workers: rayon::ThreadPool,
}

fn slug(name: &str) -> String {
    let mut s: String = name.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' }).collect();
    s = s.split('-').filter(|p| !p.is_empty()).collect::<Vec<_>>().join("-");
    s.truncate(32);
    s
}

fn random_salt() -> String {
    let mut buf = [0u8; 16];
    if fs::File::open("/dev/urandom").and_then(|mut f| f.read_exact(&mut buf)).is_err() {
        let t = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).unwrap_or_default();
        buf[..16].copy_from_slice(&(t.as_nanos() ^ ((std::process::id() as u128) << 64)).to_le_bytes());
    }
    sha256_hex(&buf)[..32].to_string()
}

/// Splits `"<run_id>:<node>"`.
pub fn split_node_ref(node_ref: &str) -> Result<(&str, &str)> {
    node_ref.rsplit_once(':').filter(|(r, n)| !r.is_empty() && !n.is_empty()).ok_or_else(|| Error::invalid("node", "expected <run_id>:<node>"))
}

fn project_of_run(run_id: &str) -> Result<&str> {
    run_id.rsplit_once("-r").map(|(p, _)| p).filter(|p| !p.is_empty()).ok_or_else(|| Error::NotFound(format!("run {run_id}")))
}

impl Store {
    /// Opens (creating if needed) a store rooted at `root`, with `workers`
    /// background run slots.
    pub fn open(root: impl Into<PathBuf>, workers: usize) -> Result<Self> {
        let root = root.into();
        let projects = root.join("projects");
        fs::create_dir_all(&projects).map_err(|e| Error::io(&projects, e))?;
        let workers = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build().map_err(|e| Error::invalid("workers", e.to_string()))?;
        Ok(Store { root, locks: Mutex::new(HashMap::new()), workers })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn project_dir(&self, project_id: &str) -> PathBuf {
        self.root.join("projects").join(project_id)
    }

    fn lock(&self, project_id: &str) -> Arc<Mutex<()>> {
        self.locks.lock().unwrap().entry(project_id.to_string()).or_default().clone()
    }

    fn existing(&self, project_id: &str) -> Result<PathBuf> {
        let dir = self.project_dir(project_id);
        if project_id.is_empty() || project_id.contains(['/', '\\', '.']) || !dir.join("project.json").exists() {
            return Err(Error::NotFound(format!("project {project_id}")));
        }
        Ok(dir)
    }

    pub fn list_projects(&self) -> Result<Vec<ProjectRecord>> {
        let dir = self.root.join("projects");
        let mut out = Vec::new();
        for e in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let p = e.map_err(|e| Error::io(&dir, e))?.path().join("project.json");
            if p.exists() {
                out.push(read_json::<ProjectRecord>(&p)?);
            }
        }
        out.sort_by(|a, b| a.project_id.cmp(&b.project_id));
        Ok(out)
    }

    pub fn create_project(&self, name: &str) -> Result<ProjectRecord> {
        let name = name.trim();
        if name.is_empty() {
            return Err(Error::invalid("name", "must not be empty"));
        }
        let _g = self.locks.lock().unwrap();
        if self.list_projects()?.iter().any(|p| p.name == name) {
            return Err(Error::Conflict(format!("a project named {name:?} exists")));
        }
        let base = slug(name);
        let project_id = format!("{}{}{}", base, if base.is_empty() { "" } else { "-" }, &sha256_hex(name.as_bytes())[..8]);
        let rec = ProjectRecord { project_id: project_id.clone(), name: name.to_string(), created_utc: now() };
        let dir = self.project_dir(&project_id);
        write_atomic(&dir.join("salt"), random_salt().as_bytes())?;
        write_json(&dir.join("project.json"), &rec)?;
        Ok(rec)
    }

    /// Opens the project named `name`, creating it when absent.
    pub fn ensure_project(&self, name: &str) -> Result<ProjectRecord> {
        if let Some(p) = self.list_projects()?.into_iter().find(|p| p.name == name.trim()) {
            return Ok(p);
        }
        self.create_project(name)
    }

    pub fn record(&self, project_id: &str) -> Result<ProjectRecord> {
        read_json(&self.existing(project_id)?.join("project.json"))
    }

    pub fn get_project(&self, project_id: &str) -> Result<Project> {
        let dir = self.existing(project_id)?;
        let record = self.record(project_id)?;
        let corpus_manifest = dir.join("corpus/manifest.json");
        let corpus = if corpus_manifest.exists() { Some(read_json(&corpus_manifest)?) } else { None };
        let ledger_path = dir.join("ledger.json");
        Ok(Project {
            record,
            corpus,
            runs: self.list_runs(project_id)?,
            themes: self.themes(project_id)?,
            labelings: self.human_state(project_id)?.labelings.into_values().collect(),
            ledger_inputs: self.ledger_inputs(project_id)?,
            ledger: if ledger_path.exists() { Some(read_json(&ledger_path)?) } else { None },
            judgments: self.judgments(project_id)?,
            audit_len: self.audit_log(project_id)?.len(),
        })
    }

    fn append_audit(&self, dir: &Path, annotator: &str, action: &str, target: &str, payload: Value) -> Result<()> {
        let path = dir.join("audit.jsonl");
        let seq = self.read_audit(dir)?.len() as u64 + 1;
        let entry = AuditEntry { seq, timestamp: now(), annotator: annotator.to_string(), action: action.to_string(), target: target.to_string(), payload };
        let mut f = fs::OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        let mut line = serde_json::to_vec(&entry).expect("serializable");
        line.push(b'\n');
        f.write_all(&line).and_then(|_| f.sync_all()).map_err(|e| Error::io(&path, e))
    }

    fn read_audit(&self, dir: &Path) -> Result<Vec<AuditEntry>> {
        let path = dir.join("audit.jsonl");
        if !path.exists() {
            return Ok(Vec::new());
        }
        let f = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        BufReader::new(f)
            .lines()
            .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
            .map(|l| {
                let l = l.map_err(|e| Error::io(&path, e))?;
                serde_json::from_str(&l).map_err(|e| Error::format(&path, e))
            })
            .collect()
    }

    pub fn audit_log(&self, project_id: &str) -> Result<Vec<AuditEntry>> {
        self.read_audit(&self.existing(project_id)?)
    }

    /// Salt used to pseudonymize authors of this project's posts.
    pub fn project_salt(&self, project_id: &str) -> Result<String> {
        self.salt(&self.existing(project_id)?)
    }

    fn salt(&self, dir: &Path) -> Result<String> {
        let p = dir.join("salt");
        if !p.exists() {
            write_atomic(&p, random_salt().as_bytes())?;
        }
        fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
    }

    /// Ingests JSONL posts into the project, keeping earlier posts on id
    /// collisions. Refused once a corpus is built.
    pub fn ingest<R: BufRead>(&self, project_id: &str, reader: R) -> Result<IngestSummary> {
        let dir = self.existing(project_id)?;
        let lock = self.lock(project_id);
        let _g = lock.lock().unwrap();
        if dir.join("corpus/manifest.json").exists() {
            return Err(Error::Conflict("the corpus is already built".into()));
        }
        let report = ingest_jsonl(reader, &self.salt(&dir)?)?;
        self.add_posts(&dir, report.posts, report.duplicates, report.rejects)
    }

    /// Adds already-normalized posts, for example from the listing fetcher.
    pub fn add_fetched(&self, project_id: &str, posts: Vec<RawPost>) -> Result<IngestSummary> {
        let dir = self.existing(project_id)?;
        let lock = self.lock(project_id);
        let _g = lock.lock().unwrap();
        if dir.join("corpus/manifest.json").exists() {
            return Err(Error::Conflict("the corpus is already built".into()));
        }
        self.add_posts(&dir, posts, 0, Vec::new())
    }

    fn add_posts(&self, dir: &Path, new: Vec<RawPost>, mut duplicates: usize, rejects: Vec<Reject>) -> Result<IngestSummary> {
        let mut posts = self.posts_in(dir)?;
        let mut seen: std::collections::HashSet<String> = posts.iter().map(|p| p.id.clone()).collect();
        let mut added = 0;
        for p in new {
            if seen.insert(p.id.clone()) {
                posts.push(p);
                added += 1;
            } else {
                duplicates += 1;
            }
        }
        let mut buf = Vec::new();
        write_posts(&mut buf, &posts).map_err(|e| Error::io(dir.join("posts.jsonl"), e))?;
        write_atomic(&dir.join("posts.jsonl"), &buf)?;
        write_json(&dir.join("rejects.json"), &rejects)?;
        let summary = IngestSummary { added, duplicates, rejects, total_posts: posts.len() };
        self.append_audit(dir, "system", "ingest", "posts", serde_json::json!({"added": added, "duplicates": duplicates, "rejects": summary.rejects.len()}))?;
        Ok(summary)
    }

    fn posts_in(&self, dir: &Path) -> Result<Vec<RawPost>> {
        let p = dir.join("posts.jsonl");
        if !p.exists() {
            return Ok(Vec::new());
        }
        let f = fs::File::open(&p).map_err(|e| Error::io(&p, e))?;
        read_posts(BufReader::new(f))
    }

    pub fn posts(&self, project_id: &str) -> Result<Vec<RawPost>> {
        self.posts_in(&self.existing(project_id)?)
    }

    /// Builds the project corpus from its ingested posts. A built corpus is
    /// never replaced.
    pub fn build(&self, project_id: &str, config: &PreprocessConfig) -> Result<CorpusManifest> {
        let dir = self.existing(project_id)?;
        let lock = self.lock(project_id);
        let _g = lock.lock().unwrap();
        if dir.join("corpus/manifest.json").exists() {
            return Err(Error::Conflict("the corpus is already built".into()));
        }
        let posts = self.posts_in(&dir)?;
        if posts.is_empty() {
            return Err(Error::invalid("posts", "nothing ingested yet"));
        }
        let corpus = build_corpus(&posts, config)?;
        save_corpus(&dir.join("corpus"), &corpus, Some(config))?;
        let m: CorpusManifest = read_json(&dir.join("corpus/manifest.json"))?;
        self.append_audit(&dir, "system", "build", "corpus", serde_json::json!({"corpus_digest": m.corpus_digest}))?;
        Ok(m)
    }

    /// Generates a synthetic corpus as the project corpus. Documents become
    /// posts whose text is their token sequence; the planted matrices are
    /// kept under `truth/`.
    pub fn synth(&self, project_id: &str, spec: &SynthSpec) -> Result<CorpusManifest> {
        let dir = self.existing(project_id)?;
        let lock = self.lock(project_id);
        let _g = lock.lock().unwrap();
        if dir.join("corpus/manifest.json").exists() || dir.join("posts.jsonl").exists() {
            return Err(Error::Conflict("the project already has posts or a corpus".into()));
        }
        let s = generate_synthetic(spec)?;
        let posts: Vec<RawPost> = s
            .corpus
            .documents()
            .iter()
            .map(|d| RawPost {
                id: d.source_id.clone(),
                subreddit: "synthetic".into(),
                author_ref: String::new(),
                created_utc: 0,
                kind: PostKind::Post,
                parent_id: None,
                text: d.tokens.iter().map(|&t| s.corpus.vocabulary().term(t)).collect::<Vec<_>>().join(" "),
            })
            .collect();
        let mut buf = Vec::new();
        write_posts(&mut buf, &posts).map_err(|e| Error::io(dir.join("posts.jsonl"), e))?;
        write_atomic(&dir.join("posts.jsonl"), &buf)?;
        save_corpus(&dir.join("corpus"), &s.corpus, Some(&PreprocessConfig::permissive()))?;
        write_atomic(&dir.join("truth/phi.bin"), &artifacts::matrix_bytes(&s.phi))?;
        write_atomic(&dir.join("truth/theta.bin"), &artifacts::matrix_bytes(&s.theta))?;
        write_json(&dir.join("truth/spec.json"), spec)?;
        debug_assert!(s.corpus.vocabulary().terms().iter().enumerate().all(|(i, t)| *t == synthetic_term(i) || s.corpus.vocab_size() != spec.vocab_size));
        let m: CorpusManifest = read_json(&dir.join("corpus/manifest.json"))?;
        self.append_audit(&dir, "system", "synth", "corpus", serde_json::json!({"spec": spec, "corpus_digest": m.corpus_digest}))?;
        Ok(m)
    }

    pub fn corpus(&self, project_id: &str) -> Result<(Corpus, CorpusManifest)> {
        let dir = self.existing(project_id)?.join("corpus");
        if !dir.join("manifest.json").exists() {
            return Err(Error::Conflict(format!("project {project_id} has no built corpus")));
        }
        load_corpus(&dir)
    }

    pub fn themes(&self, project_id: &str) -> Result<Vec<Theme>> {
        let p = self.existing(project_id)?.join("themes.json");
        if p.exists() { read_json(&p) } else { Ok(fixtures::themes()) }
    }

    pub fn set_themes(&self, project_id: &str, themes: Vec<Theme>, annotator: &str) -> Result<()> {
        let dir = self.existing(project_id)?;
        let lock = self.lock(project_id);
        let _g = lock.lock().unwrap();
        let mut ids = std::collections::BTreeSet::new();
        let mut labels = std::collections::BTreeSet::new();
        for t in &themes {
            if !ids.insert(t.theme_id) || !labels.insert(t.label.clone()) {
                return Err(Error::invalid("themes", format!("duplicate theme {} {:?}", t.theme_id, t.label)));
            }
        }
        write_json(&dir.join("themes.json"), &themes)?;
        self.append_audit(&dir, annotator, "themes", "themes", serde_json::to_value(&themes).unwrap())
    }

    // ---- runs

    pub fn list_runs(&self, project_id: &str) -> Result<Vec<RunRecord>> {
        let dir = self.existing(project_id)?.join("runs");
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut runs = Vec::new();
        for e in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let p = e.map_err(|e| Error::io(&dir, e))?.path().join("run.json");
            if p.exists() {
                runs.push(read_json::<RunRecord>(&p)?);
            }
        }
        runs.sort_by(|a, b| a.run_id.cmp(&b.run_id));
        Ok(runs)
    }

    pub fn run_dir(&self, run_id: &str) -> Result<PathBuf> {
        let pid = project_of_run(run_id)?;
        let dir = self.existing(pid).map_err(|_| Error::NotFound(format!("run {run_id}")))?.join("runs").join(run_id);
        if run_id.contains(['/', '\\']) || !dir.join("run.json").exists() {
            return Err(Error::NotFound(format!("run {run_id}")));
        }
        Ok(dir)
    }

    pub fn get_run(&self, run_id: &str) -> Result<RunRecord> {
        read_json(&self.run_dir(run_id)?.join("run.json"))
    }

    fn done_run(&self, run_id: &str, kind: RunKind) -> Result<(RunRecord, PathBuf)> {
        let rec = self.get_run(run_id)?;
        if rec.status != RunStatus::Done {
            return Err(Error::Conflict(format!("run {run_id} is {:?}", rec.status).to_lowercase()));
        }
        if rec.spec.kind() != kind {
            return Err(Error::invalid("run", format!("run {run_id} is not a {kind:?} run").to_lowercase()));
        }
        let dir = self.run_dir(run_id)?;
        Ok((rec, dir))
    }

    /// Recomputes a completed run's artifact digest and compares it with the
    /// one stored at completion.
    pub fn verify_run(&self, run_id: &str) -> Result<bool> {
        let rec = self.get_run(run_id)?;
        let dir = self.run_dir(run_id)?;
        let names: Vec<&str> = rec.artifacts.iter().map(String::as_str).collect();
        Ok(rec.result_digest.as_deref() == Some(digest_files(&dir, &names)?.as_str()))
    }

    fn queue_run(&self, project_id: &str, spec: RunSpec) -> Result<RunRecord> {
        let dir = self.existing(project_id)?;
        let (corpus, _) = self.corpus(project_id)?;
        match &spec {
            RunSpec::Lda { config } => config.validate()?,
            RunSpec::Sweep { config } => config.validate()?,
            RunSpec::Qdtm { config, jobs, .. } => {
                config.validate()?;
                if *jobs == 0 {
                    return Err(Error::invalid("jobs", "must be >= 1"));
                }
            }
        }
        if let RunSpec::Qdtm { queries, .. } = &spec {
            if queries.is_empty() {
                return Err(Error::invalid("queries", "at least one query is required"));
            }
        }
        if let RunSpec::Lda { config } = &spec {
            if config.k as u64 > corpus.num_tokens() {
                return Err(Error::invalid("k", "exceeds the corpus token count"));
            }
        }
        let lock = self.lock(project_id);
        let _g = lock.lock().unwrap();
        let n = self.list_runs(project_id)?.len() + 1;
        let run_id = format!("{project_id}-r{n:03}");
        let rec = RunRecord {
            run_id: run_id.clone(),
            project_id: project_id.to_string(),
            spec,
            status: RunStatus::Queued,
            error: None,
            corpus_digest: corpus.digest().to_string(),
            result_digest: None,
            artifacts: Vec::new(),
            created_utc: now(),
            finished_utc: None,
        };
        write_json(&dir.join("runs").join(&run_id).join("run.json"), &rec)?;
        self.append_audit(&dir, "system", "run", &run_id, serde_json::to_value(&rec.spec).unwrap())?;
        Ok(rec)
    }

    /// Validates and queues a run, then executes it on the worker pool.
    pub fn start_run(self: &Arc<Self>, project_id: &str, spec: RunSpec) -> Result<RunRecord> {
        let rec = self.queue_run(project_id, spec)?;
        let store = Arc::clone(self);
        let run_id = rec.run_id.clone();
        self.workers.spawn(move || {
            let _ = store.execute(&run_id);
        });
        Ok(rec)
    }

    /// Validates, queues and executes a run on the calling thread.
    pub fn run_now(&self, project_id: &str, spec: RunSpec) -> Result<RunRecord> {
        let rec = self.queue_run(project_id, spec)?;
        self.execute(&rec.run_id)
    }

    fn set_status(&self, rec: &mut RunRecord, status: RunStatus) -> Result<()> {
        rec.status = status;
        write_json(&self.run_dir(&rec.run_id)?.join("run.json"), rec)
    }

    fn execute(&self, run_id: &str) -> Result<RunRecord> {
        let mut rec = self.get_run(run_id)?;
        let dir = self.run_dir(run_id)?;
        self.set_status(&mut rec, RunStatus::Running)?;
        let outcome = self.compute(&rec, &dir);
        rec.finished_utc = Some(now());
        match outcome {
            Ok(names) => {
                let refs: Vec<&str> = names.iter().map(String::as_str).collect();
                rec.result_digest = Some(digest_files(&dir, &refs)?);
                rec.artifacts = names;
                self.set_status(&mut rec, RunStatus::Done)?;
            }
            Err(e) => {
                rec.error = Some(e.to_string());
                self.set_status(&mut rec, RunStatus::Failed)?;
            }
        }
        Ok(rec)
    }

    fn compute(&self, rec: &RunRecord, dir: &Path) -> Result<Vec<String>> {
        let (corpus, _) = self.corpus(&rec.project_id)?;
        if corpus.digest() != rec.corpus_digest {
            return Err(Error::Conflict("corpus changed since the run was queued".into()));
        }
        match &rec.spec {
            RunSpec::Lda { config } => {
                let model = train_lda(&corpus, config)?;
                save_model(&dir.join("model"), &model)?;
                write_atomic(&dir.join("top_terms.csv"), artifacts::top_terms_csv(&model, &corpus, 20)?.as_bytes())?;
                write_atomic(&dir.join("top_docs.csv"), artifacts::top_docs_csv(&model, &corpus, 5)?.as_bytes())?;
                Ok(["model/phi.bin", "model/theta.bin", "model/model.json", "top_terms.csv", "top_docs.csv"].map(String::from).to_vec())
            }
            RunSpec::Sweep { config } => {
                let table = parallel::sweep(&corpus, config)?;
                let selection = select_k(&table, SelectionPolicy::RankSum).ok();
                write_atomic(&dir.join("metrics.csv"), artifacts::metrics_csv(&table).as_bytes())?;
                write_json(&dir.join("metrics.json"), &MetricsDoc::new(&table, selection))?;
                Ok(["metrics.csv", "metrics.json"].map(String::from).to_vec())
            }
            RunSpec::Qdtm { queries, config, jobs } => {
                let h = parallel::run_qdtm(&corpus, queries, config, *jobs)?;
                h.check()?;
                let scores = coherence_of_hierarchy(&h, &corpus, HIERARCHY_CV_WINDOW)?;
                save_hierarchy(dir, &h, &hierarchy_doc(&h, &corpus, &scores))?;
                Ok(["hierarchy_model.json", "hierarchy.json"].map(String::from).to_vec())
            }
        }
    }

    pub fn metrics(&self, run_id: &str) -> Result<MetricsDoc> {
        let (_, dir) = self.done_run(run_id, RunKind::Sweep)?;
        read_json(&dir.join("metrics.json"))
    }

    /// Hierarchy of a QDTM run with the active judgments filled in.
    pub fn hierarchy(&self, run_id: &str) -> Result<HierarchyDoc> {
        let (rec, dir) = self.done_run(run_id, RunKind::Qdtm)?;
        let mut doc: HierarchyDoc = read_json(&dir.join("hierarchy.json"))?;
        let judgments = self.judgments(&rec.project_id)?;
        let fill = |n: &mut artifacts::HierarchyNode| {
            let key = format!("{run_id}:{}", n.node_id);
            n.judgment = judgments.iter().filter(|j| j.node_id == key).max_by_key(|j| (j.timestamp, j.annotator.clone())).cloned();
        };
        for n in &mut doc.nodes {
            fill(n);
            n.children.iter_mut().for_each(fill);
        }
        Ok(doc)
    }

    // ---- reading room

    fn posts_by_id(&self, project_id: &str) -> Result<HashMap<String, RawPost>> {
        Ok(self.posts(project_id)?.into_iter().map(|p| (p.id.clone(), p)).collect())
    }

    /// Top terms and documents of an LDA topic, with the original post text
    /// and byte spans of top-term occurrences.
    pub fn topic_view(&self, run_id: &str, topic: usize, n_terms: usize, n_docs: usize) -> Result<TopicView> {
        let (rec, dir) = self.done_run(run_id, RunKind::Lda)?;
        let model = load_model(&dir.join("model"))?;
        if topic >= model.k() {
            return Err(Error::NotFound(format!("topic {topic} of run {run_id} (K = {})", model.k())));
        }
        if n_terms == 0 || n_docs == 0 {
            return Err(Error::invalid(if n_terms == 0 { "n_terms" } else { "n_docs" }, "must be >= 1"));
        }
        let (corpus, manifest) = self.corpus(&rec.project_id)?;
        let config = manifest.preprocess.unwrap_or_default();
        let terms: Vec<ViewTerm> = top_terms(&model, topic, n_terms)?.into_iter().map(|t| ViewTerm { term_id: t.term_id, term: corpus.vocabulary().term(t.term_id).to_string(), weight: t.weight }).collect();
        let wanted: std::collections::HashSet<&str> = terms.iter().map(|t| t.term.as_str()).collect();
        let posts = self.posts_by_id(&rec.project_id)?;
        let documents = top_documents(&model, topic, n_docs)?
            .into_iter()
            .map(|d| {
                let source_id = corpus.documents()[d.doc_id].source_id.clone();
                let text = posts.get(&source_id).map(|p| p.text.clone()).unwrap_or_default();
                let highlights = highlight(&text, &wanted, &config);
                ViewDocument { doc_id: d.doc_id, source_id, weight: d.weight, text, highlights }
            })
            .collect();
        let labeling = self.labelings_of(&rec.project_id, run_id)?.labelings.into_iter().find(|l| l.topic_id == topic);
        let revision = labeling.as_ref().map(revision_of);
        Ok(TopicView { run_id: run_id.to_string(), topic_id: topic, terms, documents, labeling, revision })
    }

    /// Seeded uniform sample of the documents of a node: an LDA topic
    /// (`t<k>`, documents whose dominant topic is k) or a hierarchy node.
    /// The draw is recorded in the audit log.
    pub fn sample_documents(&self, node_ref: &str, n: usize, seed: u64, annotator: &str) -> Result<Vec<usize>> {
        let (run_id, node) = split_node_ref(node_ref)?;
        let rec = self.get_run(run_id)?;
        let pool: Vec<usize> = match rec.spec.kind() {
            RunKind::Lda => {
                let k: usize = node.strip_prefix('t').and_then(|s| s.parse().ok()).ok_or_else(|| Error::invalid("node", "LDA nodes are t<topic>"))?;
                let (_, dir) = self.done_run(run_id, RunKind::Lda)?;
                let model = load_model(&dir.join("model"))?;
                if k >= model.k() {
                    return Err(Error::NotFound(format!("node {node_ref}")));
                }
                (0..model.num_docs()).filter(|&d| cgt_core::lda::rank_row(&model.theta[d], 1)[0].0 == k).collect()
            }
            RunKind::Qdtm => {
                let (_, dir) = self.done_run(run_id, RunKind::Qdtm)?;
                let h = load_hierarchy(&dir)?;
                h.topics
                    .iter()
                    .find_map(|t| if t.node_id == node { Some(t.documents.clone()) } else { t.children.iter().find(|c| c.node_id == node).map(|c| c.documents.clone()) })
                    .ok_or_else(|| Error::NotFound(format!("node {node_ref}")))?
            }
            RunKind::Sweep => return Err(Error::invalid("node", "sweep runs have no nodes")),
        };
        let mut picked = pool;
        Stream::new(seed, streams::SAMPLING).shuffle(&mut picked);
        picked.truncate(n);
        picked.sort_unstable();
        let dir = self.existing(&rec.project_id)?;
        let lock = self.lock(&rec.project_id);
        let _g = lock.lock().unwrap();
        self.append_audit(&dir, annotator, "sample", node_ref, serde_json::json!({"n": n, "seed": seed, "documents": picked}))?;
        Ok(picked)
    }

    // ---- labelings

    fn labelings_of(&self, project_id: &str, run_id: &str) -> Result<RunLabelings> {
        let p = self.existing(project_id)?.join("labelings").join(format!("{run_id}.json"));
        if p.exists() { read_json(&p) } else { Ok(RunLabelings { run_id: run_id.to_string(), labelings: Vec::new() }) }
    }

    pub fn run_labelings(&self, run_id: &str) -> Result<RunLabelings> {
        let rec = self.get_run(run_id)?;
        self.labelings_of(&rec.project_id, run_id)
    }

    /// Sets the labeling of one LDA topic. Returns the stored labeling and
    /// its revision.
    pub fn put_labeling(&self, run_id: &str, topic: usize, input: LabelingInput, if_match: Option<&str>) -> Result<(TopicLabeling, String)> {
        let (rec, dir) = self.done_run(run_id, RunKind::Lda)?;
        let meta: artifacts::ModelMeta = read_json(&dir.join("model/model.json"))?;
        if topic >= meta.k {
            return Err(Error::NotFound(format!("topic {topic} of run {run_id}")));
        }
        let labels: Vec<String> = input.labels.iter().map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect();
        if labels.is_empty() {
            return Err(Error::invalid("labels", "at least one label is required (use \"Random\" for incoherent topics)"));
        }
        if input.annotator.trim().is_empty() {
            return Err(Error::invalid("annotator", "must not be empty"));
        }
        let themes = self.themes(&rec.project_id)?;
        if let Some(bad) = input.theme_refs.iter().find(|r| !themes.iter().any(|t| t.theme_id == **r)) {
            return Err(Error::invalid("theme_refs", format!("unknown theme {bad}")));
        }
        let pdir = self.existing(&rec.project_id)?;
        let lock = self.lock(&rec.project_id);
        let _g = lock.lock().unwrap();
        let mut all = self.labelings_of(&rec.project_id, run_id)?;
        let pos = all.labelings.iter().position(|l| l.topic_id == topic);
        check_revision(pos.map(|i| revision_of(&all.labelings[i])), if_match, &format!("labeling {run_id}/{topic}"))?;
        let mut refs = input.theme_refs.clone();
        refs.dedup();
        let labeling = TopicLabeling { run_id: run_id.to_string(), topic_id: topic, labels, theme_refs: refs, annotator: input.annotator.clone(), timestamp: input.timestamp.unwrap_or_else(now) };
        match pos {
            Some(i) => all.labelings[i] = labeling.clone(),
            None => all.labelings.push(labeling.clone()),
        }
        all.labelings.sort_by_key(|l| l.topic_id);
        write_json(&pdir.join("labelings").join(format!("{run_id}.json")), &all)?;
        self.append_audit(&pdir, &labeling.annotator, "labeling", &format!("{run_id}:t{topic}"), serde_json::to_value(&labeling).unwrap())?;
        let rev = revision_of(&labeling);
        Ok((labeling, rev))
    }

    /// Concurrent validation over the labelings of the given runs.
    pub fn compare_runs(&self, project_id: &str, run_ids: &[String]) -> Result<ConcurrenceReport> {
        let themes = self.themes(project_id)?;
        let mut runs = Vec::new();
        for r in run_ids {
            let rec = self.get_run(r)?;
            if rec.project_id != project_id {
                return Err(Error::NotFound(format!("run {r} in project {project_id}")));
            }
            runs.push(self.labelings_of(project_id, r)?);
        }
        Ok(compare(&themes, &runs)?)
    }

    // ---- ledger

    pub fn ledger_inputs(&self, project_id: &str) -> Result<LedgerInputs> {
        let p = self.existing(project_id)?.join("ledger_inputs.json");
        if p.exists() { read_json(&p) } else { Ok(LedgerInputs::default()) }
    }

    fn row_selection(inputs: &LedgerInputs, row: &str) -> RowSelection {
        RowSelection { exclusions: inputs.exclusions.get(row).cloned().unwrap_or_default(), proposals: inputs.proposals.get(row).cloned().unwrap_or_default(), annotator: String::new() }
    }

    pub fn selection(&self, project_id: &str, row: &str) -> Result<(RowSelection, String)> {
        let s = Self::row_selection(&self.ledger_inputs(project_id)?, row);
        let rev = revision_of(&s);
        Ok((s, rev))
    }

    /// Replaces the curation choices for one ledger row.
    pub fn put_selection(&self, project_id: &str, row: &str, sel: RowSelection, if_match: Option<&str>) -> Result<(RowSelection, String)> {
        let dir = self.existing(project_id)?;
        if row.trim().is_empty() {
            return Err(Error::invalid("row", "must not be empty"));
        }
        let lock = self.lock(project_id);
        let _g = lock.lock().unwrap();
        let mut inputs = self.ledger_inputs(project_id)?;
        let current = Self::row_selection(&inputs, row);
        let exists = inputs.exclusions.contains_key(row) || inputs.proposals.contains_key(row);
        // an absent row reads as the empty selection, whose revision is valid
        let known = exists || if_match != Some(NO_REVISION);
        check_revision(known.then(|| revision_of(&current)), if_match, &format!("ledger row {row:?}"))?;
        let clean = |v: &[String]| -> Vec<String> {
            let mut out: Vec<String> = v.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
            out.dedup();
            out
        };
        let exclusions: BTreeMap<String, Vec<String>> = sel.exclusions.iter().map(|(k, v)| (k.clone(), clean(v))).filter(|(_, v)| !v.is_empty()).collect();
        let proposals = clean(&sel.proposals);
        if exclusions.is_empty() {
            inputs.exclusions.remove(row);
        } else {
            inputs.exclusions.insert(row.to_string(), exclusions);
        }
        if proposals.is_empty() {
            inputs.proposals.remove(row);
        } else {
            inputs.proposals.insert(row.to_string(), proposals);
        }
        write_json(&dir.join("ledger_inputs.json"), &inputs)?;
        let stored = Self::row_selection(&inputs, row);
        self.append_audit(&dir, &sel.annotator, "selection", row, serde_json::to_value(&stored).unwrap())?;
        let rev = revision_of(&stored);
        Ok((stored, rev))
    }

    /// Builds the term ledger from two labeled LDA runs and the stored
    /// curation inputs, and writes `ledger.json` and `queries.json`.
    pub fn build_ledger(&self, project_id: &str, runs: [&str; 2], top_n: usize, annotator: &str) -> Result<TermLedger> {
        let dir = self.existing(project_id)?;
        let report = self.compare_runs(project_id, &[runs[0].to_string(), runs[1].to_string()])?;
        let (corpus, _) = self.corpus(project_id)?;
        let mut tops = Vec::new();
        let mut labs = Vec::new();
        for r in runs {
            let (_, rdir) = self.done_run(r, RunKind::Lda)?;
            let model = load_model(&rdir.join("model"))?;
            tops.push(ModelTopTerms::from_model(r, &model, corpus.vocabulary(), top_n)?);
            labs.push(self.labelings_of(project_id, r)?.labelings);
        }
        let inputs = self.ledger_inputs(project_id)?;
        let ledger = build_term_ledger(&report, [&tops[0], &tops[1]], [&labs[0], &labs[1]], top_n, &inputs)?;
        let queries = ledger_to_queries(&ledger)?;
        let lock = self.lock(project_id);
        let _g = lock.lock().unwrap();
        write_json(&dir.join("ledger.json"), &ledger)?;
        write_json(&dir.join("queries.json"), &queries)?;
        self.append_audit(&dir, annotator, "ledger", "ledger", serde_json::json!({"runs": runs, "top_n": top_n, "rows": ledger.rows.len()}))?;
        Ok(ledger)
    }

    pub fn ledger_queries(&self, project_id: &str) -> Result<Vec<Query>> {
        let p = self.existing(project_id)?.join("queries.json");
        if !p.exists() {
            return Err(Error::Conflict("no ledger has been built".into()));
        }
        read_json(&p)
    }

    // ---- judgments

    pub fn judgments(&self, project_id: &str) -> Result<Vec<Judgment>> {
        let p = self.existing(project_id)?.join("judgments.json");
        if p.exists() { read_json(&p) } else { Ok(Vec::new()) }
    }

    fn check_node(&self, node_ref: &str) -> Result<RunRecord> {
        let (run_id, node) = split_node_ref(node_ref)?;
        let rec = self.get_run(run_id)?;
        match rec.spec.kind() {
            RunKind::Lda => {
                let (_, dir) = self.done_run(run_id, RunKind::Lda)?;
                let meta: artifacts::ModelMeta = read_json(&dir.join("model/model.json"))?;
                let ok = node.strip_prefix('t').and_then(|s| s.parse::<usize>().ok()).is_some_and(|k| k < meta.k);
                ok.then_some(()).ok_or_else(|| Error::NotFound(format!("node {node_ref}")))?;
            }
            RunKind::Qdtm => {
                let (_, dir) = self.done_run(run_id, RunKind::Qdtm)?;
                let h = load_hierarchy(&dir)?;
                h.node_ids().iter().any(|n| n == node).then_some(()).ok_or_else(|| Error::NotFound(format!("node {node_ref}")))?;
            }
            RunKind::Sweep => return Err(Error::invalid("node", "sweep runs have no nodes")),
        }
        Ok(rec)
    }

    /// Records a coherence judgment, superseding the annotator's previous
    /// one for the node.
    pub fn put_judgment(&self, node_ref: &str, input: JudgmentInput, if_match: Option<&str>) -> Result<(Judgment, String)> {
        let rec = self.check_node(node_ref)?;
        if input.annotator.trim().is_empty() {
            return Err(Error::invalid("annotator", "must not be empty"));
        }
        let dir = self.existing(&rec.project_id)?;
        let lock = self.lock(&rec.project_id);
        let _g = lock.lock().unwrap();
        let mut all = self.judgments(&rec.project_id)?;
        let pos = all.iter().position(|j| j.node_id == node_ref && j.annotator == input.annotator);
        check_revision(pos.map(|i| revision_of(&all[i])), if_match, &format!("judgment {node_ref}"))?;
        let j = Judgment { node_id: node_ref.to_string(), coherent: input.coherent, include: input.include, note: input.note, annotator: input.annotator, timestamp: input.timestamp.unwrap_or_else(now) };
        match pos {
            Some(i) => all[i] = j.clone(),
            None => all.push(j.clone()),
        }
        all.sort_by(|a, b| (&a.node_id, &a.annotator).cmp(&(&b.node_id, &b.annotator)));
        write_json(&dir.join("judgments.json"), &all)?;
        self.append_audit(&dir, &j.annotator, "judgment", node_ref, serde_json::to_value(&j).unwrap())?;
        let rev = revision_of(&j);
        Ok((j, rev))
    }

    // ---- audit replay

    /// Current human-authored state as stored.
    pub fn human_state(&self, project_id: &str) -> Result<HumanState> {
        let dir = self.existing(project_id)?;
        let mut labelings = BTreeMap::new();
        let ldir = dir.join("labelings");
        if ldir.exists() {
            for e in fs::read_dir(&ldir).map_err(|e| Error::io(&ldir, e))? {
                let p = e.map_err(|e| Error::io(&ldir, e))?.path();
                if p.extension().is_some_and(|x| x == "json") {
                    let r: RunLabelings = read_json(&p)?;
                    labelings.insert(r.run_id.clone(), r);
                }
            }
        }
        let tp = dir.join("themes.json");
        Ok(HumanState { themes: if tp.exists() { Some(read_json(&tp)?) } else { None }, labelings, inputs: self.ledger_inputs(project_id)?, judgments: self.judgments(project_id)? })
    }

    /// Rebuilds the human-authored state from the audit log alone.
    pub fn replay_audit(entries: &[AuditEntry]) -> Result<HumanState> {
        let mut s = HumanState::default();
        let bad = |e: &AuditEntry, m: String| Error::format("audit.jsonl", format!("entry {}: {m}", e.seq));
        for e in entries {
            match e.action.as_str() {
                "themes" => s.themes = Some(serde_json::from_value(e.payload.clone()).map_err(|x| bad(e, x.to_string()))?),
                "labeling" => {
                    let l: TopicLabeling = serde_json::from_value(e.payload.clone()).map_err(|x| bad(e, x.to_string()))?;
                    let run = s.labelings.entry(l.run_id.clone()).or_insert_with(|| RunLabelings { run_id: l.run_id.clone(), labelings: Vec::new() });
                    run.labelings.retain(|x| x.topic_id != l.topic_id);
                    run.labelings.push(l);
                    run.labelings.sort_by_key(|l| l.topic_id);
                }
                "selection" => {
                    let sel: RowSelection = serde_json::from_value(e.payload.clone()).map_err(|x| bad(e, x.to_string()))?;
                    let row = e.target.clone();
                    if sel.exclusions.is_empty() {
                        s.inputs.exclusions.remove(&row);
                    } else {
                        s.inputs.exclusions.insert(row.clone(), sel.exclusions);
                    }
                    if sel.proposals.is_empty() {
                        s.inputs.proposals.remove(&row);
                    } else {
                        s.inputs.proposals.insert(row, sel.proposals);
                    }
                }
                "judgment" => {
                    let j: Judgment = serde_json::from_value(e.payload.clone()).map_err(|x| bad(e, x.to_string()))?;
                    s.judgments.retain(|x| !(x.node_id == j.node_id && x.annotator == j.annotator));
                    s.judgments.push(j);
                    s.judgments.sort_by(|a, b| (&a.node_id, &a.annotator).cmp(&(&b.node_id, &b.annotator)));
                }
                _ => {}
            }
        }
        Ok(s)
    }

    // ---- bundles

    /// Tar archive of the project: `manifest.json` (project record and file
    /// digests) followed by every project file under its relative path. The
    /// author-hash salt is left out.
    pub fn export_bundle(&self, project_id: &str) -> Result<Vec<u8>> {
        let dir = self.existing(project_id)?;
        let lock = self.lock(project_id);
        let _g = lock.lock().unwrap();
        let mut files = Vec::new();
        collect_files(&dir, &dir, &mut files)?;
        files.retain(|p| p != "project.json" && p != "salt");
        files.sort();
        let mut contents = Vec::new();
        let mut manifest = BundleManifest { format: BUNDLE_FORMAT.into(), project: self.record(project_id)?, files: Vec::new() };
        for rel in &files {
            let bytes = artifacts::read_bytes(&dir.join(rel))?;
            manifest.files.push(BundleFile { path: rel.clone(), sha256: sha256_hex(&bytes) });
            contents.push(bytes);
        }
        let mut tar = tar::Builder::new(Vec::new());
        let mut add = |path: &str, bytes: &[u8]| -> std::io::Result<()> {
            let mut h = tar::Header::new_gnu();
            h.set_size(bytes.len() as u64);
            h.set_mode(0o644);
            h.set_mtime(0);
            h.set_cksum();
            tar.append_data(&mut h, path, bytes)
        };
        let err = |e| Error::io("bundle.tar", e);
        add("manifest.json", &to_json_bytes(&manifest)).map_err(err)?;
        for (rel, bytes) in files.iter().zip(&contents) {
            add(rel, bytes).map_err(err)?;
        }
        tar.into_inner().map_err(err)
    }

    /// Restores an exported bundle as a new project with a fresh salt.
    pub fn import_bundle(&self, bytes: &[u8]) -> Result<ProjectRecord> {
        let mut archive = tar::Archive::new(bytes);
        let mut entries: BTreeMap<String, Vec<u8>> = BTreeMap::new();
        let err = |e| Error::format("bundle.tar", e);
        for entry in archive.entries().map_err(err)? {
            let mut entry = entry.map_err(err)?;
            let path = entry.path().map_err(err)?.into_owned();
            if path.is_absolute() || path.components().any(|c| !matches!(c, Component::Normal(_))) {
                return Err(Error::format("bundle.tar", format!("unsafe path {}", path.display())));
            }
            let mut buf = Vec::new();
            entry.read_to_end(&mut buf).map_err(err)?;
            entries.insert(path.to_string_lossy().replace('\\', "/"), buf);
        }
        let manifest: BundleManifest = serde_json::from_slice(entries.get("manifest.json").ok_or_else(|| Error::format("bundle.tar", "no manifest.json"))?).map_err(|e| Error::format("manifest.json", e))?;
        if manifest.format != BUNDLE_FORMAT {
            return Err(Error::format("manifest.json", format!("unsupported format {}", manifest.format)));
        }
        for f in &manifest.files {
            let bytes = entries.get(&f.path).ok_or_else(|| Error::format("bundle.tar", format!("missing {}", f.path)))?;
            if sha256_hex(bytes) != f.sha256 {
                return Err(Error::format("bundle.tar", format!("digest mismatch for {}", f.path)));
            }
        }
        let _g = self.locks.lock().unwrap();
        let pid = &manifest.project.project_id;
        if pid.is_empty() || pid.contains(['/', '\\', '.']) {
            return Err(Error::format("manifest.json", "bad project id"));
        }
        if self.project_dir(pid).exists() || self.list_projects()?.iter().any(|p| p.name == manifest.project.name) {
            return Err(Error::Conflict(format!("project {pid} already exists")));
        }
        let dir = self.project_dir(pid);
        for f in &manifest.files {
            write_atomic(&dir.join(&f.path), &entries[&f.path])?;
        }
        write_atomic(&dir.join("salt"), random_salt().as_bytes())?;
        write_json(&dir.join("project.json"), &manifest.project)?;
        Ok(manifest.project)
    }
}

fn collect_files(base: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for e in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        let name = p.file_name().and_then(|s| s.to_str()).unwrap_or("");
        if name.starts_with('.') {
            continue;
        }
        if p.is_dir() {
            collect_files(base, &p, out)?;
        } else {
            let rel = p.strip_prefix(base).expect("under base");
            out.push(rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect::<Vec<_>>().join("/"));
        }
    }
    Ok(())
}

/// Byte spans of tokens in `text` whose preprocessed form is one of `terms`.
pub fn highlight(text: &str, terms: &std::collections::HashSet<&str>, config: &PreprocessConfig) -> Vec<Highlight> {
    let base = text.as_ptr() as usize;
    split_tokens(text)
        .filter_map(|tok| {
            let out = preprocess(tok, config);
            match out.as_slice() {
                [t] if terms.contains(t.as_str()) => {
                    let start = tok.as_ptr() as usize - base;
                    Some(Highlight { start, end: start + tok.len(), term: t.clone() })
                }
                _ => None,
            }
        })
        .collect()
}
