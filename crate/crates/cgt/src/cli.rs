//! Command line driver. Every subcommand works on one project of a store
//! root; flags override the matching section of an optional TOML file.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use cgt_core::qdtm::Query;
use cgt_core::selection::{select_k, SelectionPolicy};
use cgt_core::validation::{build_term_ledger, compare, ledger_to_queries, ConcurrenceReport, LedgerInputs, ModelTopTerms, RunLabelings, Theme, TopicLabeling};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::artifacts::{read_json, to_json_bytes, write_atomic, MetricsDoc};
use crate::fetch::{fetch_public_listing, FetchConfig, ThreadSleeper, UreqTransport};
use crate::params::{BuildParams, LdaParams, Merge, QdtmParams, SweepParams, SynthParams};
use crate::store::{Judgment, JudgmentInput, LabelingInput, RowSelection, RunRecord, RunSpec, RunStatus, Store, TopicView};
use crate::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "cgt", version, about = "Topic modeling workbench for grounded-theory studies of online communities")]
pub struct Cli {
    /// Store root holding all projects.
    #[arg(long, global = true, env = "CGT_ROOT", default_value = "cgt-data")]
    pub root: PathBuf,
    /// Project name.
    #[arg(long, global = true, env = "CGT_PROJECT", default_value = "default")]
    pub project: String,
    /// TOML file with one table per subcommand (build, synth, train, sweep, qdtm, fetch).
    #[arg(long, global = true, env = "CGT_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Ingest a JSONL dump of posts and comments.
    Ingest { file: PathBuf },
    /// Fetch the newest public listing of a subreddit.
    Fetch(FetchArgs),
    /// Build the corpus from ingested posts.
    Build(BuildParams),
    /// Generate a synthetic corpus with planted topics.
    Synth(SynthParams),
    /// Train an LDA model.
    Train(LdaParams),
    /// Train one model per K and score it with four metrics.
    Sweep(SweepParams),
    /// Select K from a finished sweep.
    SelectK(SelectArgs),
    /// Show the top terms and documents of a topic.
    Topics(TopicsArgs),
    /// Compare topic labelings against the theme set.
    Compare(CompareArgs),
    /// Build the term ledger and its queries.
    Ledger(LedgerArgs),
    /// Run the query-driven hierarchical model.
    Qdtm(QdtmArgs),
    /// Import labelings, ledger selections and judgments from a file.
    JudgeImport { file: PathBuf },
    /// Export labelings, ledger selections and judgments.
    JudgeExport {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the runs of the project.
    Runs,
    /// Write the project as a tar bundle.
    Export {
        #[arg(long)]
        out: PathBuf,
    },
    /// Restore a project from a tar bundle.
    Import { file: PathBuf },
    /// Start the HTTP API.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
pub struct FetchArgs {
    #[arg(long)]
    pub subreddit: String,
    #[arg(long, default_value_t = 1)]
    pub pages: usize,
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub user_agent: Option<String>,
    #[arg(long)]
    pub delay_ms: Option<u64>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    #[arg(long)]
    pub page_size: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    /// Sweep run id; defaults to the latest finished sweep.
    #[arg(long)]
    pub run: Option<String>,
    /// A metrics.json file instead of a run.
    #[arg(long, conflicts_with = "run")]
    pub metrics: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TopicsArgs {
    #[arg(long)]
    pub run: String,
    #[arg(long)]
    pub topic: usize,
    #[arg(long, default_value_t = 20)]
    pub n_terms: usize,
    #[arg(long, default_value_t = 5)]
    pub n_docs: usize,
    /// Print the view as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Themes file; without it the project themes are used.
    #[arg(long)]
    pub themes: Option<PathBuf>,
    /// Labeling files, one per run.
    #[arg(long, num_args = 1.., conflicts_with = "runs")]
    pub labelings: Vec<PathBuf>,
    /// Project runs, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub runs: Vec<String>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct LedgerArgs {
    #[arg(long)]
    pub themes: Option<PathBuf>,
    #[arg(long, num_args = 2, conflicts_with = "runs")]
    pub labelings: Vec<PathBuf>,
    /// Top-term files matching `--labelings`.
    #[arg(long, num_args = 2)]
    pub top_terms: Vec<PathBuf>,
    /// Exclusions and proposals file.
    #[arg(long)]
    pub inputs: Option<PathBuf>,
    /// Two project runs, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub runs: Vec<String>,
    #[arg(long, default_value_t = 20)]
    pub top_n: usize,
    #[arg(long, default_value = "")]
    pub annotator: String,
    /// Write the ledger here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the derived queries here.
    #[arg(long)]
    pub queries_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct QdtmArgs {
    /// JSON array of queries; without it the project ledger's queries.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[command(flatten)]
    pub params: QdtmParams,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: std::net::SocketAddr,
    /// Shared bearer token required on every request.
    #[arg(long, env = "CGT_TOKEN")]
    pub token: Option<String>,
    /// Background run workers.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    build: BuildParams,
    #[serde(default)]
    synth: SynthParams,
    #[serde(default)]
    train: LdaParams,
    #[serde(default)]
    sweep: SweepParams,
    #[serde(default)]
    qdtm: QdtmParams,
    #[serde(default)]
    fetch: Option<FetchConfig>,
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&text).map_err(|e| Error::format(p, e))
        }
    }
}

/// Human inputs exchanged by `judge-import` and `judge-export`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeFile {
    pub themes: Option<Vec<Theme>>,
    pub labelings: Vec<TopicLabeling>,
    pub selections: BTreeMap<String, RowSelection>,
    pub judgments: Vec<Judgment>,
}

/// Parses `args` (program name first) and runs the subcommand, returning the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().ansi().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                2
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    match execute(cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn project(store: &Store, name: &str, create: bool) -> Result<String> {
    if create {
        return Ok(store.ensure_project(name)?.project_id);
    }
    store.list_projects()?.into_iter().find(|p| p.name == name).map(|p| p.project_id).ok_or_else(|| Error::NotFound(format!("project {name:?}")))
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn finish(rec: RunRecord, out: &mut dyn Write) -> Result<RunRecord> {
    if rec.status != RunStatus::Done {
        return Err(Error::Conflict(format!("run {} failed: {}", rec.run_id, rec.error.unwrap_or_default())));
    }
    writeln!(out, "run {} done digest={}", rec.run_id, rec.result_digest.as_deref().unwrap_or("")).map_err(io_err)?;
    Ok(rec)
}

fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let file = load_config(cli.config.as_deref())?;
    if let Command::Serve(a) = &cli.command {
        let store = Arc::new(Store::open(&cli.root, a.workers)?);
        let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io("runtime", e))?;
        return rt.block_on(crate::server::serve(store, a.addr, a.token.clone()));
    }
    let store = Store::open(&cli.root, 1)?;
    let name = cli.project.as_str();
    match cli.command {
        Command::Ingest { file } => {
            let pid = project(&store, name, true)?;
            let f = std::fs::File::open(&file).map_err(|e| Error::io(&file, e))?;
            let s = store.ingest(&pid, BufReader::new(f))?;
            for r in &s.rejects {
                writeln!(err, "rejected line {}: {}", r.line, r.reason).map_err(io_err)?;
            }
            writeln!(out, "ingested {} posts ({} duplicates, {} rejected); {} total", s.added, s.duplicates, s.rejects.len(), s.total_posts).map_err(io_err)?;
        }
        Command::Fetch(a) => {
            let pid = project(&store, name, true)?;
            let mut c = file.fetch.unwrap_or_default();
            c.base_url = a.base_url.unwrap_or(c.base_url);
            c.user_agent = a.user_agent.unwrap_or(c.user_agent);
            c.delay_ms = a.delay_ms.unwrap_or(c.delay_ms);
            c.max_retries = a.max_retries.unwrap_or(c.max_retries);
            c.page_size = a.page_size.unwrap_or(c.page_size);
            c.salt = store.project_salt(&pid)?;
            let posts = fetch_public_listing(&a.subreddit, a.pages, &c, &UreqTransport::default(), &ThreadSleeper)?;
            let s = store.add_fetched(&pid, posts)?;
            writeln!(out, "fetched {} posts ({} duplicates); {} total", s.added, s.duplicates, s.total_posts).map_err(io_err)?;
        }
        Command::Build(p) => {
            let pid = project(&store, name, false)?;
            let m = store.build(&pid, &p.or(file.build).resolve()?)?;
            writeln!(out, "corpus {} docs={} vocab={} tokens={}", m.corpus_digest, m.n_docs, m.vocab_size, m.n_tokens).map_err(io_err)?;
        }
        Command::Synth(p) => {
            let pid = project(&store, name, true)?;
            let m = store.synth(&pid, &p.or(file.synth).resolve()?)?;
            writeln!(out, "corpus {} docs={} vocab={} tokens={}", m.corpus_digest, m.n_docs, m.vocab_size, m.n_tokens).map_err(io_err)?;
        }
        Command::Train(p) => {
            let pid = project(&store, name, false)?;
            let config = p.or(file.train).resolve()?;
            finish(store.run_now(&pid, RunSpec::Lda { config })?, out)?;
        }
        Command::Sweep(p) => {
            let pid = project(&store, name, false)?;
            let config = p.or(file.sweep).resolve()?;
            let rec = finish(store.run_now(&pid, RunSpec::Sweep { config })?, out)?;
            let doc = store.metrics(&rec.run_id)?;
            writeln!(out, "{}", store.run_dir(&rec.run_id)?.join("metrics.csv").display()).map_err(io_err)?;
            if let Some(s) = doc.selection {
                writeln!(out, "selected K = {}", s.k).map_err(io_err)?;
            }
        }
        Command::SelectK(a) => {
            let doc: MetricsDoc = match (&a.metrics, &a.run) {
                (Some(path), _) => read_json(path)?,
                (None, Some(run)) => store.metrics(run)?,
                (None, None) => {
                    let pid = project(&store, name, false)?;
                    let run = store
                        .list_runs(&pid)?
                        .into_iter()
                        .rev()
                        .find(|r| matches!(r.spec, RunSpec::Sweep { .. }) && r.status == RunStatus::Done)
                        .ok_or_else(|| Error::NotFound("finished sweep run".into()))?;
                    store.metrics(&run.run_id)?
                }
            };
            let sel = select_k(&doc.table(), SelectionPolicy::RankSum)?;
            writeln!(out, "K\tcao\tarun\tumass\tc_v\tsum").map_err(io_err)?;
            for r in &sel.ranks {
                writeln!(out, "{}\t{}\t{}\t{}\t{}\t{}", r.k, r.cao, r.arun, r.umass, r.c_v, r.sum).map_err(io_err)?;
            }
            writeln!(out, "selected K = {}", sel.k).map_err(io_err)?;
        }
        Command::Topics(a) => {
            let view = store.topic_view(&a.run, a.topic, a.n_terms, a.n_docs)?;
            if a.json {
                out.write_all(&to_json_bytes(&view)).map_err(io_err)?;
            } else {
                print_view(&view, out).map_err(io_err)?;
            }
        }
        Command::Compare(a) => {
            let report = if a.labelings.is_empty() {
                let pid = project(&store, name, false)?;
                if a.runs.is_empty() {
                    return Err(Error::invalid("runs", "give --runs or --labelings"));
                }
                if let Some(t) = &a.themes {
                    compare(&read_json::<Vec<Theme>>(t)?, &runs_labelings(&store, &a.runs)?)?
                } else {
                    store.compare_runs(&pid, &a.runs)?
                }
            } else {
                let themes: Vec<Theme> = match &a.themes {
                    Some(t) => read_json(t)?,
                    None => store.themes(&project(&store, name, false)?)?,
                };
                let runs = a.labelings.iter().map(|p| read_json::<RunLabelings>(p)).collect::<Result<Vec<_>>>()?;
                compare(&themes, &runs)?
            };
            if a.json {
                out.write_all(&to_json_bytes(&report)).map_err(io_err)?;
            } else {
                write!(out, "{}", report.to_markdown()).map_err(io_err)?;
            }
            writeln!(out, "{}", union_line(&report)).map_err(io_err)?;
        }
        Command::Ledger(a) => {
            let ledger = if a.labelings.is_empty() {
                let pid = project(&store, name, false)?;
                if a.runs.len() != 2 {
                    return Err(Error::invalid("runs", "exactly two runs are required"));
                }
                store.build_ledger(&pid, [&a.runs[0], &a.runs[1]], a.top_n, &a.annotator)?
            } else {
                if a.top_terms.len() != 2 {
                    return Err(Error::invalid("top_terms", "two top-term files are required with --labelings"));
                }
                let themes: Vec<Theme> = match &a.themes {
                    Some(t) => read_json(t)?,
                    None => return Err(Error::invalid("themes", "required with --labelings")),
                };
                let labs = a.labelings.iter().map(|p| read_json::<RunLabelings>(p)).collect::<Result<Vec<_>>>()?;
                let tops = a.top_terms.iter().map(|p| read_json::<ModelTopTerms>(p)).collect::<Result<Vec<_>>>()?;
                let inputs: LedgerInputs = match &a.inputs {
                    Some(p) => read_json(p)?,
                    None => LedgerInputs::default(),
                };
                let report = compare(&themes, &labs)?;
                build_term_ledger(&report, [&tops[0], &tops[1]], [&labs[0].labelings, &labs[1].labelings], a.top_n, &inputs)?
            };
            let bytes = to_json_bytes(&ledger);
            match &a.out {
                Some(p) => write_atomic(p, &bytes)?,
                None => out.write_all(&bytes).map_err(io_err)?,
            }
            if let Some(q) = &a.queries_out {
                write_atomic(q, &to_json_bytes(&ledger_to_queries(&ledger)?))?;
            }
        }
        Command::Qdtm(a) => {
            let pid = project(&store, name, false)?;
            let queries: Vec<Query> = match &a.queries {
                Some(p) => read_json(p)?,
                None => store.ledger_queries(&pid)?,
            };
            let (config, jobs) = a.params.or(file.qdtm).resolve()?;
            let rec = finish(store.run_now(&pid, RunSpec::Qdtm { queries, config, jobs })?, out)?;
            let doc = store.hierarchy(&rec.run_id)?;
            for n in &doc.nodes {
                let terms: Vec<&str> = n.top_terms.iter().take(8).map(|t| t.term.as_str()).collect();
                writeln!(out, "{} {} docs={} subtopics={} | {}", n.node_id, n.label, n.documents.len(), n.children.len(), terms.join(" ")).map_err(io_err)?;
            }
            for u in &doc.unmodelable {
                writeln!(out, "unmodelable {}: {}", u.label, u.reason).map_err(io_err)?;
            }
        }
        Command::JudgeImport { file: path } => {
            let pid = project(&store, name, true)?;
            let j: JudgeFile = read_json(&path)?;
            let counts = judge_import(&store, &pid, j)?;
            writeln!(out, "imported {} labelings, {} selections, {} judgments", counts.0, counts.1, counts.2).map_err(io_err)?;
        }
        Command::JudgeExport { out: path } => {
            let pid = project(&store, name, false)?;
            let bytes = to_json_bytes(&judge_export(&store, &pid)?);
            match path {
                Some(p) => write_atomic(&p, &bytes)?,
                None => out.write_all(&bytes).map_err(io_err)?,
            }
        }
        Command::Runs => {
            let pid = project(&store, name, false)?;
            for r in store.list_runs(&pid)? {
                let kind = serde_json::to_value(r.spec.kind()).unwrap();
                let status = serde_json::to_value(r.status).unwrap();
                writeln!(out, "{}\t{}\t{}\t{}", r.run_id, kind.as_str().unwrap_or(""), status.as_str().unwrap_or(""), r.result_digest.as_deref().unwrap_or("-")).map_err(io_err)?;
            }
        }
        Command::Export { out: path } => {
            let pid = project(&store, name, false)?;
            write_atomic(&path, &store.export_bundle(&pid)?)?;
            writeln!(out, "{}", path.display()).map_err(io_err)?;
        }
        Command::Import { file: path } => {
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let rec = store.import_bundle(&bytes)?;
            writeln!(out, "imported project {} ({})", rec.name, rec.project_id).map_err(io_err)?;
        }
        Command::Serve(_) => unreachable!(),
    }
    Ok(())
}

fn runs_labelings(store: &Store, runs: &[String]) -> Result<Vec<RunLabelings>> {
    runs.iter().map(|r| store.run_labelings(r)).collect()
}

pub fn union_line(report: &ConcurrenceReport) -> String {
    let u = &report.union;
    format!("union detected={}, missing={}, novel={}, final={}", u.detected_themes.len(), u.missing_themes.len(), u.novel_topics.len(), report.final_topic_count)
}

fn print_view(view: &TopicView, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "run {} topic {}", view.run_id, view.topic_id)?;
    if let Some(l) = &view.labeling {
        writeln!(out, "labels: {}", l.labels.join("; "))?;
    }
    for (i, t) in view.terms.iter().enumerate() {
        writeln!(out, "{:>3} {:<24} {:.6}", i + 1, t.term, t.weight)?;
    }
    for d in &view.documents {
        writeln!(out, "\n[{} {} weight={:.4}]", d.doc_id, d.source_id, d.weight)?;
        let mut last = 0;
        let mut s = String::new();
        for h in &d.highlights {
            s.push_str(&d.text[last..h.start]);
            s.push('*');
            s.push_str(&d.text[h.start..h.end]);
            s.push('*');
            last = h.end;
        }
        s.push_str(&d.text[last..]);
        writeln!(out, "{s}")?;
    }
    Ok(())
}

/// Applies a judge file to the project; returns counts of labelings,
/// selections and judgments written.
pub fn judge_import(store: &Store, pid: &str, j: JudgeFile) -> Result<(usize, usize, usize)> {
    if let Some(themes) = j.themes {
        store.set_themes(pid, themes, "import")?;
    }
    for l in &j.labelings {
        let input = LabelingInput { labels: l.labels.clone(), theme_refs: l.theme_refs.clone(), annotator: l.annotator.clone(), timestamp: (l.timestamp != 0).then_some(l.timestamp) };
        store.put_labeling(&l.run_id, l.topic_id, input, None)?;
    }
    for (row, sel) in &j.selections {
        store.put_selection(pid, row, sel.clone(), None)?;
    }
    for jd in &j.judgments {
        let input = JudgmentInput { coherent: jd.coherent, include: jd.include, note: jd.note.clone(), annotator: jd.annotator.clone(), timestamp: (jd.timestamp != 0).then_some(jd.timestamp) };
        store.put_judgment(&jd.node_id, input, None)?;
    }
    Ok((j.labelings.len(), j.selections.len(), j.judgments.len()))
}

pub fn judge_export(store: &Store, pid: &str) -> Result<JudgeFile> {
    let state = store.human_state(pid)?;
    let rows: std::collections::BTreeSet<&String> = state.inputs.exclusions.keys().chain(state.inputs.proposals.keys()).collect();
    let selections = rows.into_iter().map(|row| Ok((row.clone(), store.selection(pid, row)?.0))).collect::<Result<BTreeMap<_, _>>>()?;
    Ok(JudgeFile { themes: state.themes, labelings: state.labelings.into_values().flat_map(|r| r.labelings).collect(), selections, judgments: state.judgments })
}
