//! Concurrent validation of topic labels against grounded-theory themes,
//! and the per-topic term ledger that feeds query-driven modeling.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::lda::{top_terms, TopicModel};
use crate::qdtm::Query;
use crate::{Error, Result};

/// Reserved label for topics judged incoherent.
pub const RANDOM_LABEL: &str = "Random";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Theme {
    pub theme_id: u32,
    pub label: String,
    #[serde(default)]
    pub description: String,
    /// Themes describing the purpose of posts rather than their subject are
    /// kept out of the comparison.
    #[serde(default = "yes")]
    pub comparable: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicLabeling {
    pub run_id: String,
    pub topic_id: usize,
    pub labels: Vec<String>,
    #[serde(default)]
    pub theme_refs: Vec<u32>,
    #[serde(default)]
    pub annotator: String,
    #[serde(default)]
    pub timestamp: i64,
}

impl TopicLabeling {
    pub fn is_random(&self) -> bool {
        self.labels.iter().any(|l| l.trim().eq_ignore_ascii_case(RANDOM_LABEL))
    }
}

/// All labelings of one model run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLabelings {
    pub run_id: String,
    pub labelings: Vec<TopicLabeling>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConcurrenceView {
    pub detected_themes: BTreeSet<u32>,
    pub missing_themes: BTreeSet<u32>,
    pub novel_topics: BTreeSet<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConcurrenceReport {
    pub runs: Vec<(String, ConcurrenceView)>,
    pub union: ConcurrenceView,
    /// Comparable themes (detected or missing) plus novel topics: every
    /// topic carried into term extraction.
    pub final_topic_count: usize,
    /// Theme labels by id, for rendering.
    pub theme_labels: BTreeMap<u32, String>,
}

impl ConcurrenceReport {
    pub fn run(&self, run_id: &str) -> Option<&ConcurrenceView> {
        self.runs.iter().find(|(id, _)| id == run_id).map(|(_, v)| v)
    }

    pub fn theme_label(&self, id: u32) -> &str {
        self.theme_labels.get(&id).map_or("", String::as_str)
    }

    pub fn to_markdown(&self) -> String {
        let names = |ids: &BTreeSet<u32>| ids.iter().map(|id| self.theme_label(*id)).collect::<Vec<_>>().join("; ");
        let mut out = String::from("| view | detected | missing | novel |\n|---|---|---|---|\n");
        let views = self.runs.iter().map(|(id, v)| (id.as_str(), v)).chain(core::iter::once(("union", &self.union)));
        for (id, v) in views {
            out.push_str(&format!(
                "| {id} | {} ({}) | {} ({}) | {} ({}) |\n",
                v.detected_themes.len(),
                names(&v.detected_themes),
                v.missing_themes.len(),
                names(&v.missing_themes),
                v.novel_topics.len(),
                v.novel_topics.iter().cloned().collect::<Vec<_>>().join("; "),
            ));
        }
        out.push_str(&format!("\nfinal topic count: {}\n", self.final_topic_count));
        out
    }
}

fn label_key(label: &str) -> String {
    label.trim().to_lowercase()
}

// Novel labels are identified case-insensitively; the displayed spelling is
// the lexicographically smallest variant so the result is order-free.
fn insert_novel(set: &mut BTreeMap<String, String>, label: &str) {
    let key = label_key(label);
    let display = label.trim().to_string();
    set.entry(key).and_modify(|d| if display < *d { *d = display.clone() }).or_insert(display);
}

/// Compares topic labelings from one or more runs against the themes.
pub fn compare(themes: &[Theme], runs: &[RunLabelings]) -> Result<ConcurrenceReport> {
    if runs.is_empty() {
        return Err(Error::Selection("compare needs at least one run of labelings".into()));
    }
    let known: BTreeMap<u32, &Theme> = themes.iter().map(|t| (t.theme_id, t)).collect();
    let mut labels_seen = BTreeSet::new();
    for t in themes {
        if !labels_seen.insert(label_key(&t.label)) {
            return Err(Error::Ledger(format!("duplicate theme label {:?}", t.label)));
        }
    }
    let mut offenders = Vec::new();
    for run in runs {
        for l in &run.labelings {
            for r in &l.theme_refs {
                if !known.contains_key(r) {
                    offenders.push(format!("{}:topic {} -> theme {r}", run.run_id, l.topic_id));
                }
            }
        }
    }
    if !offenders.is_empty() {
        return Err(Error::UnknownThemes { offenders });
    }
    let comparable: BTreeSet<u32> = themes.iter().filter(|t| t.comparable).map(|t| t.theme_id).collect();

    let view_of = |labelings: &mut dyn Iterator<Item = &TopicLabeling>| -> (BTreeSet<u32>, BTreeMap<String, String>) {
        let mut detected = BTreeSet::new();
        let mut novel = BTreeMap::new();
        for l in labelings {
            if l.is_random() {
                continue;
            }
            if l.theme_refs.is_empty() {
                for label in l.labels.iter().filter(|s| !s.trim().is_empty()) {
                    insert_novel(&mut novel, label);
                }
            } else {
                detected.extend(l.theme_refs.iter().copied().filter(|r| comparable.contains(r)));
            }
        }
        (detected, novel)
    };
    let finish = |(detected, novel): (BTreeSet<u32>, BTreeMap<String, String>)| ConcurrenceView {
        missing_themes: comparable.difference(&detected).copied().collect(),
        detected_themes: detected,
        novel_topics: novel.into_values().collect(),
    };

    let mut per_run: BTreeMap<&str, Vec<&TopicLabeling>> = BTreeMap::new();
    for run in runs {
        per_run.entry(&run.run_id).or_default().extend(&run.labelings);
    }
    let run_views = per_run.iter().map(|(id, ls)| (id.to_string(), finish(view_of(&mut ls.iter().copied())))).collect();
    let union = finish(view_of(&mut runs.iter().flat_map(|r| &r.labelings)));
    let final_topic_count = union.detected_themes.len() + union.missing_themes.len() + union.novel_topics.len();
    Ok(ConcurrenceReport {
        runs: run_views,
        union,
        final_topic_count,
        theme_labels: themes.iter().map(|t| (t.theme_id, t.label.clone())).collect(),
    })
}

/// Top-ranked term strings of every topic of one model run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelTopTerms {
    pub run_id: String,
    pub topics: Vec<Vec<String>>,
}

impl ModelTopTerms {
    pub fn from_model(run_id: &str, model: &TopicModel, vocabulary: &Vocabulary, top_n: usize) -> Result<Self> {
        let topics = (0..model.k())
            .map(|k| Ok(top_terms(model, k, top_n)?.into_iter().map(|t| vocabulary.term(t.term_id).to_string()).collect()))
            .collect::<Result<_>>()?;
        Ok(ModelTopTerms { run_id: run_id.to_string(), topics })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowSource {
    BothModels,
    OneModel,
    Proposed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub label: String,
    pub theme_id: Option<u32>,
    pub source: RowSource,
    pub common_terms: Vec<String>,
    pub unique_a: Vec<String>,
    pub unique_b: Vec<String>,
    pub proposed_terms: Vec<String>,
    /// Top terms removed by human judgment, per model.
    #[serde(default)]
    pub excluded_a: Vec<String>,
    #[serde(default)]
    pub excluded_b: Vec<String>,
}

impl LedgerRow {
    pub fn all_terms(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.common_terms
            .iter()
            .chain(&self.unique_a)
            .chain(&self.unique_b)
            .chain(&self.proposed_terms)
            .filter(|t| seen.insert(t.to_lowercase()))
            .cloned()
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermLedger {
    pub run_a: String,
    pub run_b: String,
    pub rows: Vec<LedgerRow>,
}

/// Human inputs to the ledger, keyed by row label (theme label or novel
/// topic label, compared case-insensitively).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerInputs {
    /// Row label -> run id -> excluded terms.
    #[serde(default)]
    pub exclusions: BTreeMap<String, BTreeMap<String, Vec<String>>>,
    /// Row label -> proposed terms (only for rows no model produced).
    #[serde(default)]
    pub proposals: BTreeMap<String, Vec<String>>,
}

impl LedgerInputs {
    fn exclusions_for(&self, row: &str, run: &str) -> BTreeSet<String> {
        self.exclusions
            .iter()
            .filter(|(label, _)| label_key(label) == label_key(row))
            .flat_map(|(_, by_run)| by_run.get(run).into_iter().flatten().cloned())
            .collect()
    }

    fn proposals_for(&self, row: &str) -> Vec<String> {
        self.proposals.iter().filter(|(label, _)| label_key(label) == label_key(row)).flat_map(|(_, t)| t.iter().cloned()).collect()
    }
}

/// Builds the term ledger from a concurrence report over two runs.
///
/// For each final topic, the top-`top_n` terms of every topic labeled with it
/// are pooled per model (topic order, then rank), human exclusions removed,
/// and the two pools partitioned into common / unique-to-A / unique-to-B.
/// Topics no model produced take the human proposals instead; model-derived
/// rows never take proposals.
pub fn build_term_ledger(
    report: &ConcurrenceReport,
    models: [&ModelTopTerms; 2],
    labelings: [&[TopicLabeling]; 2],
    top_n: usize,
    inputs: &LedgerInputs,
) -> Result<TermLedger> {
    if top_n == 0 {
        return Err(Error::config("top_n", "must be >= 1"));
    }
    enum Key<'a> {
        Theme(u32),
        Novel(&'a str),
    }
    let mut keys: Vec<(String, Option<u32>, Key)> = report
        .union
        .detected_themes
        .union(&report.union.missing_themes)
        .map(|&id| (report.theme_label(id).to_string(), Some(id), Key::Theme(id)))
        .collect();
    keys.extend(report.union.novel_topics.iter().map(|l| (l.clone(), None, Key::Novel(l.as_str()))));

    let mut rows = Vec::with_capacity(keys.len());
    for (label, theme_id, key) in &keys {
        let mut pools: [Option<Vec<String>>; 2] = [None, None];
        let mut excluded: [Vec<String>; 2] = [Vec::new(), Vec::new()];
        for side in 0..2 {
            let run = &models[side].run_id;
            let topics: BTreeSet<usize> = labelings[side]
                .iter()
                .filter(|l| !l.is_random())
                .filter(|l| match key {
                    Key::Theme(id) => l.theme_refs.contains(id),
                    Key::Novel(n) => l.theme_refs.is_empty() && l.labels.iter().any(|x| label_key(x) == label_key(n)),
                })
                .map(|l| l.topic_id)
                .collect();
            if topics.is_empty() {
                continue;
            }
            let mut pool: Vec<String> = Vec::new();
            for &t in &topics {
                let terms = models[side].topics.get(t).ok_or(Error::Index { what: "topic", index: t, len: models[side].topics.len() })?;
                for term in terms.iter().take(top_n) {
                    if !pool.contains(term) {
                        pool.push(term.clone());
                    }
                }
            }
            let drop = inputs.exclusions_for(label, run);
            if let Some(unknown) = drop.iter().find(|d| !pool.contains(d)) {
                return Err(Error::Ledger(format!("row {label:?}: excluded term {unknown:?} is not among {run}'s top-{top_n} terms")));
            }
            excluded[side] = pool.iter().filter(|t| drop.contains(*t)).cloned().collect();
            pool.retain(|t| !drop.contains(t));
            pools[side] = Some(pool);
        }
        let proposals = inputs.proposals_for(label);
        let row = match (&pools[0], &pools[1]) {
            (None, None) => {
                if proposals.is_empty() {
                    return Err(Error::Ledger(format!("theme {label:?} appears in no model and has no proposed terms")));
                }
                LedgerRow {
                    label: label.clone(),
                    theme_id: *theme_id,
                    source: RowSource::Proposed,
                    common_terms: Vec::new(),
                    unique_a: Vec::new(),
                    unique_b: Vec::new(),
                    proposed_terms: proposals,
                    excluded_a: Vec::new(),
                    excluded_b: Vec::new(),
                }
            }
            (a, b) => {
                if !proposals.is_empty() {
                    return Err(Error::Ledger(format!("row {label:?} has model-derived terms; proposals are only accepted for topics no model produced")));
                }
                let empty = Vec::new();
                let pa = a.as_ref().unwrap_or(&empty);
                let pb = b.as_ref().unwrap_or(&empty);
                LedgerRow {
                    label: label.clone(),
                    theme_id: *theme_id,
                    source: if a.is_some() && b.is_some() { RowSource::BothModels } else { RowSource::OneModel },
                    common_terms: pa.iter().filter(|t| pb.contains(t)).cloned().collect(),
                    unique_a: pa.iter().filter(|t| !pb.contains(t)).cloned().collect(),
                    unique_b: pb.iter().filter(|t| !pa.contains(t)).cloned().collect(),
                    proposed_terms: Vec::new(),
                    excluded_a: core::mem::take(&mut excluded[0]),
                    excluded_b: core::mem::take(&mut excluded[1]),
                }
            }
        };
        rows.push(row);
    }
    // both-model rows, then single-model rows, then proposals; themes by id
    // with novel topics after them inside each group
    rows.sort_by(|a, b| a.source.cmp(&b.source).then_with(|| (a.theme_id.is_none(), a.theme_id).cmp(&(b.theme_id.is_none(), b.theme_id))).then_with(|| a.label.cmp(&b.label)));
    Ok(TermLedger { run_a: models[0].run_id.clone(), run_b: models[1].run_id.clone(), rows })
}

/// One query per ledger row: the row label and the union of its columns,
/// lowercased.
pub fn ledger_to_queries(ledger: &TermLedger) -> Result<Vec<Query>> {
    ledger
        .rows
        .iter()
        .map(|row| {
            let terms: BTreeSet<String> = row.all_terms().iter().map(|t| t.to_lowercase()).collect();
            if terms.is_empty() {
                return Err(Error::Ledger(format!("row {:?} has no terms", row.label)));
            }
            Ok(Query { label: row.label.clone(), terms })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn theme(id: u32, label: &str, comparable: bool) -> Theme {
        Theme { theme_id: id, label: label.into(), description: String::new(), comparable }
    }

    fn lab(run: &str, topic: usize, labels: &[&str], refs: &[u32]) -> TopicLabeling {
        TopicLabeling {
            run_id: run.into(),
            topic_id: topic,
            labels: labels.iter().map(|s| s.to_string()).collect(),
            theme_refs: refs.to_vec(),
            annotator: "a".into(),
            timestamp: 0,
        }
    }

    fn themes() -> Vec<Theme> {
        vec![theme(1, "Pay", true), theme(2, "Hiring", true), theme(3, "Covid", true), theme(4, "Feelings", false)]
    }

    #[test]
    fn detected_missing_novel() {
        let runs = [RunLabelings {
            run_id: "a".into(),
            labelings: vec![lab("a", 0, &["Pay"], &[1]), lab("a", 1, &["Fees"], &[]), lab("a", 2, &["Random"], &[]), lab("a", 3, &["Vibes"], &[4])],
        }];
        let r = compare(&themes(), &runs).unwrap();
        assert_eq!(r.union.detected_themes, BTreeSet::from([1]));
        assert_eq!(r.union.missing_themes, BTreeSet::from([2, 3]));
        assert_eq!(r.union.novel_topics, BTreeSet::from(["Fees".to_string()]));
        assert_eq!(r.final_topic_count, 4);
    }

    #[test]
    fn empty_run_detects_nothing() {
        let runs = [
            RunLabelings { run_id: "a".into(), labelings: vec![lab("a", 0, &["Pay"], &[1])] },
            RunLabelings { run_id: "b".into(), labelings: vec![] },
        ];
        let r = compare(&themes(), &runs).unwrap();
        assert!(r.run("b").unwrap().detected_themes.is_empty());
        assert_eq!(r.union.detected_themes, BTreeSet::from([1]));
    }

    #[test]
    fn unknown_theme_is_reported() {
        let runs = [RunLabelings { run_id: "a".into(), labelings: vec![lab("a", 0, &["X"], &[99])] }];
        match compare(&themes(), &runs) {
            Err(Error::UnknownThemes { offenders }) => assert_eq!(offenders, vec!["a:topic 0 -> theme 99".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn order_independent() {
        let l1 = vec![lab("a", 0, &["Pay"], &[1]), lab("a", 1, &["bank fees"], &[])];
        let l2 = vec![lab("b", 0, &["Bank Fees"], &[]), lab("b", 1, &["Hiring"], &[2])];
        let fwd = compare(&themes(), &[RunLabelings { run_id: "a".into(), labelings: l1.clone() }, RunLabelings { run_id: "b".into(), labelings: l2.clone() }]).unwrap();
        let mut r1 = l1;
        r1.reverse();
        let rev = compare(&themes(), &[RunLabelings { run_id: "b".into(), labelings: l2 }, RunLabelings { run_id: "a".into(), labelings: r1 }]).unwrap();
        assert_eq!(fwd, rev);
        assert_eq!(fwd.union.novel_topics.len(), 1);
    }

    fn models() -> (ModelTopTerms, ModelTopTerms) {
        (
            ModelTopTerms { run_id: "a".into(), topics: vec![vec!["pay".into(), "rate".into(), "na".into()], vec!["apply".into(), "link".into()]] },
            ModelTopTerms { run_id: "b".into(), topics: vec![vec!["rate".into(), "pay".into(), "tax".into()]] },
        )
    }

    #[test]
    fn ledger_partitions_and_proposals() {
        let (ma, mb) = models();
        let la = vec![lab("a", 0, &["Pay"], &[1]), lab("a", 1, &["Hiring"], &[2])];
        let lb = vec![lab("b", 0, &["Pay"], &[1])];
        let report = compare(&themes(), &[RunLabelings { run_id: "a".into(), labelings: la.clone() }, RunLabelings { run_id: "b".into(), labelings: lb.clone() }]).unwrap();
        let mut inputs = LedgerInputs::default();
        inputs.exclusions.insert("Pay".into(), BTreeMap::from([("a".to_string(), vec!["na".to_string()])]));
        // missing theme without proposal fails, naming it
        let err = build_term_ledger(&report, [&ma, &mb], [&la, &lb], 20, &inputs).unwrap_err();
        assert!(matches!(err, Error::Ledger(ref m) if m.contains("Covid")));
        inputs.proposals.insert("Covid".into(), vec!["pandemic".into(), "lockdown".into()]);
        let ledger = build_term_ledger(&report, [&ma, &mb], [&la, &lb], 20, &inputs).unwrap();
        let labels: Vec<&str> = ledger.rows.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(labels, ["Pay", "Hiring", "Covid"]);
        let pay = &ledger.rows[0];
        assert_eq!(pay.common_terms, ["pay", "rate"]);
        assert!(pay.unique_a.is_empty());
        assert_eq!(pay.unique_b, ["tax"]);
        assert_eq!(pay.excluded_a, ["na"]);
        assert_eq!(ledger.rows[1].unique_a, ["apply", "link"]);
        assert_eq!(ledger.rows[2].proposed_terms, ["pandemic", "lockdown"]);

        let queries = ledger_to_queries(&ledger).unwrap();
        assert_eq!(queries.len(), 3);
        assert_eq!(queries[2].terms, BTreeSet::from(["lockdown".to_string(), "pandemic".to_string()]));
    }

    #[test]
    fn proposals_rejected_for_model_rows() {
        let (ma, mb) = models();
        let la = vec![lab("a", 0, &["Pay"], &[1])];
        let lb = vec![lab("b", 0, &["Pay"], &[1])];
        let report = compare(&[theme(1, "Pay", true)], &[RunLabelings { run_id: "a".into(), labelings: la.clone() }]).unwrap();
        let mut inputs = LedgerInputs::default();
        inputs.proposals.insert("pay".into(), vec!["salary".into()]);
        assert!(build_term_ledger(&report, [&ma, &mb], [&la, &lb], 20, &inputs).is_err());
    }

    #[test]
    fn identical_lists_have_no_unique_terms() {
        let (ma, _) = models();
        let mb = ModelTopTerms { run_id: "b".into(), ..ma.clone() };
        let la = vec![lab("a", 0, &["Pay"], &[1])];
        let lb = vec![lab("b", 0, &["Pay"], &[1])];
        let report = compare(&[theme(1, "Pay", true)], &[RunLabelings { run_id: "a".into(), labelings: la.clone() }]).unwrap();
        let ledger = build_term_ledger(&report, [&ma, &mb], [&la, &lb], 20, &LedgerInputs::default()).unwrap();
        assert!(ledger.rows[0].unique_a.is_empty() && ledger.rows[0].unique_b.is_empty());
    }

    #[test]
    fn queries_union_columns() {
        let ledger = TermLedger {
            run_a: "a".into(),
            run_b: "b".into(),
            rows: vec![LedgerRow {
                label: "x".into(),
                theme_id: None,
                source: RowSource::BothModels,
                common_terms: vec!["a".into()],
                unique_a: vec!["b".into()],
                unique_b: vec!["b".into()],
                proposed_terms: vec![],
                excluded_a: vec![],
                excluded_b: vec![],
            }],
        };
        let q = ledger_to_queries(&ledger).unwrap();
        assert_eq!(q[0].terms, BTreeSet::from(["a".to_string(), "b".to_string()]));
    }

    proptest::proptest! {
        #[test]
        fn adding_labelings_never_shrinks_detection(refs in proptest::collection::vec(proptest::collection::vec(1u32..5, 0..3), 0..8), extra in proptest::collection::vec(1u32..5, 0..3)) {
            let base: Vec<TopicLabeling> = refs.iter().enumerate().map(|(i, r)| lab("a", i, &["t"], r)).collect();
            let mut more = base.clone();
            more.push(lab("a", 99, &["extra"], &extra));
            let r1 = compare(&themes(), &[RunLabelings { run_id: "a".into(), labelings: base }]).unwrap();
            let r2 = compare(&themes(), &[RunLabelings { run_id: "a".into(), labelings: more }]).unwrap();
            proptest::prop_assert!(r1.union.detected_themes.is_subset(&r2.union.detected_themes));
        }
    }
}
