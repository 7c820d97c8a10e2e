//! Bundled reference data from the tutoring-platform study: the fifteen
//! grounded-theory themes, the topic labelings of the 13- and 17-topic
//! models, their top-20 term lists, and the curation inputs that turn them
//! into the published query-term ledger.

use cgt_core::validation::{LedgerInputs, ModelTopTerms, RunLabelings, Theme};
use serde::Deserialize;

pub const THEMES_JSON: &str = include_str!("../fixtures/themes.json");
pub const LABELINGS_13_JSON: &str = include_str!("../fixtures/labelings_lda13.json");
pub const LABELINGS_17_JSON: &str = include_str!("../fixtures/labelings_lda17.json");
pub const TOP_TERMS_13_JSON: &str = include_str!("../fixtures/top_terms_lda13.json");
pub const TOP_TERMS_17_JSON: &str = include_str!("../fixtures/top_terms_lda17.json");
pub const LEDGER_INPUTS_JSON: &str = include_str!("../fixtures/ledger_inputs.json");
pub const EXPECTED_LEDGER_JSON: &str = include_str!("../fixtures/expected_ledger.json");

fn parse<T: for<'a> Deserialize<'a>>(s: &str) -> T {
    serde_json::from_str(s).expect("bundled fixture parses")
}

pub fn themes() -> Vec<Theme> {
    parse(THEMES_JSON)
}

pub fn labelings_13() -> RunLabelings {
    parse(LABELINGS_13_JSON)
}

pub fn labelings_17() -> RunLabelings {
    parse(LABELINGS_17_JSON)
}

pub fn top_terms_13() -> ModelTopTerms {
    parse(TOP_TERMS_13_JSON)
}

pub fn top_terms_17() -> ModelTopTerms {
    parse(TOP_TERMS_17_JSON)
}

pub fn ledger_inputs() -> LedgerInputs {
    parse(LEDGER_INPUTS_JSON)
}

/// One published ledger row: the term partition for a final topic.
#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
pub struct ExpectedRow {
    pub label: String,
    pub common_terms: Vec<String>,
    pub unique_a: Vec<String>,
    pub unique_b: Vec<String>,
    pub proposed_terms: Vec<String>,
}

pub fn expected_ledger() -> Vec<ExpectedRow> {
    parse(EXPECTED_LEDGER_JSON)
}
