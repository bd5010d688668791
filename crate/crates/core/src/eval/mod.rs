//! Evaluation harness: per-field scoring of completed forms against a gold key
//! and the per-form time/cost model.
//!
//! Scoring buckets every schema field into exactly one of Correct, Incorrect or
//! Blank. A value written into a field the gold key marks as expected-blank is
//! Incorrect; leaving it empty is Blank. This keeps every row summing to the
//! schema size while a perfect run has zero incorrect fields.

mod cost;

pub use cost::{cost_model, CostError, CostParams, CostReport};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::form::{FieldKind, FormSchema};
use crate::util::{is_truthy, normalize_value};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScoreError {
    #[error("gold key is missing schema field {0:?}")]
    GoldMissingField(String),
    #[error("gold key names unknown field {0:?}")]
    GoldUnknownField(String),
    #[error("observed values name unknown field {0:?}")]
    ObservedUnknownField(String),
    #[error("invalid gold key: {0}")]
    InvalidGold(String),
    #[error("invalid observed values: {0}")]
    InvalidObserved(String),
}

/// Answer-sheet entry for one field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GoldValue {
    Expected(String),
    ExpectedBlank,
}

/// Answer sheet for one form: every schema field is either expected to carry a
/// value or expected to be left blank.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GoldKey {
    pub entries: BTreeMap<String, GoldValue>,
}

impl GoldKey {
    /// Parse the gold-key file format: a JSON object mapping field name to a
    /// string (expected value) or `null` (expected blank).
    pub fn from_json(text: &str) -> Result<Self, ScoreError> {
        let raw: BTreeMap<String, Option<String>> =
            serde_json::from_str(text).map_err(|e| ScoreError::InvalidGold(e.to_string()))?;
        Ok(Self::from_options(raw))
    }

    pub fn from_options(raw: BTreeMap<String, Option<String>>) -> Self {
        let entries = raw
            .into_iter()
            .map(|(k, v)| {
                let v = match v {
                    Some(s) if !s.trim().is_empty() => GoldValue::Expected(s),
                    _ => GoldValue::ExpectedBlank,
                };
                (k, v)
            })
            .collect();
        Self { entries }
    }

    pub fn to_json(&self) -> String {
        let raw: BTreeMap<&str, Option<&str>> = self
            .entries
            .iter()
            .map(|(k, v)| {
                let v = match v {
                    GoldValue::Expected(s) => Some(s.as_str()),
                    GoldValue::ExpectedBlank => None,
                };
                (k.as_str(), v)
            })
            .collect();
        serde_json::to_string_pretty(&raw).expect("string map serializes")
    }

    /// The observed map a perfect run would produce.
    pub fn as_observed(&self) -> BTreeMap<String, String> {
        self.entries
            .iter()
            .map(|(k, v)| match v {
                GoldValue::Expected(s) => (k.clone(), s.clone()),
                GoldValue::ExpectedBlank => (k.clone(), String::new()),
            })
            .collect()
    }

    pub fn expected_count(&self) -> usize {
        self.entries.values().filter(|v| matches!(v, GoldValue::Expected(_))).count()
    }
}

/// Parse an observed-values file: JSON object of field name to string or null.
pub fn observed_from_json(text: &str) -> Result<BTreeMap<String, String>, ScoreError> {
    let raw: BTreeMap<String, Option<String>> =
        serde_json::from_str(text).map_err(|e| ScoreError::InvalidObserved(e.to_string()))?;
    Ok(raw.into_iter().map(|(k, v)| (k, v.unwrap_or_default())).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldOutcome {
    Correct,
    Incorrect,
    Blank,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub correct: usize,
    pub incorrect: usize,
    pub blank: usize,
    pub total: usize,
    pub per_field: BTreeMap<String, FieldOutcome>,
}

impl ScoreReport {
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.correct, self.incorrect, self.blank)
    }
}

// Checkboxes are compared on their checked state so a plan value of "sí" and
// a read-back value of "true" score the same.
fn canonical(kind: &FieldKind, value: &str) -> String {
    match kind {
        FieldKind::Checkbox => {
            if is_truthy(value) {
                "true".into()
            } else {
                String::new()
            }
        }
        _ => normalize_value(value),
    }
}

/// Score observed field values against the gold key.
///
/// `observed` may omit fields (treated as empty) but may not name fields
/// outside the schema. The gold key must cover the schema exactly.
pub fn score_plan(
    observed: &BTreeMap<String, String>,
    gold: &GoldKey,
    schema: &FormSchema,
) -> Result<ScoreReport, ScoreError> {
    let names: BTreeSet<&str> = schema.fields.iter().map(|f| f.name.as_str()).collect();
    if let Some(k) = gold.entries.keys().find(|k| !names.contains(k.as_str())) {
        return Err(ScoreError::GoldUnknownField(k.clone()));
    }
    if let Some(k) = observed.keys().find(|k| !names.contains(k.as_str())) {
        return Err(ScoreError::ObservedUnknownField(k.clone()));
    }

    let mut report = ScoreReport {
        correct: 0,
        incorrect: 0,
        blank: 0,
        total: schema.fields.len(),
        per_field: BTreeMap::new(),
    };
    for field in &schema.fields {
        let expected = gold
            .entries
            .get(&field.name)
            .ok_or_else(|| ScoreError::GoldMissingField(field.name.clone()))?;
        let seen = canonical(&field.kind, observed.get(&field.name).map(String::as_str).unwrap_or(""));
        let outcome = if seen.is_empty() {
            FieldOutcome::Blank
        } else {
            match expected {
                GoldValue::Expected(v) if canonical(&field.kind, v) == seen => FieldOutcome::Correct,
                _ => FieldOutcome::Incorrect,
            }
        };
        match outcome {
            FieldOutcome::Correct => report.correct += 1,
            FieldOutcome::Incorrect => report.incorrect += 1,
            FieldOutcome::Blank => report.blank += 1,
        }
        report.per_field.insert(field.name.clone(), outcome);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub label: String,
    #[serde(flatten)]
    pub report: ScoreReport,
}

/// Score several labelled runs. Rows come back sorted by correct count
/// (descending), ties broken by label.
pub fn score_batch(
    runs: &[(String, BTreeMap<String, String>)],
    gold: &GoldKey,
    schema: &FormSchema,
) -> Result<Vec<ScoreRow>, ScoreError> {
    let mut rows = runs
        .iter()
        .map(|(label, observed)| {
            Ok(ScoreRow { label: label.clone(), report: score_plan(observed, gold, schema)? })
        })
        .collect::<Result<Vec<_>, ScoreError>>()?;
    rows.sort_by(|a, b| b.report.correct.cmp(&a.report.correct).then_with(|| a.label.cmp(&b.label)));
    Ok(rows)
}

/// Aligned text table with Correct / Incorrect / Blank columns.
pub fn render_table(rows: &[ScoreRow]) -> String {
    let width = rows.iter().map(|r| r.label.chars().count()).max().unwrap_or(0).max("Model".len());
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>7}  {:>9}  {:>5}  {:>5}", "Model", "Correct", "Incorrect", "Blank", "Total");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>7}  {:>9}  {:>5}  {:>5}",
            r.label, r.report.correct, r.report.incorrect, r.report.blank, r.report.total
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::form::{FieldKind, FormField};

    fn schema(names: &[&str]) -> FormSchema {
        FormSchema {
            form_digest: String::new(),
            fields: names
                .iter()
                .map(|n| FormField::new(n, FieldKind::Text { max_len: None }, 1))
                .collect(),
        }
    }

    fn gold(pairs: &[(&str, Option<&str>)]) -> GoldKey {
        GoldKey::from_options(pairs.iter().map(|(k, v)| (k.to_string(), v.map(str::to_string))).collect())
    }

    fn obs(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn filled_expected_blank_is_incorrect() {
        let s = schema(&["a", "b"]);
        let g = gold(&[("a", Some("X")), ("b", None)]);
        let r = score_plan(&obs(&[("a", " x "), ("b", "oops")]), &g, &s).unwrap();
        assert_eq!(r.counts(), (1, 1, 0));
        assert_eq!(r.per_field["b"], FieldOutcome::Incorrect);
    }

    #[test]
    fn missing_observed_is_blank() {
        let s = schema(&["a", "b"]);
        let g = gold(&[("a", Some("X")), ("b", None)]);
        let r = score_plan(&BTreeMap::new(), &g, &s).unwrap();
        assert_eq!(r.counts(), (0, 0, 2));
    }

    #[test]
    fn key_mismatches_are_errors() {
        let s = schema(&["a"]);
        assert_eq!(
            score_plan(&obs(&[("zz", "1")]), &gold(&[("a", None)]), &s),
            Err(ScoreError::ObservedUnknownField("zz".into()))
        );
        assert_eq!(
            score_plan(&BTreeMap::new(), &gold(&[]), &s),
            Err(ScoreError::GoldMissingField("a".into()))
        );
        assert_eq!(
            score_plan(&BTreeMap::new(), &gold(&[("a", None), ("q", None)]), &s),
            Err(ScoreError::GoldUnknownField("q".into()))
        );
    }

    #[test]
    fn checkbox_scores_on_checked_state() {
        let s = FormSchema {
            form_digest: String::new(),
            fields: vec![FormField::new("autorizo", FieldKind::Checkbox, 1)],
        };
        let g = gold(&[("autorizo", Some("true"))]);
        assert_eq!(score_plan(&obs(&[("autorizo", "Sí")]), &g, &s).unwrap().counts(), (1, 0, 0));
        assert_eq!(score_plan(&obs(&[("autorizo", "no")]), &g, &s).unwrap().counts(), (0, 0, 1));
    }

    #[test]
    fn batch_sorts_by_correct_then_label() {
        let s = schema(&["a", "b"]);
        let g = gold(&[("a", Some("1")), ("b", Some("2"))]);
        let runs = vec![
            ("zeta".to_string(), obs(&[("a", "1")])),
            ("alpha".to_string(), obs(&[("a", "1")])),
            ("best".to_string(), obs(&[("a", "1"), ("b", "2")])),
        ];
        let rows = score_batch(&runs, &g, &s).unwrap();
        let labels: Vec<_> = rows.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(labels, ["best", "alpha", "zeta"]);
        let table = render_table(&rows);
        assert_eq!(table.lines().count(), 4);
        assert!(table.lines().nth(1).unwrap().starts_with("best "));
    }

    #[test]
    fn single_run_single_row() {
        let s = schema(&["a"]);
        let rows = score_batch(&[("only".into(), BTreeMap::new())], &gold(&[("a", None)]), &s).unwrap();
        assert_eq!(rows.len(), 1);
    }

    #[test]
    fn gold_json_round_trip() {
        let g = gold(&[("a", Some("X")), ("b", None)]);
        assert_eq!(GoldKey::from_json(&g.to_json()).unwrap(), g);
        assert_eq!(g.expected_count(), 1);
    }
}
