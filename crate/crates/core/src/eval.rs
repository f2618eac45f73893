//! Exact-match and execution-accuracy evaluation.
//!
//! Exact match compares predicted and gold trees structurally, so it is
//! invariant to MR surface formatting. Execution accuracy (tables only)
//! compares execution results of the predicted and gold queries; examples
//! whose gold query executes empty are flagged indeterminate and excluded
//! from the execution denominator.

use serde::Serialize;

use crate::ast::trees_equal;
use crate::convert::{execute_sql, MrFormat};
use crate::dataset::{convert_checked, Example};
use crate::scorer::{Scalar, Scorer, ScorerError};
use crate::search::{answer_prune, beam_search, BeamConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExOutcome {
    Match,
    Mismatch,
    Indeterminate,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExampleOutcome {
    pub index: usize,
    pub exact_match: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub execution: Option<ExOutcome>,
    pub predicted_mr: Option<String>,
    pub gold_mr: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub exact_match_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub execution_accuracy: Option<f64>,
    pub per_example_outcomes: Vec<ExampleOutcome>,
}

/// Decode every example and score it against its gold MR.
pub fn evaluate<F: Scalar>(
    scorer: &Scorer<F>,
    format: MrFormat,
    examples: &[Example],
    config: &BeamConfig,
    prune: bool,
) -> Result<EvalReport, ScorerError> {
    let grammar = scorer.grammar();
    let mut outcomes = Vec::with_capacity(examples.len());
    let mut em_hits = 0usize;
    let mut ex_hits = 0usize;
    let mut ex_total = 0usize;
    let mut any_table = false;

    for (index, ex) in examples.iter().enumerate() {
        let gold = convert_checked(format, &ex.mr_text, grammar, ex.table.as_ref())
            .map_err(|msg| ScorerError::IllegalOracle(msg))?;
        let mut candidates = beam_search(scorer, &ex.utterance, config, ex.table.as_ref())?;
        if prune {
            if let Some(table) = &ex.table {
                candidates = answer_prune(&candidates, table, grammar);
            }
        }
        let predicted = candidates.first().map(|(t, _)| t.clone());
        let exact = predicted
            .as_ref()
            .is_some_and(|t| trees_equal(t, &gold));
        if exact {
            em_hits += 1;
        }
        let execution = match &ex.table {
            None => None,
            Some(table) => {
                any_table = true;
                let gold_result = execute_sql(&gold, table, grammar)?;
                if gold_result.empty {
                    Some(ExOutcome::Indeterminate)
                } else {
                    ex_total += 1;
                    let hit = match &predicted {
                        None => false,
                        Some(t) => execute_sql(t, table, grammar)
                            .map(|r| r == gold_result)
                            .unwrap_or(false),
                    };
                    if hit {
                        ex_hits += 1;
                    }
                    Some(if hit {
                        ExOutcome::Match
                    } else {
                        ExOutcome::Mismatch
                    })
                }
            }
        };
        let predicted_mr = predicted
            .as_ref()
            .and_then(|t| format.to_text(t, grammar, ex.table.as_ref()).ok());
        outcomes.push(ExampleOutcome {
            index,
            exact_match: exact,
            execution,
            predicted_mr,
            gold_mr: ex.mr_text.clone(),
        });
    }

    Ok(EvalReport {
        exact_match_accuracy: em_hits as f64 / examples.len().max(1) as f64,
        execution_accuracy: (any_table && ex_total > 0)
            .then(|| ex_hits as f64 / ex_total as f64),
        per_example_outcomes: outcomes,
    })
}
