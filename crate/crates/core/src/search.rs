//! Grammar-constrained beam search and execution-based answer pruning.
//!
//! Hypotheses only ever extend with actions from their legal set, so every
//! finished tree validates against the grammar by construction. Completed
//! hypotheses leave the beam and collect in a separate pool until
//! `beam_size` of them exist or the beam dies out.

use crate::asdl::Grammar;
use crate::ast::AbstractTree;
use crate::convert::{execute_sql, TableContext};
use crate::scorer::{Scalar, Scorer, ScorerError};
use crate::transition::{
    init_hypothesis, init_hypothesis_with_columns, render_actions, Action,
};

#[derive(Debug, Clone)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub max_actions: usize,
    /// Sort finished hypotheses by score divided by action count.
    pub length_normalize: bool,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_size: 5,
            max_actions: 200,
            length_normalize: false,
        }
    }
}

struct Finished {
    tree: AbstractTree,
    sort_score: f64,
    completed_at: usize,
    action_text: String,
}

/// Decode one utterance. Returns up to `beam_size` completed trees sorted
/// by total (optionally length-normalized) log-probability; ties break on
/// earlier completion, then lexicographic action-sequence order. The list
/// is empty only when nothing completes within `max_actions` steps.
pub fn beam_search<F: Scalar>(
    scorer: &Scorer<F>,
    utterance: &[String],
    config: &BeamConfig,
    table: Option<&TableContext>,
) -> Result<Vec<(AbstractTree, f64)>, ScorerError> {
    let beam_size = config.beam_size.max(1);
    let grammar = scorer.grammar();
    let session = scorer.session(utterance, table)?;
    let init = match table {
        Some(t) => init_hypothesis_with_columns(grammar, t.width()),
        None => init_hypothesis(grammar),
    };
    let mut live = vec![(init, session.start())];
    let mut finished: Vec<Finished> = Vec::new();

    for step in 1..=config.max_actions.max(1) {
        if live.is_empty() || finished.len() >= beam_size {
            break;
        }
        struct Cand {
            total: f64,
            logp: f64,
            hyp_index: usize,
            rank: usize,
            action: Action,
        }
        let mut candidates: Vec<Cand> = Vec::new();
        let mut next_cursors = Vec::with_capacity(live.len());
        for (hi, (hyp, cursor)) in live.iter().enumerate() {
            let (next_cursor, scored) = session.advance(cursor, hyp)?;
            next_cursors.push(next_cursor);
            let mut ranked: Vec<(Action, f64)> = scored;
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
            for (rank, (action, logp)) in ranked.into_iter().take(beam_size).enumerate() {
                candidates.push(Cand {
                    total: hyp.score() + logp,
                    logp,
                    hyp_index: hi,
                    rank,
                    action,
                });
            }
        }
        candidates.sort_by(|a, b| {
            b.total
                .total_cmp(&a.total)
                .then_with(|| a.hyp_index.cmp(&b.hyp_index))
                .then_with(|| a.rank.cmp(&b.rank))
        });

        let mut next_live = Vec::with_capacity(beam_size);
        for Cand {
            total,
            logp,
            hyp_index: hi,
            action,
            ..
        } in candidates.into_iter().take(beam_size)
        {
            let (hyp, _) = &live[hi];
            let next = hyp.apply_action(&action)?.with_score_added(logp);
            if next.is_complete() {
                let actions: Vec<Action> =
                    next.history().iter().map(|(a, _)| a.clone()).collect();
                let sort_score = if config.length_normalize {
                    total / actions.len() as f64
                } else {
                    total
                };
                finished.push(Finished {
                    tree: next.tree().expect("complete hypothesis has a tree"),
                    sort_score,
                    completed_at: step,
                    action_text: render_actions(grammar, &actions),
                });
            } else {
                next_live.push((next, next_cursors[hi].clone()));
            }
        }
        live = next_live;
    }

    finished.sort_by(|a, b| {
        b.sort_score
            .total_cmp(&a.sort_score)
            .then_with(|| a.completed_at.cmp(&b.completed_at))
            .then_with(|| a.action_text.cmp(&b.action_text))
    });
    finished.truncate(beam_size);
    Ok(finished
        .into_iter()
        .map(|f| (f.tree, f.sort_score))
        .collect())
}

/// Drop candidates whose execution against `table` yields an empty
/// result, keeping relative order. When every candidate executes empty the
/// input is returned unchanged rather than an empty list.
pub fn answer_prune(
    candidates: &[(AbstractTree, f64)],
    table: &TableContext,
    grammar: &Grammar,
) -> Vec<(AbstractTree, f64)> {
    let kept: Vec<(AbstractTree, f64)> = candidates
        .iter()
        .filter(|(tree, _)| {
            execute_sql(tree, table, grammar)
                .map(|r| !r.empty)
                .unwrap_or(false)
        })
        .cloned()
        .collect();
    if kept.is_empty() {
        candidates.to_vec()
    } else {
        kept
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asdl::parse_grammar;
    use crate::grammars;

    fn sql_setup() -> (Grammar, TableContext) {
        let g = parse_grammar(grammars::WIKISQL_GRAMMAR, "stmt").unwrap();
        let table = TableContext::new(
            vec!["Player".into(), "No.".into(), "Position".into()],
            vec![
                vec!["Calvin Mccarty".into(), "32".into(), "Running back".into()],
                vec!["Joe Smith".into(), "12".into(), "Quarterback".into()],
            ],
        )
        .unwrap();
        (g, table)
    }

    #[test]
    fn prune_drops_empty_results_and_keeps_order() {
        let (g, table) = sql_setup();
        let bad = crate::convert::sql_to_ast(
            "SELECT Position FROM Table WHERE Player = Nobody",
            &table,
            &g,
        )
        .unwrap();
        let good = crate::convert::sql_to_ast(
            "SELECT Position FROM Table WHERE Player = Calvin Mccarty",
            &table,
            &g,
        )
        .unwrap();
        let pruned = answer_prune(&[(bad.clone(), -0.1), (good.clone(), -0.7)], &table, &g);
        assert_eq!(pruned.len(), 1);
        assert!(crate::ast::trees_equal(&pruned[0].0, &good));

        // all non-empty: untouched
        let pruned = answer_prune(&[(good.clone(), -0.7)], &table, &g);
        assert_eq!(pruned.len(), 1);

        // all empty: fall back to the original list
        let pruned = answer_prune(&[(bad.clone(), -0.1)], &table, &g);
        assert_eq!(pruned.len(), 1);
        assert!(crate::ast::trees_equal(&pruned[0].0, &bad));
    }
}
