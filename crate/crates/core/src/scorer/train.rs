//! Mini-batch training with Adam and global-norm gradient clipping.
//! Single-threaded and fully deterministic under a fixed seed.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::asdl::Grammar;
use crate::ast::AbstractTree;
use crate::convert::{MrFormat, TableContext};
use crate::dataset::{convert_checked, Example};
use crate::search::{beam_search, BeamConfig};
use crate::transition::{extract_actions, extract_actions_with_columns, Action};

use super::params::GradStore;
use super::scalar::Scalar;
use super::vocab::Vocab;
use super::{Scorer, ScorerError};

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub seed: u64,
    /// Stop once train exact match reaches this fraction.
    pub stop_at_em: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 300,
            batch_size: 10,
            learning_rate: 3e-3,
            grad_clip: 5.0,
            seed: 1,
            stop_at_em: None,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub train_em: f64,
}

/// One training example with its oracle extracted once up front.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub utterance: Vec<String>,
    pub mr_text: String,
    pub oracle: Vec<Action>,
    pub gold_tree: AbstractTree,
    pub table: Option<TableContext>,
}

/// Convert every example and extract its oracle action sequence. All
/// failures are collected so the caller sees every offending line at once.
pub fn prepare(
    grammar: &Grammar,
    format: MrFormat,
    examples: &[Example],
) -> Result<Vec<TrainingPair>, ScorerError> {
    let mut pairs = Vec::with_capacity(examples.len());
    let mut failures = Vec::new();
    for (i, ex) in examples.iter().enumerate() {
        let lineno = i + 1;
        match convert_checked(format, &ex.mr_text, grammar, ex.table.as_ref()) {
            Err(msg) => failures.push((lineno, msg)),
            Ok(tree) => {
                let oracle = match &ex.table {
                    Some(t) => extract_actions_with_columns(grammar, &tree, t.width()),
                    None => extract_actions(grammar, &tree),
                };
                match oracle {
                    Err(e) => failures.push((lineno, e.to_string())),
                    Ok(oracle) => pairs.push(TrainingPair {
                        utterance: ex.utterance.clone(),
                        mr_text: ex.mr_text.clone(),
                        oracle,
                        gold_tree: tree,
                        table: ex.table.clone(),
                    }),
                }
            }
        }
    }
    if !failures.is_empty() {
        return Err(ScorerError::ConversionFailure { failures });
    }
    Ok(pairs)
}

/// Source vocabulary from utterances, generation vocabulary from oracle
/// tokens, both with the given frequency cutoff.
pub fn build_vocabs(pairs: &[TrainingPair], cutoff: usize) -> (Vocab, Vocab) {
    let src = Vocab::build(
        pairs
            .iter()
            .flat_map(|p| p.utterance.iter().map(String::as_str)),
        cutoff,
        false,
    );
    let gen = Vocab::build(
        pairs.iter().flat_map(|p| {
            p.oracle.iter().filter_map(|a| match a {
                Action::GenToken(t) => Some(t.as_str()),
                _ => None,
            })
        }),
        cutoff,
        true,
    );
    (src, gen)
}

struct Adam<F: Scalar> {
    m: Vec<Array2<F>>,
    v: Vec<Array2<F>>,
    t: i32,
}

impl<F: Scalar> Adam<F> {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(scorer: &Scorer<F>) -> Self {
        let shapes: Vec<Array2<F>> = scorer
            .params()
            .iter()
            .map(|(_, v)| Array2::zeros(v.dim()))
            .collect();
        Adam {
            m: shapes.clone(),
            v: shapes,
            t: 0,
        }
    }

    fn step(&mut self, scorer: &mut Scorer<F>, grads: &GradStore<F>, lr: f64) {
        self.t += 1;
        let b1 = F::from_f64(Self::BETA1);
        let b2 = F::from_f64(Self::BETA2);
        let eps = F::from_f64(Self::EPS);
        let correction1 = 1.0 - Self::BETA1.powi(self.t);
        let correction2 = 1.0 - Self::BETA2.powi(self.t);
        let rate = F::from_f64(lr * correction2.sqrt() / correction1);
        for (i, g) in grads.tensors().iter().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(m.view_mut())
                .and(v.view_mut())
                .and(g.view())
                .for_each(|m, v, &g| {
                    *m = b1 * *m + (F::one() - b1) * g;
                    *v = b2 * *v + (F::one() - b2) * g * g;
                });
            let value = scorer.params_mut().value_mut(super::ParamId(i));
            ndarray::Zip::from(value.view_mut())
                .and(m.view())
                .and(v.view())
                .for_each(|p, &m, &v| {
                    *p = *p - rate * m / (v.sqrt() + eps);
                });
        }
    }
}

/// Train in place, returning per-epoch metrics. Oracles come pre-extracted
/// in `pairs`; exact match is measured by greedy decoding after every
/// epoch.
pub fn train<F: Scalar>(
    scorer: &mut Scorer<F>,
    pairs: &[TrainingPair],
    opts: &TrainOptions,
) -> Result<Vec<EpochMetrics>, ScorerError> {
    if pairs.is_empty() {
        return Err(ScorerError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut adam = Adam::new(scorer);
    let mut metrics = Vec::new();
    let batch_size = opts.batch_size.max(1);

    for epoch in 1..=opts.epochs.max(1) {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for batch in order.chunks(batch_size) {
            let mut grads: Option<GradStore<F>> = None;
            for &i in batch {
                let pair = &pairs[i];
                let (loss, g) = scorer.sequence_nll_grad(
                    &pair.utterance,
                    &pair.oracle,
                    pair.table.as_ref(),
                    Some(&mut rng),
                )?;
                epoch_loss += loss;
                match &mut grads {
                    None => grads = Some(g),
                    Some(acc) => acc.merge(g),
                }
            }
            let mut grads = grads.expect("non-empty batch");
            grads.scale(F::from_f64(1.0 / batch.len() as f64));
            grads.clip_global_norm(opts.grad_clip);
            adam.step(scorer, &grads, opts.learning_rate);
            if let Some(name) = scorer.params().find_non_finite() {
                return Err(ScorerError::NonFinite(name.to_string()));
            }
        }

        let train_em = exact_match(scorer, pairs)?;
        metrics.push(EpochMetrics {
            epoch,
            loss: epoch_loss / pairs.len() as f64,
            train_em,
        });
        if opts.stop_at_em.is_some_and(|target| train_em >= target) {
            break;
        }
    }
    Ok(metrics)
}

/// Fraction of pairs whose greedy decode equals the gold tree.
pub fn exact_match<F: Scalar>(
    scorer: &Scorer<F>,
    pairs: &[TrainingPair],
) -> Result<f64, ScorerError> {
    let cfg = BeamConfig {
        beam_size: 1,
        max_actions: 200,
        length_normalize: false,
    };
    let mut hits = 0usize;
    for pair in pairs {
        let out = beam_search(scorer, &pair.utterance, &cfg, pair.table.as_ref())?;
        if out
            .first()
            .is_some_and(|(tree, _)| crate::ast::trees_equal(tree, &pair.gold_tree))
        {
            hits += 1;
        }
    }
    Ok(hits as f64 / pairs.len() as f64)
}
