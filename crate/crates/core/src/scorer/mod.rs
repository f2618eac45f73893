//! The neural action scorer: a bidirectional LSTM encoder over the
//! utterance, an LSTM decoder with attention and parent feeding, and
//! probability heads for every action type. Probabilities are always
//! normalized over the legal action set reported by the transition system,
//! so illegal actions never receive mass.
//!
//! Inference runs on plain arrays; training records a tape and replays it
//! backwards for exact gradients (checked against central finite
//! differences in the test suite).

mod ctx;
mod model;
mod params;
mod scalar;
mod vocab;

pub mod checkpoint;
pub mod train;

use std::sync::Arc;

use ndarray::Array1;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::asdl::Grammar;
use crate::convert::{ConvertError, TableContext};
use crate::dataset::tokenize;
use crate::transition::{
    init_hypothesis, init_hypothesis_with_columns, Action, ActionClass, Hypothesis,
    TransitionError,
};

pub use ctx::{EvalCtx, MathCtx, TapeCtx};
pub use model::{Dropout, ModelDims, ScoreCand};
pub use params::{GradStore, ParamId, ParamStore};
pub use scalar::{Precision, Scalar};
pub use vocab::{Vocab, UNK_TOKEN};

use model::{
    action_candidates, action_input_embedding, action_scores_ctx, decode_step_ctx,
    encode_columns_ctx, encode_ctx, init_decoder_ctx, Encoded, StepState, Tensors,
};

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("legal actions include column selection but no table was given")]
    MissingTable,
    #[error("oracle action sequence is not replayable: {0}")]
    IllegalOracle(String),
    #[error("{} example(s) failed conversion, first: line {}: {}",
            .failures.len(), .failures[0].0, .failures[0].1)]
    ConversionFailure { failures: Vec<(usize, String)> },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("parameter `{0}` became non-finite")]
    NonFinite(String),
    #[error("checkpoint rejected: {0}")]
    CheckpointMismatch(String),
    #[error("utterance is empty")]
    EmptyUtterance,
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error(transparent)]
    Convert(#[from] ConvertError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

/// Model hyperparameters. The defaults suit real training runs; tests use
/// much smaller dimensions.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ScorerConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub field_embed_dim: usize,
    pub action_embed_dim: usize,
    pub dropout_rate: f64,
    pub vocab_cutoff: usize,
    pub scalar_precision: Precision,
    pub parent_feeding: bool,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            embed_dim: 128,
            hidden_dim: 256,
            field_embed_dim: 64,
            action_embed_dim: 64,
            dropout_rate: 0.3,
            vocab_cutoff: 2,
            scalar_precision: Precision::Single,
            parent_feeding: true,
        }
    }
}

impl ScorerConfig {
    /// Small double-precision configuration for tests.
    pub fn tiny() -> Self {
        ScorerConfig {
            embed_dim: 8,
            hidden_dim: 8,
            field_embed_dim: 4,
            action_embed_dim: 6,
            dropout_rate: 0.0,
            vocab_cutoff: 1,
            scalar_precision: Precision::Double,
            parent_feeding: true,
        }
    }

    pub fn validate(&self) -> Result<(), ScorerError> {
        let dims = [
            self.embed_dim,
            self.hidden_dim,
            self.field_embed_dim,
            self.action_embed_dim,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(ScorerError::ShapeMismatch(
                "all dimensions must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ScorerError::ShapeMismatch(
                "dropout rate must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Per-token encoder outputs (each `2 * hidden_dim`) and the concatenated
/// final directional states.
#[derive(Debug, Clone)]
pub struct EncoderStates<F: Scalar> {
    pub states: Vec<Array1<F>>,
    pub summary: Array1<F>,
}

/// Everything one decoder step produces.
#[derive(Debug, Clone)]
pub struct DecoderStepOut<F: Scalar> {
    pub hidden: Array1<F>,
    pub cell: Array1<F>,
    pub s_tilde: Array1<F>,
    pub context: Array1<F>,
    pub parent_feed: Array1<F>,
    pub attention: Array1<F>,
}

/// The full model: configuration, vocabularies, and parameters.
#[derive(Debug, Clone)]
pub struct Scorer<F: Scalar> {
    config: ScorerConfig,
    grammar: Arc<Grammar>,
    src_vocab: Vocab,
    gen_vocab: Vocab,
    dims: ModelDims,
    tensors: Tensors,
    params: ParamStore<F>,
}

impl<F: Scalar> Scorer<F> {
    pub fn new(
        config: ScorerConfig,
        grammar: Arc<Grammar>,
        src_vocab: Vocab,
        gen_vocab: Vocab,
        seed: u64,
    ) -> Result<Self, ScorerError> {
        config.validate()?;
        let dims = ModelDims {
            embed: config.embed_dim,
            hidden: config.hidden_dim,
            action_embed: config.action_embed_dim,
            field_embed: config.field_embed_dim,
            src_vocab: src_vocab.len(),
            gen_vocab: gen_vocab.len(),
            ctor_count: grammar.ctor_count(),
            field_slots: grammar.field_slot_count(),
            parent_feeding: config.parent_feeding,
        };
        let (params, tensors) = model::build_params(&dims, seed);
        Ok(Scorer {
            config,
            grammar,
            src_vocab,
            gen_vocab,
            dims,
            tensors,
            params,
        })
    }

    pub fn config(&self) -> &ScorerConfig {
        &self.config
    }

    pub fn grammar(&self) -> &Arc<Grammar> {
        &self.grammar
    }

    pub fn src_vocab(&self) -> &Vocab {
        &self.src_vocab
    }

    pub fn gen_vocab(&self) -> &Vocab {
        &self.gen_vocab
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    pub fn src_ids(&self, utterance: &[String]) -> Vec<usize> {
        utterance
            .iter()
            .map(|t| self.src_vocab.id_or_unk(t))
            .collect()
    }

    fn column_token_ids(&self, table: &TableContext) -> Vec<Vec<usize>> {
        table
            .column_names
            .iter()
            .map(|name| {
                let ids = self.src_ids(&tokenize(name));
                if ids.is_empty() {
                    vec![self.src_vocab.unk_id()]
                } else {
                    ids
                }
            })
            .collect()
    }

    /// Run the bidirectional encoder. Unknown tokens use the UNK
    /// embedding; the utterance must be non-empty.
    pub fn encode(&self, utterance: &[String]) -> Result<EncoderStates<F>, ScorerError> {
        if utterance.is_empty() {
            return Err(ScorerError::EmptyUtterance);
        }
        let mut ctx = EvalCtx::new(&self.params);
        let enc = encode_ctx(&mut ctx, &self.tensors, &self.dims, &self.src_ids(utterance));
        Ok(EncoderStates {
            states: enc.states,
            summary: enc.summary,
        })
    }

    fn as_encoded(&self, enc: &EncoderStates<F>) -> Encoded<Array1<F>> {
        Encoded {
            states: enc.states.clone(),
            summary: enc.summary.clone(),
        }
    }

    /// One decoder step on plain arrays. `prev` of `None` starts from the
    /// learned affine map of the encoder summary with a zero attentional
    /// vector; `prev_action` of `None` feeds a zero action embedding.
    /// `parent_state` is the decoder hidden state recorded at the step
    /// that created the frontier's constructor (zeros at the root); with
    /// parent feeding disabled it is ignored entirely.
    pub fn decode_step(
        &self,
        prev: Option<&DecoderStepOut<F>>,
        prev_action: Option<&Action>,
        field_slot: usize,
        parent_state: Option<&Array1<F>>,
        enc: &EncoderStates<F>,
    ) -> Result<DecoderStepOut<F>, ScorerError> {
        if field_slot >= self.dims.field_slots {
            return Err(ScorerError::ShapeMismatch(format!(
                "field slot {field_slot} out of range"
            )));
        }
        let mut ctx = EvalCtx::new(&self.params);
        let encoded = self.as_encoded(enc);
        let (prev_h, prev_c, prev_st) = match prev {
            Some(p) => (p.hidden.clone(), p.cell.clone(), p.s_tilde.clone()),
            None => {
                let (h0, c0) = init_decoder_ctx(&mut ctx, &self.tensors, &encoded);
                (h0, c0, ctx.zeros(self.dims.hidden))
            }
        };
        let prev_a = match prev_action {
            Some(a) => action_input_embedding(
                &mut ctx,
                &self.tensors,
                &self.dims,
                &self.gen_vocab,
                a,
            ),
            None => ctx.zeros(self.dims.action_embed),
        };
        let parent = parent_state.cloned();
        let step = decode_step_ctx(
            &mut ctx,
            &self.tensors,
            &self.dims,
            &prev_h,
            &prev_c,
            &prev_st,
            &prev_a,
            field_slot,
            parent.as_ref(),
            &encoded,
            &mut Dropout::Off,
        );
        Ok(DecoderStepOut {
            hidden: step.hidden,
            cell: step.cell,
            s_tilde: step.s_tilde,
            context: step.context,
            parent_feed: step.parent_feed,
            attention: step.attention,
        })
    }

    /// Log-probabilities of every legal action at a decoder step,
    /// normalized over the legal set.
    pub fn action_logprobs(
        &self,
        step: &DecoderStepOut<F>,
        legal: &[ActionClass],
        enc: &EncoderStates<F>,
        utterance: &[String],
        table: Option<&TableContext>,
    ) -> Result<Vec<(Action, f64)>, ScorerError> {
        if legal.is_empty() {
            return Err(ScorerError::ShapeMismatch("empty legal set".into()));
        }
        let needs_table = legal
            .iter()
            .any(|c| matches!(c, ActionClass::SelColumn { .. }));
        let col_encs = match (needs_table, table) {
            (true, None) => return Err(ScorerError::MissingTable),
            (true, Some(t)) => {
                let mut ctx = EvalCtx::new(&self.params);
                Some(encode_columns_ctx(
                    &mut ctx,
                    &self.tensors,
                    &self.dims,
                    &self.column_token_ids(t),
                ))
            }
            _ => None,
        };
        let cands = action_candidates(&self.dims, &self.gen_vocab, legal, utterance);
        let mut ctx = EvalCtx::new(&self.params);
        let encoded = self.as_encoded(enc);
        let state = StepState {
            hidden: step.hidden.clone(),
            cell: step.cell.clone(),
            s_tilde: step.s_tilde.clone(),
            context: step.context.clone(),
            parent_feed: step.parent_feed.clone(),
            attention: step.attention.clone(),
        };
        let logps = action_scores_ctx(
            &mut ctx,
            &self.tensors,
            &self.gen_vocab,
            &cands,
            &state,
            &encoded,
            col_encs.as_deref(),
        );
        Ok(cands
            .into_iter()
            .map(|(a, _)| a)
            .zip(logps.iter().map(|v| v.as_f64()))
            .collect())
    }

    /// Teacher-forced pass along an oracle action sequence; returns one
    /// log-probability node per step.
    fn run_teacher_forced<C: MathCtx<F>>(
        &self,
        ctx: &mut C,
        utterance: &[String],
        oracle: &[Action],
        table: Option<&TableContext>,
        dropout: &mut Dropout<'_>,
    ) -> Result<Vec<C::V>, ScorerError> {
        if utterance.is_empty() {
            return Err(ScorerError::EmptyUtterance);
        }
        if oracle.is_empty() {
            return Err(ScorerError::IllegalOracle("empty action sequence".into()));
        }
        let enc = encode_ctx(ctx, &self.tensors, &self.dims, &self.src_ids(utterance));
        let col_encs = table.map(|t| {
            encode_columns_ctx(ctx, &self.tensors, &self.dims, &self.column_token_ids(t))
        });
        let (mut prev_h, mut prev_c) = init_decoder_ctx(ctx, &self.tensors, &enc);
        let mut prev_st = ctx.zeros(self.dims.hidden);
        let mut hyp = match table {
            Some(t) => init_hypothesis_with_columns(&self.grammar, t.width()),
            None => init_hypothesis(&self.grammar),
        };
        let mut hidden_by_step: Vec<C::V> = Vec::with_capacity(oracle.len());
        let mut picked = Vec::with_capacity(oracle.len());

        for (t_idx, action) in oracle.iter().enumerate() {
            if hyp.is_complete() {
                return Err(ScorerError::IllegalOracle(
                    "actions continue after completion".into(),
                ));
            }
            let classes = hyp.valid_actions()?;
            let cands = action_candidates(&self.dims, &self.gen_vocab, &classes, utterance);
            let oracle_at = cands.iter().position(|(a, _)| a == action).ok_or_else(|| {
                ScorerError::IllegalOracle(format!(
                    "step {}: {} is not in the legal candidate set",
                    t_idx + 1,
                    action.describe(&self.grammar)
                ))
            })?;
            let frontier = hyp.frontier().expect("incomplete hypothesis");
            let slot = frontier.field(&self.grammar, &hyp).slot;
            let parent = match frontier.parent_step {
                0 => None,
                p => Some(&hidden_by_step[p - 1]),
            };
            let prev_a = match t_idx {
                0 => ctx.zeros(self.dims.action_embed),
                _ => action_input_embedding(
                    ctx,
                    &self.tensors,
                    &self.dims,
                    &self.gen_vocab,
                    &oracle[t_idx - 1],
                ),
            };
            let step = decode_step_ctx(
                ctx,
                &self.tensors,
                &self.dims,
                &prev_h,
                &prev_c,
                &prev_st,
                &prev_a,
                slot,
                parent,
                &enc,
                dropout,
            );
            let logps = action_scores_ctx(
                ctx,
                &self.tensors,
                &self.gen_vocab,
                &cands,
                &step,
                &enc,
                col_encs.as_deref(),
            );
            picked.push(ctx.index(&logps, oracle_at));
            hidden_by_step.push(step.hidden.clone());
            prev_h = step.hidden;
            prev_c = step.cell;
            prev_st = step.s_tilde;
            hyp = hyp
                .apply_action(action)
                .map_err(|e| ScorerError::IllegalOracle(e.to_string()))?;
        }
        if !hyp.is_complete() {
            return Err(ScorerError::IllegalOracle(
                "sequence ends before the derivation completes".into(),
            ));
        }
        Ok(picked)
    }

    /// Negative log-likelihood of an oracle action sequence.
    pub fn sequence_nll(
        &self,
        utterance: &[String],
        oracle: &[Action],
        table: Option<&TableContext>,
    ) -> Result<f64, ScorerError> {
        let mut ctx = EvalCtx::new(&self.params);
        let picked = self.run_teacher_forced(
            &mut ctx,
            utterance,
            oracle,
            table,
            &mut Dropout::Off,
        )?;
        Ok(-picked.iter().map(|v| v[0].as_f64()).sum::<f64>())
    }

    /// Loss and exact parameter gradients for one example. `dropout_rng`
    /// enables dropout at the configured rate during the pass.
    pub fn sequence_nll_grad(
        &self,
        utterance: &[String],
        oracle: &[Action],
        table: Option<&TableContext>,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, GradStore<F>), ScorerError> {
        let mut dropout = match dropout_rng {
            Some(rng) if self.config.dropout_rate > 0.0 => Dropout::On {
                rate: self.config.dropout_rate,
                rng,
            },
            _ => Dropout::Off,
        };
        let mut ctx = TapeCtx::new(&self.params);
        let picked =
            self.run_teacher_forced(&mut ctx, utterance, oracle, table, &mut dropout)?;
        let stacked = ctx.concat(&picked);
        let total = ctx.sum(&stacked);
        let loss = -ctx.scalar_value(&total).as_f64();
        let mut grads = GradStore::zeros_like(&self.params);
        ctx.backward(total, &mut grads);
        grads.scale(F::from_f64(-1.0));
        Ok((loss, grads))
    }

    /// Start a scoring session for decoding one utterance: the encoder and
    /// any column encodings run once and are shared across hypotheses.
    pub fn session(
        &self,
        utterance: &[String],
        table: Option<&TableContext>,
    ) -> Result<ScoringSession<'_, F>, ScorerError> {
        if utterance.is_empty() {
            return Err(ScorerError::EmptyUtterance);
        }
        let mut ctx = EvalCtx::new(&self.params);
        let enc = encode_ctx(&mut ctx, &self.tensors, &self.dims, &self.src_ids(utterance));
        let col_encs =
            table.map(|t| {
                encode_columns_ctx(&mut ctx, &self.tensors, &self.dims, &self.column_token_ids(t))
            });
        let (init_h, init_c) = init_decoder_ctx(&mut ctx, &self.tensors, &enc);
        Ok(ScoringSession {
            scorer: self,
            utterance: utterance.to_vec(),
            enc,
            col_encs,
            init_h,
            init_c,
        })
    }
}

/// Decoder state trace for one hypothesis, aligned with its action
/// history.
#[derive(Debug, Clone)]
pub struct DecodeCursor<F: Scalar> {
    steps: Vec<CursorStep<F>>,
}

#[derive(Debug, Clone)]
struct CursorStep<F: Scalar> {
    hidden: Array1<F>,
    cell: Array1<F>,
    s_tilde: Array1<F>,
}

/// Shared per-utterance state for decoding.
pub struct ScoringSession<'s, F: Scalar> {
    scorer: &'s Scorer<F>,
    utterance: Vec<String>,
    enc: Encoded<Array1<F>>,
    col_encs: Option<Vec<Array1<F>>>,
    init_h: Array1<F>,
    init_c: Array1<F>,
}

impl<'s, F: Scalar> ScoringSession<'s, F> {
    pub fn start(&self) -> DecodeCursor<F> {
        DecodeCursor { steps: Vec::new() }
    }

    pub fn utterance(&self) -> &[String] {
        &self.utterance
    }

    /// Compute the next decoder step for `hyp` and score its legal
    /// actions. The cursor must be aligned with the hypothesis history.
    pub fn advance(
        &self,
        cursor: &DecodeCursor<F>,
        hyp: &Hypothesis,
    ) -> Result<(DecodeCursor<F>, Vec<(Action, f64)>), ScorerError> {
        debug_assert_eq!(cursor.steps.len(), hyp.step_count());
        let scorer = self.scorer;
        let classes = hyp.valid_actions()?;
        let cands =
            action_candidates(&scorer.dims, &scorer.gen_vocab, &classes, &self.utterance);
        let frontier = hyp.frontier().expect("incomplete hypothesis");
        let slot = frontier.field(&scorer.grammar, hyp).slot;

        let mut ctx = EvalCtx::new(&scorer.params);
        let (prev_h, prev_c, prev_st) = match cursor.steps.last() {
            Some(s) => (s.hidden.clone(), s.cell.clone(), s.s_tilde.clone()),
            None => (
                self.init_h.clone(),
                self.init_c.clone(),
                ctx.zeros(scorer.dims.hidden),
            ),
        };
        let prev_a = match hyp.history().last() {
            Some((a, _)) => action_input_embedding(
                &mut ctx,
                &scorer.tensors,
                &scorer.dims,
                &scorer.gen_vocab,
                a,
            ),
            None => ctx.zeros(scorer.dims.action_embed),
        };
        let parent = match frontier.parent_step {
            0 => None,
            p => Some(&cursor.steps[p - 1].hidden),
        };
        let step = decode_step_ctx(
            &mut ctx,
            &scorer.tensors,
            &scorer.dims,
            &prev_h,
            &prev_c,
            &prev_st,
            &prev_a,
            slot,
            parent,
            &self.enc,
            &mut Dropout::Off,
        );
        let logps = action_scores_ctx(
            &mut ctx,
            &scorer.tensors,
            &scorer.gen_vocab,
            &cands,
            &step,
            &self.enc,
            self.col_encs.as_deref(),
        );
        let scored = cands
            .into_iter()
            .map(|(a, _)| a)
            .zip(logps.iter().map(|v| v.as_f64()))
            .collect();
        let mut next = cursor.clone();
        next.steps.push(CursorStep {
            hidden: step.hidden,
            cell: step.cell,
            s_tilde: step.s_tilde,
        });
        Ok((next, scored))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asdl::parse_grammar;
    use crate::grammars;
    use crate::randgen::random_ast;
    use crate::transition::extract_actions;
    use ndarray::Array1;

    fn vocab(tokens: &[&str], gen: bool) -> Vocab {
        // repeat so the cutoff keeps everything
        let doubled: Vec<&str> = tokens.iter().chain(tokens.iter()).copied().collect();
        Vocab::build(doubled, 2, gen)
    }

    fn minimal_scorer() -> Scorer<f64> {
        let g = Arc::new(parse_grammar(grammars::MINIMAL_GRAMMAR, "expr").unwrap());
        let src = vocab(&["b", "q"], false);
        let gen = vocab(&["x", "y"], true);
        Scorer::new(ScorerConfig::tiny(), g, src, gen, 3).unwrap()
    }

    fn strings(toks: &[&str]) -> Vec<String> {
        toks.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn encoder_shapes() {
        let s = minimal_scorer();
        let enc = s.encode(&strings(&["b", "q", "b"])).unwrap();
        assert_eq!(enc.states.len(), 3);
        for h in &enc.states {
            assert_eq!(h.len(), 2 * s.config.hidden_dim);
        }
        assert_eq!(enc.summary.len(), 2 * s.config.hidden_dim);
        assert!(s.encode(&[]).is_err());
    }

    #[test]
    fn permuting_tokens_changes_states() {
        let s = minimal_scorer();
        let a = s.encode(&strings(&["b", "q"])).unwrap();
        let b = s.encode(&strings(&["q", "b"])).unwrap();
        let changed = a
            .states
            .iter()
            .zip(&b.states)
            .any(|(x, y)| x.iter().zip(y.iter()).any(|(u, v)| u != v));
        assert!(changed);
    }

    #[test]
    fn attention_weights_sum_to_one() {
        let s = minimal_scorer();
        let enc = s.encode(&strings(&["b", "q", "q", "b"])).unwrap();
        let step = s
            .decode_step(None, None, crate::asdl::Grammar::ROOT_FIELD_SLOT, None, &enc)
            .unwrap();
        let total: f64 = step.attention.sum();
        assert!((total - 1.0).abs() < 1e-6);
        // the attentional vector satisfies its defining equation
        let mut ctx = EvalCtx::new(&s.params);
        let ch = ctx.concat(&[step.context.clone(), step.hidden.clone()]);
        let pre = ctx.matvec(s.tensors.w_c, &ch);
        let expect = ctx.tanh(&pre);
        for (a, b) in expect.iter().zip(step.s_tilde.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn singleton_legal_set_gets_all_mass() {
        let s = minimal_scorer();
        let utter = strings(&["b"]);
        let enc = s.encode(&utter).unwrap();
        let hyp = init_hypothesis(&s.grammar);
        let step = s
            .decode_step(None, None, crate::asdl::Grammar::ROOT_FIELD_SLOT, None, &enc)
            .unwrap();
        let classes = hyp.valid_actions().unwrap();
        let logps = s
            .action_logprobs(&step, &classes, &enc, &utter, None)
            .unwrap();
        assert_eq!(logps.len(), 1);
        assert!(logps[0].1.abs() < 1e-6);
    }

    #[test]
    fn copy_marginal_matches_manual_enumeration() {
        let s = minimal_scorer();
        // "a" appears twice and is out of vocabulary, so its mass is the
        // unk share of the gen head plus both pointer positions
        let utter = strings(&["a", "b", "a"]);
        let enc = s.encode(&utter).unwrap();
        let name = s.grammar.lookup_ctor("Name").unwrap();
        let hyp = init_hypothesis(&s.grammar)
            .apply_action(&Action::ApplyConstr(name))
            .unwrap();
        let step = s.decode_step(None, None, 1, None, &enc).unwrap();
        let classes = hyp.valid_actions().unwrap();
        let logps = s
            .action_logprobs(&step, &classes, &enc, &utter, None)
            .unwrap();

        // manual route, plain array math
        let st = &step.s_tilde;
        let gate = softmax_vec(&s.params.value(s.tensors.w_gate).dot(st));
        let gen_probs = softmax_vec(
            &s.params
                .value(s.tensors.tok_out_embed)
                .dot(&s.params.value(s.tensors.w_gen).dot(st)),
        );
        let u_copy = s.params.value(s.tensors.w_copy).dot(st);
        let ptr = softmax_vec(&Array1::from_iter(
            enc.states.iter().map(|h| h.dot(&u_copy)),
        ));
        let p_unk = gen_probs[s.gen_vocab.unk_id()];
        let raw = |positions: &[usize]| {
            gate[0] * p_unk + gate[1] * positions.iter().map(|&i| ptr[i]).sum::<f64>()
        };
        let mut raw_scores: Vec<(Action, f64)> = Vec::new();
        for (action, _) in &logps {
            if let Action::GenToken(tok) = action {
                let positions: Vec<usize> = utter
                    .iter()
                    .enumerate()
                    .filter(|(_, u)| u == &tok)
                    .map(|(i, _)| i)
                    .collect();
                let base = if let Some(id) = s.gen_vocab.id(tok) {
                    gate[0] * gen_probs[id]
                        + gate[1] * positions.iter().map(|&i| ptr[i]).sum::<f64>()
                } else {
                    raw(&positions)
                };
                raw_scores.push((action.clone(), base));
            }
        }
        let z: f64 = raw_scores.iter().map(|(_, p)| p).sum();
        for ((a1, lp), (a2, p)) in logps.iter().zip(&raw_scores) {
            assert_eq!(a1, a2);
            assert!(
                (lp.exp() - p / z).abs() < 1e-10,
                "{a1:?}: graph {} vs manual {}",
                lp.exp(),
                p / z
            );
        }
        // both occurrences of "a" contribute pointer mass
        let pa = logps
            .iter()
            .find(|(a, _)| matches!(a, Action::GenToken(t) if t == "a"))
            .unwrap()
            .1
            .exp();
        let expected = raw(&[0, 2]) / z;
        assert!((pa - expected).abs() < 1e-10);
    }

    fn softmax_vec(x: &Array1<f64>) -> Array1<f64> {
        let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e = x.mapv(|v| (v - m).exp());
        let s = e.sum();
        e.mapv(|v| v / s)
    }

    #[test]
    fn distribution_sums_to_one_along_replays() {
        let g = Arc::new(parse_grammar(grammars::LAMBDA_GRAMMAR, "expr").unwrap());
        let src = vocab(&["which", "states", "border", "texas"], false);
        let gen = vocab(&["state", "next_to", "texas:s", "$0", "e"], true);
        let s: Scorer<f64> = Scorer::new(ScorerConfig::tiny(), g.clone(), src, gen, 5).unwrap();
        let pool = strings(&["state", "next_to", "$0"]);
        let utter = strings(&["which", "states", "border", "texas"]);
        let session = s.session(&utter, None).unwrap();
        for seed in 0..5 {
            let tree = random_ast(&g, 4, seed, &pool).unwrap();
            let oracle = extract_actions(&g, &tree).unwrap();
            let mut hyp = init_hypothesis(&g);
            let mut cursor = session.start();
            for action in &oracle {
                let (next, scored) = session.advance(&cursor, &hyp).unwrap();
                let total: f64 = scored.iter().map(|(_, lp)| lp.exp()).sum();
                assert!((total - 1.0).abs() < 1e-5, "seed {seed}: sum {total}");
                assert!(scored.iter().any(|(a, _)| a == action));
                cursor = next;
                hyp = hyp.apply_action(action).unwrap();
            }
        }
    }

    #[test]
    fn nll_matches_session_replay() {
        let g = Arc::new(parse_grammar(grammars::MINIMAL_GRAMMAR, "expr").unwrap());
        let src = vocab(&["call", "it", "x"], false);
        let gen = vocab(&["x", "y"], true);
        let s: Scorer<f64> = Scorer::new(ScorerConfig::tiny(), g.clone(), src, gen, 7).unwrap();
        let utter = strings(&["call", "it", "x"]);
        let name = g.lookup_ctor("Name").unwrap();
        let oracle = vec![Action::ApplyConstr(name), Action::GenToken("x".into())];
        let nll = s.sequence_nll(&utter, &oracle, None).unwrap();
        assert!(nll >= 0.0 && nll.is_finite());

        let session = s.session(&utter, None).unwrap();
        let mut hyp = init_hypothesis(&g);
        let mut cursor = session.start();
        let mut total = 0.0;
        for action in &oracle {
            let (next, scored) = session.advance(&cursor, &hyp).unwrap();
            total += scored.iter().find(|(a, _)| a == action).unwrap().1;
            cursor = next;
            hyp = hyp.apply_action(action).unwrap();
        }
        assert!((nll + total).abs() < 1e-10);

        // the taped loss agrees with the plain evaluation
        let (loss, _) = s.sequence_nll_grad(&utter, &oracle, None, None).unwrap();
        assert!((loss - nll).abs() < 1e-12);
    }

    #[test]
    fn full_model_gradient_check() {
        let g = Arc::new(parse_grammar(grammars::MINIMAL_GRAMMAR, "expr").unwrap());
        let src = vocab(&["give", "me", "x"], false);
        let gen = vocab(&["y"], true);
        let mut s: Scorer<f64> =
            Scorer::new(ScorerConfig::tiny(), g.clone(), src, gen, 13).unwrap();
        let utter = strings(&["give", "me", "x"]);
        let name = g.lookup_ctor("Name").unwrap();
        // copied out-of-vocabulary token exercises the pointer head
        let oracle = vec![Action::ApplyConstr(name), Action::GenToken("x".into())];
        let (_, grads) = s.sequence_nll_grad(&utter, &oracle, None, None).unwrap();

        let eps = 1e-5;
        let mut worst = 0.0f64;
        for at in 0..s.params.scalar_count() {
            let orig = s.params.get_flat(at);
            s.params.set_flat(at, orig + eps);
            let up = s.sequence_nll(&utter, &oracle, None).unwrap();
            s.params.set_flat(at, orig - eps);
            let down = s.sequence_nll(&utter, &oracle, None).unwrap();
            s.params.set_flat(at, orig);
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads.get_flat(at);
            let err = (analytic - numeric).abs()
                / analytic.abs().max(numeric.abs()).max(1e-4);
            worst = worst.max(err);
        }
        assert!(worst < 1e-4, "max relative gradient error {worst}");
    }

    #[test]
    fn parent_feeding_ablation_severs_parent_input() {
        let g = Arc::new(parse_grammar(grammars::MINI_PYTHON_GRAMMAR, "stmt").unwrap());
        let src = vocab(&["read", "the", "file"], false);
        let gen = vocab(&["pandas", "read_csv"], true);
        let mut config = ScorerConfig::tiny();
        config.parent_feeding = false;
        let s: Scorer<f64> = Scorer::new(config, g.clone(), src.clone(), gen.clone(), 17).unwrap();
        let enc = s.encode(&strings(&["read", "the", "file"])).unwrap();
        let h = s.config.hidden_dim;
        let p1 = Array1::from_elem(h, 3.25);
        let p2 = Array1::from_elem(h, -11.0);
        let a = s.decode_step(None, None, 1, Some(&p1), &enc).unwrap();
        let b = s.decode_step(None, None, 1, Some(&p2), &enc).unwrap();
        assert_eq!(a.s_tilde, b.s_tilde);
        assert_eq!(a.hidden, b.hidden);
        assert_eq!(a.cell, b.cell);

        // with parent feeding on, the same perturbation must show through
        let mut config = ScorerConfig::tiny();
        config.parent_feeding = true;
        let s: Scorer<f64> = Scorer::new(config, g, src, gen, 17).unwrap();
        let enc = s.encode(&strings(&["read", "the", "file"])).unwrap();
        let a = s.decode_step(None, None, 1, Some(&p1), &enc).unwrap();
        let b = s.decode_step(None, None, 1, Some(&p2), &enc).unwrap();
        assert_ne!(a.s_tilde, b.s_tilde);
    }

    #[test]
    fn missing_table_is_reported() {
        let g = Arc::new(parse_grammar(grammars::WIKISQL_GRAMMAR, "stmt").unwrap());
        let src = vocab(&["how", "many"], false);
        let gen = vocab(&["7"], true);
        let s: Scorer<f64> = Scorer::new(ScorerConfig::tiny(), g.clone(), src, gen, 19).unwrap();
        let utter = strings(&["how", "many"]);
        let enc = s.encode(&utter).unwrap();
        let step = s
            .decode_step(None, None, crate::asdl::Grammar::ROOT_FIELD_SLOT, None, &enc)
            .unwrap();
        let legal = vec![ActionClass::SelColumn { columns: 3 }];
        assert!(matches!(
            s.action_logprobs(&step, &legal, &enc, &utter, None),
            Err(ScorerError::MissingTable)
        ));
    }

    #[test]
    fn checkpoint_round_trip_preserves_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let g = Arc::new(parse_grammar(grammars::MINIMAL_GRAMMAR, "expr").unwrap());
        let src = vocab(&["b"], false);
        let gen = vocab(&["x"], true);
        let s: Scorer<f64> = Scorer::new(ScorerConfig::tiny(), g.clone(), src, gen, 23).unwrap();
        checkpoint::save(&s, crate::convert::MrFormat::Lambda, &path).unwrap();
        let loaded = checkpoint::load(&path, &g).unwrap();
        let s2 = match loaded.scorer {
            checkpoint::LoadedScorer::Double(s2) => s2,
            _ => panic!("expected double precision"),
        };
        let utter = strings(&["b", "b"]);
        let name = g.lookup_ctor("Name").unwrap();
        let oracle = vec![Action::ApplyConstr(name), Action::GenToken("x".into())];
        let a = s.sequence_nll(&utter, &oracle, None).unwrap();
        let b = s2.sequence_nll(&utter, &oracle, None).unwrap();
        assert_eq!(a, b);

        // a different grammar is refused by fingerprint
        let other = Arc::new(parse_grammar(grammars::LAMBDA_GRAMMAR, "expr").unwrap());
        assert!(matches!(
            checkpoint::load(&path, &other),
            Err(ScorerError::CheckpointMismatch(_))
        ));
    }
}
