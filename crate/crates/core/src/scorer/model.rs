//! Forward pieces of the encoder-decoder, written once against
//! [`MathCtx`] so training (tape) and search (plain eval) share the exact
//! same computation.
//!
//! Encoder: bidirectional LSTM over source tokens; each position yields
//! the concatenation of both directional states. Decoder: an LSTM whose
//! input at step t is `[prev-action embedding : previous attentional
//! vector : parent feed]`, where the parent feed concatenates the frontier
//! field embedding with the decoder state that created the frontier's
//! constructor. The attentional vector is `tanh(W_c [context : hidden])`.
//!
//! Probability heads, all over the attentional vector:
//! * constructor / Reduce choices score `a_c . (W_apply s~)` under a
//!   softmax restricted to the legal set;
//! * token generation marginalizes a two-way gen/copy gate with a
//!   vocabulary softmax and a pointer over source positions, summing
//!   pointer weight over every position holding the token;
//! * column selection points into per-column encodings produced by a
//!   bidirectional LSTM over each column name.

use ndarray::Array1;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::transition::{Action, ActionClass, TOKEN_TERMINATOR};

use super::ctx::MathCtx;
use super::params::{ParamId, ParamStore};
use super::scalar::Scalar;
use super::vocab::Vocab;

#[derive(Debug, Clone)]
pub struct ModelDims {
    pub embed: usize,
    pub hidden: usize,
    pub action_embed: usize,
    pub field_embed: usize,
    pub src_vocab: usize,
    pub gen_vocab: usize,
    pub ctor_count: usize,
    pub field_slots: usize,
    pub parent_feeding: bool,
}

impl ModelDims {
    pub fn decoder_input(&self) -> usize {
        let parent = if self.parent_feeding { self.hidden } else { 0 };
        self.action_embed + self.hidden + self.field_embed + parent
    }

    /// Action-embedding rows: one per constructor, then Reduce, then a
    /// shared column-selection row.
    pub fn action_rows(&self) -> usize {
        self.ctor_count + 2
    }

    pub fn reduce_row(&self) -> usize {
        self.ctor_count
    }

    pub fn selcol_row(&self) -> usize {
        self.ctor_count + 1
    }
}

/// Ids of every learned tensor.
#[derive(Debug, Clone)]
pub struct Tensors {
    pub src_embed: ParamId,
    pub tok_out_embed: ParamId,
    pub tok_in_embed: ParamId,
    pub action_embed: ParamId,
    pub field_embed: ParamId,
    pub enc_fwd_w: ParamId,
    pub enc_fwd_b: ParamId,
    pub enc_bwd_w: ParamId,
    pub enc_bwd_b: ParamId,
    pub dec_w: ParamId,
    pub dec_b: ParamId,
    pub w_att: ParamId,
    pub w_c: ParamId,
    pub w_apply: ParamId,
    pub w_gen: ParamId,
    pub w_copy: ParamId,
    pub w_gate: ParamId,
    pub w_col: ParamId,
    pub col_fwd_w: ParamId,
    pub col_fwd_b: ParamId,
    pub col_bwd_w: ParamId,
    pub col_bwd_b: ParamId,
    pub init_h_w: ParamId,
    pub init_h_b: ParamId,
    pub init_c_w: ParamId,
    pub init_c_b: ParamId,
}

const INIT_RANGE: f64 = 0.1;

pub fn build_params<F: Scalar>(dims: &ModelDims, seed: u64) -> (ParamStore<F>, Tensors) {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let e = dims.embed;
    let h = dims.hidden;
    let r = INIT_RANGE;
    let mut add = |store: &mut ParamStore<F>, name: &str, rows, cols| {
        store.add_uniform(name, rows, cols, r, &mut rng)
    };
    let tensors = Tensors {
        src_embed: add(&mut s, "src_embed", dims.src_vocab, e),
        tok_out_embed: add(&mut s, "tok_out_embed", dims.gen_vocab, e),
        tok_in_embed: add(&mut s, "tok_in_embed", dims.gen_vocab, dims.action_embed),
        action_embed: add(&mut s, "action_embed", dims.action_rows(), dims.action_embed),
        field_embed: add(&mut s, "field_embed", dims.field_slots, dims.field_embed),
        enc_fwd_w: add(&mut s, "enc_fwd_w", 4 * h, e + h),
        enc_fwd_b: add(&mut s, "enc_fwd_b", 1, 4 * h),
        enc_bwd_w: add(&mut s, "enc_bwd_w", 4 * h, e + h),
        enc_bwd_b: add(&mut s, "enc_bwd_b", 1, 4 * h),
        dec_w: add(&mut s, "dec_w", 4 * h, dims.decoder_input() + h),
        dec_b: add(&mut s, "dec_b", 1, 4 * h),
        w_att: add(&mut s, "w_att", 2 * h, h),
        w_c: add(&mut s, "w_c", h, 3 * h),
        w_apply: add(&mut s, "w_apply", dims.action_embed, h),
        w_gen: add(&mut s, "w_gen", e, h),
        w_copy: add(&mut s, "w_copy", 2 * h, h),
        w_gate: add(&mut s, "w_gate", 2, h),
        w_col: add(&mut s, "w_col", 2 * h, h),
        col_fwd_w: add(&mut s, "col_fwd_w", 4 * h, e + h),
        col_fwd_b: add(&mut s, "col_fwd_b", 1, 4 * h),
        col_bwd_w: add(&mut s, "col_bwd_w", 4 * h, e + h),
        col_bwd_b: add(&mut s, "col_bwd_b", 1, 4 * h),
        init_h_w: add(&mut s, "init_h_w", h, 2 * h),
        init_h_b: add(&mut s, "init_h_b", 1, h),
        init_c_w: add(&mut s, "init_c_w", h, 2 * h),
        init_c_b: add(&mut s, "init_c_b", 1, h),
    };
    (s, tensors)
}

/// Inverted-scaling dropout, sampled by the caller's rng so runs are
/// reproducible. `Off` for inference and gradient checks.
pub enum Dropout<'r> {
    Off,
    On { rate: f64, rng: &'r mut ChaCha8Rng },
}

impl Dropout<'_> {
    fn apply<F: Scalar, C: MathCtx<F>>(&mut self, ctx: &mut C, v: &C::V) -> C::V {
        match self {
            Dropout::Off => v.clone(),
            Dropout::On { rate, rng } => {
                let keep = 1.0 - *rate;
                let mask = Array1::from_shape_fn(ctx.len_of(v), |_| {
                    if rng.gen::<f64>() < *rate {
                        F::zero()
                    } else {
                        F::from_f64(1.0 / keep)
                    }
                });
                ctx.mul_const(v, mask)
            }
        }
    }
}

fn lstm_step<F: Scalar, C: MathCtx<F>>(
    ctx: &mut C,
    w: ParamId,
    b: ParamId,
    hidden: usize,
    x: &C::V,
    h: &C::V,
    c: &C::V,
) -> (C::V, C::V) {
    let xh = ctx.concat(&[x.clone(), h.clone()]);
    let pre = ctx.matvec(w, &xh);
    let bias = ctx.param_row(b, 0);
    let gates = ctx.add(&pre, &bias);
    let i_pre = ctx.slice(&gates, 0, hidden);
    let f_pre = ctx.slice(&gates, hidden, hidden);
    let g_pre = ctx.slice(&gates, 2 * hidden, hidden);
    let o_pre = ctx.slice(&gates, 3 * hidden, hidden);
    let i = ctx.sigmoid(&i_pre);
    let f = ctx.sigmoid(&f_pre);
    let g = ctx.tanh(&g_pre);
    let o = ctx.sigmoid(&o_pre);
    let fc = ctx.mul(&f, c);
    let ig = ctx.mul(&i, &g);
    let c_new = ctx.add(&fc, &ig);
    let tc = ctx.tanh(&c_new);
    let h_new = ctx.mul(&o, &tc);
    (h_new, c_new)
}

/// Per-position encodings (each `2 * hidden`) plus the concatenated final
/// directional states.
pub struct Encoded<V> {
    pub states: Vec<V>,
    pub summary: V,
}

fn bilstm<F: Scalar, C: MathCtx<F>>(
    ctx: &mut C,
    embed: ParamId,
    fwd_w: ParamId,
    fwd_b: ParamId,
    bwd_w: ParamId,
    bwd_b: ParamId,
    hidden: usize,
    ids: &[usize],
) -> Encoded<C::V> {
    debug_assert!(!ids.is_empty());
    let inputs: Vec<C::V> = ids.iter().map(|&id| ctx.param_row(embed, id)).collect();

    let mut fwd = Vec::with_capacity(ids.len());
    let mut h = ctx.zeros(hidden);
    let mut c = ctx.zeros(hidden);
    for x in &inputs {
        let (nh, nc) = lstm_step(ctx, fwd_w, fwd_b, hidden, x, &h, &c);
        fwd.push(nh.clone());
        h = nh;
        c = nc;
    }
    let fwd_last = h;

    let mut bwd = vec![None; ids.len()];
    let mut h = ctx.zeros(hidden);
    let mut c = ctx.zeros(hidden);
    for (i, x) in inputs.iter().enumerate().rev() {
        let (nh, nc) = lstm_step(ctx, bwd_w, bwd_b, hidden, x, &h, &c);
        bwd[i] = Some(nh.clone());
        h = nh;
        c = nc;
    }
    let bwd_first = h;

    let states = fwd
        .iter()
        .zip(&bwd)
        .map(|(f, b)| ctx.concat(&[f.clone(), b.clone().unwrap()]))
        .collect();
    let summary = ctx.concat(&[fwd_last, bwd_first]);
    Encoded { states, summary }
}

pub fn encode_ctx<F: Scalar, C: MathCtx<F>>(
    ctx: &mut C,
    t: &Tensors,
    dims: &ModelDims,
    src_ids: &[usize],
) -> Encoded<C::V> {
    bilstm(
        ctx,
        t.src_embed,
        t.enc_fwd_w,
        t.enc_fwd_b,
        t.enc_bwd_w,
        t.enc_bwd_b,
        dims.hidden,
        src_ids,
    )
}

/// One encoding per table column: final states of a bidirectional LSTM
/// over the column name's tokens.
pub fn encode_columns_ctx<F: Scalar, C: MathCtx<F>>(
    ctx: &mut C,
    t: &Tensors,
    dims: &ModelDims,
    column_token_ids: &[Vec<usize>],
) -> Vec<C::V> {
    column_token_ids
        .iter()
        .map(|ids| {
            let enc = bilstm(
                ctx,
                t.src_embed,
                t.col_fwd_w,
                t.col_fwd_b,
                t.col_bwd_w,
                t.col_bwd_b,
                dims.hidden,
                ids,
            );
            enc.summary
        })
        .collect()
}

/// Affine map of the encoder summary into the decoder's start state.
pub fn init_decoder_ctx<F: Scalar, C: MathCtx<F>>(
    ctx: &mut C,
    t: &Tensors,
    enc: &Encoded<C::V>,
) -> (C::V, C::V) {
    let wh = ctx.matvec(t.init_h_w, &enc.summary);
    let bh = ctx.param_row(t.init_h_b, 0);
    let h0 = ctx.add(&wh, &bh);
    let wc = ctx.matvec(t.init_c_w, &enc.summary);
    let bc = ctx.param_row(t.init_c_b, 0);
    let c0 = ctx.add(&wc, &bc);
    (h0, c0)
}

/// Everything produced by one decoder step.
pub struct StepState<V> {
    pub hidden: V,
    pub cell: V,
    pub s_tilde: V,
    pub context: V,
    pub parent_feed: V,
    pub attention: V,
}

/// Embedding fed back for the previous action.
pub fn action_input_embedding<F: Scalar, C: MathCtx<F>>(
    ctx: &mut C,
    t: &Tensors,
    dims: &ModelDims,
    gen_vocab: &Vocab,
    action: &Action,
) -> C::V {
    match action {
        Action::ApplyConstr(c) => ctx.param_row(t.action_embed, c.0),
        Action::Reduce => ctx.param_row(t.action_embed, dims.reduce_row()),
        Action::SelColumn(_) => ctx.param_row(t.action_embed, dims.selcol_row()),
        Action::GenToken(tok) => ctx.param_row(t.tok_in_embed, gen_vocab.id_or_unk(tok)),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn decode_step_ctx<F: Scalar, C: MathCtx<F>>(
    ctx: &mut C,
    t: &Tensors,
    dims: &ModelDims,
    prev_hidden: &C::V,
    prev_cell: &C::V,
    prev_s_tilde: &C::V,
    prev_action_emb: &C::V,
    field_slot: usize,
    parent_hidden: Option<&C::V>,
    enc: &Encoded<C::V>,
    dropout: &mut Dropout<'_>,
) -> StepState<C::V> {
    let field_emb = ctx.param_row(t.field_embed, field_slot);
    let parent_feed = if dims.parent_feeding {
        let parent = match parent_hidden {
            Some(p) => p.clone(),
            None => ctx.zeros(dims.hidden),
        };
        ctx.concat(&[field_emb, parent])
    } else {
        field_emb
    };
    let x = ctx.concat(&[
        prev_action_emb.clone(),
        prev_s_tilde.clone(),
        parent_feed.clone(),
    ]);
    let x = dropout.apply(ctx, &x);
    let (hidden, cell) = lstm_step(ctx, t.dec_w, t.dec_b, dims.hidden, &x, prev_hidden, prev_cell);

    // bilinear attention over the source states
    let u = ctx.matvec(t.w_att, &hidden);
    let scores: Vec<C::V> = enc.states.iter().map(|h| ctx.dot(h, &u)).collect();
    let stacked = ctx.concat(&scores);
    let attention = ctx.softmax(&stacked);
    let context = ctx.weighted_sum(&attention, &enc.states);

    let ch = ctx.concat(&[context.clone(), hidden.clone()]);
    let pre = ctx.matvec(t.w_c, &ch);
    let s_tilde = ctx.tanh(&pre);
    let s_tilde = dropout.apply(ctx, &s_tilde);

    StepState {
        hidden,
        cell,
        s_tilde,
        context,
        parent_feed,
        attention,
    }
}

/// A concrete action candidate with everything the heads need.
#[derive(Debug, Clone)]
pub enum ScoreCand {
    /// ApplyConstr or Reduce, scored via its action-embedding row.
    Embed(usize),
    /// GenToken: vocabulary id (None for out-of-vocabulary) and the source
    /// positions holding this exact token.
    Token {
        vocab_id: Option<usize>,
        copy_positions: Vec<usize>,
    },
    Column(usize),
}

/// Expand legality descriptors into concrete scoreable candidates, in a
/// fixed deterministic order.
pub fn action_candidates(
    dims: &ModelDims,
    gen_vocab: &Vocab,
    classes: &[ActionClass],
    utterance: &[String],
) -> Vec<(Action, ScoreCand)> {
    let mut out = Vec::new();
    for class in classes {
        match class {
            ActionClass::ApplyConstr(c) => {
                out.push((Action::ApplyConstr(*c), ScoreCand::Embed(c.0)));
            }
            ActionClass::Reduce => {
                out.push((Action::Reduce, ScoreCand::Embed(dims.reduce_row())));
            }
            ActionClass::SelColumn { columns } => {
                for k in 0..*columns {
                    out.push((Action::SelColumn(k), ScoreCand::Column(k)));
                }
            }
            ActionClass::GenToken { terminator_ok, .. } => {
                let positions_of = |tok: &str| -> Vec<usize> {
                    utterance
                        .iter()
                        .enumerate()
                        .filter(|(_, u)| u.as_str() == tok)
                        .map(|(i, _)| i)
                        .collect()
                };
                for (id, tok) in gen_vocab.tokens().iter().enumerate() {
                    if id == gen_vocab.unk_id() {
                        continue;
                    }
                    if tok == TOKEN_TERMINATOR && !terminator_ok {
                        continue;
                    }
                    out.push((
                        Action::GenToken(tok.clone()),
                        ScoreCand::Token {
                            vocab_id: Some(id),
                            copy_positions: positions_of(tok),
                        },
                    ));
                }
                let mut seen = Vec::new();
                for tok in utterance {
                    if gen_vocab.contains(tok) || seen.contains(tok) || tok == TOKEN_TERMINATOR {
                        continue;
                    }
                    seen.push(tok.clone());
                    out.push((
                        Action::GenToken(tok.clone()),
                        ScoreCand::Token {
                            vocab_id: None,
                            copy_positions: positions_of(tok),
                        },
                    ));
                }
            }
        }
    }
    out
}

/// Log-probabilities over the candidate list, normalized so the legal set
/// sums to one. Constructor logits follow the bilinear head; token scores
/// are gen/copy marginals; the final log-softmax restricts the whole
/// distribution to the legal support.
pub fn action_scores_ctx<F: Scalar, C: MathCtx<F>>(
    ctx: &mut C,
    t: &Tensors,
    gen_vocab: &Vocab,
    cands: &[(Action, ScoreCand)],
    step: &StepState<C::V>,
    enc: &Encoded<C::V>,
    col_encs: Option<&[C::V]>,
) -> C::V {
    debug_assert!(!cands.is_empty());
    let needs_embed = cands
        .iter()
        .any(|(_, c)| matches!(c, ScoreCand::Embed(_)));
    let needs_token = cands
        .iter()
        .any(|(_, c)| matches!(c, ScoreCand::Token { .. }));
    let needs_copy = cands.iter().any(
        |(_, c)| matches!(c, ScoreCand::Token { copy_positions, .. } if !copy_positions.is_empty()),
    );
    let needs_col = cands
        .iter()
        .any(|(_, c)| matches!(c, ScoreCand::Column(_)));

    let u_apply = needs_embed.then(|| ctx.matvec(t.w_apply, &step.s_tilde));
    let (gate_log, gen_log) = if needs_token {
        let gate_pre = ctx.matvec(t.w_gate, &step.s_tilde);
        let gate_log = ctx.log_softmax(&gate_pre);
        let u_gen = ctx.matvec(t.w_gen, &step.s_tilde);
        let gen_logits = ctx.matvec(t.tok_out_embed, &u_gen);
        let gen_log = ctx.log_softmax(&gen_logits);
        (Some(gate_log), Some(gen_log))
    } else {
        (None, None)
    };
    let copy_log = needs_copy.then(|| {
        let u_copy = ctx.matvec(t.w_copy, &step.s_tilde);
        let scores: Vec<C::V> = enc.states.iter().map(|h| ctx.dot(h, &u_copy)).collect();
        let stacked = ctx.concat(&scores);
        ctx.log_softmax(&stacked)
    });
    let col_log = needs_col.then(|| {
        let cols = col_encs.expect("column candidates require column encodings");
        let u_col = ctx.matvec(t.w_col, &step.s_tilde);
        let scores: Vec<C::V> = cols.iter().map(|c| ctx.dot(c, &u_col)).collect();
        let stacked = ctx.concat(&scores);
        ctx.log_softmax(&stacked)
    });

    let scores: Vec<C::V> = cands
        .iter()
        .map(|(_, cand)| match cand {
            ScoreCand::Embed(row) => {
                let a = ctx.param_row(t.action_embed, *row);
                ctx.dot(&a, u_apply.as_ref().expect("apply head"))
            }
            ScoreCand::Token {
                vocab_id,
                copy_positions,
            } => {
                let gate = gate_log.as_ref().expect("gate head");
                let gen = gen_log.as_ref().expect("gen head");
                let gate_gen = ctx.index(gate, 0);
                let gen_of = ctx.index(gen, vocab_id.unwrap_or(gen_vocab.unk_id()));
                let gen_part = ctx.add(&gate_gen, &gen_of);
                if copy_positions.is_empty() {
                    return gen_part;
                }
                let copy = copy_log.as_ref().expect("copy head");
                let copy_sum = if copy_positions.len() == 1 {
                    ctx.index(copy, copy_positions[0])
                } else {
                    let picks: Vec<C::V> = copy_positions
                        .iter()
                        .map(|&i| ctx.index(copy, i))
                        .collect();
                    let stacked = ctx.concat(&picks);
                    ctx.logsumexp(&stacked)
                };
                let gate_copy = ctx.index(gate, 1);
                let copy_part = ctx.add(&gate_copy, &copy_sum);
                let both = ctx.concat(&[gen_part, copy_part]);
                ctx.logsumexp(&both)
            }
            ScoreCand::Column(k) => ctx.index(col_log.as_ref().expect("column head"), *k),
        })
        .collect();
    let stacked = ctx.concat(&scores);
    ctx.log_softmax(&stacked)
}
