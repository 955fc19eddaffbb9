//! Shared neural building blocks: LSTM cell, sequence encoder, and additive
//! attention. Everything operates on [`Tape`] tensors so the same functions
//! serve training (with gradients) and decoding (values only).

use crate::autodiff::{Tape, TensorId, MASK_SCORE};
use crate::corpus::{PAD, UNK};
use crate::error::{Error, Result};

/// LSTM weights as tape tensors: `w_x` is `[4d, d_in]`, `w_h` is `[4d, d]`,
/// `b` is `[4d]`, with gate order input/forget/cell/output.
#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    pub w_x: TensorId,
    pub w_h: TensorId,
    pub b: TensorId,
}

/// `h` and `c` activations of one LSTM cell, each `[d]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: TensorId,
    pub c: TensorId,
}

impl LstmState {
    /// Zero state of width `d`.
    pub fn zeros(tape: &mut Tape, d: usize) -> Result<LstmState> {
        Ok(LstmState { h: tape.zeros(vec![d])?, c: tape.zeros(vec![d])? })
    }
}

/// One step of the standard LSTM cell:
/// `i,f,o = sigmoid(.)`, `g = tanh(.)`, `c' = f*c + i*g`, `h' = o*tanh(c')`.
pub fn lstm_step(
    tape: &mut Tape,
    params: &LstmParams,
    x: TensorId,
    state: &LstmState,
) -> Result<LstmState> {
    let d = tape.shape(params.w_h)[1];
    let zx = tape.matmul(params.w_x, x)?;
    let zh = tape.matmul(params.w_h, state.h)?;
    let z = tape.add(zx, zh)?;
    let z = tape.add(z, params.b)?;
    let i_gate = tape.slice(z, 0, d)?;
    let i_gate = tape.sigmoid(i_gate)?;
    let f_gate = tape.slice(z, d, d)?;
    let f_gate = tape.sigmoid(f_gate)?;
    let g_cell = tape.slice(z, 2 * d, d)?;
    let g_cell = tape.tanh(g_cell)?;
    let o_gate = tape.slice(z, 3 * d, d)?;
    let o_gate = tape.sigmoid(o_gate)?;
    let fc = tape.mul(f_gate, state.c)?;
    let ig = tape.mul(i_gate, g_cell)?;
    let c = tape.add(fc, ig)?;
    let ct = tape.tanh(c)?;
    let h = tape.mul(o_gate, ct)?;
    Ok(LstmState { h, c })
}

/// Per-step outputs and final state of an encoder pass.
#[derive(Debug, Clone)]
pub struct EncodedSeq {
    /// Stacked step outputs, `[n, d]`.
    pub outputs: TensorId,
    /// State after the last step.
    pub final_state: LstmState,
    /// Attention mask; `true` marks positions (PAD) to exclude.
    pub mask: Vec<bool>,
}

impl EncodedSeq {
    /// `Some(mask)` if any position is masked, for passing to [`attention`].
    pub fn attention_mask(&self) -> Option<&[bool]> {
        if self.mask.iter().any(|&m| m) {
            Some(&self.mask)
        } else {
            None
        }
    }
}

/// Left-to-right encoder over token ids. Ids at or beyond the embedding
/// table (per-example extended ids) embed as UNK; their identity still
/// matters to the copy distributions, just not to the embedding lookup.
pub fn encode(
    tape: &mut Tape,
    embedding: TensorId,
    lstm: &LstmParams,
    tokens: &[u32],
) -> Result<EncodedSeq> {
    if tokens.is_empty() {
        return Err(Error::EmptySequence("encoder input"));
    }
    let vocab_rows = tape.shape(embedding)[0] as u32;
    let d = tape.shape(lstm.w_h)[1];
    let mut state = LstmState::zeros(tape, d)?;
    let mut steps = Vec::with_capacity(tokens.len());
    for &tok in tokens {
        let row = if tok < vocab_rows { tok } else { UNK };
        let x = tape.lookup(embedding, row as usize)?;
        state = lstm_step(tape, lstm, x, &state)?;
        steps.push(state.h);
    }
    let flat = tape.concat(&steps)?;
    let outputs = tape.reshape(flat, vec![tokens.len(), d])?;
    let mask = tokens.iter().map(|&t| t == PAD).collect();
    Ok(EncodedSeq { outputs, final_state: state, mask })
}

/// Additive attention weights: `w1` is `[p]`, `w2` is `[p, 2p]`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub w1: TensorId,
    pub w2: TensorId,
}

/// Attention weights over `n` items plus their weighted combination.
#[derive(Debug, Clone, Copy)]
pub struct AttentionResult {
    /// Simplex over the `n` attended items, `[n]`.
    pub weights: TensorId,
    /// `sum_i weights[i] * u[i]`, `[p]`.
    pub context: TensorId,
}

/// Score each row `u_i` against the query `v` with a shared one-layer tanh
/// network, softmax the scores, and mix the rows:
/// `e_i = w1 . tanh(W2 [u_i; v])`, `alpha = softmax(e)`, `c = sum alpha_i u_i`.
/// Masked positions (mask entry `true`) get an additive -1e9 score.
pub fn attention(
    tape: &mut Tape,
    params: &AttentionParams,
    u: TensorId,
    v: TensorId,
    mask: Option<&[bool]>,
) -> Result<AttentionResult> {
    let n = tape.shape(u)[0];
    if let Some(m) = mask {
        if m.len() != n {
            return Err(Error::LengthMismatch { what: "attention mask", left: m.len(), right: n });
        }
        if m.iter().all(|&x| x) {
            return Err(Error::AllMasked);
        }
    }
    let vrep = tape.broadcast_rows(v, n)?;
    let cat = tape.concat_cols(u, vrep)?;
    let w2t = tape.transpose(params.w2)?;
    let pre = tape.matmul(cat, w2t)?;
    let pre = tape.tanh(pre)?;
    let mut scores = tape.matmul(pre, params.w1)?;
    if let Some(m) = mask {
        let penalty: Vec<f64> = m.iter().map(|&x| if x { MASK_SCORE } else { 0.0 }).collect();
        let penalty = tape.constant(penalty, vec![n])?;
        scores = tape.add(scores, penalty)?;
    }
    let weights = tape.softmax(scores)?;
    let wrow = tape.reshape(weights, vec![1, n])?;
    let ctx = tape.matmul(wrow, u)?;
    let p = tape.shape(u)[1];
    let context = tape.reshape(ctx, vec![p])?;
    Ok(AttentionResult { weights, context })
}
