//! Copy-path heads for the pointer side of the model: scattering attention
//! weights into a token distribution, mixing per-fact copy distributions with
//! fact-level weights, fusing the context and fact copy distributions, and
//! blending generation with copying through the soft switch. Every function
//! here preserves the probability simplex given simplex inputs.

use crate::autodiff::{Tape, TensorId};
use crate::error::{Error, Result};

/// Scatter attention weights onto token ids: the copy probability of a token
/// is the total attention mass on the positions where it occurs. `support` is
/// the extended vocabulary size; ids at or above it are rejected.
pub fn copy_distribution(
    tape: &mut Tape,
    weights: TensorId,
    token_ids: &[u32],
    support: usize,
) -> Result<TensorId> {
    let n = tape.data(weights).len();
    if n != token_ids.len() {
        return Err(Error::LengthMismatch {
            what: "copy_distribution weights vs token ids",
            left: n,
            right: token_ids.len(),
        });
    }
    let mut indices = Vec::with_capacity(n);
    for &id in token_ids {
        if id as usize >= support {
            return Err(Error::IndexOutOfRange {
                op: "copy_distribution",
                index: id as usize,
                len: support,
            });
        }
        indices.push(id as usize);
    }
    let base = tape.zeros(vec![support])?;
    tape.index_add(base, &indices, weights)
}

/// Fact-level mixture: sum of each fact's copy distribution scaled by its
/// fact-attention weight. `beta` has one weight per distribution.
pub fn mix_fact_copies(
    tape: &mut Tape,
    beta: TensorId,
    dists: &[TensorId],
) -> Result<TensorId> {
    let k = tape.data(beta).len();
    if k != dists.len() || dists.is_empty() {
        return Err(Error::LengthMismatch {
            what: "mix_fact_copies beta vs distributions",
            left: k,
            right: dists.len(),
        });
    }
    let mut acc: Option<TensorId> = None;
    for (j, &p) in dists.iter().enumerate() {
        let b = tape.slice(beta, j, 1)?;
        let term = tape.mul_scalar(p, b)?;
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    Ok(acc.unwrap())
}

/// Fuse the context copy distribution with the fact copy distribution using
/// the two fusion-attention weights: `gamma[0]·p_context + gamma[1]·p_fact`.
pub fn fuse_copies(
    tape: &mut Tape,
    gamma: TensorId,
    p_context: TensorId,
    p_fact: TensorId,
) -> Result<TensorId> {
    if tape.data(gamma).len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "fuse_copies",
            lhs: tape.shape(gamma).to_vec(),
            rhs: vec![2],
        });
    }
    let g0 = tape.slice(gamma, 0, 1)?;
    let g1 = tape.slice(gamma, 1, 1)?;
    let a = tape.mul_scalar(p_context, g0)?;
    let b = tape.mul_scalar(p_fact, g1)?;
    tape.add(a, b)
}

/// Soft generate/copy switch: pad the vocabulary distribution to the extended
/// support and blend `p_gen·p_vocab + (1−p_gen)·p_copy`. `p_gen` is a single
/// sigmoid output in [0, 1].
pub fn switch_mix(
    tape: &mut Tape,
    p_vocab: TensorId,
    p_copy: TensorId,
    p_gen: TensorId,
    support: usize,
) -> Result<TensorId> {
    let padded = tape.pad(p_vocab, support)?;
    if tape.data(p_copy).len() != support {
        return Err(Error::LengthMismatch {
            what: "switch_mix copy distribution vs support",
            left: tape.data(p_copy).len(),
            right: support,
        });
    }
    let keep = tape.mul_scalar(padded, p_gen)?;
    let one_minus = tape.affine(p_gen, -1.0, 1.0)?;
    let copied = tape.mul_scalar(p_copy, one_minus)?;
    tape.add(keep, copied)
}
