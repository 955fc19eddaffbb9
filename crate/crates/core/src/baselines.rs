//! The model ladder: three sequence-to-sequence variants with and without a
//! copy path, four memory-network variants, the multi-source model without
//! copying, and the full hierarchical pointer-generator. This module owns the
//! variant enumeration/flags and the memory-network-specific graph pieces;
//! the shared wiring lives in [`crate::model`].

use crate::autodiff::{Tape, TensorId};
use crate::error::{Error, Result};
use crate::seqnn::{attention, AttentionParams};

/// Which fact, if any, is concatenated onto the encoder input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactSelector {
    /// Facts unused by the encoder input.
    None,
    /// The fact with highest tf-idf similarity to the dialogue context.
    Context,
    /// The fact with highest tf-idf similarity to the reference response —
    /// an oracle signal, usable for analysis only.
    Response,
}

/// What the decoder attends over at each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attends {
    None,
    Context,
    FactValues,
    ContextAndFactValues,
    /// Context attention plus per-fact token attention and fact-level
    /// attention over the per-fact context vectors.
    Hierarchical,
}

/// All twelve model variants. Labels follow the reporting convention:
/// `S2S-n` for sequence-to-sequence, `S2SC-n` with a copy path, `M-n` for
/// memory networks, `M-S2S` for the multi-source model, and `DeepCopy`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// S2S-1: encoder sees the context only.
    Seq2Seq,
    /// S2S-2: context plus the context-selected best fact.
    Seq2SeqFactContext,
    /// S2S-3: context plus the response-selected best fact (oracle).
    Seq2SeqFactResponse,
    /// S2SC-1: S2S-1 plus a single-source copy path over the encoder input.
    CopySeq2Seq,
    /// S2SC-2: S2S-2 plus copy.
    CopyFactContext,
    /// S2SC-3: S2S-3 plus copy (oracle).
    CopyFactResponse,
    /// M-1: memory-network fact summary initializes the decoder; no decoder
    /// attention.
    MemNet,
    /// M-2: M-1 plus context attention.
    MemNetContextAttn,
    /// M-3: M-1 plus attention over fact value embeddings.
    MemNetFactAttn,
    /// M-4: M-1 plus both attentions, contexts concatenated.
    MemNetDualAttn,
    /// M-S2S: every fact encoded separately, hierarchical attention, output
    /// from [h; c_x; c_f], no copy path.
    MultiSeq2Seq,
    /// Hierarchical pointer-generator: context copy, fact copy, fusion, and
    /// a soft generate/copy switch.
    DeepCopy,
}

impl Variant {
    pub const ALL: [Variant; 12] = [
        Variant::Seq2Seq,
        Variant::Seq2SeqFactContext,
        Variant::Seq2SeqFactResponse,
        Variant::CopySeq2Seq,
        Variant::CopyFactContext,
        Variant::CopyFactResponse,
        Variant::MemNet,
        Variant::MemNetContextAttn,
        Variant::MemNetFactAttn,
        Variant::MemNetDualAttn,
        Variant::MultiSeq2Seq,
        Variant::DeepCopy,
    ];

    /// Reporting label.
    pub fn label(&self) -> &'static str {
        match self {
            Variant::Seq2Seq => "S2S-1",
            Variant::Seq2SeqFactContext => "S2S-2",
            Variant::Seq2SeqFactResponse => "S2S-3",
            Variant::CopySeq2Seq => "S2SC-1",
            Variant::CopyFactContext => "S2SC-2",
            Variant::CopyFactResponse => "S2SC-3",
            Variant::MemNet => "M-1",
            Variant::MemNetContextAttn => "M-2",
            Variant::MemNetFactAttn => "M-3",
            Variant::MemNetDualAttn => "M-4",
            Variant::MultiSeq2Seq => "M-S2S",
            Variant::DeepCopy => "DeepCopy",
        }
    }

    /// Parse a reporting label (case-insensitive).
    pub fn parse(s: &str) -> Result<Variant> {
        let lower = s.to_ascii_lowercase();
        Variant::ALL
            .into_iter()
            .find(|v| v.label().to_ascii_lowercase() == lower)
            .ok_or_else(|| {
                let labels: Vec<&str> = Variant::ALL.iter().map(|v| v.label()).collect();
                Error::Config(format!(
                    "unknown variant `{s}`; expected one of {}",
                    labels.join(", ")
                ))
            })
    }

    pub fn fact_selector(&self) -> FactSelector {
        match self {
            Variant::Seq2SeqFactContext | Variant::CopyFactContext => FactSelector::Context,
            Variant::Seq2SeqFactResponse | Variant::CopyFactResponse => FactSelector::Response,
            _ => FactSelector::None,
        }
    }

    pub fn attends(&self) -> Attends {
        match self {
            Variant::MemNet => Attends::None,
            Variant::Seq2Seq
            | Variant::Seq2SeqFactContext
            | Variant::Seq2SeqFactResponse
            | Variant::CopySeq2Seq
            | Variant::CopyFactContext
            | Variant::CopyFactResponse
            | Variant::MemNetContextAttn => Attends::Context,
            Variant::MemNetFactAttn => Attends::FactValues,
            Variant::MemNetDualAttn => Attends::ContextAndFactValues,
            Variant::MultiSeq2Seq | Variant::DeepCopy => Attends::Hierarchical,
        }
    }

    /// Whether any copy path exists (single-source or hierarchical).
    pub fn has_copy(&self) -> bool {
        matches!(
            self,
            Variant::CopySeq2Seq
                | Variant::CopyFactContext
                | Variant::CopyFactResponse
                | Variant::DeepCopy
        )
    }

    /// Whether the copy path is the hierarchical context+fact mechanism.
    pub fn hierarchical_copy(&self) -> bool {
        matches!(self, Variant::DeepCopy)
    }

    pub fn is_memnet(&self) -> bool {
        matches!(
            self,
            Variant::MemNet
                | Variant::MemNetContextAttn
                | Variant::MemNetFactAttn
                | Variant::MemNetDualAttn
        )
    }

    /// True for variants that peek at the reference response to pick their
    /// fact; they require explicit opt-in everywhere.
    pub fn is_oracle(&self) -> bool {
        matches!(self, Variant::Seq2SeqFactResponse | Variant::CopyFactResponse)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

// ---- memory-network pieces ------------------------------------------------

/// Mean bag-of-embeddings of the tokens (extended ids embed as UNK), pushed
/// through a `[d, d_emb]` projection: one key or value vector per fact.
pub fn fact_embedding(
    tape: &mut Tape,
    embedding: TensorId,
    projection: TensorId,
    tokens: &[u32],
) -> Result<TensorId> {
    if tokens.is_empty() {
        return Err(Error::EmptySequence("fact for key/value embedding"));
    }
    let vocab_rows = tape.shape(embedding)[0] as u32;
    let mut acc: Option<TensorId> = None;
    for &tok in tokens {
        let row = if tok < vocab_rows { tok } else { crate::corpus::UNK };
        let e = tape.lookup(embedding, row as usize)?;
        acc = Some(match acc {
            None => e,
            Some(a) => tape.add(a, e)?,
        });
    }
    let mean = tape.affine(acc.unwrap(), 1.0 / tokens.len() as f64, 0.0)?;
    tape.matmul(projection, mean)
}

/// Attend over the fact keys with the context encoding `u`, mix the fact
/// values with those weights into `o`, and return the summary `u + o` that
/// initializes the decoder.
pub fn memnet_summary(
    tape: &mut Tape,
    attn: &AttentionParams,
    u: TensorId,
    keys: TensorId,
    values: TensorId,
) -> Result<(TensorId, TensorId)> {
    let k = tape.shape(keys)[0];
    let res = attention(tape, attn, keys, u, None)?;
    let wrow = tape.reshape(res.weights, vec![1, k])?;
    let o = tape.matmul(wrow, values)?;
    let d = tape.shape(values)[1];
    let o = tape.reshape(o, vec![d])?;
    let summary = tape.add(u, o)?;
    Ok((res.weights, summary))
}
