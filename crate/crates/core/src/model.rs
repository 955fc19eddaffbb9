//! Model assembly: a named, ordered parameter store; per-variant parameter
//! construction; and one decode-step graph used both for teacher-forced
//! training passes and for incremental decoding. Keeping a single graph
//! builder guarantees training and generation can never drift apart.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, TensorId};
use crate::baselines::{fact_embedding, memnet_summary, Attends, Variant};
use crate::corpus::{DialogueExample, SOS, UNK};
use crate::deepcopy::{copy_distribution, fuse_copies, mix_fact_copies, switch_mix};
use crate::error::{Error, Result};
use crate::seqnn::{attention, encode, lstm_step, AttentionParams, EncodedSeq, LstmParams, LstmState};

/// Half-width of the uniform parameter initialization.
pub const INIT_RANGE: f64 = 0.08;
/// Added to the LSTM forget-gate bias after random init.
pub const FORGET_BIAS: f64 = 1.0;

/// One named parameter with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Vec<f64>,
}

/// Parameters in a fixed registration order; the order defines the layout of
/// checkpoints and the meaning of optimizer state, so it never depends on
/// hashing.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn add(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "parameter {name} data does not match its shape"
        );
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        self.by_name.insert(name.to_string(), self.params.len());
        let grad = vec![0.0; data.len()];
        self.params.push(Param { name: name.to_string(), shape, data, grad });
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index_of(name).map(|i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        let i = self.index_of(name)?;
        Some(&mut self.params[i])
    }

    pub fn at(&self, index: usize) -> &Param {
        &self.params[index]
    }

    pub fn at_mut(&mut self, index: usize) -> &mut Param {
        &mut self.params[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Total number of scalar entries across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }
}

/// A fully assembled model: variant, sizes, and parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub variant: Variant,
    pub d_emb: usize,
    pub d_hidden: usize,
    pub vocab_size: usize,
    pub store: ParamStore,
}

const ATTN_SITES: [&str; 6] =
    ["context", "fact_token", "fact_level", "fusion", "memnet", "fact_value"];

impl Model {
    /// Width of the context vector(s) fed back into the decoder input and
    /// appended to the output-layer input.
    pub fn feed_width(&self) -> usize {
        let d = self.d_hidden;
        match self.variant.attends() {
            Attends::None => 0,
            Attends::Context | Attends::FactValues => d,
            Attends::ContextAndFactValues => 2 * d,
            Attends::Hierarchical => {
                if self.variant.hierarchical_copy() {
                    d // fused context vector
                } else {
                    2 * d // [context; fact] context vectors
                }
            }
        }
    }

    fn attn_sites(variant: Variant) -> Vec<&'static str> {
        let mut sites = Vec::new();
        match variant.attends() {
            Attends::None => {}
            Attends::Context => sites.push("context"),
            Attends::FactValues => sites.push("fact_value"),
            Attends::ContextAndFactValues => {
                sites.push("context");
                sites.push("fact_value");
            }
            Attends::Hierarchical => {
                sites.push("context");
                sites.push("fact_token");
                sites.push("fact_level");
                if variant.hierarchical_copy() {
                    sites.push("fusion");
                }
            }
        }
        if variant.is_memnet() {
            sites.push("memnet");
        }
        // Fixed global order regardless of how the needs were collected.
        let mut ordered: Vec<&'static str> =
            ATTN_SITES.iter().copied().filter(|s| sites.contains(s)).collect();
        ordered.dedup();
        ordered
    }

    /// Create a model with all parameters drawn uniformly from
    /// [-INIT_RANGE, INIT_RANGE] by a seeded generator, then add
    /// [`FORGET_BIAS`] to both LSTM forget-gate bias slices.
    pub fn new(
        variant: Variant,
        d_emb: usize,
        d_hidden: usize,
        vocab_size: usize,
        seed: u64,
    ) -> Result<Model> {
        if d_emb == 0 || d_hidden == 0 {
            return Err(Error::Config("embedding and hidden sizes must be positive".into()));
        }
        if vocab_size <= UNK as usize {
            return Err(Error::Config(format!(
                "vocabulary size {vocab_size} cannot cover the reserved tokens"
            )));
        }
        let mut model = Model {
            variant,
            d_emb,
            d_hidden,
            vocab_size,
            store: ParamStore::new(),
        };
        let d = d_hidden;
        let feed = model.feed_width();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-INIT_RANGE..INIT_RANGE)).collect()
        };

        let add = |store: &mut ParamStore, name: &str, shape: Vec<usize>, rng: &mut ChaCha8Rng| {
            let n = shape.iter().product();
            let data = draw(n, rng);
            store.add(name, shape, data);
        };

        add(&mut model.store, "embedding", vec![vocab_size, d_emb], &mut rng);
        add(&mut model.store, "encoder.w_x", vec![4 * d, d_emb], &mut rng);
        add(&mut model.store, "encoder.w_h", vec![4 * d, d], &mut rng);
        add(&mut model.store, "encoder.b", vec![4 * d], &mut rng);
        add(&mut model.store, "decoder.w_x", vec![4 * d, d_emb + feed], &mut rng);
        add(&mut model.store, "decoder.w_h", vec![4 * d, d], &mut rng);
        add(&mut model.store, "decoder.b", vec![4 * d], &mut rng);
        for site in Model::attn_sites(variant) {
            add(&mut model.store, &format!("attn.{site}.w1"), vec![d], &mut rng);
            add(&mut model.store, &format!("attn.{site}.w2"), vec![d, 2 * d], &mut rng);
        }
        if variant.is_memnet() {
            add(&mut model.store, "memnet.key_proj", vec![d, d_emb], &mut rng);
            add(&mut model.store, "memnet.value_proj", vec![d, d_emb], &mut rng);
        }
        add(&mut model.store, "output.w", vec![vocab_size, d + feed], &mut rng);
        add(&mut model.store, "output.b", vec![vocab_size], &mut rng);
        if variant.has_copy() {
            add(&mut model.store, "switch.w_c", vec![d], &mut rng);
            add(&mut model.store, "switch.w_h", vec![d], &mut rng);
            add(&mut model.store, "switch.w_y", vec![d_emb], &mut rng);
            add(&mut model.store, "switch.b", vec![1], &mut rng);
        }

        for name in ["encoder.b", "decoder.b"] {
            let b = model.store.get_mut(name).unwrap();
            for v in &mut b.data[d..2 * d] {
                *v += FORGET_BIAS;
            }
        }
        Ok(model)
    }

    /// Support size of the per-step output distribution for this example:
    /// the extended vocabulary for copy-capable variants, the base
    /// vocabulary otherwise.
    pub fn support(&self, ex: &DialogueExample) -> usize {
        if self.variant.has_copy() {
            self.vocab_size + ex.ext_vocab.len()
        } else {
            self.vocab_size
        }
    }

    /// Target index used by the loss at step `t`: copy-capable variants keep
    /// extended ids; the rest collapse out-of-vocabulary targets to UNK.
    pub fn loss_target(&self, ex: &DialogueExample, t: usize) -> usize {
        let id = ex.target[t] as usize;
        if id < self.vocab_size || self.variant.has_copy() {
            id
        } else {
            UNK as usize
        }
    }

    /// Register every parameter on the tape (in store order) and hand back
    /// typed handles.
    pub fn bind(&self, tape: &mut Tape) -> Result<Wires> {
        let mut ids = Vec::with_capacity(self.store.len());
        let mut map: HashMap<&str, TensorId> = HashMap::new();
        for p in self.store.iter() {
            let id = tape.param(p.data.clone(), p.shape.clone())?;
            ids.push(id);
            map.insert(p.name.as_str(), id);
        }
        let attn = |site: &str| -> Option<AttentionParams> {
            Some(AttentionParams {
                w1: *map.get(format!("attn.{site}.w1").as_str())?,
                w2: *map.get(format!("attn.{site}.w2").as_str())?,
            })
        };
        Ok(Wires {
            embedding: map["embedding"],
            encoder: LstmParams {
                w_x: map["encoder.w_x"],
                w_h: map["encoder.w_h"],
                b: map["encoder.b"],
            },
            decoder: LstmParams {
                w_x: map["decoder.w_x"],
                w_h: map["decoder.w_h"],
                b: map["decoder.b"],
            },
            output_w: map["output.w"],
            output_b: map["output.b"],
            attn_context: attn("context"),
            attn_fact_token: attn("fact_token"),
            attn_fact_level: attn("fact_level"),
            attn_fusion: attn("fusion"),
            attn_memnet: attn("memnet"),
            attn_fact_value: attn("fact_value"),
            memnet_key_proj: map.get("memnet.key_proj").copied(),
            memnet_value_proj: map.get("memnet.value_proj").copied(),
            switch_w_c: map.get("switch.w_c").copied(),
            switch_w_h: map.get("switch.w_h").copied(),
            switch_w_y: map.get("switch.w_y").copied(),
            switch_b: map.get("switch.b").copied(),
            param_ids: ids,
        })
    }

    /// Encoder-side pass for one example: the main input encoding, optional
    /// per-fact encodings, optional memory key/value vectors, and the
    /// decoder's initial state.
    pub fn encode_example(
        &self,
        tape: &mut Tape,
        wires: &Wires,
        ex: &DialogueExample,
    ) -> Result<ExampleGraph> {
        use crate::baselines::FactSelector;
        let needs_facts = self.variant.is_memnet()
            || matches!(self.variant.attends(), Attends::Hierarchical)
            || self.variant.fact_selector() != FactSelector::None;
        if needs_facts && ex.facts.is_empty() {
            return Err(Error::EmptySequence("example has no persona facts"));
        }

        let mut enc_input_ids = ex.context.clone();
        match self.variant.fact_selector() {
            FactSelector::None => {}
            FactSelector::Context => {
                enc_input_ids.push(crate::corpus::CONCAT);
                enc_input_ids.extend_from_slice(&ex.facts[ex.best_fact_by_context]);
            }
            FactSelector::Response => {
                enc_input_ids.push(crate::corpus::CONCAT);
                enc_input_ids.extend_from_slice(&ex.facts[ex.best_fact_by_response]);
            }
        }
        let encoded = encode(tape, wires.embedding, &wires.encoder, &enc_input_ids)?;
        let mut init_state = encoded.final_state.clone();

        let mut memnet_values = None;
        if self.variant.is_memnet() {
            let key_proj = wires.memnet_key_proj.unwrap();
            let value_proj = wires.memnet_value_proj.unwrap();
            let k = ex.facts.len();
            let mut keys = Vec::with_capacity(k);
            let mut values = Vec::with_capacity(k);
            for fact in &ex.facts {
                keys.push(fact_embedding(tape, wires.embedding, key_proj, fact)?);
                values.push(fact_embedding(tape, wires.embedding, value_proj, fact)?);
            }
            let keys_flat = tape.concat(&keys)?;
            let keys_mat = tape.reshape(keys_flat, vec![k, self.d_hidden])?;
            let values_flat = tape.concat(&values)?;
            let values_mat = tape.reshape(values_flat, vec![k, self.d_hidden])?;
            let (_, summary) = memnet_summary(
                tape,
                wires.attn_memnet.as_ref().unwrap(),
                encoded.final_state.h,
                keys_mat,
                values_mat,
            )?;
            init_state.h = summary;
            memnet_values = Some(values_mat);
        }

        let mut fact_encs = Vec::new();
        if matches!(self.variant.attends(), Attends::Hierarchical) {
            for fact in &ex.facts {
                fact_encs.push(encode(tape, wires.embedding, &wires.decoder_free_encoder(), fact)?);
            }
        }

        let feed = self.feed_width();
        let init_feed = if feed > 0 { Some(tape.zeros(vec![feed])?) } else { None };
        Ok(ExampleGraph {
            enc_input_ids,
            encoded,
            fact_encs,
            fact_ids: ex.facts.clone(),
            memnet_values,
            init_state,
            init_feed,
            support: self.support(ex),
        })
    }

    /// One decoder step: consume the previous token id and state, produce the
    /// step's distributions and the next state. `prev` may be an extended id;
    /// it embeds as UNK.
    pub fn decode_step(
        &self,
        tape: &mut Tape,
        wires: &Wires,
        graph: &ExampleGraph,
        prev: u32,
        state: &DecoderState,
    ) -> Result<(StepTensors, DecoderState)> {
        let d = self.d_hidden;
        let row = if (prev as usize) < self.vocab_size { prev } else { UNK };
        let emb = tape.lookup(wires.embedding, row as usize)?;
        let x = match state.feed {
            Some(feed) => tape.concat(&[emb, feed])?,
            None => emb,
        };
        let lstm_state = lstm_step(tape, &wires.decoder, x, &state.lstm)?;
        let h = lstm_state.h;

        let mut parts: Vec<TensorId> = Vec::new();
        let mut out = StepTensors::default();

        let context_attn = |tape: &mut Tape, out: &mut StepTensors| -> Result<TensorId> {
            let att = attention(
                tape,
                wires.attn_context.as_ref().unwrap(),
                graph.encoded.outputs,
                h,
                graph.encoded.attention_mask(),
            )?;
            out.alpha_context = Some(att.weights);
            out.c_context = Some(att.context);
            Ok(att.context)
        };

        match self.variant.attends() {
            Attends::None => {}
            Attends::Context => {
                let c = context_attn(tape, &mut out)?;
                parts.push(c);
            }
            Attends::FactValues => {
                let att = attention(
                    tape,
                    wires.attn_fact_value.as_ref().unwrap(),
                    graph.memnet_values.unwrap(),
                    h,
                    None,
                )?;
                parts.push(att.context);
            }
            Attends::ContextAndFactValues => {
                let c = context_attn(tape, &mut out)?;
                parts.push(c);
                let att = attention(
                    tape,
                    wires.attn_fact_value.as_ref().unwrap(),
                    graph.memnet_values.unwrap(),
                    h,
                    None,
                )?;
                parts.push(att.context);
            }
            Attends::Hierarchical => {
                let c_x = context_attn(tape, &mut out)?;
                let k = graph.fact_encs.len();
                let mut fact_ctxs = Vec::with_capacity(k);
                for enc in &graph.fact_encs {
                    let att = attention(
                        tape,
                        wires.attn_fact_token.as_ref().unwrap(),
                        enc.outputs,
                        h,
                        enc.attention_mask(),
                    )?;
                    out.alpha_facts.push(att.weights);
                    fact_ctxs.push(att.context);
                }
                let stacked = tape.concat(&fact_ctxs)?;
                let stacked = tape.reshape(stacked, vec![k, d])?;
                let fact_att = attention(
                    tape,
                    wires.attn_fact_level.as_ref().unwrap(),
                    stacked,
                    h,
                    None,
                )?;
                out.beta = Some(fact_att.weights);
                out.c_fact = Some(fact_att.context);
                if self.variant.hierarchical_copy() {
                    let pair = tape.concat(&[c_x, fact_att.context])?;
                    let pair = tape.reshape(pair, vec![2, d])?;
                    let fuse_att = attention(
                        tape,
                        wires.attn_fusion.as_ref().unwrap(),
                        pair,
                        h,
                        None,
                    )?;
                    out.gamma = Some(fuse_att.weights);
                    out.c_fused = Some(fuse_att.context);
                    parts.push(fuse_att.context);
                } else {
                    parts.push(c_x);
                    parts.push(fact_att.context);
                }
            }
        }

        let out_in = if parts.is_empty() {
            h
        } else {
            let mut all = vec![h];
            all.extend_from_slice(&parts);
            tape.concat(&all)?
        };
        let logits = tape.matmul(wires.output_w, out_in)?;
        let logits = tape.add(logits, wires.output_b)?;
        out.p_vocab = tape.softmax(logits)?;

        if self.variant.has_copy() {
            let (p_copy, c_for_switch) = if self.variant.hierarchical_copy() {
                let alpha_x = out.alpha_context.unwrap();
                let p_x = copy_distribution(tape, alpha_x, &graph.enc_input_ids, graph.support)?;
                let mut fact_dists = Vec::with_capacity(graph.fact_ids.len());
                for (j, ids) in graph.fact_ids.iter().enumerate() {
                    fact_dists.push(copy_distribution(tape, out.alpha_facts[j], ids, graph.support)?);
                }
                let p_f = mix_fact_copies(tape, out.beta.unwrap(), &fact_dists)?;
                let p_copy = fuse_copies(tape, out.gamma.unwrap(), p_x, p_f)?;
                (p_copy, out.c_fused.unwrap())
            } else {
                let alpha_x = out.alpha_context.unwrap();
                let p_copy = copy_distribution(tape, alpha_x, &graph.enc_input_ids, graph.support)?;
                (p_copy, out.c_context.unwrap())
            };
            out.p_copy = Some(p_copy);

            let sc = dot(tape, wires.switch_w_c.unwrap(), c_for_switch)?;
            let sh = dot(tape, wires.switch_w_h.unwrap(), h)?;
            let sy = dot(tape, wires.switch_w_y.unwrap(), emb)?;
            let s = tape.add(sc, sh)?;
            let s = tape.add(s, sy)?;
            let s = tape.add(s, wires.switch_b.unwrap())?;
            let p_gen = tape.sigmoid(s)?;
            out.p_gen = Some(p_gen);
            out.p_final = switch_mix(tape, out.p_vocab, p_copy, p_gen, graph.support)?;
        } else {
            out.p_final = out.p_vocab;
        }

        let feed = match parts.len() {
            0 => None,
            1 => Some(parts[0]),
            _ => Some(tape.concat(&parts)?),
        };
        Ok((out, DecoderState { lstm: lstm_state, feed }))
    }

    /// Teacher-forced pass over one example: builds the whole graph on a
    /// fresh tape and assembles the length-normalized negative log-likelihood
    /// of the target.
    pub fn forward(&self, ex: &DialogueExample) -> Result<ForwardPass> {
        if ex.target.is_empty() {
            return Err(Error::EmptySequence("target sequence"));
        }
        let mut tape = Tape::new();
        let wires = self.bind(&mut tape)?;
        let graph = self.encode_example(&mut tape, &wires, ex)?;
        let mut state = graph.initial_state();
        let mut steps = Vec::with_capacity(ex.target.len());
        let mut log_probs = Vec::with_capacity(ex.target.len());
        for t in 0..ex.target.len() {
            let prev = if t == 0 { SOS } else { ex.target[t - 1] };
            let (tensors, next) = self.decode_step(&mut tape, &wires, &graph, prev, &state)?;
            let idx = self.loss_target(ex, t);
            let p_t = tape.slice(tensors.p_final, idx, 1)?;
            log_probs.push(tape.log(p_t)?);
            steps.push(StepDists::extract(&tape, &tensors));
            state = next;
        }
        let cat = tape.concat(&log_probs)?;
        let total = tape.sum(cat)?;
        let loss = tape.affine(total, -1.0 / ex.target.len() as f64, 0.0)?;
        let loss_value = tape.data(loss)[0];
        Ok(ForwardPass {
            tape,
            loss,
            loss_value,
            steps,
            target_len: ex.target.len(),
            param_ids: wires.param_ids,
            d_emb: self.d_emb,
        })
    }

    /// Open an incremental decoding session for one example: binds the
    /// parameters and encodes the input once; each `step` then extends the
    /// same tape.
    pub fn decode_session<'m>(&'m self, ex: &DialogueExample) -> Result<DecodeSession<'m>> {
        let mut tape = Tape::new();
        let wires = self.bind(&mut tape)?;
        let graph = self.encode_example(&mut tape, &wires, ex)?;
        Ok(DecodeSession { model: self, tape, wires, graph })
    }
}

/// Dot product of two equal-length vectors as a `[1]` tensor.
fn dot(tape: &mut Tape, a: TensorId, b: TensorId) -> Result<TensorId> {
    let prod = tape.mul(a, b)?;
    tape.sum(prod)
}

/// Tape-bound handles for every parameter of a model.
pub struct Wires {
    pub embedding: TensorId,
    pub encoder: LstmParams,
    pub decoder: LstmParams,
    pub output_w: TensorId,
    pub output_b: TensorId,
    pub attn_context: Option<AttentionParams>,
    pub attn_fact_token: Option<AttentionParams>,
    pub attn_fact_level: Option<AttentionParams>,
    pub attn_fusion: Option<AttentionParams>,
    pub attn_memnet: Option<AttentionParams>,
    pub attn_fact_value: Option<AttentionParams>,
    pub memnet_key_proj: Option<TensorId>,
    pub memnet_value_proj: Option<TensorId>,
    pub switch_w_c: Option<TensorId>,
    pub switch_w_h: Option<TensorId>,
    pub switch_w_y: Option<TensorId>,
    pub switch_b: Option<TensorId>,
    /// All parameter tensors in store order.
    pub param_ids: Vec<TensorId>,
}

impl Wires {
    /// Facts are encoded with the same shared encoder as the main input.
    fn decoder_free_encoder(&self) -> LstmParams {
        self.encoder
    }
}

/// Per-example encoder-side tensors plus copy-source bookkeeping.
pub struct ExampleGraph {
    /// Token ids fed to the main encoder (context, possibly with a fact
    /// appended); the copy sources for single-source copy variants.
    pub enc_input_ids: Vec<u32>,
    pub encoded: EncodedSeq,
    pub fact_encs: Vec<EncodedSeq>,
    pub fact_ids: Vec<Vec<u32>>,
    pub memnet_values: Option<TensorId>,
    pub init_state: LstmState,
    pub init_feed: Option<TensorId>,
    /// Size of the output distribution support.
    pub support: usize,
}

impl ExampleGraph {
    pub fn initial_state(&self) -> DecoderState {
        DecoderState { lstm: self.init_state.clone(), feed: self.init_feed }
    }
}

/// Decoder recurrence plus the fed-back context vector(s).
#[derive(Debug, Clone)]
pub struct DecoderState {
    pub lstm: LstmState,
    pub feed: Option<TensorId>,
}

/// Tensor handles produced by one decode step.
#[derive(Debug, Default, Clone)]
pub struct StepTensors {
    pub p_final: TensorId,
    pub p_vocab: TensorId,
    pub p_copy: Option<TensorId>,
    pub p_gen: Option<TensorId>,
    /// Fusion weights `[gamma, 1-gamma]` over [context copy, fact copy].
    pub gamma: Option<TensorId>,
    pub alpha_context: Option<TensorId>,
    pub alpha_facts: Vec<TensorId>,
    pub beta: Option<TensorId>,
    pub c_context: Option<TensorId>,
    pub c_fact: Option<TensorId>,
    pub c_fused: Option<TensorId>,
}

/// Plain-value snapshot of one decode step, for loss bookkeeping, invariant
/// checks, and inspection output.
#[derive(Debug, Clone)]
pub struct StepDists {
    pub p_final: Vec<f64>,
    pub p_vocab: Vec<f64>,
    pub p_copy: Option<Vec<f64>>,
    pub p_gen: Option<f64>,
    /// Weight on the context copy distribution (first fusion weight).
    pub gamma: Option<f64>,
    pub alpha_context: Option<Vec<f64>>,
    pub alpha_facts: Option<Vec<Vec<f64>>>,
    pub beta: Option<Vec<f64>>,
    pub c_context: Option<Vec<f64>>,
    pub c_fact: Option<Vec<f64>>,
    pub c_fused: Option<Vec<f64>>,
}

impl StepDists {
    pub fn extract(tape: &Tape, t: &StepTensors) -> StepDists {
        let vec_of = |id: TensorId| tape.data(id).to_vec();
        StepDists {
            p_final: vec_of(t.p_final),
            p_vocab: vec_of(t.p_vocab),
            p_copy: t.p_copy.map(vec_of),
            p_gen: t.p_gen.map(|id| tape.data(id)[0]),
            gamma: t.gamma.map(|id| tape.data(id)[0]),
            alpha_context: t.alpha_context.map(vec_of),
            alpha_facts: if t.alpha_facts.is_empty() {
                None
            } else {
                Some(t.alpha_facts.iter().map(|&id| vec_of(id)).collect())
            },
            beta: t.beta.map(vec_of),
            c_context: t.c_context.map(vec_of),
            c_fact: t.c_fact.map(vec_of),
            c_fused: t.c_fused.map(vec_of),
        }
    }

    /// Highest-probability token of the final distribution.
    pub fn argmax(&self) -> u32 {
        let mut best = 0usize;
        for (i, &v) in self.p_final.iter().enumerate() {
            if v > self.p_final[best] {
                best = i;
            }
        }
        best as u32
    }
}

/// A completed teacher-forced pass, ready for `backward` and gradient
/// harvesting.
pub struct ForwardPass {
    pub tape: Tape,
    pub loss: TensorId,
    pub loss_value: f64,
    pub steps: Vec<StepDists>,
    pub target_len: usize,
    param_ids: Vec<TensorId>,
    d_emb: usize,
}

impl ForwardPass {
    pub fn backward(&mut self) -> Result<()> {
        self.tape.backward(self.loss)
    }

    /// Add `scale` times this pass's parameter gradients into buffers laid
    /// out in store order (one buffer per parameter).
    pub fn add_grads_into(&self, bufs: &mut [Vec<f64>], scale: f64) {
        for (i, &id) in self.param_ids.iter().enumerate() {
            if let Some(g) = self.tape.grad(id) {
                for (dst, src) in bufs[i].iter_mut().zip(g.iter()) {
                    *dst += scale * src;
                }
            }
        }
    }

    /// Add `scale` times this pass's parameter gradients into the store.
    /// The PAD embedding row is pinned: its gradient entries stay zero.
    pub fn accumulate_grads(&self, store: &mut ParamStore, scale: f64) {
        for (i, &id) in self.param_ids.iter().enumerate() {
            if let Some(g) = self.tape.grad(id) {
                let p = store.at_mut(i);
                for (dst, src) in p.grad.iter_mut().zip(g.iter()) {
                    *dst += scale * src;
                }
            }
        }
        pin_pad_row(store, self.d_emb);
    }
}

/// Zero the PAD row of the embedding gradient so padding never learns.
pub fn pin_pad_row(store: &mut ParamStore, d_emb: usize) {
    if let Some(p) = store.get_mut("embedding") {
        let pad_row = crate::corpus::PAD as usize * d_emb;
        for g in &mut p.grad[pad_row..pad_row + d_emb] {
            *g = 0.0;
        }
    }
}

/// Incremental decoding over one example: the tape grows step by step and is
/// never replayed backwards.
pub struct DecodeSession<'m> {
    model: &'m Model,
    tape: Tape,
    wires: Wires,
    graph: ExampleGraph,
}

impl<'m> DecodeSession<'m> {
    pub fn initial_state(&self) -> DecoderState {
        self.graph.initial_state()
    }

    pub fn support(&self) -> usize {
        self.graph.support
    }

    pub fn step(&mut self, prev: u32, state: &DecoderState) -> Result<(StepDists, DecoderState)> {
        let (tensors, next) =
            self.model
                .decode_step(&mut self.tape, &self.wires, &self.graph, prev, state)?;
        Ok((StepDists::extract(&self.tape, &tensors), next))
    }
}
