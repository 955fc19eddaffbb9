//! Teacher-forced negative-log-likelihood training: batched gradient
//! accumulation, global-norm clipping, Adam, seeded epoch shuffling, a
//! `(step, train_loss, val_ppl)` history, and best-checkpoint selection by
//! validation perplexity. Fully deterministic for a fixed configuration:
//! batches are formed from a seeded shuffle and gradients fold in a fixed
//! order even when worker threads fan out.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::LOG_EPS;
use crate::baselines::Variant;
use crate::corpus::{DialogueExample, DEFAULT_VOCAB_SIZE};
use crate::error::{Error, Result};
use crate::eval::{parallel_map, perplexity};
use crate::model::{pin_pad_row, Model, ParamStore, StepDists};

/// Adam moment decay and stabilizer defaults.
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Every knob of a training run. Field names double as config-file keys and
/// CLI override keys.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub variant: Variant,
    pub d_emb: usize,
    pub d_hidden: usize,
    pub vocab_max: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub max_epochs: usize,
    /// Optional hard cap on optimizer steps; 0 means epochs alone decide.
    pub max_steps: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub beam_width: usize,
    pub max_len: usize,
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            variant: Variant::DeepCopy,
            d_emb: 100,
            d_hidden: 100,
            vocab_max: DEFAULT_VOCAB_SIZE,
            batch_size: 32,
            lr: 0.001,
            clip_norm: 5.0,
            max_epochs: 10,
            max_steps: 0,
            eval_every: 200,
            seed: 1,
            beam_width: 4,
            max_len: 20,
            jobs: 1,
        }
    }
}

/// Config keys accepted in files and as `key=value` overrides.
pub const CONFIG_KEYS: [&str; 14] = [
    "variant",
    "d_emb",
    "d_hidden",
    "vocab_max",
    "batch_size",
    "lr",
    "clip_norm",
    "max_epochs",
    "max_steps",
    "eval_every",
    "seed",
    "beam_width",
    "max_len",
    "jobs",
];

impl TrainConfig {
    /// Apply one `key = value` assignment. Unknown keys and unparsable
    /// values are rejected with the full list of valid keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.trim().parse().map_err(|_| {
                Error::Config(format!("invalid value `{value}` for key `{key}`"))
            })
        }
        match key {
            "variant" => self.variant = Variant::parse(value.trim())?,
            "d_emb" => self.d_emb = num(key, value)?,
            "d_hidden" => self.d_hidden = num(key, value)?,
            "vocab_max" => self.vocab_max = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "clip_norm" => self.clip_norm = num(key, value)?,
            "max_epochs" => self.max_epochs = num(key, value)?,
            "max_steps" => self.max_steps = num(key, value)?,
            "eval_every" => self.eval_every = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "beam_width" => self.beam_width = num(key, value)?,
            "max_len" => self.max_len = num(key, value)?,
            "jobs" => self.jobs = num(key, value)?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown config key `{key}`; valid keys: {}",
                    CONFIG_KEYS.join(", ")
                )))
            }
        }
        self.validate()
    }

    fn validate(&self) -> Result<()> {
        if self.d_emb == 0
            || self.d_hidden == 0
            || self.vocab_max == 0
            || self.batch_size == 0
            || self.beam_width == 0
            || self.max_len == 0
        {
            return Err(Error::Config("size parameters must be positive".into()));
        }
        if self.lr < 0.0 || self.clip_norm <= 0.0 {
            return Err(Error::Config(
                "lr must be non-negative and clip_norm positive".into(),
            ));
        }
        Ok(())
    }

    /// Parse a config file of `key = value` lines; `#` starts a comment.
    pub fn from_str_cfg(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: format!("expected `key = value`, got `{line}`"),
                });
            };
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainConfig::from_str_cfg(&text)
    }
}

/// Length-normalized negative log-likelihood recomputed from plain step
/// distributions; the value-level oracle for the graph-assembled loss.
pub fn nll_loss(steps: &[StepDists], targets: &[usize]) -> Result<f64> {
    if steps.len() != targets.len() {
        return Err(Error::LengthMismatch {
            what: "step distributions vs targets",
            left: steps.len(),
            right: targets.len(),
        });
    }
    if steps.is_empty() {
        return Err(Error::EmptySequence("loss targets"));
    }
    let mut total = 0.0;
    for (s, &t) in steps.iter().zip(targets.iter()) {
        let p = s.p_final.get(t).copied().ok_or(Error::IndexOutOfRange {
            op: "nll_loss",
            index: t,
            len: s.p_final.len(),
        })?;
        total -= p.max(LOG_EPS).ln();
    }
    Ok(total / steps.len() as f64)
}

/// Scale all gradients so the global L2 norm does not exceed `max_norm`.
/// Returns the applied scale (1.0 when untouched). Any non-finite gradient
/// aborts with the offending parameter's name.
pub fn clip_gradients(store: &mut ParamStore, max_norm: f64) -> Result<f64> {
    let mut sq = 0.0;
    for p in store.iter() {
        for &g in &p.grad {
            if !g.is_finite() {
                return Err(Error::NanGradient { param: p.name.clone() });
            }
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for p in store.iter_mut() {
            p.grad.iter_mut().for_each(|g| *g *= scale);
        }
        Ok(scale)
    } else {
        Ok(1.0)
    }
}

/// First and second moment accumulators, one buffer per parameter in store
/// order.
#[derive(Debug, Clone)]
pub struct AdamState {
    t: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> AdamState {
        AdamState {
            t: 0,
            m: store.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            v: store.iter().map(|p| vec![0.0; p.data.len()]).collect(),
        }
    }

    pub fn step_count(&self) -> usize {
        self.t
    }
}

/// One bias-corrected Adam update from the gradients currently in the store.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, lr: f64) {
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for (i, p) in store.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.data.len() {
            let g = p.grad[j];
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g;
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p.data[j] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// One history row of a training run; `val_ppl` is filled on evaluation
/// steps only.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub step: usize,
    pub train_loss: f64,
    pub val_ppl: Option<f64>,
}

/// Parameter snapshot at the best validation perplexity seen so far.
#[derive(Debug, Clone)]
pub struct BestCheckpoint {
    pub step: usize,
    pub val_ppl: f64,
    params: Vec<Vec<f64>>,
}

impl BestCheckpoint {
    /// Restore the snapshot into a model with the same parameter layout.
    pub fn apply(&self, model: &mut Model) -> Result<()> {
        if self.params.len() != model.store.len() {
            return Err(Error::LengthMismatch {
                what: "checkpoint snapshot vs model parameters",
                left: self.params.len(),
                right: model.store.len(),
            });
        }
        for (i, data) in self.params.iter().enumerate() {
            model.store.at_mut(i).data.clone_from(data);
        }
        Ok(())
    }
}

/// Everything a finished run leaves behind.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<HistoryRow>,
    pub best: Option<BestCheckpoint>,
    pub steps_run: usize,
}

/// Render the loss history as the `step,train_loss,val_ppl` CSV.
pub fn loss_csv(history: &[HistoryRow]) -> String {
    let mut out = String::from("step,train_loss,val_ppl\n");
    for row in history {
        match row.val_ppl {
            Some(p) => out.push_str(&format!("{},{},{}\n", row.step, row.train_loss, p)),
            None => out.push_str(&format!("{},{},\n", row.step, row.train_loss)),
        }
    }
    out
}

/// Run the training loop, mutating `model` in place. Examples are shuffled
/// once per epoch with a generator seeded from the config; the final partial
/// batch is kept. Validation perplexity is measured every `eval_every` steps
/// when a validation split is present, and the best-scoring parameters are
/// snapshotted.
pub fn train(
    cfg: &TrainConfig,
    model: &mut Model,
    train_ex: &[DialogueExample],
    valid_ex: &[DialogueExample],
) -> Result<TrainOutcome> {
    if train_ex.is_empty() {
        return Err(Error::EmptyDataset("training split"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(&model.store);
    let mut history = Vec::new();
    let mut best: Option<BestCheckpoint> = None;
    let mut indices: Vec<usize> = (0..train_ex.len()).collect();
    let mut step = 0usize;

    'epochs: for _epoch in 0..cfg.max_epochs {
        indices.shuffle(&mut rng);
        for batch_ids in indices.chunks(cfg.batch_size) {
            step += 1;
            let batch: Vec<&DialogueExample> =
                batch_ids.iter().map(|&i| &train_ex[i]).collect();
            let scale = 1.0 / batch.len() as f64;

            // Fan the batch out to worker chunks; each worker folds its own
            // gradient buffer, and the buffers merge in chunk order.
            let jobs = cfg.jobs.max(1);
            let chunk = batch.len().div_ceil(jobs);
            let chunks: Vec<&[&DialogueExample]> = batch.chunks(chunk).collect();
            let layout: Vec<usize> = model.store.iter().map(|p| p.data.len()).collect();
            let model_ref: &Model = model;
            let partials = parallel_map(&chunks, jobs, |chunk| {
                let mut grads: Vec<Vec<f64>> =
                    layout.iter().map(|&n| vec![0.0; n]).collect();
                let mut loss_sum = 0.0;
                for ex in *chunk {
                    let mut fp = model_ref.forward(ex)?;
                    fp.backward()?;
                    loss_sum += fp.loss_value;
                    fp.add_grads_into(&mut grads, scale);
                }
                Ok((loss_sum, grads))
            })?;

            model.store.zero_grads();
            let mut batch_loss = 0.0;
            for (loss_sum, grads) in &partials {
                batch_loss += loss_sum * scale;
                for (i, g) in grads.iter().enumerate() {
                    let p = model.store.at_mut(i);
                    for (dst, src) in p.grad.iter_mut().zip(g.iter()) {
                        *dst += src;
                    }
                }
            }
            pin_pad_row(&mut model.store, model.d_emb);
            clip_gradients(&mut model.store, cfg.clip_norm)?;
            adam_step(&mut model.store, &mut adam, cfg.lr);

            let mut val = None;
            if !valid_ex.is_empty() && cfg.eval_every > 0 && step % cfg.eval_every == 0 {
                let ppl = perplexity(model, valid_ex, cfg.jobs)?;
                if best.as_ref().map(|b| ppl < b.val_ppl).unwrap_or(true) {
                    best = Some(BestCheckpoint {
                        step,
                        val_ppl: ppl,
                        params: model.store.iter().map(|p| p.data.clone()).collect(),
                    });
                }
                val = Some(ppl);
            }
            history.push(HistoryRow { step, train_loss: batch_loss, val_ppl: val });

            if cfg.max_steps > 0 && step >= cfg.max_steps {
                break 'epochs;
            }
        }
    }
    Ok(TrainOutcome { history, best, steps_run: step })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EOS;

    const V: usize = 12;

    fn micro_example(shift: u32) -> DialogueExample {
        DialogueExample {
            context: vec![5 + shift, 6],
            facts: vec![vec![7, 8], vec![9, 10]],
            target: vec![6, 5 + shift, EOS],
            ext_vocab: vec![],
            best_fact_by_context: 0,
            best_fact_by_response: 1,
            context_tokens: vec!["a".into(), "b".into()],
            fact_tokens: vec![vec!["c".into(), "d".into()], vec!["e".into(), "f".into()]],
            target_tokens: vec!["b".into(), "a".into()],
        }
    }

    fn micro_cfg() -> TrainConfig {
        TrainConfig {
            d_emb: 3,
            d_hidden: 4,
            vocab_max: V,
            batch_size: 3,
            max_epochs: 100,
            eval_every: 2,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn defaults_are_the_published_hyperparameters() {
        let c = TrainConfig::default();
        assert_eq!(c.batch_size, 32);
        assert_eq!(c.lr, 0.001);
        assert_eq!(c.clip_norm, 5.0);
        assert_eq!(c.d_emb, 100);
        assert_eq!(c.d_hidden, 100);
        assert_eq!(c.vocab_max, 18650);
        assert_eq!(c.beam_width, 4);
        assert_eq!(ADAM_BETA1, 0.9);
        assert_eq!(ADAM_BETA2, 0.999);
        assert_eq!(ADAM_EPS, 1e-8);
    }

    #[test]
    fn config_file_parses_and_rejects_unknown_keys() {
        let cfg = TrainConfig::from_str_cfg(
            "# comment\nvariant = S2SC-2\nlr = 0.01   # inline\nbatch_size=4\n",
        )
        .unwrap();
        assert_eq!(cfg.variant, Variant::CopyFactContext);
        assert_eq!(cfg.lr, 0.01);
        assert_eq!(cfg.batch_size, 4);

        match TrainConfig::from_str_cfg("learning_rate = 0.1\n") {
            Err(Error::Config(msg)) => {
                assert!(msg.contains("unknown config key"), "{msg}");
                assert!(msg.contains("clip_norm"), "{msg}");
            }
            other => panic!("expected config error, got {other:?}"),
        }
        assert!(matches!(
            TrainConfig::from_str_cfg("lr 0.1\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            TrainConfig::from_str_cfg("lr = fast\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            TrainConfig::from_str_cfg("batch_size = 0\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn nll_loss_closed_forms() {
        let mk = |p_final: Vec<f64>| StepDists {
            p_final,
            p_vocab: vec![],
            p_copy: None,
            p_gen: None,
            gamma: None,
            alpha_context: None,
            alpha_facts: None,
            beta: None,
            c_context: None,
            c_fact: None,
            c_fused: None,
        };
        // Perfect predictions.
        let steps = vec![mk(vec![1.0, 0.0]), mk(vec![0.0, 1.0])];
        assert_eq!(nll_loss(&steps, &[0, 1]).unwrap(), 0.0);
        // Uniform over 10 ids, three steps.
        let u = vec![mk(vec![0.1; 10]), mk(vec![0.1; 10]), mk(vec![0.1; 10])];
        assert!((nll_loss(&u, &[0, 5, 9]).unwrap() - 10f64.ln()).abs() < 1e-12);
        assert!(matches!(
            nll_loss(&u, &[0, 1]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn graph_loss_agrees_with_value_level_recomputation() {
        let ex = micro_example(0);
        let m = Model::new(Variant::DeepCopy, 3, 4, V, 3).unwrap();
        let fp = m.forward(&ex).unwrap();
        let targets: Vec<usize> = (0..ex.target.len()).map(|t| m.loss_target(&ex, t)).collect();
        let recomputed = nll_loss(&fp.steps, &targets).unwrap();
        assert!((fp.loss_value - recomputed).abs() < 1e-12);
    }

    fn store_with_grads(grads: &[Vec<f64>]) -> ParamStore {
        let mut s = ParamStore::new();
        for (i, g) in grads.iter().enumerate() {
            s.add(&format!("p{i}"), vec![g.len()], vec![0.0; g.len()]);
            s.at_mut(i).grad.clone_from(g);
        }
        s
    }

    #[test]
    fn clipping_rescales_only_above_the_threshold() {
        // Norm 10 vector halves to 5.
        let mut s = store_with_grads(&[vec![6.0, 8.0]]);
        let scale = clip_gradients(&mut s, 5.0).unwrap();
        assert!((scale - 0.5).abs() < 1e-12);
        let post: f64 = s.at(0).grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!((post - 5.0).abs() < 1e-9);
        // Norm 3 untouched.
        let mut s = store_with_grads(&[vec![3.0]]);
        assert_eq!(clip_gradients(&mut s, 5.0).unwrap(), 1.0);
        assert_eq!(s.at(0).grad, vec![3.0]);
        // Two parameters with norms 3 and 4: global norm exactly 5, no-op.
        let mut s = store_with_grads(&[vec![3.0], vec![4.0]]);
        assert_eq!(clip_gradients(&mut s, 5.0).unwrap(), 1.0);
        assert_eq!(s.at(0).grad, vec![3.0]);
        assert_eq!(s.at(1).grad, vec![4.0]);
    }

    #[test]
    fn nan_gradient_aborts_with_the_parameter_name() {
        let mut s = store_with_grads(&[vec![1.0], vec![f64::NAN]]);
        match clip_gradients(&mut s, 5.0) {
            Err(Error::NanGradient { param }) => assert_eq!(param, "p1"),
            other => panic!("expected NaN error, got {other:?}"),
        }
    }

    #[test]
    fn adam_first_step_and_zero_grad_behavior() {
        let mut s = store_with_grads(&[vec![0.5, -0.25, 0.0]]);
        let mut adam = AdamState::new(&s);
        let lr = 0.001;
        adam_step(&mut s, &mut adam, lr);
        let d = &s.at(0).data;
        // Bias-corrected first step is lr * g / (|g| + eps) ~ lr * sign(g).
        assert!((d[0] - (-lr)).abs() < 1e-9);
        assert!((d[1] - lr).abs() < 1e-9);
        assert_eq!(d[2], 0.0);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn adam_descends_a_quadratic_bowl_monotonically() {
        let mut s = ParamStore::new();
        s.add("theta", vec![3], vec![1.0, -2.0, 0.5]);
        let mut adam = AdamState::new(&s);
        let f = |d: &[f64]| d.iter().map(|x| x * x).sum::<f64>();
        let mut prev = f(&s.at(0).data);
        for _ in 0..10 {
            let g: Vec<f64> = s.at(0).data.iter().map(|x| 2.0 * x).collect();
            s.at_mut(0).grad.clone_from(&g);
            adam_step(&mut s, &mut adam, 0.05);
            let cur = f(&s.at(0).data);
            assert!(cur < prev, "{cur} !< {prev}");
            prev = cur;
        }
    }

    #[test]
    fn first_batch_loss_is_the_mean_of_initial_example_losses() {
        let examples: Vec<DialogueExample> =
            (0..3).map(|i| micro_example(i)).collect();
        let mut cfg = micro_cfg();
        cfg.max_steps = 1;
        let init = Model::new(cfg.variant, cfg.d_emb, cfg.d_hidden, V, 5).unwrap();
        let mut model = init.clone();
        let outcome = train(&cfg, &mut model, &examples, &[]).unwrap();
        let mean: f64 = examples
            .iter()
            .map(|ex| init.forward(ex).unwrap().loss_value)
            .sum::<f64>()
            / examples.len() as f64;
        assert!((outcome.history[0].train_loss - mean).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let examples: Vec<DialogueExample> = (0..4).map(|i| micro_example(i % 2)).collect();
        let mut cfg = micro_cfg();
        cfg.lr = 0.0;
        cfg.max_steps = 5;
        let mut model = Model::new(cfg.variant, cfg.d_emb, cfg.d_hidden, V, 9).unwrap();
        let before: Vec<Vec<f64>> = model.store.iter().map(|p| p.data.clone()).collect();
        train(&cfg, &mut model, &examples, &[]).unwrap();
        for (p, b) in model.store.iter().zip(before.iter()) {
            assert_eq!(&p.data, b, "{}", p.name);
        }
    }

    #[test]
    fn training_is_bitwise_deterministic_and_loss_falls() {
        let examples: Vec<DialogueExample> = (0..4).map(|i| micro_example(i % 3)).collect();
        let valid = vec![micro_example(1)];
        let mut cfg = micro_cfg();
        cfg.max_steps = 30;
        cfg.lr = 0.01;
        let run = || -> (Vec<HistoryRow>, Vec<Vec<f64>>) {
            let mut model =
                Model::new(cfg.variant, cfg.d_emb, cfg.d_hidden, V, 11).unwrap();
            let out = train(&cfg, &mut model, &examples, &valid).unwrap();
            (out.history, model.store.iter().map(|p| p.data.clone()).collect())
        };
        let (h1, p1) = run();
        let (h2, p2) = run();
        assert_eq!(h1.len(), h2.len());
        for (a, b) in h1.iter().zip(h2.iter()) {
            assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
            assert_eq!(
                a.val_ppl.map(f64::to_bits),
                b.val_ppl.map(f64::to_bits)
            );
        }
        assert_eq!(p1, p2);
        assert!(h1.last().unwrap().train_loss < h1.first().unwrap().train_loss);
    }

    #[test]
    fn best_checkpoint_restores_its_validation_perplexity() {
        let examples: Vec<DialogueExample> = (0..4).map(|i| micro_example(i % 3)).collect();
        let valid: Vec<DialogueExample> = (0..2).map(micro_example).collect();
        let mut cfg = micro_cfg();
        cfg.max_steps = 12;
        cfg.eval_every = 3;
        cfg.lr = 0.01;
        let mut model = Model::new(cfg.variant, cfg.d_emb, cfg.d_hidden, V, 13).unwrap();
        let out = train(&cfg, &mut model, &examples, &valid).unwrap();
        let best = out.best.expect("evaluations happened");
        let min_seen = out
            .history
            .iter()
            .filter_map(|r| r.val_ppl)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(best.val_ppl, min_seen);
        best.apply(&mut model).unwrap();
        let ppl = perplexity(&model, &valid, 1).unwrap();
        assert!((ppl - best.val_ppl).abs() < 1e-12);
    }

    #[test]
    fn worker_fanout_is_deterministic_for_a_fixed_job_count() {
        let examples: Vec<DialogueExample> = (0..6).map(|i| micro_example(i % 3)).collect();
        let mut cfg = micro_cfg();
        cfg.max_steps = 6;
        cfg.batch_size = 4;
        cfg.jobs = 3;
        let run = || {
            let mut model =
                Model::new(cfg.variant, cfg.d_emb, cfg.d_hidden, V, 17).unwrap();
            let out = train(&cfg, &mut model, &examples, &[]).unwrap();
            (out.history, model.store.iter().map(|p| p.data.clone()).collect::<Vec<_>>())
        };
        let (h1, p1) = run();
        let (h2, p2) = run();
        for (a, b) in h1.iter().zip(h2.iter()) {
            assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
        }
        assert_eq!(p1, p2);
    }

    #[test]
    fn loss_csv_has_the_pinned_column_layout() {
        let rows = vec![
            HistoryRow { step: 1, train_loss: 2.5, val_ppl: None },
            HistoryRow { step: 2, train_loss: 2.25, val_ppl: Some(11.0) },
        ];
        assert_eq!(
            loss_csv(&rows),
            "step,train_loss,val_ppl\n1,2.5,\n2,2.25,11\n"
        );
    }
}
