//! The repository's acceptance gate: nine numbered checks, one test each,
//! mirroring the numbered list in the README. Every check prints a single
//! `PASS n/9` line (visible with `--nocapture`) and pins its tolerances
//! explicitly. The checks are property-based and micro-scale by design;
//! full-corpus score reproduction is out of scope.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use deepcopy::autodiff::{Tape, LOG_EPS};
use deepcopy::baselines::Variant;
use deepcopy::corpus::{tokenize, DialogueExample, Vocab, EOS, SOS, UNK};
use deepcopy::deepcopy::{copy_distribution, mix_fact_copies};
use deepcopy::error::Result;
use deepcopy::eval::{beam_search, perplexity, surface_tokens};
use deepcopy::metrics::{cider, corpus_bleu, distinct_n, rouge_l};
use deepcopy::model::Model;
use deepcopy::training::{adam_step, clip_gradients, AdamState};

// ---- shared fixtures and helpers -------------------------------------------

fn words(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// The base vocabulary shared by the hand-built training fixtures.
fn fixture_vocab() -> Vocab {
    Vocab::from_tokens(
        words(&[
            "what", "is", "your", "name", "?", "my", "pet", "favorite", "food", "team",
            "color", "city", "hobby", "band", "i", "love", "the", "a", ".", "like", "to",
            "eat", "play", "and", "it", "rex", "turtle", "pizza", "tigers", "blue",
            "paris", "chess", "jazz",
        ])
        .into_iter(),
    )
    .unwrap()
}

fn resolve(vocab: &Vocab, ext: &mut Vec<(String, u32)>, tok: &str) -> u32 {
    if let Some(id) = vocab.id(tok) {
        return id;
    }
    if let Some(&(_, id)) = ext.iter().find(|(t, _)| t == tok) {
        return id;
    }
    let id = (vocab.size() + ext.len()) as u32;
    ext.push((tok.to_string(), id));
    id
}

/// Assemble an example from raw text against a fixed vocabulary, assigning
/// extended ids to out-of-vocabulary context/fact tokens in first-occurrence
/// order (the same convention the corpus pipeline uses).
fn hand_example(vocab: &Vocab, context: &str, facts: &[&str], target: &str) -> DialogueExample {
    let context_tokens = tokenize(context);
    let fact_tokens: Vec<Vec<String>> = facts.iter().map(|f| tokenize(f)).collect();
    let target_tokens = tokenize(target);
    let mut ext: Vec<(String, u32)> = Vec::new();
    let context_ids: Vec<u32> = context_tokens
        .iter()
        .map(|t| resolve(vocab, &mut ext, t))
        .collect();
    let fact_ids: Vec<Vec<u32>> = fact_tokens
        .iter()
        .map(|f| f.iter().map(|t| resolve(vocab, &mut ext, t)).collect())
        .collect();
    let mut target_ids: Vec<u32> = target_tokens
        .iter()
        .map(|t| {
            vocab.id(t).unwrap_or_else(|| {
                ext.iter().find(|(s, _)| s == t).map(|&(_, id)| id).unwrap_or(UNK)
            })
        })
        .collect();
    target_ids.push(EOS);
    DialogueExample {
        context: context_ids,
        facts: fact_ids,
        target: target_ids,
        ext_vocab: ext,
        best_fact_by_context: 0,
        best_fact_by_response: 0,
        context_tokens,
        fact_tokens,
        target_tokens,
    }
}

const ATTRS: [&str; 8] = ["name", "pet", "food", "team", "color", "city", "hobby", "band"];

/// Copy-task fixture: every target contains one invented token that appears
/// only inside the supporting fact, so reproducing the target requires the
/// copy path.
fn copy_task_fixture() -> (Vocab, Vec<DialogueExample>) {
    let vocab = fixture_vocab();
    let oovs = [
        "zorblat", "quizzle", "vexmor", "drulgar", "plimbo", "snurfle", "grimbok", "thazzle",
    ];
    let examples: Vec<DialogueExample> = ATTRS
        .iter()
        .zip(oovs.iter())
        .map(|(attr, oov)| {
            hand_example(
                &vocab,
                &format!("what is your {attr} ?"),
                &[&format!("my {attr} is {oov} ."), "i like to play ."],
                &format!("my {attr} is {oov} ."),
            )
        })
        .collect();
    for ex in &examples {
        assert!(
            ex.target.iter().any(|&id| id as usize >= vocab.size()),
            "each copy-task target must contain an out-of-vocabulary token"
        );
    }
    (vocab, examples)
}

/// Copy-task fixture with longer targets: the invented token sits
/// mid-sentence so that without it the surrounding 2/3/4-grams collapse
/// across examples, which the diversity comparison relies on.
fn long_copy_fixture() -> (Vocab, Vec<DialogueExample>) {
    let vocab = fixture_vocab();
    let oovs = [
        "zorblat", "quizzle", "vexmor", "drulgar", "plimbo", "snurfle", "grimbok", "thazzle",
    ];
    let examples: Vec<DialogueExample> = ATTRS
        .iter()
        .zip(oovs.iter())
        .map(|(attr, oov)| {
            let sentence = format!("my {attr} is {oov} and i love it .");
            hand_example(
                &vocab,
                &format!("what is your {attr} ?"),
                &[&sentence, "i like to play chess ."],
                &sentence,
            )
        })
        .collect();
    (vocab, examples)
}

/// Fully in-vocabulary fixture, learnable by every variant that can
/// memorize through its output layer.
fn in_vocab_fixture() -> (Vocab, Vec<DialogueExample>) {
    let vocab = fixture_vocab();
    let answers = [
        "rex", "turtle", "pizza", "tigers", "blue", "paris", "chess", "jazz",
    ];
    let examples: Vec<DialogueExample> = ATTRS
        .iter()
        .zip(answers.iter())
        .map(|(attr, ans)| {
            hand_example(
                &vocab,
                &format!("what is your {attr} ?"),
                &[&format!("my {attr} is {ans} ."), "i like to eat pizza ."],
                &format!("my {attr} is {ans} ."),
            )
        })
        .collect();
    for ex in &examples {
        assert!(ex.ext_vocab.is_empty());
    }
    (vocab, examples)
}

/// Fixture for the fact-copying encoder variants: the answer is an invented
/// token, so only the copy path can produce it (no generate/copy saddle),
/// and the supporting fact is a two-token snippet, so the copy attention
/// localizes it sharply instead of splitting across mid-sentence neighbors.
fn forced_copy_fixture() -> (Vocab, Vec<DialogueExample>) {
    let vocab = fixture_vocab();
    let oovs = [
        "zorblat", "quizzle", "vexmor", "drulgar", "plimbo", "snurfle", "grimbok", "thazzle",
    ];
    let examples: Vec<DialogueExample> = ATTRS
        .iter()
        .zip(oovs.iter())
        .map(|(attr, oov)| {
            hand_example(
                &vocab,
                &format!("what is your {attr} ?"),
                &[&format!("{oov} ."), "i like to eat ."],
                &format!("my {attr} is {oov} ."),
            )
        })
        .collect();
    for ex in &examples {
        assert!(!ex.ext_vocab.is_empty());
    }
    (vocab, examples)
}

/// Deterministic full-batch training loop (Adam, global-norm clip 5.0) with
/// an optional early stop once the batch loss falls below a threshold.
/// Returns (steps run, last batch loss).
fn train_full_batch(
    model: &mut Model,
    examples: &[DialogueExample],
    lr: f64,
    max_steps: usize,
    stop_below: Option<f64>,
) -> (usize, f64) {
    let mut adam = AdamState::new(&model.store);
    let scale = 1.0 / examples.len() as f64;
    let mut loss = f64::INFINITY;
    for step in 1..=max_steps {
        model.store.zero_grads();
        loss = 0.0;
        for ex in examples {
            let mut fp = model.forward(ex).unwrap();
            fp.backward().unwrap();
            loss += fp.loss_value * scale;
            fp.accumulate_grads(&mut model.store, scale);
        }
        clip_gradients(&mut model.store, 5.0).unwrap();
        adam_step(&mut model.store, &mut adam, lr);
        if let Some(threshold) = stop_below {
            if loss < threshold {
                return (step, loss);
            }
        }
    }
    (max_steps, loss)
}

fn greedy(model: &Model, ex: &DialogueExample, max_len: usize) -> Vec<u32> {
    beam_search(model, ex, 1, max_len).unwrap().tokens
}

/// True when greedy decoding reproduces the target (which ends in EOS) exactly.
fn reproduces(model: &Model, ex: &DialogueExample) -> bool {
    let hyp = greedy(model, ex, ex.target.len() + 2);
    hyp == ex.target[..ex.target.len() - 1]
}

/// Train full-batch until greedy decoding reproduces every target, probing
/// every `check_every` steps. Returns the step count at which reproduction
/// was reached, or None if the budget ran out.
fn train_until_reproduction(
    model: &mut Model,
    examples: &[DialogueExample],
    lr: f64,
    max_steps: usize,
    check_every: usize,
) -> Option<usize> {
    let mut adam = AdamState::new(&model.store);
    let scale = 1.0 / examples.len() as f64;
    for step in 1..=max_steps {
        model.store.zero_grads();
        for ex in examples {
            let mut fp = model.forward(ex).unwrap();
            fp.backward().unwrap();
            fp.accumulate_grads(&mut model.store, scale);
        }
        clip_gradients(&mut model.store, 5.0).unwrap();
        adam_step(&mut model.store, &mut adam, lr);
        if step % check_every == 0 && examples.iter().all(|ex| reproduces(model, ex)) {
            return Some(step);
        }
    }
    None
}

// ---- check 1: gradient fidelity --------------------------------------------

#[test]
fn check_1_analytic_gradients_match_finite_differences_for_every_variant() {
    let start = Instant::now();
    const V: usize = 12;
    // Sequences of length <= 5, two facts, extended ids 12/13 in play.
    let ex = DialogueExample {
        context: vec![5, 6, 12],
        facts: vec![vec![7, 8], vec![9, 13]],
        target: vec![6, 13, 10, EOS],
        ext_vocab: vec![("zorp".into(), 12), ("florp".into(), 13)],
        best_fact_by_context: 0,
        best_fact_by_response: 1,
        context_tokens: words(&["a", "b", "zorp"]),
        fact_tokens: vec![words(&["c", "d"]), words(&["e", "florp"])],
        target_tokens: words(&["b", "florp", "f"]),
    };
    let h = 1e-5;
    let mut coords_checked = 0usize;
    for (vi, &variant) in Variant::ALL.iter().enumerate() {
        let mut m = Model::new(variant, 4, 4, V, 20 + vi as u64).unwrap();
        let mut fp = m.forward(&ex).unwrap();
        fp.backward().unwrap();
        let mut analytic = m.store.clone();
        analytic.zero_grads();
        fp.accumulate_grads(&mut analytic, 1.0);

        for pi in 0..m.store.len() {
            for ci in 0..m.store.at(pi).data.len() {
                let orig = m.store.at(pi).data[ci];
                m.store.at_mut(pi).data[ci] = orig + h;
                let up = m.forward(&ex).unwrap().loss_value;
                m.store.at_mut(pi).data[ci] = orig - h;
                let down = m.forward(&ex).unwrap().loss_value;
                m.store.at_mut(pi).data[ci] = orig;
                let fd = (up - down) / (2.0 * h);
                let ad = analytic.at(pi).grad[ci];
                // Relative tolerance 1e-4; below the central-difference
                // noise floor (~eps*|loss|/h = 1e-10) absolute agreement
                // within 1e-9 is the meaningful criterion.
                let rel = (fd - ad).abs() / (fd.abs() + ad.abs()).max(1e-8);
                assert!(
                    (fd - ad).abs() < 1e-9 || rel < 1e-4,
                    "{variant} {}[{ci}]: fd={fd} ad={ad}",
                    m.store.at(pi).name
                );
                coords_checked += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 60.0, "gradient sweep took {secs:.1}s (budget 60s)");
    println!(
        "PASS 1/9 gradient fidelity: {coords_checked} parameter coordinates across 12 variants, \
         rel tol 1e-4 (abs 1e-9 below the noise floor), in {secs:.1}s"
    );
}

// ---- check 2: normalization suite ------------------------------------------

fn random_example(rng: &mut ChaCha8Rng, vocab_size: usize) -> DialogueExample {
    let n_ext = rng.gen_range(0..3usize);
    let ext_vocab: Vec<(String, u32)> = (0..n_ext)
        .map(|k| (format!("x{k}"), (vocab_size + k) as u32))
        .collect();
    let hi = (vocab_size + n_ext) as u32;
    let tok = |rng: &mut ChaCha8Rng| rng.gen_range(5..hi);
    let context: Vec<u32> = (0..rng.gen_range(1..=5)).map(|_| tok(rng)).collect();
    let facts: Vec<Vec<u32>> = (0..2)
        .map(|_| (0..rng.gen_range(1..=3)).map(|_| tok(rng)).collect())
        .collect();
    let mut target: Vec<u32> = (0..rng.gen_range(1..=4)).map(|_| tok(rng)).collect();
    target.push(EOS);
    let name = |ids: &[u32]| -> Vec<String> { ids.iter().map(|i| format!("w{i}")).collect() };
    DialogueExample {
        context_tokens: name(&context),
        fact_tokens: facts.iter().map(|f| name(f)).collect(),
        target_tokens: name(&target[..target.len() - 1]),
        context,
        facts,
        target,
        ext_vocab,
        best_fact_by_context: rng.gen_range(0..2),
        best_fact_by_response: rng.gen_range(0..2),
    }
}

fn assert_simplex(p: &[f64], what: &str) {
    let sum: f64 = p.iter().sum();
    assert!((sum - 1.0).abs() < 1e-9, "{what} sums to {sum}");
    assert!(p.iter().all(|&x| x >= 0.0), "{what} has a negative entry");
}

#[test]
fn check_2_all_distributions_stay_normalized_over_randomized_steps() {
    const V: usize = 12;
    const STEPS_PER_VARIANT: usize = 1000;
    for (vi, &variant) in Variant::ALL.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + vi as u64);
        let mut steps = 0usize;
        let mut model_age = usize::MAX;
        let mut model = None;
        while steps < STEPS_PER_VARIANT {
            if model_age >= 40 {
                model = Some(Model::new(variant, 4, 4, V, rng.gen()).unwrap());
                model_age = 0;
            }
            model_age += 1;
            let m = model.as_ref().unwrap();
            let ex = random_example(&mut rng, V);
            let fp = m.forward(&ex).unwrap();
            for dists in &fp.steps {
                assert_simplex(&dists.p_final, "p_final");
                assert_simplex(&dists.p_vocab, "p_vocab");
                if let Some(p) = &dists.p_copy {
                    assert_simplex(p, "p_copy");
                }
                if let Some(a) = &dists.alpha_context {
                    assert_simplex(a, "context attention");
                }
                if let Some(rows) = &dists.alpha_facts {
                    for row in rows {
                        assert_simplex(row, "fact token attention");
                    }
                }
                if let Some(b) = &dists.beta {
                    assert_simplex(b, "fact-level attention");
                }
                if let Some(g) = dists.gamma {
                    assert!((0.0..=1.0).contains(&g), "gamma {g}");
                }
                if let Some(pg) = dists.p_gen {
                    assert!((0.0..=1.0).contains(&pg), "p_gen {pg}");
                }
                steps += 1;
            }
        }
    }
    println!(
        "PASS 2/9 normalization: {} randomized decoder steps per variant, every distribution \
         sums to 1 within 1e-9, switches inside [0,1]",
        STEPS_PER_VARIANT
    );
}

// ---- check 3: hierarchical copy against a brute-force oracle ---------------

#[test]
fn check_3_hierarchical_copy_matches_nested_loop_oracle_on_200_instances() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for instance in 0..200 {
        let support = rng.gen_range(8..20usize);
        let k = rng.gen_range(1..=4usize);
        let fact_ids: Vec<Vec<u32>> = (0..k)
            .map(|_| {
                (0..rng.gen_range(1..=6))
                    .map(|_| rng.gen_range(0..support as u32))
                    .collect()
            })
            .collect();
        let token_weights: Vec<Vec<f64>> = fact_ids
            .iter()
            .map(|f| {
                let raw: Vec<f64> = f.iter().map(|_| rng.gen_range(0.05..1.0)).collect();
                let total: f64 = raw.iter().sum();
                raw.into_iter().map(|w| w / total).collect()
            })
            .collect();
        let beta_raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
        let beta_total: f64 = beta_raw.iter().sum();
        let beta: Vec<f64> = beta_raw.into_iter().map(|b| b / beta_total).collect();

        // Graph path: scatter each fact's weights, then mix with beta.
        let mut tape = Tape::new();
        let beta_t = tape.constant(beta.clone(), vec![k])?;
        let mut dists = Vec::with_capacity(k);
        for (f, w) in fact_ids.iter().zip(token_weights.iter()) {
            let w_t = tape.constant(w.clone(), vec![w.len()])?;
            dists.push(copy_distribution(&mut tape, w_t, f, support)?);
        }
        let mixed = mix_fact_copies(&mut tape, beta_t, &dists)?;
        let graph = tape.data(mixed).to_vec();

        // Oracle: nested loop over every (fact, position) pair.
        let mut oracle = vec![0.0f64; support];
        for j in 0..k {
            for (i, &id) in fact_ids[j].iter().enumerate() {
                oracle[id as usize] += beta[j] * token_weights[j][i];
            }
        }
        for (idx, (g, o)) in graph.iter().zip(oracle.iter()).enumerate() {
            assert!(
                (g - o).abs() < 1e-12,
                "instance {instance}, token {idx}: graph {g} vs oracle {o}"
            );
        }
        let total: f64 = graph.iter().sum();
        assert!((total - 1.0).abs() < 1e-12, "instance {instance} sums to {total}");
    }
    println!(
        "PASS 3/9 hierarchical copy: 200 random instances equal the brute-force \
         (fact, position) accumulation within 1e-12"
    );
    Ok(())
}

// ---- check 4: copy capability separation -----------------------------------

#[test]
fn check_4_copy_task_separates_the_pointer_from_the_pure_seq2seq() {
    let start = Instant::now();
    let (vocab, examples) = copy_task_fixture();
    const STEP_BUDGET: usize = 2000;

    // The pointer-generator must reproduce all eight targets exactly.
    let mut pointer = Model::new(Variant::DeepCopy, 12, 16, vocab.size(), 2).unwrap();
    let steps_used = train_until_reproduction(&mut pointer, &examples, 0.01, STEP_BUDGET, 50)
        .unwrap_or_else(|| {
            panic!("pointer-generator failed to reproduce the copy task within {STEP_BUDGET} steps")
        });
    for ex in &examples {
        assert!(reproduces(&pointer, ex));
        // The reproduced token really is out-of-vocabulary: it surfaces as
        // its source string, not as the unknown marker.
        let surfaced = surface_tokens(ex, &vocab, &greedy(&pointer, ex, 10));
        assert!(surfaced.iter().any(|t| ex.ext_vocab.iter().any(|(s, _)| s == t)));
        assert!(!surfaced.iter().any(|t| t == "<unk>"));
    }

    // The fact-blind encoder-decoder cannot emit any extended id, so its
    // accuracy on out-of-vocabulary target positions is structurally zero.
    let mut plain = Model::new(Variant::Seq2Seq, 12, 16, vocab.size(), 1).unwrap();
    train_full_batch(&mut plain, &examples, 0.01, 300, None);
    let mut oov_positions = 0usize;
    let mut oov_hits = 0usize;
    for ex in &examples {
        let hyp = greedy(&plain, ex, 10);
        assert!(
            hyp.iter().all(|&id| (id as usize) < vocab.size()),
            "a copy-free model emitted an extended id"
        );
        for (t, &want) in ex.target.iter().enumerate() {
            if (want as usize) >= vocab.size() {
                oov_positions += 1;
                if hyp.get(t) == Some(&want) {
                    oov_hits += 1;
                }
            }
        }
    }
    assert!(oov_positions >= examples.len());
    assert_eq!(oov_hits, 0, "out-of-vocabulary accuracy must be exactly zero");

    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 300.0, "copy-task check took {secs:.1}s (budget 300s)");
    println!(
        "PASS 4/9 copy separation: pointer-generator reproduces 8/8 targets after {steps_used} \
         steps; fact-blind seq2seq scores 0/{oov_positions} on out-of-vocabulary positions \
         ({secs:.1}s)"
    );
}

// ---- check 5: every baseline overfits its fixture --------------------------

#[test]
fn check_5_every_baseline_variant_overfits_the_fixture() {
    // Most variants overfit the in-vocabulary fixture at a conservative step
    // size. Two families need their own recipe:
    //   - The fact-copy models (CopyFactContext / CopyFactResponse) stall on a
    //     plateau where the generate/copy switch shuts off generation while the
    //     additive attention spreads its mass uniformly over adjacent encoder
    //     positions. A fixture whose answers are invented tokens reachable only
    //     through a two-token supporting fact, together with a larger step
    //     size, drives the copy path off that plateau within tens of steps.
    //   - The attention-free memory network squeezes all eight mappings through
    //     its initial decoder state and needs a larger step size to memorize
    //     the table within the step budget.
    let (plain_vocab, plain_examples) = in_vocab_fixture();
    let (copy_vocab, copy_examples) = forced_copy_fixture();
    let mut summary = Vec::new();
    for (vi, &variant) in Variant::ALL.iter().enumerate() {
        if variant == Variant::DeepCopy {
            continue; // covered by check 4
        }
        let (vocab, examples, lr) = match variant {
            Variant::CopyFactContext | Variant::CopyFactResponse => {
                (&copy_vocab, &copy_examples, 0.1)
            }
            Variant::MemNet => (&plain_vocab, &plain_examples, 0.05),
            _ => (&plain_vocab, &plain_examples, 0.01),
        };
        let mut model = Model::new(variant, 12, 16, vocab.size(), 40 + vi as u64).unwrap();
        let (steps, loss) = train_full_batch(&mut model, examples, lr, 2000, Some(0.1));
        assert!(
            loss < 0.1,
            "{variant} stuck at loss {loss} after {steps} steps"
        );
        summary.push(format!("{variant}:{steps}"));
    }
    println!(
        "PASS 5/9 overfit sanity: 11 baseline variants reach training loss < 0.1 within \
         2000 steps ({})",
        summary.join(" ")
    );
}

// ---- check 6: beam search against exhaustive enumeration -------------------

fn rank(a_score: f64, a_tokens: &[u32], b_score: f64, b_tokens: &[u32]) -> std::cmp::Ordering {
    b_score
        .partial_cmp(&a_score)
        .unwrap()
        .then_with(|| a_tokens.cmp(b_tokens))
}

#[test]
fn check_6_wide_beam_equals_exhaustive_enumeration_on_50_micro_models() {
    // Six-way support (one real token plus the five reserved ids) and
    // max_len 2: a width of 36 = support^max_len can never prune.
    let ex = DialogueExample {
        context: vec![5],
        facts: vec![vec![5], vec![5]],
        target: vec![5, EOS],
        ext_vocab: vec![],
        best_fact_by_context: 0,
        best_fact_by_response: 1,
        context_tokens: words(&["a"]),
        fact_tokens: vec![words(&["a"]), words(&["a"])],
        target_tokens: words(&["a"]),
    };
    let max_len = 2usize;
    let support = 6usize;
    let width = support.pow(max_len as u32);
    for i in 0..50u64 {
        let variant = Variant::ALL[(i % 12) as usize];
        let m = Model::new(variant, 2, 3, support, 600 + i).unwrap();
        let beam = beam_search(&m, &ex, width, max_len).unwrap();

        let mut best_finished: Option<(f64, Vec<u32>)> = None;
        let mut best_unfinished: Option<(f64, Vec<u32>)> = None;
        let mut session = m.decode_session(&ex).unwrap();
        let init = session.initial_state();
        let mut stack = vec![(Vec::<u32>::new(), 0.0f64, init)];
        while let Some((tokens, logp, state)) = stack.pop() {
            let prev = tokens.last().copied().unwrap_or(SOS);
            let (dists, next) = session.step(prev, &state).unwrap();
            for (tok, &p) in dists.p_final.iter().enumerate() {
                let lp = logp + p.max(LOG_EPS).ln();
                if tok as u32 == EOS {
                    let cand = (lp / (tokens.len() + 1) as f64, tokens.clone());
                    if best_finished
                        .as_ref()
                        .map(|b| rank(cand.0, &cand.1, b.0, &b.1).is_lt())
                        .unwrap_or(true)
                    {
                        best_finished = Some(cand);
                    }
                } else {
                    let mut grown = tokens.clone();
                    grown.push(tok as u32);
                    if grown.len() < max_len {
                        stack.push((grown, lp, next.clone()));
                    } else {
                        let cand = (lp / grown.len() as f64, grown);
                        if best_unfinished
                            .as_ref()
                            .map(|b| rank(cand.0, &cand.1, b.0, &b.1).is_lt())
                            .unwrap_or(true)
                        {
                            best_unfinished = Some(cand);
                        }
                    }
                }
            }
        }
        let (want_score, want_tokens, want_finished) = match best_finished {
            Some((s, t)) => (s, t, true),
            None => {
                let (s, t) = best_unfinished.unwrap();
                (s, t, false)
            }
        };
        assert_eq!(beam.tokens, want_tokens, "model {i} ({variant})");
        assert_eq!(beam.finished, want_finished, "model {i} ({variant})");
        assert!(
            (beam.score - want_score).abs() < 1e-12,
            "model {i} ({variant}): beam {} vs oracle {}",
            beam.score,
            want_score
        );
    }
    println!(
        "PASS 6/9 beam oracle: width-36 beam equals exhaustive enumeration on 50 random \
         micro-models (scores within 1e-12, ties lexicographic)"
    );
}

// ---- check 7: metric goldens -----------------------------------------------

fn sentences(list: &[&str]) -> Vec<Vec<String>> {
    list.iter().map(|s| tokenize(s)).collect()
}

#[test]
fn check_7_metrics_match_independently_computed_goldens() {
    let cands = sentences(&[
        "i like to ski in the winter .",
        "my favorite color is red .",
        "i have two dogs and a cat .",
        "hello from sunny florida !",
    ]);
    let refs = sentences(&[
        "i love to ski in the cold winter .",
        "my favorite color is blue .",
        "i have two dogs .",
        "hello there from sunny florida !",
    ]);

    // Values frozen from an independent reference implementation
    // (tools/goldens.py in this repository).
    assert!((corpus_bleu(&cands, &refs).unwrap() - 47.68643847842143).abs() < 1e-6);
    assert!((rouge_l(&cands, &refs).unwrap() - 83.63196402391442).abs() < 1e-6);
    assert!((cider(&cands, &refs).unwrap() - 5.4308146512572115).abs() < 1e-6);
    assert!((corpus_bleu(&refs, &refs).unwrap() - 100.0).abs() < 1e-6);
    assert!((rouge_l(&refs, &refs).unwrap() - 100.0).abs() < 1e-6);
    assert!((cider(&refs, &refs).unwrap() - 10.0).abs() < 1e-6);

    // Distinct-n against hand counts, exact.
    let repeat = vec![words(&["a", "b", "a", "b"])];
    assert_eq!(distinct_n(&repeat, 2).unwrap(), 2.0 / 3.0);
    let two = vec![words(&["a", "b"]), words(&["a", "c"])];
    assert_eq!(distinct_n(&two, 1).unwrap(), 3.0 / 4.0);
    assert!((distinct_n(&cands, 1).unwrap() - 0.8888888888888888).abs() < 1e-12);

    // A uniform output head makes perplexity equal the vocabulary size.
    const V: usize = 12;
    let ex = DialogueExample {
        context: vec![5, 6],
        facts: vec![vec![7, 8], vec![9, 10]],
        target: vec![6, 5, EOS],
        ext_vocab: vec![],
        best_fact_by_context: 0,
        best_fact_by_response: 1,
        context_tokens: words(&["a", "b"]),
        fact_tokens: vec![words(&["c", "d"]), words(&["e", "f"])],
        target_tokens: words(&["b", "a"]),
    };
    let mut m = Model::new(Variant::Seq2Seq, 3, 4, V, 10).unwrap();
    for name in ["output.w", "output.b"] {
        m.store.get_mut(name).unwrap().data.iter_mut().for_each(|v| *v = 0.0);
    }
    let ppl = perplexity(&m, &[ex.clone(), ex], 1).unwrap();
    assert!((ppl - V as f64).abs() < 1e-9, "uniform perplexity {ppl}");

    println!(
        "PASS 7/9 metric goldens: BLEU/ROUGE-L/CIDEr within 1e-6 of the frozen reference, \
         distinct-n exact, uniform perplexity = |V| within 1e-9"
    );
}

// ---- check 8: end-to-end determinism ---------------------------------------

#[test]
fn check_8_two_seeded_end_to_end_runs_are_byte_identical() {
    let exe = env!("CARGO_BIN_EXE_deepcopy");
    let fixtures = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw");
    std::fs::create_dir_all(&raw).unwrap();
    std::fs::copy(fixtures.join("convai2_micro_train.txt"), raw.join("train.txt")).unwrap();
    std::fs::copy(fixtures.join("convai2_micro_valid.txt"), raw.join("valid.txt")).unwrap();

    let run = |label: &str| -> (String, String) {
        let prep = tmp.path().join(format!("prep_{label}"));
        let trained = tmp.path().join(format!("train_{label}"));
        let evald = tmp.path().join(format!("eval_{label}"));
        for (args, what) in [
            (
                vec![
                    "prepare".to_string(),
                    "--data-dir".into(),
                    raw.display().to_string(),
                    "--out-dir".into(),
                    prep.display().to_string(),
                ],
                "prepare",
            ),
            (
                vec![
                    "train".to_string(),
                    "--data-dir".into(),
                    prep.display().to_string(),
                    "--out-dir".into(),
                    trained.display().to_string(),
                    "--variant".into(),
                    "DeepCopy".into(),
                    "--seed".into(),
                    "7".into(),
                    "d_emb=6".into(),
                    "d_hidden=6".into(),
                    "batch_size=4".into(),
                    "max_steps=200".into(),
                    "max_epochs=100".into(),
                    "eval_every=50".into(),
                    "lr=0.01".into(),
                ],
                "train",
            ),
            (
                vec![
                    "evaluate".to_string(),
                    "--data-dir".into(),
                    prep.display().to_string(),
                    "--out-dir".into(),
                    evald.display().to_string(),
                    "--checkpoint".into(),
                    trained.join("model.dckp").display().to_string(),
                    "--width".into(),
                    "4".into(),
                ],
                "evaluate",
            ),
        ] {
            let out = std::process::Command::new(exe).args(&args).output().unwrap();
            assert!(
                out.status.success(),
                "{what} failed: {}",
                String::from_utf8_lossy(&out.stderr)
            );
        }
        (
            std::fs::read_to_string(trained.join("loss.csv")).unwrap(),
            std::fs::read_to_string(evald.join("metrics.csv")).unwrap(),
        )
    };

    let (loss_a, metrics_a) = run("a");
    let (loss_b, metrics_b) = run("b");
    assert_eq!(loss_a, loss_b, "loss CSVs differ between seeded runs");
    assert_eq!(metrics_a, metrics_b, "metric CSVs differ between seeded runs");
    assert_eq!(loss_a.lines().count(), 201, "header plus one row per step");
    println!(
        "PASS 8/9 determinism: prepare -> train (200 steps) -> evaluate twice with one seed, \
         loss and metric CSVs byte-identical"
    );
}

// ---- check 9: directional diversity ----------------------------------------

#[test]
fn check_9_the_copy_path_raises_lexical_diversity_over_its_twin() {
    let (vocab, examples) = long_copy_fixture();
    let decode_all = |model: &Model| -> Vec<Vec<String>> {
        examples
            .iter()
            .map(|ex| {
                let res = beam_search(model, ex, 4, 12).unwrap();
                surface_tokens(ex, &vocab, &res.tokens)
            })
            .collect()
    };

    // Identical training recipe for the pointer-equipped model and its
    // copy-free twin: same seed, dimensions, learning rate, and step count.
    // The step count is fixed by training the pointer to convergence
    // (reproduction of all targets); the twin then gets exactly as many steps.
    let mut with_copy = Model::new(Variant::DeepCopy, 12, 16, vocab.size(), 1).unwrap();
    let steps = train_until_reproduction(&mut with_copy, &examples, 0.01, 3000, 50)
        .expect("the pointer-equipped model must converge on the copy task");
    let mut without_copy = Model::new(Variant::MultiSeq2Seq, 12, 16, vocab.size(), 1).unwrap();
    train_full_batch(&mut without_copy, &examples, 0.01, steps, None);

    let copy_out = decode_all(&with_copy);
    let plain_out = decode_all(&without_copy);
    let mut copy_scores = Vec::new();
    let mut plain_scores = Vec::new();
    for n in [2usize, 3, 4] {
        let c = distinct_n(&copy_out, n).unwrap();
        let p = distinct_n(&plain_out, n).unwrap();
        assert!(
            c > p,
            "distinct-{n}: copy-equipped {c} must exceed copy-free {p}"
        );
        copy_scores.push(format!("{c:.3}"));
        plain_scores.push(format!("{p:.3}"));
    }
    println!(
        "PASS 9/9 diversity direction: after matched {steps}-step training, distinct-2/3/4 \
         {} (with copy) > {} (twin without copy)",
        copy_scores.join("/"),
        plain_scores.join("/")
    );
}
