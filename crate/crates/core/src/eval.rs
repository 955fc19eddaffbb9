//! Decoding and evaluation: beam search with a finished-hypothesis pool and
//! length-normalized ranking, token-weighted perplexity, per-model metric
//! reports (CSV and pretty table), and generation/inspection records. A
//! bounded worker pool with positional result collection keeps everything
//! deterministic for a fixed configuration.

use serde::Serialize;

use crate::autodiff::LOG_EPS;
use crate::corpus::{detokenize, DialogueExample, Vocab, EOS, SOS};
use crate::error::{Error, Result};
use crate::metrics::{cider, corpus_bleu, distinct_n, rouge_l};
use crate::model::Model;

/// Map a slice of items with up to `jobs` worker threads, preserving input
/// order in the output. Results land in per-index slots, so the fold order
/// never depends on scheduling; errors surface at the lowest failing index.
pub fn parallel_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    let jobs = jobs.max(1).min(items.len().max(1));
    if jobs <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    let mut slots: Vec<Option<Result<R>>> = (0..items.len()).map(|_| None).collect();
    let f = &f;
    std::thread::scope(|scope| {
        for (out_chunk, in_chunk) in slots.chunks_mut(chunk).zip(items.chunks(chunk)) {
            scope.spawn(move || {
                for (slot, item) in out_chunk.iter_mut().zip(in_chunk.iter()) {
                    *slot = Some(f(item));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("worker filled every slot")).collect()
}

/// Outcome of a beam search: the best token sequence (extended ids included,
/// EOS stripped), its length-normalized log-probability, and whether any
/// hypothesis actually finished within the length budget.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamResult {
    pub tokens: Vec<u32>,
    pub score: f64,
    pub finished: bool,
}

struct Hyp {
    tokens: Vec<u32>,
    logp: f64,
    state: crate::model::DecoderState,
}

fn better(score_a: f64, tokens_a: &[u32], score_b: f64, tokens_b: &[u32]) -> std::cmp::Ordering {
    score_b
        .partial_cmp(&score_a)
        .unwrap_or(std::cmp::Ordering::Equal)
        .then_with(|| tokens_a.cmp(tokens_b))
}

/// Beam search over one example. Hypotheses reaching EOS retire to a
/// finished pool scored by log-probability divided by length (EOS included);
/// the best finished hypothesis wins, with exact ties broken toward the
/// lexicographically smaller token sequence. If nothing finishes within
/// `max_len` steps, the best unfinished hypothesis is returned flagged.
pub fn beam_search(
    model: &Model,
    ex: &DialogueExample,
    width: usize,
    max_len: usize,
) -> Result<BeamResult> {
    if width == 0 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    if max_len == 0 {
        return Err(Error::Config("maximum decode length must be at least 1".into()));
    }
    let mut session = model.decode_session(ex)?;
    let mut beam = vec![Hyp {
        tokens: Vec::new(),
        logp: 0.0,
        state: session.initial_state(),
    }];
    let mut finished: Vec<(f64, Vec<u32>)> = Vec::new();

    for _ in 0..max_len {
        // Expand every active hypothesis by every token; the new token is
        // already appended to `tokens` (possibly EOS) so ranking and
        // tie-breaking see the full sequence.
        let mut cands: Vec<Hyp> = Vec::new();
        for hyp in &beam {
            let prev = hyp.tokens.last().copied().unwrap_or(SOS);
            let (dists, next) = session.step(prev, &hyp.state)?;
            for (tok, &p) in dists.p_final.iter().enumerate() {
                let lp = hyp.logp + p.max(LOG_EPS).ln();
                let mut tokens = Vec::with_capacity(hyp.tokens.len() + 1);
                tokens.extend_from_slice(&hyp.tokens);
                tokens.push(tok as u32);
                cands.push(Hyp { tokens, logp: lp, state: next.clone() });
            }
        }
        // Keep the top `width` candidates; of those, EOS-enders retire to
        // the finished pool and the rest stay active.
        cands.sort_by(|a, b| better(a.logp, &a.tokens, b.logp, &b.tokens));
        cands.truncate(width);
        beam = Vec::new();
        for mut c in cands {
            if c.tokens.last() == Some(&EOS) {
                let len_with_eos = c.tokens.len() as f64;
                c.tokens.pop();
                finished.push((c.logp / len_with_eos, c.tokens));
            } else {
                beam.push(c);
            }
        }
        if beam.is_empty() {
            break;
        }
    }

    finished.sort_by(|a, b| better(a.0, &a.1, b.0, &b.1));
    if let Some((score, tokens)) = finished.into_iter().next() {
        return Ok(BeamResult { tokens, score, finished: true });
    }
    let mut rest: Vec<(f64, Vec<u32>)> = beam
        .into_iter()
        .map(|h| (h.logp / h.tokens.len() as f64, h.tokens))
        .collect();
    rest.sort_by(|a, b| better(a.0, &a.1, b.0, &b.1));
    let (score, tokens) = rest.into_iter().next().ok_or(Error::AllMasked)?;
    Ok(BeamResult { tokens, score, finished: false })
}

/// Surface strings for decoded ids, mapping extended ids back through the
/// example's own extension table.
pub fn surface_tokens(ex: &DialogueExample, vocab: &Vocab, ids: &[u32]) -> Vec<String> {
    ids.iter().map(|&id| ex.surface(id, vocab)).collect()
}

/// Token-weighted perplexity: exp of total teacher-forced negative
/// log-likelihood divided by the total target token count.
pub fn perplexity(model: &Model, examples: &[DialogueExample], jobs: usize) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset("perplexity evaluation"));
    }
    let per_example = parallel_map(examples, jobs, |ex| {
        let fp = model.forward(ex)?;
        Ok((fp.loss_value, fp.target_len))
    })?;
    let mut total_nll = 0.0;
    let mut total_tokens = 0usize;
    for (mean_nll, len) in per_example {
        total_nll += mean_nll * len as f64;
        total_tokens += len;
    }
    Ok((total_nll / total_tokens as f64).exp())
}

/// One model's row of the evaluation table.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub variant: String,
    pub oracle: bool,
    pub perplexity: f64,
    pub bleu: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub distinct_2: f64,
    pub distinct_3: f64,
    pub distinct_4: f64,
}

/// One decoded example for generation dumps.
#[derive(Debug, Clone, Serialize)]
pub struct GenRecord {
    pub context: String,
    pub facts: Vec<String>,
    pub reference: String,
    pub hypothesis: String,
    pub finished: bool,
}

/// Decode settings shared by evaluation and generation.
#[derive(Debug, Clone, Copy)]
pub struct DecodeConfig {
    pub width: usize,
    pub max_len: usize,
    pub jobs: usize,
}

/// Decode every example with beam search and return dump records plus the
/// surfaced candidate token lists (for metric computation).
pub fn generate_all(
    model: &Model,
    examples: &[DialogueExample],
    vocab: &Vocab,
    cfg: DecodeConfig,
) -> Result<(Vec<GenRecord>, Vec<Vec<String>>)> {
    let results = parallel_map(examples, cfg.jobs, |ex| {
        beam_search(model, ex, cfg.width, cfg.max_len)
    })?;
    let mut records = Vec::with_capacity(examples.len());
    let mut cands = Vec::with_capacity(examples.len());
    for (ex, res) in examples.iter().zip(results) {
        let tokens = surface_tokens(ex, vocab, &res.tokens);
        records.push(GenRecord {
            context: detokenize(&ex.context_tokens),
            facts: ex.fact_tokens.iter().map(|f| detokenize(f)).collect(),
            reference: detokenize(&ex.target_tokens),
            hypothesis: detokenize(&tokens),
            finished: res.finished,
        });
        cands.push(tokens);
    }
    Ok((records, cands))
}

/// Full evaluation of one model over a split: perplexity plus decode-based
/// metrics against the references.
pub fn evaluate_model(
    model: &Model,
    examples: &[DialogueExample],
    vocab: &Vocab,
    cfg: DecodeConfig,
) -> Result<(MetricReport, Vec<GenRecord>)> {
    let ppl = perplexity(model, examples, cfg.jobs)?;
    let (records, cands) = generate_all(model, examples, vocab, cfg)?;
    let refs: Vec<Vec<String>> = examples.iter().map(|e| e.target_tokens.clone()).collect();
    let report = MetricReport {
        variant: model.variant.label().to_string(),
        oracle: model.variant.is_oracle(),
        perplexity: ppl,
        bleu: corpus_bleu(&cands, &refs)?,
        rouge_l: rouge_l(&cands, &refs)?,
        cider: cider(&cands, &refs)?,
        distinct_2: distinct_n(&cands, 2)?,
        distinct_3: distinct_n(&cands, 3)?,
        distinct_4: distinct_n(&cands, 4)?,
    };
    Ok((report, records))
}

/// CSV rendering of metric rows; column order mirrors the reporting tables
/// (perplexity, overlap metrics, diversity metrics), plus the oracle flag.
pub fn report_csv(reports: &[MetricReport]) -> String {
    let mut out = String::from(
        "variant,perplexity,bleu,rouge_l,cider,distinct_2,distinct_3,distinct_4,oracle\n",
    );
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.variant,
            r.perplexity,
            r.bleu,
            r.rouge_l,
            r.cider,
            r.distinct_2,
            r.distinct_3,
            r.distinct_4,
            r.oracle
        ));
    }
    out
}

/// Human-readable table of metric rows. Oracle variants are marked; the
/// CIDEr idf convention is stated so single-reference scores are
/// interpretable.
pub fn report_table(reports: &[MetricReport]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<10} {:>10} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
        "variant", "ppl", "bleu", "rouge-l", "cider", "dist-2", "dist-3", "dist-4"
    ));
    for r in reports {
        let name = if r.oracle {
            format!("{}*", r.variant)
        } else {
            r.variant.clone()
        };
        out.push_str(&format!(
            "{:<10} {:>10.2} {:>8.2} {:>8.2} {:>8.2} {:>8.4} {:>8.4} {:>8.4}\n",
            name, r.perplexity, r.bleu, r.rouge_l, r.cider, r.distinct_2, r.distinct_3, r.distinct_4
        ));
    }
    if reports.iter().any(|r| r.oracle) {
        out.push_str("* oracle variant: fact selected against the reference response\n");
    }
    out.push_str(
        "CIDEr idf: ln(corpus size) - ln(doc frequency), df clamped to 1, no additive smoothing.\n",
    );
    out
}

/// Per-step switch/attention values for one decoded example.
#[derive(Debug, Clone, Serialize)]
pub struct InspectStep {
    pub token: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_gen: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
}

/// Generation dump of one example plus the per-step switch and attention
/// values along the winning hypothesis (replayed step by step).
#[derive(Debug, Clone, Serialize)]
pub struct InspectRecord {
    pub index: usize,
    pub context: String,
    pub facts: Vec<String>,
    pub reference: String,
    pub hypothesis: String,
    pub finished: bool,
    pub steps: Vec<InspectStep>,
}

/// Decode one example and replay the chosen hypothesis to capture each
/// step's switch probability and attention weights.
pub fn inspect_example(
    model: &Model,
    ex: &DialogueExample,
    vocab: &Vocab,
    index: usize,
    width: usize,
    max_len: usize,
) -> Result<InspectRecord> {
    let res = beam_search(model, ex, width, max_len)?;
    let mut session = model.decode_session(ex)?;
    let mut state = session.initial_state();
    let mut steps = Vec::with_capacity(res.tokens.len());
    let mut emitted = res.tokens.clone();
    if res.finished {
        emitted.push(EOS);
    }
    for (t, &tok) in emitted.iter().enumerate() {
        let prev = if t == 0 { SOS } else { emitted[t - 1] };
        let (dists, next) = session.step(prev, &state)?;
        steps.push(InspectStep {
            token: ex.surface(tok, vocab),
            p_gen: dists.p_gen,
            gamma: dists.gamma,
            beta: dists.beta,
        });
        state = next;
    }
    let tokens = surface_tokens(ex, vocab, &res.tokens);
    Ok(InspectRecord {
        index,
        context: detokenize(&ex.context_tokens),
        facts: ex.fact_tokens.iter().map(|f| detokenize(f)).collect(),
        reference: detokenize(&ex.target_tokens),
        hypothesis: detokenize(&tokens),
        finished: res.finished,
        steps,
    })
}
