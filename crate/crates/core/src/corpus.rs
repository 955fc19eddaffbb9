//! Corpus handling: parsing persona-dialogue text files, tokenization, the
//! shared vocabulary, per-example extended copy vocabularies, and tf-idf
//! fact selection.
//!
//! The input format is plain UTF-8 text. Each dialogue is a block of lines
//! numbered from 1:
//!
//! ```text
//! 1 your persona: i like to ski.
//! 2 your persona: my favorite color is red.
//! 3 hi how are you ?<TAB>i am great . i just got back from skiing .
//! ```
//!
//! Persona lines carry one fact each; turn lines carry an utterance and the
//! reply separated by a tab, optionally followed by a double tab and a
//! `|`-separated candidate list (parsed and discarded — this crate only does
//! generation, not retrieval). A line numbered 1 starts a new dialogue.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// ---- reserved vocabulary entries ------------------------------------------

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const SOS: u32 = 2;
pub const EOS: u32 = 3;
pub const CONCAT: u32 = 4;

/// Reserved token surfaces, in id order.
pub const RESERVED_TOKENS: [&str; 5] = ["<pad>", "<unk>", "<sos>", "<eos>", "<concat>"];

/// Default cap on the number of non-reserved vocabulary entries.
pub const DEFAULT_VOCAB_SIZE: usize = 18650;

// ---- tokenization ---------------------------------------------------------

const TRAILING_PUNCT: &[char] = &['.', '!', '?', ',', ';'];

/// Split on whitespace, then peel trailing punctuation characters off each
/// piece into their own tokens, so `"i like to ski."` becomes
/// `["i", "like", "to", "ski", "."]`. Text that is already tokenized (spaces
/// around punctuation) passes through unchanged.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for piece in text.split_whitespace() {
        let mut head = piece;
        let mut tail = Vec::new();
        while head.chars().count() > 1 {
            match head.chars().last() {
                Some(c) if TRAILING_PUNCT.contains(&c) => {
                    tail.push(c.to_string());
                    head = &head[..head.len() - c.len_utf8()];
                }
                _ => break,
            }
        }
        out.push(head.to_string());
        out.extend(tail.into_iter().rev());
    }
    out
}

/// Inverse of [`tokenize`] for already-tokenized text: join with spaces.
pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}

// ---- dialogue parsing -----------------------------------------------------

/// One dialogue: the responding speaker's persona facts plus ordered
/// (utterance, reply) turn pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dialogue {
    pub personas: Vec<String>,
    pub turns: Vec<(String, String)>,
}

/// Parse a dialogue file. An empty file yields an empty list.
pub fn parse_dialogues(path: &Path) -> Result<Vec<Dialogue>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dialogues_text(&text)
}

/// Parse dialogue text. See the module docs for the line format.
pub fn parse_dialogues_text(text: &str) -> Result<Vec<Dialogue>> {
    let mut dialogues: Vec<Dialogue> = Vec::new();
    let mut prev_num = 0usize;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let malformed = |msg: &str| Error::Parse { line: line_no, msg: msg.to_string() };
        let (num_str, rest) = line
            .split_once(' ')
            .ok_or_else(|| malformed("expected `<number> <content>`"))?;
        let num: usize = num_str
            .parse()
            .map_err(|_| malformed("line must start with a number"))?;
        if num == 1 {
            dialogues.push(Dialogue::default());
        } else if dialogues.is_empty() || num != prev_num + 1 {
            return Err(malformed(&format!(
                "line number {num} breaks the sequence (expected {})",
                prev_num + 1
            )));
        }
        prev_num = num;
        let dialogue = dialogues.last_mut().unwrap();

        if let Some(fact) = rest.strip_prefix("your persona: ") {
            dialogue.personas.push(fact.to_string());
        } else if rest.strip_prefix("partner's persona: ").is_some() {
            // The other speaker's persona is concealed from the model; accept
            // the line but keep nothing.
        } else {
            let fields: Vec<&str> = rest.split('\t').collect();
            match fields.as_slice() {
                [utt, reply] => dialogue.turns.push((utt.to_string(), reply.to_string())),
                // Double tab before a |-separated candidate list; candidates
                // are irrelevant to generation.
                [utt, reply, empty, _cands] if empty.is_empty() => {
                    dialogue.turns.push((utt.to_string(), reply.to_string()))
                }
                _ => return Err(malformed("expected `utterance<TAB>reply`")),
            }
        }
    }
    Ok(dialogues)
}

// ---- vocabulary -----------------------------------------------------------

/// Token/id bijection with five reserved entries at ids 0..5.
#[derive(Debug, Clone)]
pub struct Vocab {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Vocab {
    /// Build from the most frequent tokens of the dialogues (personas and
    /// both turn sides), keeping at most `max_size` non-reserved entries.
    /// Frequency ties break by first appearance in file order.
    pub fn build(dialogues: &[Dialogue], max_size: usize) -> Result<Vocab> {
        if max_size < 1 {
            return Err(Error::Config("vocabulary max_size must be at least 1".into()));
        }
        let mut counts: HashMap<String, (usize, usize)> = HashMap::new(); // token -> (count, first seen)
        let mut seen = 0usize;
        let mut note = |tok: String, seen: &mut usize| {
            let entry = counts.entry(tok).or_insert((0, *seen));
            entry.0 += 1;
            *seen += 1;
        };
        for d in dialogues {
            for p in &d.personas {
                for t in tokenize(p) {
                    note(t, &mut seen);
                }
            }
            for (u, r) in &d.turns {
                for t in tokenize(u) {
                    note(t, &mut seen);
                }
                for t in tokenize(r) {
                    note(t, &mut seen);
                }
            }
        }
        let mut ranked: Vec<(String, (usize, usize))> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
        ranked.truncate(max_size);
        Vocab::from_tokens(ranked.into_iter().map(|(t, _)| t))
    }

    /// Assemble from non-reserved tokens in id order; the reserved entries
    /// are prepended automatically.
    pub fn from_tokens(tokens: impl Iterator<Item = String>) -> Result<Vocab> {
        let mut v = Vocab {
            token_to_id: HashMap::new(),
            id_to_token: RESERVED_TOKENS.iter().map(|s| s.to_string()).collect(),
        };
        for (i, t) in v.id_to_token.iter().enumerate() {
            v.token_to_id.insert(t.clone(), i as u32);
        }
        for t in tokens {
            if v.token_to_id.contains_key(&t) {
                return Err(Error::Corrupt(format!("duplicate vocabulary token `{t}`")));
            }
            v.token_to_id.insert(t.clone(), v.id_to_token.len() as u32);
            v.id_to_token.push(t);
        }
        Ok(v)
    }

    /// Read a vocabulary file written by [`Vocab::write`]: one token per
    /// line, reserved entries first.
    pub fn read(path: &Path) -> Result<Vocab> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < RESERVED_TOKENS.len()
            || lines[..RESERVED_TOKENS.len()] != RESERVED_TOKENS[..]
        {
            return Err(Error::Corrupt(format!(
                "vocabulary file {} does not start with the reserved tokens",
                path.display()
            )));
        }
        Vocab::from_tokens(lines[RESERVED_TOKENS.len()..].iter().map(|s| s.to_string()))
    }

    /// Write one token per line in id order.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = self.id_to_token.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Total entries including the reserved ones.
    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    /// Id for the token, or UNK when out of vocabulary.
    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(|s| s.as_str())
    }

    /// All tokens in id order.
    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }
}

// ---- tf-idf fact selection ------------------------------------------------

/// Unigram document frequencies over the persona facts of the training
/// split; each fact counts as one document.
#[derive(Debug, Clone)]
pub struct TfIdfModel {
    df: HashMap<String, usize>,
    pub n_docs: usize,
}

impl TfIdfModel {
    pub fn build(dialogues: &[Dialogue]) -> TfIdfModel {
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut n_docs = 0;
        for d in dialogues {
            for p in &d.personas {
                n_docs += 1;
                let mut uniq: Vec<String> = tokenize(p);
                uniq.sort();
                uniq.dedup();
                for t in uniq {
                    *df.entry(t).or_insert(0) += 1;
                }
            }
        }
        TfIdfModel { df, n_docs }
    }

    /// Smoothed inverse document frequency; always positive, and equal to
    /// `ln(N + 1) + 1` for tokens never seen in any fact.
    pub fn idf(&self, token: &str) -> f64 {
        let df = self.df.get(token).copied().unwrap_or(0);
        ((self.n_docs as f64 + 1.0) / (df as f64 + 1.0)).ln() + 1.0
    }

    fn vector<'a>(&self, tokens: &'a [String]) -> HashMap<&'a str, f64> {
        let mut tf: HashMap<&str, f64> = HashMap::new();
        for t in tokens {
            *tf.entry(t.as_str()).or_insert(0.0) += 1.0;
        }
        for (t, v) in tf.iter_mut() {
            *v *= self.idf(t);
        }
        tf
    }

    /// Index of the fact whose tf-idf unigram vector has the highest cosine
    /// similarity with the reference. Ties go to the lowest index. An empty
    /// reference returns index 0 with the warning flag set.
    pub fn select_fact(&self, facts: &[Vec<String>], reference: &[String]) -> (usize, bool) {
        if reference.is_empty() {
            return (0, true);
        }
        let ref_vec = self.vector(reference);
        let mut best = 0;
        let mut best_sim = f64::NEG_INFINITY;
        for (i, fact) in facts.iter().enumerate() {
            let sim = cosine(&self.vector(fact), &ref_vec);
            if sim > best_sim {
                best = i;
                best_sim = sim;
            }
        }
        (best, false)
    }
}

fn cosine(a: &HashMap<&str, f64>, b: &HashMap<&str, f64>) -> f64 {
    let dot: f64 = a
        .iter()
        .map(|(k, v)| v * b.get(k).copied().unwrap_or(0.0))
        .sum();
    let na: f64 = a.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

// ---- examples -------------------------------------------------------------

/// One training/evaluation example: a context (the last two utterances
/// joined by the CONCAT token), the K persona facts, and the reply.
///
/// Ids below the vocabulary size are ordinary vocabulary ids. Context or
/// fact tokens outside the vocabulary get per-example extended ids starting
/// at `vocab.size()`, assigned in first-occurrence order scanning the
/// context and then facts 1..K. `target` uses extended ids where available
/// (models without a copy path collapse them to UNK at loss time) and is
/// terminated by EOS; `target_tokens` holds the surface form without EOS.
#[derive(Debug, Clone, PartialEq)]
pub struct DialogueExample {
    pub context: Vec<u32>,
    pub facts: Vec<Vec<u32>>,
    pub target: Vec<u32>,
    /// Surface token and extended id, in assignment order.
    pub ext_vocab: Vec<(String, u32)>,
    pub best_fact_by_context: usize,
    pub best_fact_by_response: usize,
    pub context_tokens: Vec<String>,
    pub fact_tokens: Vec<Vec<String>>,
    pub target_tokens: Vec<String>,
}

impl DialogueExample {
    pub fn ext_id(&self, token: &str) -> Option<u32> {
        self.ext_vocab
            .iter()
            .find(|(t, _)| t == token)
            .map(|&(_, id)| id)
    }

    /// Size of the extended distribution support: vocabulary + extensions.
    pub fn ext_size(&self, vocab: &Vocab) -> usize {
        vocab.size() + self.ext_vocab.len()
    }

    /// Surface string for a base or extended id.
    pub fn surface(&self, id: u32, vocab: &Vocab) -> String {
        if let Some(t) = vocab.token(id) {
            return t.to_string();
        }
        let off = id as usize - vocab.size();
        self.ext_vocab
            .get(off)
            .map(|(t, _)| t.clone())
            .unwrap_or_else(|| RESERVED_TOKENS[UNK as usize].to_string())
    }
}

/// Build one example per reply of the dialogue. The context for the first
/// reply is the opening utterance alone; afterwards it is the previous reply
/// and the current utterance joined by CONCAT.
pub fn make_examples(
    dialogue: &Dialogue,
    vocab: &Vocab,
    tfidf: &TfIdfModel,
) -> Result<Vec<DialogueExample>> {
    if dialogue.personas.is_empty() && !dialogue.turns.is_empty() {
        return Err(Error::EmptySequence("dialogue has no persona facts"));
    }
    let fact_tokens: Vec<Vec<String>> = dialogue.personas.iter().map(|p| tokenize(p)).collect();
    let mut out = Vec::new();
    for (t, (utt, reply)) in dialogue.turns.iter().enumerate() {
        let mut context_tokens = Vec::new();
        if t > 0 {
            context_tokens.extend(tokenize(&dialogue.turns[t - 1].1));
            context_tokens.push(RESERVED_TOKENS[CONCAT as usize].to_string());
        }
        context_tokens.extend(tokenize(utt));
        let target_tokens = tokenize(reply);
        let (best_fact_by_context, _) = tfidf.select_fact(&fact_tokens, &context_tokens);
        let (best_fact_by_response, _) = tfidf.select_fact(&fact_tokens, &target_tokens);
        out.push(assemble_example(
            context_tokens,
            fact_tokens.clone(),
            target_tokens,
            best_fact_by_context,
            best_fact_by_response,
            vocab,
        ));
    }
    Ok(out)
}

/// Map surface tokens to ids, assigning dense extended ids to
/// out-of-vocabulary context/fact tokens in first-occurrence order.
fn assemble_example(
    context_tokens: Vec<String>,
    fact_tokens: Vec<Vec<String>>,
    target_tokens: Vec<String>,
    best_fact_by_context: usize,
    best_fact_by_response: usize,
    vocab: &Vocab,
) -> DialogueExample {
    let mut ext_vocab: Vec<(String, u32)> = Vec::new();
    let resolve = |tok: &str, ext_vocab: &mut Vec<(String, u32)>| -> u32 {
        if let Some(id) = vocab.id(tok) {
            return id;
        }
        if let Some(&(_, id)) = ext_vocab.iter().find(|(t, _)| t == tok) {
            return id;
        }
        let id = (vocab.size() + ext_vocab.len()) as u32;
        ext_vocab.push((tok.to_string(), id));
        id
    };
    let context: Vec<u32> = context_tokens
        .iter()
        .map(|t| resolve(t, &mut ext_vocab))
        .collect();
    let facts: Vec<Vec<u32>> = fact_tokens
        .iter()
        .map(|f| f.iter().map(|t| resolve(t, &mut ext_vocab)).collect())
        .collect();
    let mut target: Vec<u32> = target_tokens
        .iter()
        .map(|t| {
            vocab.id(t).unwrap_or_else(|| {
                ext_vocab
                    .iter()
                    .find(|(s, _)| s == t)
                    .map(|&(_, id)| id)
                    .unwrap_or(UNK)
            })
        })
        .collect();
    target.push(EOS);
    DialogueExample {
        context,
        facts,
        target,
        ext_vocab,
        best_fact_by_context,
        best_fact_by_response,
        context_tokens,
        fact_tokens,
        target_tokens,
    }
}

/// Build a decode-time example from raw text: one context utterance plus the
/// persona facts, with an empty reference. Fact-selection statistics are
/// computed from the given facts alone, so the result is self-contained; a
/// reference-selected fact is unavailable and falls back to the
/// context-selected one.
pub fn example_for_decoding(
    context_text: &str,
    fact_texts: &[String],
    vocab: &Vocab,
) -> Result<DialogueExample> {
    if fact_texts.is_empty() {
        return Err(Error::EmptySequence("dialogue has no persona facts"));
    }
    let context_tokens = tokenize(context_text);
    if context_tokens.is_empty() {
        return Err(Error::EmptySequence("decode context"));
    }
    let fact_tokens: Vec<Vec<String>> = fact_texts.iter().map(|f| tokenize(f)).collect();
    if fact_tokens.iter().any(|f| f.is_empty()) {
        return Err(Error::EmptySequence("persona fact"));
    }
    let dialogue = Dialogue {
        personas: fact_texts.to_vec(),
        turns: Vec::new(),
    };
    let tfidf = TfIdfModel::build(std::slice::from_ref(&dialogue));
    let (best, _) = tfidf.select_fact(&fact_tokens, &context_tokens);
    Ok(assemble_example(
        context_tokens,
        fact_tokens,
        Vec::new(),
        best,
        best,
        vocab,
    ))
}

// ---- JSONL import/export --------------------------------------------------

/// Serialized form of one example: surface tokens plus the fields that
/// cannot be recomputed without the tf-idf model.
#[derive(Debug, Serialize, Deserialize)]
struct ExampleRecord {
    context: Vec<String>,
    facts: Vec<Vec<String>>,
    target: Vec<String>,
    ext_vocab: Vec<(String, u32)>,
    best_fact_by_context: usize,
    best_fact_by_response: usize,
}

/// Write one JSON object per line.
pub fn write_examples_jsonl(path: &Path, examples: &[DialogueExample]) -> Result<()> {
    let mut out = String::new();
    for ex in examples {
        let rec = ExampleRecord {
            context: ex.context_tokens.clone(),
            facts: ex.fact_tokens.clone(),
            target: ex.target_tokens.clone(),
            ext_vocab: ex.ext_vocab.clone(),
            best_fact_by_context: ex.best_fact_by_context,
            best_fact_by_response: ex.best_fact_by_response,
        };
        out.push_str(&serde_json::to_string(&rec).expect("example serialization cannot fail"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read examples written by [`write_examples_jsonl`], reconstructing ids
/// (including extended ids) against the given vocabulary.
pub fn read_examples_jsonl(path: &Path, vocab: &Vocab) -> Result<Vec<DialogueExample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let rec: ExampleRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: format!("bad example record: {e}"),
        })?;
        out.push(assemble_example(
            rec.context,
            rec.facts,
            rec.target,
            rec.best_fact_by_context,
            rec.best_fact_by_response,
            vocab,
        ));
    }
    Ok(out)
}
