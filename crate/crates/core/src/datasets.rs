//! Instance types, tokenization, canonical JSONL and Dong-triplet I/O,
//! stratified splits, and a synthetic corpus with a known labeling rule.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::models::TargetSpan;
use crate::numerics::Label;

/// Whole-passage labeled instance (auxiliary task).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScInstance {
    pub tokens: Vec<String>,
    pub label: Label,
}

/// Passage with a 1-based inclusive target span (main task).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetedInstance {
    pub tokens: Vec<String>,
    pub target_start: usize,
    pub target_end: usize,
    pub label: Label,
}

impl TargetedInstance {
    pub fn span(&self) -> TargetSpan {
        TargetSpan {
            start: self.target_start,
            end: self.target_end,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.span().check(self.tokens.len())
    }
}

impl ScInstance {
    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Input("passage has no tokens".into()));
        }
        Ok(())
    }
}

pub trait Labeled {
    fn label(&self) -> Label;
}

impl Labeled for ScInstance {
    fn label(&self) -> Label {
        self.label
    }
}

impl Labeled for TargetedInstance {
    fn label(&self) -> Label {
        self.label
    }
}

/// Either kind of dataset.
#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    Targeted(Vec<TargetedInstance>),
    Passages(Vec<ScInstance>),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Targeted(v) => v.len(),
            Dataset::Passages(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn split_punct(chunk: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = chunk.chars().collect();
    let is_punct = |c: char| c.is_ascii_punctuation() && c != '_';
    let mut start = 0;
    while start < chars.len()
        && is_punct(chars[start])
        && chars[start] != '#'
        && chars[start] != '@'
    {
        start += 1;
    }
    let mut end = chars.len();
    while end > start && is_punct(chars[end - 1]) {
        end -= 1;
    }
    // a bare "#" or "@" is punctuation like any other
    if end == start + 1 && (chars[start] == '#' || chars[start] == '@') {
        end = start;
    }
    out.extend(chars[..start].iter().map(|c| c.to_string()));
    if end > start {
        out.push(chars[start..end].iter().collect());
    }
    out.extend(chars[end.max(start)..].iter().map(|c| c.to_string()));
}

/// Lowercase, split on whitespace, and peel leading/trailing punctuation
/// into single-character tokens. `#tags` and `@mentions` stay whole.
pub fn tokenize(raw: &str) -> Vec<String> {
    let lower = raw.to_lowercase();
    let mut out = Vec::new();
    for chunk in lower.split_whitespace() {
        split_punct(chunk, &mut out);
    }
    out
}

#[derive(Deserialize)]
struct RawTargeted {
    tokens: Vec<String>,
    target_start: usize,
    target_end: usize,
    label: i64,
}

#[derive(Deserialize)]
struct RawPassage {
    tokens: Vec<String>,
    label: i64,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn jsonl_lines<R: BufRead, T, F>(stream: R, mut parse: F) -> Result<Vec<T>>
where
    F: FnMut(usize, &str) -> Result<T>,
{
    let mut out = Vec::new();
    for (i, line) in stream.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse(i + 1, &line)?);
    }
    Ok(out)
}

pub fn import_tdsc_jsonl<R: BufRead>(stream: R) -> Result<Vec<TargetedInstance>> {
    jsonl_lines(stream, |lineno, line| {
        let raw: RawTargeted = serde_json::from_str(line)
            .map_err(|e| parse_err(lineno, format!("malformed JSON: {e}")))?;
        let label = Label::from_value(raw.label).map_err(|e| parse_err(lineno, e.to_string()))?;
        let inst = TargetedInstance {
            tokens: raw.tokens,
            target_start: raw.target_start,
            target_end: raw.target_end,
            label,
        };
        inst.validate()
            .map_err(|e| parse_err(lineno, e.to_string()))?;
        Ok(inst)
    })
}

pub fn import_sc_jsonl<R: BufRead>(stream: R) -> Result<Vec<ScInstance>> {
    jsonl_lines(stream, |lineno, line| {
        let raw: RawPassage = serde_json::from_str(line)
            .map_err(|e| parse_err(lineno, format!("malformed JSON: {e}")))?;
        let label = Label::from_value(raw.label).map_err(|e| parse_err(lineno, e.to_string()))?;
        let inst = ScInstance {
            tokens: raw.tokens,
            label,
        };
        inst.validate()
            .map_err(|e| parse_err(lineno, e.to_string()))?;
        Ok(inst)
    })
}

/// One JSON object per line, keys in declaration order.
pub fn export_jsonl<T: Serialize, W: Write>(items: &[T], mut out: W) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

const PLACEHOLDER: &str = "$T$";
const SENTINEL: &str = "\u{e000}";

/// Three-line records: template containing `$T$`, target phrase, label.
///
/// The target phrase is tokenized and fused with `_` into one token.
pub fn import_dong_triplets<R: BufRead>(stream: R) -> Result<Vec<TargetedInstance>> {
    let mut lines = Vec::new();
    for line in stream.lines() {
        lines.push(line?);
    }
    while lines.last().is_some_and(|l| l.trim().is_empty()) {
        lines.pop();
    }
    let mut out = Vec::new();
    for (rec, chunk) in lines.chunks(3).enumerate() {
        let first_line = rec * 3 + 1;
        let err = |msg: String| parse_err(first_line, format!("record {}: {msg}", rec + 1));
        if chunk.len() < 3 {
            return Err(err("truncated record".into()));
        }
        let (template, target, label) = (&chunk[0], &chunk[1], chunk[2].trim());
        if !template.contains(PLACEHOLDER) {
            return Err(err(format!("template has no {PLACEHOLDER} placeholder")));
        }
        let label: i64 = label
            .parse()
            .map_err(|_| err(format!("label `{label}` is not an integer")))?;
        let label = Label::from_value(label).map_err(|e| err(e.to_string()))?;
        let fused = tokenize(target).join("_");
        if fused.is_empty() {
            return Err(err("empty target".into()));
        }
        let spaced = template.replace(PLACEHOLDER, &format!(" {SENTINEL} "));
        let mut tokens = tokenize(&spaced);
        let mut position = None;
        for (i, t) in tokens.iter_mut().enumerate() {
            if t == SENTINEL {
                position.get_or_insert(i + 1);
                *t = fused.clone();
            }
        }
        let position =
            position.ok_or_else(|| err("placeholder lost during tokenization".into()))?;
        out.push(TargetedInstance {
            tokens,
            target_start: position,
            target_end: position,
            label,
        });
    }
    Ok(out)
}

/// Train / validation / test partition.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
}

/// Per-class proportional split. Within each part, instances keep their input order.
pub fn stratified_split<T: Labeled + Clone>(
    items: &[T],
    fractions: [f64; 3],
    seed: u64,
) -> Result<DatasetSplit<T>> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f))
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::Input(format!(
            "split fractions {fractions:?} must be in [0,1] and sum to 1"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; items.len()];
    for class in Label::ALL {
        let mut idx: Vec<usize> = (0..items.len())
            .filter(|&i| items[i].label() == class)
            .collect();
        let n = idx.len();
        idx.shuffle(&mut rng);
        let n_train = ((n as f64) * fractions[0]).round() as usize;
        let n_val = (((n as f64) * fractions[1]).round() as usize).min(n - n_train);
        let counts = [n_train, n_val, n - n_train - n_val];
        for (part, (&count, &frac)) in counts.iter().zip(&fractions).enumerate() {
            if count == 0 && frac > 0.0 && n > 0 {
                log::warn!("class {class} has no instances in split part {part}");
            }
        }
        for (k, &i) in idx.iter().enumerate() {
            assignment[i] = if k < n_train {
                0
            } else if k < n_train + n_val {
                1
            } else {
                2
            };
        }
    }
    let mut split = DatasetSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for (item, part) in items.iter().zip(assignment) {
        match part {
            0 => split.train.push(item.clone()),
            1 => split.validation.push(item.clone()),
            _ => split.test.push(item.clone()),
        }
    }
    log::info!(
        "split sizes: train {}, validation {}, test {}",
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    Ok(split)
}

// ---------------------------------------------------------------------------
// synthetic corpus
// ---------------------------------------------------------------------------

/// Shape of a synthetic corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocabSpec {
    pub n_positive: usize,
    pub n_negative: usize,
    pub n_neutral: usize,
    pub n_entities: usize,
    pub dim: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a free slot holds a polar word.
    pub polar_rate: f64,
    /// Class mix (neg, neu, pos) of the targeted set.
    pub main_mix: [f64; 3],
    /// Class mix (neg, neu, pos) of the passage set.
    pub aux_mix: [f64; 3],
}

impl Default for VocabSpec {
    fn default() -> Self {
        VocabSpec {
            n_positive: 3,
            n_negative: 3,
            n_neutral: 6,
            n_entities: 4,
            dim: 16,
            min_len: 4,
            max_len: 10,
            polar_rate: 0.25,
            main_mix: [1.0 / 3.0; 3],
            aux_mix: [0.4, 0.2, 0.4],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WordKind {
    Polar(Label),
    Neutral,
    Entity,
}

/// The synthetic lexicon: every generated word and its role.
#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon {
    pub words: Vec<(String, WordKind)>,
    index: HashMap<String, WordKind>,
}

impl Lexicon {
    fn new(spec: &VocabSpec) -> Self {
        let mut words = Vec::new();
        let groups = [
            ("pos", spec.n_positive, WordKind::Polar(Label::Positive)),
            ("neg", spec.n_negative, WordKind::Polar(Label::Negative)),
            ("neu", spec.n_neutral, WordKind::Neutral),
            ("ent", spec.n_entities, WordKind::Entity),
        ];
        for (prefix, n, kind) in groups {
            for i in 0..n {
                words.push((format!("{prefix}{i}"), kind));
            }
        }
        let index = words.iter().cloned().collect();
        Lexicon { words, index }
    }

    pub fn kind(&self, token: &str) -> Option<WordKind> {
        self.index.get(token).copied()
    }

    pub fn polarity(&self, token: &str) -> Option<Label> {
        match self.kind(token) {
            Some(WordKind::Polar(l)) => Some(l),
            _ => None,
        }
    }

    fn of_kind(&self, pred: impl Fn(WordKind) -> bool) -> Vec<&str> {
        self.words
            .iter()
            .filter(|(_, k)| pred(*k))
            .map(|(w, _)| w.as_str())
            .collect()
    }
}

/// Output of [`synth_corpus`].
#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub main: Vec<TargetedInstance>,
    pub aux: Vec<ScInstance>,
    pub embeddings: EmbeddingTable,
    pub lexicon: Lexicon,
}

/// Label of a targeted instance under the synthetic rule: polarity of the
/// nearest polar word left of the target, neutral if there is none.
pub fn synth_targeted_label(lexicon: &Lexicon, tokens: &[String], target_start: usize) -> Label {
    tokens[..target_start - 1]
        .iter()
        .rev()
        .find_map(|t| lexicon.polarity(t))
        .unwrap_or(Label::Neutral)
}

/// Label of a passage under the synthetic rule: sign of (#positive − #negative).
pub fn synth_passage_label(lexicon: &Lexicon, tokens: &[String]) -> Label {
    let score: i64 = tokens
        .iter()
        .filter_map(|t| lexicon.polarity(t))
        .map(|l| l.value())
        .sum();
    Label::from_value(score.signum()).expect("signum is a label")
}

fn pick_label(mix: &[f64; 3], rng: &mut impl Rng) -> Label {
    let total: f64 = mix.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (k, &m) in mix.iter().enumerate() {
        if u < m {
            return Label::from_index(k).expect("index < 3");
        }
        u -= m;
    }
    Label::Positive
}

fn random_embeddings(lexicon: &Lexicon, dim: usize, rng: &mut impl Rng) -> Result<EmbeddingTable> {
    let v = lexicon.words.len();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(v);
    for _ in 0..v {
        let mut row: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if v <= dim {
            // Gram-Schmidt against earlier rows
            for prev in &rows {
                let dot: f64 = row.iter().zip(prev).map(|(a, b)| a * b).sum();
                row.iter_mut().zip(prev).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        row.iter_mut().for_each(|x| *x /= norm);
        rows.push(row);
    }
    EmbeddingTable::from_rows(dim, lexicon.words.iter().map(|(w, _)| w.clone()).zip(rows))
}

/// Deterministic synthetic corpus with known labeling rules.
pub fn synth_corpus(
    seed: u64,
    n_main: usize,
    n_aux: usize,
    spec: &VocabSpec,
) -> Result<SynthCorpus> {
    if n_main == 0 || n_aux == 0 {
        return Err(Error::Input(
            "synthetic corpus sizes must be at least 1".into(),
        ));
    }
    if spec.n_positive == 0 || spec.n_negative == 0 || spec.n_neutral == 0 || spec.n_entities == 0 {
        return Err(Error::Config(
            "synthetic vocabulary needs every word group".into(),
        ));
    }
    if spec.min_len < 4 || spec.max_len < spec.min_len {
        return Err(Error::Config(
            "synthetic lengths need 4 <= min_len <= max_len".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lexicon = Lexicon::new(spec);
    let embeddings = random_embeddings(&lexicon, spec.dim, &mut rng)?;
    let positive = lexicon.of_kind(|k| k == WordKind::Polar(Label::Positive));
    let negative = lexicon.of_kind(|k| k == WordKind::Polar(Label::Negative));
    let neutral = lexicon.of_kind(|k| k == WordKind::Neutral);
    let entities = lexicon.of_kind(|k| k == WordKind::Entity);
    let polar_of = |l: Label| {
        if l == Label::Positive {
            &positive
        } else {
            &negative
        }
    };

    let any_word = |rng: &mut ChaCha8Rng| -> String {
        if rng.gen::<f64>() < spec.polar_rate {
            let l = if rng.gen::<bool>() {
                Label::Positive
            } else {
                Label::Negative
            };
            polar_of(l).choose(rng).unwrap().to_string()
        } else {
            neutral.choose(rng).unwrap().to_string()
        }
    };

    let mut main = Vec::with_capacity(n_main);
    for _ in 0..n_main {
        let label = pick_label(&spec.main_mix, &mut rng);
        let n = rng.gen_range(spec.min_len..=spec.max_len);
        let target = if label == Label::Neutral {
            rng.gen_range(1..=n)
        } else {
            rng.gen_range(2..=n)
        };
        let mut tokens = vec![String::new(); n];
        if label == Label::Neutral {
            for t in &mut tokens[..target - 1] {
                *t = neutral.choose(&mut rng).unwrap().to_string();
            }
        } else {
            let polar_pos = rng.gen_range(1..target);
            for t in &mut tokens[..polar_pos - 1] {
                *t = any_word(&mut rng);
            }
            tokens[polar_pos - 1] = polar_of(label).choose(&mut rng).unwrap().to_string();
            for t in &mut tokens[polar_pos..target - 1] {
                *t = neutral.choose(&mut rng).unwrap().to_string();
            }
        }
        tokens[target - 1] = entities.choose(&mut rng).unwrap().to_string();
        for t in &mut tokens[target..] {
            *t = any_word(&mut rng);
        }
        main.push(TargetedInstance {
            tokens,
            target_start: target,
            target_end: target,
            label,
        });
    }

    let mut aux = Vec::with_capacity(n_aux);
    for _ in 0..n_aux {
        let label = pick_label(&spec.aux_mix, &mut rng);
        let n = rng.gen_range(spec.min_len..=spec.max_len);
        let minority = rng.gen_range(0..=1usize);
        let (n_pos, n_neg) = match label {
            Label::Neutral => (minority, minority),
            Label::Positive => (minority + 1 + rng.gen_range(0..=1usize), minority),
            Label::Negative => (minority, minority + 1 + rng.gen_range(0..=1usize)),
        };
        let mut tokens: Vec<String> = (0..n)
            .map(|_| {
                if rng.gen::<f64>() < 0.15 {
                    entities.choose(&mut rng).unwrap().to_string()
                } else {
                    neutral.choose(&mut rng).unwrap().to_string()
                }
            })
            .collect();
        let mut slots: Vec<usize> = (0..n).collect();
        slots.shuffle(&mut rng);
        for (k, &slot) in slots.iter().take(n_pos + n_neg).enumerate() {
            let l = if k < n_pos {
                Label::Positive
            } else {
                Label::Negative
            };
            tokens[slot] = polar_of(l).choose(&mut rng).unwrap().to_string();
        }
        aux.push(ScInstance { tokens, label });
    }

    Ok(SynthCorpus {
        main,
        aux,
        embeddings,
        lexicon,
    })
}
