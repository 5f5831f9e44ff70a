//! bAbI task files: parsing, vocabulary, and fixed-width encoding.
//!
//! A task file is a sequence of lines `ID content`. IDs restart at 1 at the
//! beginning of every story context. Question lines carry three
//! tab-separated fields after the ID: question, answer, and the
//! space-separated IDs of the supporting facts.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NIL_TOKEN: &str = "<nil>";
pub const NIL_ID: usize = 0;

/// One question together with the facts that precede it in its context.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Story {
    pub facts: Vec<Vec<String>>,
    pub question: Vec<String>,
    pub answer: String,
    /// Indices into `facts`.
    pub supporting: Vec<usize>,
}

impl Story {
    pub fn fact_text(&self, i: usize) -> String {
        self.facts[i].join(" ")
    }
}

/// Splits on whitespace, strips trailing `.` and `?`, lowercases.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_end_matches(['.', '?']).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

enum Line {
    Fact(Vec<String>),
    Question,
}

/// Parses a whole bAbI stream into stories.
pub fn parse_babi<R: BufRead>(reader: R) -> Result<Vec<Story>> {
    let mut stories = Vec::new();
    // Line id -> fact index (None for question lines) for the current context.
    let mut ids: HashMap<usize, Option<usize>> = HashMap::new();
    let mut facts: Vec<Vec<String>> = Vec::new();
    let mut last_id = 0usize;

    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            detail: e.to_string(),
        })?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |detail: String| Error::Parse {
            line: line_no,
            detail,
        };
        let (id_str, content) = line
            .trim_start()
            .split_once(' ')
            .ok_or_else(|| parse_err(format!("expected `ID content`, got {line:?}")))?;
        let id: usize = id_str
            .parse()
            .map_err(|_| parse_err(format!("bad line id {id_str:?}")))?;
        if id == 1 {
            ids.clear();
            facts.clear();
        } else if id != last_id + 1 {
            return Err(parse_err(format!("line id {id} does not follow {last_id}")));
        }
        last_id = id;

        let parsed = if content.contains('\t') {
            let mut fields = content.split('\t');
            let question = tokenize(fields.next().unwrap_or_default());
            let answer = fields
                .next()
                .map(str::trim)
                .filter(|a| !a.is_empty())
                .ok_or_else(|| parse_err("question line without an answer".into()))?;
            let answer_tokens = tokenize(answer);
            if answer_tokens.len() != 1 {
                return Err(parse_err(format!(
                    "answer {answer:?} is not a single token"
                )));
            }
            let mut supporting = Vec::new();
            for s in fields.next().unwrap_or_default().split_whitespace() {
                let sid: usize = s
                    .parse()
                    .map_err(|_| parse_err(format!("bad supporting id {s:?}")))?;
                match ids.get(&sid) {
                    Some(Some(fact)) => supporting.push(*fact),
                    Some(None) => {
                        return Err(parse_err(format!("supporting id {sid} is a question line")))
                    }
                    None => return Err(parse_err(format!("supporting id {sid} does not exist"))),
                }
            }
            if question.is_empty() {
                return Err(parse_err("empty question".into()));
            }
            stories.push(Story {
                facts: facts.clone(),
                question,
                answer: answer_tokens.into_iter().next().unwrap(),
                supporting,
            });
            Line::Question
        } else {
            Line::Fact(tokenize(content))
        };
        match parsed {
            Line::Fact(tokens) => {
                ids.insert(id, Some(facts.len()));
                facts.push(tokens);
            }
            Line::Question => {
                ids.insert(id, None);
            }
        }
    }
    Ok(stories)
}

/// Parses a task file from disk.
pub fn parse_babi_file(path: &Path) -> Result<Vec<Story>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_babi(std::io::BufReader::new(file))
}

/// Writes stories back in bAbI line format. Each story becomes its own
/// context, so parsing the output yields the same stories.
pub fn write_babi<W: std::io::Write>(stories: &[Story], mut out: W) -> std::io::Result<()> {
    for story in stories {
        for (i, fact) in story.facts.iter().enumerate() {
            writeln!(out, "{} {}", i + 1, fact.join(" "))?;
        }
        let support: Vec<String> = story
            .supporting
            .iter()
            .map(|s| (s + 1).to_string())
            .collect();
        writeln!(
            out,
            "{} {}\t{}\t{}",
            story.facts.len() + 1,
            story.question.join(" "),
            story.answer,
            support.join(" ")
        )?;
    }
    Ok(())
}

/// Token ↔ id map with id 0 reserved for padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary {
            tokens: vec![NIL_TOKEN.to_string()],
            index: HashMap::new(),
        }
    }
}

impl Vocabulary {
    /// Ids are assigned in first-occurrence order over facts, question, answer.
    pub fn build<'a>(stories: impl IntoIterator<Item = &'a Story>) -> Self {
        let mut vocab = Vocabulary::default();
        vocab.extend(stories);
        vocab
    }

    pub fn extend<'a>(&mut self, stories: impl IntoIterator<Item = &'a Story>) {
        for story in stories {
            for tok in story
                .facts
                .iter()
                .flatten()
                .chain(&story.question)
                .chain(std::iter::once(&story.answer))
            {
                self.insert(tok);
            }
        }
    }

    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    /// Rebuilds a vocabulary from its id-ordered token list (nil first).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(NIL_TOKEN) {
            return Err(Error::Encoding(
                "token list must start with the nil token".into(),
            ));
        }
        let mut vocab = Vocabulary::default();
        for tok in &tokens[1..] {
            if vocab.index.contains_key(tok) || tok == NIL_TOKEN {
                return Err(Error::Encoding(format!("duplicate token {tok:?}")));
            }
            vocab.insert(tok);
        }
        Ok(vocab)
    }

    /// Number of ids including nil.
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Position encoding weights, `J × d`, with
/// `l[j][k] = (1 - j/J) - (k/d)(1 - 2j/J)` for one-based `j` and `k`.
pub fn position_weights(sentence_len: usize, dim: usize) -> Result<Tensor> {
    if sentence_len == 0 || dim == 0 {
        return Err(Error::Config(
            "position weights need J >= 1 and d >= 1".into(),
        ));
    }
    let (jj, dd) = (sentence_len as f64, dim as f64);
    let mut values = Vec::with_capacity(sentence_len * dim);
    for j in 1..=sentence_len {
        for k in 1..=dim {
            let (j, k) = (j as f64, k as f64);
            values.push((1.0 - j / jj) - (k / dd) * (1.0 - 2.0 * j / jj));
        }
    }
    Tensor::matrix(sentence_len, dim, values)
}

/// Longest fact or question, in tokens.
pub fn max_sentence_len<'a>(stories: impl IntoIterator<Item = &'a Story>) -> usize {
    stories
        .into_iter()
        .flat_map(|s| s.facts.iter().chain(std::iter::once(&s.question)))
        .map(Vec::len)
        .max()
        .unwrap_or(1)
        .max(1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncodeConfig {
    pub memory_size: usize,
    pub sentence_len: usize,
}

/// A story as fixed-width id matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedStory {
    /// `memory_size × sentence_len`, row-major, nil-padded.
    pub memory: Arc<[usize]>,
    pub question: Arc<[usize]>,
    pub answer: usize,
    /// Number of leading non-empty memory slots.
    pub n_facts: usize,
    /// Index in the original story of the fact held by slot 0.
    pub first_fact: usize,
    /// Slots holding supporting facts (those that survived truncation).
    pub supporting_slots: Vec<usize>,
    pub memory_size: usize,
    pub sentence_len: usize,
}

impl EncodedStory {
    /// Whether slot `i` holds a fact.
    pub fn slot_mask(&self) -> Vec<bool> {
        (0..self.memory_size).map(|i| i < self.n_facts).collect()
    }

    pub fn slot_ids(&self, slot: usize) -> &[usize] {
        &self.memory[slot * self.sentence_len..(slot + 1) * self.sentence_len]
    }

    /// Maps ids back to tokens, dropping padding.
    pub fn decode(&self, vocab: &Vocabulary) -> (Vec<Vec<String>>, Vec<String>, String) {
        let words = |ids: &[usize]| -> Vec<String> {
            ids.iter()
                .filter(|&&id| id != NIL_ID)
                .map(|&id| vocab.token(id).unwrap_or("?").to_string())
                .collect()
        };
        let facts = (0..self.n_facts).map(|s| words(self.slot_ids(s))).collect();
        (
            facts,
            words(&self.question),
            vocab.token(self.answer).unwrap_or("?").to_string(),
        )
    }
}

fn encode_sentence(
    tokens: &[String],
    vocab: &Vocabulary,
    width: usize,
    out: &mut [usize],
) -> Result<()> {
    if tokens.len() > width {
        return Err(Error::Encoding(format!(
            "sentence of {} tokens exceeds the width {width}: {:?}",
            tokens.len(),
            tokens.join(" ")
        )));
    }
    for (slot, tok) in out.iter_mut().zip(tokens) {
        *slot = vocab
            .id(tok)
            .ok_or_else(|| Error::Encoding(format!("unknown token {tok:?}")))?;
    }
    Ok(())
}

/// Encodes a story, keeping its most recent `memory_size` facts.
pub fn encode_story(story: &Story, vocab: &Vocabulary, cfg: EncodeConfig) -> Result<EncodedStory> {
    let EncodeConfig {
        memory_size,
        sentence_len,
    } = cfg;
    if memory_size == 0 || sentence_len == 0 {
        return Err(Error::Config(
            "memory size and sentence length must be positive".into(),
        ));
    }
    let first_fact = story.facts.len().saturating_sub(memory_size);
    let kept = &story.facts[first_fact..];
    let mut memory = vec![NIL_ID; memory_size * sentence_len];
    for (slot, fact) in kept.iter().enumerate() {
        encode_sentence(
            fact,
            vocab,
            sentence_len,
            &mut memory[slot * sentence_len..(slot + 1) * sentence_len],
        )?;
    }
    let mut question = vec![NIL_ID; sentence_len];
    encode_sentence(&story.question, vocab, sentence_len, &mut question)?;
    let answer = vocab
        .id(&story.answer)
        .ok_or_else(|| Error::Encoding(format!("unknown answer token {:?}", story.answer)))?;
    let supporting_slots = story
        .supporting
        .iter()
        .filter(|&&f| f >= first_fact)
        .map(|&f| f - first_fact)
        .collect();
    Ok(EncodedStory {
        memory: memory.into(),
        question: question.into(),
        answer,
        n_facts: kept.len(),
        first_fact,
        supporting_slots,
        memory_size,
        sentence_len,
    })
}

pub fn encode_all(
    stories: &[Story],
    vocab: &Vocabulary,
    cfg: EncodeConfig,
) -> Result<Vec<EncodedStory>> {
    stories
        .iter()
        .map(|s| encode_story(s, vocab, cfg))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Language {
    En,
    Hn,
    Shuffled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Size {
    K1,
    K10,
}

/// One of the six released corpus variants, e.g. `en-1k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Variant {
    pub language: Language,
    pub size: Size,
}

impl Variant {
    pub const EN_1K: Variant = Variant {
        language: Language::En,
        size: Size::K1,
    };

    /// Directory name used by the released archive (`en`, `hn-10k`, ...).
    pub fn dir_name(&self) -> &'static str {
        match (self.language, self.size) {
            (Language::En, Size::K1) => "en",
            (Language::En, Size::K10) => "en-10k",
            (Language::Hn, Size::K1) => "hn",
            (Language::Hn, Size::K10) => "hn-10k",
            (Language::Shuffled, Size::K1) => "shuffled",
            (Language::Shuffled, Size::K10) => "shuffled-10k",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lang = match self.language {
            Language::En => "en",
            Language::Hn => "hn",
            Language::Shuffled => "shuffled",
        };
        let size = match self.size {
            Size::K1 => "1k",
            Size::K10 => "10k",
        };
        write!(f, "{lang}-{size}")
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (lang, size) = s.rsplit_once('-').ok_or_else(|| {
            Error::Config(format!("variant {s:?} is not of the form <lang>-<1k|10k>"))
        })?;
        let language = match lang {
            "en" => Language::En,
            "hn" => Language::Hn,
            "shuffled" | "shuffle" => Language::Shuffled,
            other => return Err(Error::Config(format!("unknown language {other:?}"))),
        };
        let size = match size.to_ascii_lowercase().as_str() {
            "1k" => Size::K1,
            "10k" => Size::K10,
            other => return Err(Error::Config(format!("unknown size {other:?}"))),
        };
        Ok(Variant { language, size })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Default file layout of the released archive.
pub const DEFAULT_TASK_PATTERN: &str = "{variant}/qa{task}_*_{split}.txt";

/// Resolves `pattern` (placeholders `{variant}`, `{task}`, `{split}`; a
/// single `*` wildcard in the file name) under `root`.
pub fn task_path(
    root: &Path,
    pattern: &str,
    task: u32,
    variant: Variant,
    split: Split,
) -> Result<PathBuf> {
    let rel = pattern
        .replace("{variant}", variant.dir_name())
        .replace("{task}", &task.to_string())
        .replace("{split}", split.as_str());
    let expected = root.join(&rel);
    let not_found = || {
        Error::io(
            &expected,
            std::io::Error::new(std::io::ErrorKind::NotFound, "task file not found"),
        )
    };
    let file_pattern = expected
        .file_name()
        .and_then(|f| f.to_str())
        .ok_or_else(not_found)?
        .to_string();
    let Some((prefix, suffix)) = file_pattern.split_once('*') else {
        return if expected.is_file() {
            Ok(expected)
        } else {
            Err(not_found())
        };
    };
    let dir = expected.parent().ok_or_else(not_found)?;
    let entries = std::fs::read_dir(dir).map_err(|_| not_found())?;
    let mut matches: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name().and_then(|f| f.to_str()).is_some_and(|f| {
                f.len() >= prefix.len() + suffix.len()
                    && f.starts_with(prefix)
                    && f.ends_with(suffix)
            })
        })
        .collect();
    matches.sort();
    matches.into_iter().next().ok_or_else(not_found)
}

pub fn load_task(
    root: &Path,
    pattern: &str,
    task: u32,
    variant: Variant,
    split: Split,
) -> Result<Vec<Story>> {
    if !(1..=20).contains(&task) {
        return Err(Error::Config(format!("task id {task} outside 1..=20")));
    }
    parse_babi_file(&task_path(root, pattern, task, variant, split)?)
}

/// Seeded 90/10 partition; the first `floor(0.9 n)` shuffled stories train.
pub fn split_train_val<T: Clone>(stories: &[T], seed: u64) -> (Vec<T>, Vec<T>) {
    let mut order: Vec<usize> = (0..stories.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = stories.len() * 9 / 10;
    let train = order[..n_train]
        .iter()
        .map(|&i| stories[i].clone())
        .collect();
    let val = order[n_train..]
        .iter()
        .map(|&i| stories[i].clone())
        .collect();
    (train, val)
}

/// Generates stories in the style of the single-supporting-fact task: people
/// move between rooms and the question asks where one of them is. Each
/// person moves at most once per story, so the answer does not depend on
/// fact order. Used by examples and tests when the real corpus is absent.
pub fn synthetic_location_stories(n: usize, seed: u64) -> Vec<Story> {
    use rand::Rng;
    const PEOPLE: [&str; 8] = [
        "mary", "john", "sandra", "daniel", "bill", "fred", "julie", "emily",
    ];
    const VERBS: [&str; 4] = ["moved", "went", "journeyed", "travelled"];
    const PLACES: [&str; 6] = [
        "hallway", "office", "kitchen", "bedroom", "garden", "bathroom",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let n_facts = rng.random_range(2..=6);
            let mut people = PEOPLE;
            people.shuffle(&mut rng);
            let mut facts = Vec::with_capacity(n_facts);
            let mut places = Vec::with_capacity(n_facts);
            for who in &people[..n_facts] {
                let verb = VERBS[rng.random_range(0..VERBS.len())];
                let place = PLACES[rng.random_range(0..PLACES.len())];
                facts.push(tokenize(&format!("{who} {verb} to the {place}")));
                places.push(place);
            }
            let idx = rng.random_range(0..n_facts);
            Story {
                facts,
                question: tokenize(&format!("where is {}", people[idx])),
                answer: places[idx].to_string(),
                supporting: vec![idx],
            }
        })
        .collect()
}
