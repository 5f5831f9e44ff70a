//! "Guess the number": a teacher holds a target, the student guesses, and
//! the teacher answers whether the target is smaller or larger.
//!
//! A dialog is rendered as a story whose first fact states the range and
//! whose remaining facts are one per past round, e.g.
//! `guess 76 target is smaller`. The question is `what is your guess` and
//! the training label is the midpoint of the current exclusive bounds.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    encode_all, encode_story, max_sentence_len, split_train_val, EncodeConfig, Story, Vocabulary,
};
use crate::error::{Error, Result};
use crate::model::MemN2N;
use crate::model::Mode;
use crate::train::{train_task, EpochMetrics, TaskData, TrainConfig};

pub const QUESTION: &str = "what is your guess";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GameConfig {
    pub min: i64,
    pub max: i64,
    pub max_tries: usize,
    pub n_train: usize,
}

impl Default for GameConfig {
    fn default() -> Self {
        GameConfig {
            min: 0,
            max: 10,
            max_tries: 100,
            n_train: 1000,
        }
    }
}

impl GameConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min >= self.max {
            return Err(Error::Config(format!(
                "game range {}..{} is empty",
                self.min, self.max
            )));
        }
        if self.max_tries == 0 {
            return Err(Error::Config("max_tries must be at least 1".into()));
        }
        Ok(())
    }

    pub fn opening_fact(&self) -> String {
        format!("select a number between {} and {}", self.min, self.max)
    }

    fn span(&self) -> usize {
        (self.max - self.min + 1) as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Hint {
    Smaller,
    Larger,
    Correct,
}

impl Hint {
    pub fn word(&self) -> &'static str {
        match self {
            Hint::Smaller => "smaller",
            Hint::Larger => "larger",
            Hint::Correct => "correct",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Round {
    pub guess: i64,
    /// Exclusive bounds in force when the guess was made.
    pub lo: i64,
    pub hi: i64,
    pub hint: Hint,
}

impl Round {
    pub fn in_bounds(&self) -> bool {
        self.lo < self.guess && self.guess < self.hi
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dialog {
    pub cfg: GameConfig,
    pub target: i64,
    pub rounds: Vec<Round>,
    lo: i64,
    hi: i64,
}

impl Dialog {
    pub fn new(cfg: GameConfig, target: i64) -> Self {
        Dialog {
            cfg,
            target,
            rounds: Vec::new(),
            lo: cfg.min - 1,
            hi: cfg.max + 1,
        }
    }

    /// Current exclusive bounds.
    pub fn bounds(&self) -> (i64, i64) {
        (self.lo, self.hi)
    }

    pub fn solved(&self) -> bool {
        self.rounds.last().is_some_and(|r| r.hint == Hint::Correct)
    }

    /// Teacher response to `guess`; bounds only ever tighten.
    pub fn play(&mut self, guess: i64) -> Round {
        let hint = match guess.cmp(&self.target) {
            std::cmp::Ordering::Less => Hint::Larger,
            std::cmp::Ordering::Greater => Hint::Smaller,
            std::cmp::Ordering::Equal => Hint::Correct,
        };
        let round = Round {
            guess,
            lo: self.lo,
            hi: self.hi,
            hint,
        };
        match hint {
            Hint::Larger => self.lo = self.lo.max(guess),
            Hint::Smaller => self.hi = self.hi.min(guess),
            Hint::Correct => {}
        }
        self.rounds.push(round);
        round
    }

    /// Midpoint of the current bounds.
    pub fn midpoint(&self) -> i64 {
        (self.lo + self.hi).div_euclid(2)
    }

    /// Fraction of guesses that respected the bounds known at the time.
    pub fn accuracy(&self) -> f64 {
        if self.rounds.is_empty() {
            return 0.0;
        }
        self.rounds.iter().filter(|r| r.in_bounds()).count() as f64 / self.rounds.len() as f64
    }

    /// The dialog so far as a story labelled with the midpoint.
    pub fn to_story(&self) -> Story {
        let mut facts = vec![tokens(&self.cfg.opening_fact())];
        for r in self.rounds.iter().filter(|r| r.hint != Hint::Correct) {
            facts.push(tokens(&format!(
                "guess {} target is {}",
                r.guess,
                r.hint.word()
            )));
        }
        Story {
            facts,
            question: tokens(QUESTION),
            answer: self.midpoint().to_string(),
            supporting: Vec::new(),
        }
    }
}

fn tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Random in-bounds guesser played to completion, then cut at a random
/// prefix; the story is the dialog up to the cut, labelled with the midpoint.
pub fn generate_dataset(cfg: &GameConfig, n: usize, rng: &mut impl Rng) -> Result<Vec<Story>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let target = rng.random_range(cfg.min..=cfg.max);
        let mut full = Dialog::new(*cfg, target);
        while !full.solved() {
            let (lo, hi) = full.bounds();
            full.play(rng.random_range(lo + 1..hi));
        }
        let keep = rng.random_range(0..full.rounds.len());
        let mut partial = Dialog::new(*cfg, target);
        for r in &full.rounds[..keep] {
            partial.play(r.guess);
        }
        out.push(partial.to_story());
    }
    Ok(out)
}

/// Something that can pick the next guess from the dialog so far.
pub trait Student {
    fn guess(&mut self, dialog: &Dialog) -> Result<i64>;
}

/// Always guesses the midpoint of the current bounds.
pub struct BinarySearch;

impl Student for BinarySearch {
    fn guess(&mut self, dialog: &Dialog) -> Result<i64> {
        Ok(dialog.midpoint())
    }
}

/// Always guesses a fixed number.
pub struct Constant(pub i64);

impl Student for Constant {
    fn guess(&mut self, _: &Dialog) -> Result<i64> {
        Ok(self.0)
    }
}

/// Replays a fixed list of guesses, then repeats the last one.
pub struct Scripted(pub Vec<i64>);

impl Student for Scripted {
    fn guess(&mut self, dialog: &Dialog) -> Result<i64> {
        let i = dialog.rounds.len().min(self.0.len().saturating_sub(1));
        self.0
            .get(i)
            .copied()
            .ok_or_else(|| Error::Config("empty script".into()))
    }
}

/// A trained network; the guess is the most probable number token.
pub struct NetStudent<'a, R: Rng> {
    pub net: &'a MemN2N,
    pub samples: usize,
    pub rng: R,
    numbers: Vec<(usize, i64)>,
}

impl<'a, R: Rng> NetStudent<'a, R> {
    pub fn new(net: &'a MemN2N, samples: usize, rng: R) -> Result<Self> {
        let numbers: Vec<(usize, i64)> = net
            .vocab
            .tokens()
            .iter()
            .enumerate()
            .filter_map(|(id, t)| t.parse::<i64>().ok().map(|n| (id, n)))
            .collect();
        if numbers.is_empty() {
            return Err(Error::Model("vocabulary has no number tokens".into()));
        }
        Ok(NetStudent {
            net,
            samples,
            rng,
            numbers,
        })
    }
}

impl<R: Rng> Student for NetStudent<'_, R> {
    fn guess(&mut self, dialog: &Dialog) -> Result<i64> {
        let cfg = EncodeConfig {
            memory_size: self.net.config.memory_size,
            sentence_len: self.net.config.sentence_len,
        };
        let enc = encode_story(&dialog.to_story(), &self.net.vocab, cfg)?;
        let pred = self.net.predict(&enc, self.samples, &mut self.rng)?;
        let (_, n) = self
            .numbers
            .iter()
            .copied()
            .fold(None, |best: Option<(usize, i64)>, (id, n)| match best {
                Some((b, _)) if pred.probs[b] >= pred.probs[id] => best,
                _ => Some((id, n)),
            })
            .expect("non-empty");
        Ok(n)
    }
}

/// Plays until the target is hit or `max_tries` guesses were made.
pub fn play_episode(student: &mut dyn Student, cfg: &GameConfig, target: i64) -> Result<Dialog> {
    cfg.validate()?;
    let mut dialog = Dialog::new(*cfg, target);
    while !dialog.solved() && dialog.rounds.len() < cfg.max_tries {
        let g = student.guess(&dialog)?;
        dialog.play(g);
    }
    Ok(dialog)
}

/// Accuracy and success in percent; rounds averaged over solved games only.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GameMetrics {
    pub accuracy: f64,
    pub success: f64,
    pub rounds: Option<f64>,
    pub games: usize,
}

impl GameMetrics {
    pub fn from_dialogs(dialogs: &[Dialog]) -> Self {
        let n = dialogs.len().max(1) as f64;
        let accuracy = 100.0 * dialogs.iter().map(Dialog::accuracy).sum::<f64>() / n;
        let solved: Vec<&Dialog> = dialogs.iter().filter(|d| d.solved()).collect();
        let success = 100.0 * solved.len() as f64 / n;
        let rounds = if solved.is_empty() {
            None
        } else {
            Some(solved.iter().map(|d| d.rounds.len() as f64).sum::<f64>() / solved.len() as f64)
        };
        GameMetrics {
            accuracy,
            success,
            rounds,
            games: dialogs.len(),
        }
    }
}

/// Targets for `n_games`, distinct while the range allows it.
pub fn draw_targets(cfg: &GameConfig, n_games: usize, rng: &mut impl Rng) -> Vec<i64> {
    let all: Vec<i64> = (cfg.min..=cfg.max).collect();
    let mut out = Vec::with_capacity(n_games);
    while out.len() < n_games {
        let mut pool = all.clone();
        pool.shuffle(rng);
        out.extend(pool.into_iter().take(n_games - out.len()));
    }
    out
}

pub fn evaluate(
    student: &mut dyn Student,
    cfg: &GameConfig,
    n_games: usize,
    rng: &mut impl Rng,
) -> Result<(GameMetrics, Vec<Dialog>)> {
    let dialogs = draw_targets(cfg, n_games, rng)
        .into_iter()
        .map(|t| play_episode(student, cfg, t))
        .collect::<Result<Vec<_>>>()?;
    Ok((GameMetrics::from_dialogs(&dialogs), dialogs))
}

/// Prints one metrics column block, `label` naming the student.
pub fn write_metrics_block<W: Write + ?Sized>(
    out: &mut W,
    label: &str,
    m: &GameMetrics,
) -> std::io::Result<()> {
    writeln!(out, "Metric\t{label}")?;
    writeln!(out, "Accuracy (%)\t{:.0}", m.accuracy)?;
    writeln!(out, "Success (%)\t{:.0}", m.success)?;
    match m.rounds {
        Some(r) => writeln!(out, "Rounds\t{r:.1}"),
        None => writeln!(out, "Rounds\t-"),
    }
}

/// Running accuracy as the transcript shows it: truncated to two decimals.
fn running_accuracy(correct: usize, total: usize) -> String {
    let v = (correct * 100 / total) as f64 / 100.0;
    if v.fract() == 0.0 {
        format!("{v:.1}")
    } else {
        format!("{v}")
    }
}

/// Round-by-round transcript of one episode.
pub fn write_transcript<W: Write + ?Sized>(
    out: &mut W,
    model: &str,
    n_train: usize,
    dialog: &Dialog,
) -> std::io::Result<()> {
    let rule = "-".repeat(30);
    writeln!(out, "{rule}")?;
    writeln!(out, "Model: {model}")?;
    writeln!(out, "min: {}", dialog.cfg.min)?;
    writeln!(out, "max: {}", dialog.cfg.max)?;
    writeln!(out, "Train examples: {n_train}")?;
    writeln!(out, "{rule}")?;
    writeln!(out, "{rule}")?;
    writeln!(out, "**** TESTING MODEL STARTS ****")?;
    writeln!(out, "{rule}")?;
    writeln!(
        out,
        "Select a number between {} and {}",
        dialog.cfg.min, dialog.cfg.max
    )?;
    let mut correct = 0;
    for (i, r) in dialog.rounds.iter().enumerate() {
        writeln!(out, "Round: {}", i + 1)?;
        writeln!(out, "{}", "-".repeat(12))?;
        writeln!(out, "Selection: {}", r.guess)?;
        if r.in_bounds() {
            correct += 1;
            writeln!(out, "Correct: Selection within Bounds!")?;
        } else {
            writeln!(out, "Wrong: Selection Out of Bounds!")?;
        }
        writeln!(out, "Accuracy: = {}", running_accuracy(correct, i + 1))?;
        writeln!(out, "min_num: {}", r.lo)?;
        writeln!(out, "max_num: {}", r.hi)?;
        match r.hint {
            Hint::Smaller => writeln!(out, "Hint: Target is a smaller number")?,
            Hint::Larger => writeln!(out, "Hint: Target is a larger number")?,
            Hint::Correct => {}
        }
    }
    if dialog.solved() {
        writeln!(out, "{}", "*".repeat(49))?;
        writeln!(out, "Congratulations, the target is {}", dialog.target)?;
        writeln!(
            out,
            "You found the correct answer after {} rounds",
            dialog.rounds.len()
        )?;
    } else {
        writeln!(out, "{}", "*".repeat(49))?;
        writeln!(out, "Out of tries, the target was {}", dialog.target)?;
    }
    Ok(())
}

/// Generates `cfg.n_train` dialogs and trains a network on them. Every
/// number in the range is added to the vocabulary so any guess can be
/// encoded later.
pub fn train_game(
    cfg: &GameConfig,
    train_cfg: &TrainConfig,
    mode: Mode,
    rng: &mut ChaCha8Rng,
    on_epoch: impl FnMut(&EpochMetrics),
) -> Result<(MemN2N, Vec<EpochMetrics>)> {
    let stories = generate_dataset(cfg, cfg.n_train, rng)?;
    let data = game_task_data(cfg, &stories, train_cfg.memory_size, train_cfg.seed)?;
    train_task(&data, train_cfg, mode, on_epoch)
}

/// Vocabulary covering the range, 90/10 split of `stories`.
pub fn game_task_data(
    cfg: &GameConfig,
    stories: &[Story],
    memory_size: usize,
    seed: u64,
) -> Result<TaskData> {
    if stories.is_empty() {
        return Err(Error::Config("no game stories".into()));
    }
    let mut vocab = Vocabulary::build(stories);
    for n in cfg.min..=cfg.max {
        vocab.insert(&n.to_string());
    }
    for w in ["guess", "target", "is", "smaller", "larger"] {
        vocab.insert(w);
    }
    let fact_width = Dialog::new(*cfg, cfg.min).to_story().facts[0].len().max(5);
    let sentence_len = max_sentence_len(stories).max(fact_width);
    let enc = EncodeConfig {
        memory_size,
        sentence_len,
    };
    let (tr, va) = split_train_val(stories, seed);
    Ok(TaskData {
        train: encode_all(&tr, &vocab, enc)?,
        val: encode_all(&va, &vocab, enc)?,
        test: Vec::new(),
        vocab,
        sentence_len,
    })
}

/// Number of distinct targets available.
pub fn range_size(cfg: &GameConfig) -> usize {
    cfg.span()
}
