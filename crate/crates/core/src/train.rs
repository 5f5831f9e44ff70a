//! Adagrad training loop, shared by the point baseline and the variational
//! network.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    encode_all, max_sentence_len, split_train_val, EncodeConfig, EncodedStory, Story, Vocabulary,
};
use crate::error::{Error, Result};
use crate::model::{InitConfig, MemN2N, Mode, ModelConfig, ParamStore, EMBEDDINGS};
use crate::tensor::{Gradients, Tape, Tensor};

/// Posterior scale every variational embedding starts from.
pub const INIT_POSTERIOR_SIGMA: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub minibatches_per_epoch: usize,
    pub lr: f64,
    pub anneal_every: usize,
    pub anneal_factor: f64,
    /// Standard deviation of the Gaussian weight initialization.
    pub init_sigma: f64,
    pub init_nu: f64,
    pub prior_nu: f64,
    pub hops: usize,
    pub delta: usize,
    pub memory_size: usize,
    pub grad_clip: f64,
    pub adagrad_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            minibatches_per_epoch: 32,
            lr: 0.01,
            anneal_every: 25,
            anneal_factor: 0.5,
            init_sigma: 0.1,
            init_nu: 100.0,
            prior_nu: 100.0,
            hops: 3,
            delta: 20,
            memory_size: 50,
            grad_clip: 40.0,
            adagrad_eps: 1e-8,
            seed: 1,
        }
    }
}

impl TrainConfig {
    /// Schedule used when all tasks share one network.
    pub fn joint() -> Self {
        TrainConfig {
            epochs: 60,
            anneal_every: 15,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("epochs", self.epochs),
            ("minibatches_per_epoch", self.minibatches_per_epoch),
            ("anneal_every", self.anneal_every),
            ("hops", self.hops),
            ("delta", self.delta),
            ("memory_size", self.memory_size),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        let reals = [
            ("lr", self.lr),
            ("init_sigma", self.init_sigma),
            ("init_nu", self.init_nu),
            ("prior_nu", self.prior_nu),
            ("grad_clip", self.grad_clip),
            ("adagrad_eps", self.adagrad_eps),
        ];
        if let Some((name, v)) = reals.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(format!("{name} must be positive, got {v}")));
        }
        if !(self.anneal_factor > 0.0 && self.anneal_factor < 1.0) {
            return Err(Error::Config(format!(
                "anneal_factor must lie in (0, 1), got {}",
                self.anneal_factor
            )));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let halvings = (epoch.max(1) - 1) / self.anneal_every;
        self.lr * self.anneal_factor.powi(halvings as i32)
    }

    /// Sets one field from its name and textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
        }
        match key {
            "epochs" => self.epochs = parse(key, value)?,
            "minibatches_per_epoch" | "minibatches" => {
                self.minibatches_per_epoch = parse(key, value)?
            }
            "lr" => self.lr = parse(key, value)?,
            "anneal_every" => self.anneal_every = parse(key, value)?,
            "anneal_factor" => self.anneal_factor = parse(key, value)?,
            "init_sigma" => self.init_sigma = parse(key, value)?,
            "init_nu" => self.init_nu = parse(key, value)?,
            "prior_nu" => self.prior_nu = parse(key, value)?,
            "hops" => self.hops = parse(key, value)?,
            "delta" => self.delta = parse(key, value)?,
            "memory_size" => self.memory_size = parse(key, value)?,
            "grad_clip" => self.grad_clip = parse(key, value)?,
            "adagrad_eps" => self.adagrad_eps = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown training option {other:?}"))),
        }
        Ok(())
    }

    /// `key = value` pairs in field order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("epochs", self.epochs.to_string()),
            (
                "minibatches_per_epoch",
                self.minibatches_per_epoch.to_string(),
            ),
            ("lr", self.lr.to_string()),
            ("anneal_every", self.anneal_every.to_string()),
            ("anneal_factor", self.anneal_factor.to_string()),
            ("init_sigma", self.init_sigma.to_string()),
            ("init_nu", self.init_nu.to_string()),
            ("prior_nu", self.prior_nu.to_string()),
            ("hops", self.hops.to_string()),
            ("delta", self.delta.to_string()),
            ("memory_size", self.memory_size.to_string()),
            ("grad_clip", self.grad_clip.to_string()),
            ("adagrad_eps", self.adagrad_eps.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }
}

/// Random network for `vocab` with weights drawn from `N(0, init_sigma²)`.
pub fn init_network(
    vocab: Vocabulary,
    sentence_len: usize,
    mode: Mode,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<MemN2N> {
    let model_cfg = ModelConfig {
        mode,
        dim: cfg.delta,
        hops: cfg.hops,
        memory_size: cfg.memory_size,
        sentence_len,
        prior_nu: cfg.prior_nu,
    };
    let init = InitConfig {
        weight_std: cfg.init_sigma,
        sigma: INIT_POSTERIOR_SIGMA,
        nu: cfg.init_nu,
    };
    MemN2N::init(model_cfg, vocab, init, rng)
}

/// Sum of squared gradients per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdagradState {
    pub acc: Vec<Tensor>,
}

impl AdagradState {
    pub fn new(params: &ParamStore) -> Self {
        AdagradState {
            acc: params
                .iter()
                .map(|(_, t)| Tensor::zeros(t.shape()))
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub grad_norm: f64,
    pub clipped_norm: f64,
}

/// Clips `grads` to global norm `clip`, then applies one Adagrad update.
pub fn adagrad_step(
    params: &mut ParamStore,
    grads: &mut Gradients,
    state: &mut AdagradState,
    lr: f64,
    clip: f64,
    eps: f64,
) -> Result<StepInfo> {
    if grads.len() != params.len() {
        return Err(Error::Model(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (name, g) in grads.iter() {
        if !g.is_finite() {
            return Err(Error::NumericFault {
                at: name.to_string(),
                detail: "non-finite gradient".into(),
            });
        }
    }
    let grad_norm = grads.global_norm();
    if grad_norm > clip {
        let s = clip / grad_norm;
        for (_, g) in grads.iter_mut() {
            g.values_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    for (((pname, p), (gname, g)), acc) in params.iter_mut().zip(grads.iter()).zip(&mut state.acc) {
        if pname != gname || p.shape() != g.shape() {
            return Err(Error::Model(format!(
                "gradient {gname} does not line up with parameter {pname}"
            )));
        }
        for ((w, gv), a) in p
            .values_mut()
            .iter_mut()
            .zip(g.values())
            .zip(acc.values_mut())
        {
            *a += gv * gv;
            *w -= lr * gv / (a.sqrt() + eps);
        }
    }
    Ok(StepInfo {
        grad_norm,
        clipped_norm: grads.global_norm(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    /// Mean objective over the epoch's minibatches.
    pub train_loss: f64,
    /// Mean data term alone.
    pub train_nll: f64,
    pub val_acc: f64,
    /// Degrees of freedom of A, B, C after the epoch (variational only).
    pub nu: Option<[f64; 3]>,
}

pub const METRICS_HEADER: &str = "epoch\tlr\ttrain_loss\tval_acc\tnu_A\tnu_B\tnu_C";

impl EpochMetrics {
    /// One tab-separated log line; ν columns are `-` for point networks.
    pub fn tsv_line(&self) -> String {
        let nu = match self.nu {
            Some(v) => v
                .iter()
                .map(|x| format!("{x:.6}"))
                .collect::<Vec<_>>()
                .join("\t"),
            None => "-\t-\t-".to_string(),
        };
        format!(
            "{}\t{}\t{:.6}\t{:.4}\t{nu}",
            self.epoch, self.lr, self.train_loss, self.val_acc
        )
    }
}

/// Writes a metrics log with a header row.
pub fn write_metrics<W: Write>(out: &mut W, metrics: &[EpochMetrics]) -> std::io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for m in metrics {
        writeln!(out, "{}", m.tsv_line())?;
    }
    Ok(())
}

/// Index ranges of `n_batches` near-equal consecutive chunks of `n` items.
pub fn partition(n: usize, n_batches: usize) -> Vec<std::ops::Range<usize>> {
    let k = n_batches.min(n).max(1);
    (0..k)
        .map(|b| b * n / k..(b + 1) * n / k)
        .filter(|r| !r.is_empty())
        .collect()
}

/// Encoded splits of one task (or of the joint corpus) plus the vocabulary
/// and sentence width they share.
#[derive(Clone, Debug)]
pub struct TaskData {
    pub vocab: Vocabulary,
    pub sentence_len: usize,
    pub train: Vec<EncodedStory>,
    pub val: Vec<EncodedStory>,
    pub test: Vec<EncodedStory>,
}

impl TaskData {
    /// Builds the vocabulary and width over train and test, and holds out
    /// 10% of the training stories for validation.
    pub fn prepare(train: &[Story], test: &[Story], memory_size: usize, seed: u64) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Config("empty training set".into()));
        }
        let vocab = Vocabulary::build(train.iter().chain(test));
        let sentence_len = max_sentence_len(train.iter().chain(test));
        let enc = EncodeConfig {
            memory_size,
            sentence_len,
        };
        let (tr, va) = split_train_val(train, seed);
        Ok(TaskData {
            train: encode_all(&tr, &vocab, enc)?,
            val: encode_all(&va, &vocab, enc)?,
            test: encode_all(test, &vocab, enc)?,
            vocab,
            sentence_len,
        })
    }
}

/// Seed for the validation draws of `epoch`.
fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Trains a fresh network on `data.train`, validating on `data.val` after
/// every epoch. `on_epoch` sees each epoch's metrics as they are produced.
pub fn train_task(
    data: &TaskData,
    cfg: &TrainConfig,
    mode: Mode,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<(MemN2N, Vec<EpochMetrics>)> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = init_network(data.vocab.clone(), data.sentence_len, mode, cfg, &mut rng)?;
    let mut state = AdagradState::new(&net.params);
    let batches = partition(data.train.len(), cfg.minibatches_per_epoch);
    let kl_scale = 1.0 / batches.len() as f64;
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut nll_sum) = (0.0, 0.0);
        for range in &batches {
            let batch: Vec<&EncodedStory> = order[range.clone()]
                .iter()
                .map(|&i| &data.train[i])
                .collect();
            let noise = net.sample_noise(&mut rng)?;
            let mut tape = Tape::new();
            let vars = net.register(&mut tape);
            let (loss, parts) = net.objective(&mut tape, &vars, &noise, &batch, kl_scale)?;
            let mut grads = tape.backward(loss)?;
            adagrad_step(
                &mut net.params,
                &mut grads,
                &mut state,
                lr,
                cfg.grad_clip,
                cfg.adagrad_eps,
            )?;
            loss_sum += parts.total;
            nll_sum += parts.nll;
        }
        let val_acc = net.accuracy(
            &data.val,
            1,
            &mut ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, epoch)),
        )?;
        let nu = match mode {
            Mode::Point => None,
            Mode::Variational => {
                let mut v = [0.0; 3];
                for (slot, m) in v.iter_mut().zip(EMBEDDINGS) {
                    *slot = net.nu(m).unwrap_or(f64::NAN);
                }
                Some(v)
            }
        };
        let metrics = EpochMetrics {
            epoch,
            lr,
            train_loss: loss_sum / batches.len() as f64,
            train_nll: nll_sum / batches.len() as f64,
            val_acc,
            nu,
        };
        on_epoch(&metrics);
        history.push(metrics);
    }
    Ok((net, history))
}

/// Stories of one task in a joint run.
#[derive(Clone, Debug)]
pub struct TaskStories {
    pub task: u32,
    pub train: Vec<Story>,
    pub test: Vec<Story>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointTaskResult {
    pub task: u32,
    pub test_acc: f64,
}

/// One network over the union of all tasks: shared vocabulary and width,
/// each task split 90/10 separately, then all training stories pooled.
pub fn train_joint(
    tasks: &[TaskStories],
    cfg: &TrainConfig,
    mode: Mode,
    samples: usize,
    on_epoch: impl FnMut(&EpochMetrics),
) -> Result<(MemN2N, Vec<EpochMetrics>, Vec<JointTaskResult>)> {
    if tasks.is_empty() {
        return Err(Error::Config("no tasks to train on".into()));
    }
    let all = || tasks.iter().flat_map(|t| t.train.iter().chain(&t.test));
    let vocab = Vocabulary::build(all());
    let sentence_len = max_sentence_len(all());
    let enc = EncodeConfig {
        memory_size: cfg.memory_size,
        sentence_len,
    };
    let mut pooled = TaskData {
        vocab,
        sentence_len,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    let mut per_task_test = Vec::new();
    for t in tasks {
        let (tr, va) = split_train_val(&t.train, cfg.seed.wrapping_add(t.task as u64));
        pooled.train.extend(encode_all(&tr, &pooled.vocab, enc)?);
        pooled.val.extend(encode_all(&va, &pooled.vocab, enc)?);
        per_task_test.push((t.task, encode_all(&t.test, &pooled.vocab, enc)?));
    }
    let (net, history) = train_task(&pooled, cfg, mode, on_epoch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let results = per_task_test
        .iter()
        .map(|(task, test)| {
            Ok(JointTaskResult {
                task: *task,
                test_acc: net.accuracy(test, samples, &mut rng)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((net, history, results))
}
