//! End-to-end memory network with point or Student's-t variational
//! embeddings, and its checkpoint format.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{position_weights, EncodedStory, Vocabulary};
use crate::error::{Error, Result};
use crate::tensor::{softplus, softplus_inv, Tape, Tensor, Var};
use crate::tmath::{self, DivergenceBreakdown, TDistParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Deterministic embedding matrices.
    Point,
    /// Each of A, B, C is a diagonal Student's-t posterior.
    Variational,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Point => "baseline",
            Mode::Variational => "variational",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" | "point" => Ok(Mode::Point),
            "variational" => Ok(Mode::Variational),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (baseline | variational)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub mode: Mode,
    pub dim: usize,
    pub hops: usize,
    pub memory_size: usize,
    pub sentence_len: usize,
    /// Degrees of freedom of the `t(0, I, ν)` prior.
    pub prior_nu: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hops == 0 {
            return Err(Error::Model("the number of hops must be at least 1".into()));
        }
        if self.dim == 0 || self.memory_size == 0 || self.sentence_len == 0 {
            return Err(Error::Model(
                "dim, memory size and sentence length must be positive".into(),
            ));
        }
        if !(self.prior_nu.is_finite() && self.prior_nu > 0.0) {
            return Err(Error::Model(format!(
                "prior dof must be positive, got {}",
                self.prior_nu
            )));
        }
        Ok(())
    }
}

/// Initial values for a fresh network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitConfig {
    /// Standard deviation of the Gaussian used for A, B, C (or their means) and W.
    pub weight_std: f64,
    pub sigma: f64,
    pub nu: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            weight_std: 0.1,
            sigma: 0.05,
            nu: 100.0,
        }
    }
}

pub const EMBEDDINGS: [&str; 3] = ["A", "B", "C"];

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new(entries: Vec<(String, Tensor)>) -> Self {
        ParamStore { entries }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Model(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.entries.iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }
}

/// Frozen standardized noise for one weight sample, one tensor per
/// variational embedding.
#[derive(Clone, Debug)]
pub struct Noise {
    eps: Vec<Tensor>,
}

impl Noise {
    pub fn get(&self, matrix: usize) -> &Tensor {
        &self.eps[matrix]
    }

    /// All-zero noise, giving the posterior means.
    pub fn zeros(net: &MemN2N) -> Self {
        let eps = match net.config.mode {
            Mode::Point => Vec::new(),
            Mode::Variational => vec![Tensor::zeros(&[net.vocab.size(), net.config.dim]); 3],
        };
        Noise { eps }
    }
}

/// Attention over the non-empty memory slots, one row per hop.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace {
    pub hops: Vec<Vec<f64>>,
}

impl AttentionTrace {
    /// Most attended slot at each hop.
    pub fn argmax(&self) -> Vec<usize> {
        self.hops
            .iter()
            .map(|row| crate::tensor::argmax(row))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub answer: usize,
    pub trace: AttentionTrace,
}

/// Scalar outputs of one objective evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub nll: f64,
    pub divergence: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct MemN2N {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
    positions: Arc<Tensor>,
}

/// Variables on a tape standing for A, B, C and W for one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct BoundWeights {
    pub a: Var,
    pub b: Var,
    pub c: Var,
    pub w_t: Var,
}

impl MemN2N {
    /// Parameter names in storage order for `mode`.
    pub fn param_names(mode: Mode) -> Vec<String> {
        let mut names = Vec::new();
        for m in EMBEDDINGS {
            match mode {
                Mode::Point => names.push(m.to_string()),
                Mode::Variational => {
                    names.push(format!("{m}.mu"));
                    names.push(format!("{m}.rho_sigma"));
                    names.push(format!("{m}.rho_nu"));
                }
            }
        }
        names.push("W".to_string());
        names
    }

    /// Assembles a network from existing parameters, checking names and shapes.
    pub fn from_parts(config: ModelConfig, vocab: Vocabulary, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let expected = Self::param_names(config.mode);
        let got = params.names();
        if got != expected.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::Model(format!(
                "parameter set {got:?} does not match {expected:?}"
            )));
        }
        let table = [vocab.size(), config.dim];
        for (name, t) in params.iter() {
            let want: &[usize] = if name.ends_with(".rho_nu") {
                &[1]
            } else {
                &table
            };
            if t.shape() != want {
                return Err(Error::Model(format!(
                    "{name} has shape {:?}, expected {want:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::Model(format!("{name} has non-finite entries")));
            }
        }
        let positions = Arc::new(position_weights(config.sentence_len, config.dim)?);
        Ok(MemN2N {
            config,
            vocab,
            params,
            positions,
        })
    }

    /// Random network: Gaussian weights, `σ` and `ν` at `init.sigma`, `init.nu`.
    pub fn init<R: Rng + ?Sized>(
        config: ModelConfig,
        vocab: Vocabulary,
        init: InitConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if !(init.weight_std > 0.0 && init.sigma > 0.0 && init.nu > 0.0) {
            return Err(Error::Config(
                "initial std, sigma and nu must be positive".into(),
            ));
        }
        let normal = Normal::new(0.0, init.weight_std).map_err(|e| Error::Config(e.to_string()))?;
        let (v, d) = (vocab.size(), config.dim);
        let mut gaussian =
            || Tensor::matrix(v, d, (0..v * d).map(|_| normal.sample(rng)).collect());
        let mut entries = Vec::new();
        for m in EMBEDDINGS {
            match config.mode {
                Mode::Point => entries.push((m.to_string(), gaussian()?)),
                Mode::Variational => {
                    entries.push((format!("{m}.mu"), gaussian()?));
                    entries.push((
                        format!("{m}.rho_sigma"),
                        Tensor::filled(&[v, d], softplus_inv(init.sigma)),
                    ));
                    entries.push((
                        format!("{m}.rho_nu"),
                        Tensor::vector(vec![softplus_inv(init.nu)]),
                    ));
                }
            }
        }
        entries.push(("W".to_string(), gaussian()?));
        Self::from_parts(config, vocab, ParamStore::new(entries))
    }

    /// Point network whose A, B, C are the posterior means.
    pub fn mean_network(&self) -> Result<MemN2N> {
        if self.config.mode == Mode::Point {
            return Ok(self.clone());
        }
        let mut entries = Vec::new();
        for m in EMBEDDINGS {
            entries.push((
                m.to_string(),
                self.params.require(&format!("{m}.mu"))?.clone(),
            ));
        }
        entries.push(("W".to_string(), self.params.require("W")?.clone()));
        let config = ModelConfig {
            mode: Mode::Point,
            ..self.config
        };
        MemN2N::from_parts(config, self.vocab.clone(), ParamStore::new(entries))
    }

    pub fn positions(&self) -> &Arc<Tensor> {
        &self.positions
    }

    /// Current degrees of freedom of embedding `matrix` ("A", "B", "C").
    pub fn nu(&self, matrix: &str) -> Option<f64> {
        self.params
            .get(&format!("{matrix}.rho_nu"))
            .map(|t| softplus(t.values()[0]))
    }

    /// Posterior of embedding `matrix` as a flat diagonal Student's-t.
    pub fn posterior(&self, matrix: &str) -> Result<TDistParams> {
        if self.config.mode != Mode::Variational {
            return Err(Error::Model("point networks have no posterior".into()));
        }
        let mu = self.params.require(&format!("{matrix}.mu"))?;
        let rho = self.params.require(&format!("{matrix}.rho_sigma"))?;
        let nu = self
            .nu(matrix)
            .ok_or_else(|| Error::Model(format!("missing {matrix}.rho_nu")))?;
        let scale = rho.values().iter().map(|r| softplus(*r).powi(2)).collect();
        TDistParams::new(mu.values().to_vec(), scale, nu)
    }

    /// Divergence of every variational embedding against the prior, via the
    /// plain-`f64` formula.
    pub fn divergences(&self) -> Result<Vec<(String, DivergenceBreakdown)>> {
        if self.config.mode != Mode::Variational {
            return Ok(Vec::new());
        }
        EMBEDDINGS
            .iter()
            .map(|m| {
                Ok((
                    m.to_string(),
                    tmath::t_divergence_closed(&self.posterior(m)?, self.config.prior_nu)?,
                ))
            })
            .collect()
    }

    /// Draws `ε ~ t(0, I, ν + 2)` for each variational embedding, one mixing
    /// variable per matrix. Point networks get an empty noise set.
    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Noise> {
        let mut eps = Vec::new();
        if self.config.mode == Mode::Variational {
            for m in EMBEDDINGS {
                let nu = self
                    .nu(m)
                    .ok_or_else(|| Error::Model(format!("missing {m}.rho_nu")))?;
                let mut t = Tensor::zeros(&[self.vocab.size(), self.config.dim]);
                tmath::fill_student_t(nu + 2.0, t.values_mut(), rng)?;
                eps.push(t);
            }
        }
        Ok(Noise { eps })
    }

    /// Registers every parameter on `tape`, returning leaves in storage order.
    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.params
            .iter()
            .map(|(n, t)| tape.param(n, t.clone()))
            .collect()
    }

    /// Turns parameter leaves into the weight matrices of one forward pass.
    /// Variational embeddings become `μ + sqrt(ν/(ν+2)) σ ⊙ ε`.
    pub fn bind(&self, tape: &mut Tape, vars: &[Var], noise: &Noise) -> Result<BoundWeights> {
        let mut mats = Vec::with_capacity(3);
        match self.config.mode {
            Mode::Point => mats.extend_from_slice(&vars[..3]),
            Mode::Variational => {
                if noise.eps.len() != 3 {
                    return Err(Error::Model(
                        "variational forward pass needs sampled noise".into(),
                    ));
                }
                for (i, eps) in noise.eps.iter().enumerate() {
                    let (mu, rho_s, rho_nu) = (vars[3 * i], vars[3 * i + 1], vars[3 * i + 2]);
                    let sigma = tape.softplus(rho_s)?;
                    let nu = tape.softplus(rho_nu)?;
                    let nu2 = tape.offset(nu, 2.0)?;
                    let inv = tape.recip(nu2)?;
                    let ratio = tape.mul(nu, inv)?;
                    let factor = tape.sqrt(ratio)?;
                    let e = tape.constant(eps.clone());
                    let se = tape.mul(sigma, e)?;
                    let scaled = tape.mul(se, factor)?;
                    mats.push(tape.add(mu, scaled)?);
                }
            }
        }
        let w = *vars
            .last()
            .ok_or_else(|| Error::Model("no parameters".into()))?;
        let w_t = tape.transpose(w)?;
        Ok(BoundWeights {
            a: mats[0],
            b: mats[1],
            c: mats[2],
            w_t,
        })
    }

    fn check_story(&self, story: &EncodedStory) -> Result<()> {
        if story.memory_size != self.config.memory_size
            || story.sentence_len != self.config.sentence_len
        {
            return Err(Error::Model(format!(
                "story encoded as {}×{}, network expects {}×{}",
                story.memory_size,
                story.sentence_len,
                self.config.memory_size,
                self.config.sentence_len
            )));
        }
        Ok(())
    }

    /// Answer distribution for one story; returns the probability node and
    /// the per-hop attention nodes.
    pub fn forward(
        &self,
        tape: &mut Tape,
        w: &BoundWeights,
        story: &EncodedStory,
    ) -> Result<(Var, Vec<Var>)> {
        self.check_story(story)?;
        let mut u = tape.embed(w.b, story.question.clone(), self.positions.clone())?;
        let mut attention = Vec::with_capacity(self.config.hops);
        if story.n_facts == 0 {
            return Err(Error::Model("every memory slot is empty".into()));
        }
        {
            let m = tape.embed(w.a, story.memory.clone(), self.positions.clone())?;
            let c = tape.embed(w.c, story.memory.clone(), self.positions.clone())?;
            let c_t = tape.transpose(c)?;
            let mask = story.slot_mask();
            for _ in 0..self.config.hops {
                let u_t = tape.transpose(u)?;
                let scores = tape.matmul(m, u_t)?;
                let p = tape.softmax_masked(scores, Some(&mask))?;
                let o = tape.matmul(c_t, p)?;
                let o_row = tape.transpose(o)?;
                u = tape.add(u, o_row)?;
                attention.push(p);
            }
        }
        let logits = tape.matmul(u, w.w_t)?;
        let probs = tape.softmax(logits)?;
        Ok((probs, attention))
    }

    /// Mean negative log-likelihood over `batch` plus `kl_scale` times the
    /// summed embedding divergences, recorded on `tape`.
    pub fn objective(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        noise: &Noise,
        batch: &[&EncodedStory],
        kl_scale: f64,
    ) -> Result<(Var, LossParts)> {
        if batch.is_empty() {
            return Err(Error::Model("empty minibatch".into()));
        }
        if !(0.0..=1.0).contains(&kl_scale) {
            return Err(Error::Model(format!("kl_scale {kl_scale} outside [0, 1]")));
        }
        let w = self.bind(tape, vars, noise)?;
        let mut nll_sum: Option<Var> = None;
        for story in batch {
            let (probs, _) = self.forward(tape, &w, story)?;
            let l = tape.nll(probs, story.answer)?;
            nll_sum = Some(match nll_sum {
                None => l,
                Some(acc) => tape.add(acc, l)?,
            });
        }
        let nll = tape.scale(nll_sum.expect("non-empty batch"), 1.0 / batch.len() as f64)?;
        let mut parts = LossParts {
            nll: tape.value(nll).item(),
            ..Default::default()
        };
        let mut total = nll;
        if self.config.mode == Mode::Variational {
            let mut div_sum: Option<Var> = None;
            for i in 0..3 {
                let d = divergence_on_tape(
                    tape,
                    vars[3 * i + 1],
                    vars[3 * i],
                    vars[3 * i + 2],
                    self.config.prior_nu,
                )?;
                div_sum = Some(match div_sum {
                    None => d,
                    Some(acc) => tape.add(acc, d)?,
                });
            }
            let div = div_sum.expect("three embeddings");
            parts.divergence = tape.value(div).item();
            let weighted = tape.scale(div, kl_scale)?;
            total = tape.add(total, weighted)?;
        }
        parts.total = tape.value(total).item();
        Ok((total, parts))
    }

    /// Averages `samples` forward passes (one for point networks). Attention
    /// rows are averaged then renormalized.
    pub fn predict<R: Rng + ?Sized>(
        &self,
        story: &EncodedStory,
        samples: usize,
        rng: &mut R,
    ) -> Result<Prediction> {
        let samples = if self.config.mode == Mode::Point {
            1
        } else {
            samples.max(1)
        };
        let mut probs = vec![0.0; self.vocab.size()];
        let mut hops = vec![vec![0.0; story.n_facts]; self.config.hops];
        for _ in 0..samples {
            let noise = self.sample_noise(rng)?;
            let mut tape = Tape::new();
            let vars: Vec<Var> = self
                .params
                .iter()
                .map(|(_, t)| tape.constant(t.clone()))
                .collect();
            let w = self.bind(&mut tape, &vars, &noise)?;
            let (p, att) = self.forward(&mut tape, &w, story)?;
            for (acc, v) in probs.iter_mut().zip(tape.value(p).values()) {
                *acc += v / samples as f64;
            }
            for (row, a) in hops.iter_mut().zip(&att) {
                for (acc, v) in row.iter_mut().zip(tape.value(*a).values()) {
                    *acc += v;
                }
            }
        }
        for row in &mut hops {
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter_mut().for_each(|v| *v /= total);
            }
        }
        let answer = crate::tensor::argmax(&probs);
        Ok(Prediction {
            probs,
            answer,
            trace: AttentionTrace { hops },
        })
    }

    /// Fraction of stories whose most probable answer is correct.
    pub fn accuracy<R: Rng + ?Sized>(
        &self,
        stories: &[EncodedStory],
        samples: usize,
        rng: &mut R,
    ) -> Result<f64> {
        if stories.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0usize;
        for s in stories {
            if self.predict(s, samples, rng)?.answer == s.answer {
                correct += 1;
            }
        }
        Ok(correct as f64 / stories.len() as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf)
            .map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_checkpoint(&mut bytes.as_slice())
    }

    /// Binary layout, all integers `u32` and reals `f64`, little-endian:
    /// magic, version, mode byte, dim, hops, memory size, sentence length,
    /// prior dof, vocabulary (count then length-prefixed UTF-8 tokens),
    /// parameters (count, then name, rank, dims, values for each).
    pub fn write_checkpoint<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        put_u32(out, CHECKPOINT_VERSION)?;
        out.write_all(&[match self.config.mode {
            Mode::Point => 0,
            Mode::Variational => 1,
        }])?;
        for n in [
            self.config.dim,
            self.config.hops,
            self.config.memory_size,
            self.config.sentence_len,
        ] {
            put_u32(out, n as u32)?;
        }
        out.write_all(&self.config.prior_nu.to_le_bytes())?;
        put_u32(out, self.vocab.size() as u32)?;
        for tok in self.vocab.tokens() {
            put_str(out, tok)?;
        }
        put_u32(out, self.params.len() as u32)?;
        for (name, t) in self.params.iter() {
            put_str(out, name)?;
            put_u32(out, t.shape().len() as u32)?;
            for &d in t.shape() {
                put_u32(out, d as u32)?;
            }
            for v in t.values() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(input: &mut R) -> Result<Self> {
        let mut r = CkptReader { input };
        let mut magic = [0u8; 8];
        r.exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic header".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut mode = [0u8; 1];
        r.exact(&mut mode)?;
        let mode = match mode[0] {
            0 => Mode::Point,
            1 => Mode::Variational,
            m => return Err(Error::Checkpoint(format!("unknown mode byte {m}"))),
        };
        let dim = r.u32()? as usize;
        let hops = r.u32()? as usize;
        let memory_size = r.u32()? as usize;
        let sentence_len = r.u32()? as usize;
        let prior_nu = r.f64()?;
        let n_tokens = r.u32()? as usize;
        let tokens = (0..n_tokens)
            .map(|_| r.string())
            .collect::<Result<Vec<_>>>()?;
        let vocab =
            Vocabulary::from_tokens(tokens).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let n_params = r.u32()? as usize;
        let mut entries = Vec::with_capacity(n_params.min(64));
        for _ in 0..n_params {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            if rank > 4 {
                return Err(Error::Checkpoint(format!("{name}: rank {rank} too large")));
            }
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            if n > 1 << 28 {
                return Err(Error::Checkpoint(format!(
                    "{name}: {n} values is implausible"
                )));
            }
            let values = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let t = Tensor::new(shape, values)
                .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
            entries.push((name, t));
        }
        let mut rest = [0u8; 1];
        if r.input
            .read(&mut rest)
            .map_err(|e| Error::Checkpoint(e.to_string()))?
            != 0
        {
            return Err(Error::Checkpoint("trailing bytes after parameters".into()));
        }
        let config = ModelConfig {
            mode,
            dim,
            hops,
            memory_size,
            sentence_len,
            prior_nu,
        };
        Self::from_parts(config, vocab, ParamStore::new(entries))
            .map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

/// Closed-form divergence of one diagonal Student's-t embedding against the
/// `t(0, I, prior_nu)` prior, as a differentiable scalar.
///
/// `D = Σ_l [Ψ_l/(1-t) (1 + 1/ν) - Ψ_p/(1-t) (1 + (σ_l² + μ_l²)/ν_p)]` with
/// `1/(1-t) = -(ν+1)/2` and `Ψ_l = exp(-2/(ν+1) (ln K(ν) - ln σ_l))`.
pub fn divergence_on_tape(
    tape: &mut Tape,
    rho_sigma: Var,
    mu: Var,
    rho_nu: Var,
    prior_nu: f64,
) -> Result<Var> {
    let psi_p = tmath::psi_prior(prior_nu)?;
    let count = tape.value(mu).len() as f64;
    let sigma = tape.softplus(rho_sigma)?;
    let nu = tape.softplus(rho_nu)?;

    // ln K(ν) = lnΓ((ν+1)/2) - lnΓ(ν/2) - ½ ln(πν)
    let nu1 = tape.offset(nu, 1.0)?;
    let half_nu1 = tape.scale(nu1, 0.5)?;
    let lg_a = tape.lgamma(half_nu1)?;
    let half_nu = tape.scale(nu, 0.5)?;
    let lg_b = tape.lgamma(half_nu)?;
    let pi_nu = tape.scale(nu, std::f64::consts::PI)?;
    let ln_pi_nu = tape.ln(pi_nu)?;
    let half_ln = tape.scale(ln_pi_nu, 0.5)?;
    let diff = tape.sub(lg_a, lg_b)?;
    let ln_k = tape.sub(diff, half_ln)?;

    // Ψ_l = exp((2/(ν+1)) (ln σ_l - ln K))
    let inv_nu1 = tape.recip(nu1)?;
    let coef = tape.scale(inv_nu1, 2.0)?;
    let ln_sigma = tape.ln(sigma)?;
    let centered = tape.sub(ln_sigma, ln_k)?;
    let expo = tape.mul(centered, coef)?;
    let psi = tape.exp(expo)?;
    let psi_sum = tape.sum(psi)?;

    // -(ν+1)/2 (1 + 1/ν) Σ Ψ_l
    let inv_nu = tape.recip(nu)?;
    let one_plus = tape.offset(inv_nu, 1.0)?;
    let prod = tape.mul(nu1, one_plus)?;
    let f1 = tape.scale(prod, -0.5)?;
    let term1 = tape.mul(psi_sum, f1)?;

    // (ν+1)/2 Ψ_p (L + Σ(σ² + μ²)/ν_p)
    let s2 = tape.mul(sigma, sigma)?;
    let m2 = tape.mul(mu, mu)?;
    let moments = tape.add(s2, m2)?;
    let msum = tape.sum(moments)?;
    let inner = tape.scale(msum, 1.0 / prior_nu)?;
    let inner = tape.offset(inner, count)?;
    let f2 = tape.scale(nu1, 0.5 * psi_p)?;
    let term2 = tape.mul(inner, f2)?;
    tape.add(term1, term2)
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"TMEMN2N\0";
const CHECKPOINT_VERSION: u32 = 1;

fn put_u32<W: Write>(out: &mut W, v: u32) -> std::io::Result<()> {
    out.write_all(&v.to_le_bytes())
}

fn put_str<W: Write>(out: &mut W, s: &str) -> std::io::Result<()> {
    put_u32(out, s.len() as u32)?;
    out.write_all(s.as_bytes())
}

struct CkptReader<'a, R: Read> {
    input: &'a mut R,
}

impl<R: Read> CkptReader<'_, R> {
    fn exact(&mut self, buf: &mut [u8]) -> Result<()> {
        self.input
            .read_exact(buf)
            .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        if n > 1 << 20 {
            return Err(Error::Checkpoint(format!(
                "string length {n} is implausible"
            )));
        }
        let mut b = vec![0u8; n];
        self.exact(&mut b)?;
        String::from_utf8(b).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{encode_story, parse_babi, EncodeConfig};
    use crate::tensor::finite_diff_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_data() -> (Vocabulary, Vec<EncodedStory>) {
        let text = "\
1 a b c.
2 d a.
3 b e?\tc\t1
1 e f.
2 f a?\te\t1
";
        let stories = parse_babi(text.as_bytes()).unwrap();
        let vocab = Vocabulary::build(&stories);
        let cfg = EncodeConfig {
            memory_size: 3,
            sentence_len: 4,
        };
        let enc = stories
            .iter()
            .map(|s| encode_story(s, &vocab, cfg).unwrap())
            .collect();
        (vocab, enc)
    }

    fn tiny_model(mode: Mode, seed: u64) -> (MemN2N, Vec<EncodedStory>) {
        let (vocab, enc) = tiny_data();
        assert_eq!(vocab.size(), 7);
        let cfg = ModelConfig {
            mode,
            dim: 3,
            hops: 2,
            memory_size: 3,
            sentence_len: 4,
            prior_nu: 5.0,
        };
        let init = InitConfig {
            weight_std: 0.5,
            sigma: 0.3,
            nu: 6.0,
        };
        let model = MemN2N::init(cfg, vocab, init, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        (model, enc)
    }

    #[test]
    fn zero_hops_rejected() {
        let (vocab, _) = tiny_data();
        let cfg = ModelConfig {
            mode: Mode::Point,
            dim: 3,
            hops: 0,
            memory_size: 3,
            sentence_len: 4,
            prior_nu: 5.0,
        };
        let err = MemN2N::init(
            cfg,
            vocab,
            InitConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Model(_)));
    }

    #[test]
    fn init_values() {
        let (m, _) = tiny_model(Mode::Variational, 1);
        assert!((m.nu("A").unwrap() - 6.0).abs() < 1e-12);
        let post = m.posterior("B").unwrap();
        assert!(post.scale_diag.iter().all(|s| (s - 0.09).abs() < 1e-12));
        assert_eq!(m.params.len(), 10);
        let (p, _) = tiny_model(Mode::Point, 1);
        assert_eq!(p.params.names(), vec!["A", "B", "C", "W"]);
        assert!(p.nu("A").is_none());
    }

    #[test]
    fn probabilities_and_attention_are_normalized() {
        for mode in [Mode::Point, Mode::Variational] {
            let (m, enc) = tiny_model(mode, 2);
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            for s in &enc {
                let pred = m.predict(s, 4, &mut rng).unwrap();
                assert!((pred.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert_eq!(pred.trace.hops.len(), 2);
                for row in &pred.trace.hops {
                    assert_eq!(row.len(), s.n_facts);
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_fact_gets_full_attention() {
        let (m, enc) = tiny_model(Mode::Point, 4);
        let one = &enc[1];
        assert_eq!(one.n_facts, 1);
        let pred = m
            .predict(one, 1, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        for row in &pred.trace.hops {
            assert_eq!(row, &vec![1.0]);
        }
    }

    #[test]
    fn tape_divergence_matches_reference() {
        let (m, _) = tiny_model(Mode::Variational, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // Perturb so the entries differ.
        let mut params = m.params.clone();
        for (_, t) in params.iter_mut() {
            for v in t.values_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        let m = MemN2N::from_parts(m.config, m.vocab.clone(), params).unwrap();
        let reference = m.divergences().unwrap();
        let mut tape = Tape::new();
        let vars = m.register(&mut tape);
        for (i, (_, want)) in reference.iter().enumerate() {
            let d = divergence_on_tape(
                &mut tape,
                vars[3 * i + 1],
                vars[3 * i],
                vars[3 * i + 2],
                5.0,
            )
            .unwrap();
            let got = tape.value(d).item();
            assert!(
                (got - want.total).abs() <= 1e-10 * want.total.abs().max(1.0),
                "{got} vs {}",
                want.total
            );
        }
    }

    #[test]
    fn divergence_is_zero_at_prior() {
        // σ = 1, μ = 0, ν = ν_p gives q = p.
        let mut tape = Tape::new();
        let mu = tape.param("mu", Tensor::zeros(&[4, 2]));
        let rs = tape.param("rs", Tensor::filled(&[4, 2], softplus_inv(1.0)));
        let rn = tape.param("rn", Tensor::vector(vec![softplus_inv(7.0)]));
        let d = divergence_on_tape(&mut tape, rs, mu, rn, 7.0).unwrap();
        assert!(tape.value(d).item().abs() < 1e-9);
    }

    #[test]
    fn objective_gradients_match_finite_differences() {
        for mode in [Mode::Point, Mode::Variational] {
            let (m, enc) = tiny_model(mode, 6);
            let noise = m.sample_noise(&mut ChaCha8Rng::seed_from_u64(7)).unwrap();
            let batch: Vec<&EncodedStory> = enc.iter().collect();
            let report = finite_diff_check(
                |tape, vars| m.objective(tape, vars, &noise, &batch, 0.5).map(|(v, _)| v),
                &m.params.tensors(),
                1e-5,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{mode:?}: {report:?}");
        }
    }

    #[test]
    fn noise_is_reused_not_resampled() {
        let (m, enc) = tiny_model(Mode::Variational, 8);
        let noise = m.sample_noise(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let batch = [&enc[0]];
        let eval = || {
            let mut tape = Tape::new();
            let vars = m.register(&mut tape);
            m.objective(&mut tape, &vars, &noise, &batch, 1.0)
                .unwrap()
                .1
        };
        assert_eq!(eval(), eval());
    }

    #[test]
    fn checkpoint_round_trip() {
        for mode in [Mode::Point, Mode::Variational] {
            let (m, enc) = tiny_model(mode, 10);
            let mut buf = Vec::new();
            m.write_checkpoint(&mut buf).unwrap();
            let back = MemN2N::read_checkpoint(&mut buf.as_slice()).unwrap();
            assert_eq!(back.params, m.params);
            assert_eq!(back.vocab, m.vocab);
            assert_eq!(back.config, m.config);
            let a = m
                .predict(&enc[0], 3, &mut ChaCha8Rng::seed_from_u64(2))
                .unwrap();
            let b = back
                .predict(&enc[0], 3, &mut ChaCha8Rng::seed_from_u64(2))
                .unwrap();
            assert_eq!(a.probs, b.probs);
        }
    }

    #[test]
    fn corrupt_checkpoints_rejected() {
        let (m, _) = tiny_model(Mode::Variational, 11);
        let mut buf = Vec::new();
        m.write_checkpoint(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] ^= 0xff;
        assert!(matches!(
            MemN2N::read_checkpoint(&mut bad.as_slice()),
            Err(Error::Checkpoint(_))
        ));
        let short = &buf[..buf.len() - 3];
        assert!(matches!(
            MemN2N::read_checkpoint(&mut &short[..]),
            Err(Error::Checkpoint(_))
        ));
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(
            MemN2N::read_checkpoint(&mut long.as_slice()),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn mismatched_story_shape_rejected() {
        let (m, _) = tiny_model(Mode::Point, 12);
        let stories = parse_babi("1 a b.\n2 a?\tb\t1\n".as_bytes()).unwrap();
        let s = encode_story(
            &stories[0],
            &m.vocab,
            EncodeConfig {
                memory_size: 5,
                sentence_len: 4,
            },
        )
        .unwrap();
        assert!(m.predict(&s, 1, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn all_nil_sentence_embeds_to_zero() {
        let mut tape = Tape::new();
        let table = tape.constant(Tensor::filled(&[3, 2], 1.0));
        let pos = Arc::new(position_weights(4, 2).unwrap());
        let e = tape.embed(table, vec![0; 4].into(), pos).unwrap();
        assert_eq!(tape.value(e).values(), &[0.0, 0.0]);
    }

    #[test]
    fn two_sentence_embedding_by_hand() {
        // Position rows for J = 2, d = 2 are [0.5, 0.5] and [0.5, 1.0].
        let mut tape = Tape::new();
        let table =
            tape.constant(Tensor::matrix(3, 2, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap());
        let pos = Arc::new(position_weights(2, 2).unwrap());
        let e = tape.embed(table, vec![1, 2, 2, 1].into(), pos).unwrap();
        assert_eq!(tape.value(e).values(), &[0.5, 1.0, 0.5, 0.5]);
    }

    fn hand_network() -> (MemN2N, EncodedStory) {
        let stories = parse_babi("1 p.\n2 q.\n3 r?\tp\t1\n".as_bytes()).unwrap();
        let vocab = Vocabulary::build(&stories);
        // ids: p=1 q=2 r=3; J = 1 gives the position row [0.5, 1].
        let a = Tensor::matrix(4, 2, vec![0.0, 0.0, 20.0, 0.0, 0.0, 3.0, 0.0, 0.0]).unwrap();
        let b = Tensor::matrix(4, 2, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let c = Tensor::matrix(4, 2, vec![0.0; 8]).unwrap();
        let w = Tensor::matrix(4, 2, vec![0.0; 8]).unwrap();
        let params = ParamStore::new(vec![
            ("A".into(), a),
            ("B".into(), b),
            ("C".into(), c),
            ("W".into(), w),
        ]);
        let cfg = ModelConfig {
            mode: Mode::Point,
            dim: 2,
            hops: 1,
            memory_size: 2,
            sentence_len: 1,
            prior_nu: 5.0,
        };
        let net = MemN2N::from_parts(cfg, vocab.clone(), params).unwrap();
        let enc = encode_story(
            &stories[0],
            &vocab,
            EncodeConfig {
                memory_size: 2,
                sentence_len: 1,
            },
        )
        .unwrap();
        (net, enc)
    }

    #[test]
    fn aligned_memory_dominates_attention() {
        let (net, enc) = hand_network();
        let pred = net
            .predict(&enc, 1, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        assert!(pred.trace.hops[0][0] > 0.99, "{:?}", pred.trace);
        assert_eq!(pred.trace.argmax(), vec![0]);
    }

    #[test]
    fn empty_memory_is_an_error() {
        let (net, mut enc) = hand_network();
        enc.n_facts = 0;
        enc.memory = vec![0, 0].into();
        assert!(matches!(
            net.predict(&enc, 1, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::Model(_))
        ));
    }

    #[test]
    fn point_forward_is_bit_stable() {
        let (m, enc) = tiny_model(Mode::Point, 13);
        let a = m
            .predict(&enc[0], 1, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        let b = m
            .predict(&enc[0], 1, &mut ChaCha8Rng::seed_from_u64(99))
            .unwrap();
        assert_eq!(a.probs, b.probs);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn zero_noise_without_divergence_is_baseline_cross_entropy() {
        let (m, enc) = tiny_model(Mode::Variational, 14);
        let base = m.mean_network().unwrap();
        let batch: Vec<&EncodedStory> = enc.iter().collect();
        let eval = |net: &MemN2N| {
            let mut tape = Tape::new();
            let vars = net.register(&mut tape);
            net.objective(&mut tape, &vars, &Noise::zeros(net), &batch, 0.0)
                .unwrap()
                .1
                .total
        };
        assert!((eval(&m) - eval(&base)).abs() < 1e-10);
    }

    #[test]
    fn vanishing_sigma_matches_mean_weights() {
        let (m, enc) = tiny_model(Mode::Variational, 15);
        let mut params = m.params.clone();
        for (name, t) in params.iter_mut() {
            if name.ends_with("rho_sigma") {
                t.values_mut().iter_mut().for_each(|v| *v = -60.0);
            }
        }
        let m = MemN2N::from_parts(m.config, m.vocab.clone(), params).unwrap();
        let base = m.mean_network().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for s in &enc {
            let want = base.predict(s, 1, &mut rng).unwrap().answer;
            for samples in [1, 3, 10] {
                assert_eq!(m.predict(s, samples, &mut rng).unwrap().answer, want);
            }
        }
    }

    #[test]
    fn sample_average_replays() {
        let (m, enc) = tiny_model(Mode::Variational, 16);
        let pred = m
            .predict(&enc[0], 10, &mut ChaCha8Rng::seed_from_u64(21))
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut avg = vec![0.0; m.vocab.size()];
        for _ in 0..10 {
            let noise = m.sample_noise(&mut rng).unwrap();
            let mut tape = Tape::new();
            let vars = m.register(&mut tape);
            let w = m.bind(&mut tape, &vars, &noise).unwrap();
            let (p, _) = m.forward(&mut tape, &w, &enc[0]).unwrap();
            for (a, v) in avg.iter_mut().zip(tape.value(p).values()) {
                *a += v / 10.0;
            }
        }
        for (a, b) in avg.iter().zip(&pred.probs) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn kl_scale_out_of_range() {
        let (m, enc) = tiny_model(Mode::Variational, 17);
        let mut tape = Tape::new();
        let vars = m.register(&mut tape);
        assert!(m
            .objective(&mut tape, &vars, &Noise::zeros(&m), &[&enc[0]], 1.5)
            .is_err());
    }
}
