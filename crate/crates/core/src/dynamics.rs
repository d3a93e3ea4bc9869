//! Gaussian dynamics/reward model learned by maximum likelihood, the KL
//! constraint set anchored at the MLE model, and synthetic rollouts.
//!
//! The model maps `(s, a)` to a diagonal Gaussian over the concatenation
//! `(s_next, r)`. Inputs and targets are normalized by per-feature buffer
//! statistics; the negative log-likelihood and the KL constraint are
//! evaluated in normalized space (the normalizer is shared between the MLE
//! model and every perturbed candidate, and KL is invariant under a shared
//! affine rescaling).

use std::collections::HashSet;
use std::collections::VecDeque;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::nn::{
    adam_step, reparam_sample, Activation, AdamState, DiagGaussian, Mlp, ParamVector, LOG_VAR_MAX,
    LOG_VAR_MIN,
};
use crate::{CoreError, Result};

/// One `(s, a, r, s')` experience tuple. The `(episode_id, step_id,
/// source_agent)` triple is the deduplication key for cross-agent exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub episode_id: u32,
    pub step_id: u32,
    pub source_agent: u32,
}

impl Transition {
    pub fn key(&self) -> (u32, u32, u32) {
        (self.episode_id, self.step_id, self.source_agent)
    }
}

/// FIFO ring buffer of transitions with key-based deduplication.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    keys: HashSet<(u32, u32, u32)>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            keys: HashSet::new(),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends a transition unless its key is already present. Returns true
    /// if the transition was stored. Oldest entries are evicted at capacity.
    pub fn push(&mut self, t: Transition) -> bool {
        if !self.keys.insert(t.key()) {
            return false;
        }
        if self.items.len() == self.capacity {
            if let Some(old) = self.items.pop_front() {
                self.keys.remove(&old.key());
            }
        }
        self.items.push_back(t);
        true
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    /// Uniform sample without replacement of up to `n` transitions.
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<Transition> {
        let n = n.min(self.items.len());
        let mut idx: Vec<usize> = (0..self.items.len()).collect();
        // partial Fisher-Yates
        for i in 0..n {
            let j = rng.gen_range(i..idx.len());
            idx.swap(i, j);
        }
        idx[..n].iter().map(|&i| self.items[i].clone()).collect()
    }

    /// Transitions recorded by this agent in the given episode, in step order.
    pub fn episode_tail(&self, episode_id: u32, agent: u32) -> Vec<Transition> {
        let mut tail: Vec<Transition> = self
            .items
            .iter()
            .filter(|t| t.episode_id == episode_id && t.source_agent == agent)
            .cloned()
            .collect();
        tail.sort_by_key(|t| t.step_id);
        tail
    }

    pub fn dump_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        let (sd, ad) = match self.items.front() {
            Some(t) => (t.s.len(), t.a.len()),
            None => (0, 0),
        };
        let mut header = String::from("episode,step,agent");
        for i in 0..sd {
            header.push_str(&format!(",s{i}"));
        }
        for i in 0..ad {
            header.push_str(&format!(",a{i}"));
        }
        header.push_str(",r");
        for i in 0..sd {
            header.push_str(&format!(",sn{i}"));
        }
        writeln!(w, "{header}")?;
        for t in &self.items {
            let mut row = format!("{},{},{}", t.episode_id, t.step_id, t.source_agent);
            for v in &t.s {
                row.push_str(&format!(",{v}"));
            }
            for v in &t.a {
                row.push_str(&format!(",{v}"));
            }
            row.push_str(&format!(",{}", t.r));
            for v in &t.s_next {
                row.push_str(&format!(",{v}"));
            }
            writeln!(w, "{row}")?;
        }
        Ok(())
    }

    pub fn load_csv(path: &Path, capacity: usize) -> Result<Self> {
        let r = BufReader::new(std::fs::File::open(path)?);
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| CoreError::Parse {
                line: 1,
                msg: "empty file".into(),
            })??;
        let cols: Vec<&str> = header.split(',').collect();
        let is_indexed = |c: &str, prefix: &str| {
            c.strip_prefix(prefix)
                .is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
        };
        let sd = cols.iter().filter(|c| is_indexed(c, "s")).count();
        let ad = cols.iter().filter(|c| is_indexed(c, "a")).count();
        let mut buf = ReplayBuffer::new(capacity);
        for (li, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            let expected = 3 + sd + ad + 1 + sd;
            if f.len() != expected {
                return Err(CoreError::Parse {
                    line: li + 2,
                    msg: format!("expected {expected} fields, got {}", f.len()),
                });
            }
            let parse_f = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| CoreError::Parse {
                    line: li + 2,
                    msg: format!("bad float {s}"),
                })
            };
            let parse_u = |s: &str| -> Result<u32> {
                s.parse().map_err(|_| CoreError::Parse {
                    line: li + 2,
                    msg: format!("bad integer {s}"),
                })
            };
            let mut k = 3;
            let s: Vec<f64> = f[k..k + sd].iter().map(|v| parse_f(v)).collect::<Result<_>>()?;
            k += sd;
            let a: Vec<f64> = f[k..k + ad].iter().map(|v| parse_f(v)).collect::<Result<_>>()?;
            k += ad;
            let r = parse_f(f[k])?;
            k += 1;
            let s_next: Vec<f64> = f[k..k + sd].iter().map(|v| parse_f(v)).collect::<Result<_>>()?;
            buf.push(Transition {
                s,
                a,
                r,
                s_next,
                episode_id: parse_u(f[0])?,
                step_id: parse_u(f[1])?,
                source_agent: parse_u(f[2])?,
            });
        }
        Ok(buf)
    }
}

/// Per-feature affine normalization statistics for inputs `(s, a)` and
/// targets `(s_next, r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub in_mean: Vec<f64>,
    pub in_std: Vec<f64>,
    pub t_mean: Vec<f64>,
    pub t_std: Vec<f64>,
}

const STD_FLOOR: f64 = 1e-6;

impl Normalizer {
    pub fn identity(input_dim: usize, target_dim: usize) -> Self {
        Self {
            in_mean: vec![0.0; input_dim],
            in_std: vec![1.0; input_dim],
            t_mean: vec![0.0; target_dim],
            t_std: vec![1.0; target_dim],
        }
    }

    pub fn from_buffer(buffer: &ReplayBuffer) -> Result<Self> {
        let first = buffer
            .iter()
            .next()
            .ok_or_else(|| CoreError::Argument("empty buffer for normalizer".into()))?;
        let in_dim = first.s.len() + first.a.len();
        let t_dim = first.s_next.len() + 1;
        let n = buffer.len() as f64;
        let mut in_mean = vec![0.0; in_dim];
        let mut t_mean = vec![0.0; t_dim];
        for t in buffer.iter() {
            for (i, v) in t.s.iter().chain(t.a.iter()).enumerate() {
                in_mean[i] += v / n;
            }
            for (i, v) in t.s_next.iter().chain(std::iter::once(&t.r)).enumerate() {
                t_mean[i] += v / n;
            }
        }
        let mut in_var = vec![0.0; in_dim];
        let mut t_var = vec![0.0; t_dim];
        for t in buffer.iter() {
            for (i, v) in t.s.iter().chain(t.a.iter()).enumerate() {
                in_var[i] += (v - in_mean[i]).powi(2) / n;
            }
            for (i, v) in t.s_next.iter().chain(std::iter::once(&t.r)).enumerate() {
                t_var[i] += (v - t_mean[i]).powi(2) / n;
            }
        }
        Ok(Self {
            in_std: in_var.iter().map(|v| v.sqrt().max(STD_FLOOR)).collect(),
            t_std: t_var.iter().map(|v| v.sqrt().max(STD_FLOOR)).collect(),
            in_mean,
            t_mean,
        })
    }

    pub fn norm_input(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        s.iter()
            .chain(a.iter())
            .enumerate()
            .map(|(i, v)| (v - self.in_mean[i]) / self.in_std[i])
            .collect()
    }

    pub fn norm_target(&self, s_next: &[f64], r: f64) -> Vec<f64> {
        s_next
            .iter()
            .chain(std::iter::once(&r))
            .enumerate()
            .map(|(i, v)| (v - self.t_mean[i]) / self.t_std[i])
            .collect()
    }
}

/// Diagonal-Gaussian dynamics/reward model `T_phi(s', r | s, a)`.
#[derive(Debug, Clone)]
pub struct DynamicsModel {
    net: Mlp,
    normalizer: Normalizer,
    state_dim: usize,
    action_dim: usize,
}

impl DynamicsModel {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        normalizer: Normalizer,
        seed: u64,
    ) -> Result<Self> {
        let target_dim = state_dim + 1;
        let mut dims = vec![state_dim + action_dim];
        dims.extend_from_slice(hidden);
        dims.push(2 * target_dim);
        Ok(Self {
            net: Mlp::new(&dims, Activation::Tanh, seed)?,
            normalizer,
            state_dim,
            action_dim,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn target_dim(&self) -> usize {
        self.state_dim + 1
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn params(&self) -> &ParamVector {
        self.net.params()
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        self.net.set_params(params)
    }

    /// Predictive Gaussian over the normalized target `(s_next, r)`.
    pub fn predict_normalized(&self, s: &[f64], a: &[f64]) -> Result<DiagGaussian> {
        let out = self.net.forward(&self.normalizer.norm_input(s, a))?;
        let d = self.target_dim();
        DiagGaussian::new(out[..d].to_vec(), out[d..].to_vec())
    }

    /// Predictive Gaussian over the raw (denormalized) target `(s_next, r)`.
    pub fn predict(&self, s: &[f64], a: &[f64]) -> Result<DiagGaussian> {
        let g = self.predict_normalized(s, a)?;
        let d = self.target_dim();
        let mut mean = Vec::with_capacity(d);
        let mut log_var = Vec::with_capacity(d);
        for i in 0..d {
            mean.push(self.normalizer.t_mean[i] + self.normalizer.t_std[i] * g.mean[i]);
            log_var.push(g.log_var[i] + 2.0 * self.normalizer.t_std[i].ln());
        }
        Ok(DiagGaussian { mean, log_var })
    }

    /// Reparameterized sample of `(s_next, r)` with explicit noise, plus the
    /// cache needed to backprop through the draw.
    pub fn predict_path(&self, s: &[f64], a: &[f64], noise: &[f64]) -> Result<(Vec<f64>, PredictPathCache)> {
        let d = self.target_dim();
        if noise.len() != d {
            return Err(CoreError::Shape {
                expected: d,
                got: noise.len(),
                context: "predict_path noise",
            });
        }
        let cache = self.net.forward_cached(&self.normalizer.norm_input(s, a))?;
        let out = cache.output();
        let mut y = Vec::with_capacity(d);
        let mut std = Vec::with_capacity(d);
        let mut lv_in_range = Vec::with_capacity(d);
        for i in 0..d {
            let raw = out[d + i];
            let lv = raw.clamp(crate::nn::LOG_VAR_MIN, crate::nn::LOG_VAR_MAX)
                + 2.0 * self.normalizer.t_std[i].ln();
            let sd = (0.5 * lv).exp();
            let mean = self.normalizer.t_mean[i] + self.normalizer.t_std[i] * out[i];
            y.push(mean + sd * noise[i]);
            std.push(sd);
            lv_in_range.push((crate::nn::LOG_VAR_MIN..=crate::nn::LOG_VAR_MAX).contains(&raw));
        }
        Ok((
            y,
            PredictPathCache {
                cache,
                noise: noise.to_vec(),
                std,
                lv_in_range,
            },
        ))
    }

    /// Backprop a gradient on the sampled `(s_next, r)` through the draw,
    /// the denormalization, and the network. Returns the gradient on the
    /// model parameters and on the raw `(s, a)` inputs.
    pub fn predict_path_backward(
        &self,
        path: &PredictPathCache,
        grad_y: &[f64],
    ) -> Result<(ParamVector, Vec<f64>, Vec<f64>)> {
        let d = self.target_dim();
        let mut head = vec![0.0; 2 * d];
        for i in 0..d {
            head[i] = grad_y[i] * self.normalizer.t_std[i];
            if path.lv_in_range[i] {
                head[d + i] = grad_y[i] * 0.5 * path.std[i] * path.noise[i];
            }
        }
        let (pgrad, gin) = self.net.backward_cached(&path.cache, &head)?;
        // undo the input normalization: x_j = (u_j - mu_j) / sd_j
        let mut g_raw: Vec<f64> = gin
            .iter()
            .enumerate()
            .map(|(j, g)| g / self.normalizer.in_std[j])
            .collect();
        let g_a = g_raw.split_off(self.state_dim);
        Ok((pgrad, g_raw, g_a))
    }
}

/// Forward cache of one reparameterized model draw.
pub struct PredictPathCache {
    cache: crate::nn::MlpCache,
    noise: Vec<f64>,
    std: Vec<f64>,
    lv_in_range: Vec<bool>,
}

/// Closed-form KL divergence between two diagonal Gaussians, summed over
/// dimensions.
pub fn kl_gaussian(p: &DiagGaussian, q: &DiagGaussian) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(CoreError::Shape {
            expected: p.dim(),
            got: q.dim(),
            context: "kl_gaussian",
        });
    }
    let mut kl = 0.0;
    for i in 0..p.dim() {
        let vp = p.log_var[i].exp();
        let vq = q.log_var[i].exp();
        let dm = p.mean[i] - q.mean[i];
        kl += (vp + dm * dm) / (2.0 * vq) + 0.5 * (q.log_var[i] - p.log_var[i]) - 0.5;
    }
    Ok(kl.max(0.0))
}

/// Reference MLE model, frozen anchor batch, and radius `xi` defining the
/// feasible model set.
#[derive(Debug, Clone)]
pub struct ConstraintSpec {
    pub mle_model: DynamicsModel,
    pub anchor_batch: Vec<Transition>,
    pub xi: f64,
}

impl ConstraintSpec {
    pub fn new(mle_model: DynamicsModel, anchor_batch: Vec<Transition>, xi: f64) -> Result<Self> {
        if anchor_batch.is_empty() {
            return Err(CoreError::Argument("anchor batch must be non-empty".into()));
        }
        if xi <= 0.0 {
            return Err(CoreError::Argument(format!("xi must be positive, got {xi}")));
        }
        Ok(Self {
            mle_model,
            anchor_batch,
            xi,
        })
    }
}

/// Mean KL between the candidate's and the MLE model's predictive
/// Gaussians over the anchor batch. Evaluated in normalized space; both
/// models share the MLE normalizer so this equals the raw-space KL.
pub fn empirical_kl(model: &DynamicsModel, spec: &ConstraintSpec) -> Result<f64> {
    let mut total = 0.0;
    for t in &spec.anchor_batch {
        let p = model.predict_normalized(&t.s, &t.a)?;
        let q = spec.mle_model.predict_normalized(&t.s, &t.a)?;
        total += kl_gaussian(&p, &q)?;
    }
    Ok(total / spec.anchor_batch.len() as f64)
}

/// Membership in the constraint set (closed: boundary counts as inside).
pub fn in_constraint_set(model: &DynamicsModel, spec: &ConstraintSpec) -> Result<bool> {
    Ok(empirical_kl(model, spec)? <= spec.xi)
}

/// Gaussian negative log-likelihood of a batch in normalized target space.
/// Returns the mean per-sample loss and its gradient w.r.t. the model
/// parameters. Clamped log-variance coordinates receive zero gradient.
pub fn nll_loss(model: &DynamicsModel, batch: &[Transition]) -> Result<(f64, ParamVector)> {
    if batch.is_empty() {
        return Err(CoreError::Argument("nll_loss on empty batch".into()));
    }
    let d = model.target_dim();
    let mut total = 0.0;
    let mut grad = ParamVector::zeros_like(model.params());
    let scale = 1.0 / batch.len() as f64;
    for t in batch {
        let input = model.normalizer.norm_input(&t.s, &t.a);
        let cache = model.net.forward_cached(&input)?;
        let out = cache.output();
        let e = model.normalizer.norm_target(&t.s_next, t.r);
        let mut cot = vec![0.0; 2 * d];
        for i in 0..d {
            let mu = out[i];
            let raw_lv = out[d + i];
            let lv = raw_lv.clamp(LOG_VAR_MIN, LOG_VAR_MAX);
            let inv_var = (-lv).exp();
            let resid = e[i] - mu;
            total += scale
                * (0.5 * resid * resid * inv_var
                    + 0.5 * lv
                    + 0.5 * (2.0 * std::f64::consts::PI).ln());
            cot[i] = scale * (mu - e[i]) * inv_var;
            if (LOG_VAR_MIN..=LOG_VAR_MAX).contains(&raw_lv) {
                cot[d + i] = scale * (0.5 - 0.5 * resid * resid * inv_var);
            }
        }
        let (g, _) = model.net.backward_cached(&cache, &cot)?;
        grad.axpy(1.0, &g);
    }
    Ok((total, grad))
}

/// Training configuration for [`fit_mle`].
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub hidden: Vec<usize>,
    pub train_steps: usize,
    pub minibatch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256, 256],
            train_steps: 1000,
            minibatch: 512,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Fits the Gaussian MLE model on the buffer by Adam over mini-batches.
/// Guarantees the returned model's buffer NLL does not exceed the freshly
/// initialized model's.
pub fn fit_mle(buffer: &ReplayBuffer, cfg: &FitConfig) -> Result<DynamicsModel> {
    if buffer.len() < cfg.minibatch {
        return Err(CoreError::NotReady {
            need: cfg.minibatch,
            have: buffer.len(),
        });
    }
    let first = buffer.iter().next().unwrap();
    let state_dim = first.s.len();
    let action_dim = first.a.len();
    let normalizer = Normalizer::from_buffer(buffer)?;
    let mut model = DynamicsModel::new(state_dim, action_dim, &cfg.hidden, normalizer, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    // fixed evaluation subset for the monotonicity contract
    let eval: Vec<Transition> = buffer.sample(buffer.len().min(2048), &mut rng);
    let (initial_nll, _) = nll_loss(&model, &eval)?;
    let initial_params = model.params().clone();
    let mut adam = AdamState::for_params(model.params());
    for _ in 0..cfg.train_steps {
        let batch = buffer.sample(cfg.minibatch, &mut rng);
        let (_, grad) = nll_loss(&model, &batch)?;
        let mut params = model.params().clone();
        adam_step(&mut params, &grad, &mut adam, cfg.lr)?;
        model.set_params(params)?;
    }
    let (final_nll, _) = nll_loss(&model, &eval)?;
    if final_nll > initial_nll {
        model.set_params(initial_params)?;
    }
    Ok(model)
}

/// Outcome counters for a batch of synthetic rollouts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RolloutStats {
    pub transitions: usize,
    pub truncated: usize,
}

/// Generates `l`-step synthetic rollouts from each start state, sampling
/// transitions by reparameterization from the model and actions from the
/// given policy. A non-finite prediction truncates that rollout and is
/// counted in the stats.
pub fn rollout<P>(
    model: &DynamicsModel,
    mut policy: P,
    start_states: &[Vec<f64>],
    l_rollout: usize,
    source_agent: u32,
    seed: u64,
) -> Result<(Vec<Transition>, RolloutStats)>
where
    P: FnMut(&[f64], &mut ChaCha8Rng) -> Vec<f64>,
{
    if l_rollout == 0 {
        return Err(CoreError::Argument("l_rollout must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(start_states.len() * l_rollout);
    let mut stats = RolloutStats::default();
    let d = model.target_dim();
    for (ri, start) in start_states.iter().enumerate() {
        let mut s = start.clone();
        for step in 0..l_rollout {
            let a = policy(&s, &mut rng);
            let g = model.predict(&s, &a)?;
            let noise: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let e = reparam_sample(&g, &noise)?;
            if e.iter().any(|v| !v.is_finite()) {
                stats.truncated += 1;
                break;
            }
            let s_next = e[..d - 1].to_vec();
            let r = e[d - 1];
            out.push(Transition {
                s: s.clone(),
                a,
                r,
                s_next: s_next.clone(),
                episode_id: u32::MAX,
                step_id: (ri * l_rollout + step) as u32,
                source_agent,
            });
            stats.transitions += 1;
            s = s_next;
        }
    }
    Ok((out, stats))
}
