//! Per-agent soft actor-critic on mixed real/synthetic batches.
//!
//! The policy is a tanh-squashed diagonal Gaussian over the action box;
//! twin critics regress toward the soft Bellman target with the minimum of
//! the two target networks; the entropy temperature is auto-tuned toward a
//! target entropy of `-action_dim`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dynamics::{ReplayBuffer, Transition};
use crate::nn::{
    adam_step, Activation, AdamState, Mlp, MlpCache, ParamVector, LOG_VAR_MAX, LOG_VAR_MIN,
};
use crate::{CoreError, Result};

/// Reward magnitude cap used by the Q-boundedness guardrail.
pub const R_MAX: f64 = 45.0;

/// Soft update coefficient for the target critics.
pub const TAU: f64 = 0.01;

const LOG_TEMP_MIN: f64 = -10.0;
const LOG_TEMP_MAX: f64 = 2.0;
const SQUASH_EPS: f64 = 1e-6;

/// Policy, twin critics, target copies, and the entropy temperature for one
/// agent.
#[derive(Debug, Clone)]
pub struct AgentNets {
    policy: Mlp,
    q1: Mlp,
    q2: Mlp,
    q1_target: Mlp,
    q2_target: Mlp,
    log_temperature: f64,
    adam_policy: AdamState,
    adam_q1: AdamState,
    adam_q2: AdamState,
    state_dim: usize,
    action_dim: usize,
    action_low: f64,
    action_high: f64,
}

/// Cached forward state of one pathwise action draw, for input-gradient
/// backprop through the policy.
pub struct ActionPathCache {
    cache: MlpCache,
    noise: Vec<f64>,
    tanh_u: Vec<f64>,
    sigma: Vec<f64>,
    lv_in_range: Vec<bool>,
}

impl AgentNets {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        action_low: f64,
        action_high: f64,
        seed: u64,
    ) -> Result<Self> {
        if action_high <= action_low {
            return Err(CoreError::Argument("action_high must exceed action_low".into()));
        }
        let mut pdims = vec![state_dim];
        pdims.extend_from_slice(hidden);
        pdims.push(2 * action_dim);
        let mut qdims = vec![state_dim + action_dim];
        qdims.extend_from_slice(hidden);
        qdims.push(1);
        let policy = Mlp::new(&pdims, Activation::Tanh, seed)?;
        let q1 = Mlp::new(&qdims, Activation::Tanh, seed.wrapping_add(1))?;
        let q2 = Mlp::new(&qdims, Activation::Tanh, seed.wrapping_add(2))?;
        let q1_target = q1.clone();
        let q2_target = q2.clone();
        Ok(Self {
            adam_policy: AdamState::for_params(policy.params()),
            adam_q1: AdamState::for_params(q1.params()),
            adam_q2: AdamState::for_params(q2.params()),
            policy,
            q1,
            q2,
            q1_target,
            q2_target,
            log_temperature: -1.0, // alpha0 = e^-1
            state_dim,
            action_dim,
            action_low,
            action_high,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn temperature(&self) -> f64 {
        self.log_temperature.exp()
    }

    pub fn set_log_temperature(&mut self, lt: f64) {
        self.log_temperature = lt.clamp(LOG_TEMP_MIN, LOG_TEMP_MAX);
    }

    pub fn log_temperature(&self) -> f64 {
        self.log_temperature
    }

    pub fn policy(&self) -> &Mlp {
        &self.policy
    }

    pub fn policy_mut(&mut self) -> &mut Mlp {
        &mut self.policy
    }

    pub fn q_nets(&self) -> (&Mlp, &Mlp) {
        (&self.q1, &self.q2)
    }

    pub fn q_nets_mut(&mut self) -> (&mut Mlp, &mut Mlp) {
        (&mut self.q1, &mut self.q2)
    }

    fn span(&self) -> f64 {
        self.action_high - self.action_low
    }

    fn squash(&self, u: f64) -> f64 {
        self.action_low + self.span() * 0.5 * (u.tanh() + 1.0)
    }

    /// Mean and clamped log-variance of the pre-squash Gaussian at `s`.
    fn policy_head(&self, s: &[f64]) -> Result<(MlpCache, Vec<f64>, Vec<f64>, Vec<bool>)> {
        let cache = self.policy.forward_cached(s)?;
        let out = cache.output();
        let d = self.action_dim;
        let mean = out[..d].to_vec();
        let mut lv = Vec::with_capacity(d);
        let mut in_range = Vec::with_capacity(d);
        for &raw in &out[d..2 * d] {
            lv.push(raw.clamp(LOG_VAR_MIN, LOG_VAR_MAX));
            in_range.push((LOG_VAR_MIN..=LOG_VAR_MAX).contains(&raw));
        }
        Ok((cache, mean, lv, in_range))
    }

    /// Action for state `s`. Stochastic mode draws pre-squash noise from the
    /// rng; deterministic mode squashes the mean.
    pub fn act(&self, s: &[f64], deterministic: bool, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let (_, mean, lv, _) = self.policy_head(s)?;
        let mut a = Vec::with_capacity(self.action_dim);
        for i in 0..self.action_dim {
            let u = if deterministic {
                mean[i]
            } else {
                let z: f64 = StandardNormal.sample(rng);
                mean[i] + (0.5 * lv[i]).exp() * z
            };
            a.push(self.squash(u));
        }
        Ok(a)
    }

    /// Pathwise action with explicit pre-squash noise, plus the cache needed
    /// to backprop a downstream gradient to the state input.
    pub fn action_pathwise(&self, s: &[f64], noise: &[f64]) -> Result<(Vec<f64>, ActionPathCache)> {
        let (cache, mean, lv, lv_in_range) = self.policy_head(s)?;
        let sigma: Vec<f64> = lv.iter().map(|v| (0.5 * v).exp()).collect();
        let mut a = Vec::with_capacity(self.action_dim);
        let mut tanh_u = Vec::with_capacity(self.action_dim);
        for i in 0..self.action_dim {
            let u = mean[i] + sigma[i] * noise[i];
            let t = u.tanh();
            tanh_u.push(t);
            a.push(self.action_low + self.span() * 0.5 * (t + 1.0));
        }
        Ok((
            a,
            ActionPathCache {
                cache,
                noise: noise.to_vec(),
                tanh_u,
                sigma,
                lv_in_range,
            },
        ))
    }

    /// Backprop `grad_a` through the squash and the policy network, returning
    /// the gradient with respect to the state input (policy params held
    /// fixed).
    pub fn action_pathwise_backward(
        &self,
        path: &ActionPathCache,
        grad_a: &[f64],
    ) -> Result<Vec<f64>> {
        let d = self.action_dim;
        let mut head_grad = vec![0.0; 2 * d];
        for i in 0..d {
            // da/du = span/2 * (1 - tanh(u)^2)
            let da_du = self.span() * 0.5 * (1.0 - path.tanh_u[i] * path.tanh_u[i]);
            let g_u = grad_a[i] * da_du;
            head_grad[i] = g_u; // du/dmean = 1
            if path.lv_in_range[i] {
                head_grad[d + i] = g_u * 0.5 * path.sigma[i] * path.noise[i];
            }
        }
        let (_, grad_s) = self.policy.backward_cached(&path.cache, &head_grad)?;
        Ok(grad_s)
    }

    /// Minimum of the twin online critics plus its input gradients.
    pub fn q_min_with_input_grad(&self, s: &[f64], a: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let input: Vec<f64> = s.iter().chain(a.iter()).copied().collect();
        let c1 = self.q1.forward_cached(&input)?;
        let c2 = self.q2.forward_cached(&input)?;
        let (q, net, cache) = if c1.output()[0] <= c2.output()[0] {
            (c1.output()[0], &self.q1, &c1)
        } else {
            (c2.output()[0], &self.q2, &c2)
        };
        let (_, gin) = net.backward_cached(cache, &[1.0])?;
        Ok((
            q,
            gin[..self.state_dim].to_vec(),
            gin[self.state_dim..].to_vec(),
        ))
    }

    fn q_value(net: &Mlp, s: &[f64], a: &[f64]) -> Result<f64> {
        let input: Vec<f64> = s.iter().chain(a.iter()).copied().collect();
        Ok(net.forward(&input)?[0])
    }

    /// Log-density of the squashed action drawn with the given noise
    /// (pre-squash `u = mean + sigma * noise`).
    fn log_prob_from_path(&self, path: &ActionPathCache, lv: &[f64]) -> f64 {
        let mut lp = 0.0;
        for i in 0..self.action_dim {
            lp += -0.5 * path.noise[i] * path.noise[i]
                - 0.5 * lv[i]
                - 0.5 * (2.0 * std::f64::consts::PI).ln();
            lp -= (self.span() * 0.5).ln();
            lp -= (1.0 - path.tanh_u[i] * path.tanh_u[i] + SQUASH_EPS).ln();
        }
        lp
    }

    /// Log-density of an arbitrary squashed action under the current policy.
    pub fn log_prob(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        let (_, mean, lv, _) = self.policy_head(s)?;
        let mut lp = 0.0;
        for i in 0..self.action_dim {
            let frac = ((a[i] - self.action_low) / self.span() * 2.0 - 1.0)
                .clamp(-1.0 + 1e-9, 1.0 - 1e-9);
            let u = frac.atanh();
            let sigma = (0.5 * lv[i]).exp();
            let z = (u - mean[i]) / sigma;
            lp += -0.5 * z * z - 0.5 * lv[i] - 0.5 * (2.0 * std::f64::consts::PI).ln();
            lp -= (self.span() * 0.5).ln();
            lp -= (1.0 - frac * frac + SQUASH_EPS).ln();
        }
        Ok(lp)
    }

    /// theta_target += tau * (theta - theta_target) for both critics.
    pub fn soft_update(&mut self, tau: f64) {
        for (online, target) in [(&self.q1, &mut self.q1_target), (&self.q2, &mut self.q2_target)]
        {
            let ov = online.params().values();
            let tv = target.params_mut().values_mut();
            for (t, o) in tv.iter_mut().zip(ov) {
                *t += tau * (o - *t);
            }
        }
    }

    pub fn target_gap(&self) -> f64 {
        let mut sq = 0.0;
        for (online, target) in [(&self.q1, &self.q1_target), (&self.q2, &self.q2_target)] {
            for (o, t) in online.params().values().iter().zip(target.params().values()) {
                sq += (o - t) * (o - t);
            }
        }
        sq.sqrt()
    }
}

/// Mixed real/synthetic minibatch.
#[derive(Debug, Clone)]
pub struct MixedBatch {
    pub real: Vec<Transition>,
    pub synthetic: Vec<Transition>,
    pub ratio: f64,
    /// Set when the requested composition could not be honored (empty model
    /// buffer fallback or insufficient data).
    pub warning: Option<&'static str>,
}

impl MixedBatch {
    pub fn len(&self) -> usize {
        self.real.len() + self.synthetic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.real.iter().chain(self.synthetic.iter())
    }
}

/// Samples a `ratio`-real mixed batch of `size` transitions. An empty model
/// buffer falls back to all-real with a warning.
pub fn mix_batches(
    real_buf: &ReplayBuffer,
    model_buf: &ReplayBuffer,
    ratio: f64,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<MixedBatch> {
    if real_buf.is_empty() {
        return Err(CoreError::NotReady { need: 1, have: 0 });
    }
    if model_buf.is_empty() || ratio >= 1.0 {
        let real = real_buf.sample(size, rng);
        let warning = if model_buf.is_empty() && ratio < 1.0 {
            Some("model buffer empty, fell back to all-real batch")
        } else if real.len() < size {
            Some("insufficient data, returned smaller batch")
        } else {
            None
        };
        return Ok(MixedBatch {
            real,
            synthetic: Vec::new(),
            ratio,
            warning,
        });
    }
    let n_real = ((ratio * size as f64).round() as usize).min(size);
    let real = real_buf.sample(n_real, rng);
    let synthetic = model_buf.sample(size - real.len().min(size), rng);
    let warning = if real.len() + synthetic.len() < size {
        Some("insufficient data, returned smaller batch")
    } else {
        None
    };
    Ok(MixedBatch {
        real,
        synthetic,
        ratio,
        warning,
    })
}

/// Soft Bellman regression loss for both critics and its parameter
/// gradients. The target uses the frozen target networks and is independent
/// of the online critic parameters.
pub fn critic_loss_and_grad(
    nets: &AgentNets,
    batch: &MixedBatch,
    gamma: f64,
    seed: u64,
) -> Result<(f64, ParamVector, ParamVector)> {
    if batch.is_empty() {
        return Err(CoreError::Argument("critic update on empty batch".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha = nets.temperature();
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut g1 = ParamVector::zeros_like(nets.q1.params());
    let mut g2 = ParamVector::zeros_like(nets.q2.params());
    for t in batch.iter() {
        let noise: Vec<f64> = (0..nets.action_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let (a_next, path) = nets.action_pathwise(&t.s_next, &noise)?;
        let (_, _, lv, _) = nets.policy_head(&t.s_next)?;
        let log_pi = nets.log_prob_from_path(&path, &lv);
        let q1t = AgentNets::q_value(&nets.q1_target, &t.s_next, &a_next)?;
        let q2t = AgentNets::q_value(&nets.q2_target, &t.s_next, &a_next)?;
        let target = t.r + gamma * (q1t.min(q2t) - alpha * log_pi);
        if !target.is_finite() {
            return Err(CoreError::NonFinite("critic target"));
        }
        let input: Vec<f64> = t.s.iter().chain(t.a.iter()).copied().collect();
        for (net, grad) in [(&nets.q1, &mut g1), (&nets.q2, &mut g2)] {
            let cache = net.forward_cached(&input)?;
            let q = cache.output()[0];
            let resid = q - target;
            loss += resid * resid / (2.0 * n);
            let (g, _) = net.backward_cached(&cache, &[resid / n])?;
            grad.axpy(1.0, &g);
        }
    }
    Ok((loss, g1, g2))
}

/// One critic regression step plus the target soft update. Returns the mean
/// squared TD loss. A non-finite target rejects the batch without touching
/// the networks.
pub fn critic_update(
    nets: &mut AgentNets,
    batch: &MixedBatch,
    gamma: f64,
    lr: f64,
    seed: u64,
) -> Result<f64> {
    let (loss, g1, g2) = critic_loss_and_grad(nets, batch, gamma, seed)?;
    let mut p1 = nets.q1.params().clone();
    adam_step(&mut p1, &g1, &mut nets.adam_q1, lr)?;
    nets.q1.set_params(p1)?;
    let mut p2 = nets.q2.params().clone();
    adam_step(&mut p2, &g2, &mut nets.adam_q2, lr)?;
    nets.q2.set_params(p2)?;
    nets.soft_update(TAU);
    Ok(loss)
}

/// Actor loss `E[alpha * log pi(a|s) - min Q(s, a)]` with reparameterized
/// actions, and its gradient with respect to the policy parameters.
pub fn actor_loss_and_grad(
    nets: &AgentNets,
    states: &[Vec<f64>],
    seed: u64,
) -> Result<(f64, ParamVector)> {
    if states.is_empty() {
        return Err(CoreError::Argument("actor update on empty batch".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha = nets.temperature();
    let d = nets.action_dim;
    let n = states.len() as f64;
    let mut loss = 0.0;
    let mut grad = ParamVector::zeros_like(nets.policy.params());
    for s in states {
        let noise: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (cache, mean, lv, lv_in_range) = nets.policy_head(s)?;
        let sigma: Vec<f64> = lv.iter().map(|v| (0.5 * v).exp()).collect();
        let mut a = Vec::with_capacity(d);
        let mut tanh_u = Vec::with_capacity(d);
        let mut log_pi = 0.0;
        for i in 0..d {
            let u = mean[i] + sigma[i] * noise[i];
            let t = u.tanh();
            tanh_u.push(t);
            a.push(nets.action_low + nets.span() * 0.5 * (t + 1.0));
            log_pi += -0.5 * noise[i] * noise[i]
                - 0.5 * lv[i]
                - 0.5 * (2.0 * std::f64::consts::PI).ln()
                - (nets.span() * 0.5).ln()
                - (1.0 - t * t + SQUASH_EPS).ln();
        }
        let (q, _, grad_a) = nets.q_min_with_input_grad(s, &a)?;
        loss += (alpha * log_pi - q) / n;
        // cotangent on the policy head outputs (mean, raw log_var)
        let mut head = vec![0.0; 2 * d];
        for i in 0..d {
            let t = tanh_u[i];
            let sech2 = 1.0 - t * t;
            let da_du = nets.span() * 0.5 * sech2;
            // d log_pi / du from the squash correction
            let dlp_du = 2.0 * t * sech2 / (sech2 + SQUASH_EPS);
            let du_dlv = 0.5 * sigma[i] * noise[i];
            let g_u = alpha * dlp_du - grad_a[i] * da_du;
            head[i] = g_u / n;
            if lv_in_range[i] {
                head[d + i] = (g_u * du_dlv - alpha * 0.5) / n;
            }
        }
        let (g, _) = nets.policy.backward_cached(&cache, &head)?;
        grad.axpy(1.0, &g);
    }
    Ok((loss, grad))
}

/// One Adam step on the actor loss. A non-finite loss skips the step.
pub fn actor_update(
    nets: &mut AgentNets,
    states: &[Vec<f64>],
    lr: f64,
    seed: u64,
) -> Result<f64> {
    let (loss, grad) = actor_loss_and_grad(nets, states, seed)?;
    if !loss.is_finite() {
        return Ok(loss);
    }
    let mut p = nets.policy.params().clone();
    adam_step(&mut p, &grad, &mut nets.adam_policy, lr)?;
    nets.policy.set_params(p)?;
    Ok(loss)
}

/// Mean log-density of fresh policy samples at the batch states; the
/// negative of this is the entropy estimate used by the temperature update.
pub fn mean_log_pi(nets: &AgentNets, states: &[Vec<f64>], seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = nets.action_dim;
    let mut acc = 0.0;
    for s in states {
        let noise: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (_, path) = nets.action_pathwise(s, &noise)?;
        let (_, _, lv, _) = nets.policy_head(s)?;
        acc += nets.log_prob_from_path(&path, &lv);
    }
    Ok(acc / states.len() as f64)
}

/// Gradient step on `log alpha` toward the target entropy `-action_dim`.
/// Returns the new temperature.
pub fn temperature_update(
    nets: &mut AgentNets,
    states: &[Vec<f64>],
    lr: f64,
    seed: u64,
) -> Result<f64> {
    let target_entropy = -(nets.action_dim as f64);
    let lp = mean_log_pi(nets, states, seed)?;
    let alpha = nets.temperature();
    // J(alpha) = E[-alpha (log pi + target)]; dJ/dlog_alpha = -alpha (lp + target)
    let grad = -alpha * (lp + target_entropy);
    nets.set_log_temperature(nets.log_temperature - lr * grad);
    Ok(nets.temperature())
}

/// Counts batch states whose learned Q value leaves the theoretical band
/// `[-R_max/(1-gamma), R_max/(1-gamma)]` widened by `slack` (fractional).
pub fn q_bound_violations(
    nets: &AgentNets,
    batch: &MixedBatch,
    r_max: f64,
    gamma: f64,
    slack: f64,
) -> Result<usize> {
    let bound = r_max / (1.0 - gamma) * (1.0 + slack);
    let mut violations = 0;
    for t in batch.iter() {
        for net in [&nets.q1, &nets.q2] {
            let q = AgentNets::q_value(net, &t.s, &t.a)?;
            if q.abs() > bound {
                violations += 1;
            }
        }
    }
    Ok(violations)
}
