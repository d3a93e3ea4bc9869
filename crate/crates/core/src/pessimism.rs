//! Pessimistic model selection: projected gradient descent over dynamics
//! model parameters inside the KL constraint set, minimizing a pathwise
//! estimate of the current policy's value under the model.
//!
//! The objective rolls the policy through the model for a short horizon with
//! reparameterized transitions and bootstraps the tail with the minimum of
//! the twin critics, so its gradient with respect to the model parameters is
//! computed by backpropagation through time.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::agent::AgentNets;
use crate::dynamics::{empirical_kl, in_constraint_set, ConstraintSpec, DynamicsModel};
use crate::nn::ParamVector;
use crate::{CoreError, Result};

const MAX_HALVINGS: usize = 20;

/// Candidate reported after the PGD iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateMode {
    /// Iterate with the smallest objective.
    Best,
    /// Coordinate-mean of all iterates, re-projected to feasibility.
    Average,
    /// Last iterate.
    Final,
}

impl std::str::FromStr for CandidateMode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "best" => Ok(Self::Best),
            "average" | "avg" => Ok(Self::Average),
            "final" => Ok(Self::Final),
            other => Err(CoreError::Config(format!(
                "unknown candidate mode '{other}' (expected best|average|final)"
            ))),
        }
    }
}

/// One recorded PGD iterate.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub params: ParamVector,
    pub objective: f64,
    pub feasible: bool,
    pub kl: f64,
}

/// Full record of a PGD run.
#[derive(Debug, Clone)]
pub struct PgdTrace {
    pub candidates: Vec<Candidate>,
    pub step_size: f64,
    pub max_iters: usize,
    /// Steps where backtracking exhausted its halvings.
    pub stalls: usize,
    /// Iterates skipped because the objective went non-finite.
    pub skipped: usize,
    /// Set when every iterate was invalid and the MLE model was returned.
    pub degraded: bool,
}

impl PgdTrace {
    /// CSV rows `iter,objective,feasible,kl`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,objective,feasible,kl\n");
        for (i, c) in self.candidates.iter().enumerate() {
            s.push_str(&format!(
                "{},{:.12e},{},{:.12e}\n",
                i + 1,
                c.objective,
                c.feasible,
                c.kl
            ));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct PgdConfig {
    pub step_size: f64,
    pub max_iters: usize,
    pub horizon: usize,
    pub gamma: f64,
    pub mode: CandidateMode,
    pub seed: u64,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            step_size: 1e-3,
            max_iters: 10,
            horizon: 8,
            gamma: 0.98,
            mode: CandidateMode::Best,
            seed: 0,
        }
    }
}

/// Result of one objective evaluation. Invalid evaluations (non-finite
/// intermediates) carry a zero gradient so the iterate can be skipped.
#[derive(Debug, Clone)]
pub struct ObjectiveEval {
    pub value: f64,
    pub grad: ParamVector,
    pub valid: bool,
}

/// Pathwise value estimate of the policy under `model`, averaged over the
/// start states, with its gradient with respect to the model parameters.
///
/// Per start state: `sum_{j<h} gamma^j r_j + gamma^h min(Q1,Q2)(s_h, pi(s_h))`
/// where transitions are reparameterized draws from the model and actions
/// reparameterized draws from the policy, with noise fixed by `seed`.
pub fn pessimism_objective(
    model: &DynamicsModel,
    nets: &AgentNets,
    start_states: &[Vec<f64>],
    horizon: usize,
    gamma: f64,
    seed: u64,
) -> Result<ObjectiveEval> {
    if horizon == 0 {
        return Err(CoreError::Argument("pessimism horizon must be >= 1".into()));
    }
    if start_states.is_empty() {
        return Err(CoreError::Argument("no start states for pessimism objective".into()));
    }
    let sd = model.state_dim();
    let ad = model.action_dim();
    let td = model.target_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = start_states.len() as f64;
    let mut value = 0.0;
    let mut grad = ParamVector::zeros_like(model.params());
    let invalid = || ObjectiveEval {
        value: f64::NAN,
        grad: ParamVector::zeros_like(model.params()),
        valid: false,
    };
    for s0 in start_states {
        if s0.len() != sd {
            return Err(CoreError::Shape {
                expected: sd,
                got: s0.len(),
                context: "pessimism start state",
            });
        }
        // forward pass, keeping per-step caches for BPTT
        let mut states = vec![s0.clone()];
        let mut action_paths = Vec::with_capacity(horizon);
        let mut model_paths = Vec::with_capacity(horizon);
        let mut rollout_value = 0.0;
        let mut ok = true;
        for j in 0..horizon {
            let noise_a: Vec<f64> = (0..ad).map(|_| StandardNormal.sample(&mut rng)).collect();
            let (a, apath) = nets.action_pathwise(&states[j], &noise_a)?;
            let noise_m: Vec<f64> = (0..td).map(|_| StandardNormal.sample(&mut rng)).collect();
            let (y, mpath) = model.predict_path(&states[j], &a, &noise_m)?;
            if !y.iter().all(|v| v.is_finite()) {
                ok = false;
                break;
            }
            rollout_value += gamma.powi(j as i32) * y[sd];
            states.push(y[..sd].to_vec());
            action_paths.push(apath);
            model_paths.push(mpath);
        }
        if !ok {
            return Ok(invalid());
        }
        let noise_h: Vec<f64> = (0..ad).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (a_h, apath_h) = nets.action_pathwise(&states[horizon], &noise_h)?;
        let (q, gq_s, gq_a) = nets.q_min_with_input_grad(&states[horizon], &a_h)?;
        rollout_value += gamma.powi(horizon as i32) * q;
        if !rollout_value.is_finite() {
            return Ok(invalid());
        }
        value += rollout_value / n;

        // backward pass over time
        let gp_s = nets.action_pathwise_backward(&apath_h, &gq_a)?;
        let gh = gamma.powi(horizon as i32);
        let mut g_s: Vec<f64> = gq_s
            .iter()
            .zip(&gp_s)
            .map(|(a, b)| gh * (a + b))
            .collect();
        for j in (0..horizon).rev() {
            let mut g_y = g_s.clone();
            g_y.push(gamma.powi(j as i32)); // reward coordinate
            let (pgrad, g_s_model, g_a_model) =
                model.predict_path_backward(&model_paths[j], &g_y)?;
            grad.axpy(1.0 / n, &pgrad);
            let g_s_policy = nets.action_pathwise_backward(&action_paths[j], &g_a_model)?;
            g_s = g_s_model
                .iter()
                .zip(&g_s_policy)
                .map(|(a, b)| a + b)
                .collect();
        }
    }
    if !value.is_finite() || !grad.is_finite() {
        return Ok(invalid());
    }
    Ok(ObjectiveEval {
        value,
        grad,
        valid: true,
    })
}

/// One projected gradient step. The raw step is kept if it stays in the
/// constraint set; otherwise the step is halved toward `current` (which must
/// be feasible) up to 20 times. Returns the next model, the number of
/// halvings used, and whether backtracking stalled (returning `current`).
pub fn pgd_step(
    current: &DynamicsModel,
    grad: &ParamVector,
    step_size: f64,
    spec: &ConstraintSpec,
) -> Result<(DynamicsModel, usize, bool)> {
    let mut candidate = current.clone();
    let mut params = current.params().clone();
    params.axpy(-step_size, grad);
    candidate.set_params(params)?;
    if in_constraint_set(&candidate, spec)? {
        return Ok((candidate, 0, false));
    }
    for k in 1..=MAX_HALVINGS {
        let scale = 0.5_f64.powi(k as i32);
        let mut p = current.params().clone();
        p.axpy(-step_size * scale, grad);
        candidate.set_params(p)?;
        if in_constraint_set(&candidate, spec)? {
            return Ok((candidate, k, false));
        }
    }
    Ok((current.clone(), MAX_HALVINGS, true))
}

/// PGD from the MLE model with a caller-supplied objective; the public entry
/// point wires in [`pessimism_objective`]. Returns the selected model per
/// `mode` and the full trace.
pub fn run_pgd_with<F>(
    spec: &ConstraintSpec,
    cfg: &PgdConfig,
    mut objective: F,
) -> Result<(DynamicsModel, PgdTrace)>
where
    F: FnMut(&DynamicsModel) -> Result<ObjectiveEval>,
{
    if cfg.max_iters == 0 {
        return Err(CoreError::Argument("PGD needs at least one iteration".into()));
    }
    let mut trace = PgdTrace {
        candidates: Vec::new(),
        step_size: cfg.step_size,
        max_iters: cfg.max_iters,
        stalls: 0,
        skipped: 0,
        degraded: false,
    };
    let mut current = spec.mle_model.clone();
    let mut eval = objective(&current)?;
    for _ in 0..cfg.max_iters {
        if !eval.valid {
            trace.skipped += 1;
            break; // zero gradient: further steps would not move
        }
        let (next, _halvings, stalled) = pgd_step(&current, &eval.grad, cfg.step_size, spec)?;
        if stalled {
            trace.stalls += 1;
        }
        let next_eval = objective(&next)?;
        if next_eval.valid {
            trace.candidates.push(Candidate {
                params: next.params().clone(),
                objective: next_eval.value,
                feasible: true,
                kl: empirical_kl(&next, spec)?,
            });
            current = next;
            eval = next_eval;
        } else {
            trace.skipped += 1;
            // keep the previous iterate and retry from there; with the same
            // gradient the step would repeat, so stop instead
            break;
        }
    }
    if trace.candidates.is_empty() {
        trace.degraded = true;
        return Ok((spec.mle_model.clone(), trace));
    }
    let best_idx = trace
        .candidates
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.objective.total_cmp(&b.1.objective))
        .map(|(i, _)| i)
        .unwrap();
    let selected_params = match cfg.mode {
        CandidateMode::Best => trace.candidates[best_idx].params.clone(),
        CandidateMode::Final => trace.candidates.last().unwrap().params.clone(),
        CandidateMode::Average => {
            let mut avg = ParamVector::zeros_like(spec.mle_model.params());
            let n = trace.candidates.len() as f64;
            for c in &trace.candidates {
                avg.axpy(1.0 / n, &c.params);
            }
            // the mean of feasible points can be infeasible; backtrack
            // toward the best candidate
            let best = &trace.candidates[best_idx].params;
            let mut probe = spec.mle_model.clone();
            probe.set_params(avg.clone())?;
            if in_constraint_set(&probe, spec)? {
                avg
            } else {
                let mut chosen = best.clone();
                for k in 1..=MAX_HALVINGS {
                    let w = 0.5_f64.powi(k as i32);
                    // point at fraction w from best toward avg
                    let mut p = best.clone();
                    p.scale(1.0 - w);
                    p.axpy(w, &avg);
                    probe.set_params(p.clone())?;
                    if in_constraint_set(&probe, spec)? {
                        chosen = p;
                        break;
                    }
                }
                chosen
            }
        }
    };
    let mut selected = spec.mle_model.clone();
    selected.set_params(selected_params)?;
    debug_assert!(in_constraint_set(&selected, spec)?);
    Ok((selected, trace))
}

/// PGD over the dynamics model parameters minimizing the pathwise policy
/// value; all iterates use common random numbers so their objectives are
/// directly comparable.
pub fn run_pgd(
    spec: &ConstraintSpec,
    nets: &AgentNets,
    start_states: &[Vec<f64>],
    cfg: &PgdConfig,
) -> Result<(DynamicsModel, PgdTrace)> {
    run_pgd_with(spec, cfg, |model| {
        pessimism_objective(model, nets, start_states, cfg.horizon, cfg.gamma, cfg.seed)
    })
}
