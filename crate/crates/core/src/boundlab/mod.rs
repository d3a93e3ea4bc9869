//! Tabular verification laboratory for the PAC-bound machinery: exact
//! value/occupancy oracles on small MDPs, total-variation and
//! concentrability computations, pessimistic max-min solves, the
//! sub-optimality decompositions, and numeric lemma/theorem checks.

mod checks;
mod decomp;

pub use checks::*;
pub use decomp::*;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{CoreError, Result};

const STOCHASTIC_TOL: f64 = 1e-12;

/// Per-state action distribution, `pi[s][a]`.
pub type Policy = Vec<Vec<f64>>;

#[derive(Debug, Clone)]
pub struct TabularMDP {
    pub n_states: usize,
    pub n_actions: usize,
    /// `transition[s][a][s']`, each row a distribution.
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `reward[s][a]` with `|reward| <= r_max`.
    pub reward: Vec<Vec<f64>>,
    pub mu0: Vec<f64>,
    pub gamma: f64,
    pub r_max: f64,
}

impl TabularMDP {
    pub fn validate(&self) -> Result<()> {
        if self.transition.len() != self.n_states || self.mu0.len() != self.n_states {
            return Err(CoreError::Argument("transition/mu0 shape mismatch".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(CoreError::Argument("gamma must lie in [0, 1)".into()));
        }
        for s in 0..self.n_states {
            if self.transition[s].len() != self.n_actions {
                return Err(CoreError::Argument("action dimension mismatch".into()));
            }
            for a in 0..self.n_actions {
                let row = &self.transition[s][a];
                let sum: f64 = row.iter().sum();
                if row.iter().any(|&p| p < -STOCHASTIC_TOL)
                    || (sum - 1.0).abs() > 1e-9
                {
                    return Err(CoreError::Argument(format!(
                        "row ({s},{a}) not stochastic (sum {sum})"
                    )));
                }
                if self.reward[s][a].abs() > self.r_max + 1e-12 {
                    return Err(CoreError::Argument(format!(
                        "reward ({s},{a}) exceeds r_max"
                    )));
                }
            }
        }
        let msum: f64 = self.mu0.iter().sum();
        if (msum - 1.0).abs() > 1e-9 || self.mu0.iter().any(|&p| p < 0.0) {
            return Err(CoreError::Argument("mu0 is not a distribution".into()));
        }
        Ok(())
    }

    /// Scalar value under the initial distribution.
    pub fn scalar_value(&self, v: &[f64]) -> f64 {
        self.mu0.iter().zip(v).map(|(m, v)| m * v).sum()
    }

    /// Plain-text tensor dump: dims header then row-major values.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{} {} {} {}\n",
            self.n_states, self.n_actions, self.gamma, self.r_max
        );
        for srow in &self.transition {
            for arow in srow {
                let vals: Vec<String> = arow.iter().map(|v| format!("{v:.17e}")).collect();
                s.push_str(&vals.join(" "));
                s.push('\n');
            }
        }
        for arow in &self.reward {
            let vals: Vec<String> = arow.iter().map(|v| format!("{v:.17e}")).collect();
            s.push_str(&vals.join(" "));
            s.push('\n');
        }
        let vals: Vec<String> = self.mu0.iter().map(|v| format!("{v:.17e}")).collect();
        s.push_str(&vals.join(" "));
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let parse_err = |line: usize, msg: &str| CoreError::Parse {
            line: line + 1,
            msg: msg.to_string(),
        };
        let (hl, header) = lines
            .next()
            .ok_or_else(|| parse_err(0, "empty instance file"))?;
        let head: Vec<&str> = header.split_whitespace().collect();
        if head.len() != 4 {
            return Err(parse_err(hl, "header must be: n_states n_actions gamma r_max"));
        }
        let n_states: usize = head[0].parse().map_err(|_| parse_err(hl, "bad n_states"))?;
        let n_actions: usize = head[1].parse().map_err(|_| parse_err(hl, "bad n_actions"))?;
        let gamma: f64 = head[2].parse().map_err(|_| parse_err(hl, "bad gamma"))?;
        let r_max: f64 = head[3].parse().map_err(|_| parse_err(hl, "bad r_max"))?;
        let mut row = |n: usize| -> Result<Vec<f64>> {
            let (ln, text) = lines
                .next()
                .ok_or_else(|| parse_err(usize::MAX - 1, "truncated instance file"))?;
            let vals: Result<Vec<f64>> = text
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| parse_err(ln, "bad number")))
                .collect();
            let vals = vals?;
            if vals.len() != n {
                return Err(parse_err(ln, "wrong row length"));
            }
            Ok(vals)
        };
        let mut transition = Vec::with_capacity(n_states);
        for _ in 0..n_states {
            let mut per_a = Vec::with_capacity(n_actions);
            for _ in 0..n_actions {
                per_a.push(row(n_states)?);
            }
            transition.push(per_a);
        }
        let mut reward = Vec::with_capacity(n_states);
        for _ in 0..n_states {
            reward.push(row(n_actions)?);
        }
        let mu0 = row(n_states)?;
        let mdp = Self {
            n_states,
            n_actions,
            transition,
            reward,
            mu0,
            gamma,
            r_max,
        };
        mdp.validate()?;
        Ok(mdp)
    }
}

/// Random MDP with Dirichlet-like rows, for randomized checks.
pub fn random_mdp(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    r_max: f64,
    seed: u64,
) -> TabularMDP {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| -f64::ln(rng.gen_range(1e-9..1.0))).collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    };
    let transition = (0..n_states)
        .map(|_| (0..n_actions).map(|_| dist(n_states, &mut rng)).collect())
        .collect();
    let reward = (0..n_states)
        .map(|_| {
            (0..n_actions)
                .map(|_| {
                    if r_max > 0.0 {
                        rng.gen_range(-r_max..r_max)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let mu0 = dist(n_states, &mut rng);
    TabularMDP {
        n_states,
        n_actions,
        transition,
        reward,
        mu0,
        gamma,
        r_max,
    }
}

/// Uniform policy.
pub fn uniform_policy(n_states: usize, n_actions: usize) -> Policy {
    vec![vec![1.0 / n_actions as f64; n_actions]; n_states]
}

fn validate_policy(mdp: &TabularMDP, policy: &Policy) -> Result<()> {
    if policy.len() != mdp.n_states {
        return Err(CoreError::Argument("policy state dimension mismatch".into()));
    }
    for row in policy {
        if row.len() != mdp.n_actions
            || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9
            || row.iter().any(|&p| p < 0.0)
        {
            return Err(CoreError::Argument("policy row not a distribution".into()));
        }
    }
    Ok(())
}

/// Exact policy evaluation: solves `(I - gamma P_pi) V = R_pi` and takes Q
/// from a one-step lookahead. The residual of the linear solve is checked
/// against 1e-10.
pub fn value_iteration(mdp: &TabularMDP, policy: &Policy) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    mdp.validate()?;
    validate_policy(mdp, policy)?;
    let n = mdp.n_states;
    let mut p_pi = DMatrix::zeros(n, n);
    let mut r_pi = DVector::zeros(n);
    for s in 0..n {
        for a in 0..mdp.n_actions {
            let w = policy[s][a];
            r_pi[s] += w * mdp.reward[s][a];
            for sn in 0..n {
                p_pi[(s, sn)] += w * mdp.transition[s][a][sn];
            }
        }
    }
    let system = DMatrix::identity(n, n) - mdp.gamma * &p_pi;
    let v = system
        .clone()
        .lu()
        .solve(&r_pi)
        .ok_or_else(|| CoreError::Argument("singular policy-evaluation system".into()))?;
    let residual = (&system * &v - &r_pi).norm();
    if residual > 1e-10 {
        return Err(CoreError::Argument(format!(
            "policy evaluation residual {residual} too large"
        )));
    }
    let mut q = vec![vec![0.0; mdp.n_actions]; n];
    for s in 0..n {
        for a in 0..mdp.n_actions {
            let future: f64 = (0..n).map(|sn| mdp.transition[s][a][sn] * v[sn]).sum();
            q[s][a] = mdp.reward[s][a] + mdp.gamma * future;
        }
    }
    Ok((v.iter().copied().collect(), q))
}

/// Exact discounted occupancy `d_T^pi(s, a)` via a linear solve:
/// `(I - gamma P_pi^T) d_s = (1 - gamma) mu0`, then `d(s,a) = d_s(s) pi(a|s)`.
pub fn occupancy(mdp: &TabularMDP, policy: &Policy) -> Result<Vec<Vec<f64>>> {
    mdp.validate()?;
    validate_policy(mdp, policy)?;
    let n = mdp.n_states;
    let mut p_pi = DMatrix::zeros(n, n);
    for s in 0..n {
        for a in 0..mdp.n_actions {
            for sn in 0..n {
                p_pi[(s, sn)] += policy[s][a] * mdp.transition[s][a][sn];
            }
        }
    }
    let rhs = DVector::from_iterator(n, mdp.mu0.iter().map(|m| (1.0 - mdp.gamma) * m));
    let system = DMatrix::identity(n, n) - mdp.gamma * p_pi.transpose();
    let d_s = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| CoreError::Argument("singular occupancy system".into()))?;
    let mut d = vec![vec![0.0; mdp.n_actions]; n];
    let mut total = 0.0;
    for s in 0..n {
        for a in 0..mdp.n_actions {
            d[s][a] = d_s[s].max(0.0) * policy[s][a];
            total += d[s][a];
        }
    }
    if (total - 1.0).abs() > 1e-10 {
        return Err(CoreError::Argument(format!(
            "occupancy mass {total} != 1"
        )));
    }
    Ok(d)
}

/// Total variation distance between two distributions over the same support.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(CoreError::Shape {
            expected: p.len(),
            got: q.len(),
            context: "tv_distance",
        });
    }
    for row in [p, q] {
        if (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 || row.iter().any(|&v| v < 0.0) {
            return Err(CoreError::Argument("tv_distance input not a distribution".into()));
        }
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// KL divergence between two tabular rows (natural log); infinite when q has
/// a zero where p does not.
pub fn kl_rows(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            if a <= 0.0 {
                0.0
            } else if b <= 0.0 {
                f64::INFINITY
            } else {
                a * (a / b).ln()
            }
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Divergence {
    /// Squared total variation per row.
    Tv2,
    /// KL per row.
    Kl,
}

/// Finite class of transition tensors sharing the reference model's states,
/// actions, rewards, and initial distribution.
#[derive(Debug, Clone)]
pub struct ModelClass {
    pub models: Vec<TabularMDP>,
    /// Index of the reference (anchor) model inside `models`.
    pub reference: usize,
    pub xi: f64,
    pub divergence: Divergence,
}

impl ModelClass {
    /// Worst-row divergence of `model`'s transitions from the reference.
    pub fn divergence_from_reference(&self, model: &TabularMDP) -> Result<f64> {
        let r = &self.models[self.reference];
        let mut worst: f64 = 0.0;
        for s in 0..r.n_states {
            for a in 0..r.n_actions {
                let d = match self.divergence {
                    Divergence::Tv2 => {
                        tv_distance(&model.transition[s][a], &r.transition[s][a])?.powi(2)
                    }
                    Divergence::Kl => kl_rows(&r.transition[s][a], &model.transition[s][a]),
                };
                worst = worst.max(d);
            }
        }
        Ok(worst)
    }

    pub fn contains(&self, model: &TabularMDP) -> Result<bool> {
        Ok(self.divergence_from_reference(model)? <= self.xi + 1e-12)
    }
}

/// Builds a model class by perturbing the reference model's rows with
/// bounded-TV mixtures and filtering by the xi ball; the reference is always
/// included first.
pub fn build_model_class(
    reference: &TabularMDP,
    count: usize,
    xi: f64,
    seed: u64,
) -> Result<ModelClass> {
    reference.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut class = ModelClass {
        models: vec![reference.clone()],
        reference: 0,
        xi,
        divergence: Divergence::Tv2,
    };
    // per-row TV of an eps mixture toward another distribution is <= eps,
    // so eps = sqrt(xi) keeps every candidate inside the ball
    let eps = xi.sqrt();
    let mut guard = 0;
    while class.models.len() < count && guard < count * 20 {
        guard += 1;
        let mut m = reference.clone();
        for s in 0..m.n_states {
            for a in 0..m.n_actions {
                let raw: Vec<f64> = (0..m.n_states)
                    .map(|_| -f64::ln(rng.gen_range(1e-9..1.0)))
                    .collect();
                let sum: f64 = raw.iter().sum();
                let e = rng.gen_range(0.0..eps);
                for sn in 0..m.n_states {
                    m.transition[s][a][sn] =
                        (1.0 - e) * reference.transition[s][a][sn] + e * raw[sn] / sum;
                }
            }
        }
        if class.contains(&m)? {
            class.models.push(m);
        }
    }
    Ok(class)
}

/// Concentrability coefficient: max over the class of the ratio of expected
/// squared TV under the optimal-policy occupancy vs under the data
/// distribution. Rows where both expectations come out zero are excluded
/// (degenerate 0/0); a zero denominator with a positive numerator is a
/// coverage violation.
pub fn concentrability(
    class: &ModelClass,
    true_mdp: &TabularMDP,
    pi_star: &Policy,
    rho: &[Vec<f64>],
) -> Result<f64> {
    let d_star = occupancy(true_mdp, pi_star)?;
    let mut worst: f64 = 1.0; // degenerate class {T} is 1 by convention
    for model in &class.models {
        let mut num = 0.0;
        let mut den = 0.0;
        for s in 0..true_mdp.n_states {
            for a in 0..true_mdp.n_actions {
                let tv2 = tv_distance(
                    &model.transition[s][a],
                    &true_mdp.transition[s][a],
                )?
                .powi(2);
                num += d_star[s][a] * tv2;
                den += rho[s][a] * tv2;
            }
        }
        if den <= 0.0 {
            if num > 1e-15 {
                return Err(CoreError::Argument(
                    "coverage violation: optimal policy visits rows the data never covers"
                        .into(),
                ));
            }
            continue; // 0/0: excluded
        }
        worst = worst.max(num / den);
    }
    Ok(worst)
}

/// Exact max-min solve over a finite model class and finite policy set:
/// returns the best policy index, its inner-min model index, and the
/// pessimistic scalar value.
pub fn pessimistic_solve(
    class: &ModelClass,
    policies: &[Policy],
) -> Result<(usize, usize, f64)> {
    if class.models.is_empty() {
        return Err(CoreError::Argument("empty model class".into()));
    }
    if policies.is_empty() {
        return Err(CoreError::Argument("empty policy set".into()));
    }
    let mut best: Option<(usize, usize, f64)> = None;
    for (pi_idx, pi) in policies.iter().enumerate() {
        let mut inner: Option<(usize, f64)> = None;
        for (m_idx, m) in class.models.iter().enumerate() {
            let (v, _) = value_iteration(m, pi)?;
            let val = m.scalar_value(&v);
            if inner.map_or(true, |(_, best_v)| val < best_v) {
                inner = Some((m_idx, val));
            }
        }
        let (m_idx, val) = inner.unwrap();
        if best.map_or(true, |(_, _, best_v)| val > best_v) {
            best = Some((pi_idx, m_idx, val));
        }
    }
    Ok(best.unwrap())
}

/// Inner minimization only: the value-minimizing model for a fixed policy.
pub fn inner_min(class: &ModelClass, policy: &Policy) -> Result<(usize, f64)> {
    if class.models.is_empty() {
        return Err(CoreError::Argument("empty model class".into()));
    }
    let mut best: Option<(usize, f64)> = None;
    for (m_idx, m) in class.models.iter().enumerate() {
        let (v, _) = value_iteration(m, policy)?;
        let val = m.scalar_value(&v);
        if best.map_or(true, |(_, bv)| val < bv) {
            best = Some((m_idx, val));
        }
    }
    Ok(best.unwrap())
}

/// All deterministic policies of a small MDP (n_actions^n_states of them).
pub fn deterministic_policies(n_states: usize, n_actions: usize) -> Vec<Policy> {
    let total = n_actions.pow(n_states as u32);
    let mut out = Vec::with_capacity(total);
    for code in 0..total {
        let mut pi = vec![vec![0.0; n_actions]; n_states];
        let mut c = code;
        for s in 0..n_states {
            pi[s][c % n_actions] = 1.0;
            c /= n_actions;
        }
        out.push(pi);
    }
    out
}

/// Log-linear policy class: `pi(a|s) proportional to exp(psi . phi[s][a])`.
#[derive(Debug, Clone)]
pub struct LogLinearPolicy {
    pub psi: Vec<f64>,
    /// `features[s][a]` of fixed dimension.
    pub features: Vec<Vec<Vec<f64>>>,
}

impl LogLinearPolicy {
    pub fn dim(&self) -> usize {
        self.psi.len()
    }

    pub fn phi_max(&self) -> f64 {
        self.features
            .iter()
            .flatten()
            .map(|f| f.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn probs(&self, s: usize) -> Vec<f64> {
        let logits: Vec<f64> = self.features[s]
            .iter()
            .map(|f| f.iter().zip(&self.psi).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }

    pub fn policy(&self) -> Policy {
        (0..self.features.len()).map(|s| self.probs(s)).collect()
    }

    /// Closed-form score: `phi[s][a] - E_{a' ~ pi(.|s)} phi[s][a']`.
    pub fn grad_log(&self, s: usize, a: usize) -> Vec<f64> {
        let p = self.probs(s);
        let mut g = self.features[s][a].clone();
        for (ap, fa) in p.iter().zip(&self.features[s]) {
            for (gk, fk) in g.iter_mut().zip(fa) {
                *gk -= ap * fk;
            }
        }
        g
    }

    pub fn log_prob(&self, s: usize, a: usize) -> f64 {
        self.probs(s)[a].ln()
    }
}

/// Random feature set with norms capped at `phi_max`.
pub fn random_features(
    n_states: usize,
    n_actions: usize,
    dim: usize,
    phi_max: f64,
    seed: u64,
) -> Vec<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_states)
        .map(|_| {
            (0..n_actions)
                .map(|_| {
                    let raw: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
                    let scale = rng.gen_range(0.2..1.0) * phi_max / norm;
                    raw.into_iter().map(|v| v * scale).collect()
                })
                .collect()
        })
        .collect()
}
