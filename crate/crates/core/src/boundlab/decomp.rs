//! Exact sub-optimality and gradient-gap decompositions for the tabular
//! pessimistic policy-iteration analysis.

use super::{
    inner_min, occupancy, value_iteration, LogLinearPolicy, ModelClass, Policy, TabularMDP,
};
use crate::{CoreError, Result};

/// Three-way split of the per-iterate regret
/// `V_{T,pi*} - V_{T,pi_t}` against the pessimistic inner minimum.
#[derive(Debug, Clone, Copy)]
pub struct DeltaTerms {
    /// `V_{T,pi*} - min_phi V_{phi,pi*}`: pessimism gap at the comparator.
    pub a: f64,
    /// `min_phi V_{phi,pi*} - min_phi V_{phi,pi_t}`: pessimistic regret.
    pub b: f64,
    /// `min_phi V_{phi,pi_t} - V_{T,pi_t}`: pessimism gap at the iterate,
    /// non-positive whenever the true model lies in the class.
    pub c: f64,
}

impl DeltaTerms {
    pub fn total(&self) -> f64 {
        self.a + self.b + self.c
    }
}

/// Splits the true regret of a single iterate `pi_t` against `pi_star`
/// into the three pessimism terms. Exact by construction; `total()` equals
/// `V_{T,pi*} - V_{T,pi_t}` to solver precision.
pub fn delta_terms_single(
    true_mdp: &TabularMDP,
    class: &ModelClass,
    pi_star: &Policy,
    pi_t: &Policy,
) -> Result<DeltaTerms> {
    let (v_star, _) = value_iteration(true_mdp, pi_star)?;
    let (v_t, _) = value_iteration(true_mdp, pi_t)?;
    let v_true_star = true_mdp.scalar_value(&v_star);
    let v_true_t = true_mdp.scalar_value(&v_t);
    let (_, pess_star) = inner_min(class, pi_star)?;
    let (_, pess_t) = inner_min(class, pi_t)?;
    Ok(DeltaTerms {
        a: v_true_star - pess_star,
        b: pess_star - pess_t,
        c: pess_t - v_true_t,
    })
}

/// Averages the three-way split over a policy sequence `pi_0..pi_H`, so that
/// `total()` equals the average true regret `(1/(H+1)) sum_t (V_{T,pi*} - V_{T,pi_t})`.
pub fn delta_decomposition(
    true_mdp: &TabularMDP,
    class: &ModelClass,
    pi_star: &Policy,
    iterates: &[Policy],
) -> Result<DeltaTerms> {
    if iterates.is_empty() {
        return Err(CoreError::Argument("empty policy sequence".into()));
    }
    let mut acc = DeltaTerms { a: 0.0, b: 0.0, c: 0.0 };
    for pi_t in iterates {
        let d = delta_terms_single(true_mdp, class, pi_star, pi_t)?;
        acc.a += d.a;
        acc.b += d.b;
        acc.c += d.c;
    }
    let n = iterates.len() as f64;
    Ok(DeltaTerms {
        a: acc.a / n,
        b: acc.b / n,
        c: acc.c / n,
    })
}

/// Three-way split of the comparator advantage under the pessimistic model's
/// optimal-policy occupancy, used to bound the pessimistic regret term via
/// approximate natural gradients.
#[derive(Debug, Clone, Copy)]
pub struct GammaTerms {
    /// Advantage residual after subtracting the linear score approximation,
    /// under the pessimistic model's comparator occupancy.
    pub a: f64,
    /// Occupancy transfer of the score term from pessimistic to true model.
    pub b: f64,
    /// Score term under the true model's comparator occupancy.
    pub c: f64,
}

impl GammaTerms {
    pub fn total(&self) -> f64 {
        self.a + self.b + self.c
    }
}

/// Least-squares fit of the advantage `Q - V` onto the policy score
/// `grad_psi log pi_t`, weighted by the occupancy `d`; the solution norm is
/// clipped at `w_max`.
pub fn fit_advantage_weights(
    mdp: &TabularMDP,
    policy: &LogLinearPolicy,
    d: &[Vec<f64>],
    w_max: f64,
) -> Result<Vec<f64>> {
    let pi = policy.policy();
    let (v, q) = value_iteration(mdp, &pi)?;
    let dim = policy.dim();
    let mut gram = nalgebra::DMatrix::zeros(dim, dim);
    let mut rhs = nalgebra::DVector::zeros(dim);
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let w = d[s][a];
            if w <= 0.0 {
                continue;
            }
            let g = policy.grad_log(s, a);
            let adv = q[s][a] - v[s];
            for i in 0..dim {
                rhs[i] += w * adv * g[i];
                for j in 0..dim {
                    gram[(i, j)] += w * g[i] * g[j];
                }
            }
        }
    }
    // ridge for rank-deficient scores
    for i in 0..dim {
        gram[(i, i)] += 1e-10;
    }
    let sol = gram
        .lu()
        .solve(&rhs)
        .ok_or_else(|| CoreError::Argument("singular score Gram matrix".into()))?;
    let mut w: Vec<f64> = sol.iter().copied().collect();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > w_max {
        for v in &mut w {
            *v *= w_max / norm;
        }
    }
    Ok(w)
}

/// Evaluates the gradient-gap split for iterate `pi_t` (log-linear) with
/// comparator `pi_star`, pessimistic model `t_tilde` (the inner min for
/// `pi_t`), and fitted weights `w`. The three terms telescope:
/// `a + b + c = E_{d_{T~}^{pi*}}[A_{T~,pi_t}] = (1-gamma)(V_{T~,pi*} - V_{T~,pi_t})`.
pub fn gamma_decomposition(
    true_mdp: &TabularMDP,
    t_tilde: &TabularMDP,
    pi_star: &Policy,
    pi_t: &LogLinearPolicy,
    w: &[f64],
) -> Result<GammaTerms> {
    let pi_t_rows = pi_t.policy();
    let (v_tilde, q_tilde) = value_iteration(t_tilde, &pi_t_rows)?;
    let d_tilde = occupancy(t_tilde, pi_star)?;
    let d_true = occupancy(true_mdp, pi_star)?;
    let score_dot = |s: usize, a: usize| -> f64 {
        pi_t.grad_log(s, a)
            .iter()
            .zip(w)
            .map(|(g, w)| g * w)
            .sum()
    };
    let mut a_term = 0.0;
    let mut score_tilde = 0.0;
    let mut score_true = 0.0;
    for s in 0..true_mdp.n_states {
        for aa in 0..true_mdp.n_actions {
            let adv = q_tilde[s][aa] - v_tilde[s];
            let sd = score_dot(s, aa);
            a_term += d_tilde[s][aa] * (adv - sd);
            score_tilde += d_tilde[s][aa] * sd;
            score_true += d_true[s][aa] * sd;
        }
    }
    Ok(GammaTerms {
        a: a_term,
        b: score_tilde - score_true,
        c: score_true,
    })
}
