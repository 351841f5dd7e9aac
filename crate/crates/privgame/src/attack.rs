//! Adversary strategies against a known obfuscation mechanism.
//!
//! The optimal attack minimizes the adversary's expected estimation error
//! given the prior; its closed-form twin places all mass on the per-
//! observation argmin and achieves the same objective. The Bayesian attack
//! is the posterior baseline. The prior-free variants optimize conditional
//! error aggregates and exist to evaluate differentially private mechanisms
//! without assuming a prior.

use thiserror::Error;

use crate::lp::{LinearProgram, LpError, LpStatus, Rel, Sense, SolverOptions};
use crate::model::{Attack, Matrix, Mechanism, MetricSet, ModelError, Prior};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("attack model error: {0}")]
    Model(#[from] ModelError),
    #[error("attack solver failure: {0}")]
    Solver(#[from] LpError),
    #[error("attack LP returned {0:?}, expected an optimum")]
    UnexpectedStatus(LpStatus),
}

fn check_dims(prior: Option<&Prior>, mech: &Mechanism, metrics: &MetricSet) -> Result<(), AttackError> {
    let n = mech.secrets().len();
    if let Some(p) = prior {
        if p.len() != n {
            return Err(ModelError::DimensionMismatch(
                "prior and mechanism secret spaces differ".into(),
            )
            .into());
        }
    }
    if metrics.privacy_dist.rows() != n {
        return Err(ModelError::DimensionMismatch(
            "privacy_dist does not match the secret space".into(),
        )
        .into());
    }
    Ok(())
}

/// Adversary's weight on estimate `s_hat` after observing `o`:
/// sum_s pi(s) p(o|s) d(s_hat, s), optionally without the prior factor.
fn estimate_weight(
    prior: Option<&Prior>,
    mech: &Mechanism,
    metrics: &MetricSet,
    o: usize,
    s_hat: usize,
) -> f64 {
    let n = mech.secrets().len();
    let mut acc = 0.0;
    for s in 0..n {
        let mass = match prior {
            Some(p) => p.probs()[s] * mech.prob(s, o),
            None => mech.prob(s, o),
        };
        if mass != 0.0 {
            acc += mass * metrics.privacy_dist.get(s_hat, s);
        }
    }
    acc
}

fn attack_from_values(
    mech: &Mechanism,
    values: &[f64],
    y_vars: usize,
) -> Result<Attack, AttackError> {
    let m = mech.observables().len();
    let n = mech.secrets().len();
    debug_assert_eq!(values.len(), m * n + y_vars);
    let mut rows = Matrix::zeros(m, n);
    for o in 0..m {
        let mut sum = 0.0;
        for s_hat in 0..n {
            let v = values[o * n + s_hat].max(0.0);
            rows.set(o, s_hat, v);
            sum += v;
        }
        for v in rows.row_mut(o) {
            *v /= sum;
        }
    }
    Ok(Attack::new(
        mech.observables().clone(),
        mech.secrets().clone(),
        rows,
    )?)
}

fn stochastic_rows(lp: &mut LinearProgram, m: usize, n: usize) {
    let mut terms = Vec::with_capacity(n);
    for o in 0..m {
        terms.clear();
        for s_hat in 0..n {
            terms.push((o * n + s_hat, 1.0));
        }
        lp.add_constraint(&terms, Rel::Eq, 1.0).expect("valid row");
    }
}

fn solve_expect_optimal(lp: &LinearProgram) -> Result<crate::lp::LpSolution, AttackError> {
    let sol = lp.solve(&SolverOptions::default())?;
    if sol.status != LpStatus::Optimal {
        return Err(AttackError::UnexpectedStatus(sol.status));
    }
    Ok(sol)
}

/// Optimal inference attack: the q minimizing the adversary's expected
/// error sum_{s,o,shat} pi(s) p(o|s) q(shat|o) d(shat,s) over row-stochastic
/// q. The optimal objective equals the expected privacy of the mechanism
/// under the returned attack.
pub fn optimal_attack(
    prior: &Prior,
    mech: &Mechanism,
    metrics: &MetricSet,
) -> Result<Attack, AttackError> {
    check_dims(Some(prior), mech, metrics)?;
    let m = mech.observables().len();
    let n = mech.secrets().len();
    let mut lp = LinearProgram::new(m * n, Sense::Minimize);
    for o in 0..m {
        for s_hat in 0..n {
            let w = estimate_weight(Some(prior), mech, metrics, o, s_hat);
            lp.set_obj_coeff(o * n + s_hat, w).expect("valid objective");
        }
    }
    stochastic_rows(&mut lp, m, n);
    let sol = solve_expect_optimal(&lp)?;
    attack_from_values(mech, &sol.values, 0)
}

/// Deterministic equivalent of [`optimal_attack`]: for each observation,
/// all probability on the estimate minimizing the expected-error weight,
/// ties broken by the lowest secret index.
pub fn optimal_attack_closed_form(
    prior: &Prior,
    mech: &Mechanism,
    metrics: &MetricSet,
) -> Result<Attack, AttackError> {
    check_dims(Some(prior), mech, metrics)?;
    let m = mech.observables().len();
    let n = mech.secrets().len();
    let mut rows = Matrix::zeros(m, n);
    for o in 0..m {
        let mut best = 0usize;
        let mut best_w = f64::INFINITY;
        for s_hat in 0..n {
            let w = estimate_weight(Some(prior), mech, metrics, o, s_hat);
            if w < best_w {
                best_w = w;
                best = s_hat;
            }
        }
        rows.set(o, best, 1.0);
    }
    Ok(Attack::new(
        mech.observables().clone(),
        mech.secrets().clone(),
        rows,
    )?)
}

/// Observables with zero marginal probability under the prior and
/// mechanism; the Bayesian posterior is undefined there.
pub fn unreachable_observables(prior: &Prior, mech: &Mechanism) -> Vec<usize> {
    let m = mech.observables().len();
    (0..m)
        .filter(|&o| {
            prior
                .probs()
                .iter()
                .enumerate()
                .all(|(s, &ps)| ps * mech.prob(s, o) == 0.0)
        })
        .collect()
}

/// Bayesian inference attack: q(shat|o) proportional to pi(shat) p(o|shat).
/// Unreachable observables (zero marginal) get the uniform row; they carry
/// no weight in any expected metric. Use [`unreachable_observables`] to
/// surface them to the caller.
pub fn bayes_attack(prior: &Prior, mech: &Mechanism) -> Result<Attack, AttackError> {
    if prior.len() != mech.secrets().len() {
        return Err(ModelError::DimensionMismatch(
            "prior and mechanism secret spaces differ".into(),
        )
        .into());
    }
    let m = mech.observables().len();
    let n = mech.secrets().len();
    let mut rows = Matrix::zeros(m, n);
    for o in 0..m {
        let mut marginal = 0.0;
        for (s, &ps) in prior.probs().iter().enumerate() {
            marginal += ps * mech.prob(s, o);
        }
        if marginal > 0.0 {
            for (s_hat, &ps) in prior.probs().iter().enumerate() {
                rows.set(o, s_hat, ps * mech.prob(s_hat, o) / marginal);
            }
        } else {
            rows.row_mut(o).fill(1.0 / n as f64);
        }
    }
    Ok(Attack::new(
        mech.observables().clone(),
        mech.secrets().clone(),
        rows,
    )?)
}

/// Prior-free attack minimizing the equal-weight sum of conditional
/// expected errors over all secrets.
pub fn minimax_attack_sum(mech: &Mechanism, metrics: &MetricSet) -> Result<Attack, AttackError> {
    check_dims(None, mech, metrics)?;
    let m = mech.observables().len();
    let n = mech.secrets().len();
    let mut lp = LinearProgram::new(m * n, Sense::Minimize);
    for o in 0..m {
        for s_hat in 0..n {
            let w = estimate_weight(None, mech, metrics, o, s_hat);
            lp.set_obj_coeff(o * n + s_hat, w).expect("valid objective");
        }
    }
    stochastic_rows(&mut lp, m, n);
    let sol = solve_expect_optimal(&lp)?;
    attack_from_values(mech, &sol.values, 0)
}

/// Prior-free attack minimizing the maximum conditional expected error
/// E_s; returns the attack and the optimal bound y.
pub fn minimax_attack(mech: &Mechanism, metrics: &MetricSet) -> Result<(Attack, f64), AttackError> {
    check_dims(None, mech, metrics)?;
    let m = mech.observables().len();
    let n = mech.secrets().len();
    let y_var = m * n;
    let mut lp = LinearProgram::new(m * n + 1, Sense::Minimize);
    lp.set_obj_coeff(y_var, 1.0).expect("valid objective");
    let mut terms = Vec::with_capacity(m * n + 1);
    for s in 0..n {
        terms.clear();
        for o in 0..m {
            let po = mech.prob(s, o);
            if po == 0.0 {
                continue;
            }
            for s_hat in 0..n {
                let coeff = po * metrics.privacy_dist.get(s_hat, s);
                if coeff != 0.0 {
                    terms.push((o * n + s_hat, coeff));
                }
            }
        }
        terms.push((y_var, -1.0));
        lp.add_constraint(&terms, Rel::Le, 0.0).expect("valid row");
    }
    stochastic_rows(&mut lp, m, n);
    let sol = solve_expect_optimal(&lp)?;
    let y = sol.values[y_var];
    Ok((attack_from_values(mech, &sol.values, 1)?, y))
}

/// Prior-free attack minimizing the maximum error conditioned on both the
/// secret and the estimate; returns the attack and the optimal bound y.
pub fn minimax_attack_pairwise(
    mech: &Mechanism,
    metrics: &MetricSet,
) -> Result<(Attack, f64), AttackError> {
    check_dims(None, mech, metrics)?;
    let m = mech.observables().len();
    let n = mech.secrets().len();
    let y_var = m * n;
    let mut lp = LinearProgram::new(m * n + 1, Sense::Minimize);
    lp.set_obj_coeff(y_var, 1.0).expect("valid objective");
    let mut terms = Vec::with_capacity(m + 1);
    for s in 0..n {
        for s_hat in 0..n {
            let d = metrics.privacy_dist.get(s_hat, s);
            terms.clear();
            if d != 0.0 {
                for o in 0..m {
                    let coeff = mech.prob(s, o) * d;
                    if coeff != 0.0 {
                        terms.push((o * n + s_hat, coeff));
                    }
                }
            }
            terms.push((y_var, -1.0));
            lp.add_constraint(&terms, Rel::Le, 0.0).expect("valid row");
        }
    }
    stochastic_rows(&mut lp, m, n);
    let sol = solve_expect_optimal(&lp)?;
    let y = sol.values[y_var];
    Ok((attack_from_values(mech, &sol.values, 1)?, y))
}
