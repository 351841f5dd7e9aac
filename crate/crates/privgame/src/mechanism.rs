//! Construction of utility-optimal obfuscation mechanisms.
//!
//! Each constructor minimizes the expected utility cost over row-stochastic
//! mechanisms subject to one of three privacy regimes:
//!
//! - distortion privacy: the game-value reformulation with one auxiliary
//!   variable x(o) per observable bounding the adversary's best-response
//!   error, and `sum_o x(o) >= d_m`;
//! - differential privacy: pairwise likelihood-ratio constraints, either
//!   scaled by the distinguishability metric or flat within a
//!   distinguishability threshold;
//! - joint: both constraint families over one shared variable block.
//!
//! Constraint pruning trades exactness for size: differential rows for
//! secret pairs beyond `radius_disting` are dropped, and mechanism entries
//! for secret/observable pairs beyond `radius_support` are fixed to zero
//! and removed from the program. With both radii at or above the metric
//! diameters the pruned program is the exact one.
//!
//! Every LP orders its p(o|s) variables observable-major with the
//! auxiliary variables at the tail, which keeps the solver's
//! normal-equations factor near block-diagonal.

use thiserror::Error;

use crate::attack::{optimal_attack_closed_form, AttackError};
use crate::lp::{LinearProgram, LpError, LpStatus, Rel, Sense, SolverOptions};
use crate::model::{
    expected_privacy, verify_differential, LabelSpace, Matrix, Mechanism, MetricSet, ModelError,
    Prior, FEAS_TOL,
};

/// Differential rows whose exponent `eps * d` exceeds this cannot bind at
/// probability scale (the factor tops 1e13) and are left out of the
/// program; the post-solve repair still enforces them on the result.
const EXP_CAP: f64 = 30.0;

/// Slack shaved off the distortion bound inside the programs. At
/// `d_m = d_max` the feasible set has no strict interior (every game-value
/// row is forced tight), which wrecks interior-point convergence; the
/// shave restores an interior while staying two orders below every stated
/// tolerance. Bounds this small are equivalent to no bound at all, and the
/// game-value block is dropped entirely then.
const DM_INTERIOR_SLACK: f64 = 1e-8;

/// Relative objective tie-breaker. Hamming-style cost tables make whole
/// swaths of mechanism entries interchangeable, and the resulting dual
/// degeneracy stalls the solver's endgame; a deterministic relative nudge
/// of this size makes the optimum unique while moving the cost value below
/// every stated tolerance.
const COST_TIE_BREAK: f64 = 1e-9;

/// Deterministic pseudo-random value in [0, 1) from a variable index.
fn tie_break(v: usize) -> f64 {
    let x = (v as f64 + 1.0) * 0.618_033_988_749_894_9;
    x - x.floor()
}

/// Which utility objective the distortion mechanism minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Prior-weighted expected cost.
    Average,
    /// Maximum per-secret expected cost.
    Worst,
}

/// Constraint-pruning radii; `None` disables the respective pruning.
#[derive(Debug, Clone, Copy, Default)]
pub struct ApproxOptions {
    /// Drop differential rows for secret pairs with disting(s, s') above
    /// this radius.
    pub radius_disting: Option<f64>,
    /// Fix p(o|s) = 0 for pairs with support_dist(s, o) above this radius.
    pub radius_support: Option<f64>,
}

impl ApproxOptions {
    pub fn none() -> Self {
        ApproxOptions::default()
    }

    pub fn is_active(&self) -> bool {
        self.radius_disting.is_some() || self.radius_support.is_some()
    }

    fn validate(&self) -> Result<(), MechanismError> {
        for r in [self.radius_disting, self.radius_support].into_iter().flatten() {
            if !(r >= 0.0) {
                return Err(MechanismError::InvalidApprox(format!(
                    "pruning radius must be >= 0, got {r}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum MechanismError {
    #[error("mechanism model error: {0}")]
    Model(#[from] ModelError),
    #[error("mechanism solver failure: {0}")]
    Solver(#[from] LpError),
    #[error("attack during post-check failed: {0}")]
    Attack(#[from] AttackError),
    #[error("distortion bound {requested} exceeds the maximum achievable {max}")]
    DistortionTooLarge { requested: f64, max: f64 },
    #[error(
        "jointly infeasible: distortion bound {requested_dm} is unreachable under the \
         differential constraints (unconstrained maximum {max_unconstrained})"
    )]
    JointInfeasible {
        requested_dm: f64,
        max_unconstrained: f64,
    },
    #[error("support pruning left no observables: {0}")]
    InfeasibleAfterPruning(String),
    #[error("invalid pruning options: {0}")]
    InvalidApprox(String),
    #[error("program is infeasible")]
    Infeasible,
    #[error("post-solve check failed: {0}")]
    PostCheck(String),
}

// ---------------------------------------------------------------------------
// Pruning plan
// ---------------------------------------------------------------------------

/// Reduced variable/constraint sets under [`ApproxOptions`].
///
/// `allowed(s, o)` tells whether the mechanism entry p(o|s) survives
/// support pruning; `pair_kept(s, s2)` tells whether the differential rows
/// for the ordered secret pair survive distinguishability pruning.
#[derive(Debug, Clone)]
pub struct PrunePlan {
    num_secrets: usize,
    num_observables: usize,
    allowed: Vec<bool>,
    pair_kept: Vec<bool>,
    pub dropped_vars: usize,
    pub dropped_pairs: usize,
}

impl PrunePlan {
    #[inline]
    pub fn allowed(&self, s: usize, o: usize) -> bool {
        self.allowed[o * self.num_secrets + s]
    }

    #[inline]
    pub fn pair_kept(&self, s: usize, s2: usize) -> bool {
        self.pair_kept[s * self.num_secrets + s2]
    }

    pub fn kept_vars(&self) -> usize {
        self.num_secrets * self.num_observables - self.dropped_vars
    }
}

/// Applies the pruning radii to a problem's constraint and variable sets.
///
/// Fails with [`MechanismError::InfeasibleAfterPruning`] when some secret
/// has no allowed observable left (its row could not sum to one).
pub fn prune_constraints(
    metrics: &MetricSet,
    approx: &ApproxOptions,
) -> Result<PrunePlan, MechanismError> {
    approx.validate()?;
    let n = metrics.num_secrets();
    let m = metrics.num_observables();

    let mut allowed = vec![true; n * m];
    let mut dropped_vars = 0usize;
    if let Some(radius) = approx.radius_support {
        let support = metrics.support_dist.as_ref().ok_or_else(|| {
            MechanismError::InvalidApprox(
                "radius_support requires metrics.support_dist".into(),
            )
        })?;
        if support.rows() != n || support.cols() != m {
            return Err(ModelError::DimensionMismatch(
                "support_dist does not match the cost table".into(),
            )
            .into());
        }
        for o in 0..m {
            for s in 0..n {
                if support.get(s, o) > radius {
                    allowed[o * n + s] = false;
                    dropped_vars += 1;
                }
            }
        }
        for s in 0..n {
            if (0..m).all(|o| !allowed[o * n + s]) {
                return Err(MechanismError::InfeasibleAfterPruning(format!(
                    "secret {s} has no observable within radius {radius}"
                )));
            }
        }
    }

    let mut pair_kept = vec![true; n * n];
    let mut dropped_pairs = 0usize;
    if let Some(radius) = approx.radius_disting {
        for s in 0..n {
            for s2 in 0..n {
                if s != s2 && metrics.disting.get(s, s2) > radius {
                    pair_kept[s * n + s2] = false;
                    dropped_pairs += 1;
                }
            }
        }
    }

    Ok(PrunePlan {
        num_secrets: n,
        num_observables: m,
        allowed,
        pair_kept,
        dropped_vars,
        dropped_pairs,
    })
}

// ---------------------------------------------------------------------------
// LP assembly
// ---------------------------------------------------------------------------

struct MechProgram<'a> {
    prior: &'a Prior,
    observables: &'a LabelSpace,
    metrics: &'a MetricSet,
    plan: &'a PrunePlan,
    n: usize,
    m: usize,
    /// observable-major variable index of p(o|s); usize::MAX when pruned
    var_of: Vec<usize>,
    num_p: usize,
}

const NO_VAR: usize = usize::MAX;

impl<'a> MechProgram<'a> {
    fn new(
        prior: &'a Prior,
        observables: &'a LabelSpace,
        metrics: &'a MetricSet,
        plan: &'a PrunePlan,
    ) -> Result<Self, MechanismError> {
        let n = prior.len();
        let m = observables.len();
        if metrics.num_secrets() != n || metrics.num_observables() != m {
            return Err(ModelError::DimensionMismatch(
                "metric tables do not match the prior/observable spaces".into(),
            )
            .into());
        }
        if metrics.privacy_dist.rows() != n || metrics.disting.rows() != n {
            return Err(ModelError::DimensionMismatch(
                "privacy_dist/disting do not match the secret space".into(),
            )
            .into());
        }
        let mut var_of = vec![NO_VAR; n * m];
        let mut num_p = 0usize;
        for o in 0..m {
            for s in 0..n {
                if plan.allowed(s, o) {
                    var_of[o * n + s] = num_p;
                    num_p += 1;
                }
            }
        }
        Ok(MechProgram {
            prior,
            observables,
            metrics,
            plan,
            n,
            m,
            var_of,
            num_p,
        })
    }

    #[inline]
    fn var(&self, s: usize, o: usize) -> usize {
        self.var_of[o * self.n + s]
    }

    fn average_cost_objective(&self, lp: &mut LinearProgram) {
        for o in 0..self.m {
            for s in 0..self.n {
                let v = self.var(s, o);
                if v != NO_VAR {
                    let coeff = self.prior.probs()[s] * self.metrics.cost.get(s, o);
                    if coeff != 0.0 {
                        let coeff = coeff * (1.0 + COST_TIE_BREAK * tie_break(v));
                        lp.set_obj_coeff(v, coeff).expect("valid objective");
                    }
                }
            }
        }
    }

    fn add_stochastic_rows(&self, lp: &mut LinearProgram) -> Result<(), MechanismError> {
        let mut terms = Vec::with_capacity(self.m);
        for s in 0..self.n {
            terms.clear();
            for o in 0..self.m {
                let v = self.var(s, o);
                if v != NO_VAR {
                    terms.push((v, 1.0));
                }
            }
            if terms.is_empty() {
                return Err(MechanismError::InfeasibleAfterPruning(format!(
                    "secret {s} has no allowed observables"
                )));
            }
            lp.add_constraint(&terms, Rel::Eq, 1.0)?;
        }
        Ok(())
    }

    /// Pairwise differential rows: p(o|s) <= factor * p(o|s2). Entries
    /// pruned from the support contribute exactly zero, so a missing
    /// left-hand variable makes the row vacuous and a missing right-hand
    /// variable degrades it to p(o|s) <= 0.
    fn add_differential_rows(
        &self,
        lp: &mut LinearProgram,
        eps_m: f64,
        d_eps_m: Option<f64>,
    ) -> Result<(), MechanismError> {
        for o in 0..self.m {
            for s in 0..self.n {
                let lhs = self.var(s, o);
                if lhs == NO_VAR {
                    continue;
                }
                for s2 in 0..self.n {
                    if s == s2 || !self.plan.pair_kept(s, s2) {
                        continue;
                    }
                    let dist = self.metrics.disting.get(s, s2);
                    let exponent = match d_eps_m {
                        Some(cap) => {
                            if dist > cap {
                                continue;
                            }
                            eps_m
                        }
                        None => eps_m * dist,
                    };
                    if exponent > EXP_CAP {
                        continue;
                    }
                    let factor = exponent.exp();
                    let rhs_var = self.var(s2, o);
                    if rhs_var == NO_VAR {
                        lp.add_constraint(&[(lhs, 1.0)], Rel::Le, 0.0)?;
                    } else {
                        lp.add_constraint(&[(lhs, 1.0), (rhs_var, -factor)], Rel::Le, 0.0)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Game-value rows: for every observable and estimate,
    /// sum_s pi(s) d(shat, s) p(o|s) >= x(o).
    fn add_game_value_rows(&self, lp: &mut LinearProgram, x_base: usize) -> Result<(), MechanismError> {
        let mut terms = Vec::with_capacity(self.n + 1);
        for o in 0..self.m {
            for s_hat in 0..self.n {
                terms.clear();
                for s in 0..self.n {
                    let v = self.var(s, o);
                    if v == NO_VAR {
                        continue;
                    }
                    let coeff = self.prior.probs()[s] * self.metrics.privacy_dist.get(s_hat, s);
                    if coeff != 0.0 {
                        terms.push((v, coeff));
                    }
                }
                terms.push((x_base + o, -1.0));
                lp.add_constraint(&terms, Rel::Ge, 0.0)?;
            }
        }
        Ok(())
    }

    fn add_worst_cost_rows(&self, lp: &mut LinearProgram, z_var: usize) -> Result<(), MechanismError> {
        let mut terms = Vec::with_capacity(self.m + 1);
        for s in 0..self.n {
            terms.clear();
            for o in 0..self.m {
                let v = self.var(s, o);
                if v != NO_VAR {
                    let coeff = self.metrics.cost.get(s, o);
                    if coeff != 0.0 {
                        terms.push((v, coeff));
                    }
                }
            }
            terms.push((z_var, -1.0));
            lp.add_constraint(&terms, Rel::Le, 0.0)?;
        }
        Ok(())
    }

    fn extract_mechanism(&self, values: &[f64]) -> Result<Mechanism, MechanismError> {
        let mut rows = Matrix::zeros(self.n, self.m);
        for o in 0..self.m {
            for s in 0..self.n {
                let v = self.var(s, o);
                if v != NO_VAR {
                    let p = values[v];
                    rows.set(s, o, if p > 1e-13 { p } else { 0.0 });
                }
            }
        }
        for s in 0..self.n {
            let sum: f64 = rows.row(s).iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(MechanismError::PostCheck(format!(
                    "solver row {s} sums to {sum}"
                )));
            }
            for v in rows.row_mut(s) {
                *v /= sum;
            }
        }
        Ok(Mechanism::new(
            self.prior.space().clone(),
            self.observables.clone(),
            rows,
        )?)
    }
}

// ---------------------------------------------------------------------------
// Differential repair
// ---------------------------------------------------------------------------

#[derive(Clone, Copy)]
enum DiffKind {
    Scaled { eps_m: f64 },
    Thresholded { eps_m: f64, d_eps_m: f64 },
}

/// Blends the mechanism toward the uniform one just enough to push every
/// (kept) differential margin below tolerance. The uniform mechanism
/// satisfies all ratio bounds strictly, so a tiny convex step absorbs the
/// solver's residual slack; the blend weight is on the order of the
/// residual divided by the bound gap, leaving costs unchanged at the 1e-9
/// level.
fn repair_differential(
    rows: &mut Matrix,
    metrics: &MetricSet,
    kind: DiffKind,
    plan: &PrunePlan,
) -> Result<(), MechanismError> {
    let n = rows.rows();
    let m = rows.cols();
    let target = FEAS_TOL * 0.5;
    for _round in 0..4 {
        let mut theta_max = 0.0f64;
        for s in 0..n {
            for s2 in 0..n {
                if s == s2 || !plan.pair_kept(s, s2) {
                    continue;
                }
                let bound = match kind {
                    DiffKind::Scaled { eps_m } => {
                        (eps_m * metrics.disting.get(s, s2)).min(700.0).exp()
                    }
                    DiffKind::Thresholded { eps_m, d_eps_m } => {
                        if metrics.disting.get(s, s2) > d_eps_m {
                            continue;
                        }
                        eps_m.min(700.0).exp()
                    }
                };
                for o in 0..m {
                    let margin = rows.get(s, o) - bound * rows.get(s2, o);
                    if margin > target {
                        let gap = (bound - 1.0) / m as f64;
                        if gap <= 0.0 {
                            return Err(MechanismError::PostCheck(format!(
                                "differential violation {margin:.3e} at ratio bound 1 \
                                 cannot be repaired"
                            )));
                        }
                        theta_max = theta_max.max(margin / (margin + gap));
                    }
                }
            }
        }
        if theta_max == 0.0 {
            return Ok(());
        }
        let theta = (theta_max * 1.5).min(1.0);
        let fill = theta / m as f64;
        for s in 0..n {
            for o in 0..m {
                let v = rows.get(s, o);
                rows.set(s, o, (1.0 - theta) * v + fill);
            }
        }
    }
    Err(MechanismError::PostCheck(
        "differential repair did not converge".into(),
    ))
}

// ---------------------------------------------------------------------------
// Program assembly
// ---------------------------------------------------------------------------

/// Which optimization program to assemble; mirrors the public constructors
/// and backs the CLI's LP dump.
#[derive(Debug, Clone, Copy)]
pub enum ProgramSpec {
    Distortion { d_m: f64, objective: Objective },
    Differential { eps_m: f64 },
    DifferentialThresholded { eps_m: f64, d_eps_m: f64 },
    Joint { d_m: f64, eps_m: f64 },
    MaxDistortion,
}

fn assemble<'a>(
    prior: &'a Prior,
    observables: &'a LabelSpace,
    metrics: &'a MetricSet,
    spec: &ProgramSpec,
    plan: &'a PrunePlan,
) -> Result<(LinearProgram, MechProgram<'a>), MechanismError> {
    let prog = MechProgram::new(prior, observables, metrics, plan)?;
    let x_base = prog.num_p;
    let lp = match *spec {
        ProgramSpec::Distortion { d_m, objective } => {
            let with_game_block = d_m > DM_INTERIOR_SLACK;
            let num_x = if with_game_block { prog.m } else { 0 };
            let num_vars = prog.num_p + num_x + usize::from(objective == Objective::Worst);
            let mut lp = LinearProgram::new(num_vars, Sense::Minimize);
            match objective {
                Objective::Average => prog.average_cost_objective(&mut lp),
                Objective::Worst => {
                    let z = num_vars - 1;
                    lp.set_obj_coeff(z, 1.0)?;
                    prog.add_worst_cost_rows(&mut lp, z)?;
                }
            }
            if with_game_block {
                prog.add_game_value_rows(&mut lp, x_base)?;
                let dm_terms: Vec<(usize, f64)> =
                    (0..prog.m).map(|o| (x_base + o, 1.0)).collect();
                lp.add_constraint(&dm_terms, Rel::Ge, d_m - DM_INTERIOR_SLACK)?;
            }
            prog.add_stochastic_rows(&mut lp)?;
            lp
        }
        ProgramSpec::Differential { eps_m } | ProgramSpec::DifferentialThresholded { eps_m, .. } => {
            let d_eps_m = match *spec {
                ProgramSpec::DifferentialThresholded { d_eps_m, .. } => Some(d_eps_m),
                _ => None,
            };
            let mut lp = LinearProgram::new(prog.num_p, Sense::Minimize);
            prog.average_cost_objective(&mut lp);
            prog.add_differential_rows(&mut lp, eps_m, d_eps_m)?;
            prog.add_stochastic_rows(&mut lp)?;
            lp
        }
        ProgramSpec::Joint { d_m, eps_m } => {
            let with_game_block = d_m > DM_INTERIOR_SLACK;
            let num_x = if with_game_block { prog.m } else { 0 };
            let mut lp = LinearProgram::new(prog.num_p + num_x, Sense::Minimize);
            prog.average_cost_objective(&mut lp);
            prog.add_differential_rows(&mut lp, eps_m, None)?;
            if with_game_block {
                prog.add_game_value_rows(&mut lp, x_base)?;
                let dm_terms: Vec<(usize, f64)> =
                    (0..prog.m).map(|o| (x_base + o, 1.0)).collect();
                lp.add_constraint(&dm_terms, Rel::Ge, d_m - DM_INTERIOR_SLACK)?;
            }
            prog.add_stochastic_rows(&mut lp)?;
            lp
        }
        ProgramSpec::MaxDistortion => {
            let mut lp = LinearProgram::new(prog.num_p + prog.m, Sense::Maximize);
            for o in 0..prog.m {
                lp.set_obj_coeff(x_base + o, 1.0)?;
            }
            prog.add_game_value_rows(&mut lp, x_base)?;
            prog.add_stochastic_rows(&mut lp)?;
            lp
        }
    };
    Ok((lp, prog))
}

/// Writes the program a constructor would solve, in the textual LP format.
pub fn write_lp<W: std::io::Write>(
    prior: &Prior,
    observables: &LabelSpace,
    metrics: &MetricSet,
    spec: &ProgramSpec,
    approx: &ApproxOptions,
    w: &mut W,
) -> Result<(), MechanismError> {
    let plan = prune_constraints(metrics, approx)?;
    let (lp, _) = assemble(prior, observables, metrics, spec, &plan)?;
    lp.write_lp_format(w)
        .map_err(|e| MechanismError::PostCheck(format!("lp dump failed: {e}")))
}

// ---------------------------------------------------------------------------
// Public constructors
// ---------------------------------------------------------------------------

fn solve_mech_lp(lp: &LinearProgram) -> Result<Option<Vec<f64>>, MechanismError> {
    let sol = lp.solve(&SolverOptions::default())?;
    match sol.status {
        LpStatus::Optimal => Ok(Some(sol.values)),
        LpStatus::Infeasible => Ok(None),
        LpStatus::Unbounded => Err(MechanismError::PostCheck(
            "mechanism program came back unbounded".into(),
        )),
    }
}

/// Utility-optimal mechanism under the distortion-privacy bound `d_m`.
///
/// The privacy constraint anticipates the adversary's best response: one
/// game-value variable per observable bounds the per-observation
/// estimation error from below, and their sum must reach `d_m`.
pub fn optimal_distortion(
    prior: &Prior,
    observables: &LabelSpace,
    metrics: &MetricSet,
    d_m: f64,
    objective: Objective,
    approx: &ApproxOptions,
) -> Result<Mechanism, MechanismError> {
    if !(d_m >= 0.0) {
        return Err(ModelError::InvalidBounds("d_m must be >= 0".into()).into());
    }
    let plan = prune_constraints(metrics, approx)?;
    let (lp, prog) = assemble(
        prior,
        observables,
        metrics,
        &ProgramSpec::Distortion { d_m, objective },
        &plan,
    )?;
    let Some(values) = solve_mech_lp(&lp)? else {
        let max = max_distortion_with_approx(prior, observables, metrics, approx)?;
        return Err(MechanismError::DistortionTooLarge {
            requested: d_m,
            max,
        });
    };
    let mech = prog.extract_mechanism(&values)?;
    if !approx.is_active() {
        check_privacy_floor(prior, &mech, metrics, d_m)?;
    }
    Ok(mech)
}

/// Utility-optimal mechanism under metric differential privacy with budget
/// `eps_m`: p(o|s) <= exp(eps_m * disting(s, s2)) p(o|s2) for all pairs.
pub fn optimal_differential(
    prior: &Prior,
    observables: &LabelSpace,
    metrics: &MetricSet,
    eps_m: f64,
    approx: &ApproxOptions,
) -> Result<Mechanism, MechanismError> {
    if !(eps_m >= 0.0) {
        return Err(ModelError::InvalidBounds("eps_m must be >= 0".into()).into());
    }
    differential_core(prior, observables, metrics, eps_m, None, approx)
}

/// Flat-factor variant: p(o|s) <= exp(eps_m) p(o|s2) for pairs within the
/// distinguishability threshold `d_eps_m` only.
pub fn optimal_differential_thresholded(
    prior: &Prior,
    observables: &LabelSpace,
    metrics: &MetricSet,
    eps_m: f64,
    d_eps_m: f64,
    approx: &ApproxOptions,
) -> Result<Mechanism, MechanismError> {
    if !(eps_m >= 0.0) || !(d_eps_m >= 0.0) {
        return Err(ModelError::InvalidBounds("eps_m and d_eps_m must be >= 0".into()).into());
    }
    differential_core(prior, observables, metrics, eps_m, Some(d_eps_m), approx)
}

fn differential_core(
    prior: &Prior,
    observables: &LabelSpace,
    metrics: &MetricSet,
    eps_m: f64,
    d_eps_m: Option<f64>,
    approx: &ApproxOptions,
) -> Result<Mechanism, MechanismError> {
    let plan = prune_constraints(metrics, approx)?;
    let spec = match d_eps_m {
        Some(d_eps_m) => ProgramSpec::DifferentialThresholded { eps_m, d_eps_m },
        None => ProgramSpec::Differential { eps_m },
    };
    let (lp, prog) = assemble(prior, observables, metrics, &spec, &plan)?;
    let Some(values) = solve_mech_lp(&lp)? else {
        return Err(MechanismError::Infeasible);
    };
    let mech = prog.extract_mechanism(&values)?;
    finish_differential(mech, metrics, eps_m, d_eps_m, &plan, approx)
}

fn finish_differential(
    mech: Mechanism,
    metrics: &MetricSet,
    eps_m: f64,
    d_eps_m: Option<f64>,
    plan: &PrunePlan,
    approx: &ApproxOptions,
) -> Result<Mechanism, MechanismError> {
    let mut rows = mech.rows().clone();
    let kind = match d_eps_m {
        Some(cap) => DiffKind::Thresholded {
            eps_m,
            d_eps_m: cap,
        },
        None => DiffKind::Scaled { eps_m },
    };
    repair_differential(&mut rows, metrics, kind, plan)?;
    let mech = Mechanism::new(mech.secrets().clone(), mech.observables().clone(), rows)?;
    if !approx.is_active() {
        let report = verify_differential(&mech, metrics, eps_m, d_eps_m)?;
        if !report.passed {
            return Err(MechanismError::PostCheck(format!(
                "differential verification failed with margin {:?}",
                report.worst.map(|w| w.margin)
            )));
        }
    }
    Ok(mech)
}

/// Utility-optimal mechanism under both privacy regimes at once: the
/// game-value rows enforcing `d_m` and the pairwise differential rows for
/// `eps_m` share one mechanism variable block.
pub fn optimal_joint(
    prior: &Prior,
    observables: &LabelSpace,
    metrics: &MetricSet,
    d_m: f64,
    eps_m: f64,
    approx: &ApproxOptions,
) -> Result<Mechanism, MechanismError> {
    if !(d_m >= 0.0) || !(eps_m >= 0.0) {
        return Err(ModelError::InvalidBounds("d_m and eps_m must be >= 0".into()).into());
    }
    let plan = prune_constraints(metrics, approx)?;
    let (lp, prog) = assemble(
        prior,
        observables,
        metrics,
        &ProgramSpec::Joint { d_m, eps_m },
        &plan,
    )?;
    let Some(values) = solve_mech_lp(&lp)? else {
        let max = max_distortion_with_approx(prior, observables, metrics, approx)?;
        if d_m > max + FEAS_TOL {
            return Err(MechanismError::DistortionTooLarge {
                requested: d_m,
                max,
            });
        }
        return Err(MechanismError::JointInfeasible {
            requested_dm: d_m,
            max_unconstrained: max,
        });
    };
    let mech = prog.extract_mechanism(&values)?;
    let mech = finish_differential(mech, metrics, eps_m, None, &plan, approx)?;
    if !approx.is_active() {
        check_privacy_floor(prior, &mech, metrics, d_m)?;
    }
    Ok(mech)
}

/// Largest achievable distortion bound for this prior and privacy
/// distance: the optimum of maximizing `sum_o x(o)` under the game-value
/// rows alone. Any `d_m` above this is infeasible.
pub fn max_distortion(prior: &Prior, observables: &LabelSpace, metrics: &MetricSet) -> Result<f64, MechanismError> {
    max_distortion_with_approx(prior, observables, metrics, &ApproxOptions::none())
}

fn max_distortion_with_approx(
    prior: &Prior,
    observables: &LabelSpace,
    metrics: &MetricSet,
    approx: &ApproxOptions,
) -> Result<f64, MechanismError> {
    let plan = prune_constraints(metrics, approx)?;
    let (lp, prog) = assemble(prior, observables, metrics, &ProgramSpec::MaxDistortion, &plan)?;
    let x_base = prog.num_p;
    let values = solve_mech_lp(&lp)?.ok_or(MechanismError::Infeasible)?;
    let dmax: f64 = (0..prog.m).map(|o| values[x_base + o]).sum();
    Ok(dmax)
}

/// Post-check: the constructed mechanism's privacy against the exact
/// best-response attack reaches the promised floor.
fn check_privacy_floor(
    prior: &Prior,
    mech: &Mechanism,
    metrics: &MetricSet,
    d_m: f64,
) -> Result<(), MechanismError> {
    let attack = optimal_attack_closed_form(prior, mech, metrics)?;
    let privacy = expected_privacy(prior, mech, &attack, metrics)?;
    if privacy < d_m - 1e-6 {
        return Err(MechanismError::PostCheck(format!(
            "achieved privacy {privacy} is below the bound {d_m}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::optimal_attack;
    use crate::model::test_fixtures::*;
    use crate::model::expected_cost;

    fn two_secret_world() -> (Prior, LabelSpace, MetricSet) {
        let prior = uniform_prior(2);
        let observables = crate::model::LabelSpace::observables(["o1", "o2"]).unwrap();
        (prior, observables, hamming_metrics(2))
    }

    /// Grid-search oracle over (a, b) mechanisms at step 1e-3: the minimum
    /// cost subject to a feasibility predicate.
    fn grid_oracle(feasible: impl Fn(f64, f64) -> bool) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..=1000 {
            for j in 0..=1000 {
                let a = i as f64 / 1000.0;
                let b = j as f64 / 1000.0;
                if feasible(a, b) {
                    best = best.min(0.5 * ((1.0 - a) + b));
                }
            }
        }
        best
    }

    fn privacy2(a: f64, b: f64) -> f64 {
        0.5 * (a.min(b) + (1.0 - a).min(1.0 - b))
    }

    #[test]
    fn distortion_dm_zero_costs_nothing() {
        let (prior, obs, metrics) = two_secret_world();
        let mech = optimal_distortion(
            &prior,
            &obs,
            &metrics,
            0.0,
            Objective::Average,
            &ApproxOptions::none(),
        )
        .unwrap();
        assert!(expected_cost(&prior, &mech, &metrics).unwrap() < 1e-6);
    }

    #[test]
    fn distortion_at_half_matches_grid_oracle() {
        let (prior, obs, metrics) = two_secret_world();
        let oracle = grid_oracle(|a, b| privacy2(a, b) >= 0.5 - 1e-9);
        assert!((oracle - 0.5).abs() < 1e-9);
        let mech = optimal_distortion(
            &prior,
            &obs,
            &metrics,
            0.5,
            Objective::Average,
            &ApproxOptions::none(),
        )
        .unwrap();
        let cost = expected_cost(&prior, &mech, &metrics).unwrap();
        assert!((cost - oracle).abs() < 1e-6, "cost {cost} vs oracle {oracle}");
    }

    #[test]
    fn distortion_at_point_four_matches_grid_oracle() {
        let (prior, obs, metrics) = two_secret_world();
        let oracle = grid_oracle(|a, b| privacy2(a, b) >= 0.4 - 1e-9);
        assert!((oracle - 0.4).abs() < 1e-9);
        let mech = optimal_distortion(
            &prior,
            &obs,
            &metrics,
            0.4,
            Objective::Average,
            &ApproxOptions::none(),
        )
        .unwrap();
        let cost = expected_cost(&prior, &mech, &metrics).unwrap();
        assert!((cost - oracle).abs() < 1e-6);
        // the privacy floor holds under the optimal attack
        let attack = optimal_attack(&prior, &mech, &metrics).unwrap();
        let ap = expected_privacy(&prior, &mech, &attack, &metrics).unwrap();
        assert!(ap >= 0.4 - 1e-6);
    }

    #[test]
    fn distortion_bound_too_large_reports_max() {
        let (prior, obs, metrics) = two_secret_world();
        let err = optimal_distortion(
            &prior,
            &obs,
            &metrics,
            0.7,
            Objective::Average,
            &ApproxOptions::none(),
        )
        .unwrap_err();
        match err {
            MechanismError::DistortionTooLarge { requested, max } => {
                assert_eq!(requested, 0.7);
                assert!((max - 0.5).abs() < 1e-6);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn worst_objective_matches_average_on_symmetric_instance() {
        let (prior, obs, metrics) = two_secret_world();
        let mech = optimal_distortion(
            &prior,
            &obs,
            &metrics,
            0.4,
            Objective::Worst,
            &ApproxOptions::none(),
        )
        .unwrap();
        // symmetric 2-secret instance: worst-case optimum is also 0.4
        let worst = crate::model::worst_case_cost(&mech, &metrics).unwrap();
        assert!(worst <= 0.4 + 1e-6);
    }

    #[test]
    fn differential_eps_zero_forces_equal_rows() {
        let (prior, obs, metrics) = two_secret_world();
        let oracle = grid_oracle(|a, b| (a - b).abs() < 1e-9);
        assert!((oracle - 0.5).abs() < 1e-6);
        let mech =
            optimal_differential(&prior, &obs, &metrics, 0.0, &ApproxOptions::none()).unwrap();
        let cost = expected_cost(&prior, &mech, &metrics).unwrap();
        assert!((cost - 0.5).abs() < 1e-6);
        assert!((mech.prob(0, 0) - mech.prob(1, 0)).abs() < 1e-6);
    }

    #[test]
    fn differential_ln3_matches_grid_oracle() {
        let (prior, obs, metrics) = two_secret_world();
        let k = 3.0;
        let oracle = grid_oracle(|a, b| {
            a <= k * b + 1e-12
                && b <= k * a + 1e-12
                && (1.0 - a) <= k * (1.0 - b) + 1e-12
                && (1.0 - b) <= k * (1.0 - a) + 1e-12
        });
        assert!((oracle - 0.25).abs() < 1e-9);
        let mech =
            optimal_differential(&prior, &obs, &metrics, 3.0f64.ln(), &ApproxOptions::none())
                .unwrap();
        let cost = expected_cost(&prior, &mech, &metrics).unwrap();
        assert!((cost - oracle).abs() < 1e-6);
        assert!(verify_differential(&mech, &metrics, 3.0f64.ln(), None)
            .unwrap()
            .passed);
    }

    #[test]
    fn differential_huge_eps_is_effectively_unconstrained() {
        let (prior, obs, metrics) = two_secret_world();
        let mech =
            optimal_differential(&prior, &obs, &metrics, 50.0, &ApproxOptions::none()).unwrap();
        let cost = expected_cost(&prior, &mech, &metrics).unwrap();
        assert!(cost < 1e-6);
        assert!(verify_differential(&mech, &metrics, 50.0, None).unwrap().passed);
    }

    #[test]
    fn thresholded_zero_radius_is_identity() {
        let (prior, obs, metrics) = two_secret_world();
        let mech = optimal_differential_thresholded(
            &prior,
            &obs,
            &metrics,
            3.0f64.ln(),
            0.0,
            &ApproxOptions::none(),
        )
        .unwrap();
        assert!(expected_cost(&prior, &mech, &metrics).unwrap() < 1e-6);
    }

    #[test]
    fn thresholded_full_radius_equals_scaled_on_hamming() {
        // with Hamming disting every off-diagonal distance is 1, so the
        // flat factor exp(eps) matches the scaled bound exactly
        let (prior, obs, metrics) = two_secret_world();
        let eps = 3.0f64.ln();
        let flat = optimal_differential_thresholded(
            &prior,
            &obs,
            &metrics,
            eps,
            1.0,
            &ApproxOptions::none(),
        )
        .unwrap();
        let cost = expected_cost(&prior, &flat, &metrics).unwrap();
        assert!((cost - 0.25).abs() < 1e-6);
    }

    #[test]
    fn thresholded_three_secret_line() {
        // three secrets on a line (disting 1, 1, 2), flat factor 2 on all
        // pairs; frozen from an independent LP enumeration: cost 1/2,
        // versus 4/9 for the distance-scaled variant at the same eps.
        let prior = uniform_prior(3);
        let obs =
            crate::model::LabelSpace::observables(["o1", "o2", "o3"]).unwrap();
        let line = Matrix::from_rows(vec![
            vec![0.0, 1.0, 2.0],
            vec![1.0, 0.0, 1.0],
            vec![2.0, 1.0, 0.0],
        ])
        .unwrap();
        let mut hamming = Matrix::zeros(3, 3);
        for r in 0..3 {
            for c in 0..3 {
                if r != c {
                    hamming.set(r, c, 1.0);
                }
            }
        }
        let metrics = MetricSet::new(hamming.clone(), hamming, line, None).unwrap();
        let eps = 2.0f64.ln();
        let flat = optimal_differential_thresholded(
            &prior,
            &obs,
            &metrics,
            eps,
            2.0,
            &ApproxOptions::none(),
        )
        .unwrap();
        let flat_cost = expected_cost(&prior, &flat, &metrics).unwrap();
        assert!((flat_cost - 0.5).abs() < 1e-6, "flat cost {flat_cost}");

        let scaled =
            optimal_differential(&prior, &obs, &metrics, eps, &ApproxOptions::none()).unwrap();
        let scaled_cost = expected_cost(&prior, &scaled, &metrics).unwrap();
        assert!(
            (scaled_cost - 4.0 / 9.0).abs() < 1e-6,
            "scaled cost {scaled_cost}"
        );
    }

    #[test]
    fn joint_reduces_to_differential_when_dm_zero() {
        let (prior, obs, metrics) = two_secret_world();
        let eps = 3.0f64.ln();
        let joint =
            optimal_joint(&prior, &obs, &metrics, 0.0, eps, &ApproxOptions::none()).unwrap();
        let diff =
            optimal_differential(&prior, &obs, &metrics, eps, &ApproxOptions::none()).unwrap();
        let cj = expected_cost(&prior, &joint, &metrics).unwrap();
        let cd = expected_cost(&prior, &diff, &metrics).unwrap();
        assert!((cj - cd).abs() < 1e-6);
    }

    #[test]
    fn joint_ln3_dm_point_four_matches_grid_oracle() {
        let (prior, obs, metrics) = two_secret_world();
        let k = 3.0;
        let oracle = grid_oracle(|a, b| {
            a <= k * b + 1e-12
                && b <= k * a + 1e-12
                && (1.0 - a) <= k * (1.0 - b) + 1e-12
                && (1.0 - b) <= k * (1.0 - a) + 1e-12
                && privacy2(a, b) >= 0.4 - 1e-9
        });
        assert!((oracle - 0.4).abs() < 1e-9);
        let joint = optimal_joint(
            &prior,
            &obs,
            &metrics,
            0.4,
            3.0f64.ln(),
            &ApproxOptions::none(),
        )
        .unwrap();
        let cost = expected_cost(&prior, &joint, &metrics).unwrap();
        assert!((cost - oracle).abs() < 1e-6);
        assert!(verify_differential(&joint, &metrics, 3.0f64.ln(), None)
            .unwrap()
            .passed);
    }

    #[test]
    fn joint_huge_eps_matches_distortion() {
        let (prior, obs, metrics) = two_secret_world();
        let joint =
            optimal_joint(&prior, &obs, &metrics, 0.5, 50.0, &ApproxOptions::none()).unwrap();
        let cost = expected_cost(&prior, &joint, &metrics).unwrap();
        assert!((cost - 0.5).abs() < 1e-6);
    }

    #[test]
    fn max_distortion_examples() {
        let (prior, obs, metrics) = two_secret_world();
        let dmax = max_distortion(&prior, &obs, &metrics).unwrap();
        assert!((dmax - 0.5).abs() < 1e-6);

        // single secret: the adversary is always exact
        let one = crate::model::LabelSpace::secrets(["s"]).unwrap();
        let one_obs = crate::model::LabelSpace::observables(["o"]).unwrap();
        let single = Prior::new(one, vec![1.0]).unwrap();
        let metrics1 = MetricSet::new(
            Matrix::zeros(1, 1),
            Matrix::zeros(1, 1),
            Matrix::zeros(1, 1),
            None,
        )
        .unwrap();
        assert!(max_distortion(&single, &one_obs, &metrics1).unwrap().abs() < 1e-9);

        // degenerate prior: all mass on one secret
        let secrets = crate::model::LabelSpace::secrets(["s1", "s2"]).unwrap();
        let degenerate = Prior::new(secrets, vec![1.0, 0.0]).unwrap();
        let dmax = max_distortion(&degenerate, &obs, &hamming_metrics(2)).unwrap();
        assert!(dmax.abs() < 1e-6);
    }

    #[test]
    fn noop_pruning_is_exact() {
        let (prior, obs, metrics) = two_secret_world();
        let exact =
            optimal_joint(&prior, &obs, &metrics, 0.3, 1.0, &ApproxOptions::none()).unwrap();
        let pruned = optimal_joint(
            &prior,
            &obs,
            &metrics,
            0.3,
            1.0,
            &ApproxOptions {
                radius_disting: Some(1.0),
                radius_support: Some(1.0),
            },
        )
        .unwrap();
        let ce = expected_cost(&prior, &exact, &metrics).unwrap();
        let cp = expected_cost(&prior, &pruned, &metrics).unwrap();
        assert!((ce - cp).abs() < 1e-6);
    }

    #[test]
    fn zero_support_radius_forces_identity_and_infeasible_differential() {
        let (prior, obs, metrics) = two_secret_world();
        let approx = ApproxOptions {
            radius_disting: None,
            radius_support: Some(0.0),
        };
        // distortion with d_m = 0 still works: the identity survives
        let mech = optimal_distortion(
            &prior,
            &obs,
            &metrics,
            0.0,
            Objective::Average,
            &ApproxOptions {
                radius_disting: None,
                radius_support: Some(0.0),
            },
        )
        .unwrap();
        assert_eq!(mech.prob(0, 0), 1.0);
        assert_eq!(mech.prob(1, 1), 1.0);
        // differential rows then pin the surviving entries to zero
        let err = optimal_differential(&prior, &obs, &metrics, 1.0, &approx).unwrap_err();
        assert!(matches!(
            err,
            MechanismError::Infeasible | MechanismError::InfeasibleAfterPruning(_)
        ));
    }

    #[test]
    fn support_radius_requires_ground_distance() {
        let (prior, obs, mut metrics) = two_secret_world();
        metrics.support_dist = None;
        let err = optimal_differential(
            &prior,
            &obs,
            &metrics,
            1.0,
            &ApproxOptions {
                radius_disting: None,
                radius_support: Some(1.0),
            },
        )
        .unwrap_err();
        assert!(matches!(err, MechanismError::InvalidApprox(_)));
    }

    #[test]
    fn joint_cost_dominates_component_costs() {
        let (prior, obs, metrics) = two_secret_world();
        for (dm, eps) in [(0.2, 1.5), (0.35, 1.0), (0.45, 2.0)] {
            let joint =
                optimal_joint(&prior, &obs, &metrics, dm, eps, &ApproxOptions::none()).unwrap();
            let diff =
                optimal_differential(&prior, &obs, &metrics, eps, &ApproxOptions::none()).unwrap();
            let dist = optimal_distortion(
                &prior,
                &obs,
                &metrics,
                dm,
                Objective::Average,
                &ApproxOptions::none(),
            )
            .unwrap();
            let cj = expected_cost(&prior, &joint, &metrics).unwrap();
            let cd = expected_cost(&prior, &diff, &metrics).unwrap();
            let cm = expected_cost(&prior, &dist, &metrics).unwrap();
            assert!(cj >= cd.max(cm) - 1e-6);
        }
    }

    #[test]
    fn cost_monotone_in_thresholds() {
        let (prior, obs, metrics) = two_secret_world();
        let mut last = -1.0;
        for dm in [0.0, 0.1, 0.2, 0.3, 0.4, 0.5] {
            let mech = optimal_distortion(
                &prior,
                &obs,
                &metrics,
                dm,
                Objective::Average,
                &ApproxOptions::none(),
            )
            .unwrap();
            let cost = expected_cost(&prior, &mech, &metrics).unwrap();
            assert!(cost >= last - 1e-6);
            last = cost;
        }
        let mut last = f64::INFINITY;
        for eps in [0.2, 0.5, 1.0, 1.5, 2.0] {
            let mech =
                optimal_differential(&prior, &obs, &metrics, eps, &ApproxOptions::none()).unwrap();
            let cost = expected_cost(&prior, &mech, &metrics).unwrap();
            assert!(cost <= last + 1e-6);
            last = cost;
        }
    }
}
