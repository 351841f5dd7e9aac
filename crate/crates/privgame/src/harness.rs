//! Experiment harness: seeded synthetic users on a grid, the three
//! comparison scenarios, the prior-mismatch study, and the
//! constraint-pruning sweep. Each scenario returns plain row structs and
//! can serialize them as CSV with a `#`-prefixed documentation header.
//!
//! Runs are deterministic for a fixed seed: user traces, priors, and every
//! solver call produce identical bytes (timing columns excepted).

use std::io::Write;
use std::time::Instant;

use thiserror::Error;

use crate::attack::{bayes_attack, optimal_attack, optimal_attack_closed_form, AttackError};
use crate::geo::{
    grid_metrics, grid_spaces, prior_from_trace, sharpen_prior, synthetic_trace, GeoError, Grid,
    MobilityParams,
};
use crate::lp::LpError;
use crate::mechanism::{
    max_distortion, optimal_differential, optimal_distortion, optimal_joint, ApproxOptions,
    MechanismError, Objective,
};
use crate::model::{
    expected_cost, expected_privacy, verify_differential, LabelSpace, Mechanism, MetricSet,
    ModelError, Prior,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Solver(#[from] LpError),
    #[error("row validation failed: {0}")]
    RowValidation(String),
    #[error("invalid ladder: {0}")]
    BadLadder(String),
}

/// Experiment configuration; the defaults give a desk-scale run (an 8x6
/// grid over 6x4 km with 10 seeded users). Paper-scale grids are accepted
/// but need pruning radii to stay tractable.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub grid: Grid,
    pub num_users: usize,
    pub seed: u64,
    pub trace_len: usize,
    pub smoothing: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            grid: Grid::new(8, 6, 6.0, 4.0).expect("default grid is valid"),
            num_users: 10,
            seed: 1,
            trace_len: 400,
            smoothing: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct UserProfile {
    pub id: String,
    pub prior: Prior,
    pub d_max: f64,
}

/// Prepared experiment world: grid metrics plus per-user priors and
/// maximum achievable distortion bounds.
pub struct Harness {
    pub config: ExperimentConfig,
    pub observables: LabelSpace,
    pub metrics: MetricSet,
    pub users: Vec<UserProfile>,
}

/// Parses a `start:end:step` ladder into the inclusive value list.
pub fn parse_ladder(text: &str) -> Result<Vec<f64>, HarnessError> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(HarnessError::BadLadder(format!(
            "expected start:end:step, got '{text}'"
        )));
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| HarnessError::BadLadder(format!("bad number '{p}'")))
        })
        .collect::<Result<_, _>>()?;
    let (start, end, step) = (nums[0], nums[1], nums[2]);
    if !(step > 0.0) || end < start {
        return Err(HarnessError::BadLadder(
            "need step > 0 and end >= start".into(),
        ));
    }
    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        let v = start + step * k as f64;
        if v > end + 1e-9 {
            break;
        }
        out.push(v);
        k += 1;
    }
    Ok(out)
}

impl Harness {
    pub fn new(config: ExperimentConfig) -> Result<Self, HarnessError> {
        let (_, observables) = grid_spaces(&config.grid);
        let metrics = grid_metrics(&config.grid);
        let mut users = Vec::with_capacity(config.num_users);
        for u in 0..config.num_users {
            let seed = config.seed.wrapping_add(u as u64);
            let trace = synthetic_trace(
                &config.grid,
                config.trace_len,
                seed,
                &MobilityParams::default(),
            )?;
            let prior = prior_from_trace(&trace, &config.grid, config.smoothing)?;
            let d_max = max_distortion(&prior, &observables, &metrics)?;
            users.push(UserProfile {
                id: format!("u{u}"),
                prior,
                d_max,
            });
        }
        Ok(Harness {
            config,
            observables,
            metrics,
            users,
        })
    }

    fn ap_optimal(&self, prior: &Prior, mech: &Mechanism) -> Result<f64, HarnessError> {
        let attack = optimal_attack(prior, mech, &self.metrics)?;
        Ok(expected_privacy(prior, mech, &attack, &self.metrics)?)
    }

    fn ap_bayes(&self, prior: &Prior, mech: &Mechanism) -> Result<f64, HarnessError> {
        let attack = bayes_attack(prior, mech)?;
        Ok(expected_privacy(prior, mech, &attack, &self.metrics)?)
    }

    /// Re-validation applied to every mechanism before its row is emitted:
    /// stochastic rows are enforced by the type, so this re-checks the
    /// declared privacy guarantees.
    fn validate_row_mechanism(
        &self,
        prior: &Prior,
        mech: &Mechanism,
        eps_m: Option<f64>,
        d_m: Option<f64>,
    ) -> Result<(), HarnessError> {
        if let Some(eps) = eps_m {
            let report = verify_differential(mech, &self.metrics, eps, None)?;
            if !report.passed {
                return Err(HarnessError::RowValidation(format!(
                    "differential check failed at eps {eps}"
                )));
            }
        }
        if let Some(dm) = d_m {
            let attack = optimal_attack_closed_form(prior, mech, &self.metrics)?;
            let ap = expected_privacy(prior, mech, &attack, &self.metrics)?;
            if ap < dm - 1e-6 {
                return Err(HarnessError::RowValidation(format!(
                    "privacy {ap} below the bound {dm}"
                )));
            }
        }
        Ok(())
    }
}

fn recoverable(err: &MechanismError) -> Option<String> {
    match err {
        MechanismError::DistortionTooLarge { .. } => Some("infeasible-dm-too-large".into()),
        MechanismError::JointInfeasible { .. } => Some("joint-infeasible".into()),
        MechanismError::Infeasible => Some("infeasible".into()),
        MechanismError::InfeasibleAfterPruning(_) => Some("infeasible-after-pruning".into()),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// CSV plumbing
// ---------------------------------------------------------------------------

/// A row type that knows its CSV header and documentation comment.
pub trait CsvRecord {
    fn comment() -> &'static str;
    fn header() -> &'static str;
    fn to_line(&self) -> String;
}

pub fn write_csv<R: CsvRecord, W: Write>(
    rows: &[R],
    extra_comments: &[String],
    w: &mut W,
) -> std::io::Result<()> {
    writeln!(w, "{}", R::comment())?;
    for c in extra_comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "{}", R::header())?;
    for r in rows {
        writeln!(w, "{}", r.to_line())?;
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

// ---------------------------------------------------------------------------
// Scenario 1
// ---------------------------------------------------------------------------

/// One (user, eps) comparison of the three mechanisms, with the distortion
/// bound tied to the privacy the differential mechanism achieves.
#[derive(Debug, Clone)]
pub struct Scenario1Row {
    pub user: String,
    pub eps_m: f64,
    pub d_m: Option<f64>,
    pub cost_eps: Option<f64>,
    pub cost_dm: Option<f64>,
    pub cost_joint: Option<f64>,
    pub ap_opt_eps: Option<f64>,
    pub ap_opt_dm: Option<f64>,
    pub ap_opt_joint: Option<f64>,
    pub ap_bayes_eps: Option<f64>,
    pub ap_bayes_dm: Option<f64>,
    pub ap_bayes_joint: Option<f64>,
    pub status: String,
}

impl CsvRecord for Scenario1Row {
    fn comment() -> &'static str {
        "# scenario1: per user and eps_m, build the differential mechanism, set d_m to its\n\
         # optimal-attack privacy, build the distortion and joint mechanisms, and attack all\n\
         # three with the optimal and Bayesian attacks. costs are expected Hamming cost;\n\
         # ap_* are expected adversary errors in km."
    }

    fn header() -> &'static str {
        "user,eps_m,d_m,cost_eps,cost_dm,cost_joint,ap_opt_eps,ap_opt_dm,ap_opt_joint,\
         ap_bayes_eps,ap_bayes_dm,ap_bayes_joint,status"
    }

    fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.user,
            self.eps_m,
            opt(self.d_m),
            opt(self.cost_eps),
            opt(self.cost_dm),
            opt(self.cost_joint),
            opt(self.ap_opt_eps),
            opt(self.ap_opt_dm),
            opt(self.ap_opt_joint),
            opt(self.ap_bayes_eps),
            opt(self.ap_bayes_dm),
            opt(self.ap_bayes_joint),
            self.status
        )
    }
}

impl Harness {
    pub fn scenario1(&self, eps_ladder: &[f64]) -> Result<Vec<Scenario1Row>, HarnessError> {
        let none = ApproxOptions::none();
        let mut rows = Vec::new();
        for user in &self.users {
            for &eps in eps_ladder {
                let row = self.scenario1_cell(user, eps, &none)?;
                rows.push(row);
            }
        }
        Ok(rows)
    }

    fn scenario1_cell(
        &self,
        user: &UserProfile,
        eps: f64,
        none: &ApproxOptions,
    ) -> Result<Scenario1Row, HarnessError> {
        let mut row = Scenario1Row {
            user: user.id.clone(),
            eps_m: eps,
            d_m: None,
            cost_eps: None,
            cost_dm: None,
            cost_joint: None,
            ap_opt_eps: None,
            ap_opt_dm: None,
            ap_opt_joint: None,
            ap_bayes_eps: None,
            ap_bayes_dm: None,
            ap_bayes_joint: None,
            status: "ok".into(),
        };
        let p_eps =
            match optimal_differential(&user.prior, &self.observables, &self.metrics, eps, none) {
                Ok(m) => m,
                Err(e) => {
                    row.status = recoverable(&e).ok_or(e)?;
                    return Ok(row);
                }
            };
        let ap_eps = self.ap_optimal(&user.prior, &p_eps)?;
        // guard against the attack objective exceeding the achievable
        // maximum by solver tolerance
        let d_m = ap_eps.min(user.d_max);
        row.d_m = Some(d_m);
        let p_dm = match optimal_distortion(
            &user.prior,
            &self.observables,
            &self.metrics,
            d_m,
            Objective::Average,
            none,
        ) {
            Ok(m) => m,
            Err(e) => {
                row.status = recoverable(&e).ok_or(e)?;
                return Ok(row);
            }
        };
        let p_joint = match optimal_joint(
            &user.prior,
            &self.observables,
            &self.metrics,
            d_m,
            eps,
            none,
        ) {
            Ok(m) => m,
            Err(e) => {
                row.status = recoverable(&e).ok_or(e)?;
                return Ok(row);
            }
        };

        self.validate_row_mechanism(&user.prior, &p_eps, Some(eps), None)?;
        self.validate_row_mechanism(&user.prior, &p_dm, None, Some(d_m))?;
        self.validate_row_mechanism(&user.prior, &p_joint, Some(eps), Some(d_m))?;

        row.cost_eps = Some(expected_cost(&user.prior, &p_eps, &self.metrics)?);
        row.cost_dm = Some(expected_cost(&user.prior, &p_dm, &self.metrics)?);
        row.cost_joint = Some(expected_cost(&user.prior, &p_joint, &self.metrics)?);
        row.ap_opt_eps = Some(ap_eps);
        row.ap_opt_dm = Some(self.ap_optimal(&user.prior, &p_dm)?);
        row.ap_opt_joint = Some(self.ap_optimal(&user.prior, &p_joint)?);
        row.ap_bayes_eps = Some(self.ap_bayes(&user.prior, &p_eps)?);
        row.ap_bayes_dm = Some(self.ap_bayes(&user.prior, &p_dm)?);
        row.ap_bayes_joint = Some(self.ap_bayes(&user.prior, &p_joint)?);
        Ok(row)
    }
}

// ---------------------------------------------------------------------------
// Scenario 2
// ---------------------------------------------------------------------------

/// One (user, eps, offset) cell: the distortion bound is pushed above what
/// the differential mechanism achieves.
#[derive(Debug, Clone)]
pub struct Scenario2Row {
    pub user: String,
    pub eps_m: f64,
    pub offset: f64,
    pub d_m: f64,
    pub d_max: f64,
    pub cost_dm: Option<f64>,
    pub cost_joint: Option<f64>,
    pub ap_opt_dm: Option<f64>,
    pub ap_opt_joint: Option<f64>,
    pub status: String,
}

impl CsvRecord for Scenario2Row {
    fn comment() -> &'static str {
        "# scenario2: d_m = AP(differential mechanism) + offset. The joint mechanism must\n\
         # deliver the distortion target; rows where d_m exceeds the achievable maximum\n\
         # are flagged infeasible."
    }

    fn header() -> &'static str {
        "user,eps_m,offset,d_m,d_max,cost_dm,cost_joint,ap_opt_dm,ap_opt_joint,status"
    }

    fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.user,
            self.eps_m,
            self.offset,
            self.d_m,
            self.d_max,
            opt(self.cost_dm),
            opt(self.cost_joint),
            opt(self.ap_opt_dm),
            opt(self.ap_opt_joint),
            self.status
        )
    }
}

impl Harness {
    pub fn scenario2(
        &self,
        eps_ladder: &[f64],
        offsets: &[f64],
    ) -> Result<Vec<Scenario2Row>, HarnessError> {
        let none = ApproxOptions::none();
        let mut rows = Vec::new();
        for user in &self.users {
            for &eps in eps_ladder {
                let p_eps = optimal_differential(
                    &user.prior,
                    &self.observables,
                    &self.metrics,
                    eps,
                    &none,
                )?;
                let ap_eps = self.ap_optimal(&user.prior, &p_eps)?;
                for &offset in offsets {
                    let d_m = ap_eps + offset;
                    let mut row = Scenario2Row {
                        user: user.id.clone(),
                        eps_m: eps,
                        offset,
                        d_m,
                        d_max: user.d_max,
                        cost_dm: None,
                        cost_joint: None,
                        ap_opt_dm: None,
                        ap_opt_joint: None,
                        status: "ok".into(),
                    };
                    match self.scenario2_cell(user, eps, d_m) {
                        Ok((cost_dm, cost_joint, ap_dm, ap_joint)) => {
                            row.cost_dm = Some(cost_dm);
                            row.cost_joint = Some(cost_joint);
                            row.ap_opt_dm = Some(ap_dm);
                            row.ap_opt_joint = Some(ap_joint);
                        }
                        Err(HarnessError::Mechanism(e)) => match recoverable(&e) {
                            Some(status) => row.status = status,
                            None => return Err(e.into()),
                        },
                        Err(e) => return Err(e),
                    }
                    rows.push(row);
                }
            }
        }
        Ok(rows)
    }

    fn scenario2_cell(
        &self,
        user: &UserProfile,
        eps: f64,
        d_m: f64,
    ) -> Result<(f64, f64, f64, f64), HarnessError> {
        let none = ApproxOptions::none();
        let p_dm = optimal_distortion(
            &user.prior,
            &self.observables,
            &self.metrics,
            d_m,
            Objective::Average,
            &none,
        )?;
        let p_joint = optimal_joint(
            &user.prior,
            &self.observables,
            &self.metrics,
            d_m,
            eps,
            &none,
        )?;
        self.validate_row_mechanism(&user.prior, &p_dm, None, Some(d_m))?;
        self.validate_row_mechanism(&user.prior, &p_joint, Some(eps), Some(d_m))?;
        Ok((
            expected_cost(&user.prior, &p_dm, &self.metrics)?,
            expected_cost(&user.prior, &p_joint, &self.metrics)?,
            self.ap_optimal(&user.prior, &p_dm)?,
            self.ap_optimal(&user.prior, &p_joint)?,
        ))
    }
}

// ---------------------------------------------------------------------------
// Scenario 3
// ---------------------------------------------------------------------------

/// One (user, eps, dm) cell of the independent-threshold sweep.
#[derive(Debug, Clone)]
pub struct Scenario3Row {
    pub user: String,
    pub eps_m: f64,
    pub d_m: f64,
    pub cost_eps: Option<f64>,
    pub cost_dm: Option<f64>,
    pub cost_joint: Option<f64>,
    pub ap_eps: Option<f64>,
    pub ap_dm: Option<f64>,
    pub ap_joint: Option<f64>,
    pub status: String,
}

impl CsvRecord for Scenario3Row {
    fn comment() -> &'static str {
        "# scenario3: Cartesian sweep over independent eps_m and d_m thresholds (d_m ladder\n\
         # capped at each user's maximum achievable distortion). Rows sorted by the joint\n\
         # mechanism's privacy, then cost."
    }

    fn header() -> &'static str {
        "user,eps_m,d_m,cost_eps,cost_dm,cost_joint,ap_eps,ap_dm,ap_joint,status"
    }

    fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.user,
            self.eps_m,
            self.d_m,
            opt(self.cost_eps),
            opt(self.cost_dm),
            opt(self.cost_joint),
            opt(self.ap_eps),
            opt(self.ap_dm),
            opt(self.ap_joint),
            self.status
        )
    }
}

impl Harness {
    pub fn scenario3(
        &self,
        eps_ladder: &[f64],
        dm_ladder: &[f64],
    ) -> Result<Vec<Scenario3Row>, HarnessError> {
        let none = ApproxOptions::none();
        let mut rows = Vec::new();
        for user in &self.users {
            // cap the distortion ladder at this user's maximum, and include
            // the maximum itself as the top rung
            let mut dms: Vec<f64> = dm_ladder
                .iter()
                .copied()
                .filter(|&dm| dm < user.d_max - 1e-9)
                .collect();
            dms.push(user.d_max);

            let mut diff_cache: Vec<(f64, Mechanism)> = Vec::new();
            for &eps in eps_ladder {
                let p_eps = optimal_differential(
                    &user.prior,
                    &self.observables,
                    &self.metrics,
                    eps,
                    &none,
                )?;
                diff_cache.push((eps, p_eps));
            }
            for &dm in &dms {
                let p_dm = match optimal_distortion(
                    &user.prior,
                    &self.observables,
                    &self.metrics,
                    dm,
                    Objective::Average,
                    &none,
                ) {
                    Ok(m) => m,
                    Err(e) => {
                        let status = recoverable(&e).ok_or(e)?;
                        for &(eps, _) in &diff_cache {
                            rows.push(Scenario3Row {
                                user: user.id.clone(),
                                eps_m: eps,
                                d_m: dm,
                                cost_eps: None,
                                cost_dm: None,
                                cost_joint: None,
                                ap_eps: None,
                                ap_dm: None,
                                ap_joint: None,
                                status: status.clone(),
                            });
                        }
                        continue;
                    }
                };
                let cost_dm = expected_cost(&user.prior, &p_dm, &self.metrics)?;
                let ap_dm = self.ap_optimal(&user.prior, &p_dm)?;
                for (eps, p_eps) in &diff_cache {
                    let mut row = Scenario3Row {
                        user: user.id.clone(),
                        eps_m: *eps,
                        d_m: dm,
                        cost_eps: Some(expected_cost(&user.prior, p_eps, &self.metrics)?),
                        cost_dm: Some(cost_dm),
                        cost_joint: None,
                        ap_eps: Some(self.ap_optimal(&user.prior, p_eps)?),
                        ap_dm: Some(ap_dm),
                        ap_joint: None,
                        status: "ok".into(),
                    };
                    match optimal_joint(
                        &user.prior,
                        &self.observables,
                        &self.metrics,
                        dm,
                        *eps,
                        &none,
                    ) {
                        Ok(p_joint) => {
                            self.validate_row_mechanism(
                                &user.prior,
                                &p_joint,
                                Some(*eps),
                                Some(dm),
                            )?;
                            row.cost_joint =
                                Some(expected_cost(&user.prior, &p_joint, &self.metrics)?);
                            row.ap_joint = Some(self.ap_optimal(&user.prior, &p_joint)?);
                        }
                        Err(e) => {
                            row.status = recoverable(&e).ok_or(e)?;
                        }
                    }
                    rows.push(row);
                }
            }
        }
        // Sort all experiments by the joint mechanism's outcome; ties stay
        // in deterministic (user, eps, dm) order via a stable sort.
        rows.sort_by(|a, b| {
            let ka = (a.ap_joint.unwrap_or(f64::MAX), a.cost_joint.unwrap_or(f64::MAX));
            let kb = (b.ap_joint.unwrap_or(f64::MAX), b.cost_joint.unwrap_or(f64::MAX));
            ka.partial_cmp(&kb).expect("no NaN keys")
        });
        Ok(rows)
    }
}

// ---------------------------------------------------------------------------
// Prior mismatch
// ---------------------------------------------------------------------------

/// One (user, eps) cell of the informed-adversary study. `ap_mis_*` is the
/// adversary's error when both his attack and his evaluation world use the
/// sharpened prior; `ap_cross_*` evaluates the design-prior attack in that
/// same sharpened world, so `ap_mis <= ap_cross` by attack optimality.
#[derive(Debug, Clone)]
pub struct PriorMismatchRow {
    pub user: String,
    pub eps_m: f64,
    pub d_m: f64,
    pub k: usize,
    pub beta: f64,
    pub entropy_pi: f64,
    pub entropy_pi_hat: f64,
    pub ap_opt_eps: f64,
    pub ap_opt_dm: f64,
    pub ap_mis_eps: f64,
    pub ap_mis_dm: f64,
    pub ap_cross_eps: f64,
    pub ap_cross_dm: f64,
}

impl CsvRecord for PriorMismatchRow {
    fn comment() -> &'static str {
        "# prior mismatch: mechanisms built under the trace prior pi with d_m = AP(p_eps);\n\
         # the adversary attacks with the sharpened prior pi_hat (top-k boosted by beta).\n\
         # ap_opt_*: optimal attack under pi. ap_mis_*: pi_hat-informed attack evaluated\n\
         # under pi_hat. ap_cross_*: pi-designed attack evaluated under pi_hat."
    }

    fn header() -> &'static str {
        "user,eps_m,d_m,k,beta,entropy_pi,entropy_pi_hat,ap_opt_eps,ap_opt_dm,\
         ap_mis_eps,ap_mis_dm,ap_cross_eps,ap_cross_dm"
    }

    fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.user,
            self.eps_m,
            self.d_m,
            self.k,
            self.beta,
            self.entropy_pi,
            self.entropy_pi_hat,
            self.ap_opt_eps,
            self.ap_opt_dm,
            self.ap_mis_eps,
            self.ap_mis_dm,
            self.ap_cross_eps,
            self.ap_cross_dm
        )
    }
}

impl Harness {
    pub fn prior_mismatch(
        &self,
        eps_ladder: &[f64],
        k: usize,
        beta: f64,
    ) -> Result<Vec<PriorMismatchRow>, HarnessError> {
        let none = ApproxOptions::none();
        let mut rows = Vec::new();
        for user in &self.users {
            let pi_hat = sharpen_prior(&user.prior, k, beta)?;
            for &eps in eps_ladder {
                let p_eps = optimal_differential(
                    &user.prior,
                    &self.observables,
                    &self.metrics,
                    eps,
                    &none,
                )?;
                let ap_eps = self.ap_optimal(&user.prior, &p_eps)?;
                let d_m = ap_eps.min(user.d_max);
                let p_dm = optimal_distortion(
                    &user.prior,
                    &self.observables,
                    &self.metrics,
                    d_m,
                    Objective::Average,
                    &none,
                )?;

                let q_pi_eps = optimal_attack(&user.prior, &p_eps, &self.metrics)?;
                let q_pi_dm = optimal_attack(&user.prior, &p_dm, &self.metrics)?;
                let q_hat_eps = optimal_attack(&pi_hat, &p_eps, &self.metrics)?;
                let q_hat_dm = optimal_attack(&pi_hat, &p_dm, &self.metrics)?;

                rows.push(PriorMismatchRow {
                    user: user.id.clone(),
                    eps_m: eps,
                    d_m,
                    k,
                    beta,
                    entropy_pi: user.prior.entropy(),
                    entropy_pi_hat: pi_hat.entropy(),
                    ap_opt_eps: ap_eps,
                    ap_opt_dm: expected_privacy(&user.prior, &p_dm, &q_pi_dm, &self.metrics)?,
                    ap_mis_eps: expected_privacy(&pi_hat, &p_eps, &q_hat_eps, &self.metrics)?,
                    ap_mis_dm: expected_privacy(&pi_hat, &p_dm, &q_hat_dm, &self.metrics)?,
                    ap_cross_eps: expected_privacy(&pi_hat, &p_eps, &q_pi_eps, &self.metrics)?,
                    ap_cross_dm: expected_privacy(&pi_hat, &p_dm, &q_pi_dm, &self.metrics)?,
                });
            }
        }
        Ok(rows)
    }
}

// ---------------------------------------------------------------------------
// Approximation sweep
// ---------------------------------------------------------------------------

/// One (user, radius) cell of the pruning sweep. The radius prunes the
/// differential rows of the joint mechanism; kept_pairs counts the ordered
/// secret pairs still constrained. solve_secs is wall-clock time of the
/// pruned construction and is exempt from byte-level determinism.
#[derive(Debug, Clone)]
pub struct ApproxSweepRow {
    pub user: String,
    pub radius: f64,
    pub kept_pairs: usize,
    pub ap_exact: f64,
    pub ap_pruned: Option<f64>,
    pub abs_error: Option<f64>,
    pub solve_secs: f64,
    pub status: String,
}

impl CsvRecord for ApproxSweepRow {
    fn comment() -> &'static str {
        "# approximation sweep: joint mechanism with differential rows pruned beyond the\n\
         # radius (km), against the exact mechanism computed once per user. abs_error is\n\
         # |AP_exact - AP_pruned| under the optimal attack; solve_secs is wall-clock."
    }

    fn header() -> &'static str {
        "user,radius,kept_pairs,ap_exact,ap_pruned,abs_error,solve_secs,status"
    }

    fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.user,
            self.radius,
            self.kept_pairs,
            self.ap_exact,
            opt(self.ap_pruned),
            opt(self.abs_error),
            self.solve_secs,
            self.status
        )
    }
}

impl Harness {
    pub fn approx_sweep(
        &self,
        eps: f64,
        d_m: f64,
        radii: &[f64],
    ) -> Result<Vec<ApproxSweepRow>, HarnessError> {
        let n = self.metrics.num_secrets();
        let mut rows = Vec::new();
        for user in &self.users {
            let exact = optimal_joint(
                &user.prior,
                &self.observables,
                &self.metrics,
                d_m,
                eps,
                &ApproxOptions::none(),
            )?;
            let ap_exact = self.ap_optimal(&user.prior, &exact)?;
            for &radius in radii {
                let approx = ApproxOptions {
                    radius_disting: Some(radius),
                    radius_support: None,
                };
                let plan = crate::mechanism::prune_constraints(&self.metrics, &approx)?;
                let kept_pairs = n * (n - 1) - plan.dropped_pairs;
                let start = Instant::now();
                let outcome = optimal_joint(
                    &user.prior,
                    &self.observables,
                    &self.metrics,
                    d_m,
                    eps,
                    &approx,
                );
                let solve_secs = start.elapsed().as_secs_f64();
                let mut row = ApproxSweepRow {
                    user: user.id.clone(),
                    radius,
                    kept_pairs,
                    ap_exact,
                    ap_pruned: None,
                    abs_error: None,
                    solve_secs,
                    status: "ok".into(),
                };
                match outcome {
                    Ok(pruned) => {
                        let ap = self.ap_optimal(&user.prior, &pruned)?;
                        row.ap_pruned = Some(ap);
                        row.abs_error = Some((ap - ap_exact).abs());
                    }
                    Err(e) => {
                        row.status = recoverable(&e).ok_or(e)?;
                    }
                }
                rows.push(row);
            }
        }
        Ok(rows)
    }
}
