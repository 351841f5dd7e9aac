//! Domain model: label spaces, priors, mechanisms, attacks, distance
//! tables, and the scalar privacy/utility metrics defined over them.
//!
//! All values are immutable after construction and freely shareable across
//! threads. Indices into a [`LabelSpace`] are stable: position in the label
//! list is the index used by every matrix here.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute feasibility tolerance used by the differential-privacy checks
/// and the row-stochasticity invariants.
pub const FEAS_TOL: f64 = 1e-7;

/// Row-sum slack accepted when loading mechanisms/attacks from JSON; rows
/// within this slack are renormalized to sum exactly 1.
pub const LOAD_ROW_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unknown label: {0}")]
    UnknownLabel(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid label space: {0}")]
    InvalidSpace(String),
    #[error("invalid metric table: {0}")]
    InvalidMetric(String),
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("malformed JSON: {0}")]
    Json(String),
}

/// Whether a label space plays the secret or the observable role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpaceRole {
    Secrets,
    Observables,
}

/// An ordered, finite set of distinct labels with stable indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSpace {
    labels: Vec<String>,
    role: SpaceRole,
}

impl LabelSpace {
    pub fn new<S: Into<String>>(
        labels: impl IntoIterator<Item = S>,
        role: SpaceRole,
    ) -> Result<Self, ModelError> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(ModelError::InvalidSpace("label space is empty".into()));
        }
        let mut sorted = labels.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(ModelError::InvalidSpace("duplicate labels".into()));
        }
        Ok(LabelSpace { labels, role })
    }

    pub fn secrets<S: Into<String>>(
        labels: impl IntoIterator<Item = S>,
    ) -> Result<Self, ModelError> {
        Self::new(labels, SpaceRole::Secrets)
    }

    pub fn observables<S: Into<String>>(
        labels: impl IntoIterator<Item = S>,
    ) -> Result<Self, ModelError> {
        Self::new(labels, SpaceRole::Observables)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn role(&self) -> SpaceRole {
        self.role
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, idx: usize) -> &str {
        &self.labels[idx]
    }

    pub fn index_of(&self, label: &str) -> Result<usize, ModelError> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| ModelError::UnknownLabel(label.to_string()))
    }

    /// Same labels in the same order, role swapped.
    pub fn with_role(&self, role: SpaceRole) -> Self {
        LabelSpace {
            labels: self.labels.clone(),
            role,
        }
    }
}

/// Dense row-major matrix of nonnegative finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(nrows * ncols);
        for r in &rows {
            if r.len() != ncols {
                return Err(ModelError::DimensionMismatch("ragged matrix rows".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: nrows,
            cols: ncols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    fn check_nonnegative_finite(&self, what: &str) -> Result<(), ModelError> {
        for &v in &self.data {
            if !v.is_finite() || v < 0.0 {
                return Err(ModelError::InvalidMetric(format!(
                    "{what} entries must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Probability distribution over the secret space.
#[derive(Debug, Clone)]
pub struct Prior {
    space: LabelSpace,
    probs: Vec<f64>,
}

impl Prior {
    pub fn new(space: LabelSpace, probs: Vec<f64>) -> Result<Self, ModelError> {
        if space.len() != probs.len() {
            return Err(ModelError::DimensionMismatch(format!(
                "prior has {} entries over a space of {} labels",
                probs.len(),
                space.len()
            )));
        }
        if probs.iter().any(|&p| !p.is_finite() || p < 0.0) {
            return Err(ModelError::InvalidDistribution(
                "probabilities must be finite and >= 0".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ModelError::InvalidDistribution(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Prior { space, probs })
    }

    pub fn uniform(space: LabelSpace) -> Self {
        let n = space.len();
        Prior {
            space,
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn space(&self) -> &LabelSpace {
        &self.space
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }
}

/// Obfuscation mechanism: `rows[s][o] = p(o | s)`, each row a distribution
/// over observables.
#[derive(Debug, Clone)]
pub struct Mechanism {
    secrets: LabelSpace,
    observables: LabelSpace,
    rows: Matrix,
}

/// Inference attack: `rows[o][s_hat] = q(s_hat | o)`, each row a
/// distribution over estimated secrets.
#[derive(Debug, Clone)]
pub struct Attack {
    observables: LabelSpace,
    secrets: LabelSpace,
    rows: Matrix,
}

fn check_stochastic(rows: &Matrix, tol: f64, what: &str) -> Result<(), ModelError> {
    for r in 0..rows.rows() {
        let mut sum = 0.0;
        for &v in rows.row(r) {
            if !v.is_finite() || v < 0.0 {
                return Err(ModelError::InvalidDistribution(format!(
                    "{what} row {r} has a negative or non-finite entry"
                )));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > tol {
            return Err(ModelError::InvalidDistribution(format!(
                "{what} row {r} sums to {sum}, expected 1"
            )));
        }
    }
    Ok(())
}

impl Mechanism {
    pub fn new(
        secrets: LabelSpace,
        observables: LabelSpace,
        rows: Matrix,
    ) -> Result<Self, ModelError> {
        if rows.rows() != secrets.len() || rows.cols() != observables.len() {
            return Err(ModelError::DimensionMismatch(format!(
                "mechanism is {}x{}, spaces are {}x{}",
                rows.rows(),
                rows.cols(),
                secrets.len(),
                observables.len()
            )));
        }
        check_stochastic(&rows, FEAS_TOL, "mechanism")?;
        Ok(Mechanism {
            secrets,
            observables,
            rows,
        })
    }

    /// Identity mechanism over a common label set (requires |S| = |O| with
    /// matching label order).
    pub fn identity(secrets: LabelSpace, observables: LabelSpace) -> Result<Self, ModelError> {
        if secrets.len() != observables.len() {
            return Err(ModelError::DimensionMismatch(
                "identity mechanism needs equal-size spaces".into(),
            ));
        }
        let n = secrets.len();
        let mut rows = Matrix::zeros(n, n);
        for i in 0..n {
            rows.set(i, i, 1.0);
        }
        Mechanism::new(secrets, observables, rows)
    }

    /// Uniform mechanism: every observable equally likely for every secret.
    pub fn uniform(secrets: LabelSpace, observables: LabelSpace) -> Self {
        let (n, m) = (secrets.len(), observables.len());
        let mut rows = Matrix::zeros(n, m);
        for r in 0..n {
            rows.row_mut(r).fill(1.0 / m as f64);
        }
        Mechanism {
            secrets,
            observables,
            rows,
        }
    }

    pub fn secrets(&self) -> &LabelSpace {
        &self.secrets
    }

    pub fn observables(&self) -> &LabelSpace {
        &self.observables
    }

    pub fn rows(&self) -> &Matrix {
        &self.rows
    }

    #[inline]
    pub fn prob(&self, s: usize, o: usize) -> f64 {
        self.rows.get(s, o)
    }
}

impl Attack {
    pub fn new(
        observables: LabelSpace,
        secrets: LabelSpace,
        rows: Matrix,
    ) -> Result<Self, ModelError> {
        if rows.rows() != observables.len() || rows.cols() != secrets.len() {
            return Err(ModelError::DimensionMismatch(format!(
                "attack is {}x{}, spaces are {}x{}",
                rows.rows(),
                rows.cols(),
                observables.len(),
                secrets.len()
            )));
        }
        check_stochastic(&rows, FEAS_TOL, "attack")?;
        Ok(Attack {
            observables,
            secrets,
            rows,
        })
    }

    pub fn identity(observables: LabelSpace, secrets: LabelSpace) -> Result<Self, ModelError> {
        if secrets.len() != observables.len() {
            return Err(ModelError::DimensionMismatch(
                "identity attack needs equal-size spaces".into(),
            ));
        }
        let n = secrets.len();
        let mut rows = Matrix::zeros(n, n);
        for i in 0..n {
            rows.set(i, i, 1.0);
        }
        Attack::new(observables, secrets, rows)
    }

    pub fn observables(&self) -> &LabelSpace {
        &self.observables
    }

    pub fn secrets(&self) -> &LabelSpace {
        &self.secrets
    }

    pub fn rows(&self) -> &Matrix {
        &self.rows
    }

    #[inline]
    pub fn prob(&self, o: usize, s_hat: usize) -> f64 {
        self.rows.get(o, s_hat)
    }
}

/// The three distance tables driving the optimization problems, plus an
/// optional secret-to-observable ground distance used only by support
/// pruning.
///
/// Index conventions: `cost.get(s, o)` is the utility cost c(o, s) of
/// releasing observable `o` for secret `s`; `privacy_dist.get(s_hat, s)` is
/// the user's privacy gain d(s_hat, s) when the adversary estimates `s_hat`
/// for true secret `s` (need not be symmetric); `disting.get(s, s2)` is the
/// distinguishability metric with a zero diagonal; `support_dist.get(s, o)`
/// is a ground distance between secrets and observables.
#[derive(Debug, Clone)]
pub struct MetricSet {
    pub cost: Matrix,
    pub privacy_dist: Matrix,
    pub disting: Matrix,
    pub support_dist: Option<Matrix>,
}

impl MetricSet {
    pub fn new(
        cost: Matrix,
        privacy_dist: Matrix,
        disting: Matrix,
        support_dist: Option<Matrix>,
    ) -> Result<Self, ModelError> {
        cost.check_nonnegative_finite("cost")?;
        privacy_dist.check_nonnegative_finite("privacy_dist")?;
        disting.check_nonnegative_finite("disting")?;
        if disting.rows() != disting.cols() {
            return Err(ModelError::DimensionMismatch(
                "disting must be square over secrets".into(),
            ));
        }
        for s in 0..disting.rows() {
            if disting.get(s, s) != 0.0 {
                return Err(ModelError::InvalidMetric(format!(
                    "disting({s},{s}) must be 0"
                )));
            }
        }
        if privacy_dist.rows() != privacy_dist.cols() {
            return Err(ModelError::DimensionMismatch(
                "privacy_dist must be square over secrets".into(),
            ));
        }
        if let Some(sd) = &support_dist {
            sd.check_nonnegative_finite("support_dist")?;
        }
        Ok(MetricSet {
            cost,
            privacy_dist,
            disting,
            support_dist,
        })
    }

    pub fn num_secrets(&self) -> usize {
        self.cost.rows()
    }

    pub fn num_observables(&self) -> usize {
        self.cost.cols()
    }
}

/// Privacy thresholds a mechanism must respect.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PrivacyBounds {
    pub d_m: f64,
    pub eps_m: f64,
    pub d_eps_m: Option<f64>,
}

impl PrivacyBounds {
    pub fn new(d_m: f64, eps_m: f64, d_eps_m: Option<f64>) -> Result<Self, ModelError> {
        if !(d_m >= 0.0) || !(eps_m >= 0.0) || d_eps_m.is_some_and(|v| !(v >= 0.0)) {
            return Err(ModelError::InvalidBounds(
                "thresholds must be nonnegative".into(),
            ));
        }
        Ok(PrivacyBounds { d_m, eps_m, d_eps_m })
    }
}

// ---------------------------------------------------------------------------
// Scalar metrics
// ---------------------------------------------------------------------------

fn check_cost_dims(prior: Option<&Prior>, mech: &Mechanism, metrics: &MetricSet) -> Result<(), ModelError> {
    if let Some(p) = prior {
        if p.len() != mech.secrets().len() {
            return Err(ModelError::DimensionMismatch(
                "prior and mechanism secret spaces differ".into(),
            ));
        }
    }
    if metrics.cost.rows() != mech.secrets().len() || metrics.cost.cols() != mech.observables().len()
    {
        return Err(ModelError::DimensionMismatch(
            "cost table does not match the mechanism".into(),
        ));
    }
    Ok(())
}

fn check_privacy_dims(mech: &Mechanism, attack: &Attack, metrics: &MetricSet) -> Result<(), ModelError> {
    if attack.observables().len() != mech.observables().len()
        || attack.secrets().len() != mech.secrets().len()
    {
        return Err(ModelError::DimensionMismatch(
            "attack and mechanism spaces differ".into(),
        ));
    }
    if metrics.privacy_dist.rows() != mech.secrets().len() {
        return Err(ModelError::DimensionMismatch(
            "privacy_dist does not match the secret space".into(),
        ));
    }
    Ok(())
}

/// Expected utility cost of a mechanism: sum_s pi(s) sum_o p(o|s) c(o,s).
pub fn expected_cost(prior: &Prior, mech: &Mechanism, metrics: &MetricSet) -> Result<f64, ModelError> {
    check_cost_dims(Some(prior), mech, metrics)?;
    let mut total = 0.0;
    for (s, &ps) in prior.probs().iter().enumerate() {
        if ps == 0.0 {
            continue;
        }
        let mrow = mech.rows.row(s);
        let crow = metrics.cost.row(s);
        let mut acc = 0.0;
        for (&p, &c) in mrow.iter().zip(crow) {
            acc += p * c;
        }
        total += ps * acc;
    }
    Ok(total)
}

/// Worst-case utility cost over secrets: max_s sum_o p(o|s) c(o,s).
pub fn worst_case_cost(mech: &Mechanism, metrics: &MetricSet) -> Result<f64, ModelError> {
    check_cost_dims(None, mech, metrics)?;
    let mut worst = 0.0f64;
    for s in 0..mech.secrets().len() {
        let mut acc = 0.0;
        for (&p, &c) in mech.rows.row(s).iter().zip(metrics.cost.row(s)) {
            acc += p * c;
        }
        worst = worst.max(acc);
    }
    Ok(worst)
}

/// Privacy of one secret under a mechanism/attack pair:
/// sum_o p(o|s) sum_shat q(shat|o) d(shat, s).
pub fn privacy_of_secret(
    mech: &Mechanism,
    attack: &Attack,
    metrics: &MetricSet,
    s: usize,
) -> Result<f64, ModelError> {
    check_privacy_dims(mech, attack, metrics)?;
    if s >= mech.secrets().len() {
        return Err(ModelError::UnknownLabel(format!("secret index {s}")));
    }
    let mut total = 0.0;
    for (o, &po) in mech.rows.row(s).iter().enumerate() {
        if po == 0.0 {
            continue;
        }
        let qrow = attack.rows.row(o);
        let mut acc = 0.0;
        for (s_hat, &q) in qrow.iter().enumerate() {
            acc += q * metrics.privacy_dist.get(s_hat, s);
        }
        total += po * acc;
    }
    Ok(total)
}

/// Conditional expected estimation error of the adversary for secret `s`;
/// numerically identical to [`privacy_of_secret`], exposed under the
/// adversary-side name used by the prior-free attack objectives.
pub fn conditional_error(
    mech: &Mechanism,
    attack: &Attack,
    metrics: &MetricSet,
    s: usize,
) -> Result<f64, ModelError> {
    privacy_of_secret(mech, attack, metrics, s)
}

/// Expected distortion privacy: the prior-weighted average of
/// [`privacy_of_secret`]. This is the quantity reported as AP(.) by the
/// experiment harness.
pub fn expected_privacy(
    prior: &Prior,
    mech: &Mechanism,
    attack: &Attack,
    metrics: &MetricSet,
) -> Result<f64, ModelError> {
    if prior.len() != mech.secrets().len() {
        return Err(ModelError::DimensionMismatch(
            "prior and mechanism secret spaces differ".into(),
        ));
    }
    let mut total = 0.0;
    for (s, &ps) in prior.probs().iter().enumerate() {
        if ps > 0.0 {
            total += ps * privacy_of_secret(mech, attack, metrics, s)?;
        }
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Differential-privacy verification
// ---------------------------------------------------------------------------

/// Worst triple found by [`verify_differential`]: the constraint margin is
/// `p(o|s) - bound * p(o|s2)`, positive when violated.
#[derive(Debug, Clone, Copy)]
pub struct DifferentialViolation {
    pub s: usize,
    pub s2: usize,
    pub o: usize,
    pub margin: f64,
}

#[derive(Debug, Clone)]
pub struct DifferentialReport {
    pub passed: bool,
    pub worst: Option<DifferentialViolation>,
}

/// Checks the metric differential-privacy inequalities on a mechanism.
///
/// Without `d_eps_m`, every ordered pair (s, s2) must satisfy
/// `p(o|s) <= exp(eps_m * disting(s, s2)) * p(o|s2)`. With `d_eps_m`, only
/// pairs with `disting(s, s2) <= d_eps_m` are constrained and the bound
/// factor is the flat `exp(eps_m)`. Checks use the subtraction form with
/// tolerance [`FEAS_TOL`] so zero probabilities are legal.
pub fn verify_differential(
    mech: &Mechanism,
    metrics: &MetricSet,
    eps_m: f64,
    d_eps_m: Option<f64>,
) -> Result<DifferentialReport, ModelError> {
    let n = mech.secrets().len();
    if metrics.disting.rows() != n {
        return Err(ModelError::DimensionMismatch(
            "disting does not match the secret space".into(),
        ));
    }
    if !(eps_m >= 0.0) {
        return Err(ModelError::InvalidBounds("eps_m must be >= 0".into()));
    }
    let mut worst: Option<DifferentialViolation> = None;
    for s in 0..n {
        for s2 in 0..n {
            if s == s2 {
                continue;
            }
            let dist = metrics.disting.get(s, s2);
            let bound = match d_eps_m {
                Some(cap) => {
                    if dist > cap {
                        continue;
                    }
                    eps_m.min(700.0).exp()
                }
                None => (eps_m * dist).min(700.0).exp(),
            };
            for o in 0..mech.observables().len() {
                let margin = mech.prob(s, o) - bound * mech.prob(s2, o);
                if worst.map_or(true, |w| margin > w.margin) {
                    worst = Some(DifferentialViolation { s, s2, o, margin });
                }
            }
        }
    }
    Ok(DifferentialReport {
        passed: worst.map_or(true, |w| w.margin <= FEAS_TOL),
        worst,
    })
}

// ---------------------------------------------------------------------------
// JSON formats
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct MechanismJson {
    secrets: Vec<String>,
    observables: Vec<String>,
    rows: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct AttackJson {
    observables: Vec<String>,
    secrets: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn rows_from_json(rows: Vec<Vec<f64>>, what: &str) -> Result<Matrix, ModelError> {
    let mut m = Matrix::from_rows(rows)?;
    for r in 0..m.rows() {
        let sum: f64 = m.row(r).iter().sum();
        if (sum - 1.0).abs() > LOAD_ROW_SUM_TOL {
            return Err(ModelError::InvalidDistribution(format!(
                "{what} row {r} sums to {sum}, outside the load tolerance"
            )));
        }
        if m.row(r).iter().any(|&v| v < 0.0) {
            return Err(ModelError::InvalidDistribution(format!(
                "{what} row {r} has a negative entry"
            )));
        }
        for v in m.row_mut(r) {
            *v /= sum;
        }
    }
    Ok(m)
}

impl Mechanism {
    /// Serializes as `{"secrets": [...], "observables": [...], "rows": [[...]]}`
    /// with rows indexed by the first-listed space (secrets).
    pub fn to_json_string(&self) -> String {
        let doc = MechanismJson {
            secrets: self.secrets.labels().to_vec(),
            observables: self.observables.labels().to_vec(),
            rows: self.rows.to_rows(),
        };
        serde_json::to_string_pretty(&doc).expect("mechanism serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self, ModelError> {
        let doc: MechanismJson =
            serde_json::from_str(text).map_err(|e| ModelError::Json(e.to_string()))?;
        let secrets = LabelSpace::secrets(doc.secrets)?;
        let observables = LabelSpace::observables(doc.observables)?;
        let rows = rows_from_json(doc.rows, "mechanism")?;
        Mechanism::new(secrets, observables, rows)
    }
}

impl Attack {
    /// Serializes in the mechanism format with the roles swapped: rows are
    /// indexed by the first-listed space (observables).
    pub fn to_json_string(&self) -> String {
        let doc = AttackJson {
            observables: self.observables.labels().to_vec(),
            secrets: self.secrets.labels().to_vec(),
            rows: self.rows.to_rows(),
        };
        serde_json::to_string_pretty(&doc).expect("attack serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self, ModelError> {
        let doc: AttackJson =
            serde_json::from_str(text).map_err(|e| ModelError::Json(e.to_string()))?;
        let observables = LabelSpace::observables(doc.observables)?;
        let secrets = LabelSpace::secrets(doc.secrets)?;
        let rows = rows_from_json(doc.rows, "attack")?;
        Attack::new(observables, secrets, rows)
    }
}

#[derive(Serialize, Deserialize)]
struct PriorJson {
    secrets: Vec<String>,
    probs: Vec<f64>,
}

impl Prior {
    pub fn to_json_string(&self) -> String {
        let doc = PriorJson {
            secrets: self.space.labels().to_vec(),
            probs: self.probs.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("prior serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self, ModelError> {
        let doc: PriorJson =
            serde_json::from_str(text).map_err(|e| ModelError::Json(e.to_string()))?;
        Prior::new(LabelSpace::secrets(doc.secrets)?, doc.probs)
    }
}

#[derive(Serialize, Deserialize)]
struct MetricSetJson {
    cost: Vec<Vec<f64>>,
    privacy_dist: Vec<Vec<f64>>,
    disting: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    support_dist: Option<Vec<Vec<f64>>>,
}

impl MetricSet {
    pub fn to_json_string(&self) -> String {
        let doc = MetricSetJson {
            cost: self.cost.to_rows(),
            privacy_dist: self.privacy_dist.to_rows(),
            disting: self.disting.to_rows(),
            support_dist: self.support_dist.as_ref().map(Matrix::to_rows),
        };
        serde_json::to_string_pretty(&doc).expect("metrics serialize")
    }

    pub fn from_json_str(text: &str) -> Result<Self, ModelError> {
        let doc: MetricSetJson =
            serde_json::from_str(text).map_err(|e| ModelError::Json(e.to_string()))?;
        MetricSet::new(
            Matrix::from_rows(doc.cost)?,
            Matrix::from_rows(doc.privacy_dist)?,
            Matrix::from_rows(doc.disting)?,
            doc.support_dist.map(Matrix::from_rows).transpose()?,
        )
    }
}

// ---------------------------------------------------------------------------


#[cfg(test)]
mod tests {
    use super::test_fixtures::*;
    use super::*;

    #[test]
    fn label_space_rejects_duplicates_and_empty() {
        assert!(LabelSpace::secrets(["a", "a"]).is_err());
        assert!(LabelSpace::secrets(Vec::<String>::new()).is_err());
        let s = LabelSpace::secrets(["a", "b"]).unwrap();
        assert_eq!(s.index_of("b").unwrap(), 1);
        assert!(s.index_of("c").is_err());
    }

    #[test]
    fn prior_must_sum_to_one() {
        let s = LabelSpace::secrets(["a", "b"]).unwrap();
        assert!(Prior::new(s.clone(), vec![0.5, 0.6]).is_err());
        assert!(Prior::new(s.clone(), vec![-0.1, 1.1]).is_err());
        assert!(Prior::new(s, vec![0.25, 0.75]).is_ok());
    }

    #[test]
    fn mechanism_rows_must_be_stochastic() {
        let (s, o) = two_spaces();
        let bad = Matrix::from_rows(vec![vec![0.7, 0.7], vec![0.5, 0.5]]).unwrap();
        assert!(Mechanism::new(s, o, bad).is_err());
    }

    #[test]
    fn expected_cost_examples() {
        let metrics = hamming_metrics(2);
        let prior = uniform_prior(2);
        let (s, o) = two_spaces();
        let identity = Mechanism::identity(s.clone(), o.clone()).unwrap();
        assert_eq!(expected_cost(&prior, &identity, &metrics).unwrap(), 0.0);

        let uniform = Mechanism::uniform(s, o);
        assert!((expected_cost(&prior, &uniform, &metrics).unwrap() - 0.5).abs() < 1e-12);

        let m = mech_ab(0.75, 0.25);
        assert!((expected_cost(&prior, &m, &metrics).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn worst_case_cost_examples() {
        let metrics = hamming_metrics(2);
        let (s, o) = two_spaces();
        let identity = Mechanism::identity(s, o).unwrap();
        assert_eq!(worst_case_cost(&identity, &metrics).unwrap(), 0.0);
        assert!((worst_case_cost(&mech_ab(0.75, 0.25), &metrics).unwrap() - 0.25).abs() < 1e-12);
        // constant mechanism: worst row pays full Hamming cost
        assert!((worst_case_cost(&mech_ab(1.0, 1.0), &metrics).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn privacy_of_secret_examples() {
        let metrics = hamming_metrics(2);
        let (s, o) = two_spaces();
        let identity = Mechanism::identity(s.clone(), o.clone()).unwrap();
        let id_attack = Attack::identity(o.clone().with_role(SpaceRole::Observables), s.clone())
            .unwrap();
        for idx in 0..2 {
            assert_eq!(
                privacy_of_secret(&identity, &id_attack, &metrics, idx).unwrap(),
                0.0
            );
        }

        let uniform = Mechanism::uniform(s.clone(), o.clone());
        let uni_attack = Attack::new(
            o.clone(),
            s.clone(),
            Matrix::from_rows(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap(),
        )
        .unwrap();
        assert!((privacy_of_secret(&uniform, &uni_attack, &metrics, 0).unwrap() - 0.5).abs()
            < 1e-12);

        // attack that always guesses s1; true secret s2 is never found
        let all_s1 = Attack::new(
            o,
            s,
            Matrix::from_rows(vec![vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap(),
        )
        .unwrap();
        let m = mech_ab(0.5, 0.5);
        assert!((privacy_of_secret(&m, &all_s1, &metrics, 1).unwrap() - 1.0).abs() < 1e-12);
        // and conditional_error is the same quantity
        assert_eq!(
            conditional_error(&m, &all_s1, &metrics, 1).unwrap(),
            privacy_of_secret(&m, &all_s1, &metrics, 1).unwrap()
        );
    }

    #[test]
    fn expected_privacy_is_prior_weighted_sum() {
        let metrics = hamming_metrics(2);
        let prior = uniform_prior(2);
        let m = mech_ab(0.3, 0.9);
        let (s, o) = two_spaces();
        let attack = Attack::new(
            o,
            s,
            Matrix::from_rows(vec![vec![0.2, 0.8], vec![0.7, 0.3]]).unwrap(),
        )
        .unwrap();
        let direct = expected_privacy(&prior, &m, &attack, &metrics).unwrap();
        let summed: f64 = (0..2)
            .map(|idx| {
                prior.probs()[idx] * privacy_of_secret(&m, &attack, &metrics, idx).unwrap()
            })
            .sum();
        assert_eq!(direct, summed);
    }

    #[test]
    fn cost_is_linear_in_mechanism_rows() {
        let metrics = hamming_metrics(2);
        let prior = uniform_prior(2);
        let m1 = mech_ab(0.9, 0.2);
        let m2 = mech_ab(0.4, 0.7);
        for lambda in [0.0, 0.25, 0.5, 0.8, 1.0] {
            let blend = mech_ab(
                lambda * 0.9 + (1.0 - lambda) * 0.4,
                lambda * 0.2 + (1.0 - lambda) * 0.7,
            );
            let lhs = expected_cost(&prior, &blend, &metrics).unwrap();
            let rhs = lambda * expected_cost(&prior, &m1, &metrics).unwrap()
                + (1.0 - lambda) * expected_cost(&prior, &m2, &metrics).unwrap();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn verify_differential_uniform_mechanism_passes() {
        let metrics = hamming_metrics(2);
        let (s, o) = two_spaces();
        let uniform = Mechanism::uniform(s, o);
        for eps in [0.0, 0.5, 10.0] {
            let report = verify_differential(&uniform, &metrics, eps, None).unwrap();
            assert!(report.passed);
        }
    }

    #[test]
    fn verify_differential_identity_fails_every_finite_eps() {
        let metrics = hamming_metrics(2);
        let (s, o) = two_spaces();
        let identity = Mechanism::identity(s, o).unwrap();
        for eps in [0.0, 1.0, 10.0, 100.0] {
            let report = verify_differential(&identity, &metrics, eps, None).unwrap();
            assert!(!report.passed);
        }
        // the zero-denominator triple: p(o1|s1) = 1 vs p(o1|s2) = 0
        let report = verify_differential(&identity, &metrics, 10.0, None).unwrap();
        let worst = report.worst.unwrap();
        assert_eq!((worst.s, worst.s2, worst.o), (0, 1, 0));
        assert!((worst.margin - 1.0).abs() < 1e-12);
    }

    #[test]
    fn verify_differential_exact_ratio_three() {
        let metrics = hamming_metrics(2);
        let m = mech_ab(0.75, 0.25);
        let report = verify_differential(&m, &metrics, 3.0f64.ln(), None).unwrap();
        assert!(report.passed);
        // ratios are exactly 3, so the worst margin is zero
        assert!(report.worst.unwrap().margin.abs() < 1e-12);
        // failing just below ln 3
        let report = verify_differential(&m, &metrics, 3.0f64.ln() - 1e-3, None).unwrap();
        assert!(!report.passed);
    }

    #[test]
    fn verify_differential_monotone_in_eps() {
        let metrics = hamming_metrics(2);
        let m = mech_ab(0.7, 0.3);
        let eps0 = (0.7f64 / 0.3).ln();
        for extra in [0.0, 0.1, 1.0, 20.0] {
            assert!(verify_differential(&m, &metrics, eps0 + extra, None)
                .unwrap()
                .passed);
        }
    }

    #[test]
    fn verify_differential_thresholded_skips_far_pairs() {
        // distance-2 pair unconstrained once d_eps_m < 2
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
        let s = LabelSpace::secrets(["a", "b", "c"]).unwrap();
        let o = LabelSpace::observables(["a", "b", "c"]).unwrap();
        // rows chosen so adjacent pairs hold ratio <= 2 but the far pair does not
        let rows = Matrix::from_rows(vec![
            vec![0.5, 0.3, 0.2],
            vec![0.3, 0.4, 0.3],
            vec![0.15, 0.3, 0.55],
        ])
        .unwrap();
        let m = Mechanism::new(s, o, rows).unwrap();
        let eps = 2.0f64.ln();
        assert!(verify_differential(&m, &metrics, eps, Some(1.0))
            .unwrap()
            .passed);
        assert!(!verify_differential(&m, &metrics, eps, Some(2.0))
            .unwrap()
            .passed);
        // d_eps_m = 0 constrains nothing off-diagonal
        assert!(verify_differential(&m, &metrics, 0.0, Some(0.0))
            .unwrap()
            .passed);
    }

    #[test]
    fn mechanism_json_round_trip() {
        let m = mech_ab(0.75, 0.25);
        let text = m.to_json_string();
        assert!(text.find("\"secrets\"").unwrap() < text.find("\"observables\"").unwrap());
        let back = Mechanism::from_json_str(&text).unwrap();
        assert_eq!(back.rows(), m.rows());
    }

    #[test]
    fn attack_json_lists_observables_first() {
        let (s, o) = two_spaces();
        let a = Attack::identity(o, s).unwrap();
        let text = a.to_json_string();
        assert!(text.find("\"observables\"").unwrap() < text.find("\"secrets\"").unwrap());
        let back = Attack::from_json_str(&text).unwrap();
        assert_eq!(back.rows(), a.rows());
    }

    #[test]
    fn json_load_rejects_bad_row_sums() {
        let text = r#"{"secrets":["a","b"],"observables":["x","y"],
                       "rows":[[0.6,0.5],[0.5,0.5]]}"#;
        assert!(Mechanism::from_json_str(text).is_err());
        // within the 1e-6 slack: accepted and renormalized
        let text = r#"{"secrets":["a","b"],"observables":["x","y"],
                       "rows":[[0.5000003,0.5],[0.5,0.5]]}"#;
        let m = Mechanism::from_json_str(text).unwrap();
        let sum: f64 = m.rows().row(0).iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
    }
}
