//! Homogeneous self-dual interior-point solver.
//!
//! The program is brought to the conic form
//!
//! ```text
//!   minimize    c'x
//!   subject to  E x = f
//!               G x <= h
//! ```
//!
//! with variable bounds folded into `G`/`E`, and embedded in the
//! self-dual model over `(x, y, z, s, tau, kappa)`. A Mehrotra
//! predictor-corrector iteration drives the complementarity products to
//! zero; `tau > 0` at convergence yields an optimal point, while a
//! vanishing `tau` with a Farkas-type certificate classifies the instance
//! as infeasible or unbounded. Each Newton step reduces to one
//! quasi-definite system
//!
//! ```text
//!   [ G' W G + d I    E' ] [dx]   [bx]
//!   [ E             -d I ] [dy] = [by]
//! ```
//!
//! factored by the sparse LDL^T in [`super::ldl`], with the statically
//! regularized pivots cleaned up by iterative refinement. The factorization
//! pattern is analyzed once per solve; only the `G' W G` values change
//! across iterations. Constraint rows are max-norm equilibrated up front.
//! The whole pipeline is deterministic: same program, same floats.

use super::ldl::{LdlFactor, UpperCsc};
use super::{LinearProgram, LpError, LpSolution, LpStatus, Rel, Sense, SolverOptions};

const STATIC_REG: f64 = 1e-8;
const MIN_PIVOT: f64 = 1e-13;
/// Heavier regularization for the polish system: its active set is often
/// rank-deficient, and validation (not the factor) guards exactness.
const POLISH_REG: f64 = 1e-5;
const CERT_TOL: f64 = 1e-8;
const STEP_DAMP: f64 = 0.99;

pub(super) fn solve(lp: &LinearProgram, options: &SolverOptions) -> Result<LpSolution, LpError> {
    match canonicalize(lp) {
        Canonicalized::Decided(status) => Ok(decided(lp, status)),
        Canonicalized::Ready(can) => {
            let mut ipm = Ipm::new(&can, options);
            let end = ipm.run();
            let values = match end {
                RunEnd::Status(LpStatus::Optimal) => {
                    let iterate = ipm.snapshot();
                    // polishing is a strict improvement when it validates
                    polish(&can, &iterate, options).unwrap_or(iterate.primal)
                }
                RunEnd::Status(status) => return Ok(decided(lp, status)),
                RunEnd::Breakdown(reason) => {
                    let Some(best) = ipm.best.take() else {
                        return Err(LpError::NumericalFailure(reason));
                    };
                    match polish(&can, &best, options) {
                        Some(polished) => polished,
                        None if best.score_ok => best.primal,
                        None => return Err(LpError::NumericalFailure(reason)),
                    }
                }
            };
            verify_feasible(lp, &values, options.feas_tol)?;
            let objective_value = dot(lp.parts().objective, &values);
            Ok(LpSolution {
                status: LpStatus::Optimal,
                values,
                objective_value,
            })
        }
    }
}

fn decided(lp: &LinearProgram, status: LpStatus) -> LpSolution {
    LpSolution {
        status,
        values: vec![0.0; lp.num_vars()],
        objective_value: if status == LpStatus::Optimal {
            0.0
        } else {
            f64::NAN
        },
    }
}

/// Relative feasibility check of a claimed optimal point against the
/// original rows and bounds. A point that fails this is reported as a
/// numerical failure rather than returned.
fn verify_feasible(lp: &LinearProgram, x: &[f64], feas_tol: f64) -> Result<(), LpError> {
    let parts = lp.parts();
    for i in 0..lp.num_constraints() {
        let (idx, val) = lp.row(i);
        let mut act = 0.0;
        let mut big = 0.0f64;
        for (&j, &v) in idx.iter().zip(val) {
            act += v * x[j as usize];
            big = big.max(v.abs());
        }
        let rhs = parts.rhs[i];
        let scale = big.max(1.0).max(rhs.abs());
        let viol = match parts.rel[i] {
            Rel::Le => act - rhs,
            Rel::Ge => rhs - act,
            Rel::Eq => (act - rhs).abs(),
        };
        if viol > feas_tol * scale {
            return Err(LpError::NumericalFailure(format!(
                "solution violates constraint {i} by {viol:.3e}"
            )));
        }
    }
    for j in 0..lp.num_vars() {
        let (l, u) = (parts.lower[j], parts.upper[j]);
        if l.is_finite() && l - x[j] > feas_tol * l.abs().max(1.0) {
            return Err(LpError::NumericalFailure(format!(
                "solution violates lower bound of x{j}"
            )));
        }
        if u.is_finite() && x[j] - u > feas_tol * u.abs().max(1.0) {
            return Err(LpError::NumericalFailure(format!(
                "solution violates upper bound of x{j}"
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Canonical conic form
// ---------------------------------------------------------------------------

struct Csr {
    rows: usize,
    ptr: Vec<usize>,
    idx: Vec<u32>,
    val: Vec<f64>,
}

impl Csr {
    fn new() -> Self {
        Csr {
            rows: 0,
            ptr: vec![0],
            idx: Vec::new(),
            val: Vec::new(),
        }
    }

    fn push_row(&mut self, terms: &[(u32, f64)]) {
        for &(j, v) in terms {
            self.idx.push(j);
            self.val.push(v);
        }
        self.ptr.push(self.idx.len());
        self.rows += 1;
    }

    fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let (lo, hi) = (self.ptr[r], self.ptr[r + 1]);
        (&self.idx[lo..hi], &self.val[lo..hi])
    }

    /// out = A x
    fn mul(&self, x: &[f64], out: &mut [f64]) {
        for r in 0..self.rows {
            let (idx, val) = self.row(r);
            let mut acc = 0.0;
            for (&j, &v) in idx.iter().zip(val) {
                acc += v * x[j as usize];
            }
            out[r] = acc;
        }
    }

    /// out += A' w
    fn mul_t_add(&self, w: &[f64], out: &mut [f64]) {
        for r in 0..self.rows {
            let wr = w[r];
            if wr != 0.0 {
                let (idx, val) = self.row(r);
                for (&j, &v) in idx.iter().zip(val) {
                    out[j as usize] += v * wr;
                }
            }
        }
    }
}

struct Canonical {
    n: usize,
    c: Vec<f64>,
    e: Csr,
    f: Vec<f64>,
    g: Csr,
    h: Vec<f64>,
    norm_c: f64,
    norm_rhs: f64,
}

enum Canonicalized {
    Ready(Canonical),
    Decided(LpStatus),
}

/// Sorts a row by variable index, merging duplicate indices and dropping
/// zero coefficients.
fn normalize_row(idx: &[u32], val: &[f64]) -> Vec<(u32, f64)> {
    let mut terms: Vec<(u32, f64)> = idx.iter().copied().zip(val.iter().copied()).collect();
    terms.sort_unstable_by_key(|t| t.0);
    let mut out: Vec<(u32, f64)> = Vec::with_capacity(terms.len());
    for (j, v) in terms {
        match out.last_mut() {
            Some(last) if last.0 == j => last.1 += v,
            _ => out.push((j, v)),
        }
    }
    out.retain(|t| t.1 != 0.0);
    out
}

fn canonicalize(lp: &LinearProgram) -> Canonicalized {
    let parts = lp.parts();
    let n = parts.num_vars;
    let mut c: Vec<f64> = parts.objective.to_vec();
    if parts.sense == Sense::Maximize {
        for v in c.iter_mut() {
            *v = -*v;
        }
    }

    let mut e = Csr::new();
    let mut f = Vec::new();
    let mut g = Csr::new();
    let mut h = Vec::new();

    for i in 0..lp.num_constraints() {
        let (idx, val) = lp.row(i);
        let mut terms = normalize_row(idx, val);
        let rhs = parts.rhs[i];
        if terms.is_empty() {
            let ok = match parts.rel[i] {
                Rel::Le => 0.0 <= rhs,
                Rel::Ge => 0.0 >= rhs,
                Rel::Eq => rhs == 0.0,
            };
            if ok {
                continue;
            }
            return Canonicalized::Decided(LpStatus::Infeasible);
        }
        let scale = terms.iter().fold(0.0f64, |m, t| m.max(t.1.abs()));
        let inv = 1.0 / scale;
        for t in terms.iter_mut() {
            t.1 *= inv;
        }
        let rhs = rhs * inv;
        match parts.rel[i] {
            Rel::Eq => {
                e.push_row(&terms);
                f.push(rhs);
            }
            Rel::Le => {
                g.push_row(&terms);
                h.push(rhs);
            }
            Rel::Ge => {
                for t in terms.iter_mut() {
                    t.1 = -t.1;
                }
                g.push_row(&terms);
                h.push(-rhs);
            }
        }
    }

    for j in 0..n {
        let (l, u) = (parts.lower[j], parts.upper[j]);
        if l > u {
            return Canonicalized::Decided(LpStatus::Infeasible);
        }
        if l == u {
            e.push_row(&[(j as u32, 1.0)]);
            f.push(l);
            continue;
        }
        if l.is_finite() {
            g.push_row(&[(j as u32, -1.0)]);
            h.push(-l);
        }
        if u.is_finite() {
            g.push_row(&[(j as u32, 1.0)]);
            h.push(u);
        }
    }

    if n == 0 {
        return Canonicalized::Decided(LpStatus::Optimal);
    }

    let norm_c = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let norm_rhs = f.iter().chain(h.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    Canonicalized::Ready(Canonical {
        n,
        c,
        e,
        f,
        g,
        h,
        norm_c,
        norm_rhs,
    })
}

// ---------------------------------------------------------------------------
// KKT system
// ---------------------------------------------------------------------------

/// Columns of G, used to assemble `G' W G` column by column.
struct GCols {
    ptr: Vec<usize>,
    row: Vec<u32>,
    val: Vec<f64>,
}

impl GCols {
    fn build(g: &Csr, n: usize) -> Self {
        let mut ptr = vec![0usize; n + 1];
        for &j in &g.idx {
            ptr[j as usize + 1] += 1;
        }
        for j in 0..n {
            ptr[j + 1] += ptr[j];
        }
        let nnz = g.idx.len();
        let mut row = vec![0u32; nnz];
        let mut val = vec![0.0f64; nnz];
        let mut next = ptr.clone();
        for r in 0..g.rows {
            let (idx, v) = g.row(r);
            for (&j, &x) in idx.iter().zip(v) {
                let p = next[j as usize];
                row[p] = r as u32;
                val[p] = x;
                next[j as usize] += 1;
            }
        }
        GCols { ptr, row, val }
    }
}

struct Kkt {
    n: usize,
    p: usize,
    pattern: UpperCsc,
    values: Vec<f64>,
    g_cols: GCols,
    pub(super) ldl: LdlFactor,
    signs: Vec<i8>,
    acc: Vec<f64>,
    rhs: Vec<f64>,
    sol: Vec<f64>,
    resid: Vec<f64>,
    gx: Vec<f64>,
    wgx: Vec<f64>,
}

impl Kkt {
    fn build(can: &Canonical) -> Self {
        let n = can.n;
        let p = can.e.rows;
        let nsys = n + p;

        let mut cols: Vec<Vec<u32>> = vec![Vec::new(); nsys];
        for (k, col) in cols.iter_mut().enumerate().take(n) {
            col.push(k as u32);
        }
        for r in 0..can.g.rows {
            let (idx, _) = can.g.row(r);
            for (bi, &jb) in idx.iter().enumerate() {
                for &ja in &idx[..bi] {
                    cols[jb as usize].push(ja);
                }
            }
        }
        for r in 0..can.e.rows {
            let (idx, _) = can.e.row(r);
            let col = &mut cols[n + r];
            col.extend_from_slice(idx);
            col.push((n + r) as u32);
        }

        let mut col_ptr = vec![0usize; nsys + 1];
        let mut row_idx = Vec::new();
        for (k, col) in cols.iter_mut().enumerate() {
            col.sort_unstable();
            col.dedup();
            row_idx.extend(col.iter().map(|&i| i as usize));
            col_ptr[k + 1] = row_idx.len();
        }
        let pattern = UpperCsc {
            n: nsys,
            col_ptr,
            row_idx,
        };

        // The eq-dual columns never change: E border values, -delta diagonal.
        let mut values = vec![0.0f64; pattern.nnz()];
        for r in 0..can.e.rows {
            let (idx, val) = can.e.row(r);
            let k = n + r;
            for pos in pattern.col_ptr[k]..pattern.col_ptr[k + 1] {
                let i = pattern.row_idx[pos];
                if i == k {
                    values[pos] = -STATIC_REG;
                } else {
                    let at = idx.iter().position(|&j| j as usize == i).unwrap();
                    values[pos] = val[at];
                }
            }
        }

        let ldl = LdlFactor::analyze(&pattern);
        let mut signs = vec![1i8; nsys];
        for s in signs.iter_mut().skip(n) {
            *s = -1;
        }
        Kkt {
            n,
            p,
            g_cols: GCols::build(&can.g, n),
            ldl,
            signs,
            acc: vec![0.0; nsys],
            rhs: vec![0.0; nsys],
            sol: vec![0.0; nsys],
            resid: vec![0.0; nsys],
            gx: vec![0.0; can.g.rows],
            wgx: vec![0.0; can.g.rows],
            pattern,
            values,
        }
    }

    /// Rebuilds `G' W G + delta I` into the variable columns and refactors.
    fn refactor(&mut self, can: &Canonical, w: &[f64]) {
        for j in 0..self.n {
            for p in self.g_cols.ptr[j]..self.g_cols.ptr[j + 1] {
                let r = self.g_cols.row[p] as usize;
                let wv = w[r] * self.g_cols.val[p];
                let (idx, val) = can.g.row(r);
                for (&i, &vi) in idx.iter().zip(val) {
                    let i = i as usize;
                    if i <= j {
                        self.acc[i] += wv * vi;
                    }
                }
            }
            for pos in self.pattern.col_ptr[j]..self.pattern.col_ptr[j + 1] {
                let i = self.pattern.row_idx[pos];
                let mut v = self.acc[i];
                self.acc[i] = 0.0;
                if i == j {
                    v += STATIC_REG;
                }
                self.values[pos] = v;
            }
        }
        self.ldl
            .refactor(&self.pattern, &self.values, &self.signs, MIN_PIVOT);
    }

    /// Solves the reduced system for `(dx, dy)` with iterative refinement,
    /// then recovers `dz = w .* (G dx - bz)`.
    #[allow(clippy::too_many_arguments)]
    fn solve3(
        &mut self,
        can: &Canonical,
        w: &[f64],
        bx: &[f64],
        by: &[f64],
        bz: &[f64],
        dx: &mut [f64],
        dy: &mut [f64],
        dz: &mut [f64],
    ) {
        let n = self.n;
        let p = self.p;
        for ((o, &b), &wr) in self.wgx.iter_mut().zip(bz).zip(w) {
            *o = b * wr;
        }
        self.rhs[..n].copy_from_slice(bx);
        self.rhs[n..].fill(0.0);
        can.g.mul_t_add(&self.wgx, &mut self.rhs[..n]);
        self.rhs[n..n + p].copy_from_slice(by);

        self.sol.copy_from_slice(&self.rhs);
        self.ldl.solve_in_place(&mut self.sol);
        for _ in 0..3 {
            // residual of the unregularized reduced system
            let (vx, _) = self.sol.split_at(n);
            can.g.mul(vx, &mut self.gx);
            for ((o, &gxr), &wr) in self.wgx.iter_mut().zip(self.gx.iter()).zip(w) {
                *o = gxr * wr;
            }
            self.resid[..n].fill(0.0);
            can.g.mul_t_add(&self.wgx, &mut self.resid[..n]);
            {
                let (vx, _) = self.sol.split_at(n);
                let (_, ry) = self.resid.split_at_mut(n);
                can.e.mul(vx, ry);
            }
            {
                let (vy_src, _) = self.sol[n..].split_at(p);
                can.e.mul_t_add(vy_src, &mut self.resid[..n]);
            }
            let mut worst = 0.0f64;
            let mut scale = 1.0f64;
            for i in 0..n + p {
                self.resid[i] = self.rhs[i] - self.resid[i];
                worst = worst.max(self.resid[i].abs());
                scale = scale.max(self.rhs[i].abs());
            }
            if std::env::var_os("PRIVGAME_LP_TRACE_REFINE").is_some() {
                eprintln!("    refine: worst={worst:.3e} scale={scale:.3e}");
            }
            if worst <= 1e-14 * scale || !worst.is_finite() {
                break;
            }
            self.ldl.solve_in_place(&mut self.resid);
            for i in 0..n + p {
                self.sol[i] += self.resid[i];
            }
        }

        dx.copy_from_slice(&self.sol[..n]);
        dy.copy_from_slice(&self.sol[n..n + p]);
        can.g.mul(dx, &mut self.gx);
        for (((o, &gxr), &bzr), &wr) in dz.iter_mut().zip(self.gx.iter()).zip(bz).zip(w) {
            *o = wr * (gxr - bzr);
        }
    }
}

// ---------------------------------------------------------------------------
// Interior-point iteration
// ---------------------------------------------------------------------------

struct Ipm<'a> {
    can: &'a Canonical,
    opts: &'a SolverOptions,
    kkt: Kkt,
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
    tau: f64,
    kappa: f64,
    rx: Vec<f64>,
    ry: Vec<f64>,
    rz: Vec<f64>,
    rtau: f64,
    w: Vec<f64>,
    x1: Vec<f64>,
    y1: Vec<f64>,
    z1: Vec<f64>,
    x2: Vec<f64>,
    y2: Vec<f64>,
    z2: Vec<f64>,
    dz: Vec<f64>,
    ds: Vec<f64>,
    comp: Vec<f64>,
    u3: Vec<f64>,
    last_dtau: f64,
    last_dkappa: f64,
    best: Option<Iterate>,
}

/// A tau-scaled iterate: the primal point plus the duals and slacks needed
/// to guess the active set for polishing.
struct Iterate {
    primal: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
    score: f64,
    /// meets the relaxed acceptance thresholds on its own
    score_ok: bool,
}

enum RunEnd {
    Status(LpStatus),
    Breakdown(String),
}

impl<'a> Ipm<'a> {
    fn new(can: &'a Canonical, opts: &'a SolverOptions) -> Self {
        let n = can.n;
        let p = can.e.rows;
        let q = can.g.rows;
        Ipm {
            kkt: Kkt::build(can),
            can,
            opts,
            x: vec![0.0; n],
            y: vec![0.0; p],
            z: vec![1.0; q],
            s: vec![1.0; q],
            tau: 1.0,
            kappa: 1.0,
            rx: vec![0.0; n],
            ry: vec![0.0; p],
            rz: vec![0.0; q],
            rtau: 0.0,
            w: vec![0.0; q],
            x1: vec![0.0; n],
            y1: vec![0.0; p],
            z1: vec![0.0; q],
            x2: vec![0.0; n],
            y2: vec![0.0; p],
            z2: vec![0.0; q],
            dz: vec![0.0; q],
            ds: vec![0.0; q],
            comp: vec![0.0; q],
            u3: vec![0.0; q],
            last_dtau: 0.0,
            last_dkappa: 0.0,
            best: None,
        }
    }

    /// The current iterate scaled back to problem units.
    fn snapshot(&self) -> Iterate {
        let t = self.tau;
        Iterate {
            primal: self.x.iter().map(|v| v / t).collect(),
            z: self.z.iter().map(|v| v / t).collect(),
            s: self.s.iter().map(|v| v / t).collect(),
            score: 0.0,
            score_ok: true,
        }
    }

    fn mu(&self) -> f64 {
        let q = self.can.g.rows;
        (dot(&self.s, &self.z) + self.tau * self.kappa) / (q as f64 + 1.0)
    }

    fn residuals(&mut self) {
        let can = self.can;
        // rx = E'y + G'z + c*tau
        for (o, &cv) in self.rx.iter_mut().zip(&can.c) {
            *o = cv * self.tau;
        }
        can.e.mul_t_add(&self.y, &mut self.rx);
        can.g.mul_t_add(&self.z, &mut self.rx);
        // ry = E x - f*tau
        can.e.mul(&self.x, &mut self.ry);
        for (o, &fv) in self.ry.iter_mut().zip(&can.f) {
            *o -= fv * self.tau;
        }
        // rz = G x + s - h*tau
        can.g.mul(&self.x, &mut self.rz);
        for ((o, &sv), &hv) in self.rz.iter_mut().zip(&self.s).zip(&can.h) {
            *o += sv - hv * self.tau;
        }
        self.rtau =
            self.kappa + dot(&can.c, &self.x) + dot(&can.f, &self.y) + dot(&can.h, &self.z);
    }

    fn run(&mut self) -> RunEnd {
        let can = self.can;
        let feas_target = (self.opts.feas_tol * 1e-2).min(1e-9);
        let gap_target = self.opts.opt_tol;
        // relaxed thresholds still inside the solver contract; an iterate
        // meeting them may be returned as-is when polishing fails
        let accept_feas = self.opts.feas_tol * 0.1;
        let accept_gap = self.opts.opt_tol * 10.0;
        let mut stalls = 0usize;

        for _ in 0..self.opts.max_iter {
            self.residuals();
            let tau = self.tau;

            let pcost = dot(&can.c, &self.x) / tau;
            let dcost = -(dot(&can.f, &self.y) + dot(&can.h, &self.z)) / tau;
            let pres = inf_norm(&self.ry).max(inf_norm(&self.rz)) / (can.norm_rhs.max(1.0) * tau);
            let dres = inf_norm(&self.rx) / (can.norm_c.max(1.0) * tau);
            let gap = dot(&self.s, &self.z) / (tau * tau);
            let relgap = gap / pcost.abs().max(dcost.abs()).max(1.0);

            if pres <= feas_target && dres <= feas_target && relgap <= gap_target {
                return RunEnd::Status(LpStatus::Optimal);
            }
            let score = pres.max(dres).max(relgap);
            if score.is_finite() && self.best.as_ref().map_or(true, |b| score < b.score) {
                let mut snap = self.snapshot();
                snap.score = score;
                snap.score_ok =
                    pres <= accept_feas && dres <= accept_feas && relgap <= accept_gap;
                self.best = Some(snap);
            }
            // Once a near-converged iterate exists, a residual explosion
            // means the endgame has lost it numerically; stop and let the
            // polish step finish the job. Before that point growing scaled
            // residuals are normal (infeasible instances drive tau to zero).
            if let Some(best) = &self.best {
                if best.score_ok && score > 1e3 * best.score.max(1e-12) {
                    return RunEnd::Breakdown("iteration diverged from its best point".into());
                }
            }

            // Farkas certificates classify the instance once tau collapses.
            let dg = dot(&can.f, &self.y) + dot(&can.h, &self.z);
            if dg < 0.0 {
                // `E'y + G'z` is rx without its c*tau term
                let mut worst = 0.0f64;
                for (rxi, &cv) in self.rx.iter().zip(&can.c) {
                    worst = worst.max((rxi - cv * tau).abs());
                }
                if worst * can.norm_rhs.max(1.0) <= CERT_TOL * (-dg) * can.norm_c.max(1.0) {
                    return RunEnd::Status(LpStatus::Infeasible);
                }
            }
            let px = dot(&can.c, &self.x);
            if px < 0.0 {
                // ray residuals: E x and G x + s
                let mut worst = 0.0f64;
                for (ryi, &fv) in self.ry.iter().zip(&can.f) {
                    worst = worst.max((ryi + fv * tau).abs());
                }
                for (rzi, &hv) in self.rz.iter().zip(&can.h) {
                    worst = worst.max((rzi + hv * tau).abs());
                }
                if worst * can.norm_c.max(1.0) <= CERT_TOL * (-px) * can.norm_rhs.max(1.0) {
                    return RunEnd::Status(LpStatus::Unbounded);
                }
            }

            let mu = self.mu();
            if !mu.is_finite() {
                return RunEnd::Breakdown("iterates diverged".into());
            }

            // The scaling weights are clamped so the KKT factor's dynamic
            // range stays within f64 on degenerate optimal faces (boundary
            // rows drive z/s to infinity there).
            for ((o, &zv), &sv) in self.w.iter_mut().zip(&self.z).zip(&self.s) {
                *o = (zv / sv).clamp(1e-14, 1e14);
            }
            self.kkt.refactor(can, &self.w);

            // tau column: K3 (x1, y1, z1) = (-c, f, h)
            let negc: Vec<f64> = can.c.iter().map(|v| -v).collect();
            self.kkt.solve3(
                can,
                &self.w,
                &negc,
                &can.f,
                &can.h,
                &mut self.x1,
                &mut self.y1,
                &mut self.z1,
            );
            let tau_col =
                dot(&can.c, &self.x1) + dot(&can.f, &self.y1) + dot(&can.h, &self.z1);
            let tau_denom = self.kappa / self.tau - tau_col;
            if std::env::var_os("PRIVGAME_LP_TRACE").is_some() {
                eprintln!(
                    "  taucol: |x1|={:.3e} |y1|={:.3e} |z1|={:.3e} floored={} wmax={:.3e}",
                    inf_norm(&self.x1),
                    inf_norm(&self.y1),
                    inf_norm(&self.z1),
                    self.kkt.ldl.floored_pivots,
                    inf_norm(&self.w)
                );
            }
            if !tau_denom.is_finite() || tau_denom.abs() < 1e-300 {
                return RunEnd::Breakdown("tau system breakdown".into());
            }

            // affine predictor
            for ((o, &sv), &zv) in self.comp.iter_mut().zip(&self.s).zip(&self.z) {
                *o = -sv * zv;
            }
            self.direction(-self.tau * self.kappa, tau_denom);
            let dtau_aff = self.last_dtau;
            let dkappa_aff = self.last_dkappa;
            let alpha_aff = self.max_step(dtau_aff, dkappa_aff).min(1.0);

            let mu_aff = {
                let mut acc = 0.0;
                for i in 0..can.g.rows {
                    acc += (self.s[i] + alpha_aff * self.ds[i])
                        * (self.z[i] + alpha_aff * self.dz[i]);
                }
                acc += (self.tau + alpha_aff * dtau_aff) * (self.kappa + alpha_aff * dkappa_aff);
                acc / (can.g.rows as f64 + 1.0)
            };
            if !(dtau_aff.is_finite() && dkappa_aff.is_finite() && mu_aff.is_finite()) {
                return RunEnd::Breakdown("affine step breakdown".into());
            }
            let sigma = (mu_aff / mu).powi(3).clamp(1e-8, 1.0 - 1e-8);

            // combined corrector step
            for i in 0..can.g.rows {
                self.comp[i] = sigma * mu - self.s[i] * self.z[i] - self.ds[i] * self.dz[i];
            }
            let comp_tau = sigma * mu - self.tau * self.kappa - dtau_aff * dkappa_aff;
            self.direction(comp_tau, tau_denom);
            let dtau = self.last_dtau;
            let dkappa = self.last_dkappa;
            if !(dtau.is_finite() && dkappa.is_finite()) {
                return RunEnd::Breakdown("corrector step breakdown".into());
            }

            let alpha = (STEP_DAMP * self.max_step(dtau, dkappa)).min(1.0);
            if std::env::var_os("PRIVGAME_LP_TRACE").is_some() {
                eprintln!(
                    "ipm: pres={pres:.3e} dres={dres:.3e} relgap={relgap:.3e} tau={tau:.3e} \
                     kappa={:.3e} mu={mu:.3e} sigma={sigma:.3e} alpha={alpha:.3e}",
                    self.kappa
                );
            }
            if alpha < 1e-7 {
                stalls += 1;
                if stalls >= 2 {
                    return RunEnd::Breakdown(
                        "step length collapsed before a certified status".into(),
                    );
                }
            } else {
                stalls = 0;
            }

            for (xi, d) in self.x.iter_mut().zip(&self.x2) {
                *xi += alpha * d;
            }
            for (yi, d) in self.y.iter_mut().zip(&self.y2) {
                *yi += alpha * d;
            }
            for (zi, d) in self.z.iter_mut().zip(&self.dz) {
                *zi += alpha * d;
            }
            for (si, d) in self.s.iter_mut().zip(&self.ds) {
                *si += alpha * d;
            }
            self.tau += alpha * dtau;
            self.kappa += alpha * dkappa;

            // The embedding is homogeneous: rescaling the whole iterate
            // preserves it. Pinning tau to 1 keeps internal magnitudes from
            // drifting up the ray and wrecking the factorization.
            let scale = 1.0 / self.tau;
            if scale.is_finite() && scale > 0.0 {
                for v in self
                    .x
                    .iter_mut()
                    .chain(self.y.iter_mut())
                    .chain(self.z.iter_mut())
                    .chain(self.s.iter_mut())
                {
                    *v *= scale;
                }
                self.kappa *= scale;
                self.tau = 1.0;
            }
        }
        let max_iter = self.opts.max_iter;
        RunEnd::Breakdown(format!("no certified status after {max_iter} iterations"))
    }

    /// Newton direction for the current residuals and the complementarity
    /// right-hand side in `self.comp` / `comp_tau`. On return the combined
    /// direction sits in `(x2, y2, dz, ds, last_dtau, last_dkappa)`, with
    /// the tau-column contribution already folded in.
    fn direction(&mut self, comp_tau: f64, tau_denom: f64) {
        let can = self.can;
        for i in 0..can.g.rows {
            self.u3[i] = -self.rz[i] - self.comp[i] / self.z[i];
        }
        let bx: Vec<f64> = self.rx.iter().map(|v| -v).collect();
        let by: Vec<f64> = self.ry.iter().map(|v| -v).collect();
        self.kkt.solve3(
            can,
            &self.w,
            &bx,
            &by,
            &self.u3,
            &mut self.x2,
            &mut self.y2,
            &mut self.z2,
        );

        let num = self.rtau
            + dot(&can.c, &self.x2)
            + dot(&can.f, &self.y2)
            + dot(&can.h, &self.z2)
            + comp_tau / self.tau;
        let dtau = num / tau_denom;

        for i in 0..can.g.rows {
            self.dz[i] = self.z2[i] + dtau * self.z1[i];
            self.ds[i] = (self.comp[i] - self.s[i] * self.dz[i]) / self.z[i];
        }
        for i in 0..can.n {
            self.x2[i] += dtau * self.x1[i];
        }
        for i in 0..can.e.rows {
            self.y2[i] += dtau * self.y1[i];
        }
        self.last_dtau = dtau;
        self.last_dkappa = (comp_tau - self.kappa * dtau) / self.tau;
    }

    /// Largest step keeping (s, z, tau, kappa) nonnegative.
    fn max_step(&self, dtau: f64, dkappa: f64) -> f64 {
        let mut alpha = f64::INFINITY;
        for (&v, &d) in self.s.iter().zip(&self.ds) {
            if d < 0.0 {
                alpha = alpha.min(-v / d);
            }
        }
        for (&v, &d) in self.z.iter().zip(&self.dz) {
            if d < 0.0 {
                alpha = alpha.min(-v / d);
            }
        }
        if dtau < 0.0 {
            alpha = alpha.min(-self.tau / dtau);
        }
        if dkappa < 0.0 {
            alpha = alpha.min(-self.kappa / dkappa);
        }
        alpha
    }
}

// ---------------------------------------------------------------------------
// Solution polishing
// ---------------------------------------------------------------------------

/// Refines an almost-converged iterate by solving the KKT equalities of
/// its guessed active set directly, in the style of a crossover step.
///
/// Rows with `z > s` are taken as active; the regularized quasi-definite
/// system over (x, y, z_active) is factored and refined, and the candidate
/// is accepted only when primal feasibility, dual feasibility, and the
/// duality gap all validate at solver tolerance against the original data.
/// Returns None on any validation miss, leaving the caller's iterate as
/// the answer, so a wrong active-set guess costs accuracy nothing.
fn polish(can: &Canonical, iterate: &Iterate, opts: &SolverOptions) -> Option<Vec<f64>> {
    let trace = std::env::var_os("PRIVGAME_LP_TRACE").is_some();
    macro_rules! reject {
        ($($why:tt)*) => {{
            if trace { eprintln!("  polish reject: {}", format!($($why)*)); }
            return None;
        }};
    }
    let n = can.n;
    let p = can.e.rows;
    let active: Vec<usize> = (0..can.g.rows)
        .filter(|&i| iterate.z[i] > iterate.s[i])
        .collect();
    let na = active.len();
    // far more active rows than variables means the guess is hopeless and
    // the factor below could fill in catastrophically
    if na > n + p + 64 {
        if trace {
            eprintln!("  polish reject: active set too large ({na})");
        }
        return None;
    }
    let nsys = n + p + na;

    // pattern: delta diagonal for x, row-support borders for eq and active rows
    let mut col_ptr = vec![0usize; nsys + 1];
    let mut row_idx: Vec<usize> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for k in 0..n {
        row_idx.push(k);
        values.push(POLISH_REG);
        col_ptr[k + 1] = row_idx.len();
    }
    for r in 0..p {
        let (idx, val) = can.e.row(r);
        for (&j, &v) in idx.iter().zip(val) {
            row_idx.push(j as usize);
            values.push(v);
        }
        row_idx.push(n + r);
        values.push(-POLISH_REG);
        col_ptr[n + r + 1] = row_idx.len();
    }
    for (a, &r) in active.iter().enumerate() {
        let (idx, val) = can.g.row(r);
        for (&j, &v) in idx.iter().zip(val) {
            row_idx.push(j as usize);
            values.push(v);
        }
        row_idx.push(n + p + a);
        values.push(-POLISH_REG);
        col_ptr[n + p + a + 1] = row_idx.len();
    }
    let pattern = UpperCsc {
        n: nsys,
        col_ptr,
        row_idx,
    };
    let mut signs = vec![1i8; nsys];
    for s in signs.iter_mut().skip(n) {
        *s = -1;
    }
    let Some(mut ldl) = LdlFactor::analyze_capped(&pattern, 64 * nsys + 1_000_000) else {
        reject!("factor fill-in too large");
    };
    ldl.refactor(&pattern, &values, &signs, POLISH_REG);

    let mut rhs = vec![0.0; nsys];
    for (o, &cv) in rhs.iter_mut().zip(&can.c) {
        *o = -cv;
    }
    rhs[n..n + p].copy_from_slice(&can.f);
    for (a, &r) in active.iter().enumerate() {
        rhs[n + p + a] = can.h[r];
    }

    let mut sol = rhs.clone();
    ldl.solve_in_place(&mut sol);
    // refinement against the unregularized KKT operator, keeping the best
    // candidate in case the correction oscillates on a deficient system
    let mut resid = vec![0.0; nsys];
    let mut best_sol = sol.clone();
    let mut best_worst = f64::INFINITY;
    for _ in 0..8 {
        apply_polish_kkt(can, &active, &sol, &mut resid);
        let mut worst = 0.0f64;
        for i in 0..nsys {
            resid[i] = rhs[i] - resid[i];
            worst = worst.max(resid[i].abs());
        }
        if worst.is_finite() && worst < best_worst {
            best_worst = worst;
            best_sol.copy_from_slice(&sol);
        }
        if !worst.is_finite() || worst <= 1e-13 {
            break;
        }
        ldl.solve_in_place(&mut resid);
        for i in 0..nsys {
            sol[i] += resid[i];
        }
    }
    let sol = best_sol;

    let x = &sol[..n];
    let y = &sol[n..n + p];
    let za = &sol[n + p..];
    if x.iter().any(|v| !v.is_finite()) {
        reject!("non-finite solution");
    }

    let feas_tol = (opts.feas_tol * 0.1).min(1e-8);
    // primal feasibility on every row
    let mut ex = vec![0.0; p];
    can.e.mul(x, &mut ex);
    for (i, &fx) in can.f.iter().enumerate() {
        if (ex[i] - fx).abs() > feas_tol * can.norm_rhs.max(1.0) {
            reject!("eq row {i} residual {:.3e}", (ex[i] - fx).abs());
        }
    }
    let mut gx = vec![0.0; can.g.rows];
    can.g.mul(x, &mut gx);
    for (i, &hv) in can.h.iter().enumerate() {
        if gx[i] - hv > feas_tol * can.norm_rhs.max(1.0) {
            reject!("ineq row {i} violated by {:.3e}", gx[i] - hv);
        }
    }
    // dual feasibility: multipliers on active rows must be nonnegative and
    // stationarity must hold with inactive multipliers at zero
    let mut z_full = vec![0.0; can.g.rows];
    for (a, &r) in active.iter().enumerate() {
        if za[a] < -1e-7 * can.norm_c.max(1.0) {
            reject!("negative multiplier {:.3e} on row {r}", za[a]);
        }
        z_full[r] = za[a].max(0.0);
    }
    let mut dres = can.c.clone();
    can.e.mul_t_add(y, &mut dres);
    can.g.mul_t_add(&z_full, &mut dres);
    if inf_norm(&dres) > feas_tol * can.norm_c.max(1.0) {
        reject!("dual residual {:.3e}", inf_norm(&dres));
    }
    // complementary duality gap
    let pcost = dot(&can.c, x);
    let dcost = -(dot(&can.f, y) + dot(&can.h, &z_full));
    if (pcost - dcost).abs() > opts.opt_tol * pcost.abs().max(dcost.abs()).max(1.0) {
        reject!("gap {:.3e} (pcost {pcost:.6e} dcost {dcost:.6e})", (pcost - dcost).abs());
    }
    Some(x.to_vec())
}

fn apply_polish_kkt(can: &Canonical, active: &[usize], v: &[f64], out: &mut [f64]) {
    let n = can.n;
    let p = can.e.rows;
    let (vx, rest) = v.split_at(n);
    let (vy, vza) = rest.split_at(p);
    out[..n].fill(0.0);
    can.e.mul_t_add(vy, &mut out[..n]);
    for (a, &r) in active.iter().enumerate() {
        let w = vza[a];
        if w != 0.0 {
            let (idx, val) = can.g.row(r);
            for (&j, &coef) in idx.iter().zip(val) {
                out[j as usize] += coef * w;
            }
        }
    }
    {
        let (_, out_y) = out.split_at_mut(n);
        can.e.mul(vx, &mut out_y[..p]);
    }
    for (a, &r) in active.iter().enumerate() {
        let (idx, val) = can.g.row(r);
        let mut acc = 0.0;
        for (&j, &coef) in idx.iter().zip(val) {
            acc += coef * vx[j as usize];
        }
        out[n + p + a] = acc;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::super::{LinearProgram, LpStatus, Rel, Sense, SolverOptions};

    fn opts() -> SolverOptions {
        SolverOptions::default()
    }

    #[test]
    fn single_bound_minimum() {
        // minimize x s.t. x >= 3
        let mut lp = LinearProgram::new(1, Sense::Minimize);
        lp.set_obj_coeff(0, 1.0).unwrap();
        lp.set_bounds(0, 3.0, f64::INFINITY).unwrap();
        let sol = lp.solve(&opts()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.values[0] - 3.0).abs() < 1e-7);
        assert!((sol.objective_value - 3.0).abs() < 1e-7);
    }

    #[test]
    fn simplex_face_maximum() {
        // maximize x + y s.t. x + y <= 1, x, y >= 0
        let mut lp = LinearProgram::new(2, Sense::Maximize);
        lp.set_objective(&[1.0, 1.0]).unwrap();
        lp.add_constraint(&[(0, 1.0), (1, 1.0)], Rel::Le, 1.0).unwrap();
        let sol = lp.solve(&opts()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective_value - 1.0).abs() < 1e-7);
    }

    #[test]
    fn two_secret_differential_reduction() {
        // minimize 0.5(1-a) + 0.5 b  s.t. a <= 3b, 1-b <= 3(1-a), 0 <= a,b <= 1
        // Hand-reduced instance; optimum 0.25 at a = 0.75, b = 0.25.
        let mut lp = LinearProgram::new(2, Sense::Minimize);
        lp.set_objective(&[-0.5, 0.5]).unwrap();
        lp.add_constraint(&[(0, 1.0), (1, -3.0)], Rel::Le, 0.0).unwrap();
        lp.add_constraint(&[(0, 3.0), (1, -1.0)], Rel::Le, 2.0).unwrap();
        lp.set_bounds(0, 0.0, 1.0).unwrap();
        lp.set_bounds(1, 0.0, 1.0).unwrap();
        let sol = lp.solve(&opts()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        // objective above drops the +0.5 constant
        assert!((sol.objective_value + 0.25).abs() < 1e-7);
        assert!((sol.values[0] - 0.75).abs() < 1e-6);
        assert!((sol.values[1] - 0.25).abs() < 1e-6);
    }

    #[test]
    fn detects_infeasible_bounds_conflict() {
        let mut lp = LinearProgram::new(1, Sense::Minimize);
        lp.set_obj_coeff(0, 1.0).unwrap();
        lp.add_constraint(&[(0, 1.0)], Rel::Ge, 3.0).unwrap();
        lp.add_constraint(&[(0, 1.0)], Rel::Le, 2.0).unwrap();
        let sol = lp.solve(&opts()).unwrap();
        assert_eq!(sol.status, LpStatus::Infeasible);
    }

    #[test]
    fn detects_unbounded() {
        let mut lp = LinearProgram::new(1, Sense::Maximize);
        lp.set_obj_coeff(0, 1.0).unwrap();
        let sol = lp.solve(&opts()).unwrap();
        assert_eq!(sol.status, LpStatus::Unbounded);
    }

    #[test]
    fn unbounded_with_free_vars_and_equality() {
        // minimize x + y s.t. x - y = 2, both free: objective -> -inf
        let mut lp = LinearProgram::new(2, Sense::Minimize);
        lp.set_objective(&[1.0, 1.0]).unwrap();
        lp.add_constraint(&[(0, 1.0), (1, -1.0)], Rel::Eq, 2.0).unwrap();
        lp.set_bounds(0, f64::NEG_INFINITY, f64::INFINITY).unwrap();
        lp.set_bounds(1, f64::NEG_INFINITY, f64::INFINITY).unwrap();
        let sol = lp.solve(&opts()).unwrap();
        assert_eq!(sol.status, LpStatus::Unbounded);
    }

    #[test]
    fn equality_only_free_variable() {
        let mut lp = LinearProgram::new(1, Sense::Minimize);
        lp.set_obj_coeff(0, 1.0).unwrap();
        lp.set_bounds(0, f64::NEG_INFINITY, f64::INFINITY).unwrap();
        lp.add_constraint(&[(0, 1.0)], Rel::Eq, 3.0).unwrap();
        let sol = lp.solve(&opts()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.values[0] - 3.0).abs() < 1e-7);
    }

    #[test]
    fn zero_objective_returns_feasible_point() {
        let mut lp = LinearProgram::new(2, Sense::Minimize);
        lp.add_constraint(&[(0, 1.0), (1, 1.0)], Rel::Eq, 1.0).unwrap();
        let sol = lp.solve(&opts()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.values[0] + sol.values[1] - 1.0).abs() < 1e-7);
        assert!(sol.values.iter().all(|&v| v >= -1e-9));
        assert_eq!(sol.objective_value, 0.0);
    }

    #[test]
    fn fixed_variables_become_equalities() {
        let mut lp = LinearProgram::new(2, Sense::Minimize);
        lp.set_objective(&[1.0, 1.0]).unwrap();
        lp.set_bounds(0, 2.0, 2.0).unwrap();
        lp.add_constraint(&[(0, 1.0), (1, 1.0)], Rel::Ge, 5.0).unwrap();
        let sol = lp.solve(&opts()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.values[0] - 2.0).abs() < 1e-7);
        assert!((sol.values[1] - 3.0).abs() < 1e-7);
    }

    #[test]
    fn inverted_bounds_are_infeasible() {
        let mut lp = LinearProgram::new(1, Sense::Minimize);
        lp.set_bounds(0, 2.0, 1.0).unwrap();
        let sol = lp.solve(&opts()).unwrap();
        assert_eq!(sol.status, LpStatus::Infeasible);
    }

    #[test]
    fn violated_empty_row_is_infeasible() {
        let mut lp = LinearProgram::new(1, Sense::Minimize);
        lp.add_constraint(&[], Rel::Ge, 1.0).unwrap();
        let sol = lp.solve(&opts()).unwrap();
        assert_eq!(sol.status, LpStatus::Infeasible);
    }

    #[test]
    fn duplicate_terms_are_summed() {
        // minimize x s.t. (0.5 + 0.5) x >= 4
        let mut lp = LinearProgram::new(1, Sense::Minimize);
        lp.set_obj_coeff(0, 1.0).unwrap();
        lp.add_constraint(&[(0, 0.5), (0, 0.5)], Rel::Ge, 4.0).unwrap();
        let sol = lp.solve(&opts()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.values[0] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn deterministic_resolve() {
        let mut lp = LinearProgram::new(3, Sense::Minimize);
        lp.set_objective(&[1.0, 2.0, 0.5]).unwrap();
        lp.add_constraint(&[(0, 1.0), (1, 1.0), (2, 1.0)], Rel::Eq, 1.0).unwrap();
        lp.add_constraint(&[(0, 1.0), (1, -1.0)], Rel::Ge, -0.5).unwrap();
        let a = lp.solve(&opts()).unwrap();
        let b = lp.solve(&opts()).unwrap();
        assert_eq!(a.status, b.status);
        assert_eq!(a.objective_value, b.objective_value);
        assert_eq!(a.values, b.values);
    }
}
