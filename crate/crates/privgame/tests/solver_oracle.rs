//! Cross-checks the interior-point solver against brute-force vertex
//! enumeration on random box-bounded programs.
//!
//! With every variable boxed, a feasible region is a polytope: it is
//! nonempty iff it has a vertex, and the optimum is attained at one. The
//! oracle enumerates all n-subsets of constraint rows (user rows plus bound
//! rows), solves each square system by Gaussian elimination, filters
//! feasible vertices, and takes the best objective. It shares no code with
//! the solver.

use privgame::lp::{LinearProgram, LpStatus, Rel, Sense, SolverOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Solves `a x = b` (n <= 5) by Gaussian elimination with partial
/// pivoting; returns None when the system is numerically singular.
fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| {
            a[i][col]
                .abs()
                .partial_cmp(&a[j][col].abs())
                .expect("no NaN")
        })?;
        if a[piv][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor != 0.0 {
                for k in col..n {
                    a[row][k] -= factor * a[col][k];
                }
                b[row] -= factor * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

struct DenseRow {
    coeffs: Vec<f64>,
    rel: Rel,
    rhs: f64,
}

struct Instance {
    num_vars: usize,
    objective: Vec<f64>,
    rows: Vec<DenseRow>,
    upper: Vec<f64>,
}

impl Instance {
    fn to_lp(&self) -> LinearProgram {
        let mut lp = LinearProgram::new(self.num_vars, Sense::Minimize);
        lp.set_objective(&self.objective).unwrap();
        for row in &self.rows {
            let terms: Vec<(usize, f64)> = row
                .coeffs
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(j, &v)| (j, v))
                .collect();
            lp.add_constraint(&terms, row.rel, row.rhs).unwrap();
        }
        for (j, &u) in self.upper.iter().enumerate() {
            lp.set_bounds(j, 0.0, u).unwrap();
        }
        lp
    }

    fn feasible(&self, x: &[f64], tol: f64) -> bool {
        for row in &self.rows {
            let act: f64 = row.coeffs.iter().zip(x).map(|(c, v)| c * v).sum();
            let ok = match row.rel {
                Rel::Le => act <= row.rhs + tol,
                Rel::Ge => act >= row.rhs - tol,
                Rel::Eq => (act - row.rhs).abs() <= tol,
            };
            if !ok {
                return false;
            }
        }
        x.iter()
            .zip(&self.upper)
            .all(|(&v, &u)| v >= -tol && v <= u + tol)
    }

    /// Minimum objective over feasible vertices, None when infeasible.
    fn oracle_optimum(&self) -> Option<f64> {
        let n = self.num_vars;
        // all rows as hyperplanes: user rows, then x_j = 0, then x_j = u_j
        let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
        for row in &self.rows {
            planes.push((row.coeffs.clone(), row.rhs));
        }
        for j in 0..n {
            let mut unit = vec![0.0; n];
            unit[j] = 1.0;
            planes.push((unit.clone(), 0.0));
            planes.push((unit, self.upper[j]));
        }
        let mut best: Option<f64> = None;
        let m = planes.len();
        let mut pick = vec![0usize; n];
        enumerate_subsets(m, n, &mut pick, 0, 0, &mut |subset: &[usize]| {
            let a: Vec<Vec<f64>> = subset.iter().map(|&i| planes[i].0.clone()).collect();
            let b: Vec<f64> = subset.iter().map(|&i| planes[i].1).collect();
            if let Some(x) = dense_solve(a, b) {
                if self.feasible(&x, 1e-8) {
                    let obj: f64 = self.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
                    best = Some(best.map_or(obj, |b: f64| b.min(obj)));
                }
            }
        });
        best
    }
}

fn enumerate_subsets(
    m: usize,
    k: usize,
    pick: &mut Vec<usize>,
    depth: usize,
    start: usize,
    visit: &mut impl FnMut(&[usize]),
) {
    if depth == k {
        visit(&pick[..k]);
        return;
    }
    for i in start..m {
        pick[depth] = i;
        enumerate_subsets(m, k, pick, depth + 1, i + 1, visit);
    }
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let num_vars = rng.random_range(1..=4);
    let num_rows = rng.random_range(0..=5);
    let objective: Vec<f64> = (0..num_vars)
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    let upper: Vec<f64> = (0..num_vars)
        .map(|_| rng.random_range(0.5..3.0))
        .collect();
    let mut rows = Vec::new();
    for _ in 0..num_rows {
        let coeffs: Vec<f64> = (0..num_vars)
            .map(|_| {
                if rng.random_bool(0.3) {
                    0.0
                } else {
                    rng.random_range(-2.0..2.0)
                }
            })
            .collect();
        if coeffs.iter().all(|&v| v == 0.0) {
            continue;
        }
        let rel = match rng.random_range(0..6) {
            0 => Rel::Eq,
            1 | 2 => Rel::Ge,
            _ => Rel::Le,
        };
        let rhs = rng.random_range(-1.5..2.5);
        rows.push(DenseRow { coeffs, rel, rhs });
    }
    Instance {
        num_vars,
        objective,
        rows,
        upper,
    }
}

#[test]
fn matches_vertex_enumeration_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(271828);
    let opts = SolverOptions::default();
    let mut optimal = 0usize;
    let mut infeasible = 0usize;
    for case in 0..400 {
        let inst = random_instance(&mut rng);
        let lp = inst.to_lp();
        let sol = lp
            .solve(&opts)
            .unwrap_or_else(|e| panic!("case {case}: solver failed: {e}"));
        match inst.oracle_optimum() {
            Some(best) => {
                assert_eq!(
                    sol.status,
                    LpStatus::Optimal,
                    "case {case}: oracle found optimum {best}, solver said {:?}",
                    sol.status
                );
                assert!(
                    (sol.objective_value - best).abs() <= 1e-6 * best.abs().max(1.0),
                    "case {case}: solver {} vs oracle {best}",
                    sol.objective_value
                );
                assert!(
                    inst.feasible(&sol.values, 1e-6),
                    "case {case}: solver point infeasible"
                );
                optimal += 1;
            }
            None => {
                assert_eq!(
                    sol.status,
                    LpStatus::Infeasible,
                    "case {case}: oracle says infeasible, solver said {:?}",
                    sol.status
                );
                infeasible += 1;
            }
        }
    }
    // the generator must exercise both outcomes
    assert!(optimal > 100, "only {optimal} optimal cases");
    assert!(infeasible > 30, "only {infeasible} infeasible cases");
}

#[test]
fn resubstitution_feasibility_within_tolerance() {
    let mut rng = ChaCha8Rng::seed_from_u64(314159);
    let opts = SolverOptions::default();
    for _ in 0..200 {
        let inst = random_instance(&mut rng);
        let lp = inst.to_lp();
        let sol = lp.solve(&opts).unwrap();
        if sol.status == LpStatus::Optimal {
            assert!(inst.feasible(&sol.values, opts.feas_tol));
        }
    }
}

#[test]
fn repeated_solves_are_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(141421);
    let opts = SolverOptions::default();
    for _ in 0..50 {
        let inst = random_instance(&mut rng);
        let lp = inst.to_lp();
        let first = lp.solve(&opts).unwrap();
        let second = lp.solve(&opts).unwrap();
        assert_eq!(first.status, second.status);
        if first.status == LpStatus::Optimal {
            assert_eq!(first.objective_value, second.objective_value);
            assert_eq!(first.values, second.values);
        }
    }
}
