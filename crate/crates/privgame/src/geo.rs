//! Grid-world instantiation: cell geometry, metric tables, trace
//! ingestion, maximum-likelihood priors, synthetic traces, and prior
//! sharpening for adversary-knowledge studies.
//!
//! Cells are numbered row-major (`id = y * nx + x`) and labeled by their
//! decimal id, which is also the `cell_id` column of the trace CSV format.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LabelSpace, Matrix, MetricSet, ModelError, Prior};

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("trace CSV parse error at line {line}: {reason}")]
    BadCsv { line: usize, reason: String },
    #[error("empty trace with zero smoothing")]
    EmptyTrace,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Rectangular grid of location cells over a physical area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    nx: usize,
    ny: usize,
    width_km: f64,
    height_km: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, width_km: f64, height_km: f64) -> Result<Self, GeoError> {
        if nx * ny == 0 {
            return Err(GeoError::InvalidGrid("cell counts must be positive".into()));
        }
        if !(width_km > 0.0) || !(height_km > 0.0) {
            return Err(GeoError::InvalidGrid("area dimensions must be positive".into()));
        }
        Ok(Grid {
            nx,
            ny,
            width_km,
            height_km,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn num_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn cell_width_km(&self) -> f64 {
        self.width_km / self.nx as f64
    }

    pub fn cell_height_km(&self) -> f64 {
        self.height_km / self.ny as f64
    }

    #[inline]
    pub fn cell_id(&self, x: usize, y: usize) -> usize {
        y * self.nx + x
    }

    #[inline]
    pub fn cell_xy(&self, id: usize) -> (usize, usize) {
        (id % self.nx, id / self.nx)
    }

    /// Center of a cell in km from the area's lower-left corner.
    pub fn cell_center_km(&self, id: usize) -> (f64, f64) {
        let (x, y) = self.cell_xy(id);
        (
            (x as f64 + 0.5) * self.cell_width_km(),
            (y as f64 + 0.5) * self.cell_height_km(),
        )
    }

    /// Largest center-to-center distance, the natural upper end of a
    /// pruning-radius ladder.
    pub fn diameter_km(&self) -> f64 {
        let dx = (self.nx - 1) as f64 * self.cell_width_km();
        let dy = (self.ny - 1) as f64 * self.cell_height_km();
        (dx * dx + dy * dy).sqrt()
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("grid serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self, GeoError> {
        let raw: Grid = serde_json::from_str(text)
            .map_err(|e| GeoError::InvalidGrid(e.to_string()))?;
        Grid::new(raw.nx, raw.ny, raw.width_km, raw.height_km)
    }
}

/// Euclidean center-to-center distance table in km; symmetric with a zero
/// diagonal.
pub fn euclid_metric(grid: &Grid) -> Matrix {
    let n = grid.num_cells();
    let centers: Vec<(f64, f64)> = (0..n).map(|i| grid.cell_center_km(i)).collect();
    let mut table = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = centers[i].0 - centers[j].0;
            let dy = centers[i].1 - centers[j].1;
            let d = (dx * dx + dy * dy).sqrt();
            table.set(i, j, d);
            table.set(j, i, d);
        }
    }
    table
}

/// Hamming cost table: 0 on the diagonal, 1 elsewhere.
pub fn hamming_cost(grid: &Grid) -> Matrix {
    let n = grid.num_cells();
    let mut table = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                table.set(i, j, 1.0);
            }
        }
    }
    table
}

/// Secret and observable spaces over the grid cells (perturbation setting:
/// observables are the cells themselves).
pub fn grid_spaces(grid: &Grid) -> (LabelSpace, LabelSpace) {
    let labels: Vec<String> = (0..grid.num_cells()).map(|i| i.to_string()).collect();
    (
        LabelSpace::secrets(labels.clone()).expect("valid cell labels"),
        LabelSpace::observables(labels).expect("valid cell labels"),
    )
}

/// The standard location instantiation: Hamming utility cost, Euclidean
/// privacy and distinguishability distances, Euclidean support distance.
pub fn grid_metrics(grid: &Grid) -> MetricSet {
    let euclid = euclid_metric(grid);
    MetricSet::new(
        hamming_cost(grid),
        euclid.clone(),
        euclid.clone(),
        Some(euclid),
    )
    .expect("grid tables are valid")
}

/// One user's visit sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    visits: Vec<(i64, usize)>,
}

impl Trace {
    pub fn new(visits: Vec<(i64, usize)>, grid: &Grid) -> Result<Self, GeoError> {
        let n = grid.num_cells();
        for (i, &(ts, cell)) in visits.iter().enumerate() {
            if cell >= n {
                return Err(GeoError::InvalidTrace(format!(
                    "visit {i} references cell {cell} outside the {n}-cell grid"
                )));
            }
            if i > 0 && ts < visits[i - 1].0 {
                return Err(GeoError::InvalidTrace(format!(
                    "timestamps decrease at visit {i}"
                )));
            }
        }
        Ok(Trace { visits })
    }

    pub fn visits(&self) -> &[(i64, usize)] {
        &self.visits
    }

    pub fn len(&self) -> usize {
        self.visits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visits.is_empty()
    }
}

/// Parses the trace CSV format (`user_id,timestamp,cell_id` header) into
/// per-user traces, users in first-seen order.
pub fn parse_trace_csv(text: &str, grid: &Grid) -> Result<Vec<(String, Trace)>, GeoError> {
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .ok_or(GeoError::BadCsv {
            line: 1,
            reason: "empty file".into(),
        })?
        .1
        .trim();
    if header != "user_id,timestamp,cell_id" {
        return Err(GeoError::BadCsv {
            line: 1,
            reason: format!("expected header 'user_id,timestamp,cell_id', got '{header}'"),
        });
    }
    let mut order: Vec<String> = Vec::new();
    let mut visits: Vec<Vec<(i64, usize)>> = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let (user, ts, cell) = match (fields.next(), fields.next(), fields.next(), fields.next()) {
            (Some(u), Some(t), Some(c), None) => (u.trim(), t.trim(), c.trim()),
            _ => {
                return Err(GeoError::BadCsv {
                    line: line_no,
                    reason: "expected exactly three comma-separated fields".into(),
                })
            }
        };
        let ts: i64 = ts.parse().map_err(|_| GeoError::BadCsv {
            line: line_no,
            reason: format!("bad timestamp '{ts}'"),
        })?;
        let cell: usize = cell.parse().map_err(|_| GeoError::BadCsv {
            line: line_no,
            reason: format!("bad cell id '{cell}'"),
        })?;
        let slot = match order.iter().position(|u| u == user) {
            Some(i) => i,
            None => {
                order.push(user.to_string());
                visits.push(Vec::new());
                order.len() - 1
            }
        };
        visits[slot].push((ts, cell));
    }
    order
        .into_iter()
        .zip(visits)
        .map(|(user, v)| Trace::new(v, grid).map(|t| (user, t)))
        .collect()
}

/// Writes one user's trace in the CSV format.
pub fn trace_to_csv(user_id: &str, trace: &Trace) -> String {
    let mut out = String::from("user_id,timestamp,cell_id\n");
    for &(ts, cell) in trace.visits() {
        out.push_str(&format!("{user_id},{ts},{cell}\n"));
    }
    out
}

/// Maximum-likelihood prior from visit counts, with optional additive
/// smoothing: pi(s) = (count(s) + a) / (total + a |S|).
pub fn prior_from_trace(trace: &Trace, grid: &Grid, smoothing: f64) -> Result<Prior, GeoError> {
    if !(smoothing >= 0.0) {
        return Err(GeoError::InvalidParam("smoothing must be >= 0".into()));
    }
    if trace.is_empty() && smoothing == 0.0 {
        return Err(GeoError::EmptyTrace);
    }
    let n = grid.num_cells();
    let mut counts = vec![0.0f64; n];
    for &(_, cell) in trace.visits() {
        counts[cell] += 1.0;
    }
    let total = trace.len() as f64 + smoothing * n as f64;
    let probs: Vec<f64> = counts.iter().map(|&c| (c + smoothing) / total).collect();
    let (secrets, _) = grid_spaces(grid);
    Ok(Prior::new(secrets, probs)?)
}

/// Two-anchor random-walk parameters. Unset anchors are drawn from the
/// seed; stay probabilities hold the walker at its current anchor, and on
/// a non-stay step it either switches anchors or roams to a uniformly
/// random cell.
#[derive(Debug, Clone, Copy)]
pub struct MobilityParams {
    pub home: Option<usize>,
    pub work: Option<usize>,
    pub stay_home: f64,
    pub stay_work: f64,
    pub switch: f64,
    /// Seconds between consecutive visits.
    pub step_secs: i64,
}

impl Default for MobilityParams {
    fn default() -> Self {
        MobilityParams {
            home: None,
            work: None,
            stay_home: 0.75,
            stay_work: 0.6,
            switch: 0.4,
            step_secs: 300,
        }
    }
}

/// Deterministic synthetic trace for a seeded user; a stand-in for real
/// mobility data that still yields skewed, multi-modal priors.
pub fn synthetic_trace(
    grid: &Grid,
    length: usize,
    seed: u64,
    params: &MobilityParams,
) -> Result<Trace, GeoError> {
    for (name, p) in [
        ("stay_home", params.stay_home),
        ("stay_work", params.stay_work),
        ("switch", params.switch),
    ] {
        if !(0.0..=1.0).contains(&p) {
            return Err(GeoError::InvalidParam(format!("{name} must be in [0, 1]")));
        }
    }
    let n = grid.num_cells();
    for anchor in [params.home, params.work].into_iter().flatten() {
        if anchor >= n {
            return Err(GeoError::InvalidParam(format!(
                "anchor cell {anchor} outside the {n}-cell grid"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let home = params.home.unwrap_or_else(|| rng.random_range(0..n));
    let work = params.work.unwrap_or_else(|| {
        if n == 1 {
            0
        } else {
            // draw until distinct from home so both anchors matter
            loop {
                let c = rng.random_range(0..n);
                if c != home {
                    break c;
                }
            }
        }
    });
    let mut at_home = true;
    let mut visits = Vec::with_capacity(length);
    for step in 0..length {
        let ts = step as i64 * params.step_secs;
        let (anchor, stay) = if at_home {
            (home, params.stay_home)
        } else {
            (work, params.stay_work)
        };
        let cell = if rng.random_bool(stay) {
            anchor
        } else if rng.random_bool(params.switch) {
            at_home = !at_home;
            if at_home {
                home
            } else {
                work
            }
        } else {
            rng.random_range(0..n)
        };
        visits.push((ts, cell));
    }
    Trace::new(visits, grid)
}

/// Boosts the k most probable entries by `beta` and renormalizes,
/// producing the sharper prior of a better-informed adversary. Never
/// increases entropy for beta >= 1.
pub fn sharpen_prior(prior: &Prior, k: usize, beta: f64) -> Result<Prior, GeoError> {
    let n = prior.len();
    if k > n {
        return Err(GeoError::InvalidParam(format!(
            "k = {k} exceeds the {n}-label space"
        )));
    }
    if !(beta >= 1.0) {
        return Err(GeoError::InvalidParam("beta must be >= 1".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        prior.probs()[b]
            .partial_cmp(&prior.probs()[a])
            .expect("probabilities are not NaN")
    });
    let mut probs = prior.probs().to_vec();
    for &i in idx.iter().take(k) {
        probs[i] *= beta;
    }
    let sum: f64 = probs.iter().sum();
    for p in probs.iter_mut() {
        *p /= sum;
    }
    Ok(Prior::new(prior.space().clone(), probs)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_validation_and_cell_mapping() {
        assert!(Grid::new(0, 5, 1.0, 1.0).is_err());
        assert!(Grid::new(5, 5, 0.0, 1.0).is_err());
        let g = Grid::new(4, 3, 4.0, 3.0).unwrap();
        assert_eq!(g.num_cells(), 12);
        for id in 0..12 {
            let (x, y) = g.cell_xy(id);
            assert_eq!(g.cell_id(x, y), id);
        }
    }

    #[test]
    fn euclid_metric_paper_scale_cells() {
        let g = Grid::new(20, 15, 15.0, 8.0).unwrap();
        let table = euclid_metric(&g);
        assert_eq!(table.get(0, 0), 0.0);
        // horizontally adjacent: one cell width
        let right = g.cell_id(1, 0);
        assert!((table.get(0, right) - 0.75).abs() < 1e-12);
        // vertically adjacent: one cell height
        let up = g.cell_id(0, 1);
        assert!((table.get(0, up) - 8.0 / 15.0).abs() < 1e-12);
    }

    #[test]
    fn euclid_metric_symmetric_triangle() {
        let g = Grid::new(12, 12, 6.0, 4.0).unwrap();
        let t = euclid_metric(&g);
        let n = g.num_cells();
        for i in 0..n {
            assert_eq!(t.get(i, i), 0.0);
            for j in 0..n {
                assert_eq!(t.get(i, j), t.get(j, i));
            }
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    assert!(t.get(i, j) <= t.get(i, k) + t.get(k, j) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn hamming_cost_table() {
        let g = Grid::new(3, 2, 3.0, 2.0).unwrap();
        let t = hamming_cost(&g);
        let mut trace = 0.0;
        for i in 0..6 {
            trace += t.get(i, i);
            for j in 0..6 {
                if i != j {
                    assert_eq!(t.get(i, j), 1.0);
                }
            }
        }
        assert_eq!(trace, 0.0);
    }

    #[test]
    fn prior_from_counts() {
        let g = Grid::new(2, 1, 2.0, 1.0).unwrap();
        let t = Trace::new(vec![(0, 0), (1, 0), (2, 0), (3, 1)], &g).unwrap();
        let p = prior_from_trace(&t, &g, 0.0).unwrap();
        assert_eq!(p.probs(), &[0.75, 0.25]);

        let empty = Trace::new(vec![], &g).unwrap();
        assert!(matches!(
            prior_from_trace(&empty, &g, 0.0),
            Err(GeoError::EmptyTrace)
        ));
        let p = prior_from_trace(&empty, &g, 1.0).unwrap();
        assert_eq!(p.probs(), &[0.5, 0.5]);

        let t = Trace::new(
            (0..10).map(|i| (i, usize::from(i >= 9))).collect(),
            &g,
        )
        .unwrap();
        let p = prior_from_trace(&t, &g, 1.0).unwrap();
        assert!((p.probs()[0] - 10.0 / 12.0).abs() < 1e-15);
        assert!((p.probs()[1] - 2.0 / 12.0).abs() < 1e-15);
        let sum: f64 = p.probs().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trace_validation() {
        let g = Grid::new(2, 2, 1.0, 1.0).unwrap();
        assert!(Trace::new(vec![(0, 4)], &g).is_err());
        assert!(Trace::new(vec![(5, 0), (3, 1)], &g).is_err());
    }

    #[test]
    fn synthetic_trace_properties() {
        let g = Grid::new(4, 4, 4.0, 4.0).unwrap();
        let params = MobilityParams::default();
        assert!(synthetic_trace(&g, 0, 1, &params).unwrap().is_empty());
        let a = synthetic_trace(&g, 200, 7, &params).unwrap();
        let b = synthetic_trace(&g, 200, 7, &params).unwrap();
        assert_eq!(a, b);
        let c = synthetic_trace(&g, 200, 8, &params).unwrap();
        assert_ne!(a, c);

        // stay probability 1 at home pins the whole trace there
        let pinned = MobilityParams {
            home: Some(5),
            stay_home: 1.0,
            ..MobilityParams::default()
        };
        let t = synthetic_trace(&g, 50, 3, &pinned).unwrap();
        let p = prior_from_trace(&t, &g, 0.0).unwrap();
        assert_eq!(p.probs()[5], 1.0);
    }

    #[test]
    fn trace_csv_round_trip() {
        let g = Grid::new(2, 2, 1.0, 1.0).unwrap();
        let t = synthetic_trace(&g, 20, 11, &MobilityParams::default()).unwrap();
        let text = trace_to_csv("u1", &t);
        let parsed = parse_trace_csv(&text, &g).unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].0, "u1");
        assert_eq!(parsed[0].1, t);

        assert!(parse_trace_csv("nope\n", &g).is_err());
        assert!(parse_trace_csv("user_id,timestamp,cell_id\nu1,0,99\n", &g).is_err());
        assert!(parse_trace_csv("user_id,timestamp,cell_id\nu1,x,0\n", &g).is_err());
    }

    #[test]
    fn grid_json_round_trip() {
        let g = Grid::new(20, 15, 15.0, 8.0).unwrap();
        let text = g.to_json_string();
        assert!(text.contains("\"nx\":20"));
        let back = Grid::from_json_str(&text).unwrap();
        assert_eq!(back, g);
        assert!(Grid::from_json_str("{\"nx\":0,\"ny\":1,\"width_km\":1,\"height_km\":1}").is_err());
    }

    #[test]
    fn sharpen_prior_examples() {
        let space = LabelSpace::secrets(["a", "b", "c"]).unwrap();
        let prior = Prior::new(space, vec![0.5, 0.3, 0.2]).unwrap();

        let same = sharpen_prior(&prior, 1, 1.0).unwrap();
        assert_eq!(same.probs(), prior.probs());

        let sharp = sharpen_prior(&prior, 1, 2.0).unwrap();
        assert!((sharp.probs()[0] - 1.0 / 1.5).abs() < 1e-12);
        assert!((sharp.probs()[1] - 0.3 / 1.5).abs() < 1e-12);
        assert!((sharp.probs()[2] - 0.2 / 1.5).abs() < 1e-12);

        let all = sharpen_prior(&prior, 3, 7.0).unwrap();
        for (a, b) in all.probs().iter().zip(prior.probs()) {
            assert!((a - b).abs() < 1e-12);
        }

        assert!(sharpen_prior(&prior, 4, 2.0).is_err());
        assert!(sharpen_prior(&prior, 1, 0.5).is_err());
    }

    #[test]
    fn sharpen_never_increases_entropy() {
        let g = Grid::new(4, 3, 4.0, 3.0).unwrap();
        for seed in 0..10u64 {
            let t = synthetic_trace(&g, 300, seed, &MobilityParams::default()).unwrap();
            let p = prior_from_trace(&t, &g, 0.5).unwrap();
            for (k, beta) in [(1, 2.0), (2, 4.0), (5, 1.5), (12, 3.0)] {
                let sharp = sharpen_prior(&p, k, beta).unwrap();
                assert!(sharp.entropy() <= p.entropy() + 1e-12);
            }
        }
    }
}
