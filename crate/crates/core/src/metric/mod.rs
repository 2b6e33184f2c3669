//! Finite metric spaces, rooted tree metrics, request sequences and
//! matching schedules.

mod instance;
mod io;
mod schedule;
mod tree;

pub use instance::{Instance, InstanceError, Polarity, ProblemKind, Request};
pub use io::{load_instance, load_tree, save_instance, save_tree, DistSpec, InstanceFile, IoError, RequestRecord, TreeFile};
pub use schedule::{CostSemantics, MatchedPair, Schedule, ScheduleError};
pub use tree::{RootedTree, TreeError};

use thiserror::Error;

use crate::EPS;

/// The first violated metric axiom found while scanning a distance matrix.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricViolation {
    #[error("distance matrix is not square (row {row} has {len} entries, expected {n})")]
    NotSquare { row: usize, len: usize, n: usize },
    #[error("non-finite distance at ({i}, {j})")]
    NonFinite { i: usize, j: usize },
    #[error("nonzero diagonal entry at point {i}")]
    NonzeroDiagonal { i: usize },
    #[error("negative distance at ({i}, {j})")]
    Negative { i: usize, j: usize },
    #[error("asymmetric distances at ({i}, {j})")]
    Asymmetric { i: usize, j: usize },
    #[error("zero distance between distinct points {i} and {j}")]
    Duplicate { i: usize, j: usize },
    #[error("triangle inequality violated: d({i},{j}) + d({j},{k}) < d({i},{k})")]
    Triangle { i: usize, j: usize, k: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error(transparent)]
    Violation(#[from] MetricViolation),
    #[error("line metric needs an even point count >= 2, got {0}")]
    BadLineSize(usize),
    #[error("operation needs at least {need} points, metric has {have}")]
    TooFewPoints { need: usize, have: usize },
    #[error("positions must be finite and strictly increasing")]
    BadPositions,
}

/// Checks the metric axioms on a raw matrix. Entries of `rows` are read as
/// `rows[i][j] = d(i, j)`.
///
/// Diagonal, sign and symmetry problems are reported before any triangle
/// check; triangles are scanned in lexicographic `(i, j, k)` order and the
/// first `d(i,j) + d(j,k) < d(i,k) - EPS` is returned.
pub fn validate_metric(rows: &[Vec<f64>]) -> Result<(), MetricViolation> {
    let n = rows.len();
    for (row, r) in rows.iter().enumerate() {
        if r.len() != n {
            return Err(MetricViolation::NotSquare { row, len: r.len(), n });
        }
    }
    for i in 0..n {
        for j in 0..n {
            if !rows[i][j].is_finite() {
                return Err(MetricViolation::NonFinite { i, j });
            }
        }
    }
    for i in 0..n {
        if rows[i][i].abs() > EPS {
            return Err(MetricViolation::NonzeroDiagonal { i });
        }
    }
    for i in 0..n {
        for j in 0..n {
            if rows[i][j] < -EPS {
                return Err(MetricViolation::Negative { i, j });
            }
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (rows[i][j] - rows[j][i]).abs() > EPS {
                return Err(MetricViolation::Asymmetric { i, j });
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if rows[i][j] + rows[j][k] < rows[i][k] - EPS {
                    return Err(MetricViolation::Triangle { i, j, k });
                }
            }
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if rows[i][j] <= EPS {
                return Err(MetricViolation::Duplicate { i, j });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    /// Row-major `n * n` matrix.
    Dense(Vec<f64>),
    /// Point `k` at `(k + 1) / n`; distances computed as `|i - j| / n`.
    Line,
    /// Strictly increasing coordinates on the real line.
    Positions(Vec<f64>),
}

/// A finite metric space on points `0..n`.
///
/// Large line metrics are stored implicitly; every other metric is a dense
/// matrix. Construction always validates, so a `FiniteMetric` value satisfies
/// the metric axioms with all off-diagonal distances positive.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMetric {
    n: usize,
    storage: Storage,
}

impl FiniteMetric {
    /// Builds a metric from a full distance matrix, rejecting any violation
    /// (including zero distances between distinct points).
    pub fn from_matrix(rows: Vec<Vec<f64>>) -> Result<Self, MetricError> {
        validate_metric(&rows)?;
        let n = rows.len();
        let mut flat = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                // symmetrize exactly; validation already bounded the gap by EPS
                let v = if i == j { 0.0 } else { 0.5 * (rows[i][j] + rows[j][i]) };
                flat.push(v);
            }
        }
        Ok(FiniteMetric { n, storage: Storage::Dense(flat) })
    }

    /// Loads a matrix that may contain duplicate points (distance `<= EPS`).
    /// Duplicates are merged into their lowest-index representative.
    /// Returns the collapsed metric and an alias table mapping every input
    /// point to its collapsed index.
    pub fn from_matrix_collapsing(rows: Vec<Vec<f64>>) -> Result<(Self, Vec<usize>), MetricError> {
        let n = rows.len();
        for (row, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(MetricViolation::NotSquare { row, len: r.len(), n }.into());
            }
        }
        let mut alias = vec![usize::MAX; n];
        let mut reps: Vec<usize> = Vec::new();
        for i in 0..n {
            let found = reps.iter().position(|&r| rows[i][r].abs() <= EPS && rows[r][i].abs() <= EPS);
            match found {
                Some(idx) => alias[i] = idx,
                None => {
                    alias[i] = reps.len();
                    reps.push(i);
                }
            }
        }
        if reps.len() == n {
            return Ok((Self::from_matrix(rows)?, alias));
        }
        // distances from a duplicate must agree with its representative
        for i in 0..n {
            let r = reps[alias[i]];
            for j in 0..n {
                if (rows[i][j] - rows[r][j]).abs() > EPS {
                    return Err(MetricViolation::Triangle { i: r, j: i, k: j }.into());
                }
            }
        }
        let collapsed: Vec<Vec<f64>> =
            reps.iter().map(|&a| reps.iter().map(|&b| rows[a][b]).collect()).collect();
        Ok((Self::from_matrix(collapsed)?, alias))
    }

    /// `n` equally spaced points: point `k` sits at `(k + 1) / n`.
    pub fn line(n: usize) -> Result<Self, MetricError> {
        if n < 2 || n % 2 != 0 {
            return Err(MetricError::BadLineSize(n));
        }
        Ok(FiniteMetric { n, storage: Storage::Line })
    }

    /// Points on the real line at the given strictly increasing coordinates.
    pub fn from_positions(positions: Vec<f64>) -> Result<Self, MetricError> {
        let ok = positions.iter().all(|p| p.is_finite())
            && positions.windows(2).all(|w| w[1] - w[0] > EPS);
        if !ok {
            return Err(MetricError::BadPositions);
        }
        Ok(FiniteMetric { n: positions.len(), storage: Storage::Positions(positions) })
    }

    /// All distinct pairs at distance `d`.
    pub fn uniform(n: usize, d: f64) -> Result<Self, MetricError> {
        let rows = (0..n).map(|i| (0..n).map(|j| if i == j { 0.0 } else { d }).collect()).collect();
        Self::from_matrix(rows)
    }

    /// Euclidean distances between points in the plane.
    pub fn euclidean(points: &[(f64, f64)]) -> Result<Self, MetricError> {
        let rows = points
            .iter()
            .map(|a| points.iter().map(|b| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()).collect())
            .collect();
        Self::from_matrix(rows)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn dist(&self, i: usize, j: usize) -> f64 {
        match &self.storage {
            Storage::Dense(flat) => flat[i * self.n + j],
            Storage::Line => (i as f64 - j as f64).abs() / self.n as f64,
            Storage::Positions(p) => (p[i] - p[j]).abs(),
        }
    }

    /// Coordinate of point `k` when the metric lives on the real line.
    pub fn position(&self, k: usize) -> Option<f64> {
        match &self.storage {
            Storage::Dense(_) => None,
            Storage::Line => Some((k + 1) as f64 / self.n as f64),
            Storage::Positions(p) => Some(p[k]),
        }
    }

    /// `Some(n)` for the equally spaced line metric.
    pub fn line_size(&self) -> Option<usize> {
        matches!(self.storage, Storage::Line).then_some(self.n)
    }

    /// Full matrix; for implicit storage this materializes `n * n` entries.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| (0..self.n).map(|j| self.dist(i, j)).collect()).collect()
    }

    pub fn min_distance(&self) -> Option<f64> {
        if self.n < 2 {
            return None;
        }
        match &self.storage {
            Storage::Line => Some(1.0 / self.n as f64),
            Storage::Positions(p) => p.windows(2).map(|w| w[1] - w[0]).reduce(f64::min),
            Storage::Dense(_) => self.off_diagonal().reduce(f64::min),
        }
    }

    pub fn max_distance(&self) -> Option<f64> {
        if self.n < 2 {
            return None;
        }
        match &self.storage {
            Storage::Line => Some((self.n - 1) as f64 / self.n as f64),
            Storage::Positions(p) => Some(p[p.len() - 1] - p[0]),
            Storage::Dense(_) => self.off_diagonal().reduce(f64::max),
        }
    }

    /// Largest over smallest off-diagonal distance.
    pub fn aspect_ratio(&self) -> Result<f64, MetricError> {
        if let Some(n) = self.line_size() {
            return Ok((n - 1) as f64);
        }
        match (self.max_distance(), self.min_distance()) {
            (Some(max), Some(min)) => Ok(max / min),
            _ => Err(MetricError::TooFewPoints { need: 2, have: self.n }),
        }
    }

    fn off_diagonal(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).flat_map(move |i| ((i + 1)..self.n).map(move |j| self.dist(i, j)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_point_metric_is_valid() {
        assert_eq!(validate_metric(&[vec![0.0]]), Ok(()));
    }

    #[test]
    fn two_point_metric_is_valid() {
        assert_eq!(validate_metric(&[vec![0.0, 1.0], vec![1.0, 0.0]]), Ok(()));
    }

    #[test]
    fn triangle_violation_names_first_triple() {
        let rows = vec![vec![0.0, 1.0, 3.0], vec![1.0, 0.0, 1.0], vec![3.0, 1.0, 0.0]];
        assert_eq!(validate_metric(&rows), Err(MetricViolation::Triangle { i: 0, j: 1, k: 2 }));
    }

    #[test]
    fn distinct_violation_kinds() {
        let asym = vec![vec![0.0, 1.0], vec![2.0, 0.0]];
        assert_eq!(validate_metric(&asym), Err(MetricViolation::Asymmetric { i: 0, j: 1 }));
        let neg = vec![vec![0.0, -1.0], vec![-1.0, 0.0]];
        assert_eq!(validate_metric(&neg), Err(MetricViolation::Negative { i: 0, j: 1 }));
        let ragged = vec![vec![0.0, 1.0], vec![1.0]];
        assert!(matches!(validate_metric(&ragged), Err(MetricViolation::NotSquare { .. })));
        let dup = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        assert_eq!(validate_metric(&dup), Err(MetricViolation::Duplicate { i: 0, j: 1 }));
    }

    #[test]
    fn line_metric_formula() {
        let m = FiniteMetric::line(2).unwrap();
        assert_eq!(m.position(0), Some(0.5));
        assert_eq!(m.position(1), Some(1.0));
        assert_eq!(m.dist(0, 1), 0.5);
        let m = FiniteMetric::line(4).unwrap();
        assert_eq!(m.dist(0, 3), 0.75);
        assert_eq!(m.aspect_ratio().unwrap(), 3.0);
    }

    #[test]
    fn line_metric_rejects_odd_or_empty() {
        assert_eq!(FiniteMetric::line(3), Err(MetricError::BadLineSize(3)));
        assert_eq!(FiniteMetric::line(0), Err(MetricError::BadLineSize(0)));
    }

    #[test]
    fn aspect_ratio_cases() {
        assert_eq!(FiniteMetric::uniform(5, 1.0).unwrap().aspect_ratio().unwrap(), 1.0);
        let two = FiniteMetric::from_matrix(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(two.aspect_ratio().unwrap(), 1.0);
        let one = FiniteMetric::from_matrix(vec![vec![0.0]]).unwrap();
        assert!(one.aspect_ratio().is_err());
        // dense copy of the line agrees with the implicit one
        let line = FiniteMetric::line(4).unwrap();
        let dense = FiniteMetric::from_matrix(line.to_rows()).unwrap();
        assert_eq!(dense.aspect_ratio().unwrap(), 3.0);
    }

    #[test]
    fn duplicates_are_collapsed() {
        let rows = vec![
            vec![0.0, 0.0, 2.0],
            vec![0.0, 0.0, 2.0],
            vec![2.0, 2.0, 0.0],
        ];
        let (m, alias) = FiniteMetric::from_matrix_collapsing(rows).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(alias, vec![0, 0, 1]);
        assert_eq!(m.dist(0, 1), 2.0);
        assert_eq!(m.min_distance(), Some(2.0));
    }
}
