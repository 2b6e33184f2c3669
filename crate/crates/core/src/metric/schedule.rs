use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Instance;
use crate::EPS;

/// Whether delay was paid online (both requests wait until the match time)
/// or offline (only the earlier request waits, `|t_i - t_j|`).
///
/// Offline pairs are stored with `time = max(t_i, t_j)`, so both kinds use
/// the same delay formula `2 * time - t_i - t_j`; the label records which
/// accounting produced the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostSemantics {
    Online,
    Offline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub i: usize,
    pub j: usize,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("request {0} is matched more than once")]
    Repeated(usize),
    #[error("request {0} is not matched")]
    Unmatched(usize),
    #[error("pair ({i}, {j}) refers to a request outside the instance")]
    OutOfRange { i: usize, j: usize },
    #[error("pair ({i}, {j}) is matched before both requests arrived")]
    TooEarly { i: usize, j: usize },
    #[error("pair ({i}, {j}) joins requests of equal polarity")]
    SamePolarity { i: usize, j: usize },
}

/// A perfect matching of an instance's requests with its cost breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub pairs: Vec<MatchedPair>,
    pub connection_cost: f64,
    pub delay_cost: f64,
    pub semantics: CostSemantics,
}

impl Schedule {
    /// Prices `pairs` with `dist` on metric points. Pairs are normalized so
    /// that `i < j`; their order is kept.
    pub fn build(
        inst: &Instance,
        pairs: impl IntoIterator<Item = MatchedPair>,
        semantics: CostSemantics,
        dist: impl Fn(usize, usize) -> f64,
    ) -> Schedule {
        let reqs = inst.requests();
        let pairs: Vec<MatchedPair> = pairs
            .into_iter()
            .map(|p| MatchedPair { i: p.i.min(p.j), j: p.i.max(p.j), time: p.time })
            .collect();
        let mut connection_cost = 0.0;
        let mut delay_cost = 0.0;
        for p in &pairs {
            let (a, b) = (&reqs[p.i], &reqs[p.j]);
            connection_cost += dist(a.point, b.point);
            delay_cost += (p.time - a.arrival) + (p.time - b.arrival);
        }
        Schedule { pairs, connection_cost, delay_cost, semantics }
    }

    /// Offline schedule of the given request pairs, charged in the
    /// instance's own metric.
    pub fn offline(inst: &Instance, pairs: impl IntoIterator<Item = (usize, usize)>) -> Schedule {
        let reqs = inst.requests();
        let pairs: Vec<MatchedPair> = pairs
            .into_iter()
            .map(|(i, j)| MatchedPair { i, j, time: reqs[i].arrival.max(reqs[j].arrival) })
            .collect();
        let metric = inst.metric();
        Self::build(inst, pairs, CostSemantics::Offline, |p, q| metric.dist(p, q))
    }

    pub fn total(&self) -> f64 {
        self.connection_cost + self.delay_cost
    }

    /// Same pairs and times, connection recomputed with another distance.
    pub fn recharged(&self, inst: &Instance, dist: impl Fn(usize, usize) -> f64) -> Schedule {
        Self::build(inst, self.pairs.iter().copied(), self.semantics, dist)
    }

    /// Checks that the pairs form a perfect (and, for bipartite instances,
    /// polarity-respecting) matching with no pair formed before its arrivals.
    pub fn validate(&self, inst: &Instance) -> Result<(), ScheduleError> {
        let reqs = inst.requests();
        let m = reqs.len();
        let mut seen = vec![false; m];
        for p in &self.pairs {
            if p.i >= m || p.j >= m {
                return Err(ScheduleError::OutOfRange { i: p.i, j: p.j });
            }
            for x in [p.i, p.j] {
                if seen[x] {
                    return Err(ScheduleError::Repeated(x));
                }
                seen[x] = true;
            }
            if p.time < reqs[p.i].arrival.max(reqs[p.j].arrival) - EPS {
                return Err(ScheduleError::TooEarly { i: p.i, j: p.j });
            }
            if inst.is_bipartite() && reqs[p.i].polarity == reqs[p.j].polarity {
                return Err(ScheduleError::SamePolarity { i: p.i, j: p.j });
            }
        }
        if let Some(x) = seen.iter().position(|s| !s) {
            return Err(ScheduleError::Unmatched(x));
        }
        Ok(())
    }

    /// Partner of every request, `None` if unmatched.
    pub fn partners(&self, m: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; m];
        for p in &self.pairs {
            if p.i < m && p.j < m {
                out[p.i] = Some(p.j);
                out[p.j] = Some(p.i);
            }
        }
        out
    }

    /// Time at which each request leaves the pending set.
    pub fn match_times(&self, m: usize) -> Vec<f64> {
        let mut out = vec![f64::NAN; m];
        for p in &self.pairs {
            out[p.i] = p.time;
            out[p.j] = p.time;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{FiniteMetric, Polarity};

    #[test]
    fn offline_delay_is_arrival_gap() {
        let m = FiniteMetric::line(10).unwrap();
        let inst = Instance::new(m, vec![(0, 2.0, None), (2, 5.0, None)]).unwrap();
        let s = Schedule::offline(&inst, [(0, 1)]);
        assert!((s.connection_cost - 0.2).abs() < 1e-12);
        assert_eq!(s.delay_cost, 3.0);
        assert!(s.validate(&inst).is_ok());
    }

    #[test]
    fn validate_catches_problems() {
        let m = FiniteMetric::line(4).unwrap();
        let inst = Instance::new(
            m,
            vec![(0, 0.0, Some(Polarity::Plus)), (1, 1.0, Some(Polarity::Plus)), (2, 1.0, Some(Polarity::Minus)), (3, 2.0, Some(Polarity::Minus))],
        )
        .unwrap();
        let same = Schedule::offline(&inst, [(0, 1), (2, 3)]);
        assert_eq!(same.validate(&inst), Err(ScheduleError::SamePolarity { i: 0, j: 1 }));
        let partial = Schedule::offline(&inst, [(0, 2)]);
        assert_eq!(partial.validate(&inst), Err(ScheduleError::Unmatched(1)));
        let early = Schedule::build(
            &inst,
            [MatchedPair { i: 0, j: 2, time: 0.5 }, MatchedPair { i: 1, j: 3, time: 2.0 }],
            CostSemantics::Online,
            |_, _| 0.0,
        );
        assert_eq!(early.validate(&inst), Err(ScheduleError::TooEarly { i: 0, j: 2 }));
    }
}
