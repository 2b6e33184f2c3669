use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::FiniteMetric;

/// Sign of a bipartite request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Polarity {
    Plus,
    Minus,
}

impl Polarity {
    pub fn sign(self) -> i64 {
        match self {
            Polarity::Plus => 1,
            Polarity::Minus => -1,
        }
    }

    pub fn opposite(self) -> Polarity {
        match self {
            Polarity::Plus => Polarity::Minus,
            Polarity::Minus => Polarity::Plus,
        }
    }
}

impl From<Polarity> for i8 {
    fn from(p: Polarity) -> i8 {
        p.sign() as i8
    }
}

impl TryFrom<i8> for Polarity {
    type Error = String;
    fn try_from(v: i8) -> Result<Self, String> {
        match v {
            1 => Ok(Polarity::Plus),
            -1 => Ok(Polarity::Minus),
            other => Err(format!("polarity must be +1 or -1, got {other}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Mpmd,
    Mbpmd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Request {
    pub id: usize,
    pub point: usize,
    pub arrival: f64,
    pub polarity: Option<Polarity>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InstanceError {
    #[error("request count {0} is odd")]
    OddCount(usize),
    #[error("request {id} refers to point {point}, metric has {n} points")]
    PointOutOfRange { id: usize, point: usize, n: usize },
    #[error("request {0} arrives before its predecessor")]
    Unsorted(usize),
    #[error("request {0} has a non-finite or negative arrival time")]
    BadTime(usize),
    #[error("requests mix polarized and unpolarized entries")]
    MixedPolarity,
    #[error("bipartite instance is unbalanced: {plus} positive vs {minus} negative")]
    Unbalanced { plus: usize, minus: usize },
}

/// A request sequence over a finite metric. Request ids are positions in
/// the sequence; arrivals are nondecreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    metric: FiniteMetric,
    requests: Vec<Request>,
    kind: ProblemKind,
}

impl Instance {
    /// Validates and builds an instance from `(point, arrival, polarity)`
    /// triples already in arrival order.
    pub fn new(
        metric: FiniteMetric,
        reqs: Vec<(usize, f64, Option<Polarity>)>,
    ) -> Result<Self, InstanceError> {
        let m = reqs.len();
        if m % 2 != 0 {
            return Err(InstanceError::OddCount(m));
        }
        let polarized = reqs.iter().filter(|r| r.2.is_some()).count();
        if polarized != 0 && polarized != m {
            return Err(InstanceError::MixedPolarity);
        }
        let kind = if m > 0 && polarized == m { ProblemKind::Mbpmd } else { ProblemKind::Mpmd };
        let mut requests = Vec::with_capacity(m);
        let mut prev = f64::NEG_INFINITY;
        for (id, (point, arrival, polarity)) in reqs.into_iter().enumerate() {
            if point >= metric.len() {
                return Err(InstanceError::PointOutOfRange { id, point, n: metric.len() });
            }
            if !arrival.is_finite() || arrival < 0.0 {
                return Err(InstanceError::BadTime(id));
            }
            if arrival < prev {
                return Err(InstanceError::Unsorted(id));
            }
            prev = arrival;
            requests.push(Request { id, point, arrival, polarity });
        }
        if kind == ProblemKind::Mbpmd {
            let plus = requests.iter().filter(|r| r.polarity == Some(Polarity::Plus)).count();
            let minus = m - plus;
            if plus != minus {
                return Err(InstanceError::Unbalanced { plus, minus });
            }
        }
        Ok(Instance { metric, requests, kind })
    }

    /// Like [`Instance::new`] but sorts the triples by arrival first (stable).
    pub fn from_unsorted(
        metric: FiniteMetric,
        mut reqs: Vec<(usize, f64, Option<Polarity>)>,
    ) -> Result<Self, InstanceError> {
        reqs.sort_by(|a, b| a.1.total_cmp(&b.1));
        Self::new(metric, reqs)
    }

    pub fn metric(&self) -> &FiniteMetric {
        &self.metric
    }

    pub fn requests(&self) -> &[Request] {
        &self.requests
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn is_bipartite(&self) -> bool {
        self.kind == ProblemKind::Mbpmd
    }

    /// Same requests with arrival times replaced (order must stay sorted).
    pub fn with_arrivals(&self, arrivals: &[f64]) -> Result<Self, InstanceError> {
        let reqs = self
            .requests
            .iter()
            .zip(arrivals)
            .map(|(r, &t)| (r.point, t, r.polarity))
            .collect();
        Self::new(self.metric.clone(), reqs)
    }
}
