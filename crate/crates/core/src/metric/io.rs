//! JSON file formats for instances, metrics and trees.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{FiniteMetric, Instance, InstanceError, MetricError, Polarity, RootedTree, TreeError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// `"dist"` is either a full matrix or `{"line": n}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DistSpec {
    Line { line: usize },
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub p: usize,
    pub t: f64,
    pub b: Option<Polarity>,
}

/// On-disk instance: `{"n": .., "dist": .., "requests": [{"p","t","b"}]}`.
/// A file without `requests` describes a bare metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub n: usize,
    pub dist: DistSpec,
    #[serde(default)]
    pub requests: Vec<RequestRecord>,
}

impl InstanceFile {
    pub fn from_instance(inst: &Instance) -> Self {
        let metric = inst.metric();
        let dist = match metric.line_size() {
            Some(n) => DistSpec::Line { line: n },
            None => DistSpec::Matrix(metric.to_rows()),
        };
        let requests = inst
            .requests()
            .iter()
            .map(|r| RequestRecord { p: r.point, t: r.arrival, b: r.polarity })
            .collect();
        InstanceFile { n: metric.len(), dist, requests }
    }

    /// Builds the metric (collapsing duplicate points) and the instance.
    /// The alias table maps file point indices to metric point indices.
    pub fn into_instance(self) -> Result<(Instance, Vec<usize>), String> {
        let (metric, alias) = match self.dist {
            DistSpec::Line { line } => {
                if line != self.n {
                    return Err(format!("n = {} but line has {} points", self.n, line));
                }
                (FiniteMetric::line(line).map_err(|e| e.to_string())?, (0..line).collect())
            }
            DistSpec::Matrix(rows) => {
                if rows.len() != self.n {
                    return Err(format!("n = {} but matrix has {} rows", self.n, rows.len()));
                }
                FiniteMetric::from_matrix_collapsing(rows).map_err(|e| e.to_string())?
            }
        };
        let mut reqs = Vec::with_capacity(self.requests.len());
        for r in &self.requests {
            let p = *alias.get(r.p).ok_or_else(|| format!("request point {} out of range", r.p))?;
            reqs.push((p, r.t, r.b));
        }
        let inst = Instance::new(metric, reqs).map_err(|e| e.to_string())?;
        Ok((inst, alias))
    }
}

/// On-disk tree: `{"parent": [..], "weight": [..], "leaf_map": {vertex: point}}`.
/// The root is the self-loop in `parent` and its weight is `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeFile {
    pub parent: Vec<usize>,
    pub weight: Vec<Option<f64>>,
    pub leaf_map: BTreeMap<usize, usize>,
}

impl TreeFile {
    pub fn from_tree(t: &RootedTree) -> Self {
        let weight = (0..t.len()).map(|u| t.edge_weight(u)).collect();
        let leaf_map = (0..t.num_points()).map(|p| (t.point_vertex(p), p)).collect();
        TreeFile { parent: t.parents().to_vec(), weight, leaf_map }
    }

    pub fn into_tree(self) -> Result<RootedTree, String> {
        let k = self.leaf_map.len();
        let mut point_vertex = vec![usize::MAX; k];
        for (&v, &p) in &self.leaf_map {
            if p >= k || point_vertex[p] != usize::MAX {
                return Err(format!("leaf_map must map points 0..{k} exactly once"));
            }
            point_vertex[p] = v;
        }
        RootedTree::new(self.parent, self.weight, point_vertex).map_err(|e| e.to_string())
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Io { path: path.into(), source })?;
    serde_json::from_str(&text).map_err(|source| IoError::Json { path: path.into(), source })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(value).map_err(|source| IoError::Json { path: path.into(), source })?;
    fs::write(path, text + "\n").map_err(|source| IoError::Io { path: path.into(), source })
}

/// Loads an instance file; returns the instance and the duplicate alias table.
pub fn load_instance(path: &Path) -> Result<(Instance, Vec<usize>), IoError> {
    let file: InstanceFile = read_json(path)?;
    file.into_instance().map_err(|msg| IoError::Format { path: path.into(), msg })
}

pub fn save_instance(path: &Path, inst: &Instance) -> Result<(), IoError> {
    write_json(path, &InstanceFile::from_instance(inst))
}

pub fn load_tree(path: &Path) -> Result<RootedTree, IoError> {
    let file: TreeFile = read_json(path)?;
    file.into_tree().map_err(|msg| IoError::Format { path: path.into(), msg })
}

pub fn save_tree(path: &Path, tree: &RootedTree) -> Result<(), IoError> {
    write_json(path, &TreeFile::from_tree(tree))
}
