//! Separating-set detection: estimate an undirected graph over the outcome
//! and covariates, list the simple paths from the outcome to the sampling
//! variables, and find the smallest fully observed set that blocks them all.

pub mod cover;
pub mod lasso;
pub mod mrf;
pub mod paths;

use serde::{Deserialize, Serialize};

use crate::data::Frame;
use crate::error::{Error, Result};
pub use cover::{solve_min_partial, solve_separating_set, verify_cover, SeparatingSetResult, Status};
pub use lasso::LambdaPolicy;
pub use mrf::{fit_mrf, EdgeRule, MixedGraph, MrfConfig, Node, NodeFit, Role};
pub use paths::{enumerate_paths, PathMatrix, DEFAULT_MAX_LEN, DEFAULT_PATH_CAP};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectConfig {
    pub mrf: MrfConfig,
    pub max_len: usize,
    pub path_cap: usize,
    /// Also report the set with the fewest partial members when no fully
    /// observed set exists.
    pub minimize_partial: bool,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            mrf: MrfConfig::default(),
            max_len: DEFAULT_MAX_LEN,
            path_cap: DEFAULT_PATH_CAP,
            minimize_partial: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub outcome: String,
    pub sampling_set: Vec<String>,
    pub partial: Vec<String>,
    pub result: SeparatingSetResult,
    pub fewest_partial: Option<SeparatingSetResult>,
    pub n_paths: usize,
    pub edges: Vec<Edge>,
    pub node_fits: Vec<NodeFit>,
    pub recommendation: String,
    #[serde(skip)]
    pub graph: Option<MixedGraph>,
}

/// Nodes for the outcome plus every covariate, with roles from `partial`.
pub fn build_nodes(frame: &Frame, outcome: &str, covariates: &[String], partial: &[String]) -> Result<Vec<Node>> {
    let mut nodes = vec![Node {
        name: outcome.to_string(),
        kind: frame.require(outcome)?.kind,
        role: Role::Outcome,
    }];
    for c in covariates {
        if c == outcome || nodes.iter().any(|n| &n.name == c) {
            continue;
        }
        nodes.push(Node {
            name: c.clone(),
            kind: frame.require(c)?.kind,
            role: if partial.contains(c) {
                Role::Partial
            } else {
                Role::Observed
            },
        });
    }
    Ok(nodes)
}

/// Runs detection on an already estimated graph.
pub fn detect_on_graph(graph: MixedGraph, sampling_set: &[String], cfg: &DetectConfig) -> Result<DetectionReport> {
    let outcome = graph
        .nodes
        .iter()
        .position(|n| n.role == Role::Outcome)
        .ok_or_else(|| Error::Config("graph has no outcome node".into()))?;
    let sampling: Vec<usize> = sampling_set
        .iter()
        .map(|s| {
            graph
                .index(s)
                .ok_or_else(|| Error::Config(format!("sampling variable `{s}` is not a graph node")))
        })
        .collect::<Result<_>>()?;
    let partial_names: Vec<String> = graph
        .nodes
        .iter()
        .filter(|n| n.role == Role::Partial)
        .map(|n| n.name.clone())
        .collect();
    if let Some(p) = partial_names.iter().find(|p| !sampling_set.contains(p)) {
        return Err(Error::Config(format!(
            "partial variable `{p}` must belong to the sampling set"
        )));
    }
    let pm = enumerate_paths(&graph, outcome, &sampling, cfg.max_len, cfg.path_cap)?;
    let partial: Vec<bool> = pm
        .columns
        .iter()
        .map(|&i| graph.nodes[i].role == Role::Partial)
        .collect();
    let result = solve_separating_set(&pm, &partial)?;
    let fewest_partial = if cfg.minimize_partial && !result.status.is_found() {
        Some(solve_min_partial(&pm, &partial)?)
    } else {
        None
    };
    let recommendation = match result.status {
        Status::Found if result.set.is_empty() => {
            "no path links the outcome to the sampling variables; the outcome is already separated".to_string()
        }
        Status::Found => format!(
            "construct survey weights using the separating set {{{}}}",
            result.set.join(", ")
        ),
        Status::NoneExists | Status::DirectEdgeBlocker => format!(
            "no fully observed separating set exists; run the partial-confounder sweep over {{{}}}",
            partial_names.join(", ")
        ),
    };
    let edges = graph
        .edges()
        .into_iter()
        .map(|(i, j, w)| Edge {
            from: graph.nodes[i].name.clone(),
            to: graph.nodes[j].name.clone(),
            weight: w,
        })
        .collect();
    Ok(DetectionReport {
        outcome: graph.nodes[outcome].name.clone(),
        sampling_set: sampling_set.to_vec(),
        partial: partial_names,
        n_paths: pm.rows.len(),
        result,
        fewest_partial,
        edges,
        node_fits: graph.fits.clone(),
        recommendation,
        graph: Some(graph),
    })
}

/// Full pipeline: graph estimation, path enumeration, exact cover.
pub fn detect(
    frame: &Frame,
    outcome: &str,
    covariates: &[String],
    sampling_set: &[String],
    partial: &[String],
    cfg: &DetectConfig,
) -> Result<DetectionReport> {
    let mut all: Vec<String> = covariates.to_vec();
    for s in sampling_set {
        if !all.contains(s) {
            all.push(s.clone());
        }
    }
    let nodes = build_nodes(frame, outcome, &all, partial)?;
    let graph = fit_mrf(frame, &nodes, &cfg.mrf)?;
    detect_on_graph(graph, sampling_set, cfg)
}
