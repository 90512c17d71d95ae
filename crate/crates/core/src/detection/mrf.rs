//! Mixed graphical model estimated by nodewise penalized regressions.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lasso::{select, standardize, LambdaPolicy, Response};
use crate::data::{ColumnData, Frame, Kind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Outcome,
    Observed,
    Partial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub kind: Kind,
    pub role: Role,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeRule {
    /// Edge if either nodewise regression selects the other node.
    #[default]
    Or,
    And,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MrfConfig {
    pub lambda: LambdaPolicy,
    pub rule: EdgeRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFit {
    pub node: String,
    pub lambda: f64,
    pub converged: bool,
    pub separation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedGraph {
    pub nodes: Vec<Node>,
    /// Symmetric, zero diagonal, non-negative.
    pub weights: Vec<Vec<f64>>,
    pub fits: Vec<NodeFit>,
}

impl MixedGraph {
    /// Graph with the given undirected edges at unit weight.
    pub fn from_edges(nodes: Vec<Node>, edges: &[(&str, &str)]) -> Result<Self> {
        let q = nodes.len();
        let mut weights = vec![vec![0.0; q]; q];
        let idx = |name: &str| {
            nodes
                .iter()
                .position(|n| n.name == name)
                .ok_or_else(|| Error::Config(format!("unknown node `{name}`")))
        };
        for &(a, b) in edges {
            let (i, j) = (idx(a)?, idx(b)?);
            if i == j {
                return Err(Error::Invalid(format!("self-loop on `{a}`")));
            }
            weights[i][j] = 1.0;
            weights[j][i] = 1.0;
        }
        Ok(MixedGraph {
            nodes,
            weights,
            fits: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.weights[i][j] > 0.0
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&j| self.has_edge(i, j))
    }

    /// Edges `(i, j, weight)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                if self.has_edge(i, j) {
                    out.push((i, j, self.weights[i][j]));
                }
            }
        }
        out
    }

    pub fn edge_names(&self) -> Vec<(String, String)> {
        self.edges()
            .into_iter()
            .map(|(i, j, _)| (self.nodes[i].name.clone(), self.nodes[j].name.clone()))
            .collect()
    }

    pub fn to_edge_csv(&self) -> String {
        let mut s = String::from("from,to,weight\n");
        for (i, j, w) in self.edges() {
            s.push_str(&format!("{},{},{}\n", self.nodes[i].name, self.nodes[j].name, w));
        }
        s
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("graph mrf {\n");
        for n in &self.nodes {
            let shape = match n.role {
                Role::Outcome => "doublecircle",
                Role::Observed => "ellipse",
                Role::Partial => "box",
            };
            s.push_str(&format!("  \"{}\" [shape={shape}];\n", n.name));
        }
        for (i, j, w) in self.edges() {
            s.push_str(&format!(
                "  \"{}\" -- \"{}\" [penwidth={:.3}];\n",
                self.nodes[i].name,
                self.nodes[j].name,
                1.0 + 4.0 * w.min(1.0)
            ));
        }
        s.push_str("}\n");
        s
    }
}

struct Block {
    cols: Vec<Vec<f64>>,
    response: Response,
}

fn block(frame: &Frame, node: &Node) -> Result<Block> {
    let col = frame.require(&node.name)?;
    match (&col.data, node.kind) {
        (ColumnData::Numeric(v), Kind::Continuous) => Ok(Block {
            cols: vec![v.clone()],
            response: Response::Gaussian(v.clone()),
        }),
        (ColumnData::Numeric(v), Kind::Binary) => Ok(Block {
            cols: vec![v.clone()],
            response: Response::Multinomial {
                class: v.iter().map(|&x| (x == 1.0) as usize).collect(),
                k: 2,
            },
        }),
        (ColumnData::Categorical(v), Kind::Categorical) => {
            let levels = col.levels();
            let class: Vec<usize> = v
                .iter()
                .map(|x| levels.binary_search(x).expect("level comes from the column"))
                .collect();
            let cols = (1..levels.len())
                .map(|l| class.iter().map(|&c| (c == l) as u8 as f64).collect())
                .collect();
            Ok(Block {
                cols,
                response: Response::Multinomial { class, k: levels.len() },
            })
        }
        _ => Err(Error::Schema(format!(
            "node `{}` declared {:?} but column data does not match",
            node.name, node.kind
        ))),
    }
}

/// Nodewise fits run in parallel; edge weight is the mean of the two
/// directional coefficient-group norms.
pub fn fit_mrf(frame: &Frame, nodes: &[Node], cfg: &MrfConfig) -> Result<MixedGraph> {
    let q = nodes.len();
    if q < 2 {
        return Err(Error::Config("graph estimation needs at least two nodes".into()));
    }
    let blocks: Vec<Block> = nodes.iter().map(|n| block(frame, n)).collect::<Result<_>>()?;
    let n = frame.n();
    let total_cols: usize = blocks.iter().map(|b| b.cols.len()).sum();
    if n <= total_cols {
        log::warn!("n = {n} is not larger than the {total_cols} expanded parameters per nodewise fit");
    }

    let results: Vec<(Vec<f64>, NodeFit)> = (0..q)
        .into_par_iter()
        .map(|j| {
            let mut owners = Vec::new();
            let mut cols: Vec<&Vec<f64>> = Vec::new();
            for (k, b) in blocks.iter().enumerate() {
                if k != j {
                    for c in &b.cols {
                        owners.push(k);
                        cols.push(c);
                    }
                }
            }
            let x = DMatrix::from_fn(n, cols.len(), |i, c| cols[c][i]);
            let pf = select(&standardize(&x), &blocks[j].response, cfg.lambda)
                .map_err(|e| e.with_covariate(&nodes[j].name))?;
            let mut norms = vec![0.0; q];
            for (r, &k) in owners.iter().enumerate() {
                norms[k] += pf.fit.beta.row(r).norm_squared();
            }
            norms.iter_mut().for_each(|v| *v = v.sqrt());
            if !pf.fit.converged {
                log::warn!("nodewise fit for `{}` did not converge", nodes[j].name);
            }
            if pf.fit.separation {
                log::warn!("nodewise fit for `{}` shows separation", nodes[j].name);
            }
            Ok((
                norms,
                NodeFit {
                    node: nodes[j].name.clone(),
                    lambda: pf.lambda,
                    converged: pf.fit.converged,
                    separation: pf.fit.separation,
                },
            ))
        })
        .collect::<Result<_>>()?;

    let mut weights = vec![vec![0.0; q]; q];
    for i in 0..q {
        for j in i + 1..q {
            let (a, b) = (results[i].0[j], results[j].0[i]);
            let present = match cfg.rule {
                EdgeRule::Or => a > 0.0 || b > 0.0,
                EdgeRule::And => a > 0.0 && b > 0.0,
            };
            if present {
                let w = 0.5 * (a + b);
                weights[i][j] = w;
                weights[j][i] = w;
            }
        }
    }
    Ok(MixedGraph {
        nodes: nodes.to_vec(),
        weights,
        fits: results.into_iter().map(|r| r.1).collect(),
    })
}
