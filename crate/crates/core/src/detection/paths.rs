use serde::{Deserialize, Serialize};

use super::mrf::MixedGraph;
use crate::error::{Error, Result};

pub const DEFAULT_MAX_LEN: usize = 8;
pub const DEFAULT_PATH_CAP: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRow {
    /// Node indices from the outcome to the endpoint.
    pub nodes: Vec<usize>,
    /// Node names along the path.
    pub labels: Vec<String>,
    /// Column indices that block this path (every node except the outcome).
    pub cover: Vec<usize>,
    pub direct: bool,
}

impl PathRow {
    pub fn endpoint(&self) -> usize {
        *self.nodes.last().expect("paths have at least two nodes")
    }
}

/// One row per simple path from the outcome to a sampling variable; columns
/// are the graph nodes other than the outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathMatrix {
    /// Graph node index for each column.
    pub columns: Vec<usize>,
    pub names: Vec<String>,
    pub rows: Vec<PathRow>,
}

impl PathMatrix {
    pub fn q(&self) -> usize {
        self.columns.len()
    }

    /// Dense 0/1 matrix view.
    pub fn dense(&self) -> Vec<Vec<bool>> {
        self.rows
            .iter()
            .map(|r| {
                let mut v = vec![false; self.q()];
                r.cover.iter().for_each(|&c| v[c] = true);
                v
            })
            .collect()
    }

    /// Build directly from rows of column indices (tests and external input).
    pub fn from_rows(names: Vec<String>, rows: Vec<Vec<usize>>) -> Self {
        let q = names.len();
        PathMatrix {
            columns: (0..q).collect(),
            rows: rows
                .into_iter()
                .map(|cover| PathRow {
                    direct: cover.len() == 1,
                    nodes: Vec::new(),
                    labels: cover.iter().map(|&c| names[c].clone()).collect(),
                    cover,
                })
                .collect(),
            names,
        }
    }
}

/// Depth-first enumeration of simple paths with at most `max_len` edges.
/// Paths continue through sampling variables, so a path reaching a second
/// sampling variable via the first is listed too.
pub fn enumerate_paths(
    graph: &MixedGraph,
    outcome: usize,
    sampling: &[usize],
    max_len: usize,
    cap: usize,
) -> Result<PathMatrix> {
    if max_len < 2 {
        return Err(Error::Config("max path length must be at least 2".into()));
    }
    let q = graph.len();
    if outcome >= q || sampling.iter().any(|&s| s >= q || s == outcome) {
        return Err(Error::Config("invalid outcome or sampling node".into()));
    }
    let columns: Vec<usize> = (0..q).filter(|&i| i != outcome).collect();
    let col_of: Vec<Option<usize>> = (0..q).map(|i| columns.iter().position(|&c| c == i)).collect();
    let mut is_target = vec![false; q];
    sampling.iter().for_each(|&s| is_target[s] = true);

    let mut rows = Vec::new();
    let mut path = vec![outcome];
    let mut on_path = vec![false; q];
    on_path[outcome] = true;
    // explicit stack of neighbor iterators keeps ordering deterministic
    let neighbors: Vec<Vec<usize>> = (0..q).map(|i| graph.neighbors(i).collect()).collect();
    let mut stack: Vec<usize> = vec![0];
    while let Some(pos) = stack.last_mut() {
        let here = *path.last().expect("path is non-empty");
        if *pos >= neighbors[here].len() || path.len() > max_len {
            stack.pop();
            let left = path.pop().expect("path is non-empty");
            on_path[left] = false;
            continue;
        }
        let next = neighbors[here][*pos];
        *pos += 1;
        if on_path[next] {
            continue;
        }
        path.push(next);
        on_path[next] = true;
        if is_target[next] {
            if rows.len() >= cap {
                return Err(Error::PathCap(cap));
            }
            rows.push(PathRow {
                cover: path[1..]
                    .iter()
                    .map(|&i| col_of[i].expect("non-outcome node"))
                    .collect(),
                direct: path.len() == 2,
                labels: path.iter().map(|&i| graph.nodes[i].name.clone()).collect(),
                nodes: path.clone(),
            });
        }
        stack.push(0);
    }
    Ok(PathMatrix {
        names: columns.iter().map(|&i| graph.nodes[i].name.clone()).collect(),
        columns,
        rows,
    })
}
