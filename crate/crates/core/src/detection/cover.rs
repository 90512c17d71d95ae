//! Exact minimum set cover over path rows by branch and bound.
//!
//! The bound is a disjoint-row packing: rows sharing no admissible column
//! each need a distinct member, which is a feasible dual of the covering LP.

use serde::{Deserialize, Serialize};

use super::paths::PathMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Found,
    NoneExists,
    DirectEdgeBlocker,
}

impl Status {
    pub fn is_found(self) -> bool {
        self == Status::Found
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blocking {
    pub path: Vec<String>,
    pub blocked_by: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparatingSetResult {
    pub status: Status,
    pub set: Vec<String>,
    pub objective: usize,
    pub certificate: Vec<Blocking>,
    /// Paths that no admissible set can block.
    pub unblockable: Vec<Vec<String>>,
}

type Mask = u128;

fn path_names(pm: &PathMatrix, r: usize) -> Vec<String> {
    pm.rows[r].labels.clone()
}

/// Minimum-cost cover with `cost[c] = None` marking forbidden columns.
/// Returns the chosen columns, or `None` if some row has no admissible column.
pub fn min_cost_cover(pm: &PathMatrix, cost: &[Option<f64>]) -> Result<Option<Vec<usize>>> {
    let q = pm.q();
    if q > Mask::BITS as usize {
        return Err(Error::Invalid(format!(
            "set cover supports at most 128 candidates, got {q}"
        )));
    }
    if cost.len() != q {
        return Err(Error::LengthMismatch {
            what: "costs vs columns",
            left: cost.len(),
            right: q,
        });
    }
    let allowed: Mask = (0..q).filter(|&c| cost[c].is_some()).fold(0, |m, c| m | (1 << c));
    let mut rows: Vec<Mask> = Vec::with_capacity(pm.rows.len());
    for r in &pm.rows {
        let m = r.cover.iter().fold(0 as Mask, |m, &c| m | (1 << c)) & allowed;
        if m == 0 {
            return Ok(None);
        }
        rows.push(m);
    }
    rows.sort_by_key(|m| (m.count_ones(), *m));
    rows.dedup();
    // drop rows implied by a smaller row
    let mut kept: Vec<Mask> = Vec::new();
    for &m in &rows {
        if !kept.iter().any(|&k| k & !m == 0) {
            kept.push(m);
        }
    }
    let cost: Vec<f64> = cost.iter().map(|c| c.unwrap_or(f64::INFINITY)).collect();
    let mut best = Best {
        cost: f64::INFINITY,
        set: 0,
    };
    search(&kept, 0, 0.0, &cost, &mut best);
    Ok(Some((0..q).filter(|&c| best.set >> c & 1 == 1).collect()))
}

struct Best {
    cost: f64,
    set: Mask,
}

fn min_cost(mask: Mask, cost: &[f64]) -> f64 {
    let mut m = mask;
    let mut best = f64::INFINITY;
    while m != 0 {
        let c = m.trailing_zeros() as usize;
        best = best.min(cost[c]);
        m &= m - 1;
    }
    best
}

fn packing_bound(rows: &[Mask], cost: &[f64]) -> f64 {
    let mut used: Mask = 0;
    let mut bound = 0.0;
    for &r in rows {
        if r & used == 0 {
            used |= r;
            bound += min_cost(r, cost);
        }
    }
    bound
}

fn search(rows: &[Mask], chosen: Mask, so_far: f64, cost: &[f64], best: &mut Best) {
    if rows.is_empty() {
        if so_far < best.cost || (so_far == best.cost && chosen < best.set) {
            best.cost = so_far;
            best.set = chosen;
        }
        return;
    }
    if so_far + packing_bound(rows, cost) > best.cost {
        return;
    }
    // branch on the row with fewest admissible columns
    let pivot = *rows.iter().min_by_key(|m| m.count_ones()).expect("rows non-empty");
    let mut options: Vec<usize> = (0..Mask::BITS as usize).filter(|&c| pivot >> c & 1 == 1).collect();
    options.sort_by(|&a, &b| {
        let cov = |c: usize| rows.iter().filter(|&&m| m >> c & 1 == 1).count();
        cost[a].total_cmp(&cost[b]).then(cov(b).cmp(&cov(a))).then(a.cmp(&b))
    });
    let mut excluded: Mask = 0;
    for c in options {
        let bit: Mask = 1 << c;
        let mut rest = Vec::with_capacity(rows.len());
        let mut dead = false;
        for &m in rows {
            if m & bit != 0 {
                continue;
            }
            let m = m & !excluded;
            if m == 0 {
                dead = true;
                break;
            }
            rest.push(m);
        }
        if !dead {
            search(&rest, chosen | bit, so_far + cost[c], cost, best);
        }
        // later branches may not use c
        excluded |= bit;
    }
}

/// Checks that `set` hits every row and avoids every forbidden column.
pub fn verify_cover(pm: &PathMatrix, set: &[usize], forbidden: &[bool]) -> bool {
    set.iter().all(|&c| !forbidden[c]) && pm.rows.iter().all(|r| r.cover.iter().any(|c| set.contains(c)))
}

fn certificate(pm: &PathMatrix, set: &[usize]) -> Vec<Blocking> {
    (0..pm.rows.len())
        .map(|r| {
            let by = pm.rows[r]
                .cover
                .iter()
                .find(|c| set.contains(c))
                .expect("verified cover");
            Blocking {
                path: path_names(pm, r),
                blocked_by: pm.names[*by].clone(),
            }
        })
        .collect()
}

/// Minimum-cardinality separating set excluding partial columns.
pub fn solve_separating_set(pm: &PathMatrix, partial: &[bool]) -> Result<SeparatingSetResult> {
    solve_with_costs(pm, partial, false)
}

/// Allows partial columns at a cost exceeding any all-observed set, so the
/// result first minimizes partial members and then total size.
pub fn solve_min_partial(pm: &PathMatrix, partial: &[bool]) -> Result<SeparatingSetResult> {
    solve_with_costs(pm, partial, true)
}

fn solve_with_costs(pm: &PathMatrix, partial: &[bool], allow_partial: bool) -> Result<SeparatingSetResult> {
    let q = pm.q();
    if partial.len() != q {
        return Err(Error::LengthMismatch {
            what: "observability vs columns",
            left: partial.len(),
            right: q,
        });
    }
    let heavy = (q + 1) as f64;
    let cost: Vec<Option<f64>> = partial
        .iter()
        .map(|&p| match (p, allow_partial) {
            (false, _) => Some(1.0),
            (true, true) => Some(heavy),
            (true, false) => None,
        })
        .collect();
    let blocked = |r: usize| pm.rows[r].cover.iter().all(|&c| cost[c].is_none());
    let unblockable: Vec<usize> = (0..pm.rows.len()).filter(|&r| blocked(r)).collect();
    if !unblockable.is_empty() {
        let direct = unblockable.iter().any(|&r| pm.rows[r].direct);
        return Ok(SeparatingSetResult {
            status: if direct {
                Status::DirectEdgeBlocker
            } else {
                Status::NoneExists
            },
            set: Vec::new(),
            objective: 0,
            certificate: Vec::new(),
            unblockable: unblockable.iter().map(|&r| path_names(pm, r)).collect(),
        });
    }
    let set = min_cost_cover(pm, &cost)?.expect("every row has an admissible column");
    let forbidden: Vec<bool> = cost.iter().map(Option::is_none).collect();
    if !verify_cover(pm, &set, &forbidden) {
        return Err(Error::Invalid("internal: separating set fails coverage check".into()));
    }
    Ok(SeparatingSetResult {
        status: Status::Found,
        objective: set.len(),
        certificate: certificate(pm, &set),
        set: set.iter().map(|&c| pm.names[c].clone()).collect(),
        unblockable: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names(q: usize) -> Vec<String> {
        (0..q).map(|i| format!("x{i}")).collect()
    }

    fn brute_force(pm: &PathMatrix, partial: &[bool]) -> Option<usize> {
        let q = pm.q();
        (0u32..1 << q)
            .filter(|s| (0..q).all(|c| s >> c & 1 == 0 || !partial[c]))
            .filter(|s| pm.rows.iter().all(|r| r.cover.iter().any(|&c| s >> c & 1 == 1)))
            .map(|s| s.count_ones() as usize)
            .min()
    }

    #[test]
    fn chain_examples() {
        // Y - W - V: row covers {W, V}; V partial
        let pm = PathMatrix::from_rows(vec!["W".into(), "V".into()], vec![vec![0, 1]]);
        let r = solve_separating_set(&pm, &[false, true]).unwrap();
        assert_eq!(r.status, Status::Found);
        assert_eq!(r.set, vec!["W"]);
        assert_eq!(r.objective, 1);
        let r = solve_separating_set(&pm, &[true, true]).unwrap();
        assert_eq!(r.status, Status::NoneExists);
    }

    #[test]
    fn four_cycle_needs_both() {
        let pm = PathMatrix::from_rows(vec!["A".into(), "V".into(), "B".into()], vec![vec![0, 1], vec![2, 1]]);
        let r = solve_separating_set(&pm, &[false, true, false]).unwrap();
        assert_eq!(r.set, vec!["A", "B"]);
        assert_eq!(r.objective, 2);
        assert_eq!(r.certificate.len(), 2);
    }

    #[test]
    fn direct_partial_edge() {
        let pm = PathMatrix::from_rows(vec!["V".into()], vec![vec![0]]);
        let r = solve_separating_set(&pm, &[true]).unwrap();
        assert_eq!(r.status, Status::DirectEdgeBlocker);
        assert_eq!(r.unblockable, vec![vec!["V".to_string()]]);
    }

    #[test]
    fn empty_matrix_gives_empty_set() {
        let pm = PathMatrix::from_rows(names(3), vec![]);
        let r = solve_separating_set(&pm, &[false; 3]).unwrap();
        assert_eq!(r.status, Status::Found);
        assert!(r.set.is_empty());
    }

    #[test]
    fn min_partial_prefers_fewest_partial() {
        // rows {p0}, {p0, a}, {b, p1}; partial p0, p1
        let pm = PathMatrix::from_rows(
            vec!["p0".into(), "a".into(), "b".into(), "p1".into()],
            vec![vec![0], vec![0, 1], vec![2, 3]],
        );
        let partial = [true, false, false, true];
        assert_eq!(
            solve_separating_set(&pm, &partial).unwrap().status,
            Status::DirectEdgeBlocker
        );
        let r = solve_min_partial(&pm, &partial).unwrap();
        assert_eq!(r.set, vec!["p0", "b"]);
    }

    #[test]
    fn matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let q = rng.random_range(1..=16);
            let nrows = rng.random_range(0..25);
            let rows: Vec<Vec<usize>> = (0..nrows)
                .map(|_| {
                    let k = rng.random_range(1..=q.min(5));
                    let mut r: Vec<usize> = (0..k).map(|_| rng.random_range(0..q)).collect();
                    r.sort();
                    r.dedup();
                    r
                })
                .collect();
            let partial: Vec<bool> = (0..q).map(|_| rng.random::<f64>() < 0.2).collect();
            let pm = PathMatrix::from_rows(names(q), rows);
            let r = solve_separating_set(&pm, &partial).unwrap();
            match brute_force(&pm, &partial) {
                Some(k) => {
                    assert_eq!(r.status, Status::Found);
                    assert_eq!(r.objective, k);
                    let idx: Vec<usize> = r
                        .set
                        .iter()
                        .map(|n| pm.names.iter().position(|m| m == n).unwrap())
                        .collect();
                    assert!(verify_cover(&pm, &idx, &partial));
                }
                None => assert!(!r.status.is_found()),
            }
        }
    }
}
