//! Exact risk minimization over depth-bounded trees.
//!
//! Only the partition of the support matters, so thresholds are restricted to
//! midpoints between consecutive distinct values and a node is identified by
//! the box of per-coordinate index intervals it covers. Box statistics come
//! from inclusion-exclusion over cumulative sums on the value grid.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::tree::{Node, RegressionTree};
use crate::error::{Error, Result};
use crate::population::{mse, Population};

/// Resource limits for [`optimal_tree`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DpBudget {
    pub max_coords: usize,
    pub max_values: usize,
    pub max_depth: usize,
}

impl Default for DpBudget {
    fn default() -> Self {
        DpBudget {
            max_coords: 3,
            max_values: 32,
            max_depth: 6,
        }
    }
}

/// Clamped weighted mean and its squared risk contribution, from the sums
/// `W = Σw`, `S = Σw·y`, `Q = Σw·‖y‖²` of a cell set.
pub(crate) fn clamped_leaf(w: f64, s: &[f64], q: f64) -> (Vec<f64>, f64) {
    let v: Vec<f64> = s
        .iter()
        .map(|si| {
            if w > 0.0 {
                (si / w).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect();
    let cross: f64 = v.iter().zip(s).map(|(a, b)| a * b).sum();
    let sq: f64 = v.iter().map(|a| a * a).sum();
    (v, (q - 2.0 * cross + w * sq).max(0.0))
}

/// Midpoint threshold strictly separating `a < b` with `a <= t < b`.
pub(crate) fn midpoint_threshold(a: f64, b: f64) -> f64 {
    let t = 0.5 * (a + b);
    if t < b {
        t
    } else {
        a
    }
}

#[derive(Clone, Copy)]
struct Entry {
    risk: f64,
    /// `(coord, last index of the left part)`; `None` for a leaf.
    split: Option<(usize, usize)>,
}

/// Memoized solver for one population; answers every depth up to the budget.
pub struct TreeDp {
    values: Vec<Vec<f64>>,
    label_dim: usize,
    /// Grid extents plus one per coordinate (cumulative table shape).
    shape: Vec<usize>,
    /// Per cell of the cumulative table: `[count, W, Q, S_0..S_{d-1}]`.
    cum: Vec<f64>,
    memo: HashMap<(Vec<(u8, u8)>, u8), Entry>,
    budget: DpBudget,
}

impl TreeDp {
    pub fn new(pop: &Population, budget: DpBudget) -> Result<TreeDp> {
        let dims = pop.feature_dim();
        if dims > budget.max_coords {
            return Err(Error::Budget {
                dimension: "feature coordinates",
                got: dims,
                limit: budget.max_coords,
            });
        }
        let mut values = Vec::with_capacity(dims);
        for c in 0..dims {
            let mut v: Vec<f64> = pop.points().iter().map(|p| p.x[c]).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            if v.len() > budget.max_values {
                return Err(Error::Budget {
                    dimension: "distinct values per coordinate",
                    got: v.len(),
                    limit: budget.max_values,
                });
            }
            values.push(v);
        }
        let d = pop.label_dim();
        let stride = 3 + d;
        let shape: Vec<usize> = values.iter().map(|v| v.len() + 1).collect();
        let cells: usize = shape.iter().product();
        let mut cum = vec![0.0; cells * stride];
        for p in pop.points() {
            let idx: Vec<usize> = (0..dims)
                .map(|c| {
                    values[c]
                        .binary_search_by(|v| v.total_cmp(&p.x[c]))
                        .expect("value on grid")
                        + 1
                })
                .collect();
            let at = flat(&shape, &idx) * stride;
            cum[at] += 1.0;
            cum[at + 1] += p.w;
            cum[at + 2] += p.w * p.y.iter().map(|v| v * v).sum::<f64>();
            for (j, yj) in p.y.iter().enumerate() {
                cum[at + 3 + j] += p.w * yj;
            }
        }
        // running sums along each axis in turn
        for axis in 0..dims {
            let step: usize = shape[axis + 1..].iter().product();
            for cell in 0..cells {
                if (cell / step).is_multiple_of(shape[axis]) {
                    continue;
                }
                let prev = (cell - step) * stride;
                for k in 0..stride {
                    cum[cell * stride + k] += cum[prev + k];
                }
            }
        }
        Ok(TreeDp {
            values,
            label_dim: d,
            shape,
            cum,
            memo: HashMap::new(),
            budget,
        })
    }

    /// Sums over the cells `lo[c]..=hi[c]` (grid indices, zero based).
    fn box_sums(&self, bx: &[(u8, u8)]) -> Vec<f64> {
        let stride = 3 + self.label_dim;
        let mut out = vec![0.0; stride];
        let dims = bx.len();
        for corner in 0..(1usize << dims) {
            let mut idx = Vec::with_capacity(dims);
            let mut sign = 1.0;
            for (c, &(lo, hi)) in bx.iter().enumerate() {
                if corner >> c & 1 == 1 {
                    idx.push(lo as usize);
                    sign = -sign;
                } else {
                    idx.push(hi as usize + 1);
                }
            }
            let at = flat(&self.shape, &idx) * stride;
            for (o, c) in out.iter_mut().zip(&self.cum[at..at + stride]) {
                *o += sign * c;
            }
        }
        out
    }

    fn count(&self, bx: &[(u8, u8)]) -> f64 {
        self.box_sums(bx)[0].round()
    }

    /// Shrinks a box to the smallest one holding the same support points.
    fn tighten(&self, mut bx: Vec<(u8, u8)>) -> Vec<(u8, u8)> {
        let total = self.count(&bx);
        for c in 0..bx.len() {
            loop {
                let (lo, hi) = bx[c];
                if lo == hi {
                    break;
                }
                let mut trial = bx.clone();
                trial[c] = (lo + 1, hi);
                if self.count(&trial) == total {
                    bx = trial;
                    continue;
                }
                trial[c] = (lo, hi - 1);
                if self.count(&trial) == total {
                    bx = trial;
                    continue;
                }
                break;
            }
        }
        bx
    }

    fn leaf(&self, bx: &[(u8, u8)]) -> (Vec<f64>, f64) {
        let s = self.box_sums(bx);
        clamped_leaf(s[1], &s[3..], s[2])
    }

    fn solve_box(&mut self, bx: Vec<(u8, u8)>, depth: u8) -> f64 {
        let key = (bx, depth);
        if let Some(e) = self.memo.get(&key) {
            return e.risk;
        }
        let bx = key.0.clone();
        let (_, leaf_risk) = self.leaf(&bx);
        let mut best = Entry {
            risk: leaf_risk,
            split: None,
        };
        if depth > 0 && leaf_risk > 0.0 {
            for c in 0..bx.len() {
                let (lo, hi) = bx[c];
                for s in lo..hi {
                    let mut left = bx.clone();
                    left[c] = (lo, s);
                    let mut right = bx.clone();
                    right[c] = (s + 1, hi);
                    let (left, right) = (self.tighten(left), self.tighten(right));
                    let rl = self.solve_box(left, depth - 1);
                    if rl >= best.risk {
                        continue;
                    }
                    let risk = rl + self.solve_box(right, depth - 1);
                    if risk < best.risk {
                        best = Entry {
                            risk,
                            split: Some((c, s as usize)),
                        };
                    }
                }
            }
        }
        self.memo.insert(key, best);
        best.risk
    }

    fn build(&self, bx: &[(u8, u8)], depth: u8) -> Node {
        let entry = self.memo.get(&(bx.to_vec(), depth)).copied();
        match entry.and_then(|e| e.split) {
            None => Node::Leaf(self.leaf(bx).0),
            Some((c, s)) => {
                let (lo, hi) = bx[c];
                let mut left = bx.to_vec();
                left[c] = (lo, s as u8);
                let mut right = bx.to_vec();
                right[c] = (s as u8 + 1, hi);
                let theta = midpoint_threshold(self.values[c][s], self.values[c][s + 1]);
                Node::split(
                    c,
                    theta,
                    self.build(&self.tighten(left), depth - 1),
                    self.build(&self.tighten(right), depth - 1),
                )
            }
        }
    }

    fn solve_exact_depth(&mut self, depth: usize) -> Node {
        let full: Vec<(u8, u8)> = self
            .values
            .iter()
            .map(|v| (0, (v.len() - 1) as u8))
            .collect();
        let root = self.tighten(full);
        self.solve_box(root.clone(), depth as u8);
        self.build(&root, depth as u8)
    }

    /// Optimal tree of depth at most `depth` and its risk, evaluated directly
    /// on the support. Risks are non-increasing in `depth` by construction.
    pub fn solve(&mut self, pop: &Population, depth: usize) -> Result<(RegressionTree, f64)> {
        if depth > self.budget.max_depth {
            return Err(Error::Budget {
                dimension: "tree depth",
                got: depth,
                limit: self.budget.max_depth,
            });
        }
        let dims = self.values.len();
        let mut best: Option<(RegressionTree, f64)> = None;
        // the class is nested, so the best over shallower optima is still optimal
        for k in 0..=depth {
            let tree = RegressionTree::new(self.solve_exact_depth(k), dims)?;
            let risk = mse(&tree.compile(pop)?, pop)?;
            if best.as_ref().is_none_or(|(_, r)| risk < *r) {
                best = Some((tree, risk));
            }
        }
        Ok(best.expect("depth range is non-empty"))
    }
}

fn flat(shape: &[usize], idx: &[usize]) -> usize {
    idx.iter().zip(shape).fold(0, |acc, (i, n)| acc * n + i)
}

/// Exact minimizer of the squared risk over trees of depth at most `depth`.
pub fn optimal_tree(pop: &Population, depth: usize) -> Result<(RegressionTree, f64)> {
    optimal_tree_with_budget(pop, depth, DpBudget::default())
}

pub fn optimal_tree_with_budget(
    pop: &Population,
    depth: usize,
    budget: DpBudget,
) -> Result<(RegressionTree, f64)> {
    if depth > budget.max_depth {
        return Err(Error::Budget {
            dimension: "tree depth",
            got: depth,
            limit: budget.max_depth,
        });
    }
    TreeDp::new(pop, budget)?.solve(pop, depth)
}
