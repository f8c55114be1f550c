//! CART-style greedy growth with randomized restarts.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dp::{clamped_leaf, midpoint_threshold};
use super::tree::{Node, RegressionTree};
use crate::error::{Error, Result};
use crate::population::{mse, Population, Predictor};
use crate::seed::rng_for;
use crate::stacking::ShardLearner;

/// Splits must lower the weighted squared error by more than this.
pub const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GreedyConfig {
    /// Restart 0 always takes the best split; later restarts pick uniformly
    /// among the `top` best positive-gain splits at every node.
    pub restarts: usize,
    pub top: usize,
    /// Fraction of support points (at least one) used to grow each restart.
    pub sample_fraction: f64,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        GreedyConfig {
            restarts: 4,
            top: 3,
            sample_fraction: 1.0,
        }
    }
}

struct Candidate {
    gain: f64,
    coord: usize,
    threshold: f64,
}

fn sums(pop: &Population, idx: &[usize]) -> (f64, Vec<f64>, f64) {
    let mut w = 0.0;
    let mut s = vec![0.0; pop.label_dim()];
    let mut q = 0.0;
    for &i in idx {
        let p = &pop.points()[i];
        w += p.w;
        q += p.w * p.y.iter().map(|v| v * v).sum::<f64>();
        for (a, b) in s.iter_mut().zip(&p.y) {
            *a += p.w * b;
        }
    }
    (w, s, q)
}

fn candidates(pop: &Population, idx: &[usize], parent: f64) -> Vec<Candidate> {
    let pts = pop.points();
    let (w_all, s_all, q_all) = sums(pop, idx);
    let mut out = Vec::new();
    for c in 0..pop.feature_dim() {
        let mut order = idx.to_vec();
        order.sort_by(|&a, &b| pts[a].x[c].total_cmp(&pts[b].x[c]).then(a.cmp(&b)));
        let (mut w, mut s, mut q) = (0.0, vec![0.0; pop.label_dim()], 0.0);
        for k in 0..order.len() - 1 {
            let p = &pts[order[k]];
            w += p.w;
            q += p.w * p.y.iter().map(|v| v * v).sum::<f64>();
            for (a, b) in s.iter_mut().zip(&p.y) {
                *a += p.w * b;
            }
            let (here, next) = (p.x[c], pts[order[k + 1]].x[c]);
            if here == next {
                continue;
            }
            let s_right: Vec<f64> = s_all.iter().zip(&s).map(|(a, b)| a - b).collect();
            let (_, rl) = clamped_leaf(w, &s, q);
            let (_, rr) = clamped_leaf(w_all - w, &s_right, q_all - q);
            let gain = parent - rl - rr;
            if gain > MIN_GAIN {
                out.push(Candidate {
                    gain,
                    coord: c,
                    threshold: midpoint_threshold(here, next),
                });
            }
        }
    }
    // stable: equal gains keep (coord, threshold) order
    out.sort_by(|a, b| b.gain.total_cmp(&a.gain));
    out
}

fn grow(
    pop: &Population,
    idx: &[usize],
    depth: usize,
    top: usize,
    rng: Option<&mut ChaCha8Rng>,
) -> Node {
    let (w, s, q) = sums(pop, idx);
    let (value, risk) = clamped_leaf(w, &s, q);
    if depth == 0 || idx.len() < 2 {
        return Node::Leaf(value);
    }
    let cands = candidates(pop, idx, risk);
    if cands.is_empty() {
        return Node::Leaf(value);
    }
    let mut rng = rng;
    let pick = match rng.as_deref_mut() {
        Some(r) => r.gen_range(0..cands.len().min(top.max(1))),
        None => 0,
    };
    let Candidate {
        coord, threshold, ..
    } = cands[pick];
    let (left, right): (Vec<usize>, Vec<usize>) = idx
        .iter()
        .partition(|&&i| pop.points()[i].x[coord] <= threshold);
    let l = grow(pop, &left, depth - 1, top, rng.as_deref_mut());
    let r = grow(pop, &right, depth - 1, top, rng);
    Node::split(coord, threshold, l, r)
}

/// Greedy tree of depth at most `depth`; the best restart by risk on `pop` wins.
pub fn greedy_tree(
    pop: &Population,
    depth: usize,
    seed: u64,
    config: &GreedyConfig,
) -> Result<RegressionTree> {
    if !(config.sample_fraction > 0.0 && config.sample_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "sample_fraction {} not in (0, 1]",
            config.sample_fraction
        )));
    }
    let n = pop.len();
    let mut best: Option<(RegressionTree, f64)> = None;
    for r in 0..config.restarts.max(1) {
        let mut rng = rng_for(seed, &[r as u64]);
        let m = ((config.sample_fraction * n as f64).round() as usize).clamp(1, n);
        let mut idx: Vec<usize> = if m == n {
            (0..n).collect()
        } else {
            sample(&mut rng, n, m).into_vec()
        };
        idx.sort_unstable();
        let node = if r == 0 {
            grow(pop, &idx, depth, config.top, None)
        } else {
            grow(pop, &idx, depth, config.top, Some(&mut rng))
        };
        let tree = RegressionTree::new(node, pop.feature_dim())?;
        let risk = mse(&tree.compile(pop)?, pop)?;
        if best.as_ref().is_none_or(|(_, b)| risk < *b) {
            best = Some((tree, risk));
        }
    }
    Ok(best.expect("at least one restart").0)
}

/// Greedy trees as base models for stacking experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreedyTreeLearner {
    pub depth: usize,
    #[serde(default)]
    pub config: GreedyConfig,
}

impl ShardLearner for GreedyTreeLearner {
    fn fit(&self, shard: &Population, seed: u64, eval: &Population) -> Result<Predictor> {
        greedy_tree(shard, self.depth, seed, &self.config)?.compile(eval)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closure::dp::optimal_tree;

    fn pop1d(xs: &[f64], ys: &[f64]) -> Population {
        Population::uniform(
            xs.iter()
                .zip(ys)
                .map(|(x, y)| (vec![*x], vec![*y]))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn depth_zero_matches_optimal() {
        let pop = pop1d(&[0.0, 1.0, 2.0], &[0.2, 0.9, 0.4]);
        let g = greedy_tree(&pop, 0, 1, &GreedyConfig::default()).unwrap();
        let (o, _) = optimal_tree(&pop, 0).unwrap();
        assert_eq!(g, o);
    }

    #[test]
    fn separable_instance_has_zero_gap() {
        let pop = pop1d(&[0.0, 1.0, 2.0, 3.0], &[0.0, 0.0, 1.0, 1.0]);
        let g = greedy_tree(&pop, 1, 3, &GreedyConfig::default()).unwrap();
        assert_eq!(mse(&g.compile(&pop).unwrap(), &pop).unwrap(), 0.0);
    }

    #[test]
    fn xor_defeats_greedy() {
        let pop = Population::uniform(vec![
            (vec![0.0, 0.0], vec![0.0]),
            (vec![1.0, 1.0], vec![0.0]),
            (vec![0.0, 1.0], vec![1.0]),
            (vec![1.0, 0.0], vec![1.0]),
        ])
        .unwrap();
        let g = greedy_tree(&pop, 2, 0, &GreedyConfig::default()).unwrap();
        let eps = mse(&g.compile(&pop).unwrap(), &pop).unwrap() - optimal_tree(&pop, 2).unwrap().1;
        assert!((eps - 0.25).abs() < 1e-15);
    }

    #[test]
    fn restarts_never_hurt_and_are_reproducible() {
        let xs: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let ys: Vec<f64> = (0..12).map(|i| ((i * 7) % 12) as f64 / 11.0).collect();
        let pop = pop1d(&xs, &ys);
        let one = GreedyConfig {
            restarts: 1,
            ..GreedyConfig::default()
        };
        let many = GreedyConfig {
            restarts: 8,
            ..GreedyConfig::default()
        };
        let r1 = mse(
            &greedy_tree(&pop, 2, 5, &one)
                .unwrap()
                .compile(&pop)
                .unwrap(),
            &pop,
        )
        .unwrap();
        let a = greedy_tree(&pop, 2, 5, &many).unwrap();
        let r8 = mse(&a.compile(&pop).unwrap(), &pop).unwrap();
        assert!(r8 <= r1);
        assert_eq!(a, greedy_tree(&pop, 2, 5, &many).unwrap());
    }
}
