//! Random instance generators. Every generator takes its own RNG so callers
//! can address instances by seed path.

use anyhow::Result;
use dlab_core::boosting::WeakLearnerClass;
use dlab_core::closure::{Affine, Edge, ReluNetwork, Source};
use dlab_core::{Point, Population, Predictor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// `n` points with features `0..n` (plus random extra coordinates), random
/// positive weights and labels uniform in `[lo, hi)`.
pub fn population(
    rng: &mut ChaCha8Rng,
    n: usize,
    label_dim: usize,
    lo: f64,
    hi: f64,
) -> Result<Population> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let points = raw
        .iter()
        .enumerate()
        .map(|(i, w)| Point {
            x: vec![i as f64],
            y: (0..label_dim).map(|_| rng.gen_range(lo..hi)).collect(),
            w: w / total,
        })
        .collect();
    Ok(Population::new(points)?)
}

pub fn predictor(rng: &mut ChaCha8Rng, pop: &Population, scale: f64) -> Predictor {
    let d = pop.label_dim();
    let values = (0..pop.len() * d)
        .map(|_| scale * rng.gen_range(-1.0..1.0))
        .collect();
    Predictor::from_flat(d, values).expect("length matches")
}

/// A class built from `base` random atoms, symmetrized to `2·base` atoms.
pub fn class(rng: &mut ChaCha8Rng, pop: &Population, base: usize) -> Result<WeakLearnerClass> {
    let atoms = (0..base).map(|_| predictor(rng, pop, 1.0)).collect();
    Ok(WeakLearnerClass::new(atoms, None, pop)?)
}

/// Grid of `side^dims` distinct points in `[0,1]^dims`, with labels in `[0,1]`.
pub fn tree_fixture(rng: &mut ChaCha8Rng, dims: usize, side: usize) -> Result<Population> {
    let n = side.pow(dims as u32);
    let (fa, fb, phase) = (
        rng.gen_range(1.0..4.0),
        rng.gen_range(1.0..4.0),
        rng.gen_range(0.0..6.3),
    );
    let noise = rng.gen_range(0.0..0.3);
    let records = (0..n)
        .map(|i| {
            let x: Vec<f64> = (0..dims)
                .map(|c| ((i / side.pow(c as u32)) % side) as f64 / (side - 1).max(1) as f64)
                .collect();
            let signal = 0.5
                + 0.35 * (fa * x[0] + phase).sin() * if dims > 1 { (fb * x[1]).cos() } else { 1.0 };
            let y = (signal + noise * rng.gen_range(-1.0..1.0)).clamp(0.0, 1.0);
            (x, vec![y])
        })
        .collect();
    Ok(Population::uniform(records)?)
}

/// A random DAG: node `j` reads a random subset of inputs and earlier nodes;
/// node indices are then shuffled so storage order is not topological.
pub fn dag(
    rng: &mut ChaCha8Rng,
    input_dim: usize,
    size: usize,
    output_dim: usize,
) -> Result<ReluNetwork> {
    let mut perm: Vec<usize> = (0..size).collect();
    for i in (1..size).rev() {
        perm.swap(i, rng.gen_range(0..=i));
    }
    let edges_of = |rank: usize, rng: &mut ChaCha8Rng| {
        let mut edges = Vec::new();
        for i in 0..input_dim {
            if rng.gen_bool(0.7) {
                edges.push(Edge {
                    from: Source::Input(i),
                    weight: rng.gen_range(-1.5..1.5),
                });
            }
        }
        for &node in &perm[..rank] {
            if rng.gen_bool(0.5) {
                edges.push(Edge {
                    from: Source::Node(node),
                    weight: rng.gen_range(-1.5..1.5),
                });
            }
        }
        edges
    };
    let mut nodes = vec![Affine::default(); size];
    for rank in 0..size {
        let edges = edges_of(rank, rng);
        nodes[perm[rank]] = Affine {
            edges,
            bias: rng.gen_range(-0.5..0.5),
        };
    }
    let outputs = (0..output_dim)
        .map(|_| Affine {
            edges: edges_of(size, rng),
            bias: rng.gen_range(-0.5..0.5),
        })
        .collect();
    Ok(ReluNetwork::new(input_dim, nodes, outputs)?)
}
