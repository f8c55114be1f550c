//! ReLU networks on arbitrary acyclic graphs.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::population::{Population, Predictor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Input(usize),
    Node(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: Source,
    pub weight: f64,
}

/// `bias + Σ weight · value(from)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Affine {
    pub edges: Vec<Edge>,
    pub bias: f64,
}

/// Internal nodes compute `relu(affine)`; each output coordinate is an affine
/// read-out of inputs and internal nodes. Size is the internal-node count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkDoc", into = "NetworkDoc")]
pub struct ReluNetwork {
    input_dim: usize,
    nodes: Vec<Affine>,
    outputs: Vec<Affine>,
    order: Vec<usize>,
}

impl ReluNetwork {
    pub fn new(input_dim: usize, nodes: Vec<Affine>, outputs: Vec<Affine>) -> Result<Self> {
        if outputs.is_empty() {
            return Err(Error::InvalidArgument(
                "network needs at least one output".into(),
            ));
        }
        let n = nodes.len();
        for a in nodes.iter().chain(&outputs) {
            if !a.bias.is_finite() {
                return Err(Error::InvalidArgument("non-finite bias".into()));
            }
            for e in &a.edges {
                if !e.weight.is_finite() {
                    return Err(Error::InvalidArgument("non-finite edge weight".into()));
                }
                match e.from {
                    Source::Input(i) if i >= input_dim => {
                        return Err(Error::InvalidArgument(format!(
                            "edge from input {i} of {input_dim}"
                        )))
                    }
                    Source::Node(j) if j >= n => {
                        return Err(Error::InvalidArgument(format!("edge from node {j} of {n}")))
                    }
                    _ => {}
                }
            }
        }
        let order = topological_order(&nodes)?;
        Ok(ReluNetwork {
            input_dim,
            nodes,
            outputs,
            order,
        })
    }

    pub fn size(&self) -> usize {
        self.nodes.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.len()
    }

    pub fn nodes(&self) -> &[Affine] {
        &self.nodes
    }

    pub fn outputs(&self) -> &[Affine] {
        &self.outputs
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("network input", self.input_dim, x.len())?;
        Ok(self.eval_unchecked(x))
    }

    fn eval_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; self.nodes.len()];
        let apply = |a: &Affine, h: &[f64]| {
            a.edges.iter().fold(a.bias, |acc, e| {
                acc + e.weight
                    * match e.from {
                        Source::Input(i) => x[i],
                        Source::Node(j) => h[j],
                    }
            })
        };
        for &j in &self.order {
            h[j] = apply(&self.nodes[j], &h).max(0.0);
        }
        self.outputs.iter().map(|o| apply(o, &h)).collect()
    }

    pub fn compile(&self, pop: &Population) -> Result<Predictor> {
        check_dim("network input", self.input_dim, pop.feature_dim())?;
        Predictor::from_fn(pop, self.outputs.len(), |x| self.eval_unchecked(x))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn nn_eval(net: &ReluNetwork, x: &[f64]) -> Result<Vec<f64>> {
    net.eval(x)
}

/// Kahn's algorithm with a min-index queue, so the order is canonical.
fn topological_order(nodes: &[Affine]) -> Result<Vec<usize>> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;
    let n = nodes.len();
    let mut indeg = vec![0usize; n];
    let mut succ = vec![Vec::new(); n];
    for (j, a) in nodes.iter().enumerate() {
        for e in &a.edges {
            if let Source::Node(i) = e.from {
                indeg[j] += 1;
                succ[i].push(j);
            }
        }
    }
    let mut ready: BinaryHeap<Reverse<usize>> =
        (0..n).filter(|&j| indeg[j] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(i)) = ready.pop() {
        order.push(i);
        for &j in &succ[i] {
            indeg[j] -= 1;
            if indeg[j] == 0 {
                ready.push(Reverse(j));
            }
        }
    }
    if order.len() == n {
        return Ok(order);
    }
    // every leftover node has a leftover predecessor; walking back n steps lands on a cycle
    let mut at = (0..n).find(|&j| indeg[j] > 0).expect("leftover node");
    for _ in 0..n {
        at = nodes[at]
            .edges
            .iter()
            .find_map(|e| match e.from {
                Source::Node(i) if indeg[i] > 0 => Some(i),
                _ => None,
            })
            .expect("leftover predecessor");
    }
    Err(Error::Cycle(at))
}

/// Disjoint union of the two graphs with an output that averages both read-outs.
pub fn nn_midpoint(n1: &ReluNetwork, n2: &ReluNetwork) -> Result<ReluNetwork> {
    check_dim("network input dimension", n1.input_dim, n2.input_dim)?;
    check_dim(
        "network output dimension",
        n1.outputs.len(),
        n2.outputs.len(),
    )?;
    let shift = n1.nodes.len();
    let moved = |a: &Affine| Affine {
        edges: a
            .edges
            .iter()
            .map(|e| Edge {
                from: match e.from {
                    Source::Node(j) => Source::Node(j + shift),
                    s => s,
                },
                weight: e.weight,
            })
            .collect(),
        bias: a.bias,
    };
    let halve = |a: Affine| Affine {
        edges: a
            .edges
            .into_iter()
            .map(|e| Edge {
                from: e.from,
                weight: 0.5 * e.weight,
            })
            .collect(),
        bias: 0.5 * a.bias,
    };
    let nodes: Vec<Affine> = n1
        .nodes
        .iter()
        .cloned()
        .chain(n2.nodes.iter().map(moved))
        .collect();
    let outputs = n1
        .outputs
        .iter()
        .zip(&n2.outputs)
        .map(|(a, b)| {
            let (a, b) = (halve(a.clone()), halve(moved(b)));
            Affine {
                edges: a.edges.into_iter().chain(b.edges).collect(),
                bias: a.bias + b.bias,
            }
        })
        .collect();
    ReluNetwork::new(n1.input_dim, nodes, outputs)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NodeDoc {
    index: usize,
    #[serde(flatten)]
    affine: Affine,
}

/// On-disk form: nodes listed in topological order, each with its index.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetworkDoc {
    input_dim: usize,
    nodes: Vec<NodeDoc>,
    outputs: Vec<Affine>,
}

impl From<ReluNetwork> for NetworkDoc {
    fn from(net: ReluNetwork) -> NetworkDoc {
        let nodes = net
            .order
            .iter()
            .map(|&j| NodeDoc {
                index: j,
                affine: net.nodes[j].clone(),
            })
            .collect();
        NetworkDoc {
            input_dim: net.input_dim,
            nodes,
            outputs: net.outputs,
        }
    }
}

impl TryFrom<NetworkDoc> for ReluNetwork {
    type Error = Error;

    fn try_from(doc: NetworkDoc) -> Result<Self> {
        let n = doc.nodes.len();
        let mut slots: Vec<Option<Affine>> = vec![None; n];
        for d in doc.nodes {
            let slot = slots.get_mut(d.index).ok_or_else(|| {
                Error::InvalidArgument(format!("network document: node index {} of {n}", d.index))
            })?;
            if slot.replace(d.affine).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "network document: duplicate node index {}",
                    d.index
                )));
            }
        }
        let nodes = slots
            .into_iter()
            .map(|s| s.expect("all indices filled"))
            .collect();
        ReluNetwork::new(doc.input_dim, nodes, doc.outputs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edge(from: Source, weight: f64) -> Edge {
        Edge { from, weight }
    }

    #[test]
    fn zero_weights_give_output_bias() {
        let net = ReluNetwork::new(
            2,
            vec![Affine {
                edges: vec![edge(Source::Input(0), 0.0)],
                bias: 0.0,
            }],
            vec![Affine {
                edges: vec![edge(Source::Node(0), 0.0)],
                bias: 1.25,
            }],
        )
        .unwrap();
        assert_eq!(net.eval(&[3.0, -4.0]).unwrap(), vec![1.25]);
    }

    #[test]
    fn single_unit_is_relu() {
        let net = ReluNetwork::new(
            1,
            vec![Affine {
                edges: vec![edge(Source::Input(0), 1.0)],
                bias: 0.0,
            }],
            vec![Affine {
                edges: vec![edge(Source::Node(0), 1.0)],
                bias: 0.0,
            }],
        )
        .unwrap();
        for x in [-2.0, -0.0, 0.5, 3.0] {
            assert_eq!(net.eval(&[x]).unwrap()[0], f64::max(0.0, x));
        }
    }

    #[test]
    fn cycles_are_rejected() {
        let nodes = vec![
            Affine {
                edges: vec![edge(Source::Input(0), 1.0)],
                bias: 0.0,
            },
            Affine {
                edges: vec![edge(Source::Node(2), 1.0), edge(Source::Node(0), 1.0)],
                bias: 0.0,
            },
            Affine {
                edges: vec![edge(Source::Node(1), 1.0)],
                bias: 0.0,
            },
            Affine {
                edges: vec![edge(Source::Node(2), 1.0)],
                bias: 0.0,
            },
        ];
        match ReluNetwork::new(1, nodes, vec![Affine::default()]) {
            Err(Error::Cycle(j)) => assert!(j == 1 || j == 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_range_sources_are_rejected() {
        let bad = vec![Affine {
            edges: vec![edge(Source::Input(3), 1.0)],
            bias: 0.0,
        }];
        assert!(ReluNetwork::new(2, bad, vec![Affine::default()]).is_err());
    }

    #[test]
    fn midpoint_sizes_add() {
        let unit = |w: f64| Affine {
            edges: vec![edge(Source::Input(0), w)],
            bias: 0.1,
        };
        let n1 = ReluNetwork::new(
            1,
            vec![unit(1.0); 3],
            vec![Affine {
                edges: vec![edge(Source::Node(2), 1.0)],
                bias: 0.0,
            }],
        )
        .unwrap();
        let n2 = ReluNetwork::new(
            1,
            vec![unit(-1.0); 5],
            vec![Affine {
                edges: vec![edge(Source::Node(4), 2.0)],
                bias: 1.0,
            }],
        )
        .unwrap();
        let m = nn_midpoint(&n1, &n2).unwrap();
        assert_eq!(m.size(), 8);
        for x in [-1.0, 0.0, 0.7] {
            let want = 0.5 * (n1.eval(&[x]).unwrap()[0] + n2.eval(&[x]).unwrap()[0]);
            assert!((m.eval(&[x]).unwrap()[0] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn midpoint_rejects_dimension_mismatch() {
        let a = ReluNetwork::new(1, vec![], vec![Affine::default()]).unwrap();
        let b = ReluNetwork::new(2, vec![], vec![Affine::default()]).unwrap();
        assert!(nn_midpoint(&a, &b).is_err());
    }

    #[test]
    fn json_lists_nodes_topologically() {
        let nodes = vec![
            Affine {
                edges: vec![edge(Source::Node(1), 1.0)],
                bias: 0.0,
            },
            Affine {
                edges: vec![edge(Source::Input(0), -1.0)],
                bias: 0.5,
            },
        ];
        let net = ReluNetwork::new(
            1,
            nodes,
            vec![Affine {
                edges: vec![edge(Source::Node(0), 1.0)],
                bias: 0.0,
            }],
        )
        .unwrap();
        let text = net.to_json();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["nodes"][0]["index"], 1);
        assert_eq!(ReluNetwork::from_json(&text).unwrap(), net);
    }
}
