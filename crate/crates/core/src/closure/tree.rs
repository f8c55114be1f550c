//! Axis-aligned regression trees with leaf values in `[0,1]^d`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::population::{Population, Predictor};

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf(Vec<f64>),
    /// `x[coord] <= threshold` goes left.
    Split {
        coord: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    pub fn split(coord: usize, threshold: f64, left: Node, right: Node) -> Node {
        Node::Split {
            coord,
            threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    fn depth(&self) -> usize {
        match self {
            Node::Leaf(_) => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    fn route(&self, x: &[f64]) -> &[f64] {
        let mut node = self;
        loop {
            match node {
                Node::Leaf(v) => return v,
                Node::Split {
                    coord,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*coord] <= *threshold { left } else { right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TreeDoc", into = "TreeDoc")]
pub struct RegressionTree {
    root: Node,
    feature_dim: usize,
    label_dim: usize,
    depth: usize,
}

impl RegressionTree {
    pub fn new(root: Node, feature_dim: usize) -> Result<Self> {
        let label_dim = first_leaf(&root).len();
        if label_dim == 0 {
            return Err(Error::InvalidArgument(
                "tree leaves must have at least one output".into(),
            ));
        }
        validate(&root, feature_dim, label_dim)?;
        let depth = root.depth();
        Ok(RegressionTree {
            root,
            feature_dim,
            label_dim,
            depth,
        })
    }

    pub fn leaf(value: Vec<f64>, feature_dim: usize) -> Result<Self> {
        RegressionTree::new(Node::Leaf(value), feature_dim)
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn label_dim(&self) -> usize {
        self.label_dim
    }

    pub fn leaves(&self) -> usize {
        fn count(n: &Node) -> usize {
            match n {
                Node::Leaf(_) => 1,
                Node::Split { left, right, .. } => count(left) + count(right),
            }
        }
        count(&self.root)
    }

    pub fn eval(&self, x: &[f64]) -> Result<&[f64]> {
        check_dim("tree input", self.feature_dim, x.len())?;
        Ok(self.root.route(x))
    }

    pub fn compile(&self, pop: &Population) -> Result<Predictor> {
        check_dim("tree input", self.feature_dim, pop.feature_dim())?;
        Predictor::from_fn(pop, self.label_dim, |x| self.root.route(x).to_vec())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn tree_eval<'a>(tree: &'a RegressionTree, x: &[f64]) -> Result<&'a [f64]> {
    tree.eval(x)
}

/// Grafts a copy of `t2` below every leaf of `t1`; each new leaf carries the
/// average of the two leaf values it combines.
pub fn tree_midpoint(t1: &RegressionTree, t2: &RegressionTree) -> Result<RegressionTree> {
    check_dim("tree feature dimension", t1.feature_dim, t2.feature_dim)?;
    check_dim("tree label dimension", t1.label_dim, t2.label_dim)?;
    fn average_into(n: &Node, a: &[f64]) -> Node {
        match n {
            Node::Leaf(b) => Node::Leaf(a.iter().zip(b).map(|(u, v)| 0.5 * (u + v)).collect()),
            Node::Split {
                coord,
                threshold,
                left,
                right,
            } => Node::split(
                *coord,
                *threshold,
                average_into(left, a),
                average_into(right, a),
            ),
        }
    }
    fn graft(n: &Node, other: &Node) -> Node {
        match n {
            Node::Leaf(a) => average_into(other, a),
            Node::Split {
                coord,
                threshold,
                left,
                right,
            } => Node::split(*coord, *threshold, graft(left, other), graft(right, other)),
        }
    }
    RegressionTree::new(graft(&t1.root, &t2.root), t1.feature_dim)
}

fn first_leaf(n: &Node) -> &[f64] {
    match n {
        Node::Leaf(v) => v,
        Node::Split { left, .. } => first_leaf(left),
    }
}

fn validate(n: &Node, feature_dim: usize, label_dim: usize) -> Result<()> {
    match n {
        Node::Leaf(v) => {
            check_dim("leaf value", label_dim, v.len())?;
            if let Some(bad) = v.iter().find(|c| !(0.0..=1.0).contains(*c)) {
                return Err(Error::InvalidArgument(format!(
                    "leaf value {bad} outside [0,1]"
                )));
            }
            Ok(())
        }
        Node::Split {
            coord,
            threshold,
            left,
            right,
        } => {
            if *coord >= feature_dim {
                return Err(Error::InvalidArgument(format!(
                    "split coordinate {coord} out of range for feature dimension {feature_dim}"
                )));
            }
            if !threshold.is_finite() {
                return Err(Error::InvalidArgument(
                    "split threshold must be finite".into(),
                ));
            }
            validate(left, feature_dim, label_dim)?;
            validate(right, feature_dim, label_dim)
        }
    }
}

/// Flat preorder form used on disk: a split at index `i` has its left child at
/// `i + 1` and names its right child explicitly.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TreeDoc {
    feature_dim: usize,
    depth: usize,
    nodes: Vec<NodeDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum NodeDoc {
    Leaf {
        index: usize,
        value: Vec<f64>,
    },
    Split {
        index: usize,
        coord: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

impl From<RegressionTree> for TreeDoc {
    fn from(t: RegressionTree) -> TreeDoc {
        fn walk(n: &Node, out: &mut Vec<NodeDoc>) {
            let index = out.len();
            match n {
                Node::Leaf(v) => out.push(NodeDoc::Leaf {
                    index,
                    value: v.clone(),
                }),
                Node::Split {
                    coord,
                    threshold,
                    left,
                    right,
                } => {
                    out.push(NodeDoc::Split {
                        index,
                        coord: *coord,
                        threshold: *threshold,
                        left: index + 1,
                        right: 0,
                    });
                    walk(left, out);
                    let r = out.len();
                    if let NodeDoc::Split { right, .. } = &mut out[index] {
                        *right = r;
                    }
                    walk(right, out);
                }
            }
        }
        let mut nodes = Vec::new();
        walk(&t.root, &mut nodes);
        TreeDoc {
            feature_dim: t.feature_dim,
            depth: t.depth,
            nodes,
        }
    }
}

impl TryFrom<TreeDoc> for RegressionTree {
    type Error = Error;

    fn try_from(doc: TreeDoc) -> Result<Self> {
        fn build(nodes: &[NodeDoc], i: usize, next: &mut usize) -> Result<Node> {
            let bad = |msg: String| Error::InvalidArgument(format!("tree document: {msg}"));
            let node = nodes
                .get(i)
                .ok_or_else(|| bad(format!("missing node {i}")))?;
            *next = i + 1;
            match node {
                NodeDoc::Leaf { index, value } => {
                    if *index != i {
                        return Err(bad(format!("node at position {i} has index {index}")));
                    }
                    Ok(Node::Leaf(value.clone()))
                }
                NodeDoc::Split {
                    index,
                    coord,
                    threshold,
                    left,
                    right,
                } => {
                    if *index != i {
                        return Err(bad(format!("node at position {i} has index {index}")));
                    }
                    if *left != i + 1 {
                        return Err(bad(format!(
                            "split {i} has left child {left}, expected {}",
                            i + 1
                        )));
                    }
                    let l = build(nodes, *left, next)?;
                    if *right != *next {
                        return Err(bad(format!(
                            "split {i} has right child {right}, expected {next}"
                        )));
                    }
                    let r = build(nodes, *right, next)?;
                    Ok(Node::split(*coord, *threshold, l, r))
                }
            }
        }
        let mut next = 0;
        let root = build(&doc.nodes, 0, &mut next)?;
        if next != doc.nodes.len() {
            return Err(Error::InvalidArgument(format!(
                "tree document: {} nodes listed, {next} reachable",
                doc.nodes.len()
            )));
        }
        let tree = RegressionTree::new(root, doc.feature_dim)?;
        if tree.depth != doc.depth {
            return Err(Error::InvalidArgument(format!(
                "tree document: declared depth {} but tree has depth {}",
                doc.depth, tree.depth
            )));
        }
        Ok(tree)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stump(theta: f64, a: f64, b: f64) -> RegressionTree {
        RegressionTree::new(
            Node::split(0, theta, Node::Leaf(vec![a]), Node::Leaf(vec![b])),
            1,
        )
        .unwrap()
    }

    #[test]
    fn single_leaf_is_constant() {
        let t = RegressionTree::leaf(vec![0.3, 0.7], 2).unwrap();
        let pop = Population::uniform(vec![
            (vec![0.0, 5.0], vec![0.0, 0.0]),
            (vec![1.0, -2.0], vec![1.0, 1.0]),
        ])
        .unwrap();
        let f = t.compile(&pop).unwrap();
        assert_eq!(f.values(), &[0.3, 0.7, 0.3, 0.7]);
        assert_eq!(t.depth(), 0);
    }

    #[test]
    fn ties_route_left() {
        let t = stump(0.5, 0.0, 1.0);
        assert_eq!(t.eval(&[0.5]).unwrap(), &[0.0]);
        assert_eq!(t.eval(&[0.5000001]).unwrap(), &[1.0]);
    }

    #[test]
    fn rejects_out_of_range_leaves_and_coords() {
        assert!(RegressionTree::leaf(vec![1.5], 1).is_err());
        assert!(RegressionTree::new(
            Node::split(2, 0.0, Node::Leaf(vec![0.0]), Node::Leaf(vec![0.0])),
            2
        )
        .is_err());
        assert!(RegressionTree::new(
            Node::split(0, 0.0, Node::Leaf(vec![0.0]), Node::Leaf(vec![0.0, 1.0])),
            1
        )
        .is_err());
    }

    #[test]
    fn midpoint_depth_and_values() {
        let t1 = stump(0.5, 0.0, 1.0);
        let t2 = stump(0.25, 1.0, 0.5);
        let m = tree_midpoint(&t1, &t2).unwrap();
        assert_eq!(m.depth(), 2);
        for x in [-1.0, 0.2, 0.25, 0.3, 0.5, 0.7] {
            let want = 0.5 * (t1.eval(&[x]).unwrap()[0] + t2.eval(&[x]).unwrap()[0]);
            assert_eq!(m.eval(&[x]).unwrap()[0], want);
        }
    }

    #[test]
    fn json_round_trip_is_preorder() {
        let inner = Node::split(0, 0.25, Node::Leaf(vec![0.1]), Node::Leaf(vec![0.2]));
        let t = RegressionTree::new(Node::split(1, 3.0, inner, Node::Leaf(vec![0.9])), 2).unwrap();
        let text = t.to_json();
        let back = RegressionTree::from_json(&text).unwrap();
        assert_eq!(back, t);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let rights: Vec<_> = v["nodes"]
            .as_array()
            .unwrap()
            .iter()
            .filter_map(|n| n.get("right"))
            .collect();
        assert_eq!(rights, vec![&serde_json::json!(4), &serde_json::json!(3)]);
    }

    #[test]
    fn json_rejects_dangling_nodes() {
        let text = r#"{"feature_dim":1,"depth":0,"nodes":[
            {"kind":"leaf","index":0,"value":[0.5]},
            {"kind":"leaf","index":1,"value":[0.5]}]}"#;
        assert!(RegressionTree::from_json(text).is_err());
    }
}
