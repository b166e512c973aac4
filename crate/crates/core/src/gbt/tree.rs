//! Regression trees grown leaf-wise on second-order gradient statistics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Binary tree in a flat arena; node 0 is the root. Rows go left when
/// `x[feature] <= threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "NestedNode", try_from = "NestedNode")]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Tree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }

    pub(crate) fn scale_leaves(&mut self, factor: f64) {
        for n in &mut self.nodes {
            if let Node::Leaf { value } = n {
                *value *= factor;
            }
        }
    }

    pub(crate) fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .max()
    }

    pub(crate) fn all_finite(&self) -> bool {
        self.nodes.iter().all(|n| match n {
            Node::Leaf { value } => value.is_finite(),
            Node::Split { threshold, .. } => !threshold.is_nan(),
        })
    }
}

/// Serialized form: splits carry their children inline.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum NestedNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<NestedNode>,
        right: Box<NestedNode>,
    },
    Leaf {
        value: f64,
    },
}

impl From<Tree> for NestedNode {
    fn from(tree: Tree) -> Self {
        fn build(nodes: &[Node], i: usize) -> NestedNode {
            match nodes[i] {
                Node::Leaf { value } => NestedNode::Leaf { value },
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => NestedNode::Split {
                    feature,
                    threshold,
                    left: Box::new(build(nodes, left)),
                    right: Box::new(build(nodes, right)),
                },
            }
        }
        build(&tree.nodes, 0)
    }
}

impl TryFrom<NestedNode> for Tree {
    type Error = String;

    fn try_from(root: NestedNode) -> Result<Self, Self::Error> {
        fn flatten(node: NestedNode, out: &mut Vec<Node>) -> usize {
            let at = out.len();
            match node {
                NestedNode::Leaf { value } => out.push(Node::Leaf { value }),
                NestedNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    out.push(Node::Leaf { value: 0.0 });
                    let l = flatten(*left, out);
                    let r = flatten(*right, out);
                    out[at] = Node::Split {
                        feature,
                        threshold,
                        left: l,
                        right: r,
                    };
                }
            }
            at
        }
        let mut nodes = Vec::new();
        flatten(root, &mut nodes);
        Ok(Tree { nodes })
    }
}

/// Quantized copy of the training matrix, stored column-major.
pub(crate) struct BinnedMatrix {
    n_rows: usize,
    bins: Vec<u8>,
    /// Per feature, ascending cut points; bin `b` holds values in
    /// `(thresholds[b-1], thresholds[b]]`.
    thresholds: Vec<Vec<f64>>,
}

impl BinnedMatrix {
    /// `x` is row-major `n_rows × n_features`. Features with at most
    /// `max_bins` distinct values get one bin per value; others are cut at
    /// quantiles.
    pub(crate) fn build(x: &[f64], n_rows: usize, n_features: usize, max_bins: usize) -> Self {
        let max_bins = max_bins.clamp(2, 256);
        let per_feature: Vec<(Vec<f64>, Vec<u8>)> = (0..n_features)
            .into_par_iter()
            .map(|f| {
                let column: Vec<f64> = (0..n_rows).map(|r| x[r * n_features + f]).collect();
                let mut sorted = column.clone();
                sorted.sort_by(f64::total_cmp);
                let mut distinct = sorted.clone();
                distinct.dedup();
                let thresholds: Vec<f64> = if distinct.len() <= max_bins {
                    distinct.windows(2).map(|w| midpoint(w[0], w[1])).collect()
                } else {
                    let mut cuts: Vec<f64> = (1..max_bins)
                        .filter_map(|q| {
                            let v = sorted[q * n_rows / max_bins];
                            let k = distinct.partition_point(|d| *d < v);
                            (k > 0).then(|| midpoint(distinct[k - 1], v))
                        })
                        .collect();
                    cuts.dedup();
                    cuts
                };
                let bins = column
                    .iter()
                    .map(|v| thresholds.partition_point(|t| t < v) as u8)
                    .collect();
                (thresholds, bins)
            })
            .collect();
        let mut bins = Vec::with_capacity(n_rows * n_features);
        let mut thresholds = Vec::with_capacity(n_features);
        for (t, b) in per_feature {
            thresholds.push(t);
            bins.extend(b);
        }
        BinnedMatrix {
            n_rows,
            bins,
            thresholds,
        }
    }

    fn column(&self, f: usize) -> &[u8] {
        &self.bins[f * self.n_rows..(f + 1) * self.n_rows]
    }

    fn n_bins(&self, f: usize) -> usize {
        self.thresholds[f].len() + 1
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    a + (b - a) / 2.0
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GrowParams {
    pub max_leaves: usize,
    pub min_samples_leaf: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    bin: usize,
}

struct Leaf {
    node: usize,
    rows: Vec<u32>,
    best: Option<Candidate>,
}

fn leaf_value(g: f64, h: f64, lambda: f64) -> f64 {
    -g / (h + lambda)
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

fn best_split(
    data: &BinnedMatrix,
    rows: &[u32],
    grad: &[f64],
    hess: &[f64],
    features: &[usize],
    g_total: f64,
    h_total: f64,
    p: &GrowParams,
) -> Option<Candidate> {
    if rows.len() < 2 * p.min_samples_leaf {
        return None;
    }
    let parent = score(g_total, h_total, p.lambda);
    let per_feature: Vec<Option<Candidate>> = features
        .par_iter()
        .map(|&f| {
            let nb = data.n_bins(f);
            if nb < 2 {
                return None;
            }
            let col = data.column(f);
            let mut hist = vec![(0.0f64, 0.0f64, 0usize); nb];
            for &r in rows {
                let r = r as usize;
                let cell = &mut hist[col[r] as usize];
                cell.0 += grad[r];
                cell.1 += hess[r];
                cell.2 += 1;
            }
            let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0usize);
            let mut best: Option<Candidate> = None;
            for (b, &(g, h, n)) in hist[..nb - 1].iter().enumerate() {
                gl += g;
                hl += h;
                nl += n;
                let nr = rows.len() - nl;
                if nl < p.min_samples_leaf {
                    continue;
                }
                if nr < p.min_samples_leaf {
                    break;
                }
                if n == 0 {
                    continue;
                }
                let gain = 0.5
                    * (score(gl, hl, p.lambda) + score(g_total - gl, h_total - hl, p.lambda) - parent);
                if best.is_none_or(|c| gain > c.gain) {
                    best = Some(Candidate { gain, feature: f, bin: b });
                }
            }
            best
        })
        .collect();
    per_feature
        .into_iter()
        .flatten()
        .fold(None, |acc: Option<Candidate>, c| match acc {
            Some(a) if a.gain >= c.gain => Some(a),
            _ => Some(c),
        })
        .filter(|c| c.gain > 0.0)
}

/// Grows one tree on `rows`, always splitting the leaf with the largest
/// gain until `max_leaves` is reached or no split has positive gain while
/// keeping `min_samples_leaf` rows on each side. Leaf values are the Newton
/// step `-G / (H + lambda)`.
pub(crate) fn grow_tree(
    data: &BinnedMatrix,
    rows: Vec<u32>,
    grad: &[f64],
    hess: &[f64],
    features: &[usize],
    p: &GrowParams,
) -> Tree {
    let sums = |rows: &[u32]| {
        rows.iter().fold((0.0, 0.0), |(g, h), &r| {
            (g + grad[r as usize], h + hess[r as usize])
        })
    };
    let (g, h) = sums(&rows);
    let mut nodes = vec![Node::Leaf {
        value: leaf_value(g, h, p.lambda),
    }];
    let best = best_split(data, &rows, grad, hess, features, g, h, p);
    let mut leaves = vec![Leaf {
        node: 0,
        rows,
        best,
    }];

    while leaves.len() < p.max_leaves {
        let Some(pick) = leaves
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.best.map(|c| (i, c.gain, l.node)))
            .fold(None, |acc: Option<(usize, f64, usize)>, cur| match acc {
                Some(a) if a.1 > cur.1 || (a.1 == cur.1 && a.2 < cur.2) => Some(a),
                _ => Some(cur),
            })
            .map(|(i, _, _)| i)
        else {
            break;
        };
        let leaf = leaves.swap_remove(pick);
        let split = leaf.best.expect("picked leaf has a candidate");
        let col = data.column(split.feature);
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = leaf
            .rows
            .iter()
            .partition(|&&r| usize::from(col[r as usize]) <= split.bin);

        let left_node = nodes.len();
        let right_node = left_node + 1;
        nodes[leaf.node] = Node::Split {
            feature: split.feature,
            threshold: data.thresholds[split.feature][split.bin],
            left: left_node,
            right: right_node,
        };
        for (node, child_rows) in [(left_node, left_rows), (right_node, right_rows)] {
            let (g, h) = sums(&child_rows);
            nodes.push(Node::Leaf {
                value: leaf_value(g, h, p.lambda),
            });
            let best = best_split(data, &child_rows, grad, hess, features, g, h, p);
            leaves.push(Leaf {
                node,
                rows: child_rows,
                best,
            });
        }
    }
    Tree { nodes }
}
