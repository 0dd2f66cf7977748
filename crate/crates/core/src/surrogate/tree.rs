use std::cmp::Ordering;
use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{LabeledSet, SplitCriterion, SurrogateError, TreeParams};
use crate::rational::{self, int, Rational};
use crate::schema::{DatasetSchema, FeatureKind, Instance, Prediction};

/// Condition on the edge from a node to one of its children.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum EdgeCond {
    Le {
        feature: usize,
        #[serde(with = "rational::serde_rational")]
        threshold: Rational,
    },
    Gt {
        feature: usize,
        #[serde(with = "rational::serde_rational")]
        threshold: Rational,
    },
    Eq {
        feature: usize,
        #[serde(with = "rational::serde_rational")]
        threshold: Rational,
    },
    Ne {
        feature: usize,
        #[serde(with = "rational::serde_rational")]
        threshold: Rational,
    },
}

impl EdgeCond {
    pub fn feature(&self) -> usize {
        match self {
            EdgeCond::Le { feature, .. }
            | EdgeCond::Gt { feature, .. }
            | EdgeCond::Eq { feature, .. }
            | EdgeCond::Ne { feature, .. } => *feature,
        }
    }

    pub fn threshold(&self) -> &Rational {
        match self {
            EdgeCond::Le { threshold, .. }
            | EdgeCond::Gt { threshold, .. }
            | EdgeCond::Eq { threshold, .. }
            | EdgeCond::Ne { threshold, .. } => threshold,
        }
    }

    pub fn holds(&self, x: &Instance) -> bool {
        let v = &x.0[self.feature()];
        match self {
            EdgeCond::Le { threshold, .. } => v <= threshold,
            EdgeCond::Gt { threshold, .. } => v > threshold,
            EdgeCond::Eq { threshold, .. } => v == threshold,
            EdgeCond::Ne { threshold, .. } => v != threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    /// Depth; the root is level 0.
    pub level: usize,
    /// 1-based position among the nodes of the same level.
    pub index: usize,
    pub parent: Option<usize>,
    /// Condition on the edge from the parent; `None` only for the root.
    pub edge: Option<EdgeCond>,
    pub children: Vec<usize>,
    /// Set exactly on leaves.
    pub prediction: Option<Prediction>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Nodes in breadth-first order; `nodes[0]` is the root.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

impl DecisionTree {
    pub fn leaf(prediction: Prediction) -> Self {
        Self {
            nodes: vec![TreeNode {
                level: 0,
                index: 1,
                parent: None,
                edge: None,
                children: vec![],
                prediction: Some(prediction),
            }],
        }
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.level).max().unwrap_or(0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    /// Index of the leaf reached by `x`.
    pub fn leaf_for(&self, x: &Instance) -> usize {
        let mut at = 0;
        while !self.nodes[at].is_leaf() {
            at = *self.nodes[at]
                .children
                .iter()
                .find(|&&c| self.nodes[c].edge.as_ref().is_some_and(|e| e.holds(x)))
                .expect("sibling conditions are exhaustive");
        }
        at
    }

    /// Builds a tree from nested splits; children are listed left to right.
    pub fn from_split(root: Split) -> Self {
        let mut nodes: Vec<TreeNode> = Vec::new();
        let mut queue: VecDeque<(Split, Option<usize>, Option<EdgeCond>, usize)> = VecDeque::new();
        queue.push_back((root, None, None, 0));
        let mut per_level: Vec<usize> = Vec::new();
        while let Some((split, parent, edge, level)) = queue.pop_front() {
            if per_level.len() <= level {
                per_level.push(0);
            }
            per_level[level] += 1;
            let id = nodes.len();
            if let Some(p) = parent {
                nodes[p].children.push(id);
            }
            let prediction = match split {
                Split::Leaf(z) => Some(z),
                Split::Node(children) => {
                    for (cond, child) in children {
                        queue.push_back((child, Some(id), Some(cond), level + 1));
                    }
                    None
                }
            };
            nodes.push(TreeNode { level, index: per_level[level], parent, edge, children: vec![], prediction });
        }
        Self { nodes }
    }
}

/// Nested tree form used while building.
#[derive(Clone, Debug)]
pub enum Split {
    Leaf(Prediction),
    Node(Vec<(EdgeCond, Split)>),
}

pub fn dt_predict(tree: &DecisionTree, x: &Instance) -> Prediction {
    let leaf = tree.leaf_for(x);
    tree.nodes[leaf].prediction.clone().expect("leaves carry predictions")
}

struct Trainer<'a> {
    schema: &'a DatasetSchema,
    params: &'a TreeParams,
    values: Vec<&'a [Rational]>,
    approx: Vec<Vec<f64>>,
    /// Per row, per label: index of the class in the label's class list.
    classes: Vec<Vec<usize>>,
}

struct Candidate {
    cond: EdgeCond,
    left: Vec<usize>,
    right: Vec<usize>,
}

const EPS: f64 = 1e-12;

impl Trainer<'_> {
    fn counts(&self, rows: &[usize]) -> Vec<Vec<usize>> {
        let mut counts: Vec<Vec<usize>> = self.schema.labels.iter().map(|l| vec![0; l.classes.len()]).collect();
        for &r in rows {
            for (l, &c) in self.classes[r].iter().enumerate() {
                counts[l][c] += 1;
            }
        }
        counts
    }

    fn impurity(&self, counts: &[Vec<usize>], n: usize) -> f64 {
        if n == 0 {
            return 0.0;
        }
        let n = n as f64;
        counts
            .iter()
            .map(|label| match self.params.criterion {
                SplitCriterion::Gini => 1.0 - label.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>(),
                SplitCriterion::Entropy => label
                    .iter()
                    .filter(|&&c| c > 0)
                    .map(|&c| {
                        let p = c as f64 / n;
                        -p * p.log2()
                    })
                    .sum(),
            })
            .sum()
    }

    fn majority(&self, counts: &[Vec<usize>]) -> Prediction {
        let codes = counts
            .iter()
            .zip(&self.schema.labels)
            .map(|(label_counts, spec)| {
                let mut best = 0;
                for c in 1..label_counts.len() {
                    let better = label_counts[c] > label_counts[best]
                        || (label_counts[c] == label_counts[best] && spec.classes[c] < spec.classes[best]);
                    if better {
                        best = c;
                    }
                }
                spec.classes[best]
            })
            .collect();
        Prediction(codes)
    }

    fn weighted(&self, left: &[Vec<usize>], nl: usize, right: &[Vec<usize>], nr: usize) -> f64 {
        let n = (nl + nr) as f64;
        (nl as f64 * self.impurity(left, nl) + nr as f64 * self.impurity(right, nr)) / n
    }

    fn cmp_rows(&self, f: usize, a: usize, b: usize) -> Ordering {
        self.approx[a][f]
            .partial_cmp(&self.approx[b][f])
            .filter(|o| o.is_ne())
            .unwrap_or_else(|| self.values[a][f].cmp(&self.values[b][f]))
    }

    fn best_split(&self, rows: &[usize], totals: &[Vec<usize>]) -> Option<Candidate> {
        let n = rows.len();
        let mut best: Option<(f64, usize, EdgeCond)> = None;
        let consider = |imp: f64, f: usize, cond: EdgeCond, best: &mut Option<(f64, usize, EdgeCond)>| {
            if best.as_ref().is_none_or(|(b, _, _)| imp < b - EPS) {
                *best = Some((imp, f, cond));
            }
        };
        for (f, spec) in self.schema.features.iter().enumerate() {
            if spec.kind == FeatureKind::Categorical {
                let mut seen: Vec<&Rational> = rows.iter().map(|&r| &self.values[r][f]).collect();
                seen.sort();
                seen.dedup();
                if seen.len() < 2 {
                    continue;
                }
                for v in seen {
                    let inside: Vec<usize> = rows.iter().copied().filter(|&r| &self.values[r][f] == v).collect();
                    let outside: Vec<usize> = rows.iter().copied().filter(|&r| &self.values[r][f] != v).collect();
                    let imp = self.weighted(&self.counts(&inside), inside.len(), &self.counts(&outside), outside.len());
                    consider(imp, f, EdgeCond::Eq { feature: f, threshold: v.clone() }, &mut best);
                }
            } else {
                let mut sorted = rows.to_vec();
                sorted.sort_by(|&a, &b| self.cmp_rows(f, a, b));
                let mut left: Vec<Vec<usize>> = totals.iter().map(|l| vec![0; l.len()]).collect();
                let mut right = totals.to_vec();
                for i in 0..n - 1 {
                    for (l, &c) in self.classes[sorted[i]].iter().enumerate() {
                        left[l][c] += 1;
                        right[l][c] -= 1;
                    }
                    let (a, b) = (&self.values[sorted[i]][f], &self.values[sorted[i + 1]][f]);
                    if a == b {
                        continue;
                    }
                    let imp = self.weighted(&left, i + 1, &right, n - i - 1);
                    if best.as_ref().is_none_or(|(bi, _, _)| imp < bi - EPS) {
                        let threshold = (a + b) / int(2);
                        consider(imp, f, EdgeCond::Le { feature: f, threshold }, &mut best);
                    }
                }
            }
        }
        let (_, _, cond) = best?;
        let (left, right): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&r| cond_holds_on(&cond, self.values[r]));
        Some(Candidate { cond, left, right })
    }

    fn build(&self, rows: &[usize], depth: usize) -> Split {
        let totals = self.counts(rows);
        let prediction = self.majority(&totals);
        let pure = totals.iter().all(|l| l.iter().filter(|&&c| c > 0).count() <= 1);
        if pure || depth >= self.params.max_depth || rows.len() < self.params.min_samples_split {
            return Split::Leaf(prediction);
        }
        let Some(cand) = self.best_split(rows, &totals) else {
            return Split::Leaf(prediction);
        };
        let sibling = match &cand.cond {
            EdgeCond::Le { feature, threshold } => EdgeCond::Gt { feature: *feature, threshold: threshold.clone() },
            EdgeCond::Eq { feature, threshold } => EdgeCond::Ne { feature: *feature, threshold: threshold.clone() },
            other => unreachable!("split conditions are <= or ==, got {other:?}"),
        };
        let left = self.build(&cand.left, depth + 1);
        let right = self.build(&cand.right, depth + 1);
        Split::Node(vec![(cand.cond, left), (sibling, right)])
    }
}

fn cond_holds_on(cond: &EdgeCond, values: &[Rational]) -> bool {
    let v = &values[cond.feature()];
    match cond {
        EdgeCond::Le { threshold, .. } => v <= threshold,
        EdgeCond::Gt { threshold, .. } => v > threshold,
        EdgeCond::Eq { threshold, .. } => v == threshold,
        EdgeCond::Ne { threshold, .. } => v != threshold,
    }
}

/// Greedy CART: binary `<=`/`>` splits at midpoints for numeric features,
/// `==`/`!=` splits for categorical ones.
pub fn train_decision_tree(
    data: &LabeledSet,
    schema: &DatasetSchema,
    params: &TreeParams,
) -> Result<DecisionTree, SurrogateError> {
    if data.is_empty() {
        return Err(SurrogateError::EmptyData);
    }
    if params.max_depth == 0 || params.min_samples_split < 2 {
        return Err(SurrogateError::Params("max_depth must be positive and min_samples_split at least 2".into()));
    }
    let mut classes = Vec::with_capacity(data.len());
    for (_, z) in data.rows() {
        let idx = z
            .0
            .iter()
            .zip(&schema.labels)
            .map(|(code, spec)| spec.classes.iter().position(|c| c == code))
            .collect::<Option<Vec<_>>>()
            .filter(|v| v.len() == schema.l_size())
            .ok_or_else(|| SurrogateError::Params(format!("prediction {:?} does not fit the schema", z.0)))?;
        classes.push(idx);
    }
    let trainer = Trainer {
        schema,
        params,
        values: data.rows().iter().map(|(x, _)| x.values()).collect(),
        approx: data.rows().iter().map(|(x, _)| x.to_f64()).collect(),
        classes,
    };
    let rows: Vec<usize> = (0..data.len()).collect();
    Ok(DecisionTree::from_split(trainer.build(&rows, 0)))
}
