//! Depth-limited CART regression tree.
//!
//! Splits maximize the reduction in squared error over every midpoint of
//! consecutive distinct values. Ties in gain go to the lowest covariate index,
//! then the lowest threshold.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { max_depth: 4, min_leaf: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl RegressionTree {
    pub fn fit(x: &DMatrix<f64>, y: &[f64], params: TreeParams) -> Self {
        let mut tree = RegressionTree { nodes: Vec::new() };
        let rows: Vec<usize> = (0..x.nrows()).collect();
        tree.grow(x, y, rows, 0, params);
        tree
    }

    fn grow(&mut self, x: &DMatrix<f64>, y: &[f64], rows: Vec<usize>, depth: usize, params: TreeParams) -> usize {
        let id = self.nodes.len();
        let mean = if rows.is_empty() { 0.0 } else { rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len() as f64 };
        self.nodes.push(Node::Leaf { value: mean });
        if depth >= params.max_depth || rows.len() < 2 * params.min_leaf.max(1) {
            return id;
        }
        let Some(best) = best_split(x, y, &rows, params.min_leaf.max(1)) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[(i, best.feature)] <= best.threshold);
        let left = self.grow(x, y, l, depth + 1, params);
        let right = self.grow(x, y, r, depth + 1, params);
        self.nodes[id] = Node::Split { feature: best.feature, threshold: best.threshold, left, right };
        id
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    id = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let mut row = vec![0.0; x.ncols()];
        (0..x.nrows())
            .map(|i| {
                for (j, r) in row.iter_mut().enumerate() {
                    *r = x[(i, j)];
                }
                self.predict_row(&row)
            })
            .collect()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

fn best_split(x: &DMatrix<f64>, y: &[f64], rows: &[usize], min_leaf: usize) -> Option<Best> {
    let m = rows.len();
    let total: f64 = rows.iter().map(|&i| y[i]).sum();
    let base = total * total / m as f64;
    let mut best: Option<Best> = None;
    let mut order: Vec<(f64, f64)> = Vec::with_capacity(m);
    for feature in 0..x.ncols() {
        order.clear();
        order.extend(rows.iter().map(|&i| (x[(i, feature)], y[i])));
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let mut left_sum = 0.0;
        for k in 0..(m - 1) {
            left_sum += order[k].1;
            let n_left = k + 1;
            if order[k].0 == order[k + 1].0 || n_left < min_leaf || m - n_left < min_leaf {
                continue;
            }
            let right_sum = total - left_sum;
            // SSE reduction = sum_l^2/n_l + sum_r^2/n_r - total^2/n
            let gain = left_sum * left_sum / n_left as f64 + right_sum * right_sum / (m - n_left) as f64 - base;
            let better = match &best {
                None => gain > 1e-12,
                Some(b) => gain > b.gain,
            };
            if better {
                best = Some(Best { gain, feature, threshold: 0.5 * (order[k].0 + order[k + 1].0) });
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_step_function() {
        let x = DMatrix::from_fn(100, 2, |i, j| if j == 0 { i as f64 } else { (i % 7) as f64 });
        let y: Vec<f64> = (0..100).map(|i| if i < 37 { -1.0 } else { 2.0 }).collect();
        let t = RegressionTree::fit(&x, &y, TreeParams::default());
        assert_eq!(t.predict_row(&[10.0, 0.0]), -1.0);
        assert_eq!(t.predict_row(&[80.0, 0.0]), 2.0);
        assert_eq!(t.predict_row(&[36.4, 3.0]), -1.0);
        assert_eq!(t.predict_row(&[36.6, 3.0]), 2.0);
    }

    #[test]
    fn constant_target_is_single_leaf() {
        let x = DMatrix::from_fn(50, 3, |i, j| (i * (j + 1)) as f64);
        let t = RegressionTree::fit(&x, &[0.25; 50], TreeParams::default());
        assert_eq!(t.leaf_count(), 1);
        assert_eq!(t.predict_row(&[0.0, 0.0, 0.0]), 0.25);
    }

    #[test]
    fn respects_min_leaf_and_depth() {
        let x = DMatrix::from_fn(64, 1, |i, _| i as f64);
        let y: Vec<f64> = (0..64).map(|i| (i as f64).powi(2)).collect();
        let t = RegressionTree::fit(&x, &y, TreeParams { max_depth: 10, min_leaf: 10 });
        assert!(t.leaf_count() <= 6);
        let shallow = RegressionTree::fit(&x, &y, TreeParams { max_depth: 2, min_leaf: 1 });
        assert!(shallow.leaf_count() <= 4);
    }

    #[test]
    fn tie_goes_to_lowest_feature() {
        // Two identical columns: the split must use column 0.
        let x = DMatrix::from_fn(40, 2, |i, _| i as f64);
        let y: Vec<f64> = (0..40).map(|i| f64::from(i >= 20)).collect();
        let t = RegressionTree::fit(&x, &y, TreeParams { max_depth: 1, min_leaf: 5 });
        match &t.nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 19.5);
            }
            Node::Leaf { .. } => panic!("expected a split"),
        }
    }
}
