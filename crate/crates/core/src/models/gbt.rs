//! Histogram-based gradient-boosted regression trees.
//!
//! Features are quantised once per fit into at most `n_bins` bins per column.
//! Trees grow depth-first; a node splits on the bin boundary with the largest
//! reduction in squared gradient error, subject to `min_leaf` rows per child.
//! Squared loss uses the mean residual as leaf value; pinball loss uses the
//! leaf's empirical residual quantile, so both leaf updates are exact line
//! searches and the training loss never increases from one tree to the next.

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::features::FeatureMatrix;
use crate::stats::{empirical_quantile, pinball};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbtParams {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub n_bins: usize,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self {
            n_trees: 40,
            learning_rate: 0.1,
            max_depth: 4,
            min_leaf: 20,
            n_bins: 32,
        }
    }
}

impl GbtParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_trees == 0 {
            return Err(ModelError::InvalidParams("n_trees must be at least 1".into()));
        }
        if !(2..=256).contains(&self.n_bins) {
            return Err(ModelError::InvalidParams("n_bins must lie in [2, 256]".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(ModelError::InvalidParams("learning_rate must lie in (0, 1]".into()));
        }
        if self.min_leaf == 0 {
            return Err(ModelError::InvalidParams("min_leaf must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "q", rename_all = "lowercase")]
pub enum GbtLoss {
    Squared,
    Pinball(f64),
}

impl GbtLoss {
    fn loss(self, y: f64, f: f64) -> f64 {
        match self {
            GbtLoss::Squared => (y - f) * (y - f),
            GbtLoss::Pinball(q) => pinball(y, f, q),
        }
    }

    fn gradient(self, y: f64, f: f64) -> f64 {
        match self {
            GbtLoss::Squared => f - y,
            GbtLoss::Pinball(q) => {
                if y >= f {
                    -q
                } else {
                    1.0 - q
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    #[inline]
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub loss: GbtLoss,
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
    /// Mean training loss after the base score and after every tree.
    pub loss_trace: Vec<f64>,
}

impl Ensemble {
    #[inline]
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut acc = 0.0;
        for t in &self.trees {
            acc += t.predict(row);
        }
        self.base_score + self.learning_rate * acc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbtModel {
    pub point: Ensemble,
    pub quantile_heads: Vec<Ensemble>,
}

/// Column-major quantised copy of a feature matrix.
pub struct BinnedMatrix {
    n_rows: usize,
    bins: Vec<Vec<u8>>,
    /// Upper edge of every bin, per column; a value `x` falls in the first
    /// bin whose edge is `>= x`.
    edges: Vec<Vec<f64>>,
}

impl BinnedMatrix {
    pub fn new(matrix: &FeatureMatrix, n_bins: usize) -> Self {
        let n = matrix.n_rows();
        let d = matrix.n_cols();
        let mut bins = Vec::with_capacity(d);
        let mut edges = Vec::with_capacity(d);
        let mut column = vec![0.0; n];
        for j in 0..d {
            for (i, c) in column.iter_mut().enumerate() {
                *c = matrix.data[i * d + j];
            }
            let mut sorted = column.clone();
            sorted.sort_by(|a, b| a.total_cmp(b));
            sorted.dedup();
            let col_edges: Vec<f64> = if sorted.len() <= n_bins {
                sorted
            } else {
                let mut e: Vec<f64> = (1..=n_bins)
                    .map(|b| {
                        let pos = (b * sorted.len()).div_ceil(n_bins) - 1;
                        sorted[pos]
                    })
                    .collect();
                e.dedup();
                e
            };
            let col_bins = column
                .iter()
                .map(|x| col_edges.partition_point(|e| e < x).min(col_edges.len() - 1) as u8)
                .collect();
            bins.push(col_bins);
            edges.push(col_edges);
        }
        Self { n_rows: n, bins, edges }
    }
}

struct Grower<'a> {
    binned: &'a BinnedMatrix,
    grad: &'a [f64],
    residual: &'a [f64],
    loss: GbtLoss,
    params: &'a GbtParams,
    nodes: Vec<Node>,
    hist_grad: Vec<f64>,
    hist_count: Vec<u32>,
}

impl Grower<'_> {
    fn leaf_value(&self, rows: &[u32]) -> f64 {
        match self.loss {
            GbtLoss::Squared => {
                let g: f64 = rows.iter().map(|&i| self.grad[i as usize]).sum();
                -g / rows.len() as f64
            }
            GbtLoss::Pinball(q) => {
                let mut r: Vec<f64> = rows.iter().map(|&i| self.residual[i as usize]).collect();
                empirical_quantile(&mut r, q)
            }
        }
    }

    /// Best (feature, bin, gain) split of `rows`, if any has positive gain.
    fn best_split(&mut self, rows: &[u32]) -> Option<(usize, usize)> {
        let n = rows.len();
        let min_leaf = self.params.min_leaf;
        if n < 2 * min_leaf {
            return None;
        }
        let total: f64 = rows.iter().map(|&i| self.grad[i as usize]).sum();
        let parent = total * total / n as f64;
        let mut best: Option<(usize, usize)> = None;
        let mut best_gain = 1e-12 * parent.abs().max(1e-12);
        for (j, col) in self.binned.bins.iter().enumerate() {
            let n_edges = self.binned.edges[j].len();
            if n_edges < 2 {
                continue;
            }
            let hg = &mut self.hist_grad[..n_edges];
            let hc = &mut self.hist_count[..n_edges];
            hg.iter_mut().for_each(|v| *v = 0.0);
            hc.iter_mut().for_each(|v| *v = 0);
            for &i in rows {
                let b = col[i as usize] as usize;
                hg[b] += self.grad[i as usize];
                hc[b] += 1;
            }
            let mut gl = 0.0;
            let mut nl = 0usize;
            for b in 0..n_edges - 1 {
                gl += hg[b];
                nl += hc[b] as usize;
                let nr = n - nl;
                if nl < min_leaf {
                    continue;
                }
                if nr < min_leaf {
                    break;
                }
                let gr = total - gl;
                let gain = gl * gl / nl as f64 + gr * gr / nr as f64 - parent;
                if gain > best_gain {
                    best_gain = gain;
                    best = Some((j, b));
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: &mut [u32], depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(0.0));
        let split = if depth < self.params.max_depth {
            self.best_split(rows)
        } else {
            None
        };
        match split {
            None => {
                self.nodes[id] = Node::Leaf(self.leaf_value(rows));
            }
            Some((feature, bin)) => {
                let col = &self.binned.bins[feature];
                let mut k = 0;
                for i in 0..rows.len() {
                    if col[rows[i] as usize] as usize <= bin {
                        rows.swap(i, k);
                        k += 1;
                    }
                }
                let (l, r) = rows.split_at_mut(k);
                let left = self.grow(l, depth + 1);
                let right = self.grow(r, depth + 1);
                self.nodes[id] = Node::Split {
                    feature,
                    threshold: self.binned.edges[feature][bin],
                    left,
                    right,
                };
            }
        }
        id
    }
}

/// Fits one boosted ensemble for `loss` on pre-binned features.
pub fn fit_ensemble(
    matrix: &FeatureMatrix,
    binned: &BinnedMatrix,
    params: &GbtParams,
    loss: GbtLoss,
) -> Result<Ensemble, ModelError> {
    params.validate()?;
    let n = matrix.n_rows();
    if n == 0 {
        return Err(ModelError::EmptyMatrix);
    }
    debug_assert_eq!(binned.n_rows, n);
    let y = &matrix.target;
    let base_score = match loss {
        GbtLoss::Squared => y.iter().sum::<f64>() / n as f64,
        GbtLoss::Pinball(q) => empirical_quantile(&mut y.clone(), q),
    };
    let mut f = vec![base_score; n];
    let mean_loss = |f: &[f64]| y.iter().zip(f).map(|(&y, &f)| loss.loss(y, f)).sum::<f64>() / n as f64;
    let mut loss_trace = vec![mean_loss(&f)];
    let mut grad = vec![0.0; n];
    let mut residual = vec![0.0; n];
    let mut rows: Vec<u32> = (0..n as u32).collect();
    let max_edges = binned.edges.iter().map(Vec::len).max().unwrap_or(0);
    let mut trees = Vec::with_capacity(params.n_trees);
    for _ in 0..params.n_trees {
        for i in 0..n {
            grad[i] = loss.gradient(y[i], f[i]);
            residual[i] = y[i] - f[i];
        }
        rows.iter_mut().enumerate().for_each(|(k, r)| *r = k as u32);
        let mut grower = Grower {
            binned,
            grad: &grad,
            residual: &residual,
            loss,
            params,
            nodes: Vec::new(),
            hist_grad: vec![0.0; max_edges],
            hist_count: vec![0; max_edges],
        };
        grower.grow(&mut rows, 0);
        let tree = Tree { nodes: grower.nodes };
        for i in 0..n {
            f[i] += params.learning_rate * tree.predict(matrix.row(i));
        }
        loss_trace.push(mean_loss(&f));
        trees.push(tree);
    }
    Ok(Ensemble {
        loss,
        base_score,
        learning_rate: params.learning_rate,
        trees,
        loss_trace,
    })
}

/// Point ensemble (squared loss) plus one pinball ensemble per quantile.
pub fn fit(matrix: &FeatureMatrix, params: &GbtParams, quantiles: &[f64]) -> Result<GbtModel, ModelError> {
    params.validate()?;
    let binned = BinnedMatrix::new(matrix, params.n_bins);
    let point = fit_ensemble(matrix, &binned, params, GbtLoss::Squared)?;
    let quantile_heads = quantiles
        .iter()
        .map(|&q| fit_ensemble(matrix, &binned, params, GbtLoss::Pinball(q)))
        .collect::<Result<_, _>>()?;
    Ok(GbtModel { point, quantile_heads })
}
