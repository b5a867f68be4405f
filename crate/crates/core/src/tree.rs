//! CART regression tree over the parameter space, predicting the statistic.
//!
//! Splits are exhaustive over midpoints of consecutive distinct coordinate
//! values; ties in gain go to the lowest dimension, then the lowest
//! threshold. Routing sends `theta` left iff `theta[dim] <= threshold`.
//! After growing, the tree is pruned by weakest-link cost complexity with
//! per-node risk `SSE_t / N`.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ParamBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreeParams {
    pub min_samples_split: usize,
    pub ccp_alpha: f64,
    pub max_depth: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            min_samples_split: 100,
            ccp_alpha: 0.001,
            max_depth: None,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_samples_split < 2 {
            return Err(Error::InvalidParameter("min_samples_split must be >= 2".into()));
        }
        if !(self.ccp_alpha >= 0.0) {
            return Err(Error::InvalidParameter("ccp_alpha must be >= 0".into()));
        }
        if self.max_depth == Some(0) {
            return Err(Error::InvalidParameter("max_depth must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        dim: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        id: usize,
        count: usize,
        mean: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
    bounds: ParamBox,
    n_leaves: usize,
}

/// Growing-phase node with the statistics needed for pruning.
struct Grown {
    split: Option<(usize, f64, usize, usize)>,
    count: usize,
    sum: f64,
    sse: f64,
}

impl RegressionTree {
    /// Fits a tree to `(thetas[i], tau[i])`. Fitting is deterministic: it
    /// depends only on the data and its order.
    pub fn fit(thetas: &[Vec<f64>], tau: &[f64], bounds: &ParamBox, params: &TreeParams) -> Result<Self> {
        params.validate()?;
        if thetas.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        if thetas.len() != tau.len() {
            return Err(Error::InvalidParameter("theta and tau lengths differ".into()));
        }
        let d = bounds.dim();
        if thetas.iter().any(|t| t.len() != d) {
            return Err(Error::InvalidParameter(format!("all theta points must have dim {d}")));
        }
        let mut grower = Grower {
            thetas,
            tau,
            d,
            params,
            nodes: Vec::new(),
            scratch: Vec::with_capacity(thetas.len()),
        };
        let idx: Vec<usize> = (0..thetas.len()).collect();
        grower.grow(idx, 0);
        let mut grown = grower.nodes;
        prune(&mut grown, params.ccp_alpha, thetas.len() as f64);
        Ok(compact(&grown, bounds.clone()))
    }

    /// A tree with the given splits; leaves get zero counts and means.
    /// `splits` lists `(dim, threshold)` in pre-order, `None` marking a leaf.
    pub fn from_preorder(splits: &[Option<(usize, f64)>], bounds: ParamBox) -> Result<Self> {
        let mut nodes = Vec::new();
        let mut pos = 0;
        let mut leaves = 0;
        fn build(
            splits: &[Option<(usize, f64)>],
            pos: &mut usize,
            nodes: &mut Vec<Node>,
            leaves: &mut usize,
            d: usize,
        ) -> Result<usize> {
            let item = *splits
                .get(*pos)
                .ok_or_else(|| Error::InvalidParameter("truncated pre-order split list".into()))?;
            *pos += 1;
            let me = nodes.len();
            match item {
                None => {
                    nodes.push(Node::Leaf {
                        id: *leaves,
                        count: 0,
                        mean: 0.0,
                    });
                    *leaves += 1;
                }
                Some((dim, threshold)) => {
                    if dim >= d {
                        return Err(Error::InvalidParameter(format!("split dim {dim} out of range")));
                    }
                    nodes.push(Node::Leaf {
                        id: 0,
                        count: 0,
                        mean: 0.0,
                    });
                    let left = build(splits, pos, nodes, leaves, d)?;
                    let right = build(splits, pos, nodes, leaves, d)?;
                    nodes[me] = Node::Split {
                        dim,
                        threshold,
                        left,
                        right,
                    };
                }
            }
            Ok(me)
        }
        build(splits, &mut pos, &mut nodes, &mut leaves, bounds.dim())?;
        if pos != splits.len() {
            return Err(Error::InvalidParameter("trailing entries in pre-order split list".into()));
        }
        Ok(RegressionTree {
            nodes,
            bounds,
            n_leaves: leaves,
        })
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn bounds(&self) -> &ParamBox {
        &self.bounds
    }

    pub fn leaf_of(&self, theta: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { id, .. } => return id,
                Node::Split {
                    dim,
                    threshold,
                    left,
                    right,
                } => i = if theta[dim] <= threshold { left } else { right },
            }
        }
    }

    /// Prediction (training mean of the leaf).
    pub fn predict(&self, theta: &[f64]) -> f64 {
        let id = self.leaf_of(theta);
        self.nodes
            .iter()
            .find_map(|n| match n {
                Node::Leaf { id: l, mean, .. } if *l == id => Some(*mean),
                _ => None,
            })
            .unwrap_or(f64::NAN)
    }

    /// Distinct `(dim, threshold)` pairs of internal nodes with `dim` in
    /// `dims`, optionally only from nodes at depth `< depth_limit`.
    pub fn split_values(&self, dims: &[usize], depth_limit: Option<usize>) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, 0usize)];
        while let Some((i, depth)) = stack.pop() {
            if let Node::Split {
                dim,
                threshold,
                left,
                right,
            } = self.nodes[i]
            {
                if depth_limit.is_some_and(|lim| depth >= lim) {
                    continue;
                }
                if dims.contains(&dim) {
                    out.push((dim, threshold));
                }
                stack.push((left, depth + 1));
                stack.push((right, depth + 1));
            }
        }
        out.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        out.dedup();
        out
    }

    /// Axis-aligned cell `(lower, upper)` of every leaf, indexed by leaf id.
    /// Cells are closed on the upper side of each split (`<=` routing).
    pub fn leaf_cells(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut cells = vec![(Vec::new(), Vec::new()); self.n_leaves];
        let mut stack = vec![(0usize, self.bounds.lower.clone(), self.bounds.upper.clone())];
        while let Some((i, lo, hi)) = stack.pop() {
            match self.nodes[i] {
                Node::Leaf { id, .. } => cells[id] = (lo, hi),
                Node::Split {
                    dim,
                    threshold,
                    left,
                    right,
                } => {
                    let mut lhi = hi.clone();
                    lhi[dim] = threshold.min(hi[dim]);
                    let mut rlo = lo.clone();
                    rlo[dim] = threshold.max(lo[dim]);
                    stack.push((left, lo, lhi));
                    stack.push((right, rlo, hi));
                }
            }
        }
        cells
    }

    pub fn leaf_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_leaves];
        for n in &self.nodes {
            if let Node::Leaf { id, count, .. } = n {
                counts[*id] = *count;
            }
        }
        counts
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_u32::<LittleEndian>(self.bounds.dim() as u32)?;
        for k in 0..self.bounds.dim() {
            w.write_f64::<LittleEndian>(self.bounds.lower[k])?;
            w.write_f64::<LittleEndian>(self.bounds.upper[k])?;
        }
        w.write_u32::<LittleEndian>(self.nodes.len() as u32)?;
        for node in &self.nodes {
            match *node {
                Node::Split {
                    dim,
                    threshold,
                    left,
                    right,
                } => {
                    w.write_u8(0)?;
                    w.write_u32::<LittleEndian>(dim as u32)?;
                    w.write_f64::<LittleEndian>(threshold)?;
                    w.write_u32::<LittleEndian>(left as u32)?;
                    w.write_u32::<LittleEndian>(right as u32)?;
                }
                Node::Leaf { id, count, mean } => {
                    w.write_u8(1)?;
                    w.write_u32::<LittleEndian>(id as u32)?;
                    w.write_u64::<LittleEndian>(count as u64)?;
                    w.write_f64::<LittleEndian>(mean)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let bad = |m: &str| Error::IncompatibleBundle(m.to_string());
        let io = |e: std::io::Error| Error::IncompatibleBundle(format!("truncated tree blob: {e}"));
        let d = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let (mut lower, mut upper) = (Vec::with_capacity(d), Vec::with_capacity(d));
        for _ in 0..d {
            lower.push(r.read_f64::<LittleEndian>().map_err(io)?);
            upper.push(r.read_f64::<LittleEndian>().map_err(io)?);
        }
        let bounds = ParamBox::new(lower, upper)?;
        let count = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let mut nodes = Vec::with_capacity(count);
        let mut n_leaves = 0;
        for _ in 0..count {
            let node = match r.read_u8().map_err(io)? {
                0 => Node::Split {
                    dim: r.read_u32::<LittleEndian>().map_err(io)? as usize,
                    threshold: r.read_f64::<LittleEndian>().map_err(io)?,
                    left: r.read_u32::<LittleEndian>().map_err(io)? as usize,
                    right: r.read_u32::<LittleEndian>().map_err(io)? as usize,
                },
                1 => {
                    n_leaves += 1;
                    Node::Leaf {
                        id: r.read_u32::<LittleEndian>().map_err(io)? as usize,
                        count: r.read_u64::<LittleEndian>().map_err(io)? as usize,
                        mean: r.read_f64::<LittleEndian>().map_err(io)?,
                    }
                }
                _ => return Err(bad("unknown node tag")),
            };
            nodes.push(node);
        }
        for node in &nodes {
            match *node {
                Node::Split { dim, left, right, .. } if dim >= d || left >= count || right >= count => {
                    return Err(bad("node index out of range"))
                }
                Node::Leaf { id, .. } if id >= n_leaves => return Err(bad("leaf id out of range")),
                _ => {}
            }
        }
        if nodes.is_empty() {
            return Err(bad("tree without nodes"));
        }
        Ok(RegressionTree {
            nodes,
            bounds,
            n_leaves,
        })
    }
}

struct Grower<'a> {
    thetas: &'a [Vec<f64>],
    tau: &'a [f64],
    d: usize,
    params: &'a TreeParams,
    nodes: Vec<Grown>,
    scratch: Vec<(f64, f64)>,
}

impl Grower<'_> {
    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let count = idx.len();
        let sum: f64 = idx.iter().map(|&i| self.tau[i]).sum();
        let mean = sum / count as f64;
        let sse: f64 = idx.iter().map(|&i| (self.tau[i] - mean).powi(2)).sum();
        let me = self.nodes.len();
        self.nodes.push(Grown {
            split: None,
            count,
            sum,
            sse,
        });
        let depth_ok = self.params.max_depth.is_none_or(|m| depth < m);
        if count < self.params.min_samples_split || !depth_ok || sse <= 1e-12 * (1.0 + sum * sum / count as f64) {
            return me;
        }
        let Some((dim, threshold)) = self.best_split(&idx, sum) else {
            return me;
        };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
            idx.into_iter().partition(|&i| self.thetas[i][dim] <= threshold);
        let left = self.grow(left_idx, depth + 1);
        let right = self.grow(right_idx, depth + 1);
        self.nodes[me].split = Some((dim, threshold, left, right));
        me
    }

    /// Maximizes `S_L^2 / n_L + S_R^2 / n_R` (equivalently, the SSE drop).
    fn best_split(&mut self, idx: &[usize], total: f64) -> Option<(usize, f64)> {
        let n = idx.len() as f64;
        let parent = total * total / n;
        let mut best: Option<(f64, usize, f64)> = None;
        for dim in 0..self.d {
            self.scratch.clear();
            self.scratch
                .extend(idx.iter().map(|&i| (self.thetas[i][dim], self.tau[i])));
            self.scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for k in 0..self.scratch.len() - 1 {
                left_sum += self.scratch[k].1;
                let (a, b) = (self.scratch[k].0, self.scratch[k + 1].0);
                if a == b {
                    continue;
                }
                let nl = (k + 1) as f64;
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / nl + right_sum * right_sum / (n - nl);
                let threshold = 0.5 * (a + b);
                let better = match best {
                    None => true,
                    // strict improvement keeps the lowest dim/threshold on ties
                    Some((s, _, _)) => score > s + 1e-12 * s.abs().max(1e-300),
                };
                if better {
                    best = Some((score, dim, threshold));
                }
            }
        }
        match best {
            Some((score, dim, threshold)) if score > parent + 1e-12 * parent.abs().max(1e-300) => {
                Some((dim, threshold))
            }
            _ => None,
        }
    }
}

/// Weakest-link pruning: repeatedly collapses the internal node with the
/// smallest `g(t) = (R(t) - R(T_t)) / (|T_t| - 1)` while `g <= ccp_alpha`.
fn prune(nodes: &mut [Grown], ccp_alpha: f64, total: f64) {
    loop {
        let stats = subtree_stats(nodes, total);
        let mut weakest: Option<(f64, usize)> = None;
        for (i, node) in nodes.iter().enumerate() {
            if node.split.is_none() || !stats[i].2 {
                continue;
            }
            let (leaf_risk, leaves, _) = stats[i];
            let g = (node.sse / total - leaf_risk) / (leaves as f64 - 1.0);
            if weakest.is_none_or(|(wg, _)| g < wg) {
                weakest = Some((g, i));
            }
        }
        match weakest {
            Some((g, i)) if g <= ccp_alpha => nodes[i].split = None,
            _ => break,
        }
    }
}

/// Per node: (sum of leaf risks in its subtree, leaf count, reachable).
fn subtree_stats(nodes: &[Grown], total: f64) -> Vec<(f64, usize, bool)> {
    let mut stats = vec![(0.0, 0usize, false); nodes.len()];
    fn visit(nodes: &[Grown], i: usize, total: f64, stats: &mut [(f64, usize, bool)]) -> (f64, usize) {
        let res = match nodes[i].split {
            None => (nodes[i].sse / total, 1),
            Some((_, _, l, r)) => {
                let a = visit(nodes, l, total, stats);
                let b = visit(nodes, r, total, stats);
                (a.0 + b.0, a.1 + b.1)
            }
        };
        stats[i] = (res.0, res.1, true);
        res
    }
    visit(nodes, 0, total, &mut stats);
    stats
}

/// Rebuilds the reachable part of the grown tree with dense leaf ids in
/// depth-first, left-first order.
fn compact(grown: &[Grown], bounds: ParamBox) -> RegressionTree {
    let mut nodes = Vec::new();
    let mut leaves = 0;
    fn copy(grown: &[Grown], i: usize, nodes: &mut Vec<Node>, leaves: &mut usize) -> usize {
        let me = nodes.len();
        let g = &grown[i];
        match g.split {
            None => {
                nodes.push(Node::Leaf {
                    id: *leaves,
                    count: g.count,
                    mean: g.sum / g.count as f64,
                });
                *leaves += 1;
            }
            Some((dim, threshold, l, r)) => {
                nodes.push(Node::Leaf {
                    id: 0,
                    count: 0,
                    mean: 0.0,
                });
                let left = copy(grown, l, nodes, leaves);
                let right = copy(grown, r, nodes, leaves);
                nodes[me] = Node::Split {
                    dim,
                    threshold,
                    left,
                    right,
                };
            }
        }
        me
    }
    copy(grown, 0, &mut nodes, &mut leaves);
    RegressionTree {
        nodes,
        bounds,
        n_leaves: leaves,
    }
}
