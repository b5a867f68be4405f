//! Monte Carlo grid baseline: simulate `n_mc` statistics at each node of an
//! equally spaced grid over the box and give every evaluation point the
//! cutoff of its nearest node.

use std::borrow::Cow;
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;

use crate::calibration::{LocalCalibration, Method};
use crate::error::{Error, Result};
use crate::evaluation::simulate_statistics;
use crate::models::ParamBox;
use crate::rng::{derive_seed, stage};
use crate::statistics::Statistic;

/// Nodes per dimension: the smallest `s` with `s^d >= b / n_mc`, i.e.
/// `ceil((b / n_mc)^(1/d))` without floating-point root error.
pub fn mc_grid_size(b: usize, n_mc: usize, d: usize) -> usize {
    let target = b as f64 / n_mc as f64;
    let mut s = target.powf(1.0 / d as f64).floor().max(1.0) as usize;
    while (s as f64).powi(d as i32) < target {
        s += 1;
    }
    while s > 1 && ((s - 1) as f64).powi(d as i32) >= target {
        s -= 1;
    }
    s
}

/// Equally spaced nodes including both endpoints (the midpoint if `s = 1`).
pub fn axis_nodes(lo: f64, hi: f64, s: usize) -> Vec<f64> {
    if s == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..s).map(|i| lo + (hi - lo) * i as f64 / (s - 1) as f64).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct McCalibrator {
    axes: Vec<Vec<f64>>,
    /// Sorted statistics per node, row-major over `axes` (last fastest).
    node_values: Vec<Vec<f64>>,
}

impl McCalibrator {
    pub fn fit(statistic: &Statistic, n: usize, b: usize, n_mc: usize, seed: u64) -> Result<Self> {
        if n_mc == 0 || b < n_mc {
            return Err(Error::InvalidParameter(format!("MC baseline needs B >= n_MC >= 1, got B = {b}, n_MC = {n_mc}")));
        }
        let bounds = &statistic.model().bounds;
        let s = mc_grid_size(b, n_mc, bounds.dim());
        let axes: Vec<Vec<f64>> = (0..bounds.dim())
            .map(|k| axis_nodes(bounds.lower[k], bounds.upper[k], s))
            .collect();
        let nodes = product(&axes);
        let node_values = nodes
            .par_iter()
            .enumerate()
            .map(|(i, theta)| {
                let mut v = simulate_statistics(statistic, theta, n, n_mc, derive_seed(seed, &[stage::MC, i as u64]))?;
                v.sort_by(f64::total_cmp);
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(McCalibrator { axes, node_values })
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        product(&self.axes)
    }

    /// Row-major index of the nearest node. On a product grid the Euclidean
    /// nearest node is the per-coordinate nearest; ties go to the lower node.
    pub fn nearest(&self, theta: &[f64]) -> usize {
        let mut idx = 0;
        for (k, axis) in self.axes.iter().enumerate() {
            let mut best = 0;
            for (j, &v) in axis.iter().enumerate() {
                if (theta[k] - v).abs() < (theta[k] - axis[best]).abs() {
                    best = j;
                }
            }
            idx = idx * axis.len() + best;
        }
        idx
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_u32::<LittleEndian>(self.axes.len() as u32)?;
        for axis in &self.axes {
            w.write_u32::<LittleEndian>(axis.len() as u32)?;
            for &v in axis {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        for values in &self.node_values {
            w.write_u64::<LittleEndian>(values.len() as u64)?;
            for &v in values {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let io = |e: std::io::Error| Error::IncompatibleBundle(format!("truncated MC blob: {e}"));
        let d = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let mut axes = Vec::with_capacity(d);
        for _ in 0..d {
            let len = r.read_u32::<LittleEndian>().map_err(io)? as usize;
            let mut axis = Vec::with_capacity(len);
            for _ in 0..len {
                axis.push(r.read_f64::<LittleEndian>().map_err(io)?);
            }
            axes.push(axis);
        }
        let count: usize = axes.iter().map(Vec::len).product();
        let mut node_values = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.read_u64::<LittleEndian>().map_err(io)? as usize;
            let mut v = Vec::with_capacity(len);
            for _ in 0..len {
                v.push(r.read_f64::<LittleEndian>().map_err(io)?);
            }
            node_values.push(v);
        }
        Ok(McCalibrator { axes, node_values })
    }
}

fn product(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}

impl LocalCalibration for McCalibrator {
    fn method(&self) -> Method {
        Method::Mc
    }

    fn local_values(&self, theta: &[f64]) -> Result<Cow<'_, [f64]>> {
        Ok(Cow::Borrowed(&self.node_values[self.nearest(theta)]))
    }

    /// Midpoints between neighboring nodes: the boundaries of the nearest-node
    /// cells.
    fn split_values(&self, dims: &[usize], _depth_limit: Option<usize>) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        for &d in dims {
            for w in self.axes[d].windows(2) {
                out.push((d, 0.5 * (w[0] + w[1])));
            }
        }
        out
    }
}

/// Checks that an evaluation box matches the calibrator's grid extent.
pub fn covers(calibrator: &McCalibrator, bounds: &ParamBox) -> bool {
    calibrator
        .axes
        .iter()
        .enumerate()
        .all(|(k, a)| a.first().is_some_and(|&v| v >= bounds.lower[k]) && a.last().is_some_and(|&v| v <= bounds.upper[k]))
}
