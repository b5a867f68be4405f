//! Bagged TRUST trees with Breiman proximity neighborhoods.
//!
//! Besides the `records x trees` leaf-id matrix, every tree keeps an inverted
//! index `leaf -> calibration records`, so a neighborhood query touches only
//! the records that share at least one leaf with the query point.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ParamBox;
use crate::rng::{derive_rng, stage};
use crate::tree::{RegressionTree, TreeParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub tree: TreeParams,
    /// Resample with replacement for each tree; disabling it (test mode)
    /// fits every tree to the full data.
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 200,
            tree: TreeParams {
                ccp_alpha: 0.0,
                ..TreeParams::default()
            },
            bootstrap: true,
        }
    }
}

/// What to do when a proximity neighborhood is empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyPolicy {
    /// Signal `NoCalibrationSupport`.
    #[default]
    Error,
    /// Use the largest `M' < M` whose neighborhood is nonempty.
    Relax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    trees: Vec<RegressionTree>,
    /// Leaf ids of calibration record `b` in tree `k` at `b * K + k`.
    leaf_ids: Vec<u32>,
    tau: Vec<f64>,
    /// `index[k][leaf]` = calibration records in that leaf of tree `k`.
    index: Vec<Vec<Vec<u32>>>,
}

impl Forest {
    /// Fits `n_trees` trees on bootstrap resamples and calibrates on the
    /// same records.
    pub fn fit(
        thetas: &[Vec<f64>],
        tau: &[f64],
        bounds: &ParamBox,
        params: &ForestParams,
        seed: u64,
    ) -> Result<Self> {
        if params.n_trees == 0 {
            return Err(Error::InvalidParameter("forest needs at least one tree".into()));
        }
        if thetas.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        let b = thetas.len();
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|k| {
                if !params.bootstrap {
                    return RegressionTree::fit(thetas, tau, bounds, &params.tree);
                }
                let mut rng = derive_rng(seed, &[stage::BOOTSTRAP, k as u64]);
                let (mut bt, mut btau) = (Vec::with_capacity(b), Vec::with_capacity(b));
                for _ in 0..b {
                    let i = rng.random_range(0..b);
                    bt.push(thetas[i].clone());
                    btau.push(tau[i]);
                }
                RegressionTree::fit(&bt, &btau, bounds, &params.tree)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::calibrated(trees, thetas, tau)
    }

    /// Attaches calibration records to already fitted trees.
    pub fn calibrated(trees: Vec<RegressionTree>, thetas: &[Vec<f64>], tau: &[f64]) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::InvalidParameter("forest needs at least one tree".into()));
        }
        if thetas.len() != tau.len() {
            return Err(Error::InvalidParameter("theta and tau lengths differ".into()));
        }
        let k = trees.len();
        let leaf_ids: Vec<u32> = thetas
            .par_iter()
            .flat_map_iter(|t| trees.iter().map(move |tree| tree.leaf_of(t) as u32))
            .collect();
        let mut index: Vec<Vec<Vec<u32>>> = trees.iter().map(|t| vec![Vec::new(); t.n_leaves()]).collect();
        for rec in 0..thetas.len() {
            for (tree, slots) in index.iter_mut().enumerate() {
                slots[leaf_ids[rec * k + tree] as usize].push(rec as u32);
            }
        }
        Ok(Forest {
            trees,
            leaf_ids,
            tau: tau.to_vec(),
            index,
        })
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn n_records(&self) -> usize {
        self.tau.len()
    }

    /// Leaf id of calibration record `rec` in tree `tree`.
    pub fn record_leaf(&self, rec: usize, tree: usize) -> u32 {
        self.leaf_ids[rec * self.trees.len() + tree]
    }

    /// Number of trees in which `a` and `b` share a leaf.
    pub fn proximity(&self, a: &[f64], b: &[f64]) -> usize {
        self.trees.iter().filter(|t| t.leaf_of(a) == t.leaf_of(b)).count()
    }

    /// Sparse proximities `(record, rho)` of all records with `rho >= 1`,
    /// sorted by record index.
    pub fn proximities(&self, theta: &[f64]) -> Vec<(u32, u16)> {
        let mut counts = vec![0u16; self.n_records()];
        let mut touched = Vec::new();
        for (tree, slots) in self.trees.iter().zip(&self.index) {
            for &rec in &slots[tree.leaf_of(theta)] {
                let c = &mut counts[rec as usize];
                if *c == 0 {
                    touched.push(rec);
                }
                *c += 1;
            }
        }
        touched.sort_unstable();
        touched.into_iter().map(|r| (r, counts[r as usize])).collect()
    }

    /// Records `b` with `rho(theta_b, theta) >= m`.
    pub fn neighborhood(&self, theta: &[f64], m: usize) -> Result<Vec<usize>> {
        self.check_m(m)?;
        let out: Vec<usize> = self
            .proximities(theta)
            .into_iter()
            .filter(|&(_, c)| c as usize >= m)
            .map(|(r, _)| r as usize)
            .collect();
        if out.is_empty() {
            return Err(Error::NoCalibrationSupport {
                theta: theta.to_vec(),
                m,
            });
        }
        Ok(out)
    }

    /// Neighborhood `tau` values at `theta` under `policy`, with the `M`
    /// actually used.
    pub fn neighborhood_tau(&self, theta: &[f64], m: usize, policy: EmptyPolicy) -> Result<(Vec<f64>, usize)> {
        self.check_m(m)?;
        let prox = self.proximities(theta);
        let collect = |m: usize| -> Vec<f64> {
            prox.iter()
                .filter(|&&(_, c)| c as usize >= m)
                .map(|&(r, _)| self.tau[r as usize])
                .collect()
        };
        let values = collect(m);
        if !values.is_empty() {
            return Ok((values, m));
        }
        if policy == EmptyPolicy::Relax {
            if let Some(best) = prox.iter().map(|&(_, c)| c as usize).max() {
                return Ok((collect(best), best));
            }
        }
        Err(Error::NoCalibrationSupport {
            theta: theta.to_vec(),
            m,
        })
    }

    fn check_m(&self, m: usize) -> Result<()> {
        if m == 0 || m > self.trees.len() {
            return Err(Error::InvalidParameter(format!(
                "M must lie in [1, {}], got {m}",
                self.trees.len()
            )));
        }
        Ok(())
    }

    /// Distinct split thresholds in `dims` across all trees.
    pub fn split_values(&self, dims: &[usize], depth_limit: Option<usize>) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> = self
            .trees
            .iter()
            .flat_map(|t| t.split_values(dims, depth_limit))
            .collect();
        all.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        all.dedup();
        all
    }

    /// Serializes trees and calibration `tau`; the leaf index is rebuilt on
    /// load from the stored leaf-id matrix.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_u32::<LittleEndian>(self.trees.len() as u32)?;
        for t in &self.trees {
            t.write_to(w)?;
        }
        w.write_u64::<LittleEndian>(self.tau.len() as u64)?;
        for &v in &self.tau {
            w.write_f64::<LittleEndian>(v)?;
        }
        for &id in &self.leaf_ids {
            w.write_u32::<LittleEndian>(id)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let io = |e: std::io::Error| Error::IncompatibleBundle(format!("truncated forest blob: {e}"));
        let k = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let trees = (0..k)
            .map(|_| RegressionTree::read_from(r))
            .collect::<Result<Vec<_>>>()?;
        let b = r.read_u64::<LittleEndian>().map_err(io)? as usize;
        let mut tau = Vec::with_capacity(b);
        for _ in 0..b {
            tau.push(r.read_f64::<LittleEndian>().map_err(io)?);
        }
        let mut leaf_ids = Vec::with_capacity(b * k);
        for _ in 0..b * k {
            leaf_ids.push(r.read_u32::<LittleEndian>().map_err(io)?);
        }
        let mut index: Vec<Vec<Vec<u32>>> = trees.iter().map(|t| vec![Vec::new(); t.n_leaves()]).collect();
        for rec in 0..b {
            for (tree, slots) in index.iter_mut().enumerate() {
                let leaf = leaf_ids[rec * k + tree] as usize;
                slots
                    .get_mut(leaf)
                    .ok_or_else(|| Error::IncompatibleBundle("leaf id out of range".into()))?
                    .push(rec as u32);
            }
        }
        Ok(Forest {
            trees,
            leaf_ids,
            tau,
            index,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn data(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = rng_from_seed(seed);
        let thetas: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random()]).collect();
        let tau = thetas
            .iter()
            .map(|t| (3.0 * t[0]).sin() + t[1] + 0.3 * rng.random::<f64>())
            .collect();
        (thetas, tau)
    }

    fn unit2() -> ParamBox {
        ParamBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap()
    }

    fn small_params(k: usize) -> ForestParams {
        ForestParams {
            n_trees: k,
            tree: TreeParams {
                min_samples_split: 30,
                ccp_alpha: 0.0,
                max_depth: None,
            },
            bootstrap: true,
        }
    }

    #[test]
    fn proximities_match_brute_force() {
        let (thetas, tau) = data(600, 1);
        let f = Forest::fit(&thetas, &tau, &unit2(), &small_params(20), 7).unwrap();
        let mut rng = rng_from_seed(3);
        for _ in 0..50 {
            let q = vec![rng.random::<f64>(), rng.random::<f64>()];
            let sparse = f.proximities(&q);
            for (b, t) in thetas.iter().enumerate() {
                let brute = f.proximity(&q, t);
                let got = sparse
                    .binary_search_by_key(&(b as u32), |p| p.0)
                    .map(|i| sparse[i].1 as usize)
                    .unwrap_or(0);
                assert_eq!(got, brute);
            }
            let m = 10;
            let hood = f.neighborhood(&q, m).unwrap_or_default();
            let brute: Vec<usize> = (0..thetas.len()).filter(|&b| f.proximity(&q, &thetas[b]) >= m).collect();
            assert_eq!(hood, brute);
        }
    }

    #[test]
    fn self_proximity_is_k_and_symmetric() {
        let (thetas, tau) = data(300, 2);
        let f = Forest::fit(&thetas, &tau, &unit2(), &small_params(15), 1).unwrap();
        assert_eq!(f.proximity(&thetas[0], &thetas[0]), 15);
        assert_eq!(f.proximity(&thetas[1], &thetas[7]), f.proximity(&thetas[7], &thetas[1]));
    }

    #[test]
    fn fixed_seed_reproduces_leaf_matrix() {
        let (thetas, tau) = data(400, 4);
        let a = Forest::fit(&thetas, &tau, &unit2(), &small_params(10), 5).unwrap();
        let b = Forest::fit(&thetas, &tau, &unit2(), &small_params(10), 5).unwrap();
        assert_eq!(a.leaf_ids, b.leaf_ids);
    }

    #[test]
    fn constant_response_gives_full_proximity() {
        let thetas: Vec<Vec<f64>> = (0..200).map(|i| vec![i as f64 / 200.0, 0.5]).collect();
        let f = Forest::fit(&thetas, &[1.0; 200], &unit2(), &small_params(8), 0).unwrap();
        assert_eq!(f.proximity(&[0.0, 0.0], &[1.0, 1.0]), 8);
        assert_eq!(f.neighborhood(&[0.3, 0.3], 8).unwrap().len(), 200);
    }

    #[test]
    fn relax_policy_lowers_m() {
        let (thetas, tau) = data(500, 6);
        let f = Forest::fit(&thetas, &tau, &unit2(), &small_params(12), 2).unwrap();
        let q = [0.5, 0.5];
        let (values, used) = f.neighborhood_tau(&q, 12, EmptyPolicy::Relax).unwrap();
        assert!(!values.is_empty() && used <= 12);
        assert!(f.neighborhood_tau(&q, 13, EmptyPolicy::Relax).is_err());
    }

    #[test]
    fn blob_round_trip() {
        let (thetas, tau) = data(300, 8);
        let f = Forest::fit(&thetas, &tau, &unit2(), &small_params(5), 3).unwrap();
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        assert_eq!(Forest::read_from(&mut buf.as_slice()).unwrap(), f);
    }
}
