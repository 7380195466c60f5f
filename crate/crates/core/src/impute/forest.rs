//! Bagged regression trees with variance-reduction splits.
//!
//! Features are stored row-major in a flat slice with a fixed stride.
//! Split search visits features in ascending order and thresholds in
//! ascending order and only accepts strictly better gains, so ties resolve
//! to the lowest feature index, then the lowest threshold.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Borrowed training matrix: `x` has `n_features` values per sample.
#[derive(Debug, Clone, Copy)]
pub struct Dataset<'a> {
    pub x: &'a [f64],
    pub n_features: usize,
    pub y: &'a [f64],
}

impl<'a> Dataset<'a> {
    pub fn new(x: &'a [f64], n_features: usize, y: &'a [f64]) -> Result<Self> {
        if n_features == 0 || x.len() != n_features * y.len() {
            return Err(Error::Shape(format!(
                "{} feature values for {} samples of {n_features} features",
                x.len(),
                y.len()
            )));
        }
        Ok(Self { x, n_features, y })
    }

    fn feature(&self, sample: usize, f: usize) -> f64 {
        self.x[sample * self.n_features + f]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_samples_split: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            max_depth: 10,
            min_samples_split: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "kebab-case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    /// Samples with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl RegressionTree {
    /// Fits on the listed samples (repeats allowed, as in a bootstrap).
    pub fn fit(data: &Dataset<'_>, samples: &[usize], cfg: &TreeConfig) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InsufficientData { found: 0, needed: 1 });
        }
        let mut tree = Self { nodes: Vec::new() };
        tree.grow(data, samples.to_vec(), 0, cfg);
        Ok(tree)
    }

    fn grow(&mut self, data: &Dataset<'_>, samples: Vec<usize>, depth: usize, cfg: &TreeConfig) -> usize {
        let id = self.nodes.len();
        let n = samples.len() as f64;
        let mean = samples.iter().map(|&s| data.y[s]).sum::<f64>() / n;
        self.nodes.push(Node::Leaf { value: mean });
        if depth >= cfg.max_depth || samples.len() < cfg.min_samples_split.max(2) {
            return id;
        }
        let sse: f64 = samples.iter().map(|&s| (data.y[s] - mean).powi(2)).sum();
        if sse <= 1e-12 * (1.0 + mean * mean) * n {
            return id;
        }
        let Some(split) = best_split(data, &samples) else {
            return id;
        };
        let (left, right): (Vec<usize>, Vec<usize>) = samples
            .iter()
            .partition(|&&s| data.feature(s, split.feature) <= split.threshold);
        let l = self.grow(data, left, depth + 1, cfg);
        let r = self.grow(data, right, depth + 1, cfg);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: l,
            right: r,
        };
        id
    }

    pub fn predict(&self, features: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if features[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

const TIE_EPS: f64 = 1e-10;

fn best_split(data: &Dataset<'_>, samples: &[usize]) -> Option<Split> {
    let n = samples.len();
    let total: f64 = samples.iter().map(|&s| data.y[s]).sum();
    let base = total * total / n as f64;
    // gains closer than this count as ties, which keep the earlier candidate
    let eps = TIE_EPS * samples.iter().map(|&s| data.y[s] * data.y[s]).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut best: Option<Split> = None;
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
    for f in 0..data.n_features {
        order.clear();
        order.extend(samples.iter().map(|&s| (data.feature(s, f), s)));
        order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut left_sum = 0.0;
        for i in 0..n - 1 {
            left_sum += data.y[order[i].1];
            let (lo, hi) = (order[i].0, order[i + 1].0);
            if lo == hi {
                continue;
            }
            let nl = (i + 1) as f64;
            let nr = (n - i - 1) as f64;
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / nl + right_sum * right_sum / nr - base;
            if gain > best.as_ref().map_or(0.0, |b| b.gain) + eps {
                let mut threshold = lo + (hi - lo) / 2.0;
                if threshold >= hi {
                    threshold = lo;
                }
                best = Some(Split {
                    feature: f,
                    threshold,
                    gain,
                });
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub bootstrap: bool,
    /// Fraction of samples drawn per tree.
    pub max_samples: f64,
    pub seed: u64,
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_estimators == 0 {
            return Err(Error::Config("n_estimators must be at least 1".into()));
        }
        if !(self.max_samples > 0.0 && self.max_samples <= 1.0) {
            return Err(Error::Config(format!("max_samples {} outside (0, 1]", self.max_samples)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<RegressionTree>,
}

impl RandomForest {
    /// Tree `t` draws its samples from a generator seeded with
    /// `derive(seed, [t])`.
    pub fn fit(data: &Dataset<'_>, cfg: &ForestConfig) -> Result<Self> {
        cfg.validate()?;
        let n = data.y.len();
        if n == 0 {
            return Err(Error::InsufficientData { found: 0, needed: 1 });
        }
        let m = ((cfg.max_samples * n as f64).round() as usize).clamp(1, n);
        let tree_cfg = TreeConfig {
            max_depth: cfg.max_depth,
            ..Default::default()
        };
        let trees = (0..cfg.n_estimators)
            .map(|t| {
                let mut rng = rng::seeded(rng::derive(cfg.seed, &[t as u64]));
                let samples: Vec<usize> = if cfg.bootstrap {
                    (0..m).map(|_| rng.random_range(0..n)).collect()
                } else if m < n {
                    let mut s = index::sample(&mut rng, n, m).into_vec();
                    s.sort_unstable();
                    s
                } else {
                    (0..n).collect()
                };
                RegressionTree::fit(data, &samples, &tree_cfg)
            })
            .collect::<Result<_>>()?;
        Ok(Self { trees })
    }

    pub fn predict(&self, features: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(features)).sum::<f64>() / self.trees.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// Exhaustive oracle: every feature, every midpoint between distinct
    /// values, SSE of both sides computed directly.
    fn oracle_tree(x: &[f64], nf: usize, y: &[f64], samples: &[usize], depth: usize, max_depth: usize, at: &[f64]) -> f64 {
        let mean = |s: &[usize]| s.iter().map(|&i| y[i]).sum::<f64>() / s.len() as f64;
        let sse = |s: &[usize]| {
            let m = mean(s);
            s.iter().map(|&i| (y[i] - m).powi(2)).sum::<f64>()
        };
        let node_mean = mean(samples);
        if depth == max_depth || samples.len() < 2 {
            return node_mean;
        }
        let eps = TIE_EPS * samples.iter().map(|&i| y[i] * y[i]).sum::<f64>();
        let parent = sse(samples);
        let mut best: Option<(f64, usize, f64)> = None;
        for f in 0..nf {
            let mut vals: Vec<f64> = samples.iter().map(|&i| x[i * nf + f]).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            vals.dedup();
            for w in vals.windows(2) {
                let t = (w[0] + w[1]) / 2.0;
                let (l, r): (Vec<usize>, Vec<usize>) = samples.iter().partition(|&&i| x[i * nf + f] <= t);
                let cost = sse(&l) + sse(&r);
                if cost < best.map_or(parent, |b| b.0) - eps {
                    best = Some((cost, f, t));
                }
            }
        }
        let Some((_, f, t)) = best else { return node_mean };
        let (l, r): (Vec<usize>, Vec<usize>) = samples.iter().partition(|&&i| x[i * nf + f] <= t);
        let side = if at[f] <= t { l } else { r };
        oracle_tree(x, nf, y, &side, depth + 1, max_depth, at)
    }

    #[test]
    fn stump_on_two_values() {
        // y depends on the sign of feature 1 only
        let x = [0.0, -1.0, 0.0, -2.0, 0.0, 1.0, 0.0, 3.0];
        let y = [2.0, 4.0, 10.0, 12.0];
        let data = Dataset::new(&x, 2, &y).unwrap();
        let tree = RegressionTree::fit(&data, &[0, 1, 2, 3], &TreeConfig { max_depth: 1, min_samples_split: 2 }).unwrap();
        assert_eq!(
            tree.nodes[0],
            Node::Split {
                feature: 1,
                threshold: 0.0,
                left: 1,
                right: 2
            }
        );
        assert_eq!(tree.predict(&[0.0, -5.0]), 3.0);
        assert_eq!(tree.predict(&[0.0, 5.0]), 11.0);
    }

    #[test]
    fn tie_prefers_lowest_feature_then_threshold() {
        // both features separate y identically
        let x = [0.0, 0.0, 1.0, 1.0, 2.0, 2.0];
        let y = [0.0, 5.0, 10.0];
        let data = Dataset::new(&x, 2, &y).unwrap();
        let tree = RegressionTree::fit(&data, &[0, 1, 2], &TreeConfig { max_depth: 1, min_samples_split: 2 }).unwrap();
        // thresholds 0.5 and 1.5 give equal SSE (12.5); feature 0, threshold 0.5 wins
        match tree.nodes[0] {
            Node::Split { feature, threshold, .. } => assert_eq!((feature, threshold), (0, 0.5)),
            _ => panic!("expected a split"),
        }
    }

    #[test]
    fn forest_is_seed_deterministic() {
        let x: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64 / 10.0).collect();
        let y: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let data = Dataset::new(&x, 4, &y).unwrap();
        let cfg = ForestConfig {
            n_estimators: 4,
            max_depth: 10,
            bootstrap: true,
            max_samples: 0.5,
            seed: 8,
        };
        let a = RandomForest::fit(&data, &cfg).unwrap();
        let b = RandomForest::fit(&data, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.trees.iter().all(|t| t.depth() <= 10));
        let c = RandomForest::fit(&data, &ForestConfig { seed: 9, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    proptest! {
        #[test]
        fn matches_exhaustive_oracle(rows in 2usize..=32, nf in 1usize..4, depth in 1usize..4, seed: u64) {
            let mut r = crate::rng::seeded(seed);
            let x: Vec<f64> = (0..rows * nf).map(|_| r.random_range(-5.0..5.0)).collect();
            let y: Vec<f64> = (0..rows).map(|_| r.random_range(-10.0..10.0)).collect();
            let data = Dataset::new(&x, nf, &y).unwrap();
            let samples: Vec<usize> = (0..rows).collect();
            let tree = RegressionTree::fit(&data, &samples, &TreeConfig { max_depth: depth, min_samples_split: 2 }).unwrap();
            for probe in 0..rows + 5 {
                let at: Vec<f64> = if probe < rows {
                    x[probe * nf..(probe + 1) * nf].to_vec()
                } else {
                    (0..nf).map(|_| r.random_range(-6.0..6.0)).collect()
                };
                let want = oracle_tree(&x, nf, &y, &samples, 0, depth, &at);
                prop_assert!((tree.predict(&at) - want).abs() < 1e-9);
            }
        }
    }
}
