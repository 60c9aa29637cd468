//! Leaf updates with the feature extractor held fixed.
//!
//! Each round computes, for every weighted sample, the joint posterior over
//! (tree, leaf) under the forest mixture and moves every leaf to the weighted
//! mean and variance of the targets it is responsible for. This is an EM step
//! on `sum_i v_i ln p_F(y_i | x_i)`, so the objective never decreases.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::forest::Forest;
use crate::par;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafUpdateConfig {
    pub iterations: usize,
    pub sigma2_floor: f64,
    /// Leaves with less total responsibility than this keep their parameters.
    pub min_responsibility_mass: f64,
}

impl Default for LeafUpdateConfig {
    fn default() -> Self {
        LeafUpdateConfig {
            iterations: 20,
            sigma2_floor: crate::forest::DEFAULT_SIGMA2_FLOOR,
            min_responsibility_mass: 1e-8,
        }
    }
}

impl LeafUpdateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("leaf update needs at least one iteration"));
        }
        if !(self.sigma2_floor > 0.0) {
            return Err(Error::config("leaf variance floor must be positive"));
        }
        if !(self.min_responsibility_mass >= 0.0) {
            return Err(Error::config("minimum responsibility mass must be non-negative"));
        }
        Ok(())
    }
}

/// Per tree, the posterior over leaves `w_l N(y; mu_l, s2_l) / sum_l' w_l' N(y; mu_l', s2_l')`.
pub fn responsibilities(forest: &Forest, features: &[f64], y: f64) -> Result<Vec<Vec<f64>>> {
    let routes = forest.log_routes(features)?;
    let mut out = Vec::with_capacity(forest.num_trees());
    for (k, (t, r)) in forest.trees().iter().zip(&routes).enumerate() {
        let (post, lp) = t.leaf_posterior_routed(r, y);
        if lp == f64::NEG_INFINITY {
            return Err(Error::numeric(format!("tree {k} assigns zero density to the target")));
        }
        out.push(post);
    }
    Ok(out)
}

/// `sum_i v_i ln p_F(y_i | x_i)` over samples with positive weight.
pub fn weighted_log_likelihood(forest: &Forest, features: &[Vec<f64>], targets: &[f64], weights: &[f64]) -> Result<f64> {
    check_inputs(features, targets, weights)?;
    let mut total = 0.0;
    for ((f, &y), &v) in features.iter().zip(targets).zip(weights) {
        if v > 0.0 {
            total += v * forest.log_density(f, y)?;
        }
    }
    Ok(total)
}

/// Result of [`update_leaves`]: the new forest and the weighted
/// log-likelihood before the first round and after every round.
#[derive(Debug, Clone)]
pub struct LeafUpdate {
    pub forest: Forest,
    pub objective: Vec<f64>,
}

fn check_inputs(features: &[Vec<f64>], targets: &[f64], weights: &[f64]) -> Result<()> {
    if features.len() != targets.len() || weights.len() != targets.len() {
        return Err(Error::Shape {
            what: "leaf update batch",
            expected: targets.len(),
            found: if features.len() != targets.len() { features.len() } else { weights.len() },
        });
    }
    if weights.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::precondition("sample weights must be finite and non-negative"));
    }
    Ok(())
}

pub fn update_leaves(
    forest: &Forest,
    features: &[Vec<f64>],
    targets: &[f64],
    weights: &[f64],
    config: &LeafUpdateConfig,
) -> Result<LeafUpdate> {
    update_leaves_with(forest, features, targets, weights, config, false)
}

/// As [`update_leaves`]; `parallel` spreads the routing over the rayon pool
/// when the `parallel` feature is enabled. The result is identical.
pub fn update_leaves_with(
    forest: &Forest,
    features: &[Vec<f64>],
    targets: &[f64],
    weights: &[f64],
    config: &LeafUpdateConfig,
    parallel: bool,
) -> Result<LeafUpdate> {
    config.validate()?;
    check_inputs(features, targets, weights)?;
    if !(weights.iter().sum::<f64>() > 0.0) {
        return Err(Error::precondition("leaf update needs a positive total sample weight"));
    }
    let active: Vec<usize> = (0..targets.len()).filter(|&i| weights[i] > 0.0).collect();
    // Routing depends only on the fixed features.
    let routes = par::map_indexed(active.len(), parallel, |a| forest.log_routes(&features[active[a]]))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let mut forest = forest.clone();
    let mut objective = Vec::with_capacity(config.iterations + 1);
    let shape: Vec<usize> = forest.trees().iter().map(|t| t.num_leaves()).collect();
    for round in 0..=config.iterations {
        let posts = par::map_indexed(active.len(), parallel, |a| forest.posterior_routed(&routes[a], targets[active[a]]));
        let mut total = 0.0;
        for (post, &i) in posts.iter().zip(&active) {
            if post.log_density == f64::NEG_INFINITY {
                return Err(Error::numeric(format!("sample {i} has zero forest density during leaf update")));
            }
            total += weights[i] * post.log_density;
        }
        objective.push(total);
        if round == config.iterations {
            break;
        }

        let mut mass: Vec<Vec<f64>> = shape.iter().map(|&n| vec![0.0; n]).collect();
        let mut first = mass.clone();
        let mut second = mass.clone();
        for (post, &i) in posts.iter().zip(&active) {
            for (k, row) in post.leaf.iter().enumerate() {
                let wk = weights[i] * post.tree_weights[k];
                for (l, &r) in row.iter().enumerate() {
                    mass[k][l] += wk * r;
                    first[k][l] += wk * r * targets[i];
                }
            }
        }
        let means: Vec<Vec<f64>> = mass
            .iter()
            .zip(&first)
            .map(|(m, f)| m.iter().zip(f).map(|(m, f)| if *m > 0.0 { f / m } else { 0.0 }).collect())
            .collect();
        for (post, &i) in posts.iter().zip(&active) {
            for (k, row) in post.leaf.iter().enumerate() {
                let wk = weights[i] * post.tree_weights[k];
                for (l, &r) in row.iter().enumerate() {
                    let d = targets[i] - means[k][l];
                    second[k][l] += wk * r * d * d;
                }
            }
        }
        for (k, tree) in forest.trees_mut().iter_mut().enumerate() {
            for (l, leaf) in tree.leaves_mut().iter_mut().enumerate() {
                let m = mass[k][l];
                if m <= 0.0 || m < config.min_responsibility_mass {
                    continue;
                }
                leaf.mu = means[k][l];
                leaf.sigma2 = (second[k][l] / m).max(config.sigma2_floor);
            }
        }
    }
    Ok(LeafUpdate { forest, objective })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{LeafParams, Tree};

    fn leaf(mu: f64, sigma2: f64) -> LeafParams {
        LeafParams { mu, sigma2 }
    }

    #[test]
    fn single_leaf_tree_takes_all_responsibility() {
        let f = Forest::new(vec![Tree::new(0, vec![], vec![leaf(0.0, 1.0)]).unwrap()], 1, 1e-4).unwrap();
        assert_eq!(responsibilities(&f, &[0.3], 2.0).unwrap(), vec![vec![1.0]]);
    }

    #[test]
    fn dominant_component_takes_responsibility() {
        let t = Tree::new(1, vec![0], vec![leaf(0.0, 1.0), leaf(100.0, 1.0)]).unwrap();
        let f = Forest::new(vec![t], 1, 1e-4).unwrap();
        let r = responsibilities(&f, &[0.0], 0.0).unwrap();
        assert!((r[0][0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn single_leaf_weighted_mean() {
        let f = Forest::new(vec![Tree::new(0, vec![], vec![leaf(0.0, 1.0)]).unwrap()], 1, 1e-4).unwrap();
        let feats = vec![vec![0.0]; 3];
        let cfg = LeafUpdateConfig {
            iterations: 1,
            ..Default::default()
        };
        let out = update_leaves(&f, &feats, &[0.0, 0.0, 4.0], &[1.0, 1.0, 3.0], &cfg).unwrap();
        let l = out.forest.trees()[0].leaves()[0];
        assert!((l.mu - 2.4).abs() < 1e-14);
        // Weighted variance: (2 * 2.4^2 + 3 * 1.6^2) / 5 = 3.84.
        assert!((l.sigma2 - 3.84).abs() < 1e-12);
    }

    #[test]
    fn constant_targets_collapse_to_floor() {
        let t = Tree::new(2, vec![0, 1, 0], vec![leaf(-1.0, 2.0), leaf(0.5, 1.0), leaf(3.0, 0.2), leaf(7.0, 4.0)]).unwrap();
        let f = Forest::new(vec![t.clone(), t], 2, 1e-4).unwrap();
        let feats: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 0.3 - 1.0, 0.5 - i as f64 * 0.2]).collect();
        let out = update_leaves(&f, &feats, &[1.5; 6], &[1.0, 0.2, 0.7, 1.0, 0.0, 0.4], &LeafUpdateConfig::default()).unwrap();
        for t in out.forest.trees() {
            for l in t.leaves() {
                assert!((l.mu - 1.5).abs() < 1e-12);
                assert_eq!(l.sigma2, 1e-4);
            }
        }
    }

    #[test]
    fn zero_weights_rejected() {
        let f = Forest::new(vec![Tree::new(0, vec![], vec![leaf(0.0, 1.0)]).unwrap()], 1, 1e-4).unwrap();
        let r = update_leaves(&f, &[vec![0.0]], &[1.0], &[0.0], &LeafUpdateConfig::default());
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn starved_leaf_is_untouched() {
        // Saturated routing sends everything left; the right leaf gets no mass.
        let t = Tree::new(1, vec![0], vec![leaf(0.0, 1.0), leaf(9.0, 3.0)]).unwrap();
        let f = Forest::new(vec![t], 1, 1e-4).unwrap();
        let feats = vec![vec![1e3]; 2];
        let out = update_leaves(&f, &feats, &[1.0, 2.0], &[1.0, 1.0], &LeafUpdateConfig::default()).unwrap();
        assert_eq!(out.forest.trees()[0].leaves()[1], leaf(9.0, 3.0));
        assert!((out.forest.trees()[0].leaves()[0].mu - 1.5).abs() < 1e-12);
    }
}
