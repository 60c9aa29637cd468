//! Soft regression trees with Gaussian leaves and their forest average.
//!
//! Trees are complete binary trees stored in heap order: split node `n` has
//! children `2n + 1` (left) and `2n + 2` (right); the `2^d` leaves follow the
//! `2^d - 1` split nodes. A split node sends a sample left with probability
//! `logistic(features[phi(n)])`.
//!
//! Densities are evaluated in log space so that far-away targets do not
//! underflow to zero before the mixture is formed.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::math::{self, LN_2PI};
use crate::{Error, Result};

pub const DEFAULT_SIGMA2_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafParams {
    pub mu: f64,
    pub sigma2: f64,
}

impl LeafParams {
    fn ln_pdf(&self, y: f64) -> f64 {
        math::ln_normal_pdf(y, self.mu, self.sigma2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    depth: usize,
    split_features: Vec<usize>,
    leaves: Vec<LeafParams>,
}

impl Tree {
    pub fn new(depth: usize, split_features: Vec<usize>, leaves: Vec<LeafParams>) -> Result<Self> {
        if depth > 30 {
            return Err(Error::config("tree depth above 30 is not supported"));
        }
        let n_leaves = 1usize << depth;
        if split_features.len() != n_leaves - 1 {
            return Err(Error::Shape {
                what: "split feature map",
                expected: n_leaves - 1,
                found: split_features.len(),
            });
        }
        if leaves.len() != n_leaves {
            return Err(Error::Shape {
                what: "tree leaves",
                expected: n_leaves,
                found: leaves.len(),
            });
        }
        Ok(Tree {
            depth,
            split_features,
            leaves,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn num_splits(&self) -> usize {
        self.split_features.len()
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn split_features(&self) -> &[usize] {
        &self.split_features
    }

    pub fn leaves(&self) -> &[LeafParams] {
        &self.leaves
    }

    pub(crate) fn leaves_mut(&mut self) -> &mut [LeafParams] {
        &mut self.leaves
    }

    /// Log-probabilities of reaching each leaf.
    pub fn log_route(&self, features: &[f64]) -> Result<Vec<f64>> {
        let s = self.num_splits();
        let mut reach = vec![0.0; 2 * s + 1];
        for n in 0..s {
            let a = self.split_input(features, n)?;
            reach[2 * n + 1] = reach[n] + math::ln_logistic(a);
            reach[2 * n + 2] = reach[n] + math::ln_logistic(-a);
        }
        reach.drain(..s);
        Ok(reach)
    }

    fn split_input(&self, features: &[f64], node: usize) -> Result<f64> {
        let j = self.split_features[node];
        features.get(j).copied().ok_or(Error::Shape {
            what: "split feature index",
            expected: features.len(),
            found: j,
        })
    }

    fn ln_terms(&self, log_route: &[f64], y: f64) -> Vec<f64> {
        log_route.iter().zip(&self.leaves).map(|(lw, leaf)| lw + leaf.ln_pdf(y)).collect()
    }

    /// `ln p_T(y | x)` given precomputed log routing.
    pub fn log_density_routed(&self, log_route: &[f64], y: f64) -> f64 {
        math::ln_sum_exp(&self.ln_terms(log_route, y))
    }

    /// Posterior over leaves, `r_l = w_l N(y; mu_l, s2_l) / p_T(y)`, and `ln p_T(y)`.
    pub fn leaf_posterior_routed(&self, log_route: &[f64], y: f64) -> (Vec<f64>, f64) {
        let mut terms = self.ln_terms(log_route, y);
        let lp = math::ln_sum_exp(&terms);
        if lp == f64::NEG_INFINITY {
            return (terms.iter().map(|_| 0.0).collect(), lp);
        }
        terms.iter_mut().for_each(|t| *t = math::exp(*t - lp));
        (terms, lp)
    }

    /// Gradient of `ln p_T(y)` with respect to every split input, in node order.
    fn split_input_grad(&self, features: &[f64], posterior: &[f64]) -> Result<Vec<f64>> {
        let s = self.num_splits();
        let mut mass = vec![0.0; 2 * s + 1];
        mass[s..].copy_from_slice(posterior);
        for n in (0..s).rev() {
            mass[n] = mass[2 * n + 1] + mass[2 * n + 2];
        }
        (0..s)
            .map(|n| {
                let p = math::logistic(self.split_input(features, n)?);
                Ok((1.0 - p) * mass[2 * n + 1] - p * mass[2 * n + 2])
            })
            .collect()
    }
}

/// Per-leaf reach probabilities of one tree and the split probabilities that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Routing {
    pub split_probabilities: Vec<f64>,
    pub leaf_probabilities: Vec<f64>,
}

/// `logistic(features[phi(node)])`.
pub fn split_probability(features: &[f64], tree: &Tree, node: usize) -> Result<f64> {
    if node >= tree.num_splits() {
        return Err(Error::Shape {
            what: "split node",
            expected: tree.num_splits(),
            found: node,
        });
    }
    tree.split_input(features, node).map(math::logistic)
}

pub fn route(features: &[f64], tree: &Tree) -> Result<Routing> {
    let s = tree.num_splits();
    let split_probabilities = (0..s).map(|n| split_probability(features, tree, n)).collect::<Result<Vec<_>>>()?;
    let mut reach = vec![1.0; 2 * s + 1];
    for n in 0..s {
        let p = split_probabilities[n];
        reach[2 * n + 1] = reach[n] * p;
        reach[2 * n + 2] = reach[n] * (1.0 - p);
    }
    Ok(Routing {
        split_probabilities,
        leaf_probabilities: reach.split_off(s),
    })
}

/// `p_T(y | x) = sum_l w_l N(y; mu_l, s2_l)`.
pub fn tree_density(features: &[f64], tree: &Tree, y: f64) -> Result<f64> {
    Ok(math::exp(tree.log_density_routed(&tree.log_route(features)?, y)))
}

/// `H_T ~ 1/2 sum_l w_l (ln(2 pi s2_l) + 1)`, a lower bound on the entropy of
/// the tree's predictive mixture.
pub fn entropy_lower_bound(features: &[f64], tree: &Tree) -> Result<f64> {
    let r = route(features, tree)?;
    Ok(entropy_bound_from_weights(tree, &r.leaf_probabilities))
}

fn entropy_bound_from_weights(tree: &Tree, weights: &[f64]) -> f64 {
    0.5 * weights
        .iter()
        .zip(tree.leaves())
        .map(|(w, leaf)| w * (LN_2PI + math::ln(leaf.sigma2) + 1.0))
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub estimate: f64,
    pub standard_error: f64,
}

/// Monte-Carlo estimate of `-E[ln p_T(Y)]` with `Y` drawn from the tree's
/// predictive mixture.
pub fn entropy_monte_carlo(features: &[f64], tree: &Tree, samples: usize, seed: u64) -> Result<MonteCarloEstimate> {
    if samples < 1000 {
        return Err(Error::precondition("Monte-Carlo entropy needs at least 1000 samples"));
    }
    let log_route = tree.log_route(features)?;
    let weights: Vec<f64> = log_route.iter().map(|&l| math::exp(l)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..samples {
        let u: f64 = rng.random::<f64>() * weights.iter().sum::<f64>();
        let mut acc = 0.0;
        let mut leaf = tree.num_leaves() - 1;
        for (l, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                leaf = l;
                break;
            }
        }
        let z: f64 = rng.sample(StandardNormal);
        let p = &tree.leaves[leaf];
        let y = p.mu + math::sqrt(p.sigma2) * z;
        let v = -tree.log_density_routed(&log_route, y);
        sum += v;
        sum_sq += v * v;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(MonteCarloEstimate {
        estimate: mean,
        standard_error: math::sqrt(var / n),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    trees: Vec<Tree>,
    feature_dim: usize,
    sigma2_floor: f64,
}

/// Everything the trainer needs about one sample under the current forest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleEval {
    /// `ln p_F(y | x)`.
    pub log_density: f64,
    /// Forest-average entropy lower bound.
    pub entropy: f64,
    /// Mixture mean.
    pub prediction: f64,
}

impl Forest {
    pub fn new(trees: Vec<Tree>, feature_dim: usize, sigma2_floor: f64) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::config("a forest needs at least one tree"));
        }
        if !(sigma2_floor > 0.0) {
            return Err(Error::config("variance floor must be positive"));
        }
        let depth = trees[0].depth;
        for t in &trees {
            if t.depth != depth {
                return Err(Error::config("all trees must share one depth"));
            }
            if let Some(&j) = t.split_features.iter().find(|&&j| j >= feature_dim) {
                return Err(Error::Shape {
                    what: "split feature index",
                    expected: feature_dim,
                    found: j,
                });
            }
            if t.leaves.iter().any(|l| !l.mu.is_finite() || !(l.sigma2 >= sigma2_floor) || !l.sigma2.is_finite()) {
                return Err(Error::config("leaf means must be finite and variances at least the floor"));
            }
        }
        Ok(Forest {
            trees,
            feature_dim,
            sigma2_floor,
        })
    }

    /// Random split-feature maps (without replacement when there are enough
    /// features, otherwise with replacement), leaf means drawn from `targets`
    /// and leaf variances equal to the target variance.
    pub fn init(num_trees: usize, depth: usize, feature_dim: usize, targets: &[f64], seed: u64) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::precondition("leaf initialisation needs targets"));
        }
        if num_trees == 0 || feature_dim == 0 {
            return Err(Error::config("tree count and feature dimension must be positive"));
        }
        if depth > 30 {
            return Err(Error::config("tree depth above 30 is not supported"));
        }
        let n = targets.len() as f64;
        let mean = targets.iter().sum::<f64>() / n;
        let var = targets.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
        let sigma2 = var.max(DEFAULT_SIGMA2_FLOOR);
        let splits = (1usize << depth) - 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trees = (0..num_trees)
            .map(|_| {
                let phi = if feature_dim >= splits {
                    let mut pool: Vec<usize> = (0..feature_dim).collect();
                    for i in 0..splits {
                        let j = rng.random_range(i..feature_dim);
                        pool.swap(i, j);
                    }
                    pool.truncate(splits);
                    pool
                } else {
                    (0..splits).map(|_| rng.random_range(0..feature_dim)).collect()
                };
                let leaves = (0..=splits)
                    .map(|_| LeafParams {
                        mu: targets[rng.random_range(0..targets.len())],
                        sigma2,
                    })
                    .collect();
                Tree::new(depth, phi, leaves)
            })
            .collect::<Result<Vec<_>>>()?;
        Forest::new(trees, feature_dim, DEFAULT_SIGMA2_FLOOR)
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub(crate) fn trees_mut(&mut self) -> &mut [Tree] {
        &mut self.trees
    }

    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn depth(&self) -> usize {
        self.trees[0].depth
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn sigma2_floor(&self) -> f64 {
        self.sigma2_floor
    }

    fn check_features(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.feature_dim {
            return Err(Error::Shape {
                what: "forest features",
                expected: self.feature_dim,
                found: features.len(),
            });
        }
        Ok(())
    }

    /// Log routing of every tree.
    pub fn log_routes(&self, features: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_features(features)?;
        self.trees.iter().map(|t| t.log_route(features)).collect()
    }

    /// `ln p_F(y | x)` from precomputed log routes.
    pub fn log_density_routed(&self, log_routes: &[Vec<f64>], y: f64) -> f64 {
        let per_tree: Vec<f64> = self
            .trees
            .iter()
            .zip(log_routes)
            .map(|(t, r)| t.log_density_routed(r, y))
            .collect();
        math::ln_sum_exp(&per_tree) - math::ln(self.trees.len() as f64)
    }

    pub fn log_density(&self, features: &[f64], y: f64) -> Result<f64> {
        Ok(self.log_density_routed(&self.log_routes(features)?, y))
    }

    /// `p_F(y | x) = (1/K) sum_k p_Tk(y | x)`.
    pub fn density(&self, features: &[f64], y: f64) -> Result<f64> {
        self.log_density(features, y).map(math::exp)
    }

    /// Mixture mean `(1/K) sum_k sum_l w_kl mu_kl`.
    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        self.check_features(features)?;
        let mut total = 0.0;
        for t in &self.trees {
            let r = route(features, t)?;
            total += r.leaf_probabilities.iter().zip(&t.leaves).map(|(w, l)| w * l.mu).sum::<f64>();
        }
        Ok(total / self.trees.len() as f64)
    }

    /// Forest entropy: mean of the per-tree lower bounds.
    pub fn entropy(&self, features: &[f64]) -> Result<f64> {
        self.check_features(features)?;
        let mut total = 0.0;
        for t in &self.trees {
            total += entropy_lower_bound(features, t)?;
        }
        Ok(total / self.trees.len() as f64)
    }

    pub fn evaluate(&self, features: &[f64], y: f64) -> Result<SampleEval> {
        self.check_features(features)?;
        let k = self.trees.len() as f64;
        let mut entropy = 0.0;
        let mut prediction = 0.0;
        let mut per_tree = Vec::with_capacity(self.trees.len());
        for t in &self.trees {
            let lr = t.log_route(features)?;
            let w: Vec<f64> = lr.iter().map(|&l| math::exp(l)).collect();
            entropy += entropy_bound_from_weights(t, &w);
            prediction += w.iter().zip(&t.leaves).map(|(w, l)| w * l.mu).sum::<f64>();
            per_tree.push(t.log_density_routed(&lr, y));
        }
        Ok(SampleEval {
            log_density: math::ln_sum_exp(&per_tree) - math::ln(k),
            entropy: entropy / k,
            prediction: prediction / k,
        })
    }

    /// Joint posterior over (tree, leaf) from precomputed log routes:
    /// `tree_weights[k] = p_Tk / sum_j p_Tj` and per-tree leaf posteriors.
    pub fn posterior_routed(&self, log_routes: &[Vec<f64>], y: f64) -> Posterior {
        let mut leaf = Vec::with_capacity(self.trees.len());
        let mut ln_tree = Vec::with_capacity(self.trees.len());
        for (t, r) in self.trees.iter().zip(log_routes) {
            let (post, lp) = t.leaf_posterior_routed(r, y);
            leaf.push(post);
            ln_tree.push(lp);
        }
        let total = math::ln_sum_exp(&ln_tree);
        let tree_weights = if total == f64::NEG_INFINITY {
            vec![0.0; ln_tree.len()]
        } else {
            ln_tree.iter().map(|&l| math::exp(l - total)).collect()
        };
        Posterior {
            tree_weights,
            leaf,
            log_density: total - math::ln(self.trees.len() as f64),
        }
    }

    /// `d ln p_F(y | x) / d features`.
    pub fn loglik_feature_grad(&self, features: &[f64], y: f64) -> Result<Vec<f64>> {
        let routes = self.log_routes(features)?;
        let post = self.posterior_routed(&routes, y);
        if post.log_density == f64::NEG_INFINITY {
            return Err(Error::numeric("forest density is zero at the sample target"));
        }
        let mut grad = vec![0.0; self.feature_dim];
        for ((t, resp), &wk) in self.trees.iter().zip(&post.leaf).zip(&post.tree_weights) {
            if wk == 0.0 {
                continue;
            }
            for (n, g) in t.split_input_grad(features, resp)?.into_iter().enumerate() {
                grad[t.split_features[n]] += wk * g;
            }
        }
        Ok(grad)
    }
}

/// Posterior responsibilities of one sample under a forest.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    /// Share of each tree in `sum_k p_Tk(y)`; sums to 1.
    pub tree_weights: Vec<f64>,
    /// Per tree, the posterior over its leaves; each row sums to 1.
    pub leaf: Vec<Vec<f64>>,
    /// `ln p_F(y | x)`.
    pub log_density: f64,
}

/// `(1/K) sum_k p_Tk(y | x)`.
pub fn forest_density(features: &[f64], forest: &Forest, y: f64) -> Result<f64> {
    forest.density(features, y)
}

pub fn predict(features: &[f64], forest: &Forest) -> Result<f64> {
    forest.predict(features)
}

pub fn loglik_feature_grad(features: &[f64], forest: &Forest, y: f64) -> Result<Vec<f64>> {
    forest.loglik_feature_grad(features, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(mu: f64, sigma2: f64) -> LeafParams {
        LeafParams { mu, sigma2 }
    }

    fn depth1(mu: [f64; 2]) -> Tree {
        Tree::new(1, vec![0], vec![leaf(mu[0], 1.0), leaf(mu[1], 1.0)]).unwrap()
    }

    #[test]
    fn split_probability_values() {
        let t = depth1([0.0, 0.0]);
        assert_eq!(split_probability(&[0.0], &t, 0).unwrap(), 0.5);
        assert!((split_probability(&[1e3], &t, 0).unwrap() - 1.0).abs() < 1e-10);
        assert!((split_probability(&[3f64.ln()], &t, 0).unwrap() - 0.75).abs() < 1e-15);
        assert!(split_probability(&[0.0], &t, 1).is_err());
        let bad = Tree::new(1, vec![3], vec![leaf(0.0, 1.0); 2]).unwrap();
        assert!(matches!(split_probability(&[0.0], &bad, 0), Err(Error::Shape { .. })));
    }

    #[test]
    fn routing_single_split() {
        let t = depth1([0.0, 0.0]);
        let a = (0.7f64 / 0.3).ln();
        let r = route(&[a], &t).unwrap();
        assert!((r.leaf_probabilities[0] - 0.7).abs() < 1e-12);
        assert!((r.leaf_probabilities[1] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn routing_depth2_hand_product() {
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let t = Tree::new(2, vec![0, 1, 2], vec![leaf(0.0, 1.0); 4]).unwrap();
        let r = route(&[logit(0.9), logit(0.6), logit(0.2)], &t).unwrap();
        for (w, e) in r.leaf_probabilities.iter().zip([0.54, 0.36, 0.02, 0.08]) {
            assert!((w - e).abs() < 1e-12, "{:?}", r.leaf_probabilities);
        }
    }

    #[test]
    fn routing_uniform_at_zero() {
        let t = Tree::new(3, vec![0; 7], vec![leaf(0.0, 1.0); 8]).unwrap();
        let r = route(&[0.0], &t).unwrap();
        assert!(r.leaf_probabilities.iter().all(|&w| w == 0.125));
    }

    #[test]
    fn log_route_matches_route() {
        let t = Tree::new(2, vec![0, 1, 0], vec![leaf(0.0, 1.0); 4]).unwrap();
        let f = [0.3, -1.7];
        let r = route(&f, &t).unwrap();
        for (lw, w) in t.log_route(&f).unwrap().iter().zip(&r.leaf_probabilities) {
            assert!((lw.exp() - w).abs() < 1e-14);
        }
    }

    #[test]
    fn standard_normal_peak() {
        let t = Tree::new(0, vec![], vec![leaf(0.0, 1.0)]).unwrap();
        let p = tree_density(&[], &t, 0.0).unwrap();
        assert!((p - 0.398_942_280_401_432_7).abs() < 1e-15);
    }

    #[test]
    fn identical_leaves_ignore_routing() {
        let t = Tree::new(1, vec![0], vec![leaf(1.0, 2.0), leaf(1.0, 2.0)]).unwrap();
        let a = tree_density(&[-3.0], &t, 0.4).unwrap();
        let b = tree_density(&[5.0], &t, 0.4).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn forest_density_is_tree_mean() {
        let t = depth1([0.0, 2.0]);
        let single = Forest::new(vec![t.clone()], 1, 1e-4).unwrap();
        let triple = Forest::new(vec![t.clone(), t.clone(), t], 1, 1e-4).unwrap();
        let (a, b) = (single.density(&[0.2], 0.7).unwrap(), triple.density(&[0.2], 0.7).unwrap());
        assert!((a - b).abs() < 1e-15);

        // Two single-leaf trees with densities 0.2 and 0.4 at y = mu.
        let s2 = |p: f64| 1.0 / (2.0 * core::f64::consts::PI * p * p);
        let f = Forest::new(
            vec![
                Tree::new(0, vec![], vec![leaf(0.0, s2(0.2))]).unwrap(),
                Tree::new(0, vec![], vec![leaf(0.0, s2(0.4))]).unwrap(),
            ],
            1,
            1e-4,
        )
        .unwrap();
        assert!((f.density(&[0.0], 0.0).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn predict_weighted_mean() {
        let f = Forest::new(vec![depth1([0.0, 4.0])], 1, 1e-4).unwrap();
        // logistic(-ln 3) = 0.25 to the left.
        let y = f.predict(&[-(3f64.ln())]).unwrap();
        assert!((y - 3.0).abs() < 1e-12);
        let c = Forest::new(vec![depth1([2.5, 2.5])], 1, 1e-4).unwrap();
        assert!((c.predict(&[0.9]).unwrap() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn entropy_bound_closed_forms() {
        let two_pi = 2.0 * core::f64::consts::PI;
        let t = Tree::new(0, vec![], vec![leaf(0.0, 1.0 / two_pi)]).unwrap();
        assert!((entropy_lower_bound(&[], &t).unwrap() - 0.5).abs() < 1e-15);
        let t = Tree::new(0, vec![], vec![leaf(0.0, 1.0)]).unwrap();
        assert!((entropy_lower_bound(&[], &t).unwrap() - 1.418_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_entropy_closed_forms() {
        let h1 = 0.5 * (two_pi_ln() + 1.0);
        let t = Tree::new(0, vec![], vec![leaf(0.0, 1.0)]).unwrap();
        let mc = entropy_monte_carlo(&[], &t, 20_000, 3).unwrap();
        assert!((mc.estimate - h1).abs() <= 3.0 * mc.standard_error, "{mc:?}");
        let sep = Tree::new(1, vec![0], vec![leaf(-50.0, 1.0), leaf(50.0, 1.0)]).unwrap();
        let mc = entropy_monte_carlo(&[0.0], &sep, 20_000, 4).unwrap();
        assert!((mc.estimate - (h1 + core::f64::consts::LN_2)).abs() <= 3.0 * mc.standard_error, "{mc:?}");
        assert_eq!(mc, entropy_monte_carlo(&[0.0], &sep, 20_000, 4).unwrap());
        assert!(entropy_monte_carlo(&[0.0], &sep, 999, 4).is_err());
    }

    fn two_pi_ln() -> f64 {
        (2.0 * core::f64::consts::PI).ln()
    }

    #[test]
    fn symmetric_tree_has_zero_gradient() {
        let t = Tree::new(2, vec![0, 1, 0], vec![leaf(1.0, 0.5); 4]).unwrap();
        let f = Forest::new(vec![t], 2, 1e-4).unwrap();
        let g = f.loglik_feature_grad(&[0.3, -0.8], 2.0).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15), "{g:?}");
    }

    #[test]
    fn depth1_gradient_matches_hand_formula() {
        // p = s N1 + (1 - s) N2, d ln p / da = s (1 - s) (N1 - N2) / p.
        let t = Tree::new(1, vec![0], vec![leaf(0.0, 1.0), leaf(3.0, 2.0)]).unwrap();
        let f = Forest::new(vec![t], 1, 1e-4).unwrap();
        let (a, y): (f64, f64) = (0.4, 1.2);
        let s = 1.0 / (1.0 + (-a).exp());
        let n = |mu: f64, v: f64| (-(y - mu) * (y - mu) / (2.0 * v)).exp() / (2.0 * core::f64::consts::PI * v).sqrt();
        let (n1, n2) = (n(0.0, 1.0), n(3.0, 2.0));
        let p = s * n1 + (1.0 - s) * n2;
        let expected = s * (1.0 - s) * (n1 - n2) / p;
        let g = f.loglik_feature_grad(&[a], y).unwrap();
        assert!((g[0] - expected).abs() < 1e-14, "{} vs {}", g[0], expected);
    }

    #[test]
    fn far_targets_keep_finite_gradients() {
        // The density underflows in linear space but not in log space.
        let f = Forest::new(vec![depth1([0.0, 1.0])], 1, 1e-4).unwrap();
        let g = f.loglik_feature_grad(&[0.2], 1e6).unwrap();
        assert!(g[0].is_finite() && g[0] < 0.0);
        assert!(matches!(f.loglik_feature_grad(&[0.2], f64::INFINITY), Err(Error::Numeric(_))));
    }

    #[test]
    fn init_assigns_distinct_features_when_possible() {
        let ys = [0.0, 1.0, 2.0, 3.0];
        let f = Forest::init(3, 2, 8, &ys, 5).unwrap();
        for t in f.trees() {
            let mut phi = t.split_features().to_vec();
            phi.sort_unstable();
            phi.dedup();
            assert_eq!(phi.len(), 3);
            assert!(t.leaves().iter().all(|l| ys.contains(&l.mu)));
        }
        let crowded = Forest::init(2, 3, 2, &ys, 5).unwrap();
        assert!(crowded.trees().iter().all(|t| t.split_features().iter().all(|&j| j < 2)));
        assert_ne!(f.trees()[0].split_features(), f.trees()[1].split_features());
    }

    #[test]
    fn forest_validation() {
        let t = Tree::new(1, vec![2], vec![leaf(0.0, 1.0); 2]).unwrap();
        assert!(Forest::new(vec![t], 2, 1e-4).is_err());
        let t = Tree::new(1, vec![0], vec![leaf(0.0, 1e-6); 2]).unwrap();
        assert!(Forest::new(vec![t], 2, 1e-4).is_err());
        assert!(Forest::new(vec![], 2, 1e-4).is_err());
        let a = Tree::new(1, vec![0], vec![leaf(0.0, 1.0); 2]).unwrap();
        let b = Tree::new(0, vec![], vec![leaf(0.0, 1.0)]).unwrap();
        assert!(Forest::new(vec![a, b], 2, 1e-4).is_err());
    }
}
