//! Samples, datasets, target groups and the synthetic imbalanced benchmark.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::math;
use crate::{Error, Result};

/// Where a sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Original,
    /// A duplicate of the original sample with this id.
    AugmentedCopyOf(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub x: Vec<f64>,
    pub y: f64,
    pub origin: Origin,
}

impl Sample {
    pub fn original(id: u64, x: Vec<f64>, y: f64) -> Self {
        Sample {
            id,
            x,
            y,
            origin: Origin::Original,
        }
    }

    pub fn is_original(&self) -> bool {
        self.origin == Origin::Original
    }
}

/// An ordered collection of samples sharing a feature dimension, with the
/// bin edges that partition the target range into groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    dim: usize,
    group_edges: Vec<f64>,
}

impl Dataset {
    /// Validates every invariant: finite values, matching dimensions, unique
    /// ids, strictly increasing edges that cover every target, and copies
    /// that agree with their origin.
    pub fn new(samples: Vec<Sample>, dim: usize, group_edges: Vec<f64>) -> Result<Self> {
        if group_edges.len() < 2 {
            return Err(Error::config("at least two group edges are required"));
        }
        if group_edges.iter().any(|e| !e.is_finite()) || group_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("group edges must be finite and strictly increasing"));
        }
        let (lo, hi) = (group_edges[0], group_edges[group_edges.len() - 1]);
        let mut by_id = BTreeMap::new();
        for s in &samples {
            if s.x.len() != dim {
                return Err(Error::Shape {
                    what: "sample features",
                    expected: dim,
                    found: s.x.len(),
                });
            }
            if !s.y.is_finite() || s.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("sample {} has non-finite values", s.id)));
            }
            if s.y < lo || s.y > hi {
                return Err(Error::Range { id: s.id, y: s.y, lo, hi });
            }
            if by_id.insert(s.id, s).is_some() {
                return Err(Error::config(format!("duplicate sample id {}", s.id)));
            }
        }
        for s in &samples {
            if let Origin::AugmentedCopyOf(src) = s.origin {
                match by_id.get(&src) {
                    Some(o) if o.is_original() && o.x == s.x && o.y == s.y => {}
                    _ => {
                        return Err(Error::config(format!(
                            "augmented sample {} does not match an original sample {src}",
                            s.id
                        )))
                    }
                }
            }
        }
        Ok(Dataset {
            samples,
            dim,
            group_edges,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn group_edges(&self) -> &[f64] {
        &self.group_edges
    }

    pub fn num_groups(&self) -> usize {
        self.group_edges.len() - 1
    }

    pub fn targets(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.y).collect()
    }

    pub fn original_count(&self) -> usize {
        self.samples.iter().filter(|s| s.is_original()).count()
    }

    pub fn augmented_count(&self) -> usize {
        self.len() - self.original_count()
    }

    /// Same samples with different group edges.
    pub fn with_group_edges(&self, group_edges: Vec<f64>) -> Result<Self> {
        Dataset::new(self.samples.clone(), self.dim, group_edges)
    }

    fn next_id(&self) -> u64 {
        self.samples.iter().map(|s| s.id + 1).max().unwrap_or(0)
    }
}

/// Group index of `y` under left-closed, right-open bins with a right-closed
/// final bin. `None` when `y` lies outside the edges.
pub fn group_of(edges: &[f64], y: f64) -> Option<usize> {
    let n = edges.len();
    if n < 2 || !(y >= edges[0] && y <= edges[n - 1]) {
        return None;
    }
    // Number of interior edges <= y.
    let k = edges[1..n - 1].partition_point(|&e| e <= y);
    Some(k)
}

/// Maps every sample id to its group.
pub fn assign_groups(ds: &Dataset) -> Result<BTreeMap<u64, usize>> {
    group_indices(ds).map(|g| ds.samples.iter().map(|s| s.id).zip(g).collect())
}

/// Group index per sample, in dataset order.
pub fn group_indices(ds: &Dataset) -> Result<Vec<usize>> {
    let edges = ds.group_edges();
    ds.samples
        .iter()
        .map(|s| {
            group_of(edges, s.y).ok_or(Error::Range {
                id: s.id,
                y: s.y,
                lo: edges[0],
                hi: edges[edges.len() - 1],
            })
        })
        .collect()
}

/// Equal-width edges on a `width` grid that cover every value in `ys`.
pub fn covering_edges(ys: &[f64], width: f64) -> Result<Vec<f64>> {
    if !(width > 0.0 && width.is_finite()) {
        return Err(Error::config("group width must be positive"));
    }
    if ys.is_empty() {
        return Err(Error::precondition("cannot derive group edges from no targets"));
    }
    let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let first = math::floor(lo / width) as i64;
    let mut last = math::ceil(hi / width) as i64;
    if last <= first {
        last = first + 1;
    }
    Ok((first..=last).map(|k| k as f64 * width).collect())
}

/// How the feature vector is produced from the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mapping {
    /// `x_j = tanh((y - c_j) / w)` with centres `c_j` spread over the target range.
    MonotoneSmooth,
    /// `x_j = clamp((y - c_j) / w, -1, 1)`.
    Piecewise,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureComponent {
    pub mean: f64,
    pub std: f64,
    pub proportion: f64,
}

/// Generative description of an imbalanced regression task: targets from a
/// Gaussian mixture, features a noisy deterministic function of the target.
#[derive(Debug, Clone, PartialEq)]
pub struct ImbalanceSpec {
    pub components: Vec<MixtureComponent>,
    pub dim: usize,
    pub noise_std: f64,
    pub mapping: Mapping,
    pub group_width: f64,
}

impl ImbalanceSpec {
    /// The 90/10 two-component benchmark used throughout the tests.
    pub fn two_component_benchmark() -> Self {
        ImbalanceSpec {
            components: alloc::vec![
                MixtureComponent { mean: 0.0, std: 1.0, proportion: 0.9 },
                MixtureComponent { mean: 5.0, std: 1.0, proportion: 0.1 },
            ],
            dim: 8,
            noise_std: 0.1,
            mapping: Mapping::MonotoneSmooth,
            group_width: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::config("mixture needs at least one component"));
        }
        for c in &self.components {
            if !(c.proportion > 0.0) || !c.mean.is_finite() || !(c.std >= 0.0) || !c.std.is_finite() {
                return Err(Error::config("component proportions must be positive and moments finite"));
            }
        }
        let total: f64 = self.components.iter().map(|c| c.proportion).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("component proportions sum to {total}, not 1")));
        }
        if self.dim == 0 {
            return Err(Error::config("feature dimension must be at least 1"));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::config("noise std must be non-negative"));
        }
        if !(self.group_width > 0.0) {
            return Err(Error::config("group width must be positive"));
        }
        Ok(())
    }

    /// Range spanned by the feature centres: every component mean +- 2 std.
    fn centre_range(&self) -> (f64, f64) {
        let lo = self.components.iter().map(|c| c.mean - 2.0 * c.std).fold(f64::INFINITY, f64::min);
        let hi = self.components.iter().map(|c| c.mean + 2.0 * c.std).fold(f64::NEG_INFINITY, f64::max);
        if hi - lo < 1e-9 {
            (lo - 1.0, hi + 1.0)
        } else {
            (lo, hi)
        }
    }

    fn features(&self, y: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let (lo, hi) = self.centre_range();
        let d = self.dim;
        let width = (hi - lo) / d as f64;
        (0..d)
            .map(|j| {
                let centre = lo + (j as f64 + 0.5) * width;
                let z = (y - centre) / width;
                let clean = match self.mapping {
                    Mapping::MonotoneSmooth => math::tanh(z),
                    Mapping::Piecewise => z.clamp(-1.0, 1.0),
                };
                let noise: f64 = rng.sample(StandardNormal);
                clean + self.noise_std * noise
            })
            .collect()
    }
}

/// Draws `n` samples from `spec`, deterministically for a given seed.
pub fn generate_synthetic(spec: &ImbalanceSpec, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if n < 10 {
        return Err(Error::config("at least 10 samples are required"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    for id in 0..n as u64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut comp = &spec.components[spec.components.len() - 1];
        for c in &spec.components {
            acc += c.proportion;
            if u < acc {
                comp = c;
                break;
            }
        }
        let z: f64 = rng.sample(StandardNormal);
        let y = comp.mean + comp.std * z;
        let x = spec.features(y, &mut rng);
        samples.push(Sample::original(id, x, y));
    }
    let ys: Vec<f64> = samples.iter().map(|s| s.y).collect();
    let edges = covering_edges(&ys, spec.group_width)?;
    Dataset::new(samples, spec.dim, edges)
}

/// Adds `copies` duplicates of every original sample whose entropy exceeds
/// `beta`. `entropies` is aligned with `ds.samples()`. Existing copies are
/// never duplicated again.
pub fn augment_underrepresented(ds: &Dataset, entropies: &[f64], beta: f64, copies: usize) -> Result<Dataset> {
    if entropies.len() != ds.len() {
        return Err(Error::Shape {
            what: "entropies",
            expected: ds.len(),
            found: entropies.len(),
        });
    }
    if copies == 0 {
        return Err(Error::config("copies must be at least 1"));
    }
    let mut next = ds.next_id();
    let mut samples = ds.samples.clone();
    for (s, &h) in ds.samples.iter().zip(entropies) {
        if s.is_original() && h > beta {
            for _ in 0..copies {
                samples.push(Sample {
                    id: next,
                    x: s.x.clone(),
                    y: s.y,
                    origin: Origin::AugmentedCopyOf(s.id),
                });
                next += 1;
            }
        }
    }
    Ok(Dataset {
        samples,
        dim: ds.dim,
        group_edges: ds.group_edges.clone(),
    })
}

/// Seeded random partition into `(train, test)`. Both halves keep the
/// original group edges and sample order.
pub fn train_test_split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::config("test fraction must lie in [0, 1)"));
    }
    let n = ds.len();
    let n_test = math::floor(test_fraction * n as f64) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut is_test = alloc::vec![false; n];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let mut train = Vec::with_capacity(n - n_test);
    let mut test = Vec::with_capacity(n_test);
    for (s, t) in ds.samples.iter().zip(is_test) {
        if t {
            test.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    let part = |samples| Dataset {
        samples,
        dim: ds.dim,
        group_edges: ds.group_edges.clone(),
    };
    Ok((part(train), part(test)))
}

/// Adds `N(0, sigma^2)` noise to the labels of `floor(fraction * n)` randomly
/// chosen original samples. Group edges are widened by whole bins at either
/// end when a noisy label leaves the range. Returns the noisy dataset and the
/// corrupted ids in ascending order.
pub fn inject_label_noise(ds: &Dataset, fraction: f64, sigma: f64, seed: u64) -> Result<(Dataset, Vec<u64>)> {
    if !(0.0..=1.0).contains(&fraction) || !(sigma >= 0.0) {
        return Err(Error::config("noise fraction must lie in [0, 1] and sigma be non-negative"));
    }
    if ds.augmented_count() > 0 {
        return Err(Error::precondition("label noise must be injected before augmentation"));
    }
    let n = ds.len();
    let k = math::floor(fraction * n as f64) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut chosen: Vec<usize> = order[..k].to_vec();
    chosen.sort_unstable();
    let mut samples = ds.samples.clone();
    for &i in &chosen {
        let z: f64 = rng.sample(StandardNormal);
        samples[i].y += sigma * z;
    }
    let edges = widen_edges(ds.group_edges(), samples.iter().map(|s| s.y));
    let ids = chosen.iter().map(|&i| samples[i].id).collect();
    Ok((Dataset::new(samples, ds.dim, edges)?, ids))
}

fn widen_edges(edges: &[f64], ys: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out = edges.to_vec();
    let first_w = edges[1] - edges[0];
    let last_w = edges[edges.len() - 1] - edges[edges.len() - 2];
    for y in ys {
        while y < out[0] {
            out.insert(0, out[0] - first_w);
        }
        while y > out[out.len() - 1] {
            let e = out[out.len() - 1] + last_w;
            out.push(e);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn single() -> ImbalanceSpec {
        ImbalanceSpec {
            components: vec![MixtureComponent { mean: 0.0, std: 1.0, proportion: 1.0 }],
            dim: 3,
            noise_std: 0.05,
            mapping: Mapping::MonotoneSmooth,
            group_width: 1.0,
        }
    }

    #[test]
    fn single_component_histogram_matches_direct_count() {
        let ds = generate_synthetic(&single(), 100, 7).unwrap();
        assert_eq!(ds.len(), 100);
        assert!(ds.samples().iter().all(|s| s.y.is_finite() && s.x.iter().all(|v| v.is_finite())));
        let groups = group_indices(&ds).unwrap();
        let edges = ds.group_edges();
        for g in 0..ds.num_groups() {
            let direct = ds
                .samples()
                .iter()
                .filter(|s| {
                    let last = g + 1 == ds.num_groups();
                    s.y >= edges[g] && (s.y < edges[g + 1] || (last && s.y == edges[g + 1]))
                })
                .count();
            assert_eq!(direct, groups.iter().filter(|&&k| k == g).count());
        }
    }

    #[test]
    fn two_component_minority_count_within_binomial_bound() {
        let spec = ImbalanceSpec::two_component_benchmark();
        let ds = generate_synthetic(&spec, 1000, 11).unwrap();
        // P(y < 2.5) = 0.9 Phi(2.5) + 0.1 Phi(-2.5) ~ 0.8950; the 3 sigma binomial
        // interval for n = 1000 is roughly [866, 924], inside [850, 950].
        let below = ds.samples().iter().filter(|s| s.y < 2.5).count();
        assert!((850..=950).contains(&below), "{below}");
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = ImbalanceSpec::two_component_benchmark();
        assert_eq!(generate_synthetic(&spec, 50, 3).unwrap(), generate_synthetic(&spec, 50, 3).unwrap());
        assert_ne!(generate_synthetic(&spec, 50, 3).unwrap(), generate_synthetic(&spec, 50, 4).unwrap());
    }

    #[test]
    fn invalid_proportions_rejected() {
        let mut spec = ImbalanceSpec::two_component_benchmark();
        spec.components[0].proportion = 0.8;
        assert!(matches!(generate_synthetic(&spec, 100, 1), Err(Error::Config(_))));
        spec.components[0].proportion = -0.1;
        spec.components[1].proportion = 1.1;
        assert!(matches!(generate_synthetic(&spec, 100, 1), Err(Error::Config(_))));
        assert!(generate_synthetic(&single(), 9, 1).is_err());
    }

    #[test]
    fn boundary_conventions() {
        let edges = [0.0, 10.0, 20.0];
        assert_eq!(group_of(&edges, 0.0), Some(0));
        assert_eq!(group_of(&edges, 9.999), Some(0));
        assert_eq!(group_of(&edges, 10.0), Some(1));
        assert_eq!(group_of(&edges, 20.0), Some(1));
        assert_eq!(group_of(&edges, 20.000001), None);
        assert_eq!(group_of(&edges, -1.0), None);
        assert_eq!(group_of(&edges, f64::NAN), None);
    }

    #[test]
    fn uniform_targets_fill_bins_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples: Vec<Sample> = (0..4000)
            .map(|i| Sample::original(i, vec![0.0], rng.random_range(0.0..20.0)))
            .collect();
        let ds = Dataset::new(samples, 1, vec![0.0, 5.0, 10.0, 15.0, 20.0]).unwrap();
        let groups = assign_groups(&ds).unwrap();
        let mut counts = [0usize; 4];
        for g in groups.values() {
            counts[*g] += 1;
        }
        // Binomial(4000, 1/4): sd ~ 27.4; allow 4 sd.
        for c in counts {
            assert!((c as i64 - 1000).abs() < 110, "{counts:?}");
        }
    }

    #[test]
    fn out_of_range_target_is_rejected() {
        let s = vec![Sample::original(0, vec![0.0], 25.0)];
        assert!(matches!(Dataset::new(s, 1, vec![0.0, 10.0, 20.0]), Err(Error::Range { .. })));
    }

    fn toy(n: u64) -> Dataset {
        let samples = (0..n).map(|i| Sample::original(i, vec![i as f64], i as f64)).collect();
        Dataset::new(samples, 1, vec![0.0, n as f64]).unwrap()
    }

    #[test]
    fn augmentation_with_high_beta_is_identity() {
        let ds = toy(10);
        let h: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert_eq!(augment_underrepresented(&ds, &h, 100.0, 2).unwrap(), ds);
    }

    #[test]
    fn augmentation_duplicates_single_sample() {
        let ds = toy(10);
        let mut h = vec![0.0; 10];
        h[3] = 5.0;
        let out = augment_underrepresented(&ds, &h, 1.0, 2).unwrap();
        assert_eq!(out.len(), 12);
        let copies: Vec<&Sample> = out.samples().iter().filter(|s| !s.is_original()).collect();
        assert_eq!(copies.len(), 2);
        for c in copies {
            assert_eq!(c.origin, Origin::AugmentedCopyOf(3));
            assert_eq!((c.x.as_slice(), c.y), (ds.samples()[3].x.as_slice(), ds.samples()[3].y));
        }
        // Copies are never re-duplicated, even with huge entropy.
        let h2 = vec![10.0; out.len()];
        let again = augment_underrepresented(&out, &h2, 1.0, 1).unwrap();
        assert_eq!(again.len(), 12 + 10);
        Dataset::new(again.samples().to_vec(), 1, again.group_edges().to_vec()).unwrap();
    }

    #[test]
    fn augmentation_above_80th_percentile() {
        let ds = toy(100);
        // Distinct entropies; beta at the 80th percentile leaves 20 samples above it.
        let h: Vec<f64> = (0..100).map(|i| ((i * 37) % 100) as f64).collect();
        let mut sorted = h.clone();
        sorted.sort_by(f64::total_cmp);
        let beta = sorted[79];
        let above = h.iter().filter(|&&e| e > beta).count();
        let out = augment_underrepresented(&ds, &h, beta, 2).unwrap();
        assert_eq!(out.len(), 100 + 2 * above);
        assert_eq!(out.len(), 140);
    }

    #[test]
    fn split_partitions_samples() {
        let ds = toy(50);
        let (tr, te) = train_test_split(&ds, 0.2, 9).unwrap();
        assert_eq!((tr.len(), te.len()), (40, 10));
        let mut ids: Vec<u64> = tr.samples().iter().chain(te.samples()).map(|s| s.id).collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..50).collect::<Vec<_>>());
        assert_eq!(train_test_split(&ds, 0.2, 9).unwrap().1, te);
    }

    #[test]
    fn label_noise_touches_exact_count_and_keeps_features() {
        let ds = generate_synthetic(&ImbalanceSpec::two_component_benchmark(), 200, 1).unwrap();
        let (noisy, ids) = inject_label_noise(&ds, 0.1, 3.6, 2).unwrap();
        assert_eq!(ids.len(), 20);
        let changed: Vec<u64> = ds
            .samples()
            .iter()
            .zip(noisy.samples())
            .filter(|(a, b)| a.y != b.y)
            .map(|(a, _)| a.id)
            .collect();
        assert_eq!(changed, ids);
        assert!(ds.samples().iter().zip(noisy.samples()).all(|(a, b)| a.x == b.x));
        group_indices(&noisy).unwrap();
    }
}
