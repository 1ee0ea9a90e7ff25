//! Isolation-forest outlier scoring for univariate QoS values.
//!
//! Used only at evaluation time: the test observations with the largest
//! scores are excluded before computing MAE/RMSE. Scores follow the usual
//! `s(x, ψ) = 2^(−E[h(x)] / c(ψ))` normalization, so they lie in `[0, 1]`
//! and larger means easier to isolate.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Groups smaller than this are scored against the pooled population.
pub const MIN_GROUP_SIZE: usize = 4;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub num_trees: usize,
    pub subsample_size: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            num_trees: 100,
            subsample_size: 256,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_trees == 0 {
            return Err(Error::config("num_trees must be at least 1"));
        }
        if self.subsample_size < 2 {
            return Err(Error::config("subsample_size must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredValue {
    pub index: usize,
    pub value: f64,
    pub score: f64,
}

/// Average path length of an unsuccessful search in a binary search tree of `n` points.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let n = n as f64;
            2.0 * ((n - 1.0).ln() + EULER_GAMMA) - 2.0 * (n - 1.0) / n
        }
    }
}

#[derive(Debug)]
enum Node {
    Leaf { size: usize },
    Split { threshold: f64, left: usize, right: usize },
}

#[derive(Debug)]
struct IsolationTree {
    nodes: Vec<Node>,
}

impl IsolationTree {
    fn build(sample: Vec<f64>, height_limit: usize, rng: &mut impl Rng) -> Self {
        let mut tree = Self { nodes: Vec::new() };
        tree.grow(sample, 0, height_limit, rng);
        tree
    }

    fn grow(&mut self, sample: Vec<f64>, depth: usize, height_limit: usize, rng: &mut impl Rng) -> usize {
        let id = self.nodes.len();
        let (lo, hi) = sample
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if depth >= height_limit || sample.len() <= 1 || !(lo < hi) {
            self.nodes.push(Node::Leaf { size: sample.len() });
            return id;
        }
        let threshold = lo + rng.random::<f64>() * (hi - lo);
        self.nodes.push(Node::Leaf { size: 0 });
        let (left, right): (Vec<f64>, Vec<f64>) = sample.into_iter().partition(|&v| v < threshold);
        let left = self.grow(left, depth + 1, height_limit, rng);
        let right = self.grow(right, depth + 1, height_limit, rng);
        self.nodes[id] = Node::Split { threshold, left, right };
        id
    }

    fn path_length(&self, x: f64) -> f64 {
        let mut node = 0;
        let mut depth = 0.0;
        loop {
            match self.nodes[node] {
                Node::Leaf { size } => return depth + average_path_length(size),
                Node::Split { threshold, left, right } => {
                    node = if x < threshold { left } else { right };
                    depth += 1.0;
                }
            }
        }
    }
}

struct IsolationForest {
    trees: Vec<IsolationTree>,
    normalizer: f64,
}

impl IsolationForest {
    fn fit(values: &[f64], config: &ForestConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let psi = config.subsample_size.min(values.len());
        let height_limit = (psi as f64).log2().ceil() as usize;
        let trees = (0..config.num_trees)
            .map(|_| {
                let sample = index::sample(&mut rng, values.len(), psi)
                    .into_iter()
                    .map(|i| values[i])
                    .collect();
                IsolationTree::build(sample, height_limit, &mut rng)
            })
            .collect();
        Self {
            trees,
            normalizer: average_path_length(psi),
        }
    }

    fn score(&self, x: f64) -> f64 {
        if self.normalizer == 0.0 {
            return 0.5;
        }
        let mean = self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64;
        2f64.powf(-mean / self.normalizer)
    }
}

fn check_values(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::contract("cannot score an empty value list"));
    }
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("value at position {pos} is not finite")));
    }
    Ok(())
}

/// Fits an isolation forest on `values` and scores each of them.
pub fn fit_score(values: &[f64], config: &ForestConfig) -> Result<Vec<ScoredValue>> {
    config.validate()?;
    check_values(values)?;
    let forest = IsolationForest::fit(values, config);
    Ok(values
        .iter()
        .enumerate()
        .map(|(index, &value)| ScoredValue {
            index,
            value,
            score: forest.score(value),
        })
        .collect())
}

/// Scores each group (e.g. each service's test values) with its own forest.
///
/// Groups with fewer than [`MIN_GROUP_SIZE`] values are scored by a forest
/// fit on all values. Each group's forest seed is derived from the base seed
/// and the group label, so results do not depend on group iteration order.
pub fn fit_score_grouped(
    values: &[f64],
    groups: &[usize],
    config: &ForestConfig,
) -> Result<Vec<ScoredValue>> {
    config.validate()?;
    check_values(values)?;
    if groups.len() != values.len() {
        return Err(Error::contract(format!(
            "{} group labels for {} values",
            groups.len(),
            values.len()
        )));
    }
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (pos, &g) in groups.iter().enumerate() {
        members.entry(g).or_default().push(pos);
    }
    let mut scores = vec![f64::NAN; values.len()];
    let mut pooled: Option<IsolationForest> = None;
    for (&group, idx) in &members {
        if idx.len() < MIN_GROUP_SIZE {
            let forest = pooled.get_or_insert_with(|| IsolationForest::fit(values, config));
            for &p in idx {
                scores[p] = forest.score(values[p]);
            }
        } else {
            let sub: Vec<f64> = idx.iter().map(|&p| values[p]).collect();
            let group_cfg = ForestConfig {
                seed: mix_seed(config.seed, group as u64),
                ..config.clone()
            };
            let forest = IsolationForest::fit(&sub, &group_cfg);
            for &p in idx {
                scores[p] = forest.score(values[p]);
            }
        }
    }
    Ok(values
        .iter()
        .zip(scores)
        .enumerate()
        .map(|(index, (&value, score))| ScoredValue { index, value, score })
        .collect())
}

/// SplitMix64 finalizer over `seed ^ salt`.
pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Number of entries removed for a given ratio: `⌊ratio · n⌋`.
pub fn removal_count(outlier_ratio: f64, n: usize) -> usize {
    // the epsilon absorbs products like 0.29 * 100 = 28.999999999999996
    ((outlier_ratio * n as f64) + 1e-9).floor() as usize
}

/// Drops the `⌊ratio · N⌋` highest-scoring entries and returns the retained
/// positions (into `scored`) in ascending order.
///
/// Ties on score go to the value farther from the median, then to the lower index.
pub fn exclusion_mask(scored: &[ScoredValue], outlier_ratio: f64) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&outlier_ratio) {
        return Err(Error::contract(format!(
            "outlier ratio must lie in [0, 1), got {outlier_ratio}"
        )));
    }
    let remove = removal_count(outlier_ratio, scored.len());
    if remove == 0 {
        return Ok((0..scored.len()).collect());
    }
    let med = median(&mut scored.iter().map(|s| s.value).collect::<Vec<_>>());
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| {
        let (sa, sb) = (&scored[a], &scored[b]);
        sb.score
            .total_cmp(&sa.score)
            .then_with(|| (sb.value - med).abs().total_cmp(&(sa.value - med).abs()))
            .then_with(|| sa.index.cmp(&sb.index))
    });
    let mut retained = order.split_off(remove);
    retained.sort_unstable();
    Ok(retained)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn near_one(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| 1.0 + 0.1 * (rng.random::<f64>() - 0.5)).collect()
    }

    #[test]
    fn path_length_normalizer() {
        assert_eq!(average_path_length(1), 0.0);
        assert_eq!(average_path_length(2), 1.0);
        // 2(ln 255 + γ) − 2·255/256
        let expected = 2.0 * (255f64.ln() + EULER_GAMMA) - 2.0 * 255.0 / 256.0;
        assert!((average_path_length(256) - expected).abs() < 1e-12);
    }

    #[test]
    fn identical_values_score_equally() {
        let scored = fit_score(&[3.0; 50], &ForestConfig::default()).unwrap();
        assert!(scored.iter().all(|s| s.score == scored[0].score));
    }

    #[test]
    fn extreme_value_scores_highest() {
        for seed in 0..10 {
            let mut values = near_one(seed, 99);
            values.push(50.0);
            let cfg = ForestConfig { seed, ..ForestConfig::default() };
            let scored = fit_score(&values, &cfg).unwrap();
            let top = scored[99].score;
            assert!(scored[..99].iter().all(|s| s.score < top), "seed {seed}");
        }
    }

    #[test]
    fn scores_in_unit_interval() {
        let mut values = near_one(3, 500);
        values.extend([-40.0, 80.0, 1e6]);
        for s in fit_score(&values, &ForestConfig::default()).unwrap() {
            assert!((0.0..=1.0).contains(&s.score));
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(fit_score(&[], &ForestConfig::default()), Err(Error::Contract(_))));
        assert!(matches!(
            fit_score(&[1.0, f64::NAN], &ForestConfig::default()),
            Err(Error::Domain(_))
        ));
        let bad = ForestConfig { subsample_size: 1, ..ForestConfig::default() };
        assert!(fit_score(&[1.0, 2.0], &bad).is_err());
    }

    #[test]
    fn deterministic() {
        let values = near_one(1, 300);
        let cfg = ForestConfig { seed: 77, ..ForestConfig::default() };
        assert_eq!(fit_score(&values, &cfg).unwrap(), fit_score(&values, &cfg).unwrap());
    }

    #[test]
    fn affine_rescaling_preserves_ordering() {
        let mut values = near_one(5, 200);
        values.extend([3.0, -2.0, 7.5]);
        let cfg = ForestConfig { seed: 4, ..ForestConfig::default() };
        let a = fit_score(&values, &cfg).unwrap();
        let shifted: Vec<f64> = values.iter().map(|v| 2.5 * v + 10.0).collect();
        let b = fit_score(&shifted, &cfg).unwrap();
        let rank = |s: &[ScoredValue]| {
            let mut idx: Vec<usize> = (0..s.len()).collect();
            idx.sort_by(|&x, &y| s[y].score.total_cmp(&s[x].score).then(x.cmp(&y)));
            idx
        };
        assert_eq!(rank(&a), rank(&b));
    }

    #[test]
    fn mask_counts() {
        let scored = fit_score(&near_one(2, 10), &ForestConfig::default()).unwrap();
        assert_eq!(exclusion_mask(&scored, 0.0).unwrap(), (0..10).collect::<Vec<_>>());
        assert_eq!(exclusion_mask(&scored, 0.1).unwrap().len(), 9);
        assert_eq!(removal_count(0.29, 100), 29);
        assert!(exclusion_mask(&scored, 1.0).is_err());
        assert!(exclusion_mask(&scored, -0.1).is_err());
    }

    #[test]
    fn mask_tie_breaking() {
        let scored: Vec<ScoredValue> = [(0.0, 0.9), (5.0, 0.9), (1.0, 0.1), (2.0, 0.1), (-5.0, 0.9)]
            .iter()
            .enumerate()
            .map(|(index, &(value, score))| ScoredValue { index, value, score })
            .collect();
        // median 1.0; among score-0.9 ties, |−5 − 1| = 6 wins, then 5.0 (4) beats 0.0 (1)
        assert_eq!(exclusion_mask(&scored, 0.2).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(exclusion_mask(&scored, 0.4).unwrap(), vec![0, 2, 3]);
        let equal: Vec<ScoredValue> = (0..4)
            .map(|index| ScoredValue { index, value: 1.0, score: 0.5 })
            .collect();
        assert_eq!(exclusion_mask(&equal, 0.5).unwrap(), vec![2, 3]);
    }

    #[test]
    fn planted_outliers_are_removed() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 400;
        let mut values: Vec<f64> = (0..n).map(|_| 1.0 + rng.random::<f64>()).collect();
        let planted = index::sample(&mut rng, n, 20).into_vec();
        for &p in &planted {
            values[p] *= 10.0;
        }
        let scored = fit_score(&values, &ForestConfig { seed: 1, ..ForestConfig::default() }).unwrap();
        let retained = exclusion_mask(&scored, 0.05).unwrap();
        let mut removed: Vec<usize> = (0..n).filter(|i| retained.binary_search(i).is_err()).collect();
        let mut planted = planted;
        planted.sort_unstable();
        removed.sort_unstable();
        assert_eq!(removed, planted);
    }

    #[test]
    fn grouped_scoring_uses_pooled_forest_for_small_groups() {
        let mut values = near_one(9, 40);
        let mut groups: Vec<usize> = (0..40).map(|i| i % 4).collect();
        values.push(30.0);
        groups.push(99);
        let scored = fit_score_grouped(&values, &groups, &ForestConfig::default()).unwrap();
        assert_eq!(scored.len(), 41);
        assert!(scored.iter().all(|s| (0.0..=1.0).contains(&s.score)));
        let top = scored[40].score;
        assert!(scored[..40].iter().all(|s| s.score < top));
        assert!(fit_score_grouped(&values, &groups[..3], &ForestConfig::default()).is_err());
    }
}
