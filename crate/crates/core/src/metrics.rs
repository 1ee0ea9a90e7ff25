//! MAE / RMSE with isolation-forest exclusion of outlying test observations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::outlier::{exclusion_mask, fit_score, fit_score_grouped, removal_count, ForestConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mae: f64,
    pub rmse: f64,
    pub n_total: usize,
    pub n_removed: usize,
    pub outlier_ratio: f64,
    pub method_tag: String,
}

impl EvalReport {
    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.method_tag = tag.into();
        self
    }
}

fn check_pair(observed: &[f64], predicted: &[f64]) -> Result<()> {
    if observed.len() != predicted.len() {
        return Err(Error::contract(format!(
            "{} observations but {} predictions",
            observed.len(),
            predicted.len()
        )));
    }
    if observed.is_empty() {
        return Err(Error::contract("metrics need at least one pair"));
    }
    Ok(())
}

pub fn mae(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pair(observed, predicted)?;
    let total: f64 = observed.iter().zip(predicted).map(|(q, p)| (q - p).abs()).sum();
    Ok(total / observed.len() as f64)
}

pub fn rmse(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pair(observed, predicted)?;
    let total: f64 = observed.iter().zip(predicted).map(|(q, p)| (q - p).powi(2)).sum();
    Ok((total / observed.len() as f64).sqrt())
}

/// MAE/RMSE over the pairs at `retained` positions.
pub fn evaluate_retained(
    observed: &[f64],
    predicted: &[f64],
    retained: &[usize],
    outlier_ratio: f64,
) -> Result<EvalReport> {
    check_pair(observed, predicted)?;
    if retained.is_empty() {
        return Err(Error::contract("no test pairs left after outlier exclusion"));
    }
    let (obs, pred): (Vec<f64>, Vec<f64>) = retained
        .iter()
        .map(|&i| (observed[i], predicted[i]))
        .unzip();
    Ok(EvalReport {
        mae: mae(&obs, &pred)?,
        rmse: rmse(&obs, &pred)?,
        n_total: observed.len(),
        n_removed: observed.len() - retained.len(),
        outlier_ratio,
        method_tag: String::new(),
    })
}

fn check_ratio(outlier_ratio: f64) -> Result<()> {
    if (0.0..1.0).contains(&outlier_ratio) {
        Ok(())
    } else {
        Err(Error::contract(format!(
            "outlier ratio must lie in [0, 1), got {outlier_ratio}"
        )))
    }
}

/// Scores the observed values with one pooled forest, drops the top
/// `⌊ratio · N⌋`, and reports MAE/RMSE on the rest.
pub fn evaluate_excluding_outliers(
    observed: &[f64],
    predicted: &[f64],
    outlier_ratio: f64,
    forest: &ForestConfig,
) -> Result<EvalReport> {
    check_pair(observed, predicted)?;
    check_ratio(outlier_ratio)?;
    let retained = if removal_count(outlier_ratio, observed.len()) == 0 {
        (0..observed.len()).collect()
    } else {
        exclusion_mask(&fit_score(observed, forest)?, outlier_ratio)?
    };
    evaluate_retained(observed, predicted, &retained, outlier_ratio)
}

/// As [`evaluate_excluding_outliers`], but scores each group (service) with its
/// own forest before applying a single global cut.
pub fn evaluate_excluding_outliers_grouped(
    observed: &[f64],
    predicted: &[f64],
    groups: &[usize],
    outlier_ratio: f64,
    forest: &ForestConfig,
) -> Result<EvalReport> {
    check_pair(observed, predicted)?;
    check_ratio(outlier_ratio)?;
    let retained = if removal_count(outlier_ratio, observed.len()) == 0 {
        (0..observed.len()).collect()
    } else {
        exclusion_mask(&fit_score_grouped(observed, groups, forest)?, outlier_ratio)?
    };
    evaluate_retained(observed, predicted, &retained, outlier_ratio)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn examples() {
        assert_eq!(mae(&[1.0, 3.0], &[1.0, 3.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[1.0, 3.0], &[1.0, 3.0]).unwrap(), 0.0);
        assert_eq!(mae(&[1.0, 3.0], &[2.0, 1.0]).unwrap(), 1.5);
        assert!((rmse(&[1.0, 3.0], &[2.0, 1.0]).unwrap() - 2.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn contract_errors() {
        assert!(matches!(mae(&[], &[]), Err(Error::Contract(_))));
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(Error::Contract(_))));
        let f = ForestConfig::default();
        assert!(evaluate_excluding_outliers(&[1.0, 2.0], &[1.0, 2.0], 1.0, &f).is_err());
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let obs: Vec<f64> = (0..100).map(|_| rng.random::<f64>() * 10.0).collect();
        let pred: Vec<f64> = (0..100).map(|_| rng.random::<f64>() * 10.0).collect();
        let (mut abs, mut sq) = (0.0, 0.0);
        for i in 0..100 {
            let d: f64 = obs[i] - pred[i];
            abs += d.abs();
            sq += d * d;
        }
        assert!((mae(&obs, &pred).unwrap() - abs / 100.0).abs() < 1e-12);
        assert!((rmse(&obs, &pred).unwrap() - (sq / 100.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zero_ratio_is_plain_metrics() {
        let obs = [1.0, 2.0, 9.0, 4.0];
        let pred = [1.5, 2.0, 3.0, 4.5];
        let r = evaluate_excluding_outliers(&obs, &pred, 0.0, &ForestConfig::default()).unwrap();
        assert_eq!(r.mae, mae(&obs, &pred).unwrap());
        assert_eq!(r.rmse, rmse(&obs, &pred).unwrap());
        assert_eq!((r.n_total, r.n_removed), (4, 0));
    }

    #[test]
    fn planted_outliers_excluded_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 200;
        let mut obs: Vec<f64> = (0..n).map(|_| 1.0 + rng.random::<f64>()).collect();
        let mut pred: Vec<f64> = obs.iter().map(|q| q + 0.1 * (rng.random::<f64>() - 0.5)).collect();
        let planted: Vec<usize> = (0..n).step_by(20).collect();
        for &p in &planted {
            obs[p] *= 15.0;
            pred[p] = 0.0;
        }
        let clean: Vec<usize> = (0..n).filter(|i| !planted.contains(i)).collect();
        let expected = evaluate_retained(&obs, &pred, &clean, 0.05).unwrap();
        let got = evaluate_excluding_outliers(&obs, &pred, 0.05, &ForestConfig::default()).unwrap();
        assert_eq!(got.n_removed, planted.len());
        assert!((got.mae - expected.mae).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn rmse_dominates_mae(pairs in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..60)) {
            let (o, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let (a, r) = (mae(&o, &p).unwrap(), rmse(&o, &p).unwrap());
            prop_assert!(r >= a * (1.0 - 1e-12));
        }

        #[test]
        fn permutation_invariant(pairs in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..40)) {
            let (o, p): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let (ro, rp): (Vec<f64>, Vec<f64>) = pairs.iter().rev().copied().unzip();
            prop_assert!((mae(&o, &p).unwrap() - mae(&ro, &rp).unwrap()).abs() <= 1e-9);
            prop_assert!((rmse(&o, &p).unwrap() - rmse(&ro, &rp).unwrap()).abs() <= 1e-9);
        }
    }
}
