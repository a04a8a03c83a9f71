//! Combination of per-view class distributions: naive voting, weighted
//! majority voting with validation-mistake discounts, Bayesian model
//! combination with availability weights, and the product of both weights.
//!
//! Every combiner returns the selected class (argmax, lowest index on ties)
//! together with the fused scores normalized to sum to one. The argmax is
//! taken on the raw weighted sums.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inducer::InducerModel;
use crate::types::{argmax, availability_mask, Collection, ProbVector, TaskId};

/// Combination scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    NaiveVoting,
    WeightedMajority,
    BayesianCombination,
    WeightedBayesian,
    LateFusion,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::NaiveVoting,
        Method::WeightedMajority,
        Method::BayesianCombination,
        Method::WeightedBayesian,
        Method::LateFusion,
    ];
    pub const VOTING: [Method; 4] =
        [Method::NaiveVoting, Method::WeightedMajority, Method::BayesianCombination, Method::WeightedBayesian];

    pub fn key(self) -> &'static str {
        match self {
            Method::NaiveVoting => "nv",
            Method::WeightedMajority => "wmv",
            Method::BayesianCombination => "bmc",
            Method::WeightedBayesian => "wmv_bmc",
            Method::LateFusion => "lf",
        }
    }

    pub fn from_key(key: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.key() == key).ok_or_else(|| Error::input(format!("unknown method `{key}`")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.key())
    }
}

/// Outcome of combining per-view distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct Combined {
    pub class: usize,
    /// Weighted sums before normalization.
    pub scores: Vec<f64>,
    pub fused: ProbVector,
}

/// Per-view discount factors `d_i = 1 - m_i / sum(m)` from validation
/// mistake counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscountWeights {
    pub d: Vec<f64>,
    pub mistakes: Vec<usize>,
}

impl DiscountWeights {
    /// When no model made a mistake every discount is 1.
    pub fn from_mistakes(mistakes: Vec<usize>) -> Self {
        let total: usize = mistakes.iter().sum();
        let d = if total == 0 {
            vec![1.0; mistakes.len()]
        } else {
            mistakes.iter().map(|&m| 1.0 - m as f64 / total as f64).collect()
        };
        DiscountWeights { d, mistakes }
    }

    pub fn uniform(n: usize) -> Self {
        Self::from_mistakes(vec![0; n])
    }
}

/// Availability weights: zero for missing views, `1/(N-n)` for the rest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvailabilityWeights {
    pub p: Vec<f64>,
}

fn weighted_sum(probs: &[ProbVector], weights: &[f64]) -> Result<Vec<f64>> {
    let first = probs.first().ok_or_else(|| Error::input("no model outputs to combine"))?;
    if weights.len() != probs.len() {
        return Err(Error::DimensionMismatch { expected: probs.len(), got: weights.len() });
    }
    let m = first.len();
    let mut scores = vec![0.0; m];
    for (p, &w) in probs.iter().zip(weights) {
        if p.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: p.len() });
        }
        for (s, &v) in scores.iter_mut().zip(p.values()) {
            *s += w * v;
        }
    }
    Ok(scores)
}

fn finish(scores: Vec<f64>) -> Combined {
    let class = argmax(&scores);
    let total: f64 = scores.iter().sum();
    let fused = if total > 0.0 {
        scores.iter().map(|s| s / total).collect()
    } else {
        vec![1.0 / scores.len() as f64; scores.len()]
    };
    Combined { class, scores, fused: ProbVector::from_normalized(fused) }
}

/// Equal-weight average of the model distributions.
pub fn naive_vote(probs: &[ProbVector]) -> Result<Combined> {
    let n = probs.len();
    weighted_sum(probs, &vec![1.0 / n as f64; n]).map(finish)
}

pub fn wmv(probs: &[ProbVector], discounts: &DiscountWeights) -> Result<Combined> {
    weighted_sum(probs, &discounts.d).map(finish)
}

/// Weights for availability `mask`. If every view is missing the weights
/// fall back to uniform `1/N`.
pub fn bmc_weights(mask: &[bool]) -> AvailabilityWeights {
    let present = mask.iter().filter(|&&m| m).count();
    let p = if present == 0 {
        vec![1.0 / mask.len() as f64; mask.len()]
    } else {
        let w = 1.0 / present as f64;
        mask.iter().map(|&m| if m { w } else { 0.0 }).collect()
    };
    AvailabilityWeights { p }
}

pub fn bmc(probs: &[ProbVector], weights: &AvailabilityWeights) -> Result<Combined> {
    weighted_sum(probs, &weights.p).map(finish)
}

/// Scores `sum_j d_j * P_j * p_j`.
pub fn wmv_bmc(probs: &[ProbVector], discounts: &DiscountWeights, weights: &AvailabilityWeights) -> Result<Combined> {
    if discounts.d.len() != weights.p.len() {
        return Err(Error::DimensionMismatch { expected: discounts.d.len(), got: weights.p.len() });
    }
    let w: Vec<f64> = discounts.d.iter().zip(&weights.p).map(|(d, p)| d * p).collect();
    weighted_sum(probs, &w).map(finish)
}

/// Counts each model's argmax mistakes on `validation` and converts them to
/// discount factors.
pub fn fit_discounts(models: &[InducerModel], validation: &[&Collection], task: TaskId) -> Result<DiscountWeights> {
    if validation.is_empty() {
        return Err(Error::input("empty validation set"));
    }
    let mut mistakes = vec![0usize; models.len()];
    for c in validation {
        let label = c.labels.get(task);
        for (m, model) in mistakes.iter_mut().zip(models) {
            if model.predict(c)?.argmax() != label {
                *m += 1;
            }
        }
    }
    Ok(DiscountWeights::from_mistakes(mistakes))
}

/// A fitted voting ensemble for one task: one inducer per view plus the
/// validation discounts.
#[derive(Clone, Debug)]
pub struct VotingEnsemble {
    pub task: TaskId,
    pub models: Vec<InducerModel>,
    pub discounts: DiscountWeights,
}

impl VotingEnsemble {
    pub fn fit(models: Vec<InducerModel>, validation: &[&Collection], task: TaskId) -> Result<Self> {
        if models.iter().any(|m| m.task != task) {
            return Err(Error::input("ensemble models must share the task"));
        }
        let discounts = fit_discounts(&models, validation, task)?;
        Ok(VotingEnsemble { task, models, discounts })
    }

    pub fn view_probs(&self, collection: &Collection) -> Result<Vec<ProbVector>> {
        self.models.iter().map(|m| m.predict(collection)).collect()
    }

    /// Combines the per-view outputs with `method` (any voting method).
    pub fn combine(&self, method: Method, probs: &[ProbVector], mask: &[bool]) -> Result<Combined> {
        match method {
            Method::NaiveVoting => naive_vote(probs),
            Method::WeightedMajority => wmv(probs, &self.discounts),
            Method::BayesianCombination => bmc(probs, &bmc_weights(mask)),
            Method::WeightedBayesian => wmv_bmc(probs, &self.discounts, &bmc_weights(mask)),
            Method::LateFusion => Err(Error::input("late fusion is not a voting method")),
        }
    }

    pub fn predict(&self, method: Method, collection: &Collection) -> Result<Combined> {
        let probs = self.view_probs(collection)?;
        self.combine(method, &probs, &availability_mask(collection))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn naive_vote_hand_example() {
        let out = naive_vote(&[pv(&[0.6, 0.4]), pv(&[0.3, 0.7])]).unwrap();
        assert!(close(out.fused.values(), &[0.45, 0.55]));
        assert_eq!(out.class, 1);
    }

    #[test]
    fn naive_vote_identical_inputs() {
        let v = pv(&[0.2, 0.5, 0.3]);
        let out = naive_vote(&[v.clone(), v.clone(), v.clone(), v.clone()]).unwrap();
        assert!(close(out.fused.values(), v.values()));
        assert_eq!(out.class, 1);
    }

    #[test]
    fn naive_vote_order_independent() {
        let ps = [pv(&[0.1, 0.9]), pv(&[0.5, 0.5]), pv(&[0.8, 0.2]), pv(&[0.35, 0.65])];
        let a = naive_vote(&ps).unwrap();
        let b = naive_vote(&[ps[3].clone(), ps[1].clone(), ps[0].clone(), ps[2].clone()]).unwrap();
        assert!(close(a.fused.values(), b.fused.values()));
        assert_eq!(a.class, b.class);
    }

    #[test]
    fn empty_inputs_rejected() {
        assert!(naive_vote(&[]).is_err());
        assert!(wmv(&[pv(&[1.0, 0.0])], &DiscountWeights::uniform(2)).is_err());
        assert!(naive_vote(&[pv(&[1.0, 0.0]), pv(&[0.2, 0.3, 0.5])]).is_err());
    }

    #[test]
    fn discount_arithmetic() {
        assert_eq!(DiscountWeights::from_mistakes(vec![1, 3]).d, vec![0.75, 0.25]);
        assert_eq!(DiscountWeights::from_mistakes(vec![0, 0, 0]).d, vec![1.0; 3]);
        assert_eq!(DiscountWeights::from_mistakes(vec![10; 4]).d, vec![0.75; 4]);
    }

    #[test]
    fn wmv_hand_example() {
        let d = DiscountWeights::from_mistakes(vec![1, 3]);
        let out = wmv(&[pv(&[0.6, 0.4]), pv(&[0.3, 0.7])], &d).unwrap();
        assert!(close(&out.scores, &[0.525, 0.475]));
        assert_eq!(out.class, 0);
        assert!((out.fused.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wmv_with_equal_discounts_matches_naive() {
        let ps = [pv(&[0.2, 0.3, 0.5]), pv(&[0.6, 0.3, 0.1]), pv(&[0.25, 0.5, 0.25])];
        let d = DiscountWeights::from_mistakes(vec![4, 4, 4]);
        assert_eq!(wmv(&ps, &d).unwrap().class, naive_vote(&ps).unwrap().class);
    }

    #[test]
    fn bmc_weight_cases() {
        assert_eq!(bmc_weights(&[true, false, true, false]).p, vec![0.5, 0.0, 0.5, 0.0]);
        assert_eq!(bmc_weights(&[true; 4]).p, vec![0.25; 4]);
        assert_eq!(bmc_weights(&[false; 4]).p, vec![0.25; 4]);
    }

    #[test]
    fn bmc_single_present_view_decides() {
        let ps = [pv(&[0.9, 0.1, 0.0]), pv(&[0.1, 0.1, 0.8]), pv(&[0.0, 1.0, 0.0])];
        let out = bmc(&ps, &bmc_weights(&[false, true, false])).unwrap();
        assert_eq!(out.class, 2);
        assert!(close(out.fused.values(), ps[1].values()));
    }

    #[test]
    fn bmc_all_present_matches_naive() {
        let ps = [pv(&[0.2, 0.8]), pv(&[0.7, 0.3]), pv(&[0.55, 0.45]), pv(&[0.4, 0.6])];
        let a = bmc(&ps, &bmc_weights(&[true; 4])).unwrap();
        let b = naive_vote(&ps).unwrap();
        assert!(close(a.fused.values(), b.fused.values()));
        assert_eq!(a.class, b.class);
    }

    #[test]
    fn bmc_two_present_views_hand_example() {
        let ps = [pv(&[0.9, 0.05, 0.05]), pv(&[0.2, 0.6, 0.2]), pv(&[0.0, 0.0, 1.0]), pv(&[0.0, 0.0, 1.0])];
        let out = bmc(&ps, &bmc_weights(&[true, true, false, false])).unwrap();
        assert!(close(&out.scores, &[0.55, 0.325, 0.125]));
        assert_eq!(out.class, 0);
    }

    #[test]
    fn wmv_bmc_cases() {
        let ps = [pv(&[0.6, 0.4]), pv(&[0.3, 0.7])];
        let mask = [true, true];
        let ones = DiscountWeights::uniform(2);
        let a = wmv_bmc(&ps, &ones, &bmc_weights(&mask)).unwrap();
        let b = bmc(&ps, &bmc_weights(&mask)).unwrap();
        assert_eq!(a, b);

        let d = DiscountWeights::from_mistakes(vec![1, 3]);
        let out = wmv_bmc(&ps, &d, &bmc_weights(&mask)).unwrap();
        let expect = [0.5 * 0.75 * 0.6 + 0.5 * 0.25 * 0.3, 0.5 * 0.75 * 0.4 + 0.5 * 0.25 * 0.7];
        assert!(close(&out.scores, &expect));
        assert_eq!(out.class, wmv(&ps, &d).unwrap().class);
    }

    #[test]
    fn method_keys_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::from_key(m.key()).unwrap(), m);
        }
        assert!(Method::from_key("xx").is_err());
    }

    fn arb_probs() -> impl Strategy<Value = (Vec<ProbVector>, Vec<bool>, Vec<f64>)> {
        (1usize..=4, 2usize..=5).prop_flat_map(|(n, m)| {
            (
                prop::collection::vec(prop::collection::vec(0.01f64..1.0, m), n),
                prop::collection::vec(any::<bool>(), n),
                prop::collection::vec(0.0f64..=1.0, n),
            )
                .prop_map(|(raw, mask, d)| {
                    let probs = raw
                        .into_iter()
                        .map(|r| {
                            let s: f64 = r.iter().sum();
                            ProbVector::from_normalized(r.iter().map(|x| x / s).collect())
                        })
                        .collect();
                    (probs, mask, d)
                })
        })
    }

    proptest! {
        #[test]
        fn permutation_equivariance((probs, mask, d) in arb_probs(), rot in 0usize..4) {
            let n = probs.len();
            let r = rot % n;
            let rotate = |v: &[f64]| { let mut v = v.to_vec(); v.rotate_left(r); v };
            let mut probs_r = probs.clone();
            probs_r.rotate_left(r);
            let mut mask_r = mask.clone();
            mask_r.rotate_left(r);
            let dw = DiscountWeights { d: d.clone(), mistakes: vec![0; n] };
            let dw_r = DiscountWeights { d: rotate(&d), mistakes: vec![0; n] };
            let a = wmv_bmc(&probs, &dw, &bmc_weights(&mask)).unwrap();
            let b = wmv_bmc(&probs_r, &dw_r, &bmc_weights(&mask_r)).unwrap();
            for (x, y) in a.scores.iter().zip(&b.scores) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn positive_scaling_keeps_class((probs, _mask, d) in arb_probs(), lambda in 0.01f64..100.0) {
            let n = probs.len();
            let dw = DiscountWeights { d: d.clone(), mistakes: vec![0; n] };
            let scaled = DiscountWeights { d: d.iter().map(|x| x * lambda).collect(), mistakes: vec![0; n] };
            let a = wmv(&probs, &dw).unwrap();
            let b = wmv(&probs, &scaled).unwrap();
            // exact ties can flip under rounding; require a clear winner
            let mut sorted = a.scores.clone();
            sorted.sort_by(|x, y| y.partial_cmp(x).unwrap());
            if sorted.len() < 2 || sorted[0] - sorted[1] > 1e-9 {
                prop_assert_eq!(a.class, b.class);
            }
        }

        #[test]
        fn fused_outputs_are_distributions((probs, mask, d) in arb_probs()) {
            let n = probs.len();
            let dw = DiscountWeights { d, mistakes: vec![0; n] };
            let w = bmc_weights(&mask);
            prop_assert!((w.p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for out in [naive_vote(&probs).unwrap(), bmc(&probs, &w).unwrap(), wmv(&probs, &dw).unwrap()] {
                prop_assert!((out.fused.sum() - 1.0).abs() < 1e-6);
            }
        }
    }
}
