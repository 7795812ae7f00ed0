//! Local Contribution Vectors: round-wise Shapley values a client computes
//! over its closed neighborhood.
//!
//! The utility of a subset `S` is the test accuracy of the partial model
//! that aggregates post-training models for members of `S` and
//! pre-training models for everyone else, with the round's weights.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::engine::ExchangePacket;
use crate::error::{Error, Result};
use crate::learner::{eval, Dataset, ModelParams};
use crate::rng::{rng_for, Stream};
use crate::shapley::{monte_carlo_shapley, shapley_from_table};

/// `ψ^{(owner, round)}`: sparse contributions of the owner's neighborhood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lcv {
    pub owner: usize,
    pub round: usize,
    pub entries: BTreeMap<usize, f64>,
}

impl Lcv {
    pub fn get(&self, j: usize) -> f64 {
        self.entries.get(&j).copied().unwrap_or(0.0)
    }

    pub fn densify(&self, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        for (&j, &x) in &self.entries {
            v[j] = x;
        }
        v
    }

    /// Entries that are exactly nonzero, in ascending subject order.
    pub fn nonzero(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries
            .iter()
            .filter(|(_, v)| **v != 0.0)
            .map(|(&j, &v)| (j, v))
    }

    pub fn total(&self) -> f64 {
        self.entries.values().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LcvMode {
    Exact,
    MonteCarlo { samples: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LcvSettings {
    #[serde(default)]
    pub normalize_shapley: bool,
    #[serde(default = "default_mode")]
    pub mode: LcvMode,
    /// Largest neighborhood for which exact enumeration is allowed.
    #[serde(default = "default_exact_cap")]
    pub exact_cap: usize,
}

fn default_mode() -> LcvMode {
    LcvMode::Exact
}
fn default_exact_cap() -> usize {
    16
}

impl Default for LcvSettings {
    fn default() -> Self {
        Self {
            normalize_shapley: false,
            mode: default_mode(),
            exact_cap: default_exact_cap(),
        }
    }
}

fn check_packets(packets: &[ExchangePacket], weights: &BTreeMap<usize, f64>) -> Result<()> {
    if packets.is_empty() {
        return Err(Error::InvalidConfig("neighborhood has no packets".into()));
    }
    if packets.len() > 63 {
        return Err(Error::InvalidConfig(format!(
            "neighborhood of {} members is too large",
            packets.len()
        )));
    }
    for w in packets.windows(2) {
        if w[0].sender >= w[1].sender {
            return Err(Error::InvalidConfig(
                "packets must be sorted by ascending sender".into(),
            ));
        }
    }
    for p in packets {
        if !weights.contains_key(&p.sender) {
            return Err(Error::InvalidConfig(format!(
                "no aggregation weight for sender {}",
                p.sender
            )));
        }
    }
    Ok(())
}

/// Partial model for the local-index bitmask `mask` over `packets`.
fn partial_model_mask(
    packets: &[ExchangePacket],
    weights: &BTreeMap<usize, f64>,
    mask: u64,
) -> Result<ModelParams> {
    ModelParams::weighted_average(packets.iter().enumerate().map(|(k, p)| {
        let model = if mask >> k & 1 == 1 {
            &p.post_model
        } else {
            &p.pre_model
        };
        (model, weights[&p.sender])
    }))
}

/// Aggregates post-training models of `subset` and pre-training models of
/// the remaining neighborhood members. `packets` must cover the closed
/// neighborhood, sorted by sender.
pub fn partial_model(
    owner: usize,
    packets: &[ExchangePacket],
    weights: &BTreeMap<usize, f64>,
    subset: &BTreeSet<usize>,
) -> Result<ModelParams> {
    check_packets(packets, weights)?;
    let mut mask = 0u64;
    for &j in subset {
        let k = packets
            .iter()
            .position(|p| p.sender == j)
            .ok_or(Error::SubsetNotInNeighborhood { owner })?;
        mask |= 1 << k;
    }
    partial_model_mask(packets, weights, mask)
}

/// Utilities `u(S)` for every subset of the neighborhood, indexed by
/// local bitmask. Each partial model is evaluated exactly once.
pub fn subset_utilities(
    packets: &[ExchangePacket],
    weights: &BTreeMap<usize, f64>,
    testset: &Dataset,
) -> Result<Vec<f64>> {
    check_packets(packets, weights)?;
    (0..1u64 << packets.len())
        .map(|mask| eval(&partial_model_mask(packets, weights, mask)?, testset))
        .collect()
}

/// Computes `ψ^{(owner, round)}` over the closed neighborhood covered by
/// `packets`. `seed` drives the permutation sampler in monte-carlo mode.
pub fn compute_lcv(
    owner: usize,
    round: usize,
    packets: &[ExchangePacket],
    weights: &BTreeMap<usize, f64>,
    testset: &Dataset,
    settings: &LcvSettings,
    seed: u64,
) -> Result<Lcv> {
    check_packets(packets, weights)?;
    let m = packets.len();
    let values = match settings.mode {
        LcvMode::Exact => {
            if m > settings.exact_cap {
                return Err(Error::ExactCapExceeded {
                    players: m,
                    cap: settings.exact_cap,
                });
            }
            let table = subset_utilities(packets, weights, testset)?;
            shapley_from_table(&table, m, settings.normalize_shapley)
        }
        LcvMode::MonteCarlo { samples } => {
            let mut cache: HashMap<u64, f64> = HashMap::new();
            let mut rng = rng_for(seed, Stream::MonteCarlo, &[owner as u64, round as u64]);
            monte_carlo_shapley(m, samples, settings.normalize_shapley, &mut rng, |mask| {
                if let Some(&u) = cache.get(&mask) {
                    return Ok(u);
                }
                let u = eval(&partial_model_mask(packets, weights, mask)?, testset)?;
                cache.insert(mask, u);
                Ok(u)
            })?
            .values
        }
    };
    Ok(Lcv {
        owner,
        round,
        entries: packets.iter().map(|p| p.sender).zip(values).collect(),
    })
}

/// Pre-training model filtering: a received pre-model whose accuracy falls
/// more than `v_threshold` below the receiver's own pre-model accuracy is
/// replaced by the receiver's own pre-model. Post-models are untouched.
///
/// Returns the filtered packets and the senders that were replaced.
pub fn filter_pretrain_models(
    owner: usize,
    own_pre: &ModelParams,
    packets: &[ExchangePacket],
    testset: &Dataset,
    v_threshold: f64,
) -> Result<(Vec<ExchangePacket>, Vec<usize>)> {
    let own_acc = eval(own_pre, testset)?;
    let mut out = Vec::with_capacity(packets.len());
    let mut replaced = Vec::new();
    for p in packets {
        if p.sender != owner && eval(&p.pre_model, testset)? < own_acc - v_threshold {
            replaced.push(p.sender);
            out.push(ExchangePacket {
                sender: p.sender,
                post_model: p.post_model.clone(),
                pre_model: own_pre.clone(),
            });
        } else {
            out.push(p.clone());
        }
    }
    Ok((out, replaced))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::ModelShape;

    fn shape() -> ModelShape {
        ModelShape {
            features: 1,
            classes: 2,
        }
    }

    /// One feature, two classes. Positive x is class 1.
    fn testset() -> Dataset {
        let xs = vec![-2.0, -1.0, -0.5, 0.5, 1.0, 2.0, 3.0, -3.0];
        let ys = xs.iter().map(|&x| usize::from(x > 0.0)).collect();
        Dataset::new("t", shape(), xs, ys).unwrap()
    }

    fn model(w1: f64) -> ModelParams {
        // class 0 weight, class 1 weight, biases.
        ModelParams::new(vec![0.0, w1, 0.0, 0.0]).unwrap()
    }

    fn packet(sender: usize, pre: ModelParams, post: ModelParams) -> ExchangePacket {
        ExchangePacket {
            sender,
            post_model: post,
            pre_model: pre,
        }
    }

    fn uniform(ids: &[usize]) -> BTreeMap<usize, f64> {
        ids.iter().map(|&j| (j, 1.0)).collect()
    }

    #[test]
    fn full_subset_is_plain_aggregation() {
        let packets = vec![
            packet(0, model(0.1), model(1.0)),
            packet(3, model(-0.2), model(2.0)),
        ];
        let w = BTreeMap::from([(0, 1.0), (3, 3.0)]);
        let full = partial_model(0, &packets, &w, &BTreeSet::from([0, 3])).unwrap();
        let agg = ModelParams::weighted_average([
            (&packets[0].post_model, 1.0),
            (&packets[1].post_model, 3.0),
        ])
        .unwrap();
        assert_eq!(full, agg);
        let none = partial_model(0, &packets, &w, &BTreeSet::new()).unwrap();
        let pre = ModelParams::weighted_average([
            (&packets[0].pre_model, 1.0),
            (&packets[1].pre_model, 3.0),
        ])
        .unwrap();
        assert_eq!(none, pre);
        assert_eq!(
            partial_model(0, &packets, &w, &BTreeSet::from([5])),
            Err(Error::SubsetNotInNeighborhood { owner: 0 })
        );
    }

    #[test]
    fn unchanged_models_give_zero_lcv() {
        let packets = vec![packet(0, model(1.0), model(1.0)), packet(1, model(0.5), model(0.5))];
        let w = uniform(&[0, 1]);
        for j in [BTreeSet::new(), BTreeSet::from([0]), BTreeSet::from([0, 1])] {
            assert_eq!(
                partial_model(0, &packets, &w, &j).unwrap(),
                partial_model(0, &packets, &w, &BTreeSet::new()).unwrap()
            );
        }
        let lcv = compute_lcv(0, 0, &packets, &w, &testset(), &LcvSettings::default(), 0).unwrap();
        assert!(lcv.entries.values().all(|&v| v == 0.0));
        assert_eq!(lcv.entries.len(), 2);
    }

    #[test]
    fn single_member_neighborhood() {
        let packets = vec![packet(2, model(-1.0), model(1.0))];
        let lcv =
            compute_lcv(2, 0, &packets, &uniform(&[2]), &testset(), &LcvSettings::default(), 0)
                .unwrap();
        assert_eq!(lcv.entries.keys().copied().collect::<Vec<_>>(), vec![2]);
        // accuracy goes from 0 to 1
        assert_eq!(lcv.get(2), 1.0);
    }

    #[test]
    fn exact_cap_enforced() {
        let packets: Vec<_> = (0..3).map(|j| packet(j, model(0.0), model(1.0))).collect();
        let settings = LcvSettings {
            exact_cap: 2,
            ..LcvSettings::default()
        };
        assert_eq!(
            compute_lcv(0, 0, &packets, &uniform(&[0, 1, 2]), &testset(), &settings, 0),
            Err(Error::ExactCapExceeded { players: 3, cap: 2 })
        );
    }

    #[test]
    fn filter_replaces_low_accuracy_pre_models() {
        let ts = testset();
        let good = model(1.0);
        let bad = model(-1.0);
        let packets = vec![packet(0, good.clone(), good.clone()), packet(1, bad, good.clone())];
        let (out, replaced) = filter_pretrain_models(0, &good, &packets, &ts, 0.1).unwrap();
        assert_eq!(replaced, vec![1]);
        assert_eq!(out[1].pre_model, good);
        assert_eq!(out[1].post_model, packets[1].post_model);
        let (same, none) = filter_pretrain_models(0, &good, &packets, &ts, 1.0).unwrap();
        assert!(none.is_empty());
        assert_eq!(same, packets);
    }
}
