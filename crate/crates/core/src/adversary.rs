//! Dishonest client behaviors.
//!
//! A dishonest client controls only what it sends: its outgoing
//! pre-training model (D1) and its own LCV report (D2). Nothing here
//! touches other clients' packets or coordinator state.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::ModelParams;
use crate::lcv::Lcv;
use crate::rng::{rng_for, Stream};

/// How a D1 client builds its fake pre-training model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FakeModel {
    /// Fresh i.i.d. Gaussian weights.
    RandomParams {
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
    /// The shared initial model. Vacuous in round 0.
    StaleInitial,
    /// `-scale` times the true pre-training model: predicts the least likely
    /// class, so its accuracy is far below chance once the model has
    /// learned anything. Vacuous in round 0 when the initial model is zero.
    InvertedPre {
        #[serde(default = "default_scale")]
        scale: f64,
    },
}

fn default_sigma() -> f64 {
    5.0
}
fn default_scale() -> f64 {
    10.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InflationBase {
    /// The client's own true entry.
    Own,
    /// The largest entry of the client's true LCV.
    Max,
}

/// How a D2 client rewrites its own LCV entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LcvInflation {
    /// Own entry becomes `value`.
    Absolute {
        #[serde(default = "default_value")]
        value: f64,
    },
    /// Own entry becomes `base * multiplier + offset`.
    Relative {
        base: InflationBase,
        multiplier: f64,
        #[serde(default)]
        offset: f64,
    },
}

fn default_value() -> f64 {
    1.0
}

impl Default for LcvInflation {
    fn default() -> Self {
        LcvInflation::Absolute {
            value: default_value(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct AdversaryProfile {
    pub d1: Option<FakeModel>,
    pub d2: Option<LcvInflation>,
}

impl AdversaryProfile {
    pub fn is_dishonest(&self) -> bool {
        self.d1.is_some() || self.d2.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.is_dishonest() {
            return Err(Error::InvalidConfig(
                "a dishonest client needs d1 or d2".into(),
            ));
        }
        match self.d1 {
            Some(FakeModel::RandomParams { sigma }) if !(sigma > 0.0) => {
                return Err(Error::InvalidConfig("d1 sigma must be positive".into()))
            }
            Some(FakeModel::InvertedPre { scale }) if !(scale > 0.0) => {
                return Err(Error::InvalidConfig("d1 scale must be positive".into()))
            }
            _ => {}
        }
        match self.d2 {
            Some(LcvInflation::Absolute { value }) if !(value > 0.0) => Err(
                Error::InvalidConfig("d2 inflation value must be positive".into()),
            ),
            Some(LcvInflation::Relative { multiplier, .. }) if !(multiplier > 0.0) => Err(
                Error::InvalidConfig("d2 multiplier must be positive".into()),
            ),
            _ => Ok(()),
        }
    }
}

/// The pre-training model a D1 client sends instead of `true_pre`.
/// Returns `true_pre` unchanged when D1 is not set.
pub fn falsify_pretrain(
    profile: &AdversaryProfile,
    true_pre: &ModelParams,
    initial: &ModelParams,
    seed: u64,
) -> Result<ModelParams> {
    match profile.d1 {
        None => Ok(true_pre.clone()),
        Some(FakeModel::StaleInitial) => Ok(initial.clone()),
        Some(FakeModel::InvertedPre { scale }) => {
            ModelParams::new(true_pre.as_slice().iter().map(|w| -scale * w).collect())
        }
        Some(FakeModel::RandomParams { sigma }) => {
            let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            let mut rng = rng_for(seed, Stream::FakeModel, &[]);
            ModelParams::new((0..true_pre.len()).map(|_| normal.sample(&mut rng)).collect())
        }
    }
}

/// The LCV a D2 client reports instead of `true_lcv`.
pub fn falsify_lcv(profile: &AdversaryProfile, true_lcv: &Lcv) -> Lcv {
    let Some(inflation) = profile.d2 else {
        return true_lcv.clone();
    };
    let own = true_lcv.get(true_lcv.owner);
    let value = match inflation {
        LcvInflation::Absolute { value } => value,
        LcvInflation::Relative {
            base,
            multiplier,
            offset,
        } => {
            let b = match base {
                InflationBase::Own => own,
                InflationBase::Max => true_lcv
                    .entries
                    .values()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max),
            };
            b * multiplier + offset
        }
    };
    let mut out = true_lcv.clone();
    out.entries.insert(true_lcv.owner, value);
    out
}

/// Picks `round(fraction * n)` dishonest clients uniformly at random.
pub fn select_roster(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!(
            "dishonest fraction must lie in [0, 1], got {fraction}"
        )));
    }
    let count = (fraction * n as f64).round() as usize;
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng_for(seed, Stream::Roster, &[]));
    let mut picked = ids[..count].to_vec();
    picked.sort_unstable();
    Ok(picked)
}
