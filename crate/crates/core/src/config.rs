//! Simulation configuration.
//!
//! The structs here mirror the TOML config file one-to-one. Every field
//! has a default except `clients` and `rounds`; `validate` checks the
//! cross-field constraints before any work starts.

use serde::{Deserialize, Serialize};

use crate::adversary::{AdversaryProfile, FakeModel, InflationBase, LcvInflation};
use crate::coordinator::{OutlierSettings, Shrinkage};
use crate::error::{Error, Result};
use crate::lcv::{LcvMode, LcvSettings};
use crate::learner::{BlobTask, DistributionKind, DistributionSpec, PerClient, TrainSettings};
use crate::rng::{derive_seed, Stream};
use crate::topology::{Edge, TopologyKind, TopologySpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub clients: usize,
    pub rounds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub training: TrainSettings,
    #[serde(default)]
    pub data: DataSettings,
    #[serde(default)]
    pub distribution: DistributionSettings,
    #[serde(default)]
    pub topology: TopologySettings,
    #[serde(default)]
    pub contribution: ContributionSettings,
    #[serde(default)]
    pub countermeasures: CountermeasureSettings,
    #[serde(default)]
    pub adversary: AdversarySettings,
    #[serde(default)]
    pub experiment: ExperimentSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DataSourceKind {
    #[default]
    Blobs,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSettings {
    pub source: DataSourceKind,
    pub features: usize,
    pub classes: usize,
    pub center_scale: f64,
    pub spread: f64,
    pub train_samples: usize,
    pub test_samples: usize,
    pub train_csv: Option<String>,
    pub test_csv: Option<String>,
    /// Defaults to the simulation seed.
    pub seed: Option<u64>,
}

impl Default for DataSettings {
    fn default() -> Self {
        let blobs = BlobTask::default();
        Self {
            source: DataSourceKind::Blobs,
            features: blobs.features,
            classes: blobs.classes,
            center_scale: blobs.center_scale,
            spread: blobs.spread,
            train_samples: 1200,
            test_samples: 500,
            train_csv: None,
            test_csv: None,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DistributionName {
    #[default]
    Iid,
    NonIid,
    Sizes,
    NoisyImages,
    NoisyLabels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistributionSettings {
    pub kind: DistributionName,
    pub concentration: f64,
    pub fractions: Option<PerClient>,
    pub sigmas: Option<PerClient>,
    pub flip_ratios: Option<PerClient>,
    pub seed: Option<u64>,
}

impl Default for DistributionSettings {
    fn default() -> Self {
        Self {
            kind: DistributionName::Iid,
            concentration: 0.5,
            fractions: None,
            sigmas: None,
            flip_ratios: None,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyName {
    #[default]
    Regular,
    Star,
    Line,
    WattsStrogatz,
    /// Edges loaded from a schedule file into `TopologySettings::rounds`.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologySettings {
    pub kind: TopologyName,
    pub k: usize,
    pub beta: f64,
    pub time_varying: bool,
    pub schedule_file: Option<String>,
    /// Resolved contents of `schedule_file`.
    pub rounds: Option<Vec<Vec<Edge>>>,
    pub seed: Option<u64>,
}

impl Default for TopologySettings {
    fn default() -> Self {
        Self {
            kind: TopologyName::Regular,
            k: 4,
            beta: 0.2,
            time_varying: false,
            schedule_file: None,
            rounds: None,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    #[default]
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContributionSettings {
    pub normalize_shapley: bool,
    pub mode: ModeName,
    pub samples: usize,
    pub exact_cap: usize,
    /// Largest client count for the exact re-execution oracle.
    pub oracle_cap: usize,
}

impl Default for ContributionSettings {
    fn default() -> Self {
        Self {
            normalize_shapley: false,
            mode: ModeName::Exact,
            samples: 1000,
            exact_cap: 16,
            oracle_cap: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CountermeasureSettings {
    pub c1: bool,
    pub c2: bool,
    pub v_threshold: f64,
    pub lambda: f64,
    pub shrinkage: Shrinkage,
    pub max_iters: usize,
    pub tol: f64,
    /// `None`: twice the round's median absolute LCV entry.
    pub consistency_threshold: Option<f64>,
}

impl Default for CountermeasureSettings {
    fn default() -> Self {
        let o = OutlierSettings::default();
        Self {
            c1: false,
            c2: false,
            v_threshold: 0.1,
            lambda: o.lambda,
            shrinkage: o.shrinkage,
            max_iters: o.max_iters,
            tol: o.tol,
            consistency_threshold: o.consistency_threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FakeModelName {
    RandomParams,
    StaleInitial,
    InvertedPre,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InflationName {
    Absolute,
    RelativeOwn,
    RelativeMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdversarySettings {
    /// Fraction of clients drawn as dishonest when `roster` is unset.
    pub fraction: f64,
    /// Explicit dishonest client ids.
    pub roster: Option<Vec<usize>>,
    pub d1: Option<FakeModelName>,
    pub d1_sigma: f64,
    pub d1_scale: f64,
    pub d2: Option<InflationName>,
    pub d2_value: f64,
    pub d2_multiplier: f64,
    pub d2_offset: f64,
}

impl Default for AdversarySettings {
    fn default() -> Self {
        Self {
            fraction: 0.2,
            roster: None,
            d1: None,
            d1_sigma: 5.0,
            d1_scale: 10.0,
            d2: None,
            d2_value: 1.0,
            d2_multiplier: 1.0,
            d2_offset: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RemovalOrder {
    High,
    Low,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Attack {
    Honest,
    D1,
    D2,
    D1d2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSettings {
    /// Removal counts for the client-removal study.
    pub removal_ks: Vec<usize>,
    pub removal_orders: Vec<RemovalOrder>,
    /// Seeds averaged for the random removal order.
    pub random_repeats: usize,
    /// Attacks run by the dishonest study, each with and without
    /// countermeasures.
    pub attacks: Vec<Attack>,
    /// Also compute the CFL baselines in the Shapley comparison.
    pub baselines: bool,
    /// Optional `method,client,value` CSV of externally computed vectors.
    pub external_baselines: Option<String>,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            removal_ks: vec![2, 4, 6],
            removal_orders: vec![RemovalOrder::High, RemovalOrder::Low, RemovalOrder::Random],
            random_repeats: 3,
            attacks: vec![Attack::Honest, Attack::D1, Attack::D2, Attack::D1d2],
            baselines: false,
            external_baselines: None,
        }
    }
}

impl SimConfig {
    /// A config with every default and the given size.
    pub fn new(clients: usize, rounds: usize) -> Self {
        Self {
            clients,
            rounds,
            seed: 0,
            training: TrainSettings::default(),
            data: DataSettings::default(),
            distribution: DistributionSettings::default(),
            topology: TopologySettings::default(),
            contribution: ContributionSettings::default(),
            countermeasures: CountermeasureSettings::default(),
            adversary: AdversarySettings::default(),
            experiment: ExperimentSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.clients == 0 {
            return bad("clients must be at least 1".into());
        }
        let cm = &self.countermeasures;
        if !(cm.lambda > 0.0 && cm.lambda <= 1.0) {
            return bad(format!("lambda = {} violates λ ∈ (0,1]", cm.lambda));
        }
        if !(cm.v_threshold >= 0.0) {
            return bad(format!("v_threshold must be >= 0, got {}", cm.v_threshold));
        }
        if let Some(t) = cm.consistency_threshold {
            if !(t >= 0.0) {
                return bad(format!("consistency_threshold must be >= 0, got {t}"));
            }
        }
        if !(cm.tol > 0.0) {
            return bad("tol must be positive".into());
        }
        let tr = &self.training;
        if !(tr.learning_rate >= 0.0) || !tr.learning_rate.is_finite() {
            return bad(format!("learning_rate must be >= 0, got {}", tr.learning_rate));
        }
        if tr.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.contribution.mode == ModeName::MonteCarlo && self.contribution.samples == 0 {
            return bad("monte-carlo mode needs samples >= 1".into());
        }
        match self.data.source {
            DataSourceKind::Blobs => {
                if self.data.features == 0 || self.data.classes < 2 {
                    return bad("blob data needs features >= 1 and classes >= 2".into());
                }
                if self.data.test_samples == 0 {
                    return bad("test_samples must be at least 1".into());
                }
            }
            DataSourceKind::Csv => {
                if self.data.train_csv.is_none() || self.data.test_csv.is_none() {
                    return bad("csv data needs train_csv and test_csv".into());
                }
            }
        }
        if self.topology.kind == TopologyName::File && self.topology.rounds.is_none() {
            return bad("file topology needs schedule_file".into());
        }
        if self.topology.kind != TopologyName::File && self.topology.schedule_file.is_some() {
            return bad("schedule_file is only read when kind = \"file\"".into());
        }
        self.topology_spec().validate()?;
        self.distribution_spec()?;
        let a = &self.adversary;
        for (key, v) in [
            ("d1_sigma", a.d1_sigma),
            ("d1_scale", a.d1_scale),
            ("d2_value", a.d2_value),
            ("d2_multiplier", a.d2_multiplier),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{key} must be positive, got {v}"));
            }
        }
        if let Some(profile) = self.adversary_profile() {
            profile.validate()?;
        }
        if let Some(roster) = &self.adversary.roster {
            if let Some(&bad_id) = roster.iter().find(|&&i| i >= self.clients) {
                return bad(format!("roster names client {bad_id} outside 0..{}", self.clients));
            }
        }
        if !(0.0..=1.0).contains(&self.adversary.fraction) {
            return bad(format!(
                "adversary fraction must lie in [0, 1], got {}",
                self.adversary.fraction
            ));
        }
        Ok(())
    }

    pub fn data_seed(&self) -> u64 {
        self.data
            .seed
            .unwrap_or_else(|| derive_seed(self.seed, Stream::BlobCenters, &[]))
    }

    pub fn blob_task(&self) -> BlobTask {
        BlobTask {
            features: self.data.features,
            classes: self.data.classes,
            center_scale: self.data.center_scale,
            spread: self.data.spread,
            seed: self.data_seed(),
        }
    }

    pub fn distribution_spec(&self) -> Result<DistributionSpec> {
        let d = &self.distribution;
        let need = |v: &Option<PerClient>, what: &str| {
            v.clone().ok_or_else(|| {
                Error::InvalidConfig(format!("distribution kind needs `{what}`"))
            })
        };
        let kind = match d.kind {
            DistributionName::Iid => DistributionKind::Iid,
            DistributionName::NonIid => DistributionKind::NonIid {
                concentration: d.concentration,
            },
            DistributionName::Sizes => DistributionKind::Sizes {
                fractions: need(&d.fractions, "fractions")?,
            },
            DistributionName::NoisyImages => DistributionKind::NoisyImages {
                sigmas: need(&d.sigmas, "sigmas")?,
            },
            DistributionName::NoisyLabels => DistributionKind::NoisyLabels {
                flip_ratios: need(&d.flip_ratios, "flip_ratios")?,
            },
        };
        Ok(DistributionSpec {
            kind,
            seed: d
                .seed
                .unwrap_or_else(|| derive_seed(self.seed, Stream::Partition, &[])),
        })
    }

    pub fn topology_spec(&self) -> TopologySpec {
        let t = &self.topology;
        let kind = match t.kind {
            TopologyName::Regular => TopologyKind::Regular { k: t.k },
            TopologyName::Star => TopologyKind::Star,
            TopologyName::Line => TopologyKind::Line,
            TopologyName::WattsStrogatz => TopologyKind::WattsStrogatz {
                k: t.k,
                beta: t.beta,
            },
            TopologyName::File => TopologyKind::Custom {
                rounds: t.rounds.clone().unwrap_or_default(),
            },
        };
        TopologySpec {
            kind,
            n: self.clients,
            rounds: self.rounds,
            seed: t
                .seed
                .unwrap_or_else(|| derive_seed(self.seed, Stream::Topology, &[])),
            time_varying: t.time_varying,
        }
    }

    pub fn lcv_settings(&self) -> LcvSettings {
        LcvSettings {
            normalize_shapley: self.contribution.normalize_shapley,
            mode: match self.contribution.mode {
                ModeName::Exact => LcvMode::Exact,
                ModeName::MonteCarlo => LcvMode::MonteCarlo {
                    samples: self.contribution.samples,
                },
            },
            exact_cap: self.contribution.exact_cap,
        }
    }

    pub fn outlier_settings(&self) -> Option<OutlierSettings> {
        let c = &self.countermeasures;
        c.c2.then_some(OutlierSettings {
            lambda: c.lambda,
            shrinkage: c.shrinkage,
            max_iters: c.max_iters,
            tol: c.tol,
            consistency_threshold: c.consistency_threshold,
        })
    }

    /// The behavior shared by every dishonest client, if any is configured.
    pub fn adversary_profile(&self) -> Option<AdversaryProfile> {
        let a = &self.adversary;
        let d1 = a.d1.map(|g| match g {
            FakeModelName::RandomParams => FakeModel::RandomParams { sigma: a.d1_sigma },
            FakeModelName::StaleInitial => FakeModel::StaleInitial,
            FakeModelName::InvertedPre => FakeModel::InvertedPre { scale: a.d1_scale },
        });
        let d2 = a.d2.map(|m| match m {
            InflationName::Absolute => LcvInflation::Absolute { value: a.d2_value },
            InflationName::RelativeOwn => LcvInflation::Relative {
                base: InflationBase::Own,
                multiplier: a.d2_multiplier,
                offset: a.d2_offset,
            },
            InflationName::RelativeMax => LcvInflation::Relative {
                base: InflationBase::Max,
                multiplier: a.d2_multiplier,
                offset: a.d2_offset,
            },
        });
        let p = AdversaryProfile { d1, d2 };
        p.is_dishonest().then_some(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_range_enforced() {
        let mut cfg = SimConfig::new(2, 1);
        cfg.countermeasures.lambda = 1.5;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("λ ∈ (0,1]"));
        cfg.countermeasures.lambda = 1.0;
        cfg.topology.k = 1;
        cfg.topology.kind = TopologyName::Line;
        cfg.validate().unwrap();
    }

    #[test]
    fn distribution_parameters_required() {
        let mut cfg = SimConfig::new(2, 1);
        cfg.topology.kind = TopologyName::Line;
        cfg.distribution.kind = DistributionName::Sizes;
        assert!(cfg.validate().is_err());
        cfg.distribution.fractions = Some(PerClient::Range { min: 1.0, max: 3.0 });
        cfg.validate().unwrap();
    }

    #[test]
    fn honest_by_default() {
        assert_eq!(SimConfig::new(4, 1).adversary_profile(), None);
    }
}
