//! Round-by-round decentralized training.
//!
//! Each round every client trains its current model locally, sends the
//! (pre, post) pair to its out-neighbors, aggregates the post-models it
//! received, and reports an LCV to the coordinator.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{falsify_lcv, falsify_pretrain, select_roster, AdversaryProfile};
use crate::config::{DataSourceKind, SimConfig};
use crate::coordinator::{ContributionVector, Coordinator, RoundAudit};
use crate::error::{Error, Result};
use crate::lcv::{compute_lcv, filter_pretrain_models, Lcv};
use crate::learner::{eval, generate_partitions, train, Dataset, ModelParams};
use crate::rng::{derive_seed, Stream};
use crate::topology::{build_schedule, RoundSchedule};

/// What a client sends to each out-neighbor in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ExchangePacket {
    pub sender: usize,
    pub post_model: ModelParams,
    pub pre_model: ModelParams,
}

/// Weighted average of `(model, weight)` pairs in the given order.
pub fn aggregate(models: &[(&ModelParams, f64)]) -> Result<ModelParams> {
    ModelParams::weighted_average(models.iter().copied())
}

/// A received pre-model that failed the accuracy filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterEvent {
    pub round: usize,
    pub receiver: usize,
    pub sender: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub config: SimConfig,
    pub roster: Vec<usize>,
    pub final_models: Vec<ModelParams>,
    /// `accuracy[t][i]`: test accuracy of client `i`'s model at the start of
    /// round `t`, for `t = 0..=rounds`.
    pub accuracy: Vec<Vec<f64>>,
    /// Reported LCVs, one inner vector per round ordered by owner.
    pub lcvs: Vec<Vec<Lcv>>,
    pub contributions: Vec<ContributionVector>,
    pub audits: Vec<RoundAudit>,
    pub filtered: Vec<FilterEvent>,
    pub warnings: Vec<String>,
}

impl SimResult {
    /// Per-client score: the mean over owners of each client's share in
    /// the final contribution vectors.
    pub fn client_scores(&self) -> Vec<f64> {
        column_means(&self.contributions)
    }

    pub fn final_accuracy(&self) -> &[f64] {
        self.accuracy.last().map_or(&[], |v| v.as_slice())
    }

    pub fn mean_final_accuracy(&self) -> f64 {
        mean(self.final_accuracy())
    }
}

pub fn column_means(phis: &[ContributionVector]) -> Vec<f64> {
    let n = phis.first().map_or(0, |p| p.values.len());
    let mut out = vec![0.0; n];
    for p in phis {
        for (o, v) in out.iter_mut().zip(&p.values) {
            *o += v;
        }
    }
    let m = phis.len().max(1) as f64;
    out.iter_mut().for_each(|v| *v /= m);
    out
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// A fully prepared simulation: data, schedules and roster are fixed at
/// construction so repeated runs (or oracle reruns) share them.
#[derive(Debug, Clone)]
pub struct Simulation {
    cfg: SimConfig,
    client_data: Vec<Dataset>,
    test: Dataset,
    schedules: Vec<RoundSchedule>,
    roster: Vec<usize>,
    profile: Option<AdversaryProfile>,
    initial: ModelParams,
    warnings: Vec<String>,
}

impl Simulation {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let (base, test) = match cfg.data.source {
            DataSourceKind::Blobs => {
                let task = cfg.blob_task();
                (
                    task.sample("train", cfg.data.train_samples, Stream::BlobTrain)?,
                    task.sample("test", cfg.data.test_samples, Stream::BlobTest)?,
                )
            }
            DataSourceKind::Csv => {
                let train_path = cfg.data.train_csv.as_deref().unwrap_or_default();
                let test_path = cfg.data.test_csv.as_deref().unwrap_or_default();
                let classes = Dataset::load_csv(train_path, None)?
                    .shape()
                    .classes
                    .max(Dataset::load_csv(test_path, None)?.shape().classes);
                (
                    Dataset::load_csv(train_path, Some(classes))?,
                    Dataset::load_csv(test_path, Some(classes))?,
                )
            }
        };
        let parts = generate_partitions(&cfg.distribution_spec()?, &base, cfg.clients)?;
        Self::from_parts(cfg, parts, test)
    }

    /// Builds a simulation over caller-supplied client datasets.
    pub fn from_parts(cfg: SimConfig, client_data: Vec<Dataset>, test: Dataset) -> Result<Self> {
        cfg.validate()?;
        if client_data.len() != cfg.clients {
            return Err(Error::ShapeMismatch(format!(
                "{} client datasets for {} clients",
                client_data.len(),
                cfg.clients
            )));
        }
        if test.is_empty() {
            return Err(Error::EmptyEvalSet);
        }
        let shape = test.shape();
        if let Some(d) = client_data.iter().find(|d| d.shape() != shape) {
            return Err(Error::ShapeMismatch(format!(
                "dataset {} does not match the test set shape",
                d.id
            )));
        }
        let spec = cfg.topology_spec();
        let schedules = (0..cfg.rounds)
            .map(|t| build_schedule(&spec, t))
            .collect::<Result<Vec<_>>>()?;
        let profile = cfg.adversary_profile();
        let roster = match (&profile, &cfg.adversary.roster) {
            (None, _) => Vec::new(),
            (Some(_), Some(r)) => {
                let mut r = r.clone();
                r.sort_unstable();
                r.dedup();
                r
            }
            (Some(_), None) => select_roster(
                cfg.clients,
                cfg.adversary.fraction,
                derive_seed(cfg.seed, Stream::Roster, &[]),
            )?,
        };
        let warnings = client_data
            .iter()
            .enumerate()
            .filter(|(_, d)| d.is_empty())
            .map(|(i, _)| format!("client {i} has an empty dataset and never trains"))
            .collect();
        Ok(Self {
            client_data,
            test,
            schedules,
            roster,
            profile,
            initial: ModelParams::zeros(shape),
            warnings,
            cfg,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn client_data(&self) -> &[Dataset] {
        &self.client_data
    }

    pub fn test_set(&self) -> &Dataset {
        &self.test
    }

    pub fn schedules(&self) -> &[RoundSchedule] {
        &self.schedules
    }

    pub fn roster(&self) -> &[usize] {
        &self.roster
    }

    pub fn initial_model(&self) -> &ModelParams {
        &self.initial
    }

    fn train_seed(&self, i: usize, t: usize) -> u64 {
        derive_seed(self.cfg.seed, Stream::Train, &[i as u64, t as u64])
    }

    /// Local training for every client in `trainers`; the rest keep their
    /// model. Each client's shuffle stream depends only on `(i, t)`.
    fn train_round(&self, models: &[ModelParams], t: usize, trainers: &[bool]) -> Result<Vec<ModelParams>> {
        models
            .par_iter()
            .enumerate()
            .map(|(i, theta)| {
                if !trainers[i] {
                    return Ok(theta.clone());
                }
                train(theta, &self.client_data[i], &self.cfg.training, self.train_seed(i, t))
                    .map(|out| out.params)
                    .map_err(|e| match e {
                        Error::NonFinite(_) => Error::TrainingDiverged { client: i, round: t },
                        other => other,
                    })
            })
            .collect()
    }

    fn aggregate_round(&self, schedule: &RoundSchedule, post: &[ModelParams]) -> Result<Vec<ModelParams>> {
        (0..self.cfg.clients)
            .into_par_iter()
            .map(|i| {
                let pairs: Vec<_> = schedule.weights[i].iter().map(|(&j, &w)| (&post[j], w)).collect();
                aggregate(&pairs)
            })
            .collect()
    }

    fn evaluate(&self, models: &[ModelParams]) -> Result<Vec<f64>> {
        models.par_iter().map(|m| eval(m, &self.test)).collect()
    }

    /// Plain training without contribution accounting. Clients outside
    /// `trainers` skip local training but still exchange and aggregate.
    pub fn run_models(&self, trainers: &[bool]) -> Result<Vec<ModelParams>> {
        if trainers.len() != self.cfg.clients {
            return Err(Error::ShapeMismatch(format!(
                "trainer mask covers {} of {} clients",
                trainers.len(),
                self.cfg.clients
            )));
        }
        let mut models = vec![self.initial.clone(); self.cfg.clients];
        for (t, schedule) in self.schedules.iter().enumerate() {
            let post = self.train_round(&models, t, trainers)?;
            models = self.aggregate_round(schedule, &post)?;
        }
        Ok(models)
    }

    pub fn run(&self) -> Result<SimResult> {
        let n = self.cfg.clients;
        let everyone = vec![true; n];
        let mut dishonest = vec![false; n];
        for &i in &self.roster {
            dishonest[i] = true;
        }
        let lcv_settings = self.cfg.lcv_settings();
        let cm = &self.cfg.countermeasures;
        let mut coordinator = Coordinator::new(n, self.cfg.outlier_settings());

        let mut models = vec![self.initial.clone(); n];
        let mut accuracy = vec![self.evaluate(&models)?];
        let mut lcv_archive = Vec::with_capacity(self.schedules.len());
        let mut audits = Vec::new();
        let mut filtered = Vec::new();

        for (t, schedule) in self.schedules.iter().enumerate() {
            let post = self.train_round(&models, t, &everyone)?;
            let sent_pre = (0..n)
                .map(|i| match &self.profile {
                    Some(p) if dishonest[i] => falsify_pretrain(
                        p,
                        &models[i],
                        &self.initial,
                        derive_seed(self.cfg.seed, Stream::FakeModel, &[i as u64, t as u64]),
                    ),
                    _ => Ok(models[i].clone()),
                })
                .collect::<Result<Vec<_>>>()?;

            let per_client = (0..n)
                .into_par_iter()
                .map(|i| {
                    let packets: Vec<ExchangePacket> = schedule.weights[i]
                        .keys()
                        .map(|&j| ExchangePacket {
                            sender: j,
                            post_model: post[j].clone(),
                            pre_model: if j == i { models[i].clone() } else { sent_pre[j].clone() },
                        })
                        .collect();
                    let (packets, replaced) = if cm.c1 {
                        filter_pretrain_models(i, &models[i], &packets, &self.test, cm.v_threshold)?
                    } else {
                        (packets, Vec::new())
                    };
                    let lcv = compute_lcv(
                        i,
                        t,
                        &packets,
                        &schedule.weights[i],
                        &self.test,
                        &lcv_settings,
                        self.cfg.seed,
                    )?;
                    let lcv = match &self.profile {
                        Some(p) if dishonest[i] => falsify_lcv(p, &lcv),
                        _ => lcv,
                    };
                    Ok((lcv, replaced))
                })
                .collect::<Result<Vec<_>>>()?;

            let mut lcvs = Vec::with_capacity(n);
            for (i, (lcv, replaced)) in per_client.into_iter().enumerate() {
                filtered.extend(replaced.into_iter().map(|sender| FilterEvent {
                    round: t,
                    receiver: i,
                    sender,
                }));
                lcvs.push(lcv);
            }
            if let Some(audit) = coordinator.ingest(schedule, &lcvs)? {
                audits.push(audit);
            }
            lcv_archive.push(lcvs);
            models = self.aggregate_round(schedule, &post)?;
            accuracy.push(self.evaluate(&models)?);
        }

        Ok(SimResult {
            config: self.cfg.clone(),
            roster: self.roster.clone(),
            final_models: models,
            accuracy,
            lcvs: lcv_archive,
            contributions: coordinator.into_contributions(),
            audits,
            filtered,
            warnings: self.warnings.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TopologyName;

    fn small(n: usize, t: usize) -> SimConfig {
        let mut cfg = SimConfig::new(n, t);
        cfg.topology.kind = TopologyName::Line;
        cfg.data.train_samples = 120;
        cfg.data.test_samples = 80;
        cfg.seed = 11;
        cfg
    }

    #[test]
    fn zero_rounds_keep_initial_models() {
        let sim = Simulation::new(small(3, 0)).unwrap();
        let res = sim.run().unwrap();
        assert!(res.final_models.iter().all(|m| m == sim.initial_model()));
        assert_eq!(res.accuracy.len(), 1);
        assert!(res.lcvs.is_empty());
    }

    #[test]
    fn run_models_matches_full_run() {
        let sim = Simulation::new(small(4, 3)).unwrap();
        let res = sim.run().unwrap();
        assert_eq!(sim.run_models(&[true; 4]).unwrap(), res.final_models);
        assert_eq!(res.accuracy.len(), 4);
        assert_eq!(res.lcvs.len(), 3);
    }

    #[test]
    fn reruns_are_identical() {
        let sim = Simulation::new(small(4, 2)).unwrap();
        assert_eq!(sim.run().unwrap(), sim.run().unwrap());
    }

    #[test]
    fn nobody_training_keeps_zero_models() {
        let sim = Simulation::new(small(3, 2)).unwrap();
        let models = sim.run_models(&[false; 3]).unwrap();
        assert!(models.iter().all(|m| m == sim.initial_model()));
    }
}
