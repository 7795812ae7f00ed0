//! Batch studies built on the simulator: agreement with exact Shapley,
//! client removal, quantity/quality correlation and dishonest robustness.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::baselines::{cfl_exact_shapley, mr_contributions, or_contributions, run_cfl};
use crate::config::{
    Attack, DistributionName, FakeModelName, InflationName, RemovalOrder, SimConfig, TopologyName,
};
use crate::engine::{mean, Simulation};
use crate::error::{Error, Result};
use crate::learner::Dataset;
use crate::oracle::{cosine_distance, exact_shapley, pearson};
use crate::rng::{rng_for, Stream};
use crate::adversary::select_roster;

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    let var = if xs.is_empty() {
        0.0
    } else {
        xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
    };
    (m, var.sqrt())
}

/// `None` when a vector is all zeros.
fn guarded_distance(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    match cosine_distance(a, b) {
        Ok(d) => Ok(Some(d)),
        Err(Error::UndefinedDistance) => Ok(None),
        Err(e) => Err(e),
    }
}

fn mean_defined(xs: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = xs.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| mean(&defined))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OwnerDistance {
    pub owner: usize,
    pub literal: Option<f64>,
    pub normalized: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapleyComparison {
    pub topology: String,
    pub distribution: String,
    pub owners: Vec<OwnerDistance>,
    /// Mean over owners whose distance is defined; `None` if none is.
    pub mean_literal: Option<f64>,
    pub mean_normalized: Option<f64>,
    /// Owners whose distance is undefined because a vector is zero.
    pub undefined: Vec<usize>,
    /// Highest-degree client on star graphs.
    pub hub: Option<usize>,
    pub trip_literal: Vec<Vec<f64>>,
    pub trip_normalized: Vec<Vec<f64>>,
    pub shapley_literal: Vec<Vec<f64>>,
    pub shapley_normalized: Vec<Vec<f64>>,
    /// Per-subset accuracy tables, `tables[owner][mask]`.
    pub tables: Vec<Vec<f64>>,
    /// Centralized-training comparison, if requested.
    pub cfl: Option<CflComparison>,
}

/// Baseline vectors against the exact CFL Shapley value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CflComparison {
    pub exact: Vec<f64>,
    pub vectors: BTreeMap<String, Vec<f64>>,
    pub distances: BTreeMap<String, Option<f64>>,
}

fn contribution_matrix(sim: &Simulation) -> Result<Vec<Vec<f64>>> {
    Ok(sim
        .run()?
        .contributions
        .into_iter()
        .map(|c| c.values)
        .collect())
}

/// Runs TRIP under both Shapley conventions and the exact re-execution
/// oracle on the same seeds, then compares per owner.
pub fn compare_shapley(
    cfg: &SimConfig,
    external: Option<BTreeMap<String, Vec<f64>>>,
) -> Result<ShapleyComparison> {
    let mut lit_cfg = cfg.clone();
    lit_cfg.contribution.normalize_shapley = false;
    let mut norm_cfg = cfg.clone();
    norm_cfg.contribution.normalize_shapley = true;
    let lit_sim = Simulation::new(lit_cfg)?;
    let norm_sim = Simulation::new(norm_cfg)?;

    let truth = exact_shapley(&lit_sim, false)?;
    let truth_norm = truth.with_normalization(true);
    let trip_literal = contribution_matrix(&lit_sim)?;
    let trip_normalized = contribution_matrix(&norm_sim)?;

    let mut owners = Vec::with_capacity(cfg.clients);
    let mut undefined = Vec::new();
    for i in 0..cfg.clients {
        let literal = guarded_distance(&trip_literal[i], &truth.values[i])?;
        let normalized = guarded_distance(&trip_normalized[i], &truth_norm.values[i])?;
        if literal.is_none() || normalized.is_none() {
            undefined.push(i);
        }
        owners.push(OwnerDistance {
            owner: i,
            literal,
            normalized,
        });
    }
    let lits: Vec<_> = owners.iter().map(|o| o.literal).collect();
    let norms: Vec<_> = owners.iter().map(|o| o.normalized).collect();

    let hub = (cfg.topology.kind == TopologyName::Star).then(|| {
        let s = &lit_sim.schedules();
        (0..cfg.clients)
            .max_by_key(|&i| (s.first().map_or(0, |r| r.in_neighbors[i].len()), usize::MAX - i))
            .unwrap_or(0)
    });

    let cfl = if cfg.experiment.baselines || external.is_some() {
        let normalize = true;
        let exact = cfl_exact_shapley(&lit_sim, normalize)?;
        let trace = run_cfl(&lit_sim)?;
        let mut vectors = BTreeMap::new();
        vectors.insert("mr".to_string(), mr_contributions(&trace, lit_sim.test_set(), normalize)?);
        vectors.insert("or".to_string(), or_contributions(&trace, lit_sim.test_set(), normalize)?);
        vectors.insert(
            "trip".to_string(),
            crate::engine::column_means(&norm_sim.run()?.contributions),
        );
        for (k, v) in external.unwrap_or_default() {
            vectors.insert(k, v);
        }
        let distances = vectors
            .iter()
            .map(|(k, v)| Ok((k.clone(), guarded_distance(v, &exact)?)))
            .collect::<Result<_>>()?;
        Some(CflComparison {
            exact,
            vectors,
            distances,
        })
    } else {
        None
    };

    Ok(ShapleyComparison {
        topology: format!("{:?}", cfg.topology.kind).to_lowercase(),
        distribution: cfg.distribution_spec()?.kind_name().to_string(),
        mean_literal: mean_defined(&lits),
        mean_normalized: mean_defined(&norms),
        owners,
        undefined,
        hub,
        trip_literal,
        trip_normalized,
        shapley_literal: truth.values,
        shapley_normalized: truth_norm.values,
        tables: truth.tables,
        cfl,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemovalRow {
    pub k: usize,
    pub order: RemovalOrder,
    /// Mean final accuracy over surviving clients (averaged over repeats
    /// for the random order).
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub removed: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemovalReport {
    pub scores: Vec<f64>,
    pub baseline_accuracy: f64,
    pub rows: Vec<RemovalRow>,
}

impl RemovalReport {
    pub fn accuracy(&self, k: usize, order: RemovalOrder) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.k == k && r.order == order)
            .map(|r| r.mean_accuracy)
    }
}

/// Final accuracies after retraining without `removed`. The topology is
/// regenerated with the same distribution settings over the survivors.
fn survivors_accuracy(base: &Simulation, removed: &[usize]) -> Result<Vec<f64>> {
    let cfg = base.config();
    let survivors: Vec<usize> = (0..cfg.clients).filter(|i| !removed.contains(i)).collect();
    let mut sub = cfg.clone();
    sub.clients = survivors.len();
    sub.adversary.roster = None;
    sub.adversary.d1 = None;
    sub.adversary.d2 = None;
    sub.countermeasures.c1 = false;
    sub.countermeasures.c2 = false;
    let data: Vec<Dataset> = survivors.iter().map(|&i| base.client_data()[i].clone()).collect();
    let sim = Simulation::from_parts(sub, data, base.test_set().clone())?;
    let models = sim.run_models(&vec![true; survivors.len()])?;
    models
        .iter()
        .map(|m| crate::learner::eval(m, sim.test_set()))
        .collect()
}

/// Ids of the `k` highest (or lowest) scores; ties go to the lower id.
fn ranked(scores: &[f64], k: usize, highest: bool) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..scores.len()).collect();
    ids.sort_by(|&a, &b| {
        let ord = scores[a].total_cmp(&scores[b]);
        let ord = if highest { ord.reverse() } else { ord };
        ord.then(a.cmp(&b))
    });
    let mut out = ids[..k].to_vec();
    out.sort_unstable();
    out
}

pub fn client_removal(cfg: &SimConfig) -> Result<RemovalReport> {
    let n = cfg.clients;
    let ex = &cfg.experiment;
    if let Some(&k) = ex.removal_ks.iter().find(|&&k| k >= n) {
        return Err(Error::InvalidConfig(format!(
            "cannot remove {k} of {n} clients"
        )));
    }
    let sim = Simulation::new(cfg.clone())?;
    let result = sim.run()?;
    let scores = result.client_scores();
    let baseline_accuracy = result.mean_final_accuracy();
    let mut rows = Vec::new();
    for &k in &ex.removal_ks {
        for &order in &ex.removal_orders {
            let removals: Vec<Vec<usize>> = match order {
                RemovalOrder::High => vec![ranked(&scores, k, true)],
                RemovalOrder::Low => vec![ranked(&scores, k, false)],
                RemovalOrder::Random => (0..ex.random_repeats.max(1))
                    .map(|r| {
                        let mut ids: Vec<usize> = (0..n).collect();
                        ids.shuffle(&mut rng_for(cfg.seed, Stream::Experiment, &[k as u64, r as u64]));
                        let mut pick = ids[..k].to_vec();
                        pick.sort_unstable();
                        pick
                    })
                    .collect(),
            };
            let mut means = Vec::new();
            let mut pooled = Vec::new();
            for removed in &removals {
                let acc = survivors_accuracy(&sim, removed)?;
                means.push(mean(&acc));
                pooled.extend(acc);
            }
            rows.push(RemovalRow {
                k,
                order,
                mean_accuracy: mean(&means),
                std_accuracy: mean_std(&pooled).1,
                removed: removals,
            });
        }
    }
    Ok(RemovalReport {
        scores,
        baseline_accuracy,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub kind: String,
    /// Partition size or noise sigma per client.
    pub parameter: Vec<f64>,
    pub scores: Vec<f64>,
    /// `None` when a vector has zero variance.
    pub pearson: Option<f64>,
}

pub fn correlation(cfg: &SimConfig) -> Result<CorrelationReport> {
    let spec = cfg.distribution_spec()?;
    let sim = Simulation::new(cfg.clone())?;
    let parameter = match cfg.distribution.kind {
        DistributionName::Sizes => sim.client_data().iter().map(|d| d.len() as f64).collect(),
        DistributionName::NoisyImages => spec
            .client_parameter(cfg.clients)?
            .unwrap_or_else(|| vec![0.0; cfg.clients]),
        _ => {
            return Err(Error::InvalidConfig(format!(
                "correlation needs a sizes or noisy-images distribution, got {}",
                spec.kind_name()
            )))
        }
    };
    let scores = sim.run()?.client_scores();
    let pearson = match pearson(&parameter, &scores) {
        Ok(r) => Some(r),
        Err(Error::UndefinedCorrelation(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(CorrelationReport {
        kind: spec.kind_name().to_string(),
        parameter,
        scores,
        pearson,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioResult {
    pub attack: Attack,
    pub countermeasures: bool,
    pub dishonest_mean: f64,
    pub dishonest_std: f64,
    pub honest_mean: f64,
    pub honest_std: f64,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DishonestReport {
    pub roster: Vec<usize>,
    /// Mean score of the roster clients in the honest run without
    /// countermeasures.
    pub baseline_mean: f64,
    pub scenarios: Vec<ScenarioResult>,
}

impl DishonestReport {
    pub fn scenario(&self, attack: Attack, countermeasures: bool) -> Option<&ScenarioResult> {
        self.scenarios
            .iter()
            .find(|s| s.attack == attack && s.countermeasures == countermeasures)
    }
}

fn split_groups(scores: &[f64], roster: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let mut bad = Vec::new();
    let mut good = Vec::new();
    for (i, &s) in scores.iter().enumerate() {
        if roster.contains(&i) {
            bad.push(s);
        } else {
            good.push(s);
        }
    }
    (bad, good)
}

/// Every attack in the config with and without both countermeasures. The
/// roster is fixed across scenarios, and the honest scenario splits the
/// clients into the same two groups.
pub fn dishonest(cfg: &SimConfig) -> Result<DishonestReport> {
    let roster = match &cfg.adversary.roster {
        Some(r) => {
            let mut r = r.clone();
            r.sort_unstable();
            r.dedup();
            r
        }
        None => select_roster(
            cfg.clients,
            cfg.adversary.fraction,
            crate::rng::derive_seed(cfg.seed, Stream::Roster, &[]),
        )?,
    };
    let d1 = cfg.adversary.d1.unwrap_or(FakeModelName::InvertedPre);
    let d2 = cfg.adversary.d2.unwrap_or(InflationName::Absolute);

    let mut attacks = cfg.experiment.attacks.clone();
    if !attacks.contains(&Attack::Honest) {
        attacks.insert(0, Attack::Honest);
    }
    let mut scenarios = Vec::new();
    for &attack in &attacks {
        for countermeasures in [false, true] {
            let mut c = cfg.clone();
            c.adversary.roster = Some(roster.clone());
            c.adversary.d1 = matches!(attack, Attack::D1 | Attack::D1d2).then_some(d1);
            c.adversary.d2 = matches!(attack, Attack::D2 | Attack::D1d2).then_some(d2);
            c.countermeasures.c1 = countermeasures;
            c.countermeasures.c2 = countermeasures;
            let scores = Simulation::new(c)?.run()?.client_scores();
            let (bad, good) = split_groups(&scores, &roster);
            let (dishonest_mean, dishonest_std) = mean_std(&bad);
            let (honest_mean, honest_std) = mean_std(&good);
            scenarios.push(ScenarioResult {
                attack,
                countermeasures,
                dishonest_mean,
                dishonest_std,
                honest_mean,
                honest_std,
                scores,
            });
        }
    }
    let baseline_mean = scenarios
        .iter()
        .find(|s| s.attack == Attack::Honest && !s.countermeasures)
        .map_or(0.0, |s| s.dishonest_mean);
    Ok(DishonestReport {
        roster,
        baseline_mean,
        scenarios,
    })
}
