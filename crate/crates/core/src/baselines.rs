//! Centralized FL reference runs and the two CFL contribution baselines:
//! multi-round accumulation (MR) and one-round pseudo-reconstruction (OR).
//!
//! Aggregation is applied in delta form, `θ + Σ w (u - θ) / Σ w`, so a
//! replay that uses every recorded update reproduces the trace exactly.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::engine::Simulation;
use crate::error::{Error, Result};
use crate::learner::{eval, train, Dataset, ModelParams};
use crate::rng::{derive_seed, Stream};
use crate::shapley::shapley_from_table;

/// Largest client count for the subset-enumerating baselines.
pub const BASELINE_CAP: usize = 16;

/// Everything the reconstruction baselines need from a CFL run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CflTrace {
    /// Global model at the start of each round, plus the final one.
    pub globals: Vec<ModelParams>,
    /// `deltas[t][j]`: client `j`'s update minus the round's global model.
    pub deltas: Vec<Vec<Vec<f64>>>,
    pub weights: Vec<f64>,
}

impl CflTrace {
    pub fn final_model(&self) -> &ModelParams {
        self.globals.last().expect("trace holds the initial model")
    }

    fn clients(&self) -> usize {
        self.weights.len()
    }
}

/// `base + Σ w_j δ_j / Σ w_j` over the members of `mask`, in ascending id
/// order. An empty selection returns `base`.
fn apply_deltas(base: &ModelParams, deltas: &[Vec<f64>], weights: &[f64], mask: u64) -> Result<ModelParams> {
    let members: Vec<usize> = (0..deltas.len()).filter(|&j| mask >> j & 1 == 1).collect();
    if members.is_empty() {
        return Ok(base.clone());
    }
    let total: f64 = members.iter().map(|&j| weights[j]).sum();
    let mut acc = vec![0.0; base.len()];
    for &j in &members {
        for (a, d) in acc.iter_mut().zip(&deltas[j]) {
            *a += weights[j] * d;
        }
    }
    ModelParams::new(
        base.as_slice()
            .iter()
            .zip(&acc)
            .map(|(b, a)| b + a / total)
            .collect(),
    )
}

fn full_mask(n: usize) -> u64 {
    if n == 0 {
        0
    } else {
        u64::MAX >> (64 - n)
    }
}

fn check_cap(sim: &Simulation) -> Result<usize> {
    let n = sim.config().clients;
    let cap = sim.config().contribution.oracle_cap;
    if n > cap {
        return Err(Error::ExactCapExceeded { players: n, cap });
    }
    Ok(n)
}

/// One FedAvg run over the members of `mask` with uniform weights.
fn run_fedavg(sim: &Simulation, mask: u64) -> Result<CflTrace> {
    let cfg = sim.config();
    let n = cfg.clients;
    let weights = vec![1.0; n];
    let data: &[Dataset] = sim.client_data();
    let mut theta = sim.initial_model().clone();
    let mut globals = vec![theta.clone()];
    let mut deltas = Vec::with_capacity(cfg.rounds);
    for t in 0..cfg.rounds {
        let round: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                if mask >> j & 1 == 0 {
                    return Ok(vec![0.0; theta.len()]);
                }
                let seed = derive_seed(cfg.seed, Stream::Train, &[j as u64, t as u64]);
                let out = train(&theta, &data[j], &cfg.training, seed).map_err(|e| match e {
                    Error::NonFinite(_) => Error::TrainingDiverged { client: j, round: t },
                    other => other,
                })?;
                Ok(out
                    .params
                    .as_slice()
                    .iter()
                    .zip(theta.as_slice())
                    .map(|(u, b)| u - b)
                    .collect())
            })
            .collect::<Result<_>>()?;
        theta = apply_deltas(&theta, &round, &weights, mask)?;
        globals.push(theta.clone());
        deltas.push(round);
    }
    Ok(CflTrace {
        globals,
        deltas,
        weights,
    })
}

/// Broadcast, train, aggregate for `rounds` rounds over every client.
pub fn run_cfl(sim: &Simulation) -> Result<CflTrace> {
    run_fedavg(sim, full_mask(sim.config().clients))
}

/// Sum over rounds of the round-wise Shapley values, where `u_t(S)` is the
/// accuracy of the round's global model plus the mean update of `S`.
pub fn mr_contributions(trace: &CflTrace, test: &Dataset, normalize: bool) -> Result<Vec<f64>> {
    let n = trace.clients();
    if n > BASELINE_CAP {
        return Err(Error::ExactCapExceeded {
            players: n,
            cap: BASELINE_CAP,
        });
    }
    let mut total = vec![0.0; n];
    for (t, deltas) in trace.deltas.iter().enumerate() {
        let base = &trace.globals[t];
        let table = (0..1u64 << n)
            .into_par_iter()
            .map(|mask| eval(&apply_deltas(base, deltas, &trace.weights, mask)?, test))
            .collect::<Result<Vec<f64>>>()?;
        for (acc, v) in total.iter_mut().zip(shapley_from_table(&table, n, normalize)) {
            *acc += v;
        }
    }
    Ok(total)
}

/// Replays the aggregation using only the updates of `mask`, with weights
/// renormalized over the members present.
pub fn reconstruct(trace: &CflTrace, mask: u64) -> Result<ModelParams> {
    let mut theta = trace.globals[0].clone();
    for deltas in &trace.deltas {
        theta = apply_deltas(&theta, deltas, &trace.weights, mask)?;
    }
    Ok(theta)
}

/// Shapley values of the final accuracy of reconstructed models.
pub fn or_contributions(trace: &CflTrace, test: &Dataset, normalize: bool) -> Result<Vec<f64>> {
    let n = trace.clients();
    if n > BASELINE_CAP {
        return Err(Error::ExactCapExceeded {
            players: n,
            cap: BASELINE_CAP,
        });
    }
    let table = (0..1u64 << n)
        .into_par_iter()
        .map(|mask| eval(&reconstruct(trace, mask)?, test))
        .collect::<Result<Vec<f64>>>()?;
    Ok(shapley_from_table(&table, n, normalize))
}

/// Exact CFL Shapley values: FedAvg retrained from scratch for every
/// subset of participants.
pub fn cfl_exact_shapley(sim: &Simulation, normalize: bool) -> Result<Vec<f64>> {
    let n = check_cap(sim)?;
    let table = (0..1u64 << n)
        .into_par_iter()
        .map(|mask| eval(run_fedavg(sim, mask)?.final_model(), sim.test_set()))
        .collect::<Result<Vec<f64>>>()?;
    Ok(shapley_from_table(&table, n, normalize))
}

/// Writes `method,client,value` rows.
pub fn write_baseline_csv<W: Write>(out: W, vectors: &BTreeMap<String, Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["method", "client", "value"]).map_err(io)?;
    for (method, values) in vectors {
        for (j, v) in values.iter().enumerate() {
            w.write_record([method.as_str(), &j.to_string(), &format!("{v:.16e}")])
                .map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads `method,client,value` rows into dense vectors of length `n`.
pub fn read_baseline_csv<R: Read>(input: R, n: usize) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let bad = |what: &str| Error::Parse(format!("baseline row {}: {what}", line + 2));
        if rec.len() != 3 {
            return Err(bad("expected method,client,value"));
        }
        let client: usize = rec[1].trim().parse().map_err(|_| bad("bad client id"))?;
        let value: f64 = rec[2].trim().parse().map_err(|_| bad("bad value"))?;
        if client >= n {
            return Err(bad("client id out of range"));
        }
        out.entry(rec[0].trim().to_string())
            .or_insert_with(|| vec![0.0; n])[client] = value;
    }
    Ok(out)
}
