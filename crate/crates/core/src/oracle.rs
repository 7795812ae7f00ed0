//! Ground-truth Shapley values by exhaustive re-execution.
//!
//! For every subset `S` of clients the whole simulation is replayed with
//! the clients outside `S` acting as dummies: they never train but still
//! exchange and aggregate, so the topology is untouched. Training RNG
//! streams depend only on `(client, round)`, which makes the dummy
//! substitution the only difference between reruns.

use rayon::prelude::*;
use serde::Serialize;

use crate::engine::Simulation;
use crate::error::{Error, Result};
use crate::learner::{eval, ModelParams};
use crate::shapley::shapley_from_table;

/// Exact Shapley values for every final-model owner.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapleyResult {
    pub normalized: bool,
    /// `values[i][j]`: client `j`'s Shapley value for owner `i`'s model.
    pub values: Vec<Vec<f64>>,
    /// `tables[i][mask]`: accuracy of owner `i`'s final model when only
    /// the clients in `mask` train.
    pub tables: Vec<Vec<f64>>,
}

impl ShapleyResult {
    /// The same tables under the other Shapley convention.
    pub fn with_normalization(&self, normalize: bool) -> ShapleyResult {
        let n = self.values.len();
        ShapleyResult {
            normalized: normalize,
            values: self
                .tables
                .iter()
                .map(|t| shapley_from_table(t, n, normalize))
                .collect(),
            tables: self.tables.clone(),
        }
    }
}

/// Final models when only clients with `subset[i] == true` train.
pub fn rerun_with_subset(sim: &Simulation, subset: &[bool]) -> Result<Vec<ModelParams>> {
    sim.run_models(subset)
}

pub fn exact_shapley(sim: &Simulation, normalize: bool) -> Result<ShapleyResult> {
    let cfg = sim.config();
    let n = cfg.clients;
    let cap = cfg.contribution.oracle_cap;
    if n > cap {
        return Err(Error::OracleCapExceeded { clients: n, cap });
    }
    if !sim.roster().is_empty() {
        return Err(Error::InvalidConfig(
            "exact Shapley is only defined for honest runs; remove the adversary settings".into(),
        ));
    }
    let test = sim.test_set();
    // by_mask[mask][owner]
    let by_mask: Vec<Vec<f64>> = (0..1u64 << n)
        .into_par_iter()
        .map(|mask| {
            let subset: Vec<bool> = (0..n).map(|j| mask >> j & 1 == 1).collect();
            rerun_with_subset(sim, &subset)?
                .iter()
                .map(|m| eval(m, test))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let tables: Vec<Vec<f64>> = (0..n)
        .map(|i| by_mask.iter().map(|row| row[i]).collect())
        .collect();
    Ok(ShapleyResult {
        normalized: normalize,
        values: tables
            .iter()
            .map(|t| shapley_from_table(t, n, normalize))
            .collect(),
        tables,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `1 - cos(a, b)`, in `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedDistance);
    }
    Ok((1.0 - dot(a, b) / (na * nb)).clamp(0.0, 2.0))
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "vectors of length {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}
