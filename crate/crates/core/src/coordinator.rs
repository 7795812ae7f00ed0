//! Coordinator-side contribution accounting.
//!
//! The coordinator only ever sees round metadata (neighbor sets and
//! aggregation weights) and the LCVs clients report. It keeps one
//! cumulative contribution vector per client model and, when enabled,
//! cleans each round's reports with a sparse outlier regression before
//! propagating them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lcv::Lcv;
use crate::topology::RoundSchedule;

/// `φ_owner^{(round)}`: cumulative contribution of every client to the
/// owner's model at the start of `round`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionVector {
    pub owner: usize,
    pub round: usize,
    pub values: Vec<f64>,
}

pub fn initial_contributions(n: usize) -> Vec<ContributionVector> {
    (0..n)
        .map(|owner| ContributionVector {
            owner,
            round: 0,
            values: vec![0.0; n],
        })
        .collect()
}

/// One propagation step: each owner inherits the weighted average of its
/// neighborhood's vectors (same weights as model aggregation) and adds its
/// own round LCV.
pub fn propagate(
    phis: &[ContributionVector],
    schedule: &RoundSchedule,
    lcvs: &[Lcv],
) -> Result<Vec<ContributionVector>> {
    let n = schedule.n;
    if phis.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} contribution vectors for {n} clients",
            phis.len()
        )));
    }
    let round = phis.first().map_or(0, |p| p.round);
    let mut by_owner: Vec<Option<&Lcv>> = vec![None; n];
    for l in lcvs {
        if l.owner < n {
            by_owner[l.owner] = Some(l);
        }
    }
    (0..n)
        .map(|i| {
            let lcv = by_owner[i].ok_or(Error::IncompleteRoundReport(i))?;
            let mut acc = vec![0.0; n];
            let mut total = 0.0;
            for (&j, &w) in &schedule.weights[i] {
                for (a, x) in acc.iter_mut().zip(&phis[j].values) {
                    *a += w * x;
                }
                total += w;
            }
            for a in &mut acc {
                *a /= total;
            }
            for (&j, &v) in &lcv.entries {
                if j >= n {
                    return Err(Error::ShapeMismatch(format!(
                        "LCV of client {i} names client {j} outside 0..{n}"
                    )));
                }
                acc[j] += v;
            }
            Ok(ContributionVector {
                owner: i,
                round: round + 1,
                values: acc,
            })
        })
        .collect()
}

/// Which squared-loss scaling the `λ‖γ‖₁` penalty is paired with.
///
/// `Half` minimizes `‖r‖² + λ‖γ‖₁` and shrinks by `λ/2`; `Full` minimizes
/// `½‖r‖² + λ‖γ‖₁` and shrinks by `λ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Shrinkage {
    #[default]
    Half,
    Full,
}

impl Shrinkage {
    pub fn amount(self, lambda: f64) -> f64 {
        match self {
            Shrinkage::Half => lambda / 2.0,
            Shrinkage::Full => lambda,
        }
    }
}

/// `sign(r) · max(|r| − λ/2, 0)`.
pub fn soft_threshold(r: f64, lambda: f64) -> f64 {
    shrink(r, Shrinkage::Half.amount(lambda))
}

fn shrink(r: f64, amount: f64) -> f64 {
    if r > amount {
        r - amount
    } else if r < -amount {
        r + amount
    } else {
        0.0
    }
}

/// Stacked nonzero LCV entries `p` with their (reporter, subject) rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierProblem {
    pub p: Vec<f64>,
    pub rows: Vec<(usize, usize)>,
    pub subjects: usize,
    pub lambda: f64,
    #[serde(default)]
    pub shrinkage: Shrinkage,
}

impl OutlierProblem {
    pub fn from_lcvs(lcvs: &[Lcv], subjects: usize, lambda: f64, shrinkage: Shrinkage) -> Self {
        let mut p = Vec::new();
        let mut rows = Vec::new();
        for l in lcvs {
            for (j, v) in l.nonzero() {
                p.push(v);
                rows.push((l.owner, j));
            }
        }
        Self {
            p,
            rows,
            subjects,
            lambda,
            shrinkage,
        }
    }

    /// `‖p − Av − γ‖² + λ‖γ‖₁`, with the squared term halved under
    /// [`Shrinkage::Full`].
    pub fn objective(&self, v: &[f64], gamma: &[f64]) -> f64 {
        let sq: f64 = self
            .p
            .iter()
            .zip(&self.rows)
            .zip(gamma)
            .map(|((p, &(_, j)), g)| (p - v[j] - g).powi(2))
            .sum();
        let l1: f64 = gamma.iter().map(|g| g.abs()).sum();
        let scale = match self.shrinkage {
            Shrinkage::Half => 1.0,
            Shrinkage::Full => 0.5,
        };
        scale * sq + self.lambda * l1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierFit {
    pub v: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Rows whose manipulation term is nonzero.
    pub flags: Vec<bool>,
    /// Subjects no row reports on; their `v` is 0.
    pub no_report: Vec<usize>,
    pub iterations: usize,
    /// Objective at the start and after every iteration.
    pub objective_trace: Vec<f64>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len();
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}

/// Alternating minimization of the sparse outlier model. `v` starts at
/// per-subject medians and `γ` at zero; each iteration soft-thresholds the
/// residuals into `γ` and then refits `v` as per-subject means of `p − γ`.
pub fn detect_outliers(prob: &OutlierProblem, max_iters: usize, tol: f64) -> Result<OutlierFit> {
    if !(prob.lambda > 0.0 && prob.lambda <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "lambda must lie in (0, 1], got {}",
            prob.lambda
        )));
    }
    if prob.p.len() != prob.rows.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} values for {} rows",
            prob.p.len(),
            prob.rows.len()
        )));
    }
    let n = prob.subjects;
    let mut by_subject: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (k, &(_, j)) in prob.rows.iter().enumerate() {
        if j >= n {
            return Err(Error::ShapeMismatch(format!(
                "row {k} names subject {j} outside 0..{n}"
            )));
        }
        by_subject[j].push(k);
    }
    let no_report: Vec<usize> = (0..n).filter(|&j| by_subject[j].is_empty()).collect();

    let mut v: Vec<f64> = by_subject
        .iter()
        .map(|ks| {
            if ks.is_empty() {
                0.0
            } else {
                median(&mut ks.iter().map(|&k| prob.p[k]).collect::<Vec<_>>())
            }
        })
        .collect();
    let mut gamma = vec![0.0; prob.p.len()];
    let amount = prob.shrinkage.amount(prob.lambda);
    let mut trace = vec![prob.objective(&v, &gamma)];
    let mut iterations = 0;

    for _ in 0..max_iters {
        iterations += 1;
        let mut change: f64 = 0.0;
        for (k, &(_, j)) in prob.rows.iter().enumerate() {
            let g = shrink(prob.p[k] - v[j], amount);
            change = change.max((g - gamma[k]).abs());
            gamma[k] = g;
        }
        for (j, ks) in by_subject.iter().enumerate() {
            if ks.is_empty() {
                continue;
            }
            let mean = ks.iter().map(|&k| prob.p[k] - gamma[k]).sum::<f64>() / ks.len() as f64;
            change = change.max((mean - v[j]).abs());
            v[j] = mean;
        }
        trace.push(prob.objective(&v, &gamma));
        if change < tol {
            break;
        }
    }

    Ok(OutlierFit {
        flags: gamma.iter().map(|&g| g != 0.0).collect(),
        v,
        gamma,
        no_report,
        iterations,
        objective_trace: trace,
    })
}

/// Replaces every LCV whose L2 distance to its reference `ψ̂` (entries
/// `v_j` on the LCV's nonzero support) exceeds `threshold`. Returns the
/// corrected LCVs and the owners whose reports were replaced.
pub fn correct_lcvs(lcvs: &[Lcv], v: &[f64], threshold: f64) -> (Vec<Lcv>, Vec<usize>) {
    let mut replaced = Vec::new();
    let out = lcvs
        .iter()
        .map(|l| {
            let reference: Vec<(usize, f64)> = l.nonzero().map(|(j, _)| (j, v[j])).collect();
            let dist = l
                .nonzero()
                .zip(&reference)
                .map(|((_, a), (_, b))| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            if dist > threshold {
                replaced.push(l.owner);
                let mut fixed = l.clone();
                for (j, x) in reference {
                    fixed.entries.insert(j, x);
                }
                fixed
            } else {
                l.clone()
            }
        })
        .collect();
    (out, replaced)
}

/// Outlier-detection knobs. `consistency_threshold = None` uses twice the
/// round's median absolute nonzero LCV entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierSettings {
    pub lambda: f64,
    pub shrinkage: Shrinkage,
    pub max_iters: usize,
    pub tol: f64,
    pub consistency_threshold: Option<f64>,
}

impl Default for OutlierSettings {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            shrinkage: Shrinkage::Half,
            max_iters: 100,
            tol: 1e-8,
            consistency_threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedEntry {
    pub reporter: usize,
    pub subject: usize,
    pub gamma: f64,
}

/// What outlier detection did in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundAudit {
    pub round: usize,
    pub flagged: Vec<FlaggedEntry>,
    pub replaced: Vec<usize>,
    pub no_report: Vec<usize>,
    pub threshold: f64,
    pub iterations: usize,
}

/// Round-by-round contribution tracker.
#[derive(Debug, Clone)]
pub struct Coordinator {
    n: usize,
    phis: Vec<ContributionVector>,
    outliers: Option<OutlierSettings>,
}

impl Coordinator {
    pub fn new(n: usize, outliers: Option<OutlierSettings>) -> Self {
        Self {
            n,
            phis: initial_contributions(n),
            outliers,
        }
    }

    pub fn contributions(&self) -> &[ContributionVector] {
        &self.phis
    }

    pub fn into_contributions(self) -> Vec<ContributionVector> {
        self.phis
    }

    /// Ingests one round: optional outlier correction, then propagation.
    pub fn ingest(&mut self, schedule: &RoundSchedule, lcvs: &[Lcv]) -> Result<Option<RoundAudit>> {
        if schedule.n != self.n {
            return Err(Error::ShapeMismatch(format!(
                "schedule for {} clients, coordinator tracks {}",
                schedule.n, self.n
            )));
        }
        let round = self.phis.first().map_or(0, |p| p.round);
        let (cleaned, audit) = match self.outliers {
            None => (None, None),
            Some(cfg) => {
                let prob = OutlierProblem::from_lcvs(lcvs, self.n, cfg.lambda, cfg.shrinkage);
                let fit = detect_outliers(&prob, cfg.max_iters, cfg.tol)?;
                let threshold = cfg.consistency_threshold.unwrap_or_else(|| {
                    let mut abs: Vec<f64> = prob.p.iter().map(|x| x.abs()).collect();
                    if abs.is_empty() {
                        0.0
                    } else {
                        2.0 * median(&mut abs)
                    }
                });
                let (fixed, replaced) = correct_lcvs(lcvs, &fit.v, threshold);
                let flagged = prob
                    .rows
                    .iter()
                    .zip(&fit.gamma)
                    .filter(|(_, g)| **g != 0.0)
                    .map(|(&(reporter, subject), &gamma)| FlaggedEntry {
                        reporter,
                        subject,
                        gamma,
                    })
                    .collect();
                (
                    Some(fixed),
                    Some(RoundAudit {
                        round,
                        flagged,
                        replaced,
                        no_report: fit.no_report,
                        threshold,
                        iterations: fit.iterations,
                    }),
                )
            }
        };
        self.phis = propagate(&self.phis, schedule, cleaned.as_deref().unwrap_or(lcvs))?;
        Ok(audit)
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::topology::{build_schedule, TopologyKind, TopologySpec};

    fn lcv(owner: usize, round: usize, entries: &[(usize, f64)]) -> Lcv {
        Lcv {
            owner,
            round,
            entries: entries.iter().copied().collect(),
        }
    }

    #[test]
    fn soft_threshold_branches() {
        assert!((soft_threshold(0.5, 0.4) - 0.3).abs() < 1e-15);
        assert_eq!(soft_threshold(0.1, 0.4), 0.0);
        assert!((soft_threshold(-0.5, 0.4) + 0.3).abs() < 1e-15);
        assert!((shrink(0.5, Shrinkage::Full.amount(0.4)) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_lcvs_keep_zero_contributions() {
        let sched = build_schedule(
            &TopologySpec {
                kind: TopologyKind::Line,
                n: 3,
                rounds: 1,
                seed: 0,
                time_varying: false,
            },
            0,
        )
        .unwrap();
        let mut c = Coordinator::new(3, None);
        for _ in 0..4 {
            let lcvs: Vec<Lcv> = (0..3).map(|i| lcv(i, 0, &[(i, 0.0)])).collect();
            c.ingest(&sched, &lcvs).unwrap();
        }
        assert!(c.contributions().iter().all(|p| p.values.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn single_client_accumulates() {
        let sched = RoundSchedule::from_edges(1, &[]).unwrap();
        let mut c = Coordinator::new(1, None);
        c.ingest(&sched, &[lcv(0, 0, &[(0, 0.25)])]).unwrap();
        c.ingest(&sched, &[lcv(0, 1, &[(0, 0.5)])]).unwrap();
        assert_eq!(c.contributions()[0].values, vec![0.75]);
        assert_eq!(c.contributions()[0].round, 2);
    }

    #[test]
    fn missing_report_is_an_error() {
        let sched = RoundSchedule::from_edges(2, &[]).unwrap();
        assert_eq!(
            propagate(&initial_contributions(2), &sched, &[lcv(0, 0, &[(0, 1.0)])]),
            Err(Error::IncompleteRoundReport(1))
        );
    }

    #[test]
    fn clean_data_is_a_fixpoint() {
        let truth = [0.2, 0.5, 0.3];
        let mut p = Vec::new();
        let mut rows = Vec::new();
        for r in 0..4 {
            for (j, &t) in truth.iter().enumerate() {
                p.push(t);
                rows.push((r, j));
            }
        }
        let prob = OutlierProblem {
            p,
            rows,
            subjects: 3,
            lambda: 0.5,
            shrinkage: Shrinkage::Half,
        };
        let fit = detect_outliers(&prob, 100, 1e-10).unwrap();
        for j in 0..3 {
            assert!((fit.v[j] - truth[j]).abs() < 1e-10);
        }
        assert!(fit.gamma.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn unreported_subject_is_zero() {
        let prob = OutlierProblem {
            p: vec![1.0],
            rows: vec![(0, 0)],
            subjects: 2,
            lambda: 0.5,
            shrinkage: Shrinkage::Half,
        };
        let fit = detect_outliers(&prob, 10, 1e-8).unwrap();
        assert_eq!(fit.no_report, vec![1]);
        assert_eq!(fit.v[1], 0.0);
    }

    #[test]
    fn lambda_out_of_range() {
        let prob = OutlierProblem {
            p: vec![],
            rows: vec![],
            subjects: 1,
            lambda: 1.5,
            shrinkage: Shrinkage::Half,
        };
        assert!(detect_outliers(&prob, 10, 1e-8).is_err());
    }

    #[test]
    fn coordinated_inflation_is_absorbed() {
        // Every report about subject 0 is inflated by the same amount.
        let mut p = Vec::new();
        let mut rows = Vec::new();
        for r in 0..5 {
            p.push(0.2 + 3.0);
            rows.push((r, 0));
            p.push(0.4);
            rows.push((r, 1));
        }
        let prob = OutlierProblem {
            p,
            rows,
            subjects: 2,
            lambda: 0.5,
            shrinkage: Shrinkage::Half,
        };
        let fit = detect_outliers(&prob, 100, 1e-10).unwrap();
        assert!((fit.v[0] - 3.2).abs() < 1e-10);
        assert!(fit.flags.iter().all(|f| !f));
    }

    #[test]
    fn correction_rules() {
        let v = [0.1, 0.2];
        let honest = lcv(0, 0, &[(0, 0.1), (1, 0.2)]);
        let (out, replaced) = correct_lcvs(std::slice::from_ref(&honest), &v, 1.0);
        assert_eq!(out[0], honest);
        assert!(replaced.is_empty());

        let inflated = lcv(1, 0, &[(0, 0.1), (1, 5.2)]);
        let (out, replaced) = correct_lcvs(std::slice::from_ref(&inflated), &v, 1.0);
        assert_eq!(replaced, vec![1]);
        assert_eq!(out[0].entries, BTreeMap::from([(0, 0.1), (1, 0.2)]));

        let (out, replaced) = correct_lcvs(std::slice::from_ref(&inflated), &v, f64::INFINITY);
        assert!(replaced.is_empty());
        assert_eq!(out[0], inflated);
    }
}
