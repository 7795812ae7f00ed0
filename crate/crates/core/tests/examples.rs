//! Worked examples for each module, checked end to end.

use trip_core::adversary::{falsify_pretrain, AdversaryProfile, FakeModel};
use trip_core::baselines::{mr_contributions, run_cfl};
use trip_core::config::{DistributionName, SimConfig, TopologyName};
use trip_core::coordinator::{detect_outliers, propagate, initial_contributions, OutlierProblem, Shrinkage};
use trip_core::learner::{eval, generate_partitions, train, BlobTask, DistributionKind, DistributionSpec, PerClient};
use trip_core::oracle::rerun_with_subset;
use trip_core::rng::{derive_seed, Stream};
use trip_core::shapley::shapley_from_table;
use trip_core::{build_schedule, exact_shapley, Lcv, ModelParams, Simulation, TopologyKind, TopologySpec};

fn config(n: usize, t: usize, topology: TopologyName) -> SimConfig {
    let mut cfg = SimConfig::new(n, t);
    cfg.topology.kind = topology;
    cfg.topology.k = 2;
    cfg.data.train_samples = 60 * n;
    cfg.data.test_samples = 300;
    cfg.seed = 13;
    cfg
}

fn line(n: usize) -> TopologySpec {
    TopologySpec {
        kind: TopologyKind::Line,
        n,
        rounds: 2,
        seed: 0,
        time_varying: false,
    }
}

fn lcv(owner: usize, entries: &[(usize, f64)]) -> Lcv {
    Lcv {
        owner,
        round: 0,
        entries: entries.iter().copied().collect(),
    }
}

#[test]
fn isolated_client_trains_alone() {
    let sim = Simulation::new(config(1, 1, TopologyName::Line)).unwrap();
    let res = sim.run().unwrap();
    let seed = derive_seed(13, Stream::Train, &[0, 0]);
    let expect = train(sim.initial_model(), &sim.client_data()[0], &sim.config().training, seed)
        .unwrap()
        .params;
    assert_eq!(res.final_models[0], expect);
    assert_eq!(res.lcvs[0][0].entries.len(), 1);
    assert!(res.lcvs[0][0].get(0) != 0.0);
}

#[test]
fn two_clients_average_their_updates() {
    let sim = Simulation::new(config(2, 1, TopologyName::Line)).unwrap();
    let res = sim.run().unwrap();
    let post: Vec<ModelParams> = (0..2)
        .map(|i| {
            let seed = derive_seed(13, Stream::Train, &[i, 0]);
            train(sim.initial_model(), &sim.client_data()[i as usize], &sim.config().training, seed)
                .unwrap()
                .params
        })
        .collect();
    let avg = ModelParams::weighted_average([(&post[0], 1.0), (&post[1], 1.0)]).unwrap();
    assert_eq!(res.final_models[0], avg);
    assert_eq!(res.final_models[1], avg);
}

#[test]
fn zero_learning_rate_is_a_fixpoint() {
    let mut cfg = config(6, 4, TopologyName::Regular);
    cfg.training.learning_rate = 0.0;
    let sim = Simulation::new(cfg).unwrap();
    let res = sim.run().unwrap();
    assert!(res.final_models.iter().all(|m| m == sim.initial_model()));
    assert!(res.accuracy.iter().all(|row| row == &res.accuracy[0]));
    assert!(res.lcvs.iter().flatten().all(|l| l.entries.values().all(|&v| v == 0.0)));
    assert!(res.contributions.iter().all(|c| c.values.iter().all(|&v| v == 0.0)));
    let truth = exact_shapley(&sim, false).unwrap();
    assert!(truth.values.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn zero_rounds_leave_everything_initial() {
    let sim = Simulation::new(config(3, 0, TopologyName::Line)).unwrap();
    let res = sim.run().unwrap();
    assert!(res.final_models.iter().all(|m| m == sim.initial_model()));
    assert!(res.contributions.iter().all(|c| c.values.iter().all(|&v| v == 0.0)));
}

#[test]
fn training_beats_the_untrained_model() {
    let mut cfg = config(8, 10, TopologyName::Regular);
    cfg.topology.k = 4;
    let sim = Simulation::new(cfg).unwrap();
    let res = sim.run().unwrap();
    let untrained = eval(sim.initial_model(), sim.test_set()).unwrap();
    assert!(res.mean_final_accuracy() > untrained);
}

#[test]
fn dummy_reruns() {
    let sim = Simulation::new(config(4, 3, TopologyName::Line)).unwrap();
    let full = sim.run().unwrap();
    assert_eq!(rerun_with_subset(&sim, &[true; 4]).unwrap(), full.final_models);
    let none = rerun_with_subset(&sim, &[false; 4]).unwrap();
    assert!(none.iter().all(|m| m == sim.initial_model()));

    let one_round = Simulation::new(config(4, 1, TopologyName::Line)).unwrap();
    let only0 = rerun_with_subset(&one_round, &[true, false, false, false]).unwrap();
    let moved: Vec<bool> = only0.iter().map(|m| m != one_round.initial_model()).collect();
    assert_eq!(moved, vec![true, true, false, false]);

    let three = Simulation::new(config(3, 1, TopologyName::Line)).unwrap();
    let only1 = rerun_with_subset(&three, &[false, true, false]).unwrap();
    assert!(only1.iter().all(|m| m != three.initial_model()));
}

#[test]
fn oracle_efficiency_per_owner() {
    let sim = Simulation::new(config(4, 2, TopologyName::Star)).unwrap();
    let lit = exact_shapley(&sim, false).unwrap();
    let norm = lit.with_normalization(true);
    for (i, table) in lit.tables.iter().enumerate() {
        let gain = table[15] - table[0];
        assert!((norm.values[i].iter().sum::<f64>() - gain).abs() <= 1e-9);
        assert!((lit.values[i].iter().sum::<f64>() - 4.0 * gain).abs() <= 1e-9);
    }
}

#[test]
fn symmetric_clients_share_equally() {
    let mut cfg = config(2, 2, TopologyName::Line);
    cfg.training.batch_size = 1000;
    let task = cfg.blob_task();
    let data = task.sample("shared", 80, Stream::BlobTrain).unwrap();
    let test = task.sample("test", 300, Stream::BlobTest).unwrap();
    let sim = Simulation::from_parts(cfg, vec![data.clone(), data], test).unwrap();
    let res = exact_shapley(&sim, true).unwrap();
    for row in &res.values {
        assert!((row[0] - row[1]).abs() <= 1e-9);
    }
}

#[test]
fn two_player_literal_shapley() {
    let phi = shapley_from_table(&[0.1, 0.5, 0.3, 1.0], 2, false);
    assert!((phi[0] - 1.1).abs() < 1e-12);
    assert!((phi[1] - 0.7).abs() < 1e-12);
}

#[test]
fn self_average_accumulates() {
    let sched = build_schedule(&line(1), 0).unwrap();
    let mut phis = initial_contributions(1);
    phis = propagate(&phis, &sched, &[lcv(0, &[(0, 0.3)])]).unwrap();
    phis = propagate(&phis, &sched, &[lcv(0, &[(0, 0.45)])]).unwrap();
    assert!((phis[0].values[0] - 0.75).abs() < 1e-15);
}

/// Propagation on the path 0 - 1 - 2: a single unit LCV at
/// owner 0 in the first round, nothing afterwards.
#[test]
fn line_propagation_trace() {
    let sched = build_schedule(&line(3), 0).unwrap();
    let first: Vec<Lcv> = vec![lcv(0, &[(0, 1.0)]), lcv(1, &[]), lcv(2, &[])];
    let quiet: Vec<Lcv> = (0..3).map(|i| lcv(i, &[])).collect();
    let r1 = propagate(&initial_contributions(3), &sched, &first).unwrap();
    let got: Vec<f64> = r1.iter().map(|p| p.values[0]).collect();
    assert_eq!(got, vec![1.0, 0.0, 0.0]);
    let r2 = propagate(&r1, &sched, &quiet).unwrap();
    let got: Vec<f64> = r2.iter().map(|p| p.values[0]).collect();
    assert_eq!(got, vec![0.5, 1.0 / 3.0, 0.0]);

    // one mixing step from (1, 1/2, 0)
    let mut seeded = initial_contributions(3);
    seeded[0].values[0] = 1.0;
    seeded[1].values[0] = 0.5;
    let step = propagate(&seeded, &sched, &quiet).unwrap();
    let got: Vec<f64> = step.iter().map(|p| p.values[0]).collect();
    assert_eq!(got, vec![0.75, 0.5, 0.25]);
}

#[test]
fn single_inflated_report_is_isolated() {
    let truth = [0.2, 0.5, 0.3];
    let mut p = Vec::new();
    let mut rows = Vec::new();
    for (j, &v) in truth.iter().enumerate() {
        for r in 0..4 {
            p.push(v);
            rows.push((r, j));
        }
    }
    p.push(5.0);
    rows.push((4, 1));
    let prob = OutlierProblem {
        p,
        rows,
        subjects: 3,
        lambda: 0.5,
        shrinkage: Shrinkage::Half,
    };
    let fit = detect_outliers(&prob, 1000, 1e-14).unwrap();
    assert_eq!(fit.flags.iter().filter(|&&f| f).count(), 1);
    assert!(fit.flags[12]);
    // Fixpoint of the alternating updates: v = (4·0.5 + 5 − γ)/5 and
    // γ = 5 − v − λ/2, so v = 0.5625 and γ = 4.1875.
    assert!((fit.v[1] - 0.5625).abs() < 1e-9);
    assert!((fit.gamma[12] - 4.1875).abs() < 1e-9);
    assert!((fit.v[0] - 0.2).abs() < 1e-12 && (fit.v[2] - 0.3).abs() < 1e-12);
}

#[test]
fn random_fakes_are_near_chance() {
    let task = BlobTask { seed: 2, ..BlobTask::default() };
    let test = task.sample("test", 400, Stream::BlobTest).unwrap();
    let train_set = task.sample("train", 400, Stream::BlobTrain).unwrap();
    let trained = train(
        &ModelParams::zeros(task.shape()),
        &train_set,
        &trip_core::TrainSettings { epochs: 5, ..Default::default() },
        1,
    )
    .unwrap()
    .params;
    let trained_acc = eval(&trained, &test).unwrap();
    let profile = AdversaryProfile {
        d1: Some(FakeModel::RandomParams { sigma: 5.0 }),
        d2: None,
    };
    let mut total = 0.0;
    for seed in 0..20 {
        let fake = falsify_pretrain(&profile, &trained, &trained, seed).unwrap();
        let acc = eval(&fake, &test).unwrap();
        assert!((0.05..=0.55).contains(&acc), "fake accuracy {acc}");
        total += acc;
    }
    assert!(total / 20.0 < trained_acc - 0.2);

    let stale = AdversaryProfile {
        d1: Some(FakeModel::StaleInitial),
        d2: None,
    };
    let zero = ModelParams::zeros(task.shape());
    assert_eq!(falsify_pretrain(&stale, &zero, &zero, 0).unwrap(), zero);
}

#[test]
fn cfl_with_one_client_is_sequential_training() {
    let sim = Simulation::new(config(1, 3, TopologyName::Line)).unwrap();
    let trace = run_cfl(&sim).unwrap();
    let mut theta = sim.initial_model().clone();
    for t in 0..3u64 {
        let seed = derive_seed(13, Stream::Train, &[0, t]);
        theta = train(&theta, &sim.client_data()[0], &sim.config().training, seed)
            .unwrap()
            .params;
    }
    for (a, b) in trace.final_model().as_slice().iter().zip(theta.as_slice()) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn one_round_mr_is_that_rounds_shapley() {
    let sim = Simulation::new(config(3, 1, TopologyName::Line)).unwrap();
    let trace = run_cfl(&sim).unwrap();
    let base = &trace.globals[0];
    let table: Vec<f64> = (0..8u64)
        .map(|mask| {
            let members: Vec<usize> = (0..3).filter(|j| mask >> j & 1 == 1).collect();
            if members.is_empty() {
                return eval(base, sim.test_set()).unwrap();
            }
            let theta: Vec<f64> = (0..base.len())
                .map(|k| {
                    let sum: f64 = members.iter().map(|&j| trace.deltas[0][j][k]).sum();
                    base.as_slice()[k] + sum / members.len() as f64
                })
                .collect();
            eval(&ModelParams::new(theta).unwrap(), sim.test_set()).unwrap()
        })
        .collect();
    let brute = shapley_from_table(&table, 3, true);
    let mr = mr_contributions(&trace, sim.test_set(), true).unwrap();
    for j in 0..3 {
        assert!((mr[j] - brute[j]).abs() <= 1e-12);
    }
}

#[test]
fn label_noise_lowers_accuracy() {
    let ratios = [0.0, 0.25, 0.5];
    let mut means = [0.0; 3];
    for seed in 0..6u64 {
        let task = BlobTask { seed, ..BlobTask::default() };
        let base = task.sample("train", 400, Stream::BlobTrain).unwrap();
        let test = task.sample("test", 400, Stream::BlobTest).unwrap();
        for (r, &ratio) in ratios.iter().enumerate() {
            let spec = DistributionSpec {
                kind: DistributionKind::NoisyLabels {
                    flip_ratios: PerClient::List(vec![ratio]),
                },
                seed,
            };
            let part = generate_partitions(&spec, &base, 1).unwrap();
            let settings = trip_core::TrainSettings { epochs: 5, ..Default::default() };
            let model = train(&ModelParams::zeros(task.shape()), &part[0], &settings, seed).unwrap();
            means[r] += eval(&model.params, &test).unwrap() / 6.0;
        }
    }
    assert!(means[0] >= means[1] && means[1] >= means[2], "{means:?}");
}

#[test]
fn correlation_needs_a_quantity_or_quality_distribution() {
    let cfg = config(4, 1, TopologyName::Line);
    assert!(trip_core::experiment::correlation(&cfg).is_err());
    let mut equal = cfg.clone();
    equal.distribution.kind = DistributionName::Sizes;
    equal.distribution.fractions = Some(PerClient::List(vec![1.0; 4]));
    let rep = trip_core::experiment::correlation(&equal).unwrap();
    assert_eq!(rep.pearson, None);
}

#[test]
fn removal_of_nobody_matches_baseline() {
    let mut cfg = config(6, 3, TopologyName::Regular);
    cfg.experiment.removal_ks = vec![0];
    let rep = trip_core::experiment::client_removal(&cfg).unwrap();
    for row in &rep.rows {
        assert_eq!(row.mean_accuracy, rep.baseline_accuracy);
    }
    cfg.experiment.removal_ks = vec![6];
    assert!(trip_core::experiment::client_removal(&cfg).is_err());
}

#[test]
fn coordinator_never_sees_model_parameters() {
    let source = include_str!("../src/coordinator.rs");
    assert!(!source.contains("ModelParams"));
    assert!(!source.contains("learner"));
    assert!(!source.contains("engine"));
}
