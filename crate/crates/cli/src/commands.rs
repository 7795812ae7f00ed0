//! One function per subcommand. Each writes its files into `out`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use trip_core::baselines::{read_baseline_csv, write_baseline_csv};
use trip_core::experiment::{client_removal, compare_shapley, correlation, dishonest};
use trip_core::{SimConfig, Simulation};

use crate::output::{num, opt_num, write_csv, write_json, write_matrix, write_simulation};
use crate::{io_err, CliError};

pub fn simulate(cfg: &SimConfig, out: &Path) -> Result<(), CliError> {
    let res = Simulation::new(cfg.clone())?.run()?;
    for w in &res.warnings {
        eprintln!("warning: {w}");
    }
    write_simulation(out, &res)
}

pub fn shapley(cfg: &SimConfig, out: &Path) -> Result<(), CliError> {
    let external = match &cfg.experiment.external_baselines {
        Some(p) => {
            let path = Path::new(p);
            let file = fs::File::open(path).map_err(io_err(path))?;
            Some(read_baseline_csv(file, cfg.clients)?)
        }
        None => None,
    };
    let report = compare_shapley(cfg, external)?;
    let rows: Vec<Vec<String>> = report
        .owners
        .iter()
        .map(|o| vec![o.owner.to_string(), opt_num(o.literal), opt_num(o.normalized)])
        .collect();
    write_csv(&out.join("distances.csv"), &["owner", "literal", "normalized"], &rows)?;
    write_matrix(&out.join("trip_literal.csv"), &report.trip_literal)?;
    write_matrix(&out.join("trip_normalized.csv"), &report.trip_normalized)?;
    write_matrix(&out.join("shapley_literal.csv"), &report.shapley_literal)?;
    write_matrix(&out.join("shapley_normalized.csv"), &report.shapley_normalized)?;
    let tables: Vec<Vec<String>> = (0..report.tables.first().map_or(0, Vec::len))
        .map(|mask| {
            std::iter::once(mask.to_string())
                .chain(report.tables.iter().map(|t| num(t[mask])))
                .collect()
        })
        .collect();
    let mut header = vec!["mask".to_string()];
    header.extend((0..report.tables.len()).map(|i| format!("owner{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&out.join("utility_tables.csv"), &header, &tables)?;
    if let Some(cfl) = &report.cfl {
        let mut vectors = cfl.vectors.clone();
        vectors.insert("exact".to_string(), cfl.exact.clone());
        let path = out.join("baselines.csv");
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        write_baseline_csv(file, &vectors)?;
    }
    println!(
        "mean cosine distance: literal {}, normalized {}",
        opt_num(report.mean_literal),
        opt_num(report.mean_normalized)
    );
    if !report.undefined.is_empty() {
        println!("undefined distance (zero vector) for owners {:?}", report.undefined);
    }
    write_json(&out.join("shapley_report.json"), &report)
}

pub fn removal(cfg: &SimConfig, out: &Path) -> Result<(), CliError> {
    let report = client_removal(cfg)?;
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.k.to_string(),
                format!("{:?}", r.order).to_lowercase(),
                num(r.mean_accuracy),
                num(r.std_accuracy),
            ]
        })
        .collect();
    write_csv(
        &out.join("removal.csv"),
        &["k", "order", "mean_accuracy", "std_accuracy"],
        &rows,
    )?;
    write_scores(out, &report.scores)?;
    write_json(&out.join("removal.json"), &report)
}

fn write_scores(out: &Path, scores: &[f64]) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = scores
        .iter()
        .enumerate()
        .map(|(j, &s)| vec![j.to_string(), num(s)])
        .collect();
    write_csv(&out.join("scores.csv"), &["client", "score"], &rows)
}

pub fn correlation_cmd(cfg: &SimConfig, out: &Path) -> Result<(), CliError> {
    let report = correlation(cfg)?;
    let rows: Vec<Vec<String>> = report
        .parameter
        .iter()
        .zip(&report.scores)
        .enumerate()
        .map(|(j, (&p, &s))| vec![j.to_string(), num(p), num(s)])
        .collect();
    write_csv(&out.join("correlation.csv"), &["client", "parameter", "score"], &rows)?;
    println!("pearson ({}): {}", report.kind, opt_num(report.pearson));
    write_json(&out.join("correlation.json"), &report)
}

pub fn dishonest_cmd(cfg: &SimConfig, out: &Path) -> Result<(), CliError> {
    let report = dishonest(cfg)?;
    let rows: Vec<Vec<String>> = report
        .scenarios
        .iter()
        .map(|s| {
            vec![
                format!("{:?}", s.attack).to_lowercase(),
                s.countermeasures.to_string(),
                num(s.dishonest_mean),
                num(s.dishonest_std),
                num(s.honest_mean),
                num(s.honest_std),
            ]
        })
        .collect();
    write_csv(
        &out.join("dishonest.csv"),
        &[
            "attack",
            "countermeasures",
            "dishonest_mean",
            "dishonest_std",
            "honest_mean",
            "honest_std",
        ],
        &rows,
    )?;
    let by_scenario: BTreeMap<String, Vec<f64>> = report
        .scenarios
        .iter()
        .map(|s| {
            (
                format!("{:?}-{}", s.attack, if s.countermeasures { "with" } else { "without" })
                    .to_lowercase(),
                s.scores.clone(),
            )
        })
        .collect();
    let path = out.join("dishonest_scores.csv");
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    write_baseline_csv(file, &by_scenario)?;
    write_json(&out.join("dishonest.json"), &report)
}
