use std::fs;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Strategy};
use super::pipeline::{prepare, run_strategy, RunReport, Stage};
use super::stats::median;
use crate::error::{Error, Result};
use crate::grid::fmt_f64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub seed: u64,
    pub strategy: Strategy,
    pub linf: f64,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub median_linf: f64,
    pub median_l2: f64,
    /// Seeds on which this strategy had the smallest sup-norm error.
    pub wins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub summary: Vec<StrategySummary>,
    #[serde(skip)]
    pub reports: Vec<RunReport>,
}

impl Comparison {
    pub fn summary_for(&self, strategy: Strategy) -> Option<&StrategySummary> {
        self.summary.iter().find(|s| s.strategy == strategy)
    }

    /// Rows plus one `median` row per strategy.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["seed", "strategy", "linf", "l2"])?;
        for r in &self.rows {
            w.write_record([
                r.seed.to_string(),
                r.strategy.to_string(),
                fmt_f64(&r.linf),
                fmt_f64(&r.l2),
            ])?;
        }
        for s in &self.summary {
            w.write_record([
                "median".to_string(),
                s.strategy.to_string(),
                fmt_f64(&s.median_linf),
                fmt_f64(&s.median_l2),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs every strategy on every seed. The shared stages run once per seed
/// (in `out/seed_<s>/`), each strategy in its own subdirectory.
pub fn compare_strategies(
    config: &ExperimentConfig,
    strategies: &[Strategy],
    seeds: &[u64],
    out: Option<&Path>,
) -> Result<Comparison> {
    if strategies.is_empty() || seeds.is_empty() {
        return Err(Error::arg(
            "comparison needs at least one strategy and one seed",
        ));
    }
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for &seed in seeds {
        let cfg = ExperimentConfig {
            seed,
            ..config.clone()
        };
        let dir = out.map(|o| o.join(format!("seed_{seed}")));
        let prep = prepare(&cfg, dir.as_deref(), Stage::Surrogate)?;
        for &strategy in strategies {
            let sdir = dir.as_ref().map(|d| d.join(strategy.name()));
            let report = run_strategy(&prep, strategy, sdir.as_deref(), Stage::Estimate)?
                .expect("ran to the estimate");
            info!(
                "seed {seed} {strategy}: linf {:.4} l2 {:.4}",
                report.linf, report.l2
            );
            rows.push(ComparisonRow {
                seed,
                strategy,
                linf: report.linf,
                l2: report.l2,
            });
            reports.push(report);
        }
    }
    let summary = strategies
        .iter()
        .map(|&strategy| {
            let mine: Vec<&ComparisonRow> =
                rows.iter().filter(|r| r.strategy == strategy).collect();
            let linf: Vec<f64> = mine.iter().map(|r| r.linf).collect();
            let l2: Vec<f64> = mine.iter().map(|r| r.l2).collect();
            let wins = seeds
                .iter()
                .filter(|&&s| {
                    let best = rows
                        .iter()
                        .filter(|r| r.seed == s)
                        .map(|r| r.linf)
                        .fold(f64::INFINITY, f64::min);
                    mine.iter().any(|r| r.seed == s && r.linf == best)
                })
                .count();
            StrategySummary {
                strategy,
                median_linf: median(&linf),
                median_l2: median(&l2),
                wins,
            }
        })
        .collect();
    let comparison = Comparison {
        rows,
        summary,
        reports,
    };
    if let Some(o) = out {
        fs::create_dir_all(o)?;
        comparison.write_csv(fs::File::create(o.join("comparison.csv"))?)?;
        fs::write(
            o.join("comparison.json"),
            serde_json::to_string_pretty(&comparison)?,
        )?;
    }
    Ok(comparison)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::preset;

    #[test]
    fn comparison_table() {
        let dir = tempfile::tempdir().unwrap();
        let c = preset("1d-smoke").unwrap();
        let cmp = compare_strategies(&c, &Strategy::ALL, &[1, 2], Some(dir.path())).unwrap();
        assert_eq!(cmp.rows.len(), 6);
        let wins: usize = cmp.summary.iter().map(|s| s.wins).sum();
        assert!(wins >= 2);
        let text = fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
        assert_eq!(text.lines().count(), 1 + 6 + 3);
        assert!(dir.path().join("seed_2/variance/report.json").exists());
        // per-seed shared stages are identical to a standalone run
        let solo = crate::experiment::run_pipeline(
            &ExperimentConfig {
                seed: 2,
                strategy: Strategy::Random,
                ..c
            },
            None,
        )
        .unwrap();
        let row = cmp
            .rows
            .iter()
            .find(|r| r.seed == 2 && r.strategy == Strategy::Random)
            .unwrap();
        assert_eq!((row.linf, row.l2), (solo.linf, solo.l2));
    }
}
