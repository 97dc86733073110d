//! Repeated-experiment benchmarks: strategy comparison, noise sweep and
//! class-pair averaging, with CSV output.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{EmbeddedDataset, MulticlassDataset};
use crate::error::{Error, Result};
use crate::learner::{run_experiment_with_oracle, train_oracle, AnnotationMode, ExperimentConfig, ExperimentResult, OracleKind};
use crate::metrics::{mean, paired_t_test, spearman, std_dev};
use crate::model::LinearBoundary;
use crate::rng::Rng;
use crate::strategies::QueryStrategy;

/// Significance level for the paired t-test markers.
pub const ALPHA: f64 = 0.05;

/// Seed of repeat `r` for a base seed. Sample and boundary runs of the same
/// repeat share it, so their comparison is paired.
pub fn repeat_seed(seed: u64, repeat: usize) -> u64 {
    Rng::derive(seed, 0x5eed_0000 + repeat as u64).next_u64()
}

/// One finished run, flattened with its full configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub dataset: String,
    pub strategy: String,
    pub mode: String,
    pub sigma: f64,
    pub repeat: usize,
    pub seed: u64,
    pub n_queries: usize,
    pub queries: usize,
    pub lambda: f64,
    pub resolution: f64,
    pub init_per_class: usize,
    pub aulc: f64,
    pub mean_ap: f64,
    pub final_accuracy: f64,
    pub no_change: usize,
    pub truncated: bool,
}

impl RunSummary {
    pub fn new(dataset: &str, config: &ExperimentConfig, repeat: usize, result: &ExperimentResult) -> Self {
        let no_change = result
            .transcript
            .steps
            .iter()
            .filter(|s| s.annotation.boundary_point.point().is_none())
            .count();
        Self {
            dataset: dataset.to_string(),
            strategy: config.strategy.to_string(),
            mode: config.annotation_mode.to_string(),
            sigma: config.oracle.sigma(),
            repeat,
            seed: config.seed,
            n_queries: config.n_queries,
            queries: result.curve.len() - 1,
            lambda: config.lambda,
            resolution: config.resolution,
            init_per_class: config.init_per_class,
            aulc: result.curve.aulc().unwrap_or(0.0),
            mean_ap: result.curve.mean_average_precision(),
            final_accuracy: *result.curve.accuracies.last().expect("curve has acc₀"),
            no_change,
            truncated: result.truncated,
        }
    }
}

/// A single job of a grid.
#[derive(Debug, Clone)]
pub struct Job {
    pub config: ExperimentConfig,
    pub repeat: usize,
}

/// Runs jobs on a pool of `jobs` threads. Output order equals input order
/// regardless of scheduling.
pub fn run_jobs(
    data: &Arc<EmbeddedDataset>,
    oracle: &LinearBoundary,
    grid: &[Job],
    jobs: usize,
) -> Result<Vec<RunSummary>> {
    let run = |job: &Job| -> Result<RunSummary> {
        let result = run_experiment_with_oracle(data.clone(), &job.config, oracle)?;
        Ok(RunSummary::new(&data.name, &job.config, job.repeat, &result))
    };
    if jobs <= 1 {
        return grid.iter().map(run).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| grid.par_iter().map(run).collect())
}

/// AULC of runs truncated at different lengths is only comparable over the
/// common prefix; all runs here share one budget, so truncation is reported
/// rather than corrected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub strategy: String,
    pub mode: String,
    pub runs: usize,
    pub aulc_mean: f64,
    pub aulc_std: f64,
    pub map_mean: f64,
    pub map_std: f64,
    /// Paired t-test of boundary vs sample AULC for this strategy.
    pub p_value: f64,
    /// Boundary mode is better and `p < ALPHA` (boundary rows only).
    pub significant: bool,
}

#[derive(Debug, Clone)]
pub struct StrategyTable {
    pub rows: Vec<StrategyRow>,
    pub runs: Vec<RunSummary>,
}

impl StrategyTable {
    pub fn row(&self, strategy: &str, mode: AnnotationMode) -> Option<&StrategyRow> {
        let mode = mode.to_string();
        self.rows.iter().find(|r| r.strategy == strategy && r.mode == mode)
    }
}

pub fn bench_strategies(
    data: &Arc<EmbeddedDataset>,
    base: &ExperimentConfig,
    strategies: &[QueryStrategy],
    repeats: usize,
    jobs: usize,
) -> Result<StrategyTable> {
    check_repeats(repeats)?;
    let oracle = train_oracle(data, base.lambda, &base.solver)?;
    let mut grid = Vec::new();
    for &strategy in strategies {
        for mode in [AnnotationMode::Sample, AnnotationMode::Boundary] {
            for repeat in 0..repeats {
                grid.push(Job {
                    config: ExperimentConfig {
                        strategy,
                        annotation_mode: mode,
                        seed: repeat_seed(base.seed, repeat),
                        ..base.clone()
                    },
                    repeat,
                });
            }
        }
    }
    let runs = run_jobs(data, &oracle, &grid, jobs)?;
    let mut rows = Vec::new();
    for (s, &strategy) in strategies.iter().enumerate() {
        let chunk = &runs[s * 2 * repeats..(s + 1) * 2 * repeats];
        let (sample, boundary) = chunk.split_at(repeats);
        let sa: Vec<f64> = sample.iter().map(|r| r.aulc).collect();
        let ba: Vec<f64> = boundary.iter().map(|r| r.aulc).collect();
        let p = if repeats >= 2 { paired_t_test(&ba, &sa)? } else { 1.0 };
        for (mode, group, aulcs) in [(AnnotationMode::Sample, sample, &sa), (AnnotationMode::Boundary, boundary, &ba)] {
            let maps: Vec<f64> = group.iter().map(|r| r.mean_ap).collect();
            rows.push(StrategyRow {
                strategy: strategy.to_string(),
                mode: mode.to_string(),
                runs: repeats,
                aulc_mean: mean(aulcs),
                aulc_std: std_dev(aulcs),
                map_mean: mean(&maps),
                map_std: std_dev(&maps),
                p_value: p,
                significant: mode == AnnotationMode::Boundary && mean(&ba) > mean(&sa) && p < ALPHA,
            });
        }
    }
    Ok(StrategyTable { rows, runs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    /// `None` for the sample-annotation baseline.
    pub sigma: Option<f64>,
    pub mode: String,
    pub runs: usize,
    pub aulc_mean: f64,
    pub aulc_std: f64,
    pub map_mean: f64,
    pub map_std: f64,
    /// Paired t-test against the sample baseline (1 for the baseline itself).
    pub p_value: f64,
}

#[derive(Debug, Clone)]
pub struct NoiseTable {
    pub rows: Vec<NoiseRow>,
    pub runs: Vec<RunSummary>,
    /// Spearman correlation between σ and mean boundary AULC.
    pub spearman: f64,
}

impl NoiseTable {
    pub fn baseline(&self) -> &NoiseRow {
        self.rows.iter().find(|r| r.sigma.is_none()).expect("baseline row")
    }

    pub fn boundary_rows(&self) -> impl Iterator<Item = &NoiseRow> {
        self.rows.iter().filter(|r| r.sigma.is_some())
    }

    /// Mean AULC never increases with σ.
    pub fn is_monotone(&self) -> bool {
        let means: Vec<f64> = self.boundary_rows().map(|r| r.aulc_mean).collect();
        means.windows(2).all(|w| w[1] <= w[0])
    }
}

pub fn bench_noise(
    data: &Arc<EmbeddedDataset>,
    base: &ExperimentConfig,
    sigmas: &[f64],
    repeats: usize,
    jobs: usize,
) -> Result<NoiseTable> {
    check_repeats(repeats)?;
    if sigmas.is_empty() {
        return Err(Error::InvalidArgument("no noise levels given".into()));
    }
    let oracle = train_oracle(data, base.lambda, &base.solver)?;
    let mut grid = Vec::new();
    let mut push = |mode, oracle_kind| {
        for repeat in 0..repeats {
            grid.push(Job {
                config: ExperimentConfig {
                    annotation_mode: mode,
                    oracle: oracle_kind,
                    seed: repeat_seed(base.seed, repeat),
                    ..base.clone()
                },
                repeat,
            });
        }
    };
    push(AnnotationMode::Sample, OracleKind::Svm);
    for &sigma in sigmas {
        push(AnnotationMode::Boundary, OracleKind::Noisy { sigma });
    }
    let runs = run_jobs(data, &oracle, &grid, jobs)?;
    let groups: Vec<&[RunSummary]> = runs.chunks(repeats).collect();
    let baseline: Vec<f64> = groups[0].iter().map(|r| r.aulc).collect();
    let mut rows = Vec::new();
    for (g, group) in groups.iter().enumerate() {
        let aulcs: Vec<f64> = group.iter().map(|r| r.aulc).collect();
        let maps: Vec<f64> = group.iter().map(|r| r.mean_ap).collect();
        let p = if g == 0 || repeats < 2 { 1.0 } else { paired_t_test(&aulcs, &baseline)? };
        rows.push(NoiseRow {
            sigma: (g > 0).then(|| sigmas[g - 1]),
            mode: group[0].mode.clone(),
            runs: repeats,
            aulc_mean: mean(&aulcs),
            aulc_std: std_dev(&aulcs),
            map_mean: mean(&maps),
            map_std: std_dev(&maps),
            p_value: p,
        });
    }
    let means: Vec<f64> = rows[1..].iter().map(|r| r.aulc_mean).collect();
    let rho = if sigmas.len() >= 2 { spearman(sigmas, &means)? } else { 0.0 };
    Ok(NoiseTable { rows, runs, spearman: rho })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    /// `"<neg>-<pos>"`, or `"mean"` for the average over pairs.
    pub pair: String,
    pub mode: String,
    pub runs: usize,
    pub aulc_mean: f64,
    pub map_mean: f64,
}

#[derive(Debug, Clone)]
pub struct PairsTable {
    pub rows: Vec<PairRow>,
    pub runs: Vec<RunSummary>,
}

/// Runs sample and boundary mode on every one-vs-one class pair and averages
/// AULC and mean AP across pairs.
pub fn bench_pairs(
    data: &MulticlassDataset,
    base: &ExperimentConfig,
    repeats: usize,
    jobs: usize,
) -> Result<PairsTable> {
    check_repeats(repeats)?;
    let pairs = data.class_pairs();
    if pairs.is_empty() {
        return Err(Error::InvalidData("need at least two classes".into()));
    }
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    let mut per_mode: [(Vec<f64>, Vec<f64>); 2] = Default::default();
    for (neg, pos) in pairs {
        let binary = Arc::new(data.binary_pair(neg, pos)?);
        let table = bench_strategies(&binary, base, &[base.strategy], repeats, jobs)?;
        for (m, mode) in [AnnotationMode::Sample, AnnotationMode::Boundary].into_iter().enumerate() {
            let row = table.row(&base.strategy.to_string(), mode).expect("row per mode");
            per_mode[m].0.push(row.aulc_mean);
            per_mode[m].1.push(row.map_mean);
            rows.push(PairRow {
                pair: format!("{neg}-{pos}"),
                mode: mode.to_string(),
                runs: repeats,
                aulc_mean: row.aulc_mean,
                map_mean: row.map_mean,
            });
        }
        runs.extend(table.runs);
    }
    for (m, mode) in [AnnotationMode::Sample, AnnotationMode::Boundary].into_iter().enumerate() {
        rows.push(PairRow {
            pair: "mean".into(),
            mode: mode.to_string(),
            runs: per_mode[m].0.len() * repeats,
            aulc_mean: mean(&per_mode[m].0),
            map_mean: mean(&per_mode[m].1),
        });
    }
    Ok(PairsTable { rows, runs })
}

fn check_repeats(repeats: usize) -> Result<()> {
    if repeats == 0 {
        Err(Error::InvalidArgument("repeats must be at least 1".into()))
    } else {
        Ok(())
    }
}

/// Writes serializable rows as CSV with a header line.
pub fn write_csv<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidData(format!("csv: {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_gaussian_classes, synth_two_gaussians};

    fn base() -> ExperimentConfig {
        ExperimentConfig {
            n_queries: 8,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn strategy_table_shape_and_job_independence() {
        let data = Arc::new(synth_two_gaussians(4, 120, 100, 3.0, 1).unwrap());
        let strategies = [QueryStrategy::Uncertainty, QueryStrategy::Random];
        let serial = bench_strategies(&data, &base(), &strategies, 3, 1).unwrap();
        let parallel = bench_strategies(&data, &base(), &strategies, 3, 3).unwrap();
        assert_eq!(serial.rows.len(), 4);
        assert_eq!(serial.runs.len(), 12);
        assert_eq!(serial.rows, parallel.rows);
        assert_eq!(serial.runs, parallel.runs);
        assert!(serial.row("random", AnnotationMode::Boundary).is_some());
    }

    #[test]
    fn paired_runs_share_initial_sets() {
        let data = Arc::new(synth_two_gaussians(4, 120, 100, 3.0, 1).unwrap());
        let t = bench_strategies(&data, &base(), &[QueryStrategy::Uncertainty], 2, 1).unwrap();
        let (sample, boundary) = t.runs.split_at(2);
        for (s, b) in sample.iter().zip(boundary) {
            assert_eq!(s.seed, b.seed);
        }
        assert_ne!(sample[0].seed, sample[1].seed);
    }

    #[test]
    fn noise_table_has_baseline_and_levels() {
        let data = Arc::new(synth_two_gaussians(4, 120, 100, 3.0, 1).unwrap());
        let t = bench_noise(&data, &base(), &[0.0, 1.0, 2.0], 2, 2).unwrap();
        assert_eq!(t.rows.len(), 4);
        assert_eq!(t.baseline().mode, "sample");
        assert_eq!(t.boundary_rows().count(), 3);
        assert!((-1.0..=1.0).contains(&t.spearman));
    }

    #[test]
    fn pairs_average_over_all_pairs() {
        let data = synth_gaussian_classes(4, 3, 40, 30, 4.0, 2).unwrap();
        let t = bench_pairs(&data, &base(), 1, 1).unwrap();
        // 3 pairs × 2 modes + 2 mean rows.
        assert_eq!(t.rows.len(), 8);
        let boundary: Vec<f64> = t.rows[..6].iter().filter(|r| r.mode == "boundary").map(|r| r.aulc_mean).collect();
        let mean_row = t.rows.iter().find(|r| r.pair == "mean" && r.mode == "boundary").unwrap();
        assert!((mean_row.aulc_mean - mean(&boundary)).abs() < 1e-12);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let data = Arc::new(synth_two_gaussians(4, 120, 100, 3.0, 1).unwrap());
        let t = bench_strategies(&data, &base(), &[QueryStrategy::Random], 2, 1).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &t.rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "strategy,mode,runs,aulc_mean,aulc_std,map_mean,map_std,p_value,significant");
        let mut buf = Vec::new();
        write_csv(&mut buf, &t.runs).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("dataset,strategy,mode,sigma,repeat,seed,"));
    }
}
