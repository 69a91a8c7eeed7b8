//! File formats: run-log CSV, DoE summary JSON, run manifest, and the
//! validators behind the `validate` subcommand.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{
    Checkpoint, EncoderArtifact, ExperimentConfig, PretrainReport, RunLog, CHECKPOINT_FORMAT,
    CONFIG_FORMAT, DESIGN_OF_EXPERIMENTS, ENCODER_FORMAT,
};
use crate::nnet::Network;
use crate::world::TestSet;
use crate::{Error, Result};

pub const RUNLOG_SCHEMA: &str = "pedyn-runlog/1";
pub const SUMMARY_FORMAT: &str = "pedyn-summary/1";
pub const MANIFEST_FORMAT: &str = "pedyn-manifest/1";

pub const CSV_COLUMNS: [&str; 14] = [
    "iter",
    "goal_id",
    "cmd_x",
    "cmd_y",
    "exec_x",
    "exec_y",
    "sigma",
    "pe",
    "goal_slope",
    "buf_capacity",
    "move_amplitude",
    "fwd_mse",
    "inv_mse",
    "mse_slope",
];

/// One row of a run-log CSV; `None` is written as an empty field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub iter: usize,
    pub goal_id: usize,
    pub cmd_x: f64,
    pub cmd_y: f64,
    pub exec_x: f64,
    pub exec_y: f64,
    pub sigma: f64,
    pub pe: f64,
    pub goal_slope: Option<f64>,
    pub buf_capacity: usize,
    pub move_amplitude: f64,
    pub fwd_mse: Option<f64>,
    pub inv_mse: Option<f64>,
    pub mse_slope: Option<f64>,
}

pub fn csv_rows(log: &RunLog) -> Vec<CsvRow> {
    log.iterations
        .iter()
        .map(|r| CsvRow {
            iter: r.iteration,
            goal_id: r.goal_id,
            cmd_x: r.cmd.x,
            cmd_y: r.cmd.y,
            exec_x: r.executed.x,
            exec_y: r.executed.y,
            sigma: r.sigma,
            pe: r.pe,
            goal_slope: r.goal_slope,
            buf_capacity: r.buf_capacity,
            move_amplitude: r.move_amplitude,
            fwd_mse: r.mse.map(|m| m.forward),
            inv_mse: r.mse.map(|m| m.inverse),
            mse_slope: r.mse.and_then(|m| m.slope),
        })
        .collect()
}

pub fn write_csv<W: Write>(rows: &[CsvRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run_csv_bytes(log: &RunLog) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_csv(&csv_rows(log), &mut buf)?;
    Ok(buf)
}

/// Parses a run-log CSV, checking the header and the column count.
pub fn read_csv<R: Read>(input: R) -> Result<Vec<CsvRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != CSV_COLUMNS {
        return Err(Error::Schema(format!("unexpected CSV header {header:?}")));
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn read_csv_file(path: &Path) -> Result<Vec<CsvRow>> {
    read_csv(std::fs::File::open(path)?)
}

/// `exp{id}_seed{seed}.csv` for DoE runs, `run_seed{seed}.csv` otherwise.
pub fn run_file_stem(experiment_id: Option<u8>, seed: u64) -> String {
    match experiment_id {
        Some(id) => format!("exp{id}_seed{seed}"),
        None => format!("run_seed{seed}"),
    }
}

pub fn parse_run_file_name(name: &str) -> Option<(Option<u8>, u64)> {
    let stem = name.strip_suffix(".csv")?;
    if let Some(rest) = stem.strip_prefix("run_seed") {
        return Some((None, rest.parse().ok()?));
    }
    let rest = stem.strip_prefix("exp")?;
    let (id, seed) = rest.split_once("_seed")?;
    Some((Some(id.parse().ok()?), seed.parse().ok()?))
}

/// Checks a parsed run log: consecutive iterations, MSE columns filled
/// exactly every `period` iterations, finite values and in-range commands.
pub fn check_rows(rows: &[CsvRow], period: usize) -> Result<()> {
    for (k, r) in rows.iter().enumerate() {
        let at = |msg: &str| Error::Schema(format!("row {k}: {msg}"));
        if r.iter != k {
            return Err(at(&format!("iteration {} out of sequence", r.iter)));
        }
        let on_period = period > 0 && r.iter % period == 0;
        if r.fwd_mse.is_some() != on_period || r.inv_mse.is_some() != on_period {
            return Err(at("MSE columns must be filled exactly every period"));
        }
        if r.mse_slope.is_some() && !on_period {
            return Err(at("mse_slope outside an MSE row"));
        }
        let values = [
            Some(r.cmd_x),
            Some(r.cmd_y),
            Some(r.exec_x),
            Some(r.exec_y),
            Some(r.sigma),
            Some(r.pe),
            r.goal_slope,
            Some(r.move_amplitude),
            r.fwd_mse,
            r.inv_mse,
            r.mse_slope,
        ];
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(at("non-finite value"));
        }
        if [r.cmd_x, r.cmd_y, r.exec_x, r.exec_y]
            .iter()
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(at("motor command outside [0, 1]"));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub iterations_completed: usize,
    pub final_fwd_mse: Option<f64>,
    pub final_inv_mse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub id: u8,
    pub fixed_goal_som: bool,
    pub fixed_expl_noise: bool,
    pub greedy_move_prob: f64,
    pub runs: Vec<RunSummary>,
    pub median_final_fwd_mse: Option<f64>,
    pub mean_final_fwd_mse: Option<f64>,
    pub median_final_inv_mse: Option<f64>,
    /// Iterations at which the mean curves are sampled.
    pub curve_iterations: Vec<usize>,
    pub mean_fwd_curve: Vec<f64>,
    pub mean_inv_curve: Vec<f64>,
    /// 1 = lowest final value of the mean forward-MSE curve.
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoeSummary {
    pub format: String,
    pub csv_schema: String,
    pub base_seed: u64,
    pub seeds: Vec<u64>,
    pub iterations: usize,
    pub mse_log_period: usize,
    pub experiments: Vec<ExperimentSummary>,
    /// Experiment ids ordered by final mean forward MSE, best first.
    pub ranking: Vec<u8>,
    /// Experiment ids ordered by median final forward MSE, best first.
    pub ranking_by_median: Vec<u8>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Pointwise mean over runs of an MSE column, at each MSE record index.
fn mean_curve(runs: &[&[CsvRow]], pick: impl Fn(&CsvRow) -> Option<f64>) -> (Vec<usize>, Vec<f64>) {
    let per_run: Vec<Vec<(usize, f64)>> = runs
        .iter()
        .map(|rows| {
            rows.iter()
                .filter_map(|r| pick(r).map(|v| (r.iter, v)))
                .collect()
        })
        .collect();
    let len = per_run.iter().map(Vec::len).max().unwrap_or(0);
    let mut iters = Vec::with_capacity(len);
    let mut values = Vec::with_capacity(len);
    for k in 0..len {
        let pts: Vec<(usize, f64)> = per_run.iter().filter_map(|r| r.get(k).copied()).collect();
        iters.push(pts[0].0);
        values.push(pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64);
    }
    (iters, values)
}

/// A run as recovered from its CSV, with the error it ended with (if any).
pub struct RunData {
    pub experiment_id: u8,
    pub seed: u64,
    pub rows: Vec<CsvRow>,
    pub error: Option<String>,
}

fn rank_by(ids_values: &[(u8, Option<f64>)]) -> Vec<u8> {
    let mut v = ids_values.to_vec();
    v.sort_by(|a, b| match (a.1, b.1) {
        (Some(x), Some(y)) => x.total_cmp(&y).then(a.0.cmp(&b.0)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.0.cmp(&b.0),
    });
    v.into_iter().map(|p| p.0).collect()
}

pub fn summarize(base: &ExperimentConfig, runs: &[RunData]) -> DoeSummary {
    let mut experiments = Vec::new();
    for &(id, fixed_som, fixed_noise, greedy) in &DESIGN_OF_EXPERIMENTS {
        let mine: Vec<&RunData> = runs.iter().filter(|r| r.experiment_id == id).collect();
        let run_summaries: Vec<RunSummary> = mine
            .iter()
            .map(|r| RunSummary {
                seed: r.seed,
                iterations_completed: r.rows.len(),
                final_fwd_mse: r.rows.iter().rev().find_map(|x| x.fwd_mse),
                final_inv_mse: r.rows.iter().rev().find_map(|x| x.inv_mse),
                error: r.error.clone(),
            })
            .collect();
        let finals_fwd: Vec<f64> = run_summaries
            .iter()
            .filter(|r| r.error.is_none())
            .filter_map(|r| r.final_fwd_mse)
            .collect();
        let finals_inv: Vec<f64> = run_summaries
            .iter()
            .filter(|r| r.error.is_none())
            .filter_map(|r| r.final_inv_mse)
            .collect();
        let rows: Vec<&[CsvRow]> = mine.iter().map(|r| r.rows.as_slice()).collect();
        let (curve_iterations, mean_fwd_curve) = mean_curve(&rows, |r| r.fwd_mse);
        let (_, mean_inv_curve) = mean_curve(&rows, |r| r.inv_mse);
        experiments.push(ExperimentSummary {
            id,
            fixed_goal_som: fixed_som,
            fixed_expl_noise: fixed_noise,
            greedy_move_prob: greedy,
            runs: run_summaries,
            median_final_fwd_mse: median(&finals_fwd),
            mean_final_fwd_mse: mean(&finals_fwd),
            median_final_inv_mse: median(&finals_inv),
            curve_iterations,
            mean_fwd_curve,
            mean_inv_curve,
            rank: 0,
        });
    }
    let ranking = rank_by(
        &experiments
            .iter()
            .map(|e| (e.id, e.mean_fwd_curve.last().copied()))
            .collect::<Vec<_>>(),
    );
    let ranking_by_median = rank_by(
        &experiments
            .iter()
            .map(|e| (e.id, e.median_final_fwd_mse))
            .collect::<Vec<_>>(),
    );
    for e in &mut experiments {
        e.rank = ranking
            .iter()
            .position(|&id| id == e.id)
            .map_or(0, |p| p + 1);
    }
    DoeSummary {
        format: SUMMARY_FORMAT.to_string(),
        csv_schema: RUNLOG_SCHEMA.to_string(),
        base_seed: base.seed,
        seeds: base.run_seeds(),
        iterations: base.iterations,
        mse_log_period: base.mse_log_period,
        experiments,
        ranking,
        ranking_by_median,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub kind: String,
    /// Relative to the output directory.
    pub path: String,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub tool_version: String,
    pub command: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub jobs: usize,
    pub artifacts: Vec<Artifact>,
    /// Wall-clock seconds per step or run.
    pub timings: BTreeMap<String, f64>,
    pub complete: bool,
    pub errors: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &ExperimentConfig, seeds: Vec<u64>, jobs: usize) -> Self {
        RunManifest {
            format: MANIFEST_FORMAT.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config: config.clone(),
            seeds,
            jobs,
            artifacts: Vec::new(),
            timings: BTreeMap::new(),
            complete: false,
            errors: Vec::new(),
        }
    }

    pub fn add(&mut self, kind: &str, path: &str, ok: bool) {
        self.artifacts.push(Artifact {
            kind: kind.to_string(),
            path: path.to_string(),
            ok,
        });
    }
}

/// What a validated file turned out to be.
#[derive(Clone, Debug, PartialEq)]
pub enum Validated {
    RunCsv { rows: usize },
    Config,
    Summary { experiments: usize },
    Manifest { artifacts: usize },
    Encoder,
    Checkpoint,
    Network,
    PretrainReport,
    TestSet,
    Svg,
}

fn check_format(found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(Error::Schema(format!(
            "format {found:?}, expected {expected:?}"
        )));
    }
    Ok(())
}

fn all_finite<'a>(values: impl IntoIterator<Item = &'a f64>) -> bool {
    values.into_iter().all(|v| v.is_finite())
}

pub fn validate_summary(s: &DoeSummary) -> Result<()> {
    check_format(&s.format, SUMMARY_FORMAT)?;
    check_format(&s.csv_schema, RUNLOG_SCHEMA)?;
    if s.experiments.len() != DESIGN_OF_EXPERIMENTS.len() {
        return Err(Error::Schema(format!(
            "{} experiments, expected 8",
            s.experiments.len()
        )));
    }
    for (e, row) in s.experiments.iter().zip(DESIGN_OF_EXPERIMENTS) {
        if (
            e.id,
            e.fixed_goal_som,
            e.fixed_expl_noise,
            e.greedy_move_prob,
        ) != row
        {
            return Err(Error::Schema(format!(
                "experiment {} does not match its design row",
                e.id
            )));
        }
        if e.curve_iterations.len() != e.mean_fwd_curve.len()
            || e.mean_fwd_curve.len() != e.mean_inv_curve.len()
        {
            return Err(Error::Schema(format!(
                "experiment {}: curve lengths differ",
                e.id
            )));
        }
        if !all_finite(e.mean_fwd_curve.iter().chain(&e.mean_inv_curve)) {
            return Err(Error::Schema(format!(
                "experiment {}: non-finite curve",
                e.id
            )));
        }
    }
    let mut sorted = s.ranking.clone();
    sorted.sort_unstable();
    if sorted != (0..8).collect::<Vec<u8>>() {
        return Err(Error::Schema("ranking is not a permutation of 0..8".into()));
    }
    Ok(())
}

/// Validates a produced file by extension and embedded format tag.
pub fn validate_file(path: &Path, period: usize) -> Result<Validated> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext {
        "csv" => {
            let rows = read_csv_file(path)?;
            check_rows(&rows, period)?;
            Ok(Validated::RunCsv { rows: rows.len() })
        }
        "svg" => {
            let text = std::fs::read_to_string(path)?;
            if !text.starts_with("<svg") || !text.trim_end().ends_with("</svg>") {
                return Err(Error::Schema("not a standalone SVG document".into()));
            }
            Ok(Validated::Svg)
        }
        "json" => {
            let text = std::fs::read_to_string(path)?;
            let value: serde_json::Value = serde_json::from_str(&text)?;
            let format = value
                .get("format")
                .and_then(|f| f.as_str())
                .unwrap_or("")
                .to_string();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            match format.as_str() {
                "" if name == "pretrain_report.json" => {
                    let _: PretrainReport = serde_json::from_value(value)?;
                    Ok(Validated::PretrainReport)
                }
                "" if name == "test_set.json" => {
                    let t: TestSet = serde_json::from_value(value)?;
                    if t.samples.is_empty() {
                        return Err(Error::Schema("empty test set".into()));
                    }
                    Ok(Validated::TestSet)
                }
                CONFIG_FORMAT => {
                    ExperimentConfig::from_json(&text)?;
                    Ok(Validated::Config)
                }
                SUMMARY_FORMAT => {
                    let s: DoeSummary = serde_json::from_value(value)?;
                    validate_summary(&s)?;
                    Ok(Validated::Summary {
                        experiments: s.experiments.len(),
                    })
                }
                MANIFEST_FORMAT => {
                    let m: RunManifest = serde_json::from_value(value)?;
                    let base = path.parent().unwrap_or(Path::new("."));
                    for a in &m.artifacts {
                        if a.ok && !base.join(&a.path).exists() {
                            return Err(Error::Schema(format!("missing artifact {}", a.path)));
                        }
                    }
                    Ok(Validated::Manifest {
                        artifacts: m.artifacts.len(),
                    })
                }
                ENCODER_FORMAT => {
                    let _: EncoderArtifact = serde_json::from_value(value)?;
                    Ok(Validated::Encoder)
                }
                CHECKPOINT_FORMAT => {
                    let c: Checkpoint = serde_json::from_value(value)?;
                    c.config.validate()?;
                    Ok(Validated::Checkpoint)
                }
                crate::nnet::NETWORK_FORMAT => {
                    let _: Network = serde_json::from_value(value)?;
                    Ok(Validated::Network)
                }
                other => Err(Error::Schema(format!("unknown JSON format {other:?}"))),
            }
        }
        other => Err(Error::Schema(format!("cannot validate .{other} files"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(iter: usize, mse: bool) -> CsvRow {
        CsvRow {
            iter,
            goal_id: 3,
            cmd_x: 0.1,
            cmd_y: 0.2,
            exec_x: 0.15,
            exec_y: 0.25,
            sigma: 0.05,
            pe: 0.3,
            goal_slope: (iter > 4).then_some(-0.01),
            buf_capacity: 10,
            move_amplitude: 0.07,
            fwd_mse: mse.then_some(0.02),
            inv_mse: mse.then_some(0.1),
            mse_slope: (mse && iter > 0).then_some(1e-4),
        }
    }

    #[test]
    fn csv_header_and_blank_fields() {
        let rows = vec![row(0, true), row(1, false)];
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_COLUMNS.join(","));
        assert!(lines.iter().all(|l| l.split(',').count() == 14));
        assert!(lines[2].ends_with(",,,"));
        assert_eq!(read_csv(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn bad_header_rejected() {
        assert!(read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn cadence_check() {
        let rows: Vec<CsvRow> = (0..81).map(|i| row(i, i % 40 == 0)).collect();
        check_rows(&rows, 40).unwrap();
        let mut bad = rows.clone();
        bad[3].fwd_mse = Some(0.1);
        assert!(check_rows(&bad, 40).is_err());
        let mut bad = rows;
        bad[2].iter = 5;
        assert!(check_rows(&bad, 40).is_err());
    }

    #[test]
    fn file_names() {
        assert_eq!(run_file_stem(Some(4), 12), "exp4_seed12");
        assert_eq!(parse_run_file_name("exp4_seed12.csv"), Some((Some(4), 12)));
        assert_eq!(parse_run_file_name("run_seed7.csv"), Some((None, 7)));
        assert_eq!(parse_run_file_name("summary.json"), None);
    }

    #[test]
    fn median_and_ranking() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
        assert_eq!(
            rank_by(&[(0, Some(0.3)), (1, None), (2, Some(0.1))]),
            vec![2, 0, 1]
        );
    }

    #[test]
    fn summary_curves_average_runs() {
        let mk = |id: u8, seed: u64, v: f64| RunData {
            experiment_id: id,
            seed,
            rows: (0..41)
                .map(|i| CsvRow {
                    fwd_mse: (i % 40 == 0).then_some(v + i as f64),
                    ..row(i, i % 40 == 0)
                })
                .collect(),
            error: None,
        };
        let runs: Vec<RunData> = (0..8u8)
            .flat_map(|id| [mk(id, 1, id as f64), mk(id, 2, id as f64 + 2.0)])
            .collect();
        let s = summarize(&ExperimentConfig::default(), &runs);
        validate_summary(&s).unwrap();
        assert_eq!(s.experiments[3].curve_iterations, vec![0, 40]);
        assert_eq!(s.experiments[3].mean_fwd_curve, vec![4.0, 44.0]);
        assert_eq!(s.experiments[3].median_final_fwd_mse, Some(44.0));
        assert_eq!(s.ranking, (0..8).collect::<Vec<u8>>());
        assert_eq!(s.experiments[0].rank, 1);
    }
}
