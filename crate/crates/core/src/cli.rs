//! `pedyn` command line: pretrain the encoder, run one experiment or the
//! whole design of experiments, redraw plots, validate output files.
//!
//! Output layout under `--out`:
//!
//! ```text
//! config.json             effective configuration
//! encoder.json            pretrained encoder + scene
//! pretrain_report.json
//! test_set.json
//! runs/exp{id}_seed{s}.csv            run logs (run_seed{s}.csv without an id)
//! runs/exp{id}_seed{s}.checkpoint.json  final agent state (`run` only)
//! summary.json            DoE ranking and mean curves (`doe` only)
//! plots/*.svg
//! manifest.json
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use crate::engine::{
    pretrain_encoder, run_doe, Agent, EncoderArtifact, ExperimentConfig, SharedInputs,
};
use crate::plot;
use crate::report::{self, CsvRow, RunData, RunManifest, Validated};

pub const SEED_ENV: &str = "PEDYN_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "pedyn",
    version,
    about = "Prediction-error-driven exploration experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pretrain the image encoder and build the shared test set.
    Pretrain(Common),
    /// Run a single experiment.
    Run(RunArgs),
    /// Run all eight experiments over `runs` seeds.
    Doe(DoeArgs),
    /// Regenerate plots from the run CSVs in an output directory.
    Replot {
        #[arg(long)]
        out: PathBuf,
    },
    /// Check output files (or every file in a directory) against their schemas.
    Validate {
        paths: Vec<PathBuf>,
        /// MSE logging period expected in run CSVs.
        #[arg(long, default_value_t = 40)]
        period: usize,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Configuration JSON; defaults are used for missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Reuse a pretrained encoder instead of training one.
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    /// Design-of-experiments row (0-7) to take the flags from.
    #[arg(long)]
    pub experiment: Option<u8>,
    /// Overrides both the config seed and the environment.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DoeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub jobs: Option<usize>,
}

/// Runs a parsed command; `Ok(true)` means every artifact was written and
/// is finite and well-formed.
pub fn execute(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Pretrain(c) => pretrain_cmd(&c),
        Command::Run(a) => run_cmd(&a),
        Command::Doe(a) => doe_cmd(&a),
        Command::Replot { out } => replot_cmd(&out),
        Command::Validate { paths, period } => validate_cmd(&paths, period),
    }
}

fn load_config(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ExperimentConfig::from_json(&text)
                .with_context(|| format!("parsing {}", p.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Ok(v) = std::env::var(SEED_ENV) {
        cfg.seed = v
            .trim()
            .parse()
            .with_context(|| format!("{SEED_ENV}={v:?} is not an integer"))?;
    }
    if let Some(n) = common.iterations {
        cfg.iterations = n;
    }
    if cfg.iterations == 0 {
        bail!("iterations must be at least 1");
    }
    Ok(cfg)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Writes an artifact, validates it, and records it in the manifest.
struct Outputs {
    dir: PathBuf,
    manifest: RunManifest,
    period: usize,
}

impl Outputs {
    fn new(dir: &Path, manifest: RunManifest) -> anyhow::Result<Self> {
        for sub in ["", "runs", "plots"] {
            std::fs::create_dir_all(dir.join(sub))
                .with_context(|| format!("creating {}", dir.display()))?;
        }
        let period = manifest.config.mse_log_period;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            manifest,
            period,
        })
    }

    fn record(&mut self, kind: &str, rel: &str, written: anyhow::Result<()>) {
        let ok = match written {
            Ok(()) => {
                let path = self.dir.join(rel);
                let needs_check = matches!(
                    path.extension().and_then(|e| e.to_str()),
                    Some("csv" | "json" | "svg")
                );
                match needs_check.then(|| report::validate_file(&path, self.period)) {
                    Some(Err(e)) => {
                        self.manifest.errors.push(format!("{rel}: {e}"));
                        false
                    }
                    _ => true,
                }
            }
            Err(e) => {
                self.manifest.errors.push(format!("{rel}: {e:#}"));
                false
            }
        };
        self.manifest.add(kind, rel, ok);
    }

    fn json<T: serde::Serialize>(&mut self, kind: &str, rel: &str, value: &T) {
        let r = write_json(&self.dir.join(rel), value);
        self.record(kind, rel, r);
    }

    fn bytes(&mut self, kind: &str, rel: &str, data: &[u8]) {
        let path = self.dir.join(rel);
        let r = std::fs::write(&path, data).with_context(|| format!("writing {}", path.display()));
        self.record(kind, rel, r);
    }

    fn finish(mut self) -> anyhow::Result<bool> {
        self.manifest.complete =
            self.manifest.errors.is_empty() && self.manifest.artifacts.iter().all(|a| a.ok);
        write_json(&self.dir.join("manifest.json"), &self.manifest)?;
        for e in &self.manifest.errors {
            eprintln!("error: {e}");
        }
        Ok(self.manifest.complete)
    }
}

fn obtain_encoder(
    common: &Common,
    cfg: &ExperimentConfig,
    out: &mut Outputs,
) -> anyhow::Result<EncoderArtifact> {
    let t0 = Instant::now();
    let artifact = match &common.encoder {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let a: EncoderArtifact =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            if a.format != crate::engine::ENCODER_FORMAT {
                bail!("{} is not an encoder artifact", p.display());
            }
            a
        }
        None => pretrain_encoder(cfg)?,
    };
    out.manifest
        .timings
        .insert("pretrain".into(), t0.elapsed().as_secs_f64());
    out.json("encoder", "encoder.json", &artifact);
    out.json("pretrain_report", "pretrain_report.json", &artifact.report);
    Ok(artifact)
}

fn prepare(
    common: &Common,
    cfg: &ExperimentConfig,
    out: &mut Outputs,
) -> anyhow::Result<SharedInputs> {
    let artifact = obtain_encoder(common, cfg, out)?;
    let shared = SharedInputs::from_artifact(&artifact, cfg)?;
    out.json("test_set", "test_set.json", &shared.test_set);
    Ok(shared)
}

fn pretrain_cmd(common: &Common) -> anyhow::Result<bool> {
    let cfg = load_config(common)?;
    let mut out = Outputs::new(
        &common.out,
        RunManifest::new("pretrain", &cfg, vec![cfg.seed], 1),
    )?;
    out.json("config", "config.json", &cfg);
    prepare(common, &cfg, &mut out)?;
    out.finish()
}

fn run_cmd(args: &RunArgs) -> anyhow::Result<bool> {
    let mut cfg = load_config(&args.common)?;
    if let Some(id) = args.experiment {
        cfg = cfg.for_experiment(id)?;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let seed = cfg.seed;
    let mut out = Outputs::new(
        &args.common.out,
        RunManifest::new("run", &cfg, vec![seed], 1),
    )?;
    out.json("config", "config.json", &cfg);
    let shared = prepare(&args.common, &cfg, &mut out)?;

    let stem = report::run_file_stem(cfg.experiment_id, seed);
    let t0 = Instant::now();
    let mut agent = Agent::new(&cfg, &shared, seed)?;
    let mut failure = None;
    while agent.iteration() < cfg.iterations {
        if let Err(e) = agent.step() {
            failure = Some(e);
            break;
        }
    }
    out.manifest
        .timings
        .insert(stem.clone(), t0.elapsed().as_secs_f64());
    let rows = report::csv_rows(agent.log());
    let mut csv = Vec::new();
    let written = report::write_csv(&rows, &mut csv).map_err(anyhow::Error::from);
    match written {
        Ok(()) => out.bytes("run_log", &format!("runs/{stem}.csv"), &csv),
        Err(e) => out.record("run_log", &format!("runs/{stem}.csv"), Err(e)),
    }
    out.json(
        "checkpoint",
        &format!("runs/{stem}.checkpoint.json"),
        &agent.checkpoint(),
    );
    if let Some(e) = failure {
        out.manifest.errors.push(format!(
            "run aborted after {} iterations: {e}",
            agent.log().iterations.len()
        ));
    }
    let label = stem.clone();
    out.bytes(
        "plot",
        "plots/dynamics.svg",
        plot::dynamics_figure(&[(label.clone(), rows.as_slice())]).as_bytes(),
    );
    out.bytes(
        "plot",
        "plots/goals.svg",
        plot::goals_figure(&label, &rows, cfg.som.rows * cfg.som.cols).as_bytes(),
    );
    out.finish()
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn doe_cmd(args: &DoeArgs) -> anyhow::Result<bool> {
    let mut cfg = load_config(&args.common)?;
    if let Some(r) = args.runs {
        cfg.runs = r;
    }
    cfg.experiment_id = None;
    cfg.validate()?;
    let jobs = args.jobs.unwrap_or_else(default_jobs).max(1);
    let mut out = Outputs::new(
        &args.common.out,
        RunManifest::new("doe", &cfg, cfg.run_seeds(), jobs),
    )?;
    out.json("config", "config.json", &cfg);
    let shared = prepare(&args.common, &cfg, &mut out)?;

    let t0 = Instant::now();
    let runs = run_doe(&cfg, &shared, jobs)?;
    out.manifest
        .timings
        .insert("doe_wall".into(), t0.elapsed().as_secs_f64());
    out.manifest
        .timings
        .insert("doe_cpu".into(), runs.iter().map(|r| r.elapsed_secs).sum());

    let mut data = Vec::new();
    for r in runs {
        let stem = report::run_file_stem(Some(r.experiment_id), r.seed);
        out.manifest.timings.insert(stem.clone(), r.elapsed_secs);
        let rows = report::csv_rows(&r.log);
        let mut csv = Vec::new();
        match report::write_csv(&rows, &mut csv) {
            Ok(()) => out.bytes("run_log", &format!("runs/{stem}.csv"), &csv),
            Err(e) => out.record("run_log", &format!("runs/{stem}.csv"), Err(e.into())),
        }
        if let Some(e) = &r.error {
            out.manifest.errors.push(format!("{stem}: {e}"));
        }
        data.push(RunData {
            experiment_id: r.experiment_id,
            seed: r.seed,
            rows,
            error: r.error,
        });
    }
    let summary = report::summarize(&cfg, &data);
    out.json("summary", "summary.json", &summary);
    write_plots(&mut out, &cfg, &data);
    out.finish()
}

pub const PLOT_FILES: [&str; 4] = [
    "plots/forward_mse.svg",
    "plots/inverse_mse.svg",
    "plots/dynamics.svg",
    "plots/goals.svg",
];

/// The four DoE figures as `(relative path, svg)` pairs.
pub fn doe_figures(cfg: &ExperimentConfig, data: &[RunData]) -> Vec<(&'static str, String)> {
    let summary = report::summarize(cfg, data);
    let first = |id: u8| -> Option<&RunData> {
        data.iter()
            .filter(|r| r.experiment_id == id)
            .min_by_key(|r| r.seed)
    };
    let labelled =
        |id: u8| first(id).map(|r| (format!("exp {id} seed {}", r.seed), r.rows.as_slice()));
    let dyn_runs: Vec<(String, &[CsvRow])> = [3u8, 4].into_iter().filter_map(labelled).collect();
    let goals = match labelled(4) {
        Some((label, rows)) => plot::goals_figure(&label, rows, cfg.som.rows * cfg.som.cols),
        None => plot::goals_figure("exp 4", &[], cfg.som.rows * cfg.som.cols),
    };
    vec![
        (PLOT_FILES[0], plot::forward_mse_figure(&summary)),
        (PLOT_FILES[1], plot::inverse_mse_figure(&summary)),
        (PLOT_FILES[2], plot::dynamics_figure(&dyn_runs)),
        (PLOT_FILES[3], goals),
    ]
}

fn write_plots(out: &mut Outputs, cfg: &ExperimentConfig, data: &[RunData]) {
    for (rel, svg) in doe_figures(cfg, data) {
        out.bytes("plot", rel, svg.as_bytes());
    }
}

/// Loads every `runs/exp*_seed*.csv` in `dir`, sorted by (experiment, seed).
pub fn load_runs(dir: &Path) -> anyhow::Result<Vec<RunData>> {
    let mut data = Vec::new();
    let runs_dir = dir.join("runs");
    for entry in
        std::fs::read_dir(&runs_dir).with_context(|| format!("reading {}", runs_dir.display()))?
    {
        let path = entry?.path();
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default();
        if let Some((Some(id), seed)) = report::parse_run_file_name(name) {
            let rows = report::read_csv_file(&path)
                .with_context(|| format!("reading {}", path.display()))?;
            data.push(RunData {
                experiment_id: id,
                seed,
                rows,
                error: None,
            });
        }
    }
    data.sort_by_key(|r| (r.experiment_id, r.seed));
    Ok(data)
}

fn replot_cmd(dir: &Path) -> anyhow::Result<bool> {
    let cfg_path = dir.join("config.json");
    let text = std::fs::read_to_string(&cfg_path)
        .with_context(|| format!("reading {}", cfg_path.display()))?;
    let cfg = ExperimentConfig::from_json(&text)?;
    let data = load_runs(dir)?;
    if data.is_empty() {
        bail!("no run CSVs under {}", dir.join("runs").display());
    }
    std::fs::create_dir_all(dir.join("plots"))?;
    for (rel, svg) in doe_figures(&cfg, &data) {
        let path = dir.join(rel);
        std::fs::write(&path, svg).with_context(|| format!("writing {}", path.display()))?;
        println!("{}", path.display());
    }
    Ok(true)
}

fn collect_files(path: &Path, acc: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        entries.sort();
        for p in entries {
            collect_files(&p, acc)?;
        }
    } else if matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("csv" | "json" | "svg")
    ) {
        acc.push(path.to_path_buf());
    }
    Ok(())
}

fn validate_cmd(paths: &[PathBuf], period: usize) -> anyhow::Result<bool> {
    if paths.is_empty() {
        bail!("nothing to validate");
    }
    let mut files = Vec::new();
    for p in paths {
        if !p.exists() {
            bail!("{} does not exist", p.display());
        }
        collect_files(p, &mut files)?;
    }
    let mut tally: BTreeMap<&str, usize> = BTreeMap::new();
    let mut ok = true;
    for f in &files {
        match report::validate_file(f, period) {
            Ok(v) => {
                let kind = match v {
                    Validated::RunCsv { .. } => "run_log",
                    Validated::Config => "config",
                    Validated::Summary { .. } => "summary",
                    Validated::Manifest { .. } => "manifest",
                    Validated::Encoder => "encoder",
                    Validated::Checkpoint => "checkpoint",
                    Validated::Network => "network",
                    Validated::PretrainReport => "pretrain_report",
                    Validated::TestSet => "test_set",
                    Validated::Svg => "svg",
                };
                *tally.entry(kind).or_default() += 1;
            }
            Err(e) => {
                ok = false;
                println!("FAIL {}: {e}", f.display());
            }
        }
    }
    for (kind, n) in tally {
        println!("ok {n:>4} {kind}");
    }
    Ok(ok)
}
