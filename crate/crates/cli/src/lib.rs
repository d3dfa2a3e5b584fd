//! The `airshadow` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (unreadable, missing or
//! malformed input, unusable output location), 3 internal error.

pub mod config;
pub mod pipeline;

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use airshadow_collector::{Collector, CollectorConfig, DATA_DIR_ENV, DEFAULT_MAX_LINE};
use airshadow_core::eval::{evaluate, render_report, run_benchmark, BenchmarkReport, ReportFormat};
use airshadow_core::ingest::{
    parse_annotations, parse_sample_log, read_dataset_csv, series_to_samples, sliding_windows, write_annotations,
    write_dataset_csv, write_sample_log, LabeledDataset, Provenance, SampleFormat, SkipCounts,
};
use airshadow_core::models::{load_model, save_model, train, Family, ModelSpec, TrainedModel};
use airshadow_core::simulator::Scenario;
use airshadow_core::{ActivityLabel, PollutantSample};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use config::{GlobalConfig, Stream};

#[derive(Debug, Parser)]
#[command(name = "airshadow", version, about = "Indoor activity recognition from air-quality telemetry")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Shared TOML configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write telemetry plus annotations.
    Simulate {
        /// Scenario TOML file or preset name (exam, ac, eating, lab, lab-day).
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "ndjson")]
        format: SampleFormat,
        /// Record only this many seconds around each event.
        #[arg(long)]
        margin: Option<f64>,
    },
    /// Run the telemetry collector until interrupted.
    Collect {
        #[arg(long, default_value = "0.0.0.0:7007")]
        bind: String,
        #[arg(long, env = DATA_DIR_ENV, default_value = "./data")]
        data_dir: PathBuf,
        /// Reject physically impossible readings.
        #[arg(long)]
        strict: bool,
        #[arg(long, default_value_t = DEFAULT_MAX_LINE)]
        max_line: usize,
    },
    /// Turn sample logs and annotations into a labeled feature dataset.
    Ingest {
        /// Sample log files or directories of them.
        #[arg(long, required = true, num_args = 1..)]
        telemetry: Vec<PathBuf>,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Abort on the first bad record instead of skipping it.
        #[arg(long)]
        strict: bool,
    },
    /// Fit one model on a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Model specification TOML.
        #[arg(long, conflicts_with = "family")]
        spec: Option<PathBuf>,
        /// Model family with default hyperparameters.
        #[arg(long)]
        family: Option<Family>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label sliding windows of telemetry with a trained model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        telemetry: Vec<PathBuf>,
        /// Seconds between window starts; the configuration value by default.
        #[arg(long)]
        stride: Option<f64>,
        /// CSV output; standard output by default.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a trained model on a dataset.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Run the model grid with holdout and cross-validation.
    Benchmark {
        #[arg(long)]
        dataset: PathBuf,
        /// Report JSON for `report`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "text")]
        format: ReportFormat,
    },
    /// Render a saved benchmark report.
    Report {
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value = "text")]
        format: ReportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Data(anyhow::Error),
    Internal(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Data(e) | CliError::Internal(e) => write!(f, "{e:#}"),
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Data(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn internal(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Internal(e.into())
}

/// Parses `args` and runs the subcommand, returning the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging(cli.global.verbose);
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
}

pub fn execute(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.global.config {
        Some(path) => GlobalConfig::load(path)?,
        None => GlobalConfig::default(),
    };
    if let Some(seed) = cli.global.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::Simulate { scenario, out, format, margin } => {
            if margin.is_some() {
                cfg.margin = margin;
            }
            cfg.validate()?;
            simulate(&scenario, &out, format, &cfg)
        }
        Command::Collect { bind, data_dir, strict, max_line } => collect(CollectorConfig {
            bind,
            data_dir,
            max_line,
            strict,
        }),
        Command::Ingest { telemetry, annotations, out, strict } => ingest(&telemetry, &annotations, &out, strict, &cfg),
        Command::Train { dataset, spec, family, out } => train_cmd(&dataset, spec.as_deref(), family, &out, &cfg),
        Command::Predict { model, telemetry, stride, out } => {
            if let Some(s) = stride {
                cfg.stride = s;
            }
            cfg.validate()?;
            predict(&model, &telemetry, out.as_deref(), &cfg)
        }
        Command::Evaluate { model, dataset, json } => evaluate_cmd(&model, &dataset, json),
        Command::Benchmark { dataset, out, format } => benchmark(&dataset, out.as_deref(), format, &cfg),
        Command::Report { report, format, out } => {
            let report: BenchmarkReport = serde_json::from_str(&read_text(&report)?)
                .map_err(|e| anyhow::anyhow!("{}: {e}", report.display()))?;
            emit(out.as_deref(), &render_report(&report, format))
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()).into())
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| anyhow::anyhow!("cannot open {}: {e}", path.display()).into())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| anyhow::anyhow!("cannot create {}: {e}", parent.display()))?;
    }
    let f = File::create(path).map_err(|e| anyhow::anyhow!("cannot create {}: {e}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush()
        .map_err(|e| anyhow::anyhow!("cannot write {}: {e}", path.display()).into())
}

/// Writes to a file when given, otherwise to standard output.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            let mut w = create(path)?;
            w.write_all(text.as_bytes())?;
            finish(w, path)
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            match stdout.write_all(text.as_bytes()).and_then(|()| stdout.flush()) {
                // a closed reader (`| head`) is not a failure
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
                r => Ok(r?),
            }
        }
    }
}

fn load_scenario(arg: &str, cfg: &GlobalConfig) -> Result<Scenario> {
    let path = Path::new(arg);
    let is_preset = airshadow_core::simulator::presets::NAMES.contains(&arg);
    if is_preset && !path.exists() {
        return Ok(pipeline::preset(arg, cfg)?);
    }
    let sc: Scenario = toml::from_str(&read_text(path)?).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    sc.validate()?;
    Ok(sc)
}

fn simulate(scenario: &str, out: &Path, format: SampleFormat, cfg: &GlobalConfig) -> Result<()> {
    let sc = load_scenario(scenario, cfg)?;
    let sim = pipeline::simulate(&sc, cfg)?;
    fs::create_dir_all(out).map_err(|e| anyhow::anyhow!("cannot create {}: {e}", out.display()))?;

    let samples: Vec<PollutantSample> = sim.segments.iter().flat_map(series_to_samples).collect();
    let ext = match format {
        SampleFormat::Ndjson => "ndjson",
        SampleFormat::Csv => "csv",
    };
    let path = out.join(format!("telemetry.{ext}"));
    let mut w = create(&path)?;
    write_sample_log(&mut w, &samples, format)?;
    finish(w, &path)?;

    let ann_path = out.join("annotations.csv");
    let mut w = create(&ann_path)?;
    write_annotations(&mut w, &sim.annotations)?;
    finish(w, &ann_path)?;

    let sc_path = out.join("scenario.toml");
    emit(Some(&sc_path), &toml::to_string(&sc).map_err(internal)?)?;
    println!(
        "wrote {} samples from {} devices and {} annotations to {}",
        samples.len(),
        sc.devices.len(),
        sim.annotations.len(),
        out.display()
    );
    Ok(())
}

fn collect(cfg: CollectorConfig) -> Result<()> {
    cfg.validate()?;
    let rt = tokio::runtime::Runtime::new().map_err(internal)?;
    rt.block_on(async {
        let collector = Collector::start(cfg).await?;
        println!("listening on {}", collector.local_addr());
        tokio::signal::ctrl_c().await.map_err(internal)?;
        log::info!("shutting down");
        collector.shutdown().await?;
        Ok(())
    })
}

/// Expands directories into the sample logs they contain, in path order.
fn sample_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut stack = vec![input.clone()];
            let mut found = Vec::new();
            while let Some(dir) = stack.pop() {
                for entry in fs::read_dir(&dir).map_err(|e| anyhow::anyhow!("cannot list {}: {e}", dir.display()))? {
                    let p = entry?.path();
                    if p.is_dir() {
                        stack.push(p);
                    } else if SampleFormat::from_path(&p).is_ok() {
                        found.push(p);
                    }
                }
            }
            found.sort();
            out.extend(found);
        } else {
            out.push(input.clone());
        }
    }
    Ok(out)
}

fn read_samples(inputs: &[PathBuf], strict: bool) -> Result<Vec<PollutantSample>> {
    let mut samples = Vec::new();
    for path in sample_files(inputs)? {
        let format = SampleFormat::from_path(&path)?;
        let parsed = parse_sample_log(open(&path)?, format, strict)
            .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        if !parsed.rejected.is_empty() {
            log::warn!("{}: skipped {} bad records", path.display(), parsed.rejected.len());
        }
        samples.extend(parsed.samples);
    }
    if samples.is_empty() {
        return Err(anyhow::anyhow!("no usable samples in the telemetry input").into());
    }
    Ok(samples)
}

/// Written next to a dataset CSV as `<dataset>.meta.json`.
#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    provenance: Provenance,
    skipped: SkipCounts,
    rows: usize,
}

fn meta_path(dataset: &Path) -> PathBuf {
    let mut name = dataset.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

fn ingest(telemetry: &[PathBuf], annotations: &Path, out: &Path, strict: bool, cfg: &GlobalConfig) -> Result<()> {
    cfg.validate()?;
    let samples = read_samples(telemetry, strict)?;
    let annotations =
        parse_annotations(open(annotations)?).map_err(|e| anyhow::anyhow!("{}: {e}", annotations.display()))?;
    let segments = pipeline::align(&samples, cfg)?;
    let sources = telemetry.iter().map(|p| p.display().to_string()).collect();
    let dataset = pipeline::label_windows(&segments, &annotations, cfg, sources, None)?;
    let mut w = create(out)?;
    write_dataset_csv(&mut w, &dataset)?;
    finish(w, out)?;
    let meta = DatasetMeta {
        provenance: dataset.provenance.clone(),
        skipped: dataset.skipped,
        rows: dataset.len(),
    };
    emit(Some(&meta_path(out)), &serde_json::to_string_pretty(&meta).map_err(internal)?)?;
    println!(
        "{} labeled windows with {} features ({} annotations skipped) -> {}",
        dataset.len(),
        dataset.schema.len(),
        dataset.skipped.total(),
        out.display()
    );
    Ok(())
}

fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    let mut dataset = read_dataset_csv(open(path)?).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    if let Ok(text) = fs::read_to_string(meta_path(path)) {
        match serde_json::from_str::<DatasetMeta>(&text) {
            Ok(meta) => dataset.provenance = meta.provenance,
            Err(e) => log::warn!("ignoring unreadable dataset metadata: {e}"),
        }
    }
    Ok(dataset)
}

fn load_trained(path: &Path) -> Result<TrainedModel> {
    Ok(load_model(open(path)?).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?)
}

fn train_cmd(dataset: &Path, spec: Option<&Path>, family: Option<Family>, out: &Path, cfg: &GlobalConfig) -> Result<()> {
    let spec = match (spec, family) {
        (Some(path), _) => {
            toml::from_str::<ModelSpec>(&read_text(path)?).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?
        }
        (None, Some(f)) => ModelSpec::new(f),
        (None, None) => ModelSpec::random_forest(50, 10),
    };
    spec.validate()?;
    let dataset = load_dataset(dataset)?;
    let spec = spec.clone().with_seed(cfg.seed_for(Stream::Model) ^ spec.seed);
    let labels: Vec<ActivityLabel> = dataset.labels();
    let model = train(&spec, &dataset.features(), &labels)?;
    let mut w = create(out)?;
    save_model(&model, &mut w)?;
    finish(w, out)?;
    println!(
        "trained {} ({}) on {} rows -> {}",
        spec.family.display_name(),
        spec.params_label(),
        dataset.len(),
        out.display()
    );
    Ok(())
}

fn predict(model: &Path, telemetry: &[PathBuf], out: Option<&Path>, cfg: &GlobalConfig) -> Result<()> {
    let model = load_trained(model)?;
    let samples = read_samples(telemetry, false)?;
    let segments = pipeline::align(&samples, cfg)?;
    let mut text = String::from("window_start,window_end,label,score");
    for c in &model.classes {
        text.push(',');
        text.push_str(c.as_str());
    }
    text.push('\n');
    for seg in &segments {
        for (start, x) in sliding_windows(seg, &cfg.window.features, cfg.stride)? {
            let scores = model.predict_scores(&x)?;
            let best = airshadow_core::models::argmax(&scores);
            text.push_str(&format!(
                "{start},{},{},{:.6}",
                start + cfg.window.features.tau,
                model.classes[best],
                scores[best]
            ));
            for s in &scores {
                text.push_str(&format!(",{s:.6}"));
            }
            text.push('\n');
        }
    }
    emit(out, &text)
}

fn evaluate_cmd(model: &Path, dataset: &Path, json: bool) -> Result<()> {
    let model = load_trained(model)?;
    let dataset = load_dataset(dataset)?;
    let ev = evaluate(&model, &dataset)?;
    if json {
        return emit(None, &(serde_json::to_string_pretty(&ev).map_err(internal)? + "\n"));
    }
    let m = &ev.metrics;
    let mut text = format!(
        "rows {}\naccuracy {:.4}\nweighted precision {:.4}\nweighted recall {:.4}\nweighted f1 {:.4}\n",
        dataset.len(),
        m.accuracy,
        m.precision,
        m.recall,
        m.f1
    );
    match ev.roc.macro_auc {
        Some(auc) => text.push_str(&format!("macro auc {auc:.4}\n")),
        None => text.push_str("macro auc n/a\n"),
    }
    text.push_str("confusion (rows true, columns predicted)\n");
    let names: Vec<&str> = ev.confusion.classes.iter().map(|c| c.as_str()).collect();
    text.push_str(&format!("{:>12} {}\n", "", names.iter().map(|n| format!("{n:>10}")).collect::<String>()));
    for (name, row) in names.iter().zip(&ev.confusion.counts) {
        text.push_str(&format!("{name:>12} {}\n", row.iter().map(|v| format!("{v:>10}")).collect::<String>()));
    }
    emit(None, &text)
}

fn benchmark(dataset: &Path, out: Option<&Path>, format: ReportFormat, cfg: &GlobalConfig) -> Result<()> {
    cfg.validate()?;
    let dataset = load_dataset(dataset)?;
    let report = run_benchmark(&dataset, &cfg.grid(), &cfg.benchmark_protocol())?;
    if let Some(path) = out {
        emit(Some(path), &(serde_json::to_string_pretty(&report).map_err(internal)? + "\n"))?;
    }
    emit(None, &render_report(&report, format))
}
