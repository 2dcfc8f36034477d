use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use flarewatch::classify::{evaluate, format_comparison, Dataset, Label, LabelSource};
use flarewatch::ingest::IngestError;
use flarewatch::labeling::{read_label_records, review, write_label_records, LabelRecord, LlmClientConfig, LlmError, PendingLabel};
use flarewatch::pipeline::{
    annotated_frames, emit_scatter_plot, extract_samples, label_samples, read_feature_table, read_projected_samples,
    run_training, simulated_frames, AnnotatedFrame, EfficiencyModel, ExtractedSample, FeatureLogWriter, FrameDir,
    LabelingMode, Monitor, MonitorConfig, PipelineError, ProcessorConfig, TrainingOptions,
};
use flarewatch::simulator::{preset_by_name, write_scene, Scene, SceneSpec, SimError};

#[derive(Parser)]
#[command(name = "flarewatch", version, about = "Flare stack combustion efficiency monitoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene with frames, annotations and ground truth.
    Simulate(SimulateArgs),
    /// Assign preliminary labels to flame samples, optionally reviewing them.
    Label(LabelArgs),
    /// Fit scaling, PCA and the best of four classifiers.
    Train(TrainArgs),
    /// Stream frames through a trained model and report alerts.
    Monitor(MonitorArgs),
    /// Draw a PC1/PC2 scatter plot as SVG.
    Plot(PlotArgs),
    /// Score a trained model on labeled samples.
    Eval(EvalArgs),
}

#[derive(Args)]
#[command(group(ArgGroup::new("scene_source").required(true).args(["preset", "scene"])))]
struct SimulateArgs {
    /// clean_high, smoky_low, windy, three_stacks or crossing_near_miss
    #[arg(long)]
    preset: Option<String>,
    /// Scene description in JSON (same shape as the written scene.json)
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    frames: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Rule,
    Llm,
}

#[derive(Args)]
struct LlmArgs {
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long = "llm-model")]
    llm_model: Option<String>,
    /// Per-attempt timeout in seconds
    #[arg(long, default_value_t = 30.0)]
    timeout: f64,
    #[arg(long, default_value_t = 3)]
    max_retries: u32,
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    /// Directory for one JSON transcript per request
    #[arg(long)]
    transcripts: Option<PathBuf>,
}

#[derive(Args)]
struct SampleSource {
    /// Annotation JSONL (needs --frames)
    #[arg(long, requires = "frames")]
    annotations: Option<PathBuf>,
    /// Directory of raw frames with meta.json
    #[arg(long, requires = "annotations")]
    frames: Option<PathBuf>,
    /// CSV with ratio, E and angle columns
    #[arg(long, conflicts_with = "annotations")]
    features: Option<PathBuf>,
}

#[derive(Args)]
struct ReviewArgs {
    /// Confirm, flip or skip each preliminary label on the terminal
    #[arg(long, conflicts_with = "accept_all")]
    review: bool,
    /// Keep every preliminary label (the default)
    #[arg(long)]
    accept_all: bool,
}

#[derive(Args)]
struct LabelArgs {
    #[arg(long, value_enum, default_value_t = Mode::Rule)]
    mode: Mode,
    #[command(flatten)]
    source: SampleSource,
    /// Output label JSONL
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    review: ReviewArgs,
    #[command(flatten)]
    llm: LlmArgs,
}

#[derive(Args)]
struct TrainArgs {
    /// Label JSONL from `label`
    #[arg(long, conflicts_with_all = ["annotations", "features"])]
    labels: Option<PathBuf>,
    #[command(flatten)]
    source: SampleSource,
    /// Labeling mode for unlabeled input
    #[arg(long, value_enum, default_value_t = Mode::Rule)]
    mode: Mode,
    #[command(flatten)]
    review: ReviewArgs,
    #[command(flatten)]
    llm: LlmArgs,
    /// Output model file
    #[arg(long)]
    out: PathBuf,
    /// Feature log CSV with projections and labels for every sample
    #[arg(long)]
    feature_log: Option<PathBuf>,
    /// Classifier comparison as JSON
    #[arg(long)]
    report: Option<PathBuf>,
    /// Timestamp stored in the model; defaults to SOURCE_DATE_EPOCH, then the clock
    #[arg(long)]
    created_at: Option<String>,
    #[arg(long, default_value_t = 0.3)]
    test_fraction: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
#[command(group(ArgGroup::new("stream").required(true).args(["input", "preset"])))]
struct MonitorArgs {
    #[arg(long)]
    model: PathBuf,
    /// Annotation JSONL (needs --frames)
    #[arg(long, requires = "frames")]
    input: Option<PathBuf>,
    #[arg(long)]
    frames: Option<PathBuf>,
    /// Generate the stream in memory from a simulator preset
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, default_value_t = 5)]
    alert_window: u64,
    #[arg(long, default_value_t = 50)]
    cooldown: u64,
    #[arg(long)]
    feature_log: Option<PathBuf>,
    /// Alerts as JSONL
    #[arg(long)]
    alerts: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// CSV with pc1, pc2 and label columns (a feature log works)
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Label JSONL, or CSV with ratio, E, angle and label columns
    #[arg(long)]
    test: PathBuf,
}

/// Bad invocation that clap cannot catch.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Joins the cause chain, dropping causes already quoted by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut prev = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !prev.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
        prev = text;
    }
    out
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<PipelineError>() {
            return e.exit_code() as u8;
        }
        if let Some(e) = cause.downcast_ref::<LlmError>() {
            return match e {
                LlmError::MissingKey | LlmError::InvalidConfig(_) => 1,
                _ => 3,
            };
        }
        if let Some(SimError::InvalidPreset(_) | SimError::InvalidSpec(_)) = cause.downcast_ref::<SimError>() {
            return 1;
        }
        if cause.is::<IngestError>() {
            return 2;
        }
    }
    2
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Label(a) => label(a),
        Command::Train(a) => train(a),
        Command::Monitor(a) => monitor(a),
        Command::Plot(a) => plot(a),
        Command::Eval(a) => eval(a),
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut spec: SceneSpec = match (&a.preset, &a.scene) {
        (Some(name), _) => preset_by_name(name)?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        (None, None) => unreachable!("clap enforces a scene source"),
    };
    if let Some(n) = a.frames {
        spec.frame_count = n;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    write_scene(&spec, &a.out).with_context(|| format!("writing scene to {}", a.out.display()))?;
    println!(
        "wrote {} frames ({}x{}, {} stacks) to {}",
        spec.frame_count,
        spec.width,
        spec.height,
        spec.stacks.len(),
        a.out.display()
    );
    Ok(())
}

fn open_reader(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn create_writer(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn frame_stream(annotations: &Path, frames: &Path) -> Result<impl Iterator<Item = Result<AnnotatedFrame, PipelineError>>> {
    let dir = FrameDir::open(frames)?;
    Ok(annotated_frames(open_reader(annotations)?, dir))
}

fn llm_config(a: &LlmArgs) -> Result<LlmClientConfig> {
    if !(a.timeout.is_finite() && a.timeout > 0.0) {
        return Err(usage("--timeout must be a positive number of seconds"));
    }
    let mut cfg = LlmClientConfig::from_env();
    if let Some(e) = &a.endpoint {
        cfg.endpoint = e.clone();
    }
    if let Some(m) = &a.llm_model {
        cfg.model = m.clone();
    }
    cfg.timeout = Duration::from_secs_f64(a.timeout);
    cfg.max_retries = a.max_retries;
    cfg.max_concurrent_requests = a.concurrency;
    cfg.validate()?;
    Ok(cfg)
}

/// Samples plus, for CSV input, any labels already present.
fn load_samples(src: &SampleSource) -> Result<(Vec<ExtractedSample>, Vec<Option<Label>>)> {
    if let (Some(ann), Some(frames)) = (&src.annotations, &src.frames) {
        let samples = extract_samples(frame_stream(ann, frames)?, ProcessorConfig::default())?;
        let n = samples.len();
        return Ok((samples, vec![None; n]));
    }
    let Some(path) = &src.features else {
        return Err(usage("give --annotations with --frames, or --features"));
    };
    let table = read_feature_table(open_reader(path)?)?;
    let samples = table
        .iter()
        .enumerate()
        .map(|(i, (f, _))| ExtractedSample {
            frame: i as u64,
            track_id: 0,
            features: *f,
        })
        .collect();
    Ok((samples, table.into_iter().map(|(_, l)| l).collect()))
}

fn labeled_records(
    src: &SampleSource,
    mode: Mode,
    review_args: &ReviewArgs,
    llm: &LlmArgs,
) -> Result<Vec<LabelRecord>> {
    let (samples, given) = load_samples(src)?;
    let mut pending: Vec<PendingLabel> = Vec::with_capacity(samples.len());
    let unlabeled: Vec<ExtractedSample> = samples
        .iter()
        .zip(&given)
        .filter(|(_, l)| l.is_none())
        .map(|(s, _)| *s)
        .collect();
    let labeling = match mode {
        Mode::Rule => LabelingMode::Rule,
        Mode::Llm => LabelingMode::Llm(llm_config(llm)?),
    };
    let mut fresh = if unlabeled.is_empty() {
        Vec::new()
    } else {
        label_samples(&unlabeled, &labeling, llm.transcripts.as_deref())?
    }
    .into_iter();
    for (s, l) in samples.iter().zip(given) {
        match l {
            Some(label) => pending.push(PendingLabel {
                frame: Some(s.frame),
                track_id: Some(s.track_id),
                features: s.features,
                label: Some(label),
                source: LabelSource::Human,
                transcript: None,
            }),
            None => pending.push(fresh.next().expect("one preliminary label per unlabeled sample")),
        }
    }
    let accept_all = !review_args.review;
    let stdin = io::stdin();
    let outcome = review(pending, accept_all, stdin.lock(), io::stderr()).context("reviewing labels")?;
    if outcome.unlabeled > 0 {
        log::warn!("{} samples left unlabeled", outcome.unlabeled);
    }
    Ok(outcome.records)
}

fn label(a: LabelArgs) -> Result<()> {
    let records = labeled_records(&a.source, a.mode, &a.review, &a.llm)?;
    let mut out = create_writer(&a.out)?;
    write_label_records(&mut out, &records).and_then(|_| out.flush())?;
    let high = records.iter().filter(|r| r.label == Label::High).count();
    println!(
        "labeled {} samples ({} high, {} low) to {}",
        records.len(),
        high,
        records.len() - high,
        a.out.display()
    );
    Ok(())
}

fn created_at(arg: Option<String>) -> Result<String> {
    if let Some(s) = arg {
        return Ok(s);
    }
    if let Ok(s) = std::env::var("SOURCE_DATE_EPOCH") {
        let secs: u64 = s.trim().parse().map_err(|_| usage("SOURCE_DATE_EPOCH is not an integer"))?;
        return Ok(secs.to_string());
    }
    Ok(SystemTime::now().duration_since(UNIX_EPOCH)?.as_secs().to_string())
}

fn read_records(path: &Path) -> Result<Vec<LabelRecord>> {
    read_label_records(open_reader(path)?).map_err(|message| {
        PipelineError::Parse {
            context: path.display().to_string(),
            message,
        }
        .into()
    })
}

fn train(a: TrainArgs) -> Result<()> {
    let records = match &a.labels {
        Some(path) => read_records(path)?,
        None => labeled_records(&a.source, a.mode, &a.review, &a.llm)?,
    };
    let opts = TrainingOptions {
        test_fraction: a.test_fraction,
        split_seed: a.seed,
        created_at: created_at(a.created_at)?,
        ..TrainingOptions::default()
    };
    let outcome = run_training(&records, &opts)?;
    outcome.model.save(&a.out)?;
    print!("{}", format_comparison(&outcome.comparison));
    println!(
        "selected {} ({} train / {} test samples); model written to {}",
        outcome.comparison.rows[outcome.comparison.selected].kind.name(),
        outcome.train_indices.len(),
        outcome.test_indices.len(),
        a.out.display()
    );
    if let Some(path) = &a.feature_log {
        let mut w = FeatureLogWriter::new(create_writer(path)?)?;
        for row in &outcome.feature_log {
            w.write(row)?;
        }
        w.into_inner()?.flush()?;
    }
    if let Some(path) = &a.report {
        let report = serde_json::json!({
            "selected": outcome.comparison.selected,
            "rows": outcome.comparison.rows,
        });
        fs::write(path, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn monitor(a: MonitorArgs) -> Result<()> {
    let model = EfficiencyModel::load(&a.model)?;
    let cfg = MonitorConfig {
        alert_window: a.alert_window,
        cooldown: a.cooldown,
    };
    let mut mon = Monitor::new(model, cfg, ProcessorConfig::default())?;
    let stream: Box<dyn Iterator<Item = Result<AnnotatedFrame, PipelineError>>> = match (&a.input, &a.frames, &a.preset) {
        (Some(input), Some(frames), _) => Box::new(frame_stream(input, frames)?),
        (None, None, Some(name)) => Box::new(simulated_frames(Scene::new(preset_by_name(name)?)?)),
        _ => bail!(usage("give --input with --frames, or --preset alone")),
    };
    let mut log = a
        .feature_log
        .as_deref()
        .map(|p| create_writer(p).and_then(|w| Ok(FeatureLogWriter::new(w)?)))
        .transpose()?;
    let mut alerts_out = a.alerts.as_deref().map(create_writer).transpose()?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let (mut frames, mut alerts) = (0u64, 0usize);
    for item in stream {
        let (frame, ann) = item?;
        let status = mon.process(&frame, &ann)?;
        frames += 1;
        for row in &status.rows {
            writeln!(
                out,
                "frame {} track {} {} ratio={} E={} angle={}",
                row.frame,
                row.track_id,
                row.label.map_or("-", |l| l.as_str()),
                row.ratio,
                row.e,
                row.angle
            )?;
            if let Some(w) = log.as_mut() {
                w.write(row)?;
            }
        }
        for alert in &status.alerts {
            alerts += 1;
            writeln!(
                out,
                "ALERT track {} low efficiency over frames {}..={}",
                alert.track_id, alert.first_frame, alert.last_frame
            )?;
            if let Some(w) = alerts_out.as_mut() {
                serde_json::to_writer(&mut *w, alert)?;
                w.write_all(b"\n")?;
            }
        }
        out.flush()?;
    }
    if let Some(w) = log {
        w.into_inner()?.flush()?;
    }
    if let Some(mut w) = alerts_out {
        w.flush()?;
    }
    eprintln!("processed {frames} frames, {alerts} alerts");
    Ok(())
}

fn plot(a: PlotArgs) -> Result<()> {
    let samples = read_projected_samples(open_reader(&a.samples)?)?;
    if samples.is_empty() {
        return Err(PipelineError::TrainingData(format!("{} has no projected, labeled rows", a.samples.display())).into());
    }
    fs::write(&a.out, emit_scatter_plot(&samples)).with_context(|| format!("writing {}", a.out.display()))?;
    println!("plotted {} samples to {}", samples.len(), a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let model = EfficiencyModel::load(&a.model)?;
    let is_csv = a.test.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let labeled: Vec<_> = if is_csv {
        read_feature_table(open_reader(&a.test)?)?
            .into_iter()
            .enumerate()
            .map(|(i, (f, l))| {
                l.map(|l| (f, l)).ok_or_else(|| PipelineError::Parse {
                    context: a.test.display().to_string(),
                    message: format!("row {} has no label", i + 1),
                })
            })
            .collect::<Result<_, _>>()?
    } else {
        read_records(&a.test)?.into_iter().map(|r| (r.features, r.label)).collect()
    };
    let data = Dataset::new(
        labeled.iter().map(|(f, _)| model.project(f)).collect(),
        labeled.iter().map(|(_, l)| *l).collect(),
    );
    let ev = evaluate(&model.classifier, &data).map_err(PipelineError::from)?;
    let c = ev.confusion;
    println!("samples {}", data.len());
    println!("accuracy {}", ev.accuracy);
    println!("confusion (rows true, columns predicted)");
    println!("{:>6} {:>6} {:>6}", "", "high", "low");
    println!("{:>6} {:>6} {:>6}", "high", c[0][0], c[0][1]);
    println!("{:>6} {:>6} {:>6}", "low", c[1][0], c[1][1]);
    Ok(())
}
