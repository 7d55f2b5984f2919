//! `roadwatch`: preprocess, train, evaluate, detect and benchmark.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric
//! failure.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use roadwatch::bench::bench_inference;
use roadwatch::data::{load_split, preprocess_manifest, preprocess_stream};
use roadwatch::metrics::comparison_table;
use roadwatch::train::{train, TrainOptions};
use roadwatch::video::{clip_length, ppm};
use roadwatch::{DetectionResult, Error, Manifest, MetricsReport, Model, ModelConfig, Split, StreamDetector};

const DEFAULT_VARIANT: &str = "trainable_twostream";

#[derive(Parser)]
#[command(name = "roadwatch", version, about = "Two-stream video accident detector")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cache prepared frames and flow stacks for a raw stream or a manifest.
    Preprocess(PreprocessArgs),
    /// Train a variant on the manifest's train split.
    Train(TrainArgs),
    /// Score a split and write a metrics report.
    Eval(EvalArgs),
    /// Slide windows over a frame directory and print per-window scores.
    Detect(DetectArgs),
    /// Time single-window inference on synthetic input.
    Bench(BenchArgs),
    /// Merge metrics reports into one comparison table.
    Table(TableArgs),
    /// Per-split clip counts of a manifest.
    Summary(SummaryArgs),
    /// Print the resolved variant settings as a config file.
    Config(ModelArgs),
}

/// Settings shared by every command that builds a model. Precedence is
/// flags, then `--config`, then the variant preset.
#[derive(Args, Clone, Debug, Default)]
struct ModelArgs {
    /// rgb_only, nontrainable_twostream, augmented_twostream or trainable_twostream.
    #[arg(long)]
    variant: Option<String>,
    /// key=value variant file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Keep every n-th frame.
    #[arg(long)]
    stride: Option<usize>,
    /// Frames per window.
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    window_stride: Option<usize>,
    #[arg(long)]
    frame_size: Option<usize>,
    #[arg(long)]
    flow_iterations: Option<usize>,
    /// Start from the 32×32 toy scale of the variant.
    #[arg(long)]
    toy: bool,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Directory of PPM frames with a meta.txt, cut into five-second clips.
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    input: Option<PathBuf>,
    /// Manifest whose rows are each cached as one clip.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for weights and history.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Saved model directory; without it the seeded initial weights are scored.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct DetectArgs {
    /// Directory of PPM frames with a meta.txt.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Also write the window CSV and verdict here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct TableArgs {
    /// Reports written by `eval`.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SummaryArgs {
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Core(e) => match e {
                Error::Config(_) | Error::InvalidArgument(_) => 1,
                Error::Parse {
                    what: "variant config", ..
                } => 1,
                Error::NonFinite(_) | Error::Divergence { .. } => 3,
                _ => 2,
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Core(e @ Error::Divergence { dump: Some(d), .. }) => {
                write!(f, "{e}; state dumped to {}", d.display())
            }
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Table(a) => cmd_table(a),
        Command::Summary(a) => cmd_summary(a),
        Command::Config(a) => a.resolve().map(|c| print!("{}", c.to_text())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn warn(msg: &str) {
    eprintln!("warning: {msg}");
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|source| {
        Failure::Core(Error::Io {
            path: path.to_path_buf(),
            source,
        })
    })
}

fn write_text(path: &Path, text: &str) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| Error::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| {
        Failure::Core(Error::Io {
            path: path.to_path_buf(),
            source,
        })
    })
}

fn last_name(text: &str) -> Option<String> {
    text.lines()
        .filter_map(|l| l.trim().strip_prefix("name="))
        .next_back()
        .map(|s| s.trim().to_string())
}

impl ModelArgs {
    fn resolve(&self) -> CliResult<ModelConfig> {
        let file = self.config.as_deref().map(read_text).transpose()?;
        let file_name = file.as_deref().and_then(last_name);
        if let (Some(flag), Some(named)) = (&self.variant, &file_name) {
            if flag != named {
                return Err(Failure::Usage(format!(
                    "--variant {flag} conflicts with name={named} in the config file"
                )));
            }
        }
        let name = self.variant.clone().or(file_name).unwrap_or_else(|| DEFAULT_VARIANT.into());
        let mut cfg = ModelConfig::preset(&name)?;
        if self.toy {
            cfg = cfg.toy_scale();
        }
        if let Some(text) = &file {
            cfg.apply_text(text)?;
        }
        self.apply_runtime(&mut cfg);
        if let Some(v) = self.frame_size {
            cfg.pipeline.frame_size = v;
        }
        if let Some(v) = self.flow_iterations {
            cfg.flow.iterations = v;
        }
        if let Some(v) = self.seed {
            cfg.train.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Settings that may change without touching the weights.
    fn apply_runtime(&self, cfg: &mut ModelConfig) {
        if let Some(v) = self.stride {
            cfg.pipeline.sample_stride = v;
        }
        if let Some(v) = self.depth {
            cfg.pipeline.depth = v;
        }
        if let Some(v) = self.window_stride {
            cfg.pipeline.window_stride = v;
        }
    }

    /// A saved model, with only the sampling and windowing flags applied,
    /// or a freshly seeded one when no weights are given.
    fn model(&self, weights: Option<&Path>) -> CliResult<Model<f32>> {
        let Some(dir) = weights else {
            let cfg = self.resolve()?;
            let seed = cfg.train.seed;
            return Ok(Model::build(cfg, seed)?);
        };
        if self.config.is_some() || self.toy || self.frame_size.is_some() || self.flow_iterations.is_some() {
            return Err(Failure::Usage(
                "--config, --toy, --frame-size and --flow-iterations are fixed by --weights".into(),
            ));
        }
        let mut model = Model::load(dir)?;
        if let Some(v) = &self.variant {
            if *v != model.config.name {
                return Err(Failure::Usage(format!(
                    "--variant {v} but {} holds a {} model",
                    dir.display(),
                    model.config.name
                )));
            }
        }
        self.apply_runtime(&mut model.config);
        model.config.validate()?;
        Ok(model)
    }
}

fn cmd_preprocess(a: PreprocessArgs) -> CliResult {
    let cfg = a.model.resolve()?;
    if let Some(input) = &a.input {
        let raw = ppm::read_frame_dir(input)?;
        let clips = preprocess_stream(&raw, &cfg, &a.out)?;
        for (id, n) in &clips {
            println!("{id}: {n} frames");
        }
        let dropped = raw.len() - clips.len() * clip_length(raw.fps)?;
        println!("clips={} frames_dropped={dropped} flow={}", clips.len(), cfg.two_stream());
    } else if let Some(path) = &a.manifest {
        let manifest = Manifest::load(path)?;
        let cached = preprocess_manifest(&manifest, &cfg, &a.out)?;
        println!("clips={} flow={}", cached.rows.len(), cfg.two_stream());
        println!("manifest={}", a.out.join("manifest.csv").display());
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CliResult {
    let mut cfg = a.model.resolve()?;
    if let Some(v) = a.lr {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    cfg.train.validate()?;
    if cfg.train.learning_rate == 0.0 {
        warn("learning rate is 0; weights will not change");
    }
    let manifest = Manifest::load(&a.manifest)?;
    manifest.check_dirs()?;
    let train_set = load_split(&manifest, Split::Train, &cfg)?;
    let val_set = load_split(&manifest, Split::Val, &cfg)?;
    let seed = cfg.train.seed;
    let mut model = Model::build(cfg, seed)?;
    let options = TrainOptions {
        dump_dir: Some(a.out.join("divergence")),
    };
    let history = train(&mut model, &train_set, &val_set, &options, |r| {
        let val = match (r.val_loss, r.val_accuracy) {
            (Some(l), Some(acc)) => format!(" val_loss={l:.6} val_accuracy={acc:.4}"),
            _ => String::new(),
        };
        println!(
            "epoch={} train_loss={:.6} train_accuracy={:.4}{val}",
            r.epoch, r.train_loss, r.train_accuracy
        );
    })?;
    model.save(&a.out)?;
    write_text(&a.out.join("history.csv"), &history.to_csv())?;
    println!("weights={}", a.out.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CliResult {
    let split: Split = a.split.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
    if a.weights.is_none() {
        warn("no --weights given; scoring the seeded initial weights");
    }
    let model = a.model.model(a.weights.as_deref())?;
    let manifest = Manifest::load(&a.manifest)?;
    manifest.check_dirs()?;
    let samples = load_split(&manifest, split, &model.config)?;
    let predictions = samples
        .iter()
        .map(|s| model.predict(&s.rgb, s.flow.as_ref()))
        .collect::<roadwatch::Result<Vec<_>>>()?;
    let labels: Vec<_> = samples.iter().map(|s| s.label).collect();
    let report = MetricsReport::from_predictions(&predictions, &labels, a.threshold)?;
    let text = report.to_report(&model.config.name);
    print!("{text}");
    if let Some(out) = &a.out {
        write_text(out, &text)?;
    }
    Ok(())
}

fn cmd_detect(a: DetectArgs) -> CliResult {
    if a.weights.is_none() {
        warn("no --weights given; detecting with the seeded initial weights");
    }
    let model = a.model.model(a.weights.as_deref())?;
    ppm::read_fps(&a.input)?;
    let paths = ppm::frame_paths(&a.input);
    if paths.is_empty() {
        return Err(Error::Data(format!("{}: no frames", a.input.display())).into());
    }
    let clip_id = a
        .input
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "stream".into());
    let mut detector = StreamDetector::new(&model, clip_id.clone(), a.threshold)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let io_err = |source| Error::Io {
        path: PathBuf::from("<stdout>"),
        source,
    };
    for p in &paths {
        let frame = ppm::read_frame(p)?;
        if let Some(w) = detector.push(&frame)? {
            writeln!(out, "{}", DetectionResult::window_line(&clip_id, &w)).map_err(io_err)?;
            out.flush().map_err(io_err)?;
        }
    }
    let result = detector.finish()?;
    writeln!(out, "{}", result.verdict_line()).map_err(io_err)?;
    if let Some(path) = &a.out {
        write_text(path, &result.to_csv())?;
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> CliResult {
    let model = a.model.model(a.weights.as_deref())?;
    let seed = a.model.seed.unwrap_or(0);
    let report = bench_inference(&model, a.reps, a.warmup, seed)?;
    let text = report.to_report();
    print!("{text}");
    if let Some(out) = &a.out {
        write_text(out, &text)?;
    }
    Ok(())
}

fn cmd_table(a: TableArgs) -> CliResult {
    let rows = a
        .reports
        .iter()
        .map(|p| Ok(MetricsReport::parse_report(&read_text(p)?)?))
        .collect::<CliResult<Vec<_>>>()?;
    let table = comparison_table(&rows);
    print!("{table}");
    if let Some(out) = &a.out {
        write_text(out, &table)?;
    }
    Ok(())
}

fn cmd_summary(a: SummaryArgs) -> CliResult {
    print!("{}", Manifest::load(&a.manifest)?.summary());
    Ok(())
}
