//! `denkf`: synthesize data, train, evaluate, and run the filter on live or
//! recorded sensor streams.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error
//! (missing or malformed input files), 3 runtime error.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use denkf::data::{load_dataset, save_dataset, synthesize_dataset, DatasetConfig, Trajectory};
use denkf::ingest::{
    run_session, write_capture, CaptureReader, CaptureSource, DatagramSource, Overflow,
    SessionConfig, SessionStats, Speed, UdpSource, DEFAULT_PORT,
};
use denkf::kinematics::ArmConfig;
use denkf::models::{
    baseline_metrics, evaluate, mean_state, Architecture, EvalReport, FilterConfig, ModelBundle,
    TrainConfig, Trainer, TrainerState,
};
use denkf::Error;

const METRICS_FILE: &str = "metrics.jsonl";
const STATE_FILE: &str = "trainer_state.json";
// Errors measured on real motion-capture recordings, shown for context.
const REFERENCE: (f64, f64, f64) = (9.94, 9.27, 7.75);

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(Error),
    #[error("{0}")]
    Runtime(Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        use Error::*;
        match e {
            InvalidConfig(m) => CliError::Usage(format!("invalid configuration: {m}")),
            InvalidEnsembleSize(_) => CliError::Usage(e.to_string()),
            EmptyDataset
            | SchemaMismatch(_)
            | Parse { .. }
            | BadMagic(_)
            | UnsupportedVersion(_)
            | BadLength { .. }
            | UnknownDevice(_)
            | NonUnitQuaternion { .. }
            | CorruptCapture(_)
            | Checkpoint(_)
            | ModelShapeMismatch(_)
            | Io(_)
            | Json(_)
            | Csv(_) => CliError::Data(e),
            _ => CliError::Runtime(e),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Data(e.into())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "denkf",
    version,
    about = "Arm pose and body heading from smartwatch and phone IMUs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset (CSV) and optionally a packet capture.
    Synth(Common),
    /// Train a model bundle and write the best checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(Common),
    /// Filter live UDP sensor datagrams.
    Serve(Common),
    /// Filter a recorded capture file.
    Replay(Common),
}

#[derive(Args, Debug, Default)]
struct Common {
    /// JSON configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    port: Option<u16>,
    /// Checkpoint directory.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset CSV file.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Packet capture file.
    #[arg(long)]
    capture: Option<PathBuf>,
    #[arg(long, value_enum)]
    speed: Option<SpeedArg>,
    /// Also write results (JSON) to this file.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Ensemble size used for filtering.
    #[arg(long)]
    ensemble: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Continue from the trainer state saved in the checkpoint directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SpeedArg {
    Realtime,
    Max,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AppConfig {
    dataset: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    capture: Option<PathBuf>,
    output: Option<PathBuf>,
    seed: u64,
    port: u16,
    speed: Speed,
    synth: DatasetConfig,
    train: TrainConfig,
    architecture: Architecture,
    filter: FilterConfig,
    arm: ArmConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            checkpoint: None,
            capture: None,
            output: None,
            seed: 0,
            port: DEFAULT_PORT,
            speed: Speed::Realtime,
            synth: DatasetConfig::default(),
            train: TrainConfig::default(),
            architecture: Architecture::default(),
            filter: FilterConfig::default(),
            arm: ArmConfig::default(),
        }
    }
}

impl AppConfig {
    fn load(c: &Common) -> CliResult<Self> {
        let mut cfg = match &c.config {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
            None => AppConfig::default(),
        };
        macro_rules! over {
            ($($field:ident),*) => { $(if c.$field.is_some() { cfg.$field = c.$field.clone(); })* };
        }
        over!(dataset, checkpoint, capture, output);
        if let Some(s) = c.seed {
            cfg.seed = s;
        }
        if let Some(p) = c.port {
            cfg.port = p;
        }
        if let Some(s) = c.speed {
            cfg.speed = match s {
                SpeedArg::Realtime => Speed::Realtime,
                SpeedArg::Max => Speed::Max,
            };
        }
        if let Some(e) = c.ensemble {
            cfg.filter.ensemble_size = e;
        }
        // One seed drives every generator.
        cfg.train.seed = cfg.seed;
        cfg.filter.seed = cfg.seed;
        cfg.train.window = cfg.architecture.window;
        Ok(cfg)
    }

    fn require<'a>(&self, p: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
        p.as_deref()
            .ok_or_else(|| CliError::Usage(format!("--{flag} is required")))
    }
}

fn shutdown_flag() -> Arc<AtomicBool> {
    let flag = Arc::new(AtomicBool::new(false));
    let f = flag.clone();
    if let Err(e) = ctrlc::set_handler(move || f.store(true, Ordering::SeqCst)) {
        log::warn!("cannot install interrupt handler: {e}");
    }
    flag
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(value).map_err(Error::from)?)?;
    fs::rename(tmp, path)?;
    Ok(())
}

fn cmd_synth(c: &Common) -> CliResult {
    let cfg = AppConfig::load(c)?;
    let out = cfg.require(&cfg.dataset, "dataset")?;
    let data = synthesize_dataset(&cfg.synth, cfg.seed)?;
    save_dataset(&data.trajectories, out)?;

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &data.trajectories {
        *counts.entry(t.base_motion()).or_default() += t.len();
    }
    let manifest: Vec<_> = data
        .trajectories
        .iter()
        .map(
            |t| serde_json::json!({ "subject": t.subject, "motion": t.motion, "samples": t.len() }),
        )
        .collect();
    write_json(
        &out.with_extension("manifest.json"),
        &serde_json::json!({ "seed": cfg.seed, "trajectories": manifest }),
    )?;
    for (m, n) in &counts {
        println!("{m:<14} {n:>8} samples");
    }
    println!(
        "{} trajectories, {} samples",
        data.trajectories.len(),
        counts.values().sum::<usize>()
    );

    if let Some(cap) = &cfg.capture {
        let first = &data.base[0];
        write_capture(cap, &first.packets)?;
        println!(
            "capture: {} datagrams of {}/{} written to {}",
            first.packets.len(),
            first.trajectory.subject,
            first.trajectory.motion,
            cap.display()
        );
    }
    Ok(())
}

fn load_data(cfg: &AppConfig) -> CliResult<Vec<Trajectory>> {
    let data = load_dataset(cfg.require(&cfg.dataset, "dataset")?)?;
    if data.is_empty() {
        return Err(CliError::Data(Error::EmptyDataset));
    }
    Ok(data)
}

fn cmd_train(a: &TrainArgs) -> CliResult {
    let mut cfg = AppConfig::load(&a.common)?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr = lr;
    }
    if let Some(e) = a.common.ensemble {
        cfg.train.ensemble_size = e;
    }
    let t = &cfg.train;
    println!(
        "training: epochs={} batch={} lr={:e} E={} window={} seed={}",
        t.epochs, t.batch_size, t.lr, t.ensemble_size, t.window, t.seed
    );
    let dir = cfg.require(&cfg.checkpoint, "checkpoint")?.to_path_buf();
    let data = load_data(&cfg)?;

    let state_path = dir.join(STATE_FILE);
    let mut trainer = if a.resume {
        let state: TrainerState = serde_json::from_slice(&fs::read(&state_path)?)
            .map_err(|e| CliError::Data(e.into()))?;
        println!("resuming after epoch {}", state.epoch);
        Trainer::resume(state, &data, cfg.train.clone())?
    } else {
        let mut bundle = ModelBundle::new(
            cfg.architecture.clone(),
            &mut ChaCha8Rng::seed_from_u64(cfg.seed),
        )?;
        bundle.fit_normalization(&data)?;
        Trainer::new(bundle, &data, cfg.train.clone())?
    };
    fs::create_dir_all(&dir)?;

    let stop = shutdown_flag();
    let save = |trainer: &Trainer| -> CliResult {
        let s = trainer.state();
        let meta = serde_json::json!({
            "seed": cfg.seed,
            "train": cfg.train,
            "best_epoch": s.best_epoch,
            "best_val": s.best_val,
        });
        s.best.save(&dir, meta)?;
        write_json(&state_path, s)?;
        let mut lines = Vec::new();
        for m in &s.metrics {
            serde_json::to_writer(&mut lines, m).map_err(Error::from)?;
            lines.push(b'\n');
        }
        fs::write(dir.join(METRICS_FILE), lines)?;
        Ok(())
    };
    save(&trainer)?;
    while !trainer.finished() {
        if stop.load(Ordering::SeqCst) {
            println!(
                "interrupted after epoch {}; resume with --resume",
                trainer.state().epoch
            );
            return Ok(());
        }
        let m = trainer.run_epoch()?;
        save(&trainer)?;
        println!(
            "epoch {:>3}  train {:.6}  val e2e {:.6}{}",
            m.epoch,
            m.train.total,
            m.val.end_to_end,
            if m.improved { "  (best)" } else { "" }
        );
    }
    let s = trainer.state();
    println!(
        "best epoch {} (val e2e {:.6}); checkpoint in {}",
        s.best_epoch,
        s.best_val,
        dir.display()
    );
    Ok(())
}

fn print_report(label: &str, r: &EvalReport) {
    let o = &r.overall;
    println!(
        "{label:<22} wrist {:>7.2} cm  elbow {:>7.2} cm  hip {:>6.2} deg",
        o.wrist_cm, o.elbow_cm, o.hip_deg
    );
}

fn cmd_eval(c: &Common) -> CliResult {
    let cfg = AppConfig::load(c)?;
    let bundle = ModelBundle::load(cfg.require(&cfg.checkpoint, "checkpoint")?)?;
    let data = load_data(&cfg)?;
    let report = evaluate(&bundle, &data, &cfg.arm, cfg.filter)?;
    let baseline = baseline_metrics(&mean_state(&data)?, &data, &cfg.arm)?;

    print_report("filter", &report);
    for (m, x) in &report.per_motion {
        println!(
            "  {m:<20} wrist {:>7.2} cm  elbow {:>7.2} cm  hip {:>6.2} deg",
            x.wrist_cm, x.elbow_cm, x.hip_deg
        );
    }
    print_report("constant-mean baseline", &baseline);
    println!(
        "{:<22} wrist {:>7.2} cm  elbow {:>7.2} cm  hip {:>6.2} deg  (motion-capture recordings, not comparable)",
        "reference", REFERENCE.0, REFERENCE.1, REFERENCE.2
    );
    println!(
        "throughput: {:.1} Hz ({} steps, E={})",
        report.throughput(),
        report.steps,
        cfg.filter.ensemble_size
    );
    if let Some(out) = &cfg.output {
        write_json(
            out,
            &serde_json::json!({
                "overall": report.overall,
                "per_motion": report.per_motion,
                "baseline": baseline.overall,
                "steps": report.steps,
                "seed": cfg.seed,
                "ensemble_size": cfg.filter.ensemble_size,
            }),
        )?;
    }
    Ok(())
}

fn session(
    cfg: &AppConfig,
    source: &mut dyn DatagramSource,
    overflow: Overflow,
) -> CliResult<SessionStats> {
    let bundle = ModelBundle::load(cfg.require(&cfg.checkpoint, "checkpoint")?)?;
    let scfg = SessionConfig {
        filter: cfg.filter,
        arm: cfg.arm,
        overflow,
        ..SessionConfig::default()
    };
    let stop = shutdown_flag();
    let stdout = io::stdout();
    let mut sink: Box<dyn Write> = match &cfg.output {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(stdout.lock()),
    };
    let stats = run_session(&bundle, source, &scfg, &mut *sink, &stop)?;
    eprintln!(
        "{} estimates in {:.2} s ({:.1} Hz, E={}); {} datagrams, {} malformed, {} dropped, {} out of order, {} degraded",
        stats.estimates,
        stats.seconds,
        stats.rate(),
        cfg.filter.ensemble_size,
        stats.datagrams,
        stats.decode_errors,
        stats.dropped,
        stats.out_of_order,
        stats.degraded
    );
    Ok(stats)
}

fn cmd_replay(c: &Common) -> CliResult {
    let cfg = AppConfig::load(c)?;
    let reader = CaptureReader::open(cfg.require(&cfg.capture, "capture")?)?;
    session(
        &cfg,
        &mut CaptureSource::new(reader, cfg.speed),
        Overflow::Block,
    )?;
    Ok(())
}

fn cmd_serve(c: &Common) -> CliResult {
    let cfg = AppConfig::load(c)?;
    let addr = SocketAddr::from((Ipv4Addr::UNSPECIFIED, cfg.port));
    let mut source = UdpSource::bind(addr).map_err(CliError::Runtime)?;
    eprintln!(
        "listening on {}",
        source.local_addr().map_err(CliError::Runtime)?
    );
    session(&cfg, &mut source, Overflow::DropOldest)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Synth(c) => cmd_synth(c),
        Command::Train(a) => cmd_train(a),
        Command::Eval(c) => cmd_eval(c),
        Command::Serve(c) => cmd_serve(c),
        Command::Replay(c) => cmd_replay(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
