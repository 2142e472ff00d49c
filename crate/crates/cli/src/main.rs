// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ensemble_client::{run_bots, ApiClient, BotOptions};
use ensemble_core::dynamics::FluxConfig;
use ensemble_core::forest::{
    cross_validate, load_model, save_model, shuffle_labels, train, ForestModel, ForestParams,
    LabeledExample,
};
use ensemble_core::profile::{profile, sweep};
use ensemble_core::replay::{gesture_sequences, new_idea_times, replay, ReplayOptions};
use ensemble_core::scenario::{scenario, BotScript, ScenarioKind};
use ensemble_core::session::SessionConfig;
use ensemble_core::session_log::{read_log, SessionLog};
use ensemble_core::synth::{build_corpus, export_corpus, import_corpus};
use ensemble_server::{
    ServerConfig, DEFAULT_BRIDGE_PORT, DEFAULT_HTTP_PORT, DEFAULT_OSC_PORT, LOG_DIR_ENV,
};

/// Real-time gesture classification and new-idea detection for touch-screen ensembles.
#[derive(Debug, Parser)]
#[command(name = "ensemble", version)]
struct Cli {
    /// Log verbosity (-v debug, -vv trace). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a forest on the synthetic gesture corpus and write a model file.
    Train(TrainArgs),
    /// Repeated stratified k-fold cross-validation on the synthetic corpus.
    Evaluate(EvaluateArgs),
    /// Run the agent: OSC over UDP, framed-JSON bridge, HTTP API.
    Serve(ServeArgs),
    /// Drive a running agent with scripted bot performers over OSC.
    Simulate(SimulateArgs),
    /// Print a running agent's session status.
    Status(StatusArgs),
    /// Re-run a session log through the analysis pipeline.
    Replay(ReplayArgs),
    /// Measure tick time against ensemble size.
    Profile(ProfileArgs),
    /// Render a session log as an SVG gesture timeline.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct ForestArgs {
    /// Trees in the forest.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u32).range(1..))]
    trees: u32,
    /// Features tried at each split.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..=7))]
    max_features: u32,
    /// Smallest node that may be split.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(2..))]
    min_samples_split: u32,
    /// Depth limit [default: unlimited].
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    max_depth: Option<u32>,
}

impl ForestArgs {
    fn params(&self, seed: u64) -> ForestParams {
        ForestParams {
            tree_count: self.trees as usize,
            max_features: self.max_features as usize,
            min_samples_split: self.min_samples_split as usize,
            max_depth: self.max_depth.map(|d| d as usize),
            rng_seed: seed,
        }
    }
}

#[derive(Debug, Args)]
struct CorpusArgs {
    /// Seconds of synthesized touch data per gesture class.
    #[arg(long, default_value_t = 60, value_parser = clap::value_parser!(u32).range(10..))]
    corpus_seconds: u32,
    /// Seed for corpus synthesis and training.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Read the corpus from a file written by `train --corpus-out` instead.
    #[arg(long)]
    corpus: Option<PathBuf>,
}

impl CorpusArgs {
    fn load(&self) -> Result<Vec<LabeledExample>> {
        match &self.corpus {
            Some(path) => {
                let f = File::open(path)
                    .with_context(|| format!("opening corpus {}", path.display()))?;
                Ok(import_corpus(BufReader::new(f))?)
            }
            None => Ok(build_corpus(self.corpus_seconds, self.seed)?),
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    forest: ForestArgs,
    /// Model file to write.
    #[arg(long, default_value = "model.mtcf")]
    out: PathBuf,
    /// Also write the feature vectors used for training.
    #[arg(long)]
    corpus_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    forest: ForestArgs,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(2..))]
    folds: u32,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..))]
    repeats: u32,
    /// Permute the labels first (chance-level control).
    #[arg(long)]
    shuffle_labels: bool,
    /// Print the confusion matrix too.
    #[arg(long)]
    confusion: bool,
    /// Print the full report as JSON instead.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Address to listen on.
    #[arg(long, default_value = "0.0.0.0")]
    bind: IpAddr,
    #[arg(long, default_value_t = DEFAULT_OSC_PORT)]
    osc_port: u16,
    /// Framed-JSON bridge port; 0 picks a free port.
    #[arg(long, default_value_t = DEFAULT_BRIDGE_PORT)]
    bridge_port: u16,
    /// HTTP API port; 0 picks a free port.
    #[arg(long, default_value_t = DEFAULT_HTTP_PORT)]
    http_port: u16,
    #[arg(long)]
    no_bridge: bool,
    #[arg(long)]
    no_http: bool,
    /// Model file written by `train`.
    #[arg(long, default_value = "model.mtcf")]
    model: PathBuf,
    #[arg(long, default_value_t = 0.15)]
    flux_threshold: f64,
    /// Minimum seconds between new-idea messages.
    #[arg(long, default_value_t = 60.0)]
    rate_limit: f64,
    /// Flux comparison window in seconds.
    #[arg(long, default_value_t = 15.0)]
    flux_window: f64,
    /// Feature window in seconds.
    #[arg(long, default_value_t = 5.0)]
    window: f64,
    /// Session seconds per wall second (testing aid).
    #[arg(long, default_value_t = 1.0)]
    clock_rate: f64,
    /// Session log directory.
    #[arg(long, env = LOG_DIR_ENV, default_value = "logs")]
    log_dir: PathBuf,
    #[arg(long)]
    no_log: bool,
    #[arg(long)]
    session_id: Option<String>,
    /// Stop after this many session seconds [default: run until interrupted].
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Number of bot performers.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..=256))]
    performers: u32,
    /// Scenario name (steady, new-idea, repeated) or a JSON file of bot scripts.
    #[arg(long, default_value = "new-idea")]
    script: String,
    /// Scenario length in seconds (ignored for script files).
    #[arg(long, default_value_t = 180.0)]
    seconds: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Agent OSC address.
    #[arg(long, default_value = "127.0.0.1:9000")]
    server: SocketAddr,
    /// Match the agent's --clock-rate.
    #[arg(long, default_value_t = 1.0)]
    time_scale: f64,
    /// Write the generated scripts as JSON and exit without connecting.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StatusArgs {
    /// Agent HTTP address.
    #[arg(long, default_value = "127.0.0.1:9080")]
    http: SocketAddr,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[arg(long)]
    log: PathBuf,
    /// Playback rate; 0 runs as fast as possible.
    #[arg(long, default_value_t = 0.0)]
    speed: f64,
    /// Override the logged flux threshold.
    #[arg(long)]
    threshold: Option<f64>,
    /// Override the logged rate limit.
    #[arg(long)]
    rate_limit: Option<f64>,
    /// Model file [default: the one named in the log header].
    #[arg(long)]
    model: Option<PathBuf>,
    /// Write the replayed ticks as JSON lines.
    #[arg(long)]
    ticks_out: Option<PathBuf>,
    /// Exit with an error if gestures or new ideas differ from the log.
    #[arg(long)]
    check: bool,
}

#[derive(Debug, Args)]
struct ProfileArgs {
    /// Largest ensemble in the sweep 1, 2, 4, 8, 16, 25.
    #[arg(long, default_value_t = 25, value_parser = clap::value_parser!(u32).range(0..=1000))]
    max_performers: u32,
    /// Session seconds simulated per ensemble size.
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u32).range(6..))]
    seconds: u32,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Model file [default: train the reference model in memory].
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long, default_value = "session.svg")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    init_tracing(cli.verbose);
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn init_tracing(verbose: u8) {
    let default = match verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Serve(a) => runtime()?.block_on(cmd_serve(a)),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Status(a) => runtime()?.block_on(cmd_status(a)),
        Command::Replay(a) => cmd_replay(a),
        Command::Profile(a) => cmd_profile(a),
        Command::Plot(a) => cmd_plot(a),
    }
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?)
}

fn read_model(path: &Path) -> Result<ForestModel> {
    let bytes =
        std::fs::read(path).with_context(|| format!("cannot read model {}", path.display()))?;
    load_model(&bytes).with_context(|| format!("cannot load model {}", path.display()))
}

fn read_session_log(path: &Path) -> Result<SessionLog> {
    let f = File::open(path).with_context(|| format!("cannot open log {}", path.display()))?;
    read_log(BufReader::new(f)).with_context(|| format!("in {}", path.display()))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let corpus = a.corpus.load()?;
    let model = train(&corpus, &a.forest.params(a.corpus.seed))?;
    std::fs::write(&a.out, save_model(&model))
        .with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(path) = &a.corpus_out {
        let f = File::create(path).with_context(|| format!("writing {}", path.display()))?;
        let mut w = BufWriter::new(f);
        export_corpus(&corpus, &mut w)?;
        w.flush()?;
    }
    println!(
        "trained {} trees on {} vectors -> {}",
        model.trees().len(),
        corpus.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let mut corpus = a.corpus.load()?;
    if a.shuffle_labels {
        corpus = shuffle_labels(&corpus, a.corpus.seed);
    }
    let report = cross_validate(
        &corpus,
        a.folds as usize,
        a.repeats as usize,
        &a.forest.params(a.corpus.seed),
    )?;
    if a.json {
        println!("{}", serde_json_line(&report)?);
        return Ok(());
    }
    println!("{}", report.table_row());
    if a.confusion {
        let codes: Vec<String> = ensemble_core::GestureClass::ALL
            .iter()
            .map(|g| format!("{:>5}", g.code()))
            .collect();
        println!("truth\\pred {}", codes.join(""));
        for (g, row) in ensemble_core::GestureClass::ALL
            .iter()
            .zip(report.confusion.iter())
        {
            let cells: Vec<String> = row.iter().map(|c| format!("{c:>5}")).collect();
            println!("{:>10} {}", g.code(), cells.join(""));
        }
    }
    Ok(())
}

fn serde_json_line<T: serde::Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string(value)?)
}

async fn cmd_serve(a: ServeArgs) -> Result<()> {
    let session = SessionConfig {
        window_secs: a.window,
        flux: FluxConfig {
            window_len: a.flux_window,
            threshold: a.flux_threshold,
            rate_limit: a.rate_limit,
        },
    };
    let config = ServerConfig {
        osc_addr: SocketAddr::new(a.bind, a.osc_port),
        bridge_addr: (!a.no_bridge).then(|| SocketAddr::new(a.bind, a.bridge_port)),
        http_addr: (!a.no_http).then(|| SocketAddr::new(a.bind, a.http_port)),
        session,
        clock_rate: a.clock_rate,
        log_dir: (!a.no_log).then(|| a.log_dir.clone()),
        session_id: a.session_id.clone(),
        model_path: Some(a.model.display().to_string()),
    };
    config.validate()?;
    if let Some(d) = a.duration {
        if !(d > 0.0) {
            bail!("--duration must be positive");
        }
    }
    let model = Arc::new(read_model(&a.model)?);
    let server = ensemble_server::start(config, model).await?;
    let show = |a: Option<SocketAddr>| a.map_or("off".to_string(), |a| a.to_string());
    println!(
        "listening osc={} bridge={} http={} log={}",
        server.osc_addr,
        show(server.bridge_addr),
        show(server.http_addr),
        server
            .log_path
            .as_ref()
            .map_or("off".into(), |p| p.display().to_string())
    );
    let _ = std::io::stdout().flush();
    match a.duration {
        Some(d) => {
            let wall = std::time::Duration::from_secs_f64(d / a.clock_rate);
            tokio::select! {
                _ = tokio::time::sleep(wall) => {}
                _ = tokio::signal::ctrl_c() => {}
            }
        }
        None => {
            tokio::signal::ctrl_c().await?;
        }
    }
    let summary = server.shutdown().await?;
    println!(
        "session {} closed: {} ticks, {} new ideas, {} overruns, {} malformed packets",
        summary.session_id,
        summary.ticks,
        summary.new_ideas,
        summary.overruns,
        summary.counters.malformed_packets
    );
    Ok(())
}

fn load_scripts(a: &SimulateArgs) -> Result<Vec<BotScript>> {
    if a.script.ends_with(".json") {
        let text =
            std::fs::read_to_string(&a.script).with_context(|| format!("reading {}", a.script))?;
        let scripts: Vec<BotScript> =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", a.script))?;
        for s in &scripts {
            s.validate()?;
        }
        return Ok(scripts);
    }
    let kind: ScenarioKind = a.script.parse()?;
    if !(a.seconds > 0.0) {
        bail!("--seconds must be positive");
    }
    Ok(scenario(kind, a.performers as usize, a.seconds, a.seed))
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    if !(a.time_scale > 0.0) {
        bail!("--time-scale must be positive");
    }
    let scripts = load_scripts(&a)?;
    if let Some(path) = &a.dump {
        std::fs::write(path, serde_json::to_string_pretty(&scripts)?)?;
        println!("wrote {} bot scripts to {}", scripts.len(), path.display());
        return Ok(());
    }
    let options = BotOptions {
        time_scale: a.time_scale,
        ..Default::default()
    };
    let logs = runtime()?.block_on(run_bots(a.server, scripts, options))?;
    for log in &logs {
        let last = log
            .gestures()
            .last()
            .map(|(_, id, p)| format!("{id} ({p:.2})"))
            .unwrap_or_else(|| "-".into());
        println!(
            "{}: sent {} messages, {} gestures back, last {}",
            log.performer_id,
            log.sent,
            log.gestures().count(),
            last
        );
    }
    let ideas: Vec<String> = logs
        .first()
        .map(|l| l.new_ideas().map(|t| format!("{t:.0}")).collect())
        .unwrap_or_default();
    println!("new ideas at: [{}]", ideas.join(", "));
    Ok(())
}

async fn cmd_status(a: StatusArgs) -> Result<()> {
    let status = ApiClient::for_addr(a.http).session().await?;
    println!("{}", serde_json::to_string_pretty(&status)?);
    Ok(())
}

fn cmd_replay(a: ReplayArgs) -> Result<()> {
    let log = read_session_log(&a.log)?;
    let model_path = match (
        &a.model,
        log.header.as_ref().and_then(|h| h.model_path.clone()),
    ) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => PathBuf::from(p),
        (None, None) if log.header.is_none() => PathBuf::new(),
        (None, None) => bail!("the log does not name its model; pass --model"),
    };
    let model = if log.header.is_none() {
        // nothing to replay; any model will do
        Arc::new(train(
            &build_corpus(10, 0)?,
            &ForestParams {
                tree_count: 1,
                ..ForestParams::default()
            },
        )?)
    } else {
        Arc::new(read_model(&model_path)?)
    };
    let options = ReplayOptions {
        speed: a.speed,
        threshold: a.threshold,
        rate_limit: a.rate_limit,
    };
    let mut out = match &a.ticks_out {
        Some(p) => Some(BufWriter::new(
            File::create(p).with_context(|| format!("writing {}", p.display()))?,
        )),
        None => None,
    };
    let mut write_err = None;
    let outcome = replay(&log, model, options, |tick| {
        if let Some(w) = out.as_mut() {
            if let Err(e) = serde_json_line(tick).and_then(|l| Ok(writeln!(w, "{l}")?)) {
                write_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    if let Some(mut w) = out {
        w.flush()?;
    }
    if !outcome.model_matches {
        eprintln!("warning: model differs from the one recorded in the log");
    }
    let replayed = new_idea_times(&outcome.ticks);
    let logged = log.new_idea_times();
    let same_gestures = gesture_sequences(&outcome.ticks) == gesture_sequences(log.ticks());
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|t| format!("{t:.0}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    println!("replayed {} ticks", outcome.ticks.len());
    println!("new ideas (replay): [{}]", fmt(&replayed));
    println!("new ideas (logged): [{}]", fmt(&logged));
    println!(
        "gesture sequences match log: {}",
        if same_gestures { "yes" } else { "no" }
    );
    if a.check && (!same_gestures || replayed != logged) {
        return Err(anyhow!("replay differs from the recorded session"));
    }
    Ok(())
}

fn cmd_profile(a: ProfileArgs) -> Result<()> {
    let model = match &a.model {
        Some(p) => read_model(p)?,
        None => train(&build_corpus(60, 42)?, &ForestParams::with_seed(42))?,
    };
    let mut counts = vec![0];
    counts.extend(sweep(a.max_performers as usize));
    let report = profile(Arc::new(model), &counts, a.seconds, a.seed)?;
    if a.json {
        println!("{}", serde_json_line(&report)?);
        return Ok(());
    }
    println!(
        "{:>10} {:>7} {:>12} {:>12} {:>12}",
        "performers", "ticks", "mean (s)", "max (s)", "sd (s)"
    );
    for p in &report.points {
        println!(
            "{:>10} {:>7} {:>12.6} {:>12.6} {:>12.6}",
            p.performers, p.ticks, p.mean, p.max, p.std_dev
        );
    }
    println!(
        "fit: {:.6} s per performer + {:.6} s",
        report.slope, report.intercept
    );
    println!(
        "predicted tick at 25 performers: {:.6} s",
        report.predicted(25)
    );
    Ok(())
}

fn cmd_plot(a: PlotArgs) -> Result<()> {
    let log = read_session_log(&a.log)?;
    let ticks: Vec<_> = log.ticks().cloned().collect();
    let svg = ensemble_core::plot::render_svg(&ticks);
    std::fs::write(&a.out, &svg).with_context(|| format!("writing {}", a.out.display()))?;
    let lanes = gesture_sequences(&ticks).len();
    println!(
        "wrote {}: {} lanes, {} new-idea markers",
        a.out.display(),
        lanes,
        ticks.iter().filter(|t| t.new_idea).count()
    );
    Ok(())
}
