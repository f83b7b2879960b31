//! `slalom`: serve live sessions, drive headless bots, calibrate, analyze and render.

mod exit;

use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use slalom_core::analytics::calibrate::{calibrate, CalibrationRequest};
use slalom_core::analytics::{
    check_lifetime_targets, cons_gates, lifetime_experiment, render_sequence,
    render_session_circle, render_tiers, summary_table, LifetimeEnd, LifetimeReport, Segmentation,
};
use slalom_core::bots::{
    simulate, simulation_header, BotSpec, SimulationOptions, SimulationSummary,
};
use slalom_core::config::{config_path, Config};
use slalom_core::influence::PresetSize;
use slalom_core::log::{read_log, replay_log, LogWriter, ParsedLog, LOG_EXTENSION};
use slalom_server::{Server, ServerOptions, LOG_DIR_ENV};

use crate::exit::Outcome;

#[derive(Debug, Parser)]
#[command(
    name = "slalom",
    version,
    about = "Cartpole slalom with user-steered influences"
)]
struct Cli {
    /// Config file; falls back to $SLALOM_CONFIG, then the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Host live two-role sessions over WebSocket.
    Serve(ServeArgs),
    /// Play headless sessions with a scripted influencer.
    Simulate(SimulateArgs),
    /// Summarize session logs as a table.
    Analyze(AnalyzeArgs),
    /// Draw logs as SVG.
    Render(RenderArgs),
    /// Search for parameters meeting the lifetime targets.
    Calibrate(CalibrateArgs),
    /// Run the static-preset lifetime experiment.
    Lifetime(LifetimeArgs),
    /// Re-run a log from its header and report the first divergence.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// Ticks per second; defaults to 1/dt.
    #[arg(long)]
    tick_rate: Option<f64>,
    #[arg(long, env = LOG_DIR_ENV, default_value = "logs")]
    log_dir: PathBuf,
    /// Sessions created without a seed use seed + n.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// static[:preset], size-balancer, escort or random:<seed>.
    #[arg(long, default_value = "static")]
    bot: String,
    /// Preset for a bare `static` bot.
    #[arg(long, default_value = "medium")]
    preset: PresetSize,
    #[arg(long, default_value_t = 1)]
    level: u32,
    /// First seed; trial i uses seed + i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    trials: u32,
    /// Simulated seconds of play per trial, after the demo.
    #[arg(long, default_value_t = 60.0)]
    duration: f64,
    #[arg(long, default_value_t = 0)]
    hands_free: u32,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Directory for the logs.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// One JSON summary per line instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Log files, or directories searched for *.paclog.
    #[arg(required = true)]
    paths: Vec<PathBuf>,
    #[arg(long, default_value = "merge-wins")]
    segmentation: Segmentation,
    /// Also write the table as CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print CSV instead of aligned text.
    #[arg(long)]
    csv: bool,
    /// Print each session's trials after the table.
    #[arg(long)]
    trials: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RenderKind {
    Circle,
    Sequence,
    Tiers,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(required = true)]
    paths: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "circle")]
    kind: RenderKind,
    #[arg(long, default_value = "merge-wins")]
    segmentation: Segmentation,
    /// Output file (circle with several logs: output directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[arg(long, alias = "search-seed", default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 3000)]
    budget: u32,
    #[arg(long, default_value_t = 10)]
    trials: u32,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Where to write the config; defaults to --config, $SLALOM_CONFIG or ./slalom.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LifetimeArgs {
    /// One condition; all four when omitted.
    #[arg(long)]
    preset: Option<PresetSize>,
    #[arg(long)]
    trials: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    path: PathBuf,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::SUCCESS),
        Err(err) => {
            eprintln!("error: {}", describe(&err));
            ExitCode::from(exit::code_for(&err))
        }
    }
}

/// The error chain joined by ": ", skipping causes already quoted by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if out.contains(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}

fn run(cli: Cli) -> Result<()> {
    let config = Config::resolve(cli.config.as_deref())?;
    match cli.command {
        Cmd::Serve(a) => serve(config, a),
        Cmd::Simulate(a) => simulate_cmd(&config, a),
        Cmd::Analyze(a) => analyze(a),
        Cmd::Render(a) => render(a),
        Cmd::Calibrate(a) => calibrate_cmd(&config, cli.config.as_deref(), a),
        Cmd::Lifetime(a) => lifetime(&config, a),
        Cmd::Replay(a) => replay(a),
    }
}

fn serve(config: Config, a: ServeArgs) -> Result<()> {
    let runtime = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    runtime.block_on(async move {
        let mut options = ServerOptions::new(a.bind, a.log_dir.clone(), config);
        options.tick_rate = a.tick_rate;
        options.base_seed = a.seed;
        let server = Server::bind(options).await?;
        println!(
            "listening on {} (logs in {}, seed {})",
            server.local_addr()?,
            a.log_dir.display(),
            a.seed
        );
        server.run(shutdown_signal()).await?;
        Ok(())
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}

fn bot_spec(bot: &str, preset: PresetSize) -> Result<BotSpec> {
    if bot == "static" {
        return Ok(BotSpec::Static { preset });
    }
    bot.parse()
        .map_err(|e| Outcome::Invalid(format!("--bot: {e}")).into())
}

fn simulate_cmd(config: &Config, a: SimulateArgs) -> Result<()> {
    config.require_calibrated()?;
    let bot = bot_spec(&a.bot, a.preset)?;
    config.level(a.level)?;
    if !(a.duration.is_finite() && a.duration > 0.0) {
        return Err(Outcome::Invalid("--duration must be positive".into()).into());
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let seeds: Vec<u64> = (0..u64::from(a.trials))
        .map(|i| a.seed.wrapping_add(i))
        .collect();
    let run_one = |seed: u64| -> Result<(SimulationSummary, PathBuf)> {
        let options = SimulationOptions {
            base_seed: seed,
            level: a.level,
            duration_s: a.duration,
            hands_free_games: a.hands_free,
        };
        let id = format!("{}-level{}-seed{seed}", bot.name(), a.level);
        let path = a.out.join(format!("{id}.{LOG_EXTENSION}"));
        let mut log = LogWriter::create(&path, &simulation_header(config, &bot, &options, &id))?;
        let summary = simulate(config, &bot, &options, &mut log)?;
        Ok((summary, path))
    };

    let jobs = a.jobs.max(1);
    let mut results = Vec::with_capacity(seeds.len());
    for chunk in seeds.chunks(jobs) {
        let batch: Vec<Result<(SimulationSummary, PathBuf)>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&s| scope.spawn(move || run_one(s)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("simulation worker panicked"))
                .collect()
        });
        for r in batch {
            results.push(r?);
        }
    }

    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (s, path) in &results {
        if a.json {
            let mut v = serde_json::to_value(s)?;
            v["log"] = serde_json::Value::String(path.display().to_string());
            writeln!(out, "{v}")?;
        } else {
            let influence = s
                .attribution
                .map_or_else(|| "-".to_string(), |x| format!("{:.2}%", x.influence_pct));
            writeln!(
                out,
                "seed {}  bot {}  steps {}  games {} (won {}, lost {})  passed {}  failed {}  best {}  level {}  influence {}  log {}",
                s.base_seed,
                s.bot,
                s.steps,
                s.games,
                s.won,
                s.lost,
                s.passed,
                s.failed,
                s.best_score,
                s.final_level,
                influence,
                path.display()
            )?;
        }
    }
    Ok(())
}

fn collect_logs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("reading {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == LOG_EXTENSION))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(Outcome::Invalid("no logs found".into()).into());
    }
    Ok(files)
}

fn load_logs(paths: &[PathBuf]) -> Result<Vec<ParsedLog>> {
    collect_logs(paths)?
        .iter()
        .map(|p| read_log(p).with_context(|| format!("reading {}", p.display())))
        .collect()
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let logs = load_logs(&a.paths)?;
    let table = summary_table(&logs, a.segmentation);
    let csv = table.to_csv()?;
    if let Some(out) = &a.out {
        fs::write(out, &csv).with_context(|| format!("writing {}", out.display()))?;
    }
    let mut text = if a.csv { csv } else { table.to_text() };
    if a.trials {
        for log in &logs {
            let b = cons_gates(log, a.segmentation);
            text.push_str(&format!(
                "\n{} (seed {}):",
                log.header.session_id,
                seed_text(log)
            ));
            for (i, t) in b.trials.iter().enumerate() {
                text.push_str(&format!(
                    "\n  trial {:>3}: {:>3} gates, {:?}",
                    i + 1,
                    t.gates_passed,
                    t.end
                ));
            }
            text.push('\n');
        }
    }
    print!("{text}");
    Ok(())
}

fn seed_text(log: &ParsedLog) -> String {
    log.header
        .base_seed
        .map_or_else(|| "-".to_string(), |s| s.to_string())
}

fn render(a: RenderArgs) -> Result<()> {
    let files = collect_logs(&a.paths)?;
    let logs = load_logs(&a.paths)?;
    let seeds: Vec<String> = logs.iter().map(seed_text).collect();
    let written: Vec<(PathBuf, String)> = match a.kind {
        RenderKind::Circle if logs.len() == 1 => {
            let out = a
                .out
                .clone()
                .unwrap_or_else(|| default_svg(&files[0], "circle"));
            vec![(out, render_session_circle(&logs[0]))]
        }
        RenderKind::Circle => {
            let dir = a.out.clone().unwrap_or_else(|| PathBuf::from("."));
            fs::create_dir_all(&dir)?;
            files
                .iter()
                .zip(&logs)
                .map(|(f, l)| (dir.join(default_svg(f, "circle")), render_session_circle(l)))
                .collect()
        }
        RenderKind::Sequence => vec![(
            a.out.clone().unwrap_or_else(|| "sequence.svg".into()),
            render_sequence(&logs),
        )],
        RenderKind::Tiers => vec![(
            a.out.clone().unwrap_or_else(|| "tiers.svg".into()),
            render_tiers(&logs, a.segmentation),
        )],
    };
    for (path, svg) in &written {
        fs::write(path, svg).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {} (seeds {})", path.display(), seeds.join(","));
    }
    Ok(())
}

fn default_svg(log: &Path, kind: &str) -> PathBuf {
    let stem = log
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("session");
    PathBuf::from(format!("{stem}-{kind}.svg"))
}

fn calibrate_cmd(base: &Config, explicit: Option<&Path>, a: CalibrateArgs) -> Result<()> {
    let mut request = CalibrationRequest::new(a.seed, a.budget);
    request.trials = a.trials;
    request.jobs = a.jobs;
    let report = calibrate(base, &request)?;
    print!("{}", report.to_text());
    let Some(config) = &report.config else {
        return Err(Outcome::TargetsUnmet(
            "calibration evaluated no candidates; no config written".into(),
        )
        .into());
    };
    let out = a
        .out
        .or_else(|| config_path(explicit))
        .unwrap_or_else(|| PathBuf::from("slalom.json"));
    config.save(&out)?;
    println!("wrote {}", out.display());
    if report.targets_met {
        Ok(())
    } else {
        Err(Outcome::TargetsUnmet(format!(
            "targets not met within budget {} (search seed {})",
            a.budget, a.seed
        ))
        .into())
    }
}

fn lifetime_text(r: &LifetimeReport, intensity: f64) -> String {
    let cum: Vec<String> = r
        .cumulative_averages
        .iter()
        .map(|c| format!("{c:.2}"))
        .collect();
    format!(
        "{:<6}  intensity {:.3}  mean {:>6.2} s  exits {:>2}  falls {:>2}  capped {:>2}  seed {}  cumulative [{}]",
        r.condition.name(),
        intensity,
        r.mean(),
        r.count(LifetimeEnd::Exit),
        r.count(LifetimeEnd::Fall),
        r.count(LifetimeEnd::Capped),
        r.base_seed,
        cum.join(", ")
    )
}

fn lifetime(config: &Config, a: LifetimeArgs) -> Result<()> {
    let trials = a.trials.unwrap_or(config.lifetime.trials);
    let seed = a.seed.unwrap_or(config.lifetime.base_seed);
    let conditions: Vec<PresetSize> = a
        .preset
        .map_or_else(|| PresetSize::ALL.to_vec(), |p| vec![p]);
    let mut reports = Vec::new();
    for &c in &conditions {
        let r = lifetime_experiment(config, c, trials, seed)?;
        if a.json {
            println!("{}", serde_json::to_string(&r)?);
        } else {
            println!("{}", lifetime_text(&r, config.presets.intensity(c)));
        }
        reports.push(r);
    }
    if let [none, small, medium, big] = reports.as_slice() {
        let checks = check_lifetime_targets(none, small, medium, big);
        for c in &checks {
            if !a.json {
                println!(
                    "[{}] {} ({})",
                    if c.met { "ok" } else { "FAIL" },
                    c.name,
                    c.detail
                );
            }
        }
        if checks.iter().any(|c| !c.met) {
            return Err(Outcome::TargetsUnmet("lifetime targets not met".into()).into());
        }
    }
    Ok(())
}

fn replay(a: ReplayArgs) -> Result<()> {
    let log = read_log(&a.path).with_context(|| format!("reading {}", a.path.display()))?;
    let outcome = replay_log(&log)?;
    match outcome.divergence {
        None => {
            println!(
                "{}: {} steps replay identically (seed {})",
                a.path.display(),
                outcome.regenerated.len(),
                seed_text(&log)
            );
            Ok(())
        }
        Some(d) => Err(Outcome::Invalid(format!("{}: {d}", a.path.display())).into()),
    }
}
