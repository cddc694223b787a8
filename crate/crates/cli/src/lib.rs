//! The `duelzero` command line. [`run`] takes the arguments and the
//! standard streams explicitly so that tests can drive every subcommand
//! in-process.

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use duelzero_core::data::DataError;
use duelzero_core::engine::SetupConfig;
use duelzero_core::nn::{load_model, Model, ModelConfig};
use duelzero_core::selfplay::{
    arena_match, derive_seed, read_records, run_pipeline, write_records, BootstrapKind, Contender, PipelineConfig,
    PipelineError,
};
use duelzero_core::variants::{coin_variant_winrate, variant_winrate, CoinVariant, DraftKind};
use duelzero_core::{analysis, ComponentDb, Engine};
use serde::{Deserialize, Serialize};
use thiserror::Error;

mod play;

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 0;

/// Saved next to a pipeline run so it can be resumed with the same settings.
pub const RUN_FILE: &str = "run.toml";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Parser)]
#[command(name = "duelzero", version, about = "Self-play engine for two-player 7 Wonders Duel")]
pub struct Cli {
    /// Base seed for every random choice (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Pipeline settings as TOML; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; overrides the config file.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Log filter, e.g. `info` or `duelzero_core=debug`. Logs go to stderr.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Component data checks.
    #[command(subcommand)]
    Data(DataCommand),
    /// Run the training pipeline from scratch (or continue the run in `--out`).
    Selfplay(SelfplayArgs),
    /// Continue a pipeline run with its saved settings.
    Train(TrainArgs),
    /// Play a match between two players.
    Arena(ArenaArgs),
    /// Statistics over a directory of game records.
    Analyze(AnalyzeArgs),
    /// First-player win rates under rule variants.
    Variants(VariantArgs),
    /// Play against the engine in the terminal.
    Play(PlayArgs),
    /// Run the game service over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum DataCommand {
    /// Load and validate a component document (the built-in one by default).
    Validate {
        #[arg(long)]
        file: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct SelfplayArgs {
    /// Run directory; overrides `checkpoint_dir` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Built-in settings used when no `--config` is given: toy or paper.
    #[arg(long, default_value = "toy")]
    pub preset: String,
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run directory, or a model file inside one.
    #[arg(long)]
    pub resume: PathBuf,
    /// New total number of iterations.
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ArenaArgs {
    /// A model file, `uniform` or `bootstrap:random|green|red`.
    #[arg(long)]
    pub a: String,
    #[arg(long)]
    pub b: String,
    #[arg(long)]
    pub games: Option<usize>,
    /// Simulations per move for search players.
    #[arg(long)]
    pub sims: Option<u32>,
    /// Starting coins, first player then second.
    #[arg(long, value_parser = parse_coins)]
    pub coins: Option<CoinVariant>,
    /// Write the report here as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the game records to this directory.
    #[arg(long)]
    pub records: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub records: PathBuf,
    /// JSON report; a text table goes next to it with a `.txt` extension.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VariantArgs {
    /// standard, v1, v2, v3 or coins.
    #[arg(long)]
    pub kind: String,
    /// Value network; without one an untrained network is used.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Setups to evaluate, or games per coin variant.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Simulations per move in coin-variant games.
    #[arg(long)]
    pub sims: Option<u32>,
    /// Coin variant as `first,second`; repeatable. Default 7,7.
    #[arg(long, value_parser = parse_coins)]
    pub coins: Vec<CoinVariant>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write coin-variant game records to this directory.
    #[arg(long)]
    pub records: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlayArgs {
    /// 1 to move first, 2 to move second.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub human_seat: u8,
    #[arg(long, default_value_t = 1000)]
    pub sims: u32,
    /// Engine network; uniform priors without one.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_parser = parse_coins)]
    pub coins: Option<CoinVariant>,
    /// Save the game record here when the game ends.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Directory of `*.dznn` models offered to clients.
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    /// Session logs; sessions are kept in memory only without it.
    #[arg(long)]
    pub sessions: Option<PathBuf>,
}

fn parse_coins(s: &str) -> Result<CoinVariant, String> {
    let (a, b) = s.split_once(',').ok_or("expected `first,second`")?;
    let n = |x: &str| x.trim().parse::<u32>().map_err(|e| format!("bad coin count `{x}`: {e}"));
    Ok(CoinVariant::new(n(a)?, n(b)?))
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("component data: {0}")]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("records: {0}")]
    Records(String),
    #[error("model: {0}")]
    Model(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    /// Process exit code. 2 is also what argument errors exit with.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::Data(_) => 4,
            CliError::Io { .. } => 5,
            CliError::Records(_) => 6,
            CliError::Model(_) => 7,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Network(e) => CliError::Model(e.to_string()),
            PipelineError::Record(e) => CliError::Records(e.to_string()),
            PipelineError::Io(e) => CliError::Io { path: PathBuf::new(), source: e },
            PipelineError::Config(m) => CliError::Config(m),
            PipelineError::Empty => CliError::Records("no training examples".into()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, contents).map_err(io_err(path))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("reports serialize") + "\n"
}

/// Parse `args` (program name first) and run the command. Returns the
/// process exit code.
pub fn run<I, T>(args: I, input: &mut dyn BufRead, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if e.use_stderr() {
                eprint!("{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    if let Err(e) = init_logging(&cli.log_level) {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    match dispatch(&cli, input, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(level: &str) -> CliResult<()> {
    let filter = tracing_subscriber::EnvFilter::try_new(level)
        .map_err(|e| CliError::Usage(format!("bad --log-level `{level}`: {e}")))?;
    // A second call in the same process (tests) keeps the first subscriber.
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
    Ok(())
}

fn dispatch(cli: &Cli, input: &mut dyn BufRead, out: &mut dyn Write) -> CliResult<()> {
    let engine = Engine::default();
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    match &cli.command {
        Command::Data(DataCommand::Validate { file }) => data_validate(file.as_deref(), out),
        Command::Selfplay(a) => selfplay(&engine, cli, a, out),
        Command::Train(a) => train(&engine, cli, a, out),
        Command::Arena(a) => arena(&engine, cli, a, seed, out),
        Command::Analyze(a) => analyze(&engine, a, out),
        Command::Variants(a) => variants(&engine, cli, a, seed, out),
        Command::Play(a) => play::play(&engine, a, seed, input, out),
        Command::Serve(a) => serve(engine, a, seed),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes()).map_err(io_err(Path::new("<stdout>")))
}

fn data_validate(file: Option<&Path>, out: &mut dyn Write) -> CliResult<()> {
    let summary = match file {
        Some(p) => ComponentDb::load(p)?.summary(),
        None => ComponentDb::base().summary(),
    };
    emit(out, &format!("ok: {summary}\n"))
}

/// Settings with precedence flags > `--config` file > `base`.
fn effective_config(cli: &Cli, base: PipelineConfig) -> CliResult<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            let file: toml::Table = text.parse().map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            let mut merged = toml::Table::try_from(&base).expect("config serializes");
            merge(&mut merged, file);
            PipelineConfig::from_toml(&merged.to_string())?
        }
        None => base,
    };
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    Ok(cfg)
}

/// Overlay `top` on `base`, recursing into tables.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn log_config(cfg: &PipelineConfig, seed: u64) {
    tracing::info!("seed {seed}, effective config:\n{}", cfg.to_toml());
}

/// Contents of [`RUN_FILE`].
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunFile {
    seed: u64,
    config: PipelineConfig,
}

/// [`duelzero_core::selfplay::PipelineSummary`] with paths relative to the
/// run directory, so two runs with the same settings write the same bytes.
#[derive(Debug, Serialize, Deserialize)]
struct RunSummary {
    seed: u64,
    iterations_completed: usize,
    final_model: PathBuf,
    holdout_value_mse: f64,
    zero_baseline_mse: f64,
}

fn run_pipeline_in(engine: &Engine, dir: &Path, mut cfg: PipelineConfig, seed: u64, out: &mut dyn Write) -> CliResult<()> {
    cfg.validate()?;
    // The saved copy names the run directory relatively.
    cfg.checkpoint_dir = PathBuf::from(".");
    let run = RunFile { seed, config: cfg.clone() };
    write_file(&dir.join(RUN_FILE), &toml::to_string(&run).expect("run file serializes"))?;
    cfg.checkpoint_dir = dir.to_path_buf();
    log_config(&cfg, seed);
    let s = run_pipeline(engine, &cfg, seed)?;
    let summary = RunSummary {
        seed,
        iterations_completed: s.iterations_completed,
        final_model: s.final_model.strip_prefix(dir).map(Path::to_path_buf).unwrap_or(s.final_model),
        holdout_value_mse: s.holdout_value_mse,
        zero_baseline_mse: s.zero_baseline_mse,
    };
    let json = to_json(&summary);
    write_file(&dir.join(SUMMARY_FILE), &json)?;
    emit(out, &json)
}

fn selfplay(engine: &Engine, cli: &Cli, a: &SelfplayArgs, out: &mut dyn Write) -> CliResult<()> {
    let base = PipelineConfig::preset(&a.preset)
        .ok_or_else(|| CliError::Usage(format!("unknown preset `{}` (toy or paper)", a.preset)))?;
    let mut cfg = effective_config(cli, base)?;
    if let Some(n) = a.iterations {
        cfg.iterations = n;
    }
    let dir = a.out.clone().unwrap_or_else(|| cfg.checkpoint_dir.clone());
    run_pipeline_in(engine, &dir, cfg, cli.seed.unwrap_or(DEFAULT_SEED), out)
}

fn train(engine: &Engine, cli: &Cli, a: &TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    let dir = if a.resume.is_file() {
        a.resume.parent().map(Path::to_path_buf).unwrap_or_default()
    } else {
        a.resume.clone()
    };
    let path = dir.join(RUN_FILE);
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let saved: RunFile = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut cfg = effective_config(cli, saved.config)?;
    if let Some(n) = a.iterations {
        cfg.iterations = n;
    }
    run_pipeline_in(engine, &dir, cfg, cli.seed.unwrap_or(saved.seed), out)
}

/// A model file, `uniform` or `bootstrap:<kind>`.
pub fn parse_contender(spec: &str, simulations: u32) -> CliResult<Contender> {
    if spec == "uniform" {
        return Ok(Contender::UniformSearch { simulations });
    }
    if let Some(kind) = spec.strip_prefix("bootstrap:") {
        return BootstrapKind::parse(kind)
            .map(Contender::Bootstrap)
            .ok_or_else(|| CliError::Usage(format!("unknown bootstrap policy `{kind}` (random, green or red)")));
    }
    let path = Path::new(spec);
    let model = load_model(path).map_err(|e| CliError::Model(format!("{spec}: {e}")))?;
    let label = path.file_stem().map_or_else(|| spec.to_string(), |s| s.to_string_lossy().into_owned());
    Ok(Contender::Model { model: Arc::new(model), simulations, label })
}

fn arena(engine: &Engine, cli: &Cli, a: &ArenaArgs, seed: u64, out: &mut dyn Write) -> CliResult<()> {
    let cfg = effective_config(cli, PipelineConfig::toy())?;
    let sims = a.sims.unwrap_or(cfg.arena_simulations);
    let games = a.games.unwrap_or(cfg.arena_games);
    if games == 0 || sims == 0 {
        return Err(CliError::Usage("--games and --sims must be at least 1".into()));
    }
    let (pa, pb) = (parse_contender(&a.a, sims)?, parse_contender(&a.b, sims)?);
    let setup = a.coins.map_or_else(SetupConfig::default, CoinVariant::setup);
    tracing::info!("arena: {} vs {}, {games} games, {sims} simulations, seed {seed}", pa.label(), pb.label());
    let (report, records) = arena_match(engine, &pa, &pb, games, &setup, seed, cfg.threads);
    if let Some(dir) = &a.records {
        write_records(dir, &records)?;
    }
    let json = to_json(&report);
    if let Some(p) = &a.out {
        write_file(p, &json)?;
    }
    emit(out, &json)
}

fn analyze(engine: &Engine, a: &AnalyzeArgs, out: &mut dyn Write) -> CliResult<()> {
    let records = read_records(&a.records).map_err(|e| match e {
        PipelineError::Io(source) => CliError::Io { path: a.records.clone(), source },
        other => other.into(),
    })?;
    if records.is_empty() {
        return Err(CliError::Records(format!("no *.jsonl records in {}", a.records.display())));
    }
    let report = analysis::stats_report(engine, &records).map_err(|e| CliError::Records(e.to_string()))?;
    let table = render_report(&report);
    if let Some(p) = &a.out {
        write_file(p, &to_json(&report))?;
        write_file(&p.with_extension("txt"), &table)?;
    }
    emit(out, &table)
}

fn render_report(r: &analysis::StatsReport) -> String {
    let mut s = format!(
        "{} games, mean length {:.1} decisions\nfirst player wins {:.3}, second {:.3}, draws {:.3}\n\n",
        r.games, r.mean_game_length, r.seats.first, r.seats.second, r.seats.draws
    );
    s.push_str(&analysis::render_comparison(&analysis::compare_with_reference(Some(r))));
    s.push_str("\nwonder preference\n");
    for w in &r.wonder_preference {
        s.push_str(&format!("  {:<24} {:>6.3}  ({} drafts)\n", w.wonder, w.score, w.appearances));
    }
    s.push_str("\nprogress token pick rate\n");
    for t in &r.token_ranking {
        let f = t.frequency.map_or_else(|| "-".to_string(), |f| format!("{f:.3}"));
        s.push_str(&format!("  {:<24} {:>6}  ({}/{})\n", t.token, f, t.picked, t.available));
    }
    s
}

fn variants(engine: &Engine, cli: &Cli, a: &VariantArgs, seed: u64, out: &mut dyn Write) -> CliResult<()> {
    let cfg = effective_config(cli, PipelineConfig::toy())?;
    let model = match &a.model {
        Some(p) => Some(load_model(p).map_err(|e| CliError::Model(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let failed = |e: duelzero_core::variants::VariantError| CliError::Failed(e.to_string());
    if a.kind == "coins" {
        let sims = a.sims.unwrap_or(cfg.arena_simulations);
        let player = match model {
            Some(m) => Contender::Model { model: Arc::new(m), simulations: sims, label: "model".into() },
            None => Contender::UniformSearch { simulations: sims },
        };
        let coins = if a.coins.is_empty() { vec![CoinVariant::standard()] } else { a.coins.clone() };
        let mut reports = Vec::new();
        for (i, &c) in coins.iter().enumerate() {
            let (rep, records) =
                coin_variant_winrate(engine, &player, c, a.n, derive_seed(seed, 5, i as u64), cfg.threads).map_err(failed)?;
            if let Some(dir) = &a.records {
                write_records(&dir.join(format!("coins_{}_{}", c.first, c.second)), &records)?;
            }
            emit(out, &format!("coins {},{}: first player score {:.3} over {} games\n", c.first, c.second, rep.first_score, rep.games))?;
            reports.push(rep);
        }
        if let Some(p) = &a.out {
            write_file(p, &to_json(&reports))?;
        }
        return Ok(());
    }
    let kind = DraftKind::parse(&a.kind)
        .ok_or_else(|| CliError::Usage(format!("unknown variant `{}` (standard, v1, v2, v3 or coins)", a.kind)))?;
    let model = match model {
        Some(m) => m,
        None => {
            tracing::warn!("no --model given; values come from an untrained network");
            Model::<f32>::new(ModelConfig::toy(), derive_seed(seed, 11, 0)).map_err(|e| CliError::Model(e.to_string()))?
        }
    };
    let rep = variant_winrate(engine, &model, kind, a.n, seed, cfg.threads).map_err(failed)?;
    if let Some(p) = &a.out {
        write_file(p, &to_json(&rep))?;
    }
    emit(
        out,
        &format!("{}: reference player win probability {:.3} ± {:.3} over {} setups\n", kind.name(), rep.mean, rep.std_error, a.n),
    )
}

fn serve(engine: Engine, a: &ServeArgs, seed: u64) -> CliResult<()> {
    use duelzero_service::{Checkpoints, Manager};
    let manager = Manager::new(engine, Checkpoints::new(a.checkpoints.clone()), a.sessions.clone(), seed)
        .map_err(|e| CliError::Failed(e.to_string()))?;
    let rt = tokio::runtime::Runtime::new().map_err(io_err(Path::new("<runtime>")))?;
    rt.block_on(duelzero_service::serve(a.addr, Arc::new(manager)))
        .map_err(|e| CliError::Failed(format!("server on {}: {e}", a.addr)))
}
