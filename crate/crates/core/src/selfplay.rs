//! Training pipeline: rule-based bootstrap games, value pretraining,
//! self-play iterations with search, a game-level replay buffer and
//! periodic retraining, plus arena matches between players.

use std::collections::VecDeque;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Color;
use crate::encode::{action_index, encode, legal_indices};
use crate::engine::{
    replay, run_game, Action, Decision, Engine, Event, GameRecord, GameState, Player, Policy, RecordError,
    SetupConfig, Slot, VictoryType,
};
use crate::mcts::{NetEvaluator, SearchConfig, SearchPolicy, UniformEvaluator};
use crate::nn::{
    evaluate_loss, load_model, save_model, train_step, Adam, LossReport, Model, ModelConfig, NnError, TrainConfig,
    TrainingExample,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Network(#[from] NnError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error("no training examples")]
    Empty,
}

/// Mix a base seed with a stream tag and an index (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Map `f` over `items` on up to `threads` threads; output keeps input order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(usize, &T) -> R + Sync) -> Vec<R> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().enumerate().map(|(i, x)| f(i, x)).collect();
    }
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(i, &items[i]);
                out.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });
    out.into_inner().expect("no poisoned workers").into_iter().map(|r| r.expect("every item mapped")).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapKind {
    RandomPreferNotDiscard,
    GreenSeeker,
    RedSeeker,
}

impl BootstrapKind {
    pub const ALL: [BootstrapKind; 3] =
        [BootstrapKind::RandomPreferNotDiscard, BootstrapKind::GreenSeeker, BootstrapKind::RedSeeker];

    pub fn name(self) -> &'static str {
        match self {
            BootstrapKind::RandomPreferNotDiscard => "random",
            BootstrapKind::GreenSeeker => "green",
            BootstrapKind::RedSeeker => "red",
        }
    }

    pub fn parse(s: &str) -> Option<BootstrapKind> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// Rule-based player: random non-discard moves, optionally preferring to
/// build cards of one color.
pub struct BootstrapPolicy {
    pub kind: BootstrapKind,
    pub rng: ChaCha8Rng,
}

impl BootstrapPolicy {
    pub fn new(kind: BootstrapKind, seed: u64) -> BootstrapPolicy {
        BootstrapPolicy { kind, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

/// The bootstrap rule itself, over the legal actions.
pub fn bootstrap_action<R: Rng + ?Sized>(
    kind: BootstrapKind,
    engine: &Engine,
    state: &GameState,
    legal: &[Action],
    rng: &mut R,
) -> Action {
    let seek = match kind {
        BootstrapKind::RandomPreferNotDiscard => None,
        BootstrapKind::GreenSeeker => Some(Color::Green),
        BootstrapKind::RedSeeker => Some(Color::Red),
    };
    if let Some(color) = seek {
        let targets: Vec<Action> = legal
            .iter()
            .copied()
            .filter(|a| match *a {
                Action::Build(s) => {
                    matches!(state.slots[s as usize], Slot::Card(c) if engine.db().card(c).color == color)
                }
                _ => false,
            })
            .collect();
        if let Some(a) = targets.choose(rng) {
            return *a;
        }
    }
    let keep: Vec<Action> = legal.iter().copied().filter(|a| !matches!(a, Action::Discard(_))).collect();
    let pool = if keep.is_empty() { legal } else { &keep };
    *pool.choose(rng).expect("legal actions are non-empty")
}

impl Policy for BootstrapPolicy {
    fn name(&self) -> String {
        format!("bootstrap:{}", self.kind.name())
    }

    fn decide(&mut self, engine: &Engine, state: &GameState, legal: &[Action]) -> Decision {
        bootstrap_action(self.kind, engine, state, legal, &mut self.rng).into()
    }
}

/// Rule-based games with seat pairings drawn uniformly from the nine
/// ordered pairs. Game `i` depends only on `(seed, i)`.
pub fn generate_bootstrap_set(engine: &Engine, games: usize, seed: u64, threads: usize) -> Vec<GameRecord> {
    let ids: Vec<usize> = (0..games).collect();
    parallel_map(&ids, threads, |_, &i| {
        let game_seed = derive_seed(seed, 1, i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(game_seed);
        let a = *BootstrapKind::ALL.choose(&mut rng).unwrap();
        let b = *BootstrapKind::ALL.choose(&mut rng).unwrap();
        let mut p1 = BootstrapPolicy::new(a, rng.random());
        let mut p2 = BootstrapPolicy::new(b, rng.random());
        run_game(engine, &mut p1, &mut p2, &SetupConfig::default(), rng.random())
    })
}

/// One example per decision of `record`. The target value is the final
/// outcome for the player to move; the policy target is the recorded visit
/// distribution when `with_policy` is set and visits exist.
pub fn examples_from_record(
    engine: &Engine,
    record: &GameRecord,
    with_policy: bool,
) -> Result<Vec<TrainingExample>, PipelineError> {
    let states = replay(engine, record)?;
    let mut out = Vec::new();
    for (k, event) in record.events.iter().enumerate() {
        let Event::Action { visits, .. } = event else { continue };
        let s = &states[k];
        let legal = legal_indices(engine, s).map_err(|e| PipelineError::Record(RecordError::Replay(e)))?;
        let z = record.outcome.value_for(s.to_move);
        let policy = match visits {
            Some(v) if with_policy => visit_target(&legal, v)?,
            _ => None,
        };
        out.push(TrainingExample::new(
            encode(s),
            legal.iter().map(|&i| i as u16).collect(),
            z,
            policy,
        ));
    }
    Ok(out)
}

fn visit_target(legal: &[usize], visits: &[(Action, u32)]) -> Result<Option<Vec<f32>>, PipelineError> {
    let mut counts = vec![0u32; legal.len()];
    for &(a, n) in visits {
        let idx = action_index(a).map_err(|e| PipelineError::Config(e.to_string()))?;
        let Ok(pos) = legal.binary_search(&idx) else {
            return Err(PipelineError::Config(format!("visits on illegal action {a:?}")));
        };
        counts[pos] += n;
    }
    let total: u32 = counts.iter().sum();
    if total == 0 {
        return Ok(None);
    }
    Ok(Some(counts.iter().map(|&c| c as f32 / total as f32).collect()))
}

/// Mean squared error of always predicting 0.
pub fn zero_baseline_mse(examples: &[TrainingExample]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    examples.iter().map(|e| (e.value as f64).powi(2)).sum::<f64>() / examples.len() as f64
}

/// Examples stored per game; whole games are evicted oldest first.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    games: VecDeque<Vec<TrainingExample>>,
}

impl ReplayBuffer {
    pub fn new(capacity_games: usize) -> ReplayBuffer {
        ReplayBuffer { capacity: capacity_games.max(1), games: VecDeque::new() }
    }

    pub fn push_game(&mut self, examples: Vec<TrainingExample>) {
        if self.games.len() == self.capacity {
            self.games.pop_front();
        }
        self.games.push_back(examples);
    }

    pub fn games(&self) -> usize {
        self.games.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn examples(&self) -> impl Iterator<Item = &TrainingExample> {
        self.games.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.games.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Examples of the `i`th oldest game.
    pub fn game(&self, i: usize) -> Option<&[TrainingExample]> {
        self.games.get(i).map(Vec::as_slice)
    }
}

/// Fixed number of passes over `examples` with a fresh optimizer. A set
/// smaller than one batch is sampled with replacement up to a full batch.
pub fn train_epochs(
    model: &mut Model<f32>,
    examples: &[TrainingExample],
    cfg: &TrainConfig,
    epochs: usize,
    seed: u64,
) -> Result<Vec<LossReport>, PipelineError> {
    if examples.is_empty() {
        return Err(PipelineError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 7, 0));
    let use_dropout = model.config().dropout > 0.0;
    let mut opt = Adam::new(model.num_parameters());
    let batch_size = cfg.batch_size.max(1);
    let mut reports = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let order: Vec<usize> = if examples.len() < batch_size {
            (0..batch_size).map(|_| rng.random_range(0..examples.len())).collect()
        } else {
            let mut o: Vec<usize> = (0..examples.len()).collect();
            o.shuffle(&mut rng);
            o
        };
        let mut sum = LossReport::default();
        let mut batch = Vec::with_capacity(batch_size);
        for chunk in order.chunks(batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| examples[i].clone()));
            let r = train_step(model, &batch, &mut opt, cfg, use_dropout.then_some(&mut dropout_rng))?;
            let w = r.examples as f64;
            sum.value += r.value * w;
            sum.policy += r.policy * w;
            sum.weight_decay += r.weight_decay * w;
            sum.total += r.total * w;
            sum.examples += r.examples;
        }
        let n = sum.examples.max(1) as f64;
        reports.push(LossReport {
            value: sum.value / n,
            policy: sum.policy / n,
            weight_decay: sum.weight_decay / n,
            total: sum.total / n,
            examples: sum.examples,
        });
    }
    Ok(reports)
}

/// Value-only training on every decision state of `records`.
pub fn pretrain_value(
    engine: &Engine,
    model: &mut Model<f32>,
    records: &[GameRecord],
    cfg: &TrainConfig,
    epochs: usize,
    seed: u64,
) -> Result<Vec<LossReport>, PipelineError> {
    let mut examples = Vec::new();
    for r in records {
        examples.extend(examples_from_record(engine, r, false)?);
    }
    train_epochs(model, &examples, cfg, epochs, seed)
}

/// Retrain on everything in the buffer; both loss terms where available.
pub fn retrain(
    model: &mut Model<f32>,
    buffer: &ReplayBuffer,
    cfg: &TrainConfig,
    epochs: usize,
    seed: u64,
) -> Result<Vec<LossReport>, PipelineError> {
    let examples: Vec<TrainingExample> = buffer.examples().cloned().collect();
    train_epochs(model, &examples, cfg, epochs, seed)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub games: usize,
    pub first_player_wins: usize,
    pub second_player_wins: usize,
    pub draws: usize,
    pub first_player_win_rate: f64,
    /// Civilian, scientific, military shares of all games.
    pub victory_split: [f64; 3],
    /// Mean number of player decisions per game.
    pub mean_length: f64,
}

impl IterationStats {
    pub fn from_records(records: &[GameRecord]) -> IterationStats {
        let mut s = IterationStats { games: records.len(), ..Default::default() };
        if records.is_empty() {
            return s;
        }
        let mut split = [0usize; 3];
        let mut length = 0usize;
        for r in records {
            match r.outcome.winner {
                Some(Player::P1) => s.first_player_wins += 1,
                Some(Player::P2) => s.second_player_wins += 1,
                None => s.draws += 1,
            }
            match r.outcome.victory {
                Some(VictoryType::Civilian) => split[0] += 1,
                Some(VictoryType::Scientific) => split[1] += 1,
                Some(VictoryType::Military) => split[2] += 1,
                _ => {}
            }
            length += r.decisions();
        }
        let n = records.len() as f64;
        s.first_player_win_rate = s.first_player_wins as f64 / n;
        s.victory_split = split.map(|c| c as f64 / n);
        s.mean_length = length as f64 / n;
        s
    }
}

/// Self-play games with training-mode search on both sides. Game `i`
/// depends only on the model and `(seed, i)`.
pub fn selfplay_games(
    engine: &Engine,
    model: &Arc<Model<f32>>,
    games: usize,
    search: &SearchConfig,
    seed: u64,
    threads: usize,
) -> Vec<GameRecord> {
    let ids: Vec<usize> = (0..games).collect();
    parallel_map(&ids, threads, |_, &i| {
        let game_seed = derive_seed(seed, 2, i as u64);
        let ev = NetEvaluator { model: model.clone() };
        let mut p1 = SearchPolicy::new("selfplay", ev.clone(), *search, derive_seed(game_seed, 1, 0));
        let mut p2 = SearchPolicy::new("selfplay", ev, *search, derive_seed(game_seed, 2, 0));
        run_game(engine, &mut p1, &mut p2, &SetupConfig::default(), game_seed)
    })
}

pub fn selfplay_iteration(
    engine: &Engine,
    model: &Arc<Model<f32>>,
    games: usize,
    search: &SearchConfig,
    seed: u64,
    threads: usize,
) -> (Vec<GameRecord>, IterationStats) {
    let records = selfplay_games(engine, model, games, search, seed, threads);
    let stats = IterationStats::from_records(&records);
    (records, stats)
}

/// A player in an arena match.
#[derive(Clone)]
pub enum Contender {
    Model { model: Arc<Model<f32>>, simulations: u32, label: String },
    Bootstrap(BootstrapKind),
    /// Search with a uniform evaluator (pure tree search with random leaves).
    UniformSearch { simulations: u32 },
}

impl Contender {
    pub fn label(&self) -> String {
        match self {
            Contender::Model { label, .. } => label.clone(),
            Contender::Bootstrap(k) => format!("bootstrap:{}", k.name()),
            Contender::UniformSearch { simulations } => format!("uniform-search:{simulations}"),
        }
    }

    pub fn policy(&self, seed: u64) -> Box<dyn Policy + Send> {
        match self {
            Contender::Model { model, simulations, label } => Box::new(SearchPolicy::new(
                label.clone(),
                NetEvaluator { model: model.clone() },
                SearchConfig::play().with_simulations(*simulations),
                seed,
            )),
            Contender::Bootstrap(k) => Box::new(BootstrapPolicy::new(*k, seed)),
            Contender::UniformSearch { simulations } => Box::new(SearchPolicy::new(
                self.label(),
                UniformEvaluator,
                SearchConfig::play().with_simulations(*simulations),
                seed,
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeatRecord {
    pub games: usize,
    pub wins: usize,
    pub losses: usize,
    pub draws: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub a: String,
    pub b: String,
    pub games: usize,
    pub a_wins: usize,
    pub b_wins: usize,
    pub draws: usize,
    /// Results of A when seated first and second.
    pub a_first: SeatRecord,
    pub a_second: SeatRecord,
    pub first_player_win_rate: f64,
    /// A's score with draws as half a win.
    pub a_score: f64,
    /// 95% Wilson interval of A's win share (draws excluded from wins).
    pub a_win_ci: (f64, f64),
}

/// Play `games` games, A seated first in even-numbered games.
pub fn arena_match(
    engine: &Engine,
    a: &Contender,
    b: &Contender,
    games: usize,
    setup: &SetupConfig,
    seed: u64,
    threads: usize,
) -> (MatchReport, Vec<GameRecord>) {
    let ids: Vec<usize> = (0..games).collect();
    let records = parallel_map(&ids, threads, |_, &i| {
        let game_seed = derive_seed(seed, 3, i as u64);
        let mut pa = a.policy(derive_seed(game_seed, 1, 0));
        let mut pb = b.policy(derive_seed(game_seed, 2, 0));
        if i % 2 == 0 {
            run_game(engine, &mut *pa, &mut *pb, setup, game_seed)
        } else {
            run_game(engine, &mut *pb, &mut *pa, setup, game_seed)
        }
    });
    let mut rep = MatchReport {
        a: a.label(),
        b: b.label(),
        games,
        a_wins: 0,
        b_wins: 0,
        draws: 0,
        a_first: SeatRecord::default(),
        a_second: SeatRecord::default(),
        first_player_win_rate: 0.0,
        a_score: 0.0,
        a_win_ci: (0.0, 0.0),
    };
    let mut first_wins = 0;
    for (i, r) in records.iter().enumerate() {
        let a_seat = if i % 2 == 0 { Player::P1 } else { Player::P2 };
        let seat = if a_seat == Player::P1 { &mut rep.a_first } else { &mut rep.a_second };
        seat.games += 1;
        match r.outcome.winner {
            Some(w) if w == a_seat => {
                rep.a_wins += 1;
                seat.wins += 1;
            }
            Some(_) => {
                rep.b_wins += 1;
                seat.losses += 1;
            }
            None => {
                rep.draws += 1;
                seat.draws += 1;
            }
        }
        if r.outcome.winner == Some(Player::P1) {
            first_wins += 1;
        }
    }
    if games > 0 {
        let n = games as f64;
        rep.first_player_win_rate = first_wins as f64 / n;
        rep.a_score = (rep.a_wins as f64 + 0.5 * rep.draws as f64) / n;
        rep.a_win_ci = crate::analysis::wilson_interval(rep.a_wins, games);
    }
    (rep, records)
}

/// Everything the training loop needs, loadable from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub bootstrap_games: usize,
    pub games_per_iteration: usize,
    pub iterations: usize,
    pub training_simulations: u32,
    pub play_simulations: u32,
    pub buffer_games: usize,
    pub pretrain_epochs: usize,
    pub retrain_epochs: usize,
    /// Games held out from the bootstrap set for value evaluation.
    pub holdout_games: usize,
    pub arena_games: usize,
    pub arena_simulations: u32,
    pub checkpoint_dir: PathBuf,
    pub threads: usize,
}

impl PipelineConfig {
    pub fn toy() -> PipelineConfig {
        PipelineConfig {
            model: ModelConfig::toy(),
            train: TrainConfig { learning_rate: 2e-4, batch_size: 256, ..TrainConfig::default() },
            bootstrap_games: 2000,
            games_per_iteration: 500,
            iterations: 3,
            training_simulations: 200,
            play_simulations: 5000,
            buffer_games: 2000,
            pretrain_epochs: 1,
            retrain_epochs: 2,
            holdout_games: 100,
            arena_games: 200,
            arena_simulations: 200,
            checkpoint_dir: PathBuf::from("checkpoints"),
            threads: 1,
        }
    }

    pub fn paper() -> PipelineConfig {
        PipelineConfig {
            model: ModelConfig::paper(),
            bootstrap_games: 35_000,
            games_per_iteration: 3000,
            iterations: 128,
            training_simulations: 1000,
            buffer_games: 100_000,
            holdout_games: 1000,
            ..Self::toy()
        }
    }

    pub fn preset(name: &str) -> Option<PipelineConfig> {
        match name {
            "toy" => Some(Self::toy()),
            "paper" => Some(Self::paper()),
            _ => None,
        }
    }

    pub fn from_toml(text: &str) -> Result<PipelineConfig, PipelineError> {
        let c: PipelineConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.model.validate()?;
        let counts = [
            ("bootstrap_games", self.bootstrap_games),
            ("games_per_iteration", self.games_per_iteration),
            ("iterations", self.iterations),
            ("buffer_games", self.buffer_games),
            ("pretrain_epochs", self.pretrain_epochs),
            ("retrain_epochs", self.retrain_epochs),
            ("arena_games", self.arena_games),
            ("train.batch_size", self.train.batch_size),
            ("threads", self.threads),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(PipelineError::Config(format!("{name} must be at least 1")));
            }
        }
        if self.training_simulations == 0 || self.play_simulations == 0 || self.arena_simulations == 0 {
            return Err(PipelineError::Config("simulation counts must be at least 1".into()));
        }
        if self.holdout_games >= self.bootstrap_games {
            return Err(PipelineError::Config("holdout_games must be below bootstrap_games".into()));
        }
        Ok(())
    }

    pub fn training_search(&self) -> SearchConfig {
        SearchConfig::training().with_simulations(self.training_simulations)
    }
}

/// One line of the pipeline metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum Metric {
    Bootstrap { games: usize, stats: IterationStats },
    Pretrain { epochs: Vec<LossReport>, holdout: LossReport, zero_baseline_mse: f64 },
    Iteration { iteration: usize, stats: IterationStats, epochs: Vec<LossReport>, buffer_games: usize },
}

/// Files of a pipeline run inside the checkpoint directory.
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> RunDir {
        RunDir { root: root.into() }
    }

    pub fn model(&self, iteration: usize) -> PathBuf {
        self.root.join(format!("model_{iteration:03}.dznn"))
    }

    /// Records of stage 0 (bootstrap) or of iteration `k`.
    pub fn records(&self, stage: usize) -> PathBuf {
        self.root.join(format!("records_{stage:03}"))
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.jsonl")
    }

    /// Highest iteration with a saved model.
    pub fn latest_model(&self) -> Option<usize> {
        (0..100_000).take_while(|&k| self.model(k).exists()).last()
    }
}

pub fn write_records(dir: &Path, records: &[GameRecord]) -> Result<(), PipelineError> {
    fs::create_dir_all(dir)?;
    for (i, r) in records.iter().enumerate() {
        let path = dir.join(format!("game_{i:06}.jsonl"));
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, r.to_jsonl())?;
        fs::rename(&tmp, &path)?;
    }
    Ok(())
}

/// Every `*.jsonl` game in `dir`, in file-name order.
pub fn read_records(dir: &Path) -> Result<Vec<GameRecord>, PipelineError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p)?;
            GameRecord::from_jsonl(&text).map_err(PipelineError::from)
        })
        .collect()
}

fn log_metric(run: &RunDir, m: &Metric) -> Result<(), PipelineError> {
    let mut f = fs::OpenOptions::new().create(true).append(true).open(run.metrics())?;
    writeln!(f, "{}", serde_json::to_string(m).expect("metric serializes"))?;
    tracing::info!(target: "pipeline", "{}", serde_json::to_string(m).expect("metric serializes"));
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub iterations_completed: usize,
    pub final_model: PathBuf,
    pub holdout_value_mse: f64,
    pub zero_baseline_mse: f64,
}

/// Run (or resume) the whole pipeline. Every stage's randomness derives
/// from `seed` and the stage index, so a resumed run produces the same
/// files as an uninterrupted one.
pub fn run_pipeline(engine: &Engine, cfg: &PipelineConfig, seed: u64) -> Result<PipelineSummary, PipelineError> {
    cfg.validate()?;
    let run = RunDir::new(&cfg.checkpoint_dir);
    fs::create_dir_all(&run.root)?;
    let threads = cfg.threads;

    // Stage 0: bootstrap games and value pretraining.
    let boot_dir = run.records(0);
    let all_boot = if boot_dir.join(format!("game_{:06}.jsonl", cfg.bootstrap_games - 1)).exists() {
        read_records(&boot_dir)?
    } else {
        let r = generate_bootstrap_set(engine, cfg.bootstrap_games, derive_seed(seed, 10, 0), threads);
        write_records(&boot_dir, &r)?;
        log_metric(&run, &Metric::Bootstrap { games: r.len(), stats: IterationStats::from_records(&r) })?;
        r
    };
    let (train_boot, holdout) = all_boot.split_at(all_boot.len() - cfg.holdout_games);
    let mut holdout_examples = Vec::new();
    for r in holdout {
        holdout_examples.extend(examples_from_record(engine, r, false)?);
    }
    let baseline = zero_baseline_mse(&holdout_examples);

    let mut model = match run.latest_model() {
        Some(k) => load_model(run.model(k))?,
        None => {
            let mut m = Model::<f32>::new(cfg.model.clone(), derive_seed(seed, 11, 0))?;
            let epochs = pretrain_value(engine, &mut m, train_boot, &cfg.train, cfg.pretrain_epochs, derive_seed(seed, 12, 0))?;
            let holdout_report = if holdout_examples.is_empty() {
                LossReport::default()
            } else {
                evaluate_loss(&m, &holdout_examples, 0.0)?
            };
            save_model(&m, run.model(0))?;
            log_metric(&run, &Metric::Pretrain { epochs, holdout: holdout_report, zero_baseline_mse: baseline })?;
            m
        }
    };
    let start = run.latest_model().unwrap_or(0);

    // Rebuild the buffer from stored games, oldest first.
    let mut buffer = ReplayBuffer::new(cfg.buffer_games);
    for r in train_boot {
        buffer.push_game(examples_from_record(engine, r, true)?);
    }
    for k in 1..=start {
        for r in read_records(&run.records(k))? {
            buffer.push_game(examples_from_record(engine, &r, true)?);
        }
    }

    for k in start + 1..=cfg.iterations {
        let shared = Arc::new(model);
        let (records, stats) = selfplay_iteration(
            engine,
            &shared,
            cfg.games_per_iteration,
            &cfg.training_search(),
            derive_seed(seed, 20, k as u64),
            threads,
        );
        write_records(&run.records(k), &records)?;
        for r in &records {
            buffer.push_game(examples_from_record(engine, r, true)?);
        }
        model = Arc::try_unwrap(shared).unwrap_or_else(|m| (*m).clone());
        let epochs = retrain(&mut model, &buffer, &cfg.train, cfg.retrain_epochs, derive_seed(seed, 21, k as u64))?;
        save_model(&model, run.model(k))?;
        log_metric(&run, &Metric::Iteration { iteration: k, stats, epochs, buffer_games: buffer.games() })?;
    }

    let holdout_value_mse = if holdout_examples.is_empty() {
        0.0
    } else {
        evaluate_loss(&model, &holdout_examples, 0.0)?.value
    };
    let last = run.latest_model().unwrap_or(0);
    Ok(PipelineSummary {
        iterations_completed: last,
        final_model: run.model(last),
        holdout_value_mse,
        zero_baseline_mse: baseline,
    })
}

