//! Sessions: one live game each, with its dealer, history, seat
//! assignment and engine settings. All operations are synchronous; the
//! HTTP layer runs searches on blocking threads.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use duelzero_core::engine::{
    state_hash, Action, Dealer, EngineError, Event, GameRecord, GameState, Header, Outcome, Player, Reason,
    SetupConfig, SetupEvent, StepResult, RECORD_VERSION,
};
use duelzero_core::mcts::{
    choose_action, search_with_progress, Evaluator, NetEvaluator, SearchConfig, SearchError, SearchMode,
    UniformEvaluator,
};
use duelzero_core::nn::{load_model, Model};
use duelzero_core::selfplay::derive_seed;
use duelzero_core::Engine;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::broadcast;

use crate::view::*;

/// Name of the built-in evaluator: uniform priors, zero values.
pub const UNIFORM: &str = "uniform";
pub const CHECKPOINT_EXT: &str = "dznn";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("session {0} not found")]
    NotFound(String),
    #[error("unknown checkpoint {0}")]
    UnknownCheckpoint(String),
    #[error("unsupported schema version {0}; this server speaks version {SCHEMA_VERSION}")]
    Schema(u32),
    #[error("invalid request: {0}")]
    BadRequest(String),
    #[error("it is not seat {0}'s turn")]
    NotYourTurn(u8),
    #[error("seat {0} is played by the engine")]
    EngineSeat(u8),
    #[error("it is not the engine's turn")]
    NotEngineTurn,
    #[error("an engine move is already being computed")]
    Busy,
    #[error("the game is over")]
    GameOver,
    #[error("the game is still in progress")]
    InProgress,
    #[error("illegal action {action:?}: {reason:?}")]
    Illegal { action: Action, reason: Reason },
    #[error("analysis cancelled: the position changed")]
    Cancelled,
    #[error("search failed: {0}")]
    Search(SearchError),
    #[error("storage: {0}")]
    Storage(String),
}

impl ServiceError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "session_not_found",
            ServiceError::UnknownCheckpoint(_) => "unknown_checkpoint",
            ServiceError::Schema(_) => "unsupported_schema",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::NotYourTurn(_) => "not_your_turn",
            ServiceError::EngineSeat(_) => "engine_seat",
            ServiceError::NotEngineTurn => "not_engine_turn",
            ServiceError::Busy => "engine_busy",
            ServiceError::GameOver => "game_over",
            ServiceError::InProgress => "game_in_progress",
            ServiceError::Illegal { .. } => "illegal_action",
            ServiceError::Cancelled => "cancelled",
            ServiceError::Search(_) => "search_failed",
            ServiceError::Storage(_) => "storage",
        }
    }
}

fn storage(e: impl std::fmt::Display) -> ServiceError {
    ServiceError::Storage(e.to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeatKind {
    Human,
    Engine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionSettings {
    /// Drawn by the server when absent.
    pub seed: Option<u64>,
    pub seats: [SeatKind; 2],
    pub checkpoint: String,
    pub simulations: u32,
    pub coins: [u32; 2],
    pub schema_version: u32,
}

impl Default for SessionSettings {
    fn default() -> Self {
        SessionSettings {
            seed: None,
            seats: [SeatKind::Human, SeatKind::Engine],
            checkpoint: UNIFORM.into(),
            simulations: 5000,
            coins: [7, 7],
            schema_version: SCHEMA_VERSION,
        }
    }
}

/// Leaf evaluator behind a checkpoint name.
#[derive(Clone)]
pub enum SessionEvaluator {
    Uniform,
    Net(NetEvaluator),
}

impl Evaluator for SessionEvaluator {
    fn evaluate(&self, engine: &Engine, s: &GameState, legal: &[Action]) -> Result<(f32, Vec<f32>), SearchError> {
        match self {
            SessionEvaluator::Uniform => UniformEvaluator.evaluate(engine, s, legal),
            SessionEvaluator::Net(n) => n.evaluate(engine, s, legal),
        }
    }
}

/// Model files in one directory, loaded on first use.
pub struct Checkpoints {
    dir: Option<PathBuf>,
    loaded: Mutex<HashMap<String, Arc<Model<f32>>>>,
}

impl Checkpoints {
    pub fn new(dir: Option<PathBuf>) -> Checkpoints {
        Checkpoints { dir, loaded: Mutex::new(HashMap::new()) }
    }

    /// `uniform` followed by the model files, by name.
    pub fn list(&self) -> Vec<String> {
        let mut out = vec![UNIFORM.to_string()];
        if let Some(dir) = &self.dir {
            let mut names: Vec<String> = std::fs::read_dir(dir)
                .into_iter()
                .flatten()
                .flatten()
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|x| x == CHECKPOINT_EXT))
                .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
                .collect();
            names.sort();
            out.extend(names);
        }
        out
    }

    pub fn resolve(&self, name: &str) -> Result<SessionEvaluator, ServiceError> {
        if name == UNIFORM {
            return Ok(SessionEvaluator::Uniform);
        }
        // Only listed names; never a path from the client.
        if !self.list().iter().any(|n| n == name) {
            return Err(ServiceError::UnknownCheckpoint(name.into()));
        }
        let mut loaded = self.loaded.lock().unwrap();
        if let Some(m) = loaded.get(name) {
            return Ok(SessionEvaluator::Net(NetEvaluator { model: m.clone() }));
        }
        let path = self.dir.as_ref().expect("listed").join(format!("{name}.{CHECKPOINT_EXT}"));
        let model = Arc::new(load_model(&path).map_err(|e| ServiceError::UnknownCheckpoint(format!("{name}: {e}")))?);
        loaded.insert(name.into(), model.clone());
        Ok(SessionEvaluator::Net(NetEvaluator { model }))
    }
}

/// One line of a session's append-only log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LogLine {
    Created { id: String, settings: SessionSettings },
    Event { event: Event },
}

const HISTORY_LIMIT: usize = 4096;

struct Session {
    id: String,
    settings: SessionSettings,
    seed: u64,
    evaluator: SessionEvaluator,
    dealer: Dealer,
    setup: SetupEvent,
    state: GameState,
    events: Vec<Event>,
    outcome: Option<Outcome>,
    /// Bumped whenever the position changes; stale searches compare it.
    generation: Arc<AtomicU64>,
    engine_busy: bool,
    analysis: HashMap<(u64, u32), SearchSummary>,
    log: Option<File>,
    tx: broadcast::Sender<Envelope>,
    history: Vec<Envelope>,
    next_id: u64,
}

impl Session {
    fn notify(&mut self, message: Notification) {
        let env = Envelope { id: Some(self.next_id), message };
        self.next_id += 1;
        if self.history.len() == HISTORY_LIMIT {
            self.history.remove(0);
        }
        self.history.push(env.clone());
        let _ = self.tx.send(env);
    }

    fn write(&mut self, line: &LogLine) -> Result<(), ServiceError> {
        if let Some(f) = &mut self.log {
            let mut text = serde_json::to_string(line).map_err(storage)?;
            text.push('\n');
            f.write_all(text.as_bytes()).map_err(storage)?;
            f.flush().map_err(storage)?;
        }
        Ok(())
    }

    fn decisions(&self) -> u64 {
        self.events.iter().filter(|e| matches!(e, Event::Action { .. })).count() as u64
    }

    /// Seed of the search run at the current decision, shared by engine
    /// moves and analysis so the two agree.
    fn search_seed(&self) -> u64 {
        derive_seed(self.seed, 7, self.decisions())
    }

    fn seat_kind(&self, p: Player) -> SeatKind {
        self.settings.seats[p.index()]
    }

    /// Apply a validated action and resolve any reveals with the dealer.
    fn advance(&mut self, engine: &Engine, action: Action, visits: Option<Vec<(Action, u32)>>) -> Result<(), ServiceError> {
        let player = self.state.to_move;
        let mut step = engine.apply(&self.state, action).map_err(|e| match e {
            EngineError::Illegal { action, reason } => ServiceError::Illegal { action, reason },
            other => ServiceError::BadRequest(other.to_string()),
        })?;
        let ev = Event::Action { player, action, visits };
        self.write(&LogLine::Event { event: ev.clone() })?;
        self.events.push(ev);
        loop {
            match step {
                StepResult::NeedsReveal(s) => {
                    let r = self.dealer.reveal(&s);
                    step = engine.resolve_reveal(&s, &r).map_err(|e| ServiceError::Storage(e.to_string()))?;
                    let ev = Event::Reveal(r.clone());
                    self.write(&LogLine::Event { event: ev.clone() })?;
                    self.events.push(ev);
                    self.notify(Notification::reveal(engine.db(), &r));
                }
                StepResult::NextState(s) => {
                    self.state = s;
                    break;
                }
                StepResult::Final(s, o) => {
                    self.state = s;
                    self.notify(Notification::GameOver { outcome: OutcomeView::new(&o) });
                    self.outcome = Some(o);
                    break;
                }
            }
        }
        self.generation.fetch_add(1, Ordering::SeqCst);
        self.analysis.clear();
        if self.outcome.is_none() {
            self.notify(Notification::TurnChange {
                to_move: seat_of(self.state.to_move),
                phase: phase_name(self.state.phase),
                events: self.events.len(),
            });
        }
        Ok(())
    }

    fn record(&self) -> Option<GameRecord> {
        let name = |p: Player| match self.seat_kind(p) {
            SeatKind::Human => "human".to_string(),
            SeatKind::Engine => format!("engine:{}:{}", self.settings.checkpoint, self.settings.simulations),
        };
        Some(GameRecord {
            header: Header {
                version: RECORD_VERSION,
                seed: self.seed,
                coins: self.settings.coins,
                policies: [name(Player::P1), name(Player::P2)],
            },
            setup: self.setup.clone(),
            events: self.events.clone(),
            outcome: self.outcome.clone()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Created {
    pub schema_version: u32,
    pub session: String,
    pub seed: u64,
    pub view: StateView,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Legal {
    pub to_move: u8,
    pub legal: Vec<LegalAction>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Submitted {
    pub view: StateView,
    /// Legal actions of whoever moves next (empty when the game is over or
    /// when they are private to the next mover).
    pub next: Legal,
    pub outcome: Option<OutcomeView>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineMove {
    pub action: Action,
    pub label: String,
    pub search: SearchSummary,
    pub view: StateView,
}

/// Every live session plus the shared engine and checkpoints.
pub struct Manager {
    engine: Engine,
    checkpoints: Checkpoints,
    sessions: Mutex<BTreeMap<String, Arc<Mutex<Session>>>>,
    store: Option<PathBuf>,
    counter: AtomicU64,
    base_seed: u64,
}

impl Manager {
    /// `store`: directory for session logs; `None` keeps sessions in memory.
    /// Existing logs in `store` are replayed.
    pub fn new(
        engine: Engine,
        checkpoints: Checkpoints,
        store: Option<PathBuf>,
        base_seed: u64,
    ) -> Result<Manager, ServiceError> {
        let m = Manager {
            engine,
            checkpoints,
            sessions: Mutex::new(BTreeMap::new()),
            store,
            counter: AtomicU64::new(0),
            base_seed,
        };
        if let Some(dir) = &m.store {
            std::fs::create_dir_all(dir).map_err(storage)?;
            m.recover(dir)?;
        }
        Ok(m)
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn checkpoints(&self) -> Vec<String> {
        self.checkpoints.list()
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.lock().unwrap().keys().cloned().collect()
    }

    fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>, ServiceError> {
        self.sessions.lock().unwrap().get(id).cloned().ok_or_else(|| ServiceError::NotFound(id.into()))
    }

    fn lock(s: &Mutex<Session>) -> MutexGuard<'_, Session> {
        s.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn build(&self, id: String, settings: SessionSettings, log: Option<File>) -> Result<Session, ServiceError> {
        if settings.schema_version != SCHEMA_VERSION {
            return Err(ServiceError::Schema(settings.schema_version));
        }
        if settings.simulations == 0 {
            return Err(ServiceError::BadRequest("simulations must be positive".into()));
        }
        let evaluator = self.checkpoints.resolve(&settings.checkpoint)?;
        let seed = settings.seed.expect("seed resolved before building");
        let config = SetupConfig { coins: settings.coins };
        let (dealer, state) = Dealer::new(&self.engine, &config, seed);
        let setup = SetupEvent { tokens: state.board_tokens, wonders: state.draft.offered };
        Ok(Session {
            id,
            settings,
            seed,
            evaluator,
            dealer,
            setup,
            state,
            events: Vec::new(),
            outcome: None,
            generation: Arc::new(AtomicU64::new(0)),
            engine_busy: false,
            analysis: HashMap::new(),
            log,
            tx: broadcast::channel(256).0,
            history: Vec::new(),
            next_id: 1,
        })
    }

    pub fn create(&self, settings: SessionSettings) -> Result<Created, ServiceError> {
        self.create_from(settings, &[])
    }

    /// Create a session and play `opening` in it regardless of who holds
    /// each seat, e.g. to continue or analyse a recorded game.
    pub fn create_from(&self, mut settings: SessionSettings, opening: &[Action]) -> Result<Created, ServiceError> {
        let n = self.counter.fetch_add(1, Ordering::SeqCst);
        let id = format!("g{n:06}");
        settings.seed.get_or_insert_with(|| derive_seed(self.base_seed, 9, n));
        // Validate everything before touching the disk.
        let mut session = self.build(id.clone(), settings.clone(), None)?;
        for &a in opening {
            if session.outcome.is_some() {
                return Err(ServiceError::BadRequest("opening runs past the end of the game".into()));
            }
            session.advance(&self.engine, a, None)?;
        }
        if let Some(dir) = &self.store {
            let path = dir.join(format!("{id}.jsonl"));
            session.log = Some(OpenOptions::new().create_new(true).append(true).open(path).map_err(storage)?);
            session.write(&LogLine::Created { id: id.clone(), settings })?;
            for ev in session.events.clone() {
                session.write(&LogLine::Event { event: ev })?;
            }
        }
        session.notify(Notification::TurnChange {
            to_move: seat_of(session.state.to_move),
            phase: phase_name(session.state.phase),
            events: session.events.len(),
        });
        let created = Created {
            schema_version: SCHEMA_VERSION,
            session: id.clone(),
            seed: session.seed,
            view: self.view_of(&session, None),
        };
        tracing::info!(session = %id, seed = session.seed, "session created");
        self.sessions.lock().unwrap().insert(id, Arc::new(Mutex::new(session)));
        Ok(created)
    }

    fn view_of(&self, s: &Session, viewer: Option<Player>) -> StateView {
        state_view(&self.engine, &s.id, &s.state, s.outcome.as_ref(), s.events.len(), viewer)
    }

    fn seat(seat: Option<u8>) -> Result<Option<Player>, ServiceError> {
        seat.map(|x| player_of(x).ok_or_else(|| ServiceError::BadRequest(format!("no seat {x}")))).transpose()
    }

    pub fn view(&self, id: &str, seat: Option<u8>) -> Result<StateView, ServiceError> {
        let viewer = Self::seat(seat)?;
        let s = self.get(id)?;
        let s = Self::lock(&s);
        Ok(self.view_of(&s, viewer))
    }

    fn legal_for(&self, s: &Session, viewer: Option<Player>) -> Legal {
        let st = &s.state;
        let private = sees_library(st, Some(st.to_move)) && viewer != Some(st.to_move);
        let visible = s.outcome.is_none() && !st.is_afterstate() && !private;
        let legal = if visible { legal_view(&self.engine, st, &self.engine.legal_actions(st).unwrap_or_default()) } else { Vec::new() };
        Legal { to_move: seat_of(st.to_move), legal }
    }

    pub fn legal(&self, id: &str, seat: Option<u8>) -> Result<Legal, ServiceError> {
        let viewer = Self::seat(seat)?;
        let s = self.get(id)?;
        let s = Self::lock(&s);
        Ok(self.legal_for(&s, viewer))
    }

    pub fn submit(&self, id: &str, seat: u8, action: Action) -> Result<Submitted, ServiceError> {
        let p = Self::seat(Some(seat))?.expect("seat given");
        let s = self.get(id)?;
        let mut s = Self::lock(&s);
        if s.outcome.is_some() {
            return Err(ServiceError::GameOver);
        }
        if s.state.to_move != p {
            return Err(ServiceError::NotYourTurn(seat));
        }
        if s.seat_kind(p) == SeatKind::Engine {
            return Err(ServiceError::EngineSeat(seat));
        }
        s.advance(&self.engine, action, None)?;
        Ok(Submitted {
            view: self.view_of(&s, Some(p)),
            next: self.legal_for(&s, Some(p)),
            outcome: s.outcome.as_ref().map(OutcomeView::new),
        })
    }

    /// Search and play the engine's move. Progress goes to subscribers.
    pub fn engine_move(&self, id: &str) -> Result<EngineMove, ServiceError> {
        let handle = self.get(id)?;
        let (root, evaluator, sims, seed, tx, generation) = {
            let mut s = Self::lock(&handle);
            if s.outcome.is_some() {
                return Err(ServiceError::GameOver);
            }
            if s.seat_kind(s.state.to_move) != SeatKind::Engine {
                return Err(ServiceError::NotEngineTurn);
            }
            if s.engine_busy {
                return Err(ServiceError::Busy);
            }
            s.engine_busy = true;
            let g = s.generation.load(Ordering::SeqCst);
            (s.state.clone(), s.evaluator.clone(), s.settings.simulations, s.search_seed(), s.tx.clone(), g)
        };
        let result = self.search(&root, &evaluator, sims, seed, |n| {
            let _ = tx.send(Envelope { id: None, message: Notification::EngineProgress { simulations: n, total: sims } });
            ControlFlow::Continue(())
        });
        let mut s = Self::lock(&handle);
        s.engine_busy = false;
        let summary = result?;
        if s.generation.load(Ordering::SeqCst) != generation {
            return Err(ServiceError::Cancelled);
        }
        let action = summary.edges[0].action;
        let label = action.describe(self.engine.db(), &root);
        let visits = (summary.simulations > 0).then(|| {
            let mut v: Vec<(Action, u32)> = summary.edges.iter().map(|e| (e.action, e.visits)).collect();
            v.sort();
            v
        });
        s.advance(&self.engine, action, visits)?;
        Ok(EngineMove { action, label, search: summary, view: self.view_of(&s, None) })
    }

    /// Play-mode search; a single legal action is returned unsearched.
    fn search(
        &self,
        root: &GameState,
        evaluator: &SessionEvaluator,
        sims: u32,
        seed: u64,
        mut progress: impl FnMut(u32) -> ControlFlow<()>,
    ) -> Result<SearchSummary, ServiceError> {
        let legal = self.engine.legal_actions(root).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        if legal.len() == 1 {
            return Ok(SearchSummary::forced(&self.engine, root, legal[0]));
        }
        let config = SearchConfig::play().with_simulations(sims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let every = (sims / 20).max(1);
        let r = search_with_progress(&self.engine, root, evaluator, &config, &mut rng, every, &mut progress)
            .map_err(|e| match e {
                SearchError::Cancelled => ServiceError::Cancelled,
                e => ServiceError::Search(e),
            })?;
        let summary = SearchSummary::new(&self.engine, root, &r);
        debug_assert_eq!(summary.edges[0].action, choose_action(&r, SearchMode::Play, &mut rng));
        Ok(summary)
    }

    /// Search the current position without playing. Results are cached
    /// per (position, budget); the bool is true on a cache hit. A search
    /// overtaken by a move is abandoned.
    pub fn analysis(&self, id: &str, seat: u8, budget: u32) -> Result<(SearchSummary, bool), ServiceError> {
        let p = Self::seat(Some(seat))?.expect("seat given");
        if budget == 0 {
            return Err(ServiceError::BadRequest("budget must be positive".into()));
        }
        let handle = self.get(id)?;
        let (root, evaluator, seed, key, generation) = {
            let s = Self::lock(&handle);
            if s.outcome.is_some() {
                return Err(ServiceError::GameOver);
            }
            if sees_library(&s.state, Some(s.state.to_move)) && p != s.state.to_move {
                return Err(ServiceError::NotYourTurn(seat));
            }
            let key = (state_hash(&s.state), budget);
            if let Some(hit) = s.analysis.get(&key) {
                return Ok((hit.clone(), true));
            }
            (s.state.clone(), s.evaluator.clone(), s.search_seed(), key, s.generation.clone())
        };
        let start = generation.load(Ordering::SeqCst);
        let summary = self.search(&root, &evaluator, budget, seed, |_| {
            if generation.load(Ordering::SeqCst) == start {
                ControlFlow::Continue(())
            } else {
                ControlFlow::Break(())
            }
        })?;
        let mut s = Self::lock(&handle);
        if s.generation.load(Ordering::SeqCst) != start {
            return Err(ServiceError::Cancelled);
        }
        s.analysis.insert(key, summary.clone());
        Ok((summary, false))
    }

    /// The finished game as a record transcript.
    pub fn transcript(&self, id: &str) -> Result<GameRecord, ServiceError> {
        let s = self.get(id)?;
        let s = Self::lock(&s);
        s.record().ok_or(ServiceError::InProgress)
    }

    /// Subscribe to a session's notifications. Stored notifications with
    /// an id above `after` are returned for replay.
    pub fn subscribe(
        &self,
        id: &str,
        after: Option<u64>,
    ) -> Result<(Vec<Envelope>, broadcast::Receiver<Envelope>), ServiceError> {
        let s = self.get(id)?;
        let s = Self::lock(&s);
        let after = after.unwrap_or(0);
        let backlog = s.history.iter().filter(|e| e.id.is_some_and(|i| i > after)).cloned().collect();
        Ok((backlog, s.tx.subscribe()))
    }

    fn recover(&self, dir: &Path) -> Result<(), ServiceError> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(storage)?
            .flatten()
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        let mut max = None;
        for path in paths {
            let session = self.replay_log(&path)?;
            if let Some(n) = session.id.strip_prefix('g').and_then(|n| n.parse::<u64>().ok()) {
                max = max.max(Some(n));
            }
            tracing::info!(session = %session.id, events = session.events.len(), "session recovered");
            self.sessions.lock().unwrap().insert(session.id.clone(), Arc::new(Mutex::new(session)));
        }
        self.counter.store(max.map_or(0, |n| n + 1), Ordering::SeqCst);
        Ok(())
    }

    fn replay_log(&self, path: &Path) -> Result<Session, ServiceError> {
        let bad = |msg: String| ServiceError::Storage(format!("{}: {msg}", path.display()));
        let file = File::open(path).map_err(storage)?;
        let lines: Vec<String> = BufReader::new(file).lines().collect::<Result<_, _>>().map_err(storage)?;
        let mut parsed = Vec::with_capacity(lines.len());
        for (i, l) in lines.iter().enumerate() {
            match serde_json::from_str::<LogLine>(l) {
                Ok(x) => parsed.push(x),
                // A torn final line from a crash mid-write.
                Err(_) if i + 1 == lines.len() => tracing::warn!("{}: ignoring torn last line", path.display()),
                Err(e) => return Err(bad(format!("line {}: {e}", i + 1))),
            }
        }
        let mut it = parsed.into_iter();
        let Some(LogLine::Created { id, settings }) = it.next() else {
            return Err(bad("log does not start with a creation line".into()));
        };
        let mut s = self.build(id, settings, None)?;
        let logged: Vec<Event> = it
            .map(|l| match l {
                LogLine::Event { event } => Ok(event),
                LogLine::Created { .. } => Err(bad("second creation line".into())),
            })
            .collect::<Result<_, _>>()?;
        for ev in &logged {
            if let Event::Action { action, visits, .. } = ev {
                s.advance(&self.engine, *action, visits.clone()).map_err(|e| bad(e.to_string()))?;
            }
        }
        if s.events.len() < logged.len() || s.events[..logged.len()] != logged[..] {
            return Err(bad("log disagrees with the dealer".into()));
        }
        // Rewrite the log whole: drops a torn line and restores reveals
        // that followed the last logged action.
        if s.events.len() != logged.len() || lines.len() != logged.len() + 1 {
            let mut text = serde_json::to_string(&LogLine::Created { id: s.id.clone(), settings: s.settings.clone() })
                .map_err(storage)?;
            text.push('\n');
            for ev in &s.events {
                text.push_str(&serde_json::to_string(&LogLine::Event { event: ev.clone() }).map_err(storage)?);
                text.push('\n');
            }
            let tmp = path.with_extension("tmp");
            std::fs::write(&tmp, text).map_err(storage)?;
            std::fs::rename(&tmp, path).map_err(storage)?;
        }
        s.log = Some(OpenOptions::new().append(true).open(path).map_err(storage)?);
        Ok(s)
    }
}
