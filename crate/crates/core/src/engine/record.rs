//! Game records: a line-delimited JSON transcript of one game.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    Action, Dealer, Engine, EngineError, GameState, Outcome, Player, Reveal, SetupConfig,
    StepResult, VictoryType,
};
use crate::data::{TokenSet, WonderSet};

pub const RECORD_VERSION: u32 = 1;

/// What a policy returns for one decision.
#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub action: Action,
    /// Root visit counts, when the policy searched.
    pub visits: Option<Vec<(Action, u32)>>,
}

impl From<Action> for Decision {
    fn from(action: Action) -> Self {
        Decision { action, visits: None }
    }
}

/// Anything that can play a seat.
pub trait Policy {
    fn name(&self) -> String;
    /// `legal` is non-empty and in vocabulary order.
    fn decide(&mut self, engine: &Engine, state: &GameState, legal: &[Action]) -> Decision;
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn decide(&mut self, engine: &Engine, state: &GameState, legal: &[Action]) -> Decision {
        (**self).decide(engine, state, legal)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub version: u32,
    pub seed: u64,
    pub coins: [u32; 2],
    pub policies: [String; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetupEvent {
    pub tokens: TokenSet,
    pub wonders: WonderSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Event {
    Action {
        player: Player,
        action: Action,
        visits: Option<Vec<(Action, u32)>>,
    },
    Reveal(Reveal),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GameRecord {
    pub header: Header,
    pub setup: SetupEvent,
    pub events: Vec<Event>,
    pub outcome: Outcome,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line {
    Header(Header),
    Setup(SetupEvent),
    Action {
        player: Player,
        action: Action,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        visits: Option<Vec<(Action, u32)>>,
    },
    Reveal(Reveal),
    Outcome(Outcome),
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported record version {0}")]
    Version(u32),
    #[error("record does not replay: {0}")]
    Replay(#[from] EngineError),
    #[error("record does not replay: {0}")]
    Structure(String),
}

impl GameRecord {
    pub fn to_jsonl(&self) -> String {
        let mut lines = Vec::with_capacity(self.events.len() + 3);
        lines.push(Line::Header(self.header.clone()));
        lines.push(Line::Setup(self.setup.clone()));
        for e in &self.events {
            lines.push(match e {
                Event::Action { player, action, visits } => Line::Action {
                    player: *player,
                    action: *action,
                    visits: visits.clone(),
                },
                Event::Reveal(r) => Line::Reveal(r.clone()),
            });
        }
        lines.push(Line::Outcome(self.outcome.clone()));
        let mut out = String::new();
        for l in &lines {
            out.push_str(&serde_json::to_string(l).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<GameRecord, RecordError> {
        let mut header = None;
        let mut setup = None;
        let mut events = Vec::new();
        let mut outcome = None;
        for (i, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let line: Line = serde_json::from_str(raw).map_err(|e| RecordError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            let misplaced = |what: &str| RecordError::Parse {
                line: i + 1,
                message: format!("unexpected {what}"),
            };
            match line {
                Line::Header(h) => {
                    if header.is_some() || i != 0 {
                        return Err(misplaced("header"));
                    }
                    if h.version != RECORD_VERSION {
                        return Err(RecordError::Version(h.version));
                    }
                    header = Some(h);
                }
                Line::Setup(s) => {
                    if header.is_none() || setup.is_some() {
                        return Err(misplaced("setup"));
                    }
                    setup = Some(s);
                }
                Line::Action { player, action, visits } => {
                    if setup.is_none() || outcome.is_some() {
                        return Err(misplaced("action"));
                    }
                    events.push(Event::Action { player, action, visits });
                }
                Line::Reveal(r) => {
                    if setup.is_none() || outcome.is_some() {
                        return Err(misplaced("reveal"));
                    }
                    events.push(Event::Reveal(r));
                }
                Line::Outcome(o) => {
                    if setup.is_none() || outcome.is_some() {
                        return Err(misplaced("outcome"));
                    }
                    outcome = Some(o);
                }
            }
        }
        let missing = |what: &str| RecordError::Parse {
            line: 0,
            message: format!("missing {what}"),
        };
        Ok(GameRecord {
            header: header.ok_or_else(|| missing("header"))?,
            setup: setup.ok_or_else(|| missing("setup"))?,
            events,
            outcome: outcome.ok_or_else(|| missing("outcome"))?,
        })
    }

    /// Number of player decisions.
    pub fn decisions(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, Event::Action { .. }))
            .count()
    }

    pub fn config(&self) -> SetupConfig {
        SetupConfig {
            coins: self.header.coins,
        }
    }
}

/// Every state of a recorded game: the initial state followed by the state
/// after each event.
pub fn replay(engine: &Engine, record: &GameRecord) -> Result<Vec<GameState>, RecordError> {
    let mut state = engine.initial_state(&record.config(), record.setup.tokens, record.setup.wonders);
    let mut states = vec![state.clone()];
    let mut outcome = None;
    for e in &record.events {
        if outcome.is_some() {
            return Err(RecordError::Structure("event after the end of the game".into()));
        }
        let step = match e {
            Event::Action { player, action, .. } => {
                if *player != state.to_move {
                    return Err(RecordError::Structure(format!("{player} acted out of turn")));
                }
                engine.apply(&state, *action)?
            }
            Event::Reveal(r) => engine.resolve_reveal(&state, r)?,
        };
        if let StepResult::Final(_, o) = &step {
            outcome = Some(o.clone());
        }
        state = step.into_state();
        states.push(state.clone());
    }
    match (&outcome, record.outcome.victory) {
        (Some(o), _) if *o == record.outcome => Ok(states),
        (None, Some(VictoryType::Forfeit)) => Ok(states),
        _ => Err(RecordError::Structure("replayed outcome differs from the record".into())),
    }
}

/// Play one game between two policies. The dealer is seeded with `seed`.
pub fn run_game(
    engine: &Engine,
    p1: &mut dyn Policy,
    p2: &mut dyn Policy,
    config: &SetupConfig,
    seed: u64,
) -> GameRecord {
    let (mut dealer, mut state) = Dealer::new(engine, config, seed);
    let header = Header {
        version: RECORD_VERSION,
        seed,
        coins: config.coins,
        policies: [p1.name(), p2.name()],
    };
    let setup = SetupEvent {
        tokens: state.board_tokens,
        wonders: state.draft.offered,
    };
    let mut events = Vec::with_capacity(128);
    let mut legal = Vec::with_capacity(64);
    let outcome = loop {
        let step = if state.is_afterstate() {
            let r = dealer.reveal(&state);
            let step = engine.resolve_reveal(&state, &r).expect("dealer reveals are consistent");
            events.push(Event::Reveal(r));
            step
        } else {
            engine
                .legal_actions_into(&state, &mut legal)
                .expect("live state has legal actions");
            let player = state.to_move;
            let policy: &mut dyn Policy = if player == Player::P1 { &mut *p1 } else { &mut *p2 };
            let decision = policy.decide(engine, &state, &legal);
            if !legal.contains(&decision.action) {
                let reason = engine.check(&state, decision.action).err();
                let points = super::civilian_points(engine.db(), &state);
                break Outcome {
                    winner: Some(player.other()),
                    victory: Some(VictoryType::Forfeit),
                    points,
                    note: Some(format!(
                        "{} ({player}) returned illegal action {:?}: {reason:?}",
                        policy.name(),
                        decision.action
                    )),
                };
            }
            events.push(Event::Action {
                player,
                action: decision.action,
                visits: decision.visits,
            });
            engine.apply_unchecked(&state, decision.action)
        };
        match step {
            StepResult::Final(_, o) => break o,
            other => state = other.into_state(),
        }
    };
    GameRecord {
        header,
        setup,
        events,
        outcome,
    }
}
