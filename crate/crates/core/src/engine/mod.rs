//! Rules engine for the base game.
//!
//! [`GameState`] holds only public information: face-down cards are
//! [`Slot::Hidden`] and their identities live in [`Dealer`] (or are sampled
//! from the belief distribution by search). Every transition is a pure
//! function returning a new state.

mod invariants;
mod record;
mod reveal;
mod rules;
mod score;
mod setup;
mod state;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CardId, Color, ComponentDb, TokenId, WonderId};

pub use invariants::check_invariants;
pub use record::{
    replay, run_game, Decision, Event, GameRecord, Header, Policy, RecordError, SetupEvent,
    RECORD_VERSION,
};
pub use reveal::{Reveal, RevealRequest, RevealSupport};
pub use rules::Payment;
pub use score::{civilian_points, Points};
pub use setup::{Dealer, SetupConfig};
pub use state::{City, GameState, Slot};

/// Upper bound on player decisions in one game: 6 draft picks, 60 card
/// turns, 5 board tokens, 1 library pick, 1 discard-pile build, 2 card
/// destructions and 2 age-starter choices.
pub const MAX_DECISIONS: usize = 77;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Player {
    P1,
    P2,
}

impl Player {
    pub const BOTH: [Player; 2] = [Player::P1, Player::P2];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    #[inline]
    pub fn other(self) -> Player {
        match self {
            Player::P1 => Player::P2,
            Player::P2 => Player::P1,
        }
    }

    pub fn from_index(i: usize) -> Player {
        if i == 0 {
            Player::P1
        } else {
            Player::P2
        }
    }
}

impl fmt::Display for Player {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Player::P1 => "P1",
            Player::P2 => "P2",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    WonderDraft,
    Age(crate::data::Age),
    Terminal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenSource {
    Board,
    /// The three tokens drawn from the box by the Great Library.
    Library,
}

/// Decision owed before normal play resumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pending {
    PickToken { player: Player, source: TokenSource },
    PickDiscarded { player: Player },
    Destroy { player: Player, color: Color },
    ChooseStarter { player: Player },
}

impl Pending {
    pub fn player(self) -> Player {
        match self {
            Pending::PickToken { player, .. }
            | Pending::PickDiscarded { player }
            | Pending::Destroy { player, .. }
            | Pending::ChooseStarter { player } => player,
        }
    }
}

/// One move. Board cards are addressed by slot, so an action never reveals
/// what a hidden card is.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    PickWonder(WonderId),
    Build(u8),
    Discard(u8),
    BuildWonder(u8, WonderId),
    PickToken(TokenId),
    PickDiscarded(CardId),
    DestroyCard(CardId),
    ChooseAgeStarter(Player),
}

impl Action {
    /// Slot of a card action.
    pub fn slot(self) -> Option<usize> {
        match self {
            Action::Build(s) | Action::Discard(s) | Action::BuildWonder(s, _) => Some(s as usize),
            _ => None,
        }
    }

    pub fn describe(self, db: &ComponentDb, state: &GameState) -> String {
        let slot_name = |s: u8| match state.slots[s as usize] {
            Slot::Card(c) => db.card(c).name.clone(),
            _ => format!("slot {s}"),
        };
        match self {
            Action::PickWonder(w) => format!("pick wonder {}", db.wonder(w).name),
            Action::Build(s) => format!("build {}", slot_name(s)),
            Action::Discard(s) => format!("discard {}", slot_name(s)),
            Action::BuildWonder(s, w) => format!("build {} using {}", db.wonder(w).name, slot_name(s)),
            Action::PickToken(t) => format!("take token {}", db.token(t).name),
            Action::PickDiscarded(c) => format!("build {} from the discard pile", db.card(c).name),
            Action::DestroyCard(c) => format!("destroy {}", db.card(c).name),
            Action::ChooseAgeStarter(p) => format!("{p} starts the next age"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VictoryType {
    Civilian,
    Scientific,
    Military,
    /// The other side submitted an illegal action.
    Forfeit,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    /// `None` is a draw.
    pub winner: Option<Player>,
    pub victory: Option<VictoryType>,
    pub points: [Points; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Outcome {
    /// +1 win, -1 loss, 0 draw from the view of `p`.
    pub fn value_for(&self, p: Player) -> f32 {
        match self.winner {
            Some(w) if w == p => 1.0,
            Some(_) => -1.0,
            None => 0.0,
        }
    }
}

/// Why an action was rejected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    GameOver,
    AwaitingReveal,
    WrongPhase,
    PendingDecision,
    NotPending,
    NotOffered,
    SlotEmpty,
    SlotCovered,
    SlotHidden,
    Unaffordable,
    WonderNotOwned,
    WonderLimit,
    TokenUnavailable,
    CardUnavailable,
    WrongPlayer,
}

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("illegal action {action:?}: {reason:?}")]
    Illegal { action: Action, reason: Reason },
    #[error("contract violation: {0}")]
    Contract(&'static str),
    #[error("inconsistent reveal: {0}")]
    InconsistentReveal(String),
}

#[derive(Clone, Debug)]
pub enum StepResult {
    NextState(GameState),
    /// The state carries a [`RevealRequest`]; resolve it before acting.
    NeedsReveal(GameState),
    Final(GameState, Outcome),
}

impl StepResult {
    pub fn state(&self) -> &GameState {
        match self {
            StepResult::NextState(s) | StepResult::NeedsReveal(s) | StepResult::Final(s, _) => s,
        }
    }

    pub fn into_state(self) -> GameState {
        match self {
            StepResult::NextState(s) | StepResult::NeedsReveal(s) | StepResult::Final(s, _) => s,
        }
    }
}

/// Rules engine bound to a component database. Cheap to clone.
#[derive(Clone, Debug)]
pub struct Engine {
    db: Arc<ComponentDb>,
}

impl Default for Engine {
    fn default() -> Self {
        Engine::new(ComponentDb::base())
    }
}

impl Engine {
    pub fn new(db: Arc<ComponentDb>) -> Engine {
        Engine { db }
    }

    pub fn db(&self) -> &ComponentDb {
        &self.db
    }

    pub fn db_arc(&self) -> &Arc<ComponentDb> {
        &self.db
    }
}

/// FNV-1a over the canonical JSON form of a state.
pub fn state_hash(state: &GameState) -> u64 {
    let bytes = serde_json::to_vec(state).expect("state serializes");
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
