//! Wire types. Everything a client sees goes through these, and they are
//! built only from public information.

use duelzero_core::data::{Age, ComponentDb, TokenSet};
use duelzero_core::engine::{
    civilian_points, state_hash, Action, Engine, GameState, Outcome, Pending, Phase, Player, Reveal, Slot,
    TokenSource, VictoryType,
};
use duelzero_core::mcts::SearchResult;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Seats are numbered 1 and 2 on the wire.
pub fn seat_of(p: Player) -> u8 {
    p.index() as u8 + 1
}

pub fn player_of(seat: u8) -> Option<Player> {
    match seat {
        1 => Some(Player::P1),
        2 => Some(Player::P2),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Face {
    Empty,
    Hidden,
    Up,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotView {
    pub slot: u8,
    pub row: u8,
    pub column: u8,
    pub face: Face,
    /// Card key; present only for face-up cards.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub card: Option<String>,
    pub accessible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CityView {
    pub seat: u8,
    pub coins: u32,
    pub cards: Vec<String>,
    pub wonders_built: Vec<String>,
    pub wonders_unbuilt: Vec<String>,
    pub tokens: Vec<String>,
    /// Victory points if the game ended now by civilian count.
    pub points: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LootView {
    /// Seat that loses the coins.
    pub against: u8,
    pub coins: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DraftView {
    pub offered: Vec<String>,
    pub picks: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendingView {
    /// pick_token, pick_discarded, destroy or choose_starter.
    pub kind: String,
    pub seat: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LegalAction {
    pub action: Action,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeView {
    pub winner: Option<u8>,
    pub victory: Option<VictoryType>,
    pub points: [u32; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl OutcomeView {
    pub fn new(o: &Outcome) -> OutcomeView {
        OutcomeView {
            winner: o.winner.map(seat_of),
            victory: o.victory,
            points: [o.points[0].total, o.points[1].total],
            note: o.note.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateView {
    pub schema_version: u32,
    pub session: String,
    /// Seat the view was built for; `None` for a spectator.
    pub viewer: Option<u8>,
    /// wonder_draft, age_1, age_2, age_3 or terminal.
    pub phase: String,
    pub to_move: u8,
    pub slots: Vec<SlotView>,
    pub players: [CityView; 2],
    /// Conflict pawn; positive is toward seat 2's capital.
    pub military: i8,
    pub looting: Vec<LootView>,
    pub board_tokens: Vec<String>,
    /// The Great Library draw, shown only to the seat choosing from it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub library_offer: Option<Vec<String>>,
    pub discard: Vec<String>,
    pub draft: DraftView,
    pub pending: Option<PendingView>,
    /// Legal actions, present when the viewer is the seat to move.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub legal: Option<Vec<LegalAction>>,
    pub outcome: Option<OutcomeView>,
    /// Number of game events so far.
    pub events: usize,
    /// Hex hash of the full public state.
    pub state_hash: String,
}

pub fn phase_name(p: Phase) -> String {
    match p {
        Phase::WonderDraft => "wonder_draft".into(),
        Phase::Age(a) => format!("age_{}", a.index() + 1),
        Phase::Terminal => "terminal".into(),
    }
}

fn tokens(db: &ComponentDb, set: TokenSet) -> Vec<String> {
    set.iter().map(|t| db.token(t).id.clone()).collect()
}

/// Whether `viewer` may see the tokens offered by the Great Library.
pub fn sees_library(s: &GameState, viewer: Option<Player>) -> bool {
    match s.pending {
        Some(Pending::PickToken { player, source: TokenSource::Library }) => viewer == Some(player),
        _ => false,
    }
}

pub fn legal_view(engine: &Engine, s: &GameState, legal: &[Action]) -> Vec<LegalAction> {
    legal.iter().map(|&a| LegalAction { action: a, label: a.describe(engine.db(), s) }).collect()
}

pub fn state_view(
    engine: &Engine,
    session: &str,
    s: &GameState,
    outcome: Option<&Outcome>,
    events: usize,
    viewer: Option<Player>,
) -> StateView {
    let db = engine.db();
    let layout = s.age().map(|a: Age| db.layout(a));
    let slots = s
        .slots
        .iter()
        .enumerate()
        .map(|(i, slot)| {
            let (row, column) = layout.and_then(|l| l.slots.get(i)).map_or((0, 0), |d| (d.row, d.column));
            let (face, card) = match slot {
                Slot::Empty => (Face::Empty, None),
                Slot::Hidden => (Face::Hidden, None),
                Slot::Card(c) => (Face::Up, Some(db.card(*c).id.clone())),
            };
            SlotView { slot: i as u8, row, column, face, card, accessible: s.is_accessible(db, i) }
        })
        .collect();
    let points = civilian_points(db, s);
    let players = Player::BOTH.map(|p| {
        let c = s.city(p);
        CityView {
            seat: seat_of(p),
            coins: c.coins,
            cards: c.cards.iter().map(|x| db.card(x).id.clone()).collect(),
            wonders_built: c.wonders_built.iter().map(|w| db.wonder(w).id.clone()).collect(),
            wonders_unbuilt: c.wonders_unbuilt.iter().map(|w| db.wonder(w).id.clone()).collect(),
            tokens: tokens(db, c.tokens),
            points: points[p.index()].total,
        }
    });
    let looting = [(0, 2, 2), (1, 2, 5), (2, 1, 2), (3, 1, 5)]
        .iter()
        .filter(|(bit, _, _)| s.looting & (1 << bit) != 0)
        .map(|&(_, against, coins)| LootView { against, coins })
        .collect();
    let pending = s.pending.map(|p| {
        let (kind, detail) = match p {
            Pending::PickToken { source, .. } => {
                ("pick_token", Some(if source == TokenSource::Library { "library_draw" } else { "board" }.to_string()))
            }
            Pending::PickDiscarded { .. } => ("pick_discarded", None),
            Pending::Destroy { color, .. } => ("destroy", Some(format!("{color:?}").to_lowercase())),
            Pending::ChooseStarter { .. } => ("choose_starter", None),
        };
        PendingView { kind: kind.into(), seat: seat_of(p.player()), detail }
    });
    let legal = match viewer {
        Some(v) if v == s.to_move && outcome.is_none() && !s.is_afterstate() => {
            Some(legal_view(engine, s, &engine.legal_actions(s).unwrap_or_default()))
        }
        _ => None,
    };
    StateView {
        schema_version: SCHEMA_VERSION,
        session: session.to_string(),
        viewer: viewer.map(seat_of),
        phase: phase_name(s.phase),
        to_move: seat_of(s.to_move),
        slots,
        players,
        military: s.military,
        looting,
        board_tokens: tokens(db, s.board_tokens),
        library_offer: sees_library(s, viewer).then(|| tokens(db, s.library_offer)),
        discard: s.discard.iter().map(|c| db.card(c).id.clone()).collect(),
        draft: DraftView {
            offered: s.draft.offered.iter().map(|w| db.wonder(w).id.clone()).collect(),
            picks: s.draft.picks,
        },
        pending,
        legal,
        outcome: outcome.map(OutcomeView::new),
        events,
        state_hash: format!("{:016x}", state_hash(s)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeView {
    pub action: Action,
    pub label: String,
    pub visits: u32,
    /// Mean value for the seat to move.
    pub q: f32,
    pub prior: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub seat: u8,
    pub simulations: u32,
    pub value: f32,
    /// Every root action, most visited first.
    pub edges: Vec<EdgeView>,
    pub principal_variation: Vec<Action>,
}

impl SearchSummary {
    pub fn new(engine: &Engine, s: &GameState, r: &SearchResult) -> SearchSummary {
        let mut edges: Vec<EdgeView> = r
            .edges
            .iter()
            .map(|e| EdgeView {
                action: e.action,
                label: e.action.describe(engine.db(), s),
                visits: e.visits,
                q: e.q,
                prior: e.prior,
            })
            .collect();
        // Stable: ties stay in vocabulary order, so the first entry is the
        // action play-mode search picks.
        edges.sort_by(|a, b| b.visits.cmp(&a.visits));
        SearchSummary {
            seat: seat_of(r.player),
            simulations: r.simulations,
            value: r.value,
            edges,
            principal_variation: r.principal_variation.clone(),
        }
    }

    /// A forced move, played without searching.
    pub fn forced(engine: &Engine, s: &GameState, a: Action) -> SearchSummary {
        SearchSummary {
            seat: seat_of(s.to_move),
            simulations: 0,
            value: 0.0,
            edges: vec![EdgeView { action: a, label: a.describe(engine.db(), s), visits: 0, q: 0.0, prior: 1.0 }],
            principal_variation: vec![a],
        }
    }
}

/// Server-push messages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Notification {
    TurnChange { to_move: u8, phase: String, events: usize },
    /// Newly face-up cards and wonders. Library draws are private, so only
    /// their size is sent.
    Reveal { cards: Vec<(u8, String)>, wonders: Vec<String>, library_tokens: usize },
    EngineProgress { simulations: u32, total: u32 },
    GameOver { outcome: OutcomeView },
}

impl Notification {
    pub fn reveal(db: &ComponentDb, r: &Reveal) -> Notification {
        Notification::Reveal {
            cards: r.cards.iter().map(|&(slot, c)| (slot, db.card(c).id.clone())).collect(),
            wonders: r.wonders.iter().map(|w| db.wonder(w).id.clone()).collect(),
            library_tokens: r.tokens.len(),
        }
    }

    /// Name used as the event type on the stream.
    pub fn kind(&self) -> &'static str {
        match self {
            Notification::TurnChange { .. } => "turn_change",
            Notification::Reveal { .. } => "reveal",
            Notification::EngineProgress { .. } => "engine_progress",
            Notification::GameOver { .. } => "game_over",
        }
    }
}

/// A notification with its position in the session's stream. Progress
/// messages are transient and carry no id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub id: Option<u64>,
    #[serde(flatten)]
    pub message: Notification,
}
