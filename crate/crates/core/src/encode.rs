//! State encoding and the global action vocabulary.
//!
//! A state becomes a set of tokens. Each token pairs a component (a card, a
//! wonder, a progress token, the face-down card, or a scalar kind) with a
//! position (where the component is, or the bucketed value of a scalar). Both
//! halves index one shared embedding table of [`VOCAB`] entries.
//!
//! The sequence always starts with the summary token and is otherwise sorted
//! by position, then component, so equal states encode identically however
//! they were reached.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CardId, Color, TokenId, WonderId, CARD_COUNT, SLOTS, TOKEN_COUNT, WONDER_COUNT};
use crate::engine::{Action, Engine, EngineError, GameState, Pending, Phase, Player, Slot, TokenSource};

/// Bumped whenever the token layout changes.
pub const ENCODING_VERSION: u32 = 1;

// Components.
pub const CLS: u16 = 0;
const CARD_BASE: u16 = 1;
pub const HIDDEN_CARD: u16 = CARD_BASE + CARD_COUNT as u16;
const WONDER_BASE: u16 = HIDDEN_CARD + 1;
const TOKEN_BASE: u16 = WONDER_BASE + WONDER_COUNT as u16;
const SCALAR_BASE: u16 = TOKEN_BASE + TOKEN_COUNT as u16;

/// Scalar kinds, in component order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u16)]
pub enum Scalar {
    CoinsP1,
    CoinsP2,
    Military,
    Phase,
    ToMove,
    WondersBuilt,
    Pending,
    Reveal,
    Looting,
    ExtraTurn,
}

pub const SCALARS: usize = 10;
const COMPONENTS: u16 = SCALAR_BASE + SCALARS as u16;

// Positions.
const POS_NONE: u16 = COMPONENTS;
const POS_SLOT_UP: u16 = POS_NONE + 1;
const POS_SLOT_DOWN: u16 = POS_SLOT_UP + SLOTS as u16;
const POS_CITY: u16 = POS_SLOT_DOWN + SLOTS as u16;
const POS_DISCARD: u16 = POS_CITY + 2;
const POS_TUCKED: u16 = POS_DISCARD + 1;
const POS_DRAFT_OFFER: u16 = POS_TUCKED + 2;
const POS_WONDER_UNBUILT: u16 = POS_DRAFT_OFFER + 1;
const POS_WONDER_BUILT: u16 = POS_WONDER_UNBUILT + 2;
const POS_TOKEN_BOARD: u16 = POS_WONDER_BUILT + 2;
const POS_TOKEN_OWNED: u16 = POS_TOKEN_BOARD + 1;
const POS_TOKEN_LIBRARY: u16 = POS_TOKEN_OWNED + 2;
const POS_TOKEN_BOX: u16 = POS_TOKEN_LIBRARY + 1;
/// Numeric buckets shared by every scalar kind.
const POS_VALUE: u16 = POS_TOKEN_BOX + 1;
pub const VALUE_BUCKETS: u16 = 23;

/// Size of the shared component and position embedding table.
pub const VOCAB: usize = (POS_VALUE + VALUE_BUCKETS) as usize;

/// Longest possible sequence: the summary token, at most 60 cards (every
/// age fills 20 slots, and every card leaves the layout to a known place),
/// every wonder, every progress token and the scalars.
pub const MAX_TOKENS: usize = 1 + 3 * SLOTS + WONDER_COUNT + TOKEN_COUNT + SCALARS;

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    /// (component, position) pairs, both indices into the shared table.
    pub tokens: Vec<[u16; 2]>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Coin bucket: one per value up to 19, then 20-24, 25-29 and 30+.
pub fn coin_bucket(coins: u32) -> u16 {
    match coins {
        0..=19 => coins as u16,
        20..=24 => 20,
        25..=29 => 21,
        _ => 22,
    }
}

fn card_token(c: CardId) -> u16 {
    CARD_BASE + c.0 as u16
}

fn wonder_token(w: WonderId) -> u16 {
    WONDER_BASE + w.0 as u16
}

fn token_token(t: TokenId) -> u16 {
    TOKEN_BASE + t.0 as u16
}

fn scalar(kind: Scalar, value: u16) -> [u16; 2] {
    debug_assert!(value < VALUE_BUCKETS);
    [SCALAR_BASE + kind as u16, POS_VALUE + value]
}

fn pending_code(p: Option<Pending>) -> u16 {
    match p {
        None => 0,
        Some(Pending::PickToken { source: TokenSource::Board, .. }) => 1,
        Some(Pending::PickToken { source: TokenSource::Library, .. }) => 2,
        Some(Pending::PickDiscarded { .. }) => 3,
        Some(Pending::Destroy { color: Color::Brown, .. }) => 4,
        Some(Pending::Destroy { .. }) => 5,
        Some(Pending::ChooseStarter { .. }) => 6,
    }
}

/// Token sequence of a state or afterstate. Face-down cards appear as
/// anonymous hidden tokens; cards set aside or still unseen are absent.
pub fn encode(s: &GameState) -> TokenSequence {
    let mut tokens = Vec::with_capacity(MAX_TOKENS);
    tokens.push([CLS, POS_NONE]);
    for (i, slot) in s.slots.iter().enumerate() {
        match slot {
            Slot::Empty => {}
            Slot::Hidden => tokens.push([HIDDEN_CARD, POS_SLOT_DOWN + i as u16]),
            Slot::Card(c) => tokens.push([card_token(*c), POS_SLOT_UP + i as u16]),
        }
    }
    for p in Player::BOTH {
        let city = s.city(p);
        let side = p.index() as u16;
        tokens.extend(city.cards.iter().map(|c| [card_token(c), POS_CITY + side]));
        tokens.extend(city.tucked.iter().map(|c| [card_token(c), POS_TUCKED + side]));
        tokens.extend(city.wonders_unbuilt.iter().map(|w| [wonder_token(w), POS_WONDER_UNBUILT + side]));
        tokens.extend(city.wonders_built.iter().map(|w| [wonder_token(w), POS_WONDER_BUILT + side]));
        tokens.extend(city.tokens.iter().map(|t| [token_token(t), POS_TOKEN_OWNED + side]));
    }
    tokens.extend(s.discard.iter().map(|c| [card_token(c), POS_DISCARD]));
    tokens.extend(s.draft.offered.iter().map(|w| [wonder_token(w), POS_DRAFT_OFFER]));
    tokens.extend(s.board_tokens.iter().map(|t| [token_token(t), POS_TOKEN_BOARD]));
    tokens.extend(s.library_offer.iter().map(|t| [token_token(t), POS_TOKEN_LIBRARY]));
    tokens.extend(
        s.box_tokens
            .difference(s.library_offer)
            .iter()
            .map(|t| [token_token(t), POS_TOKEN_BOX]),
    );

    let phase = match s.phase {
        Phase::WonderDraft => 0,
        Phase::Age(a) => 1 + a.index() as u16,
        Phase::Terminal => 4,
    };
    let reveal = s.reveal.as_ref().map_or(0, |r| {
        u16::from(!r.slots.is_empty()) | u16::from(r.library) << 1 | u16::from(r.wonders) << 2 | u16::from(r.deal.is_some()) << 3
    });
    tokens.extend([
        scalar(Scalar::CoinsP1, coin_bucket(s.cities[0].coins)),
        scalar(Scalar::CoinsP2, coin_bucket(s.cities[1].coins)),
        scalar(Scalar::Military, (s.military.clamp(-9, 9) + 9) as u16),
        scalar(Scalar::Phase, phase),
        scalar(Scalar::ToMove, s.to_move.index() as u16),
        scalar(Scalar::WondersBuilt, s.wonders_built_total.min(7) as u16),
        scalar(Scalar::Pending, pending_code(s.pending)),
        scalar(Scalar::Reveal, reveal),
        scalar(Scalar::Looting, (s.looting & 0xf) as u16),
        scalar(Scalar::ExtraTurn, u16::from(s.extra_turn)),
    ]);
    tokens[1..].sort_unstable_by_key(|&[c, p]| (p, c));
    debug_assert!(tokens.len() <= MAX_TOKENS);
    TokenSequence { tokens }
}

// Action vocabulary layout, in the same order as `Action`'s derived ordering.
const PICK_WONDER: usize = 0;
const BUILD: usize = PICK_WONDER + WONDER_COUNT;
const DISCARD: usize = BUILD + SLOTS;
const BUILD_WONDER: usize = DISCARD + SLOTS;
const PICK_TOKEN: usize = BUILD_WONDER + SLOTS * WONDER_COUNT;
const PICK_DISCARDED: usize = PICK_TOKEN + TOKEN_COUNT;
const DESTROY: usize = PICK_DISCARDED + CARD_COUNT;
const STARTER: usize = DESTROY + CARD_COUNT;

/// Number of distinct actions.
pub const ACTIONS: usize = STARTER + 2;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncodeError {
    #[error("action index {0} out of range (vocabulary size {ACTIONS})")]
    IndexOutOfRange(usize),
    #[error("action {0:?} has an out-of-range payload")]
    BadPayload(Action),
}

pub fn action_index(a: Action) -> Result<usize, EncodeError> {
    let slot_ok = |s: u8| (s as usize) < SLOTS;
    let i = match a {
        Action::PickWonder(w) if (w.0 as usize) < WONDER_COUNT => PICK_WONDER + w.0 as usize,
        Action::Build(s) if slot_ok(s) => BUILD + s as usize,
        Action::Discard(s) if slot_ok(s) => DISCARD + s as usize,
        Action::BuildWonder(s, w) if slot_ok(s) && (w.0 as usize) < WONDER_COUNT => {
            BUILD_WONDER + s as usize * WONDER_COUNT + w.0 as usize
        }
        Action::PickToken(t) if (t.0 as usize) < TOKEN_COUNT => PICK_TOKEN + t.0 as usize,
        Action::PickDiscarded(c) if (c.0 as usize) < CARD_COUNT => PICK_DISCARDED + c.0 as usize,
        Action::DestroyCard(c) if (c.0 as usize) < CARD_COUNT => DESTROY + c.0 as usize,
        Action::ChooseAgeStarter(p) => STARTER + p.index(),
        _ => return Err(EncodeError::BadPayload(a)),
    };
    Ok(i)
}

pub fn index_action(i: usize) -> Result<Action, EncodeError> {
    let a = if i < BUILD {
        Action::PickWonder(WonderId(i as u8))
    } else if i < DISCARD {
        Action::Build((i - BUILD) as u8)
    } else if i < BUILD_WONDER {
        Action::Discard((i - DISCARD) as u8)
    } else if i < PICK_TOKEN {
        let k = i - BUILD_WONDER;
        Action::BuildWonder((k / WONDER_COUNT) as u8, WonderId((k % WONDER_COUNT) as u8))
    } else if i < PICK_DISCARDED {
        Action::PickToken(TokenId((i - PICK_TOKEN) as u8))
    } else if i < DESTROY {
        Action::PickDiscarded(CardId((i - PICK_DISCARDED) as u8))
    } else if i < STARTER {
        Action::DestroyCard(CardId((i - DESTROY) as u8))
    } else if i < ACTIONS {
        Action::ChooseAgeStarter(Player::from_index(i - STARTER))
    } else {
        return Err(EncodeError::IndexOutOfRange(i));
    };
    Ok(a)
}

/// Vocabulary indices of the legal actions, ascending.
pub fn legal_indices(engine: &Engine, s: &GameState) -> Result<Vec<usize>, EngineError> {
    Ok(engine
        .legal_actions(s)?
        .into_iter()
        .map(|a| action_index(a).expect("engine actions are in the vocabulary"))
        .collect())
}

pub fn legal_mask(engine: &Engine, s: &GameState) -> Result<Vec<bool>, EngineError> {
    let mut mask = vec![false; ACTIONS];
    for i in legal_indices(engine, s)? {
        mask[i] = true;
    }
    Ok(mask)
}
