//! Scenario builders shared by the integration tests.
#![allow(dead_code)]

pub mod oracles;
#[allow(unused_imports)]
pub use oracles::*;

use duelzero_core::data::{Age, CardId, TokenId, TokenSet, WonderId, WonderSet};
use duelzero_core::engine::{
    Action, Decision, Engine, GameState, Player, Policy, Reveal, RevealRequest, StepResult,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn engine() -> Engine {
    Engine::default()
}

pub fn card(e: &Engine, key: &str) -> CardId {
    e.db().card_id(key).unwrap_or_else(|| panic!("no card {key}"))
}

pub fn wonder(e: &Engine, key: &str) -> WonderId {
    e.db().wonder_id(key).unwrap_or_else(|| panic!("no wonder {key}"))
}

pub fn token(e: &Engine, key: &str) -> TokenId {
    e.db().token_id(key).unwrap_or_else(|| panic!("no token {key}"))
}

/// Afterstate at the end of the draft, awaiting the deal of `age`.
pub fn drafted(e: &Engine, p1: [&str; 4], p2: [&str; 4], board: [&str; 5], age: Age) -> GameState {
    let board: TokenSet = board.iter().map(|t| token(e, t)).collect();
    let mut s = e.initial_state(&Default::default(), board, WonderSet::EMPTY);
    for (p, names) in [(Player::P1, p1), (Player::P2, p2)] {
        for n in names {
            let w = wonder(e, n);
            s.city_mut(p).wonders_unbuilt.insert(w);
            s.draft.seen.insert(w);
        }
    }
    s.draft.picks = 8;
    s.reveal = Some(RevealRequest::deal(age));
    s
}

pub const P1_WONDERS: [&str; 4] = ["sphinx", "statue_of_zeus", "great_library", "mausoleum"];
pub const P2_WONDERS: [&str; 4] = ["pyramids", "colossus", "piraeus", "appian_way"];
pub const BOARD: [&str; 5] = ["agriculture", "law", "strategy", "theology", "urbanism"];

/// Deal `age` with the named cards at the given face-up slots; other face-up
/// slots get the lowest remaining card ids.
pub fn deal(e: &Engine, s: &GameState, placements: &[(u8, &str)]) -> GameState {
    let age = s.reveal.as_ref().and_then(|r| r.deal).expect("deal pending");
    let named: Vec<(u8, CardId)> = placements.iter().map(|&(slot, n)| (slot, card(e, n))).collect();
    let mut filler = e
        .db()
        .age_deck(age)
        .iter()
        .filter(|c| !named.iter().any(|(_, n)| n == c));
    let mut r = Reveal::default();
    for slot in e.face_up_slots(age) {
        let c = named
            .iter()
            .find(|(s, _)| *s == slot)
            .map(|(_, c)| *c)
            .unwrap_or_else(|| filler.next().unwrap());
        r.cards.push((slot, c));
    }
    match e.resolve_reveal(s, &r).expect("scripted deal is consistent") {
        StepResult::NextState(s) => s,
        other => panic!("unexpected {other:?}"),
    }
}

/// Standard age-I opening with the named cards placed.
pub fn age_one(e: &Engine, placements: &[(u8, &str)]) -> GameState {
    deal(e, &drafted(e, P1_WONDERS, P2_WONDERS, BOARD, Age::I), placements)
}

pub fn age_state(e: &Engine, age: Age, placements: &[(u8, &str)]) -> GameState {
    deal(e, &drafted(e, P1_WONDERS, P2_WONDERS, BOARD, age), placements)
}

pub fn step(e: &Engine, s: &GameState, a: Action) -> StepResult {
    e.apply(s, a).unwrap_or_else(|err| panic!("{err}"))
}

pub fn next(e: &Engine, s: &GameState, a: Action) -> GameState {
    match step(e, s, a) {
        StepResult::NextState(s) => s,
        other => panic!("expected a plain next state, got {other:?}"),
    }
}

pub struct Uniform(pub ChaCha8Rng);

impl Uniform {
    pub fn new(seed: u64) -> Self {
        Uniform(ChaCha8Rng::seed_from_u64(seed))
    }
}

impl Policy for Uniform {
    fn name(&self) -> String {
        "uniform".into()
    }

    fn decide(&mut self, _: &Engine, _: &GameState, legal: &[Action]) -> Decision {
        legal[self.0.random_range(0..legal.len())].into()
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Apply `a`, then answer any slot reveal with the lowest unseen card ids.
pub fn next_revealing(e: &Engine, s: &GameState, a: Action) -> GameState {
    match step(e, s, a) {
        StepResult::NextState(s) => s,
        StepResult::NeedsReveal(s) => {
            let req = s.reveal.clone().unwrap();
            assert!(req.deal.is_none() && !req.library && !req.wonders);
            let mut r = Reveal::default();
            let mut pool = s.unseen.iter();
            for &slot in &req.slots {
                r.cards.push((slot, pool.next().unwrap()));
            }
            e.resolve_reveal(&s, &r).unwrap().into_state()
        }
        other => panic!("unexpected {other:?}"),
    }
}
