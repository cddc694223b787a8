use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::state::Draft;
use super::{Engine, GameState, Phase, Player, Reveal, Slot};
use crate::data::{deal_age, Age, AgeDeal, CardSet, TokenSet, WonderId, WonderSet, SLOTS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetupConfig {
    /// Starting coins of the first and second player.
    pub coins: [u32; 2],
}

impl Default for SetupConfig {
    fn default() -> Self {
        SetupConfig { coins: [7, 7] }
    }
}

impl Engine {
    /// Initial state from public setup information.
    pub fn initial_state(&self, config: &SetupConfig, board_tokens: TokenSet, first_wonders: WonderSet) -> GameState {
        let db = self.db();
        let mut cities = [super::City::default(); 2];
        cities[0].coins = config.coins[0];
        cities[1].coins = config.coins[1];
        GameState {
            phase: Phase::WonderDraft,
            to_move: Player::P1,
            slots: [Slot::Empty; SLOTS],
            unseen: CardSet::EMPTY,
            discard: CardSet::EMPTY,
            cities,
            military: 0,
            looting: 0b1111,
            board_tokens,
            box_tokens: db.all_tokens().difference(board_tokens),
            library_offer: TokenSet::EMPTY,
            draft: Draft {
                offered: first_wonders,
                seen: first_wonders,
                picks: 0,
            },
            pending: None,
            reveal: None,
            wonders_built_total: 0,
            last_actor: Player::P1,
            extra_turn: false,
            decided: None,
        }
    }

    /// Reveal the board tokens and the first draft group.
    pub fn deal_setup<R: Rng + ?Sized>(&self, config: &SetupConfig, rng: &mut R) -> GameState {
        let db = self.db();
        let mut tokens: Vec<_> = db.all_tokens().iter().collect();
        tokens.shuffle(rng);
        let board: TokenSet = tokens[..db.rules.board_tokens].iter().copied().collect();
        let mut wonders: Vec<WonderId> = db.all_wonders().iter().collect();
        wonders.shuffle(rng);
        let first: WonderSet = wonders[..4].iter().copied().collect();
        self.initial_state(config, board, first)
    }
}

/// Holder of the hidden truth for one live game: the second draft group,
/// every age deal and the Great Library draw.
pub struct Dealer {
    engine: Engine,
    rng: ChaCha8Rng,
    second_group: WonderSet,
    deals: [Option<AgeDeal>; 3],
}

impl Dealer {
    /// Deal a fresh game. Everything is a function of `seed`.
    pub fn new(engine: &Engine, config: &SetupConfig, seed: u64) -> (Dealer, GameState) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = engine.deal_setup(config, &mut rng);
        let mut rest: Vec<WonderId> = engine.db().all_wonders().difference(state.draft.seen).iter().collect();
        rest.shuffle(&mut rng);
        let second_group = rest[..4].iter().copied().collect();
        let dealer = Dealer {
            engine: engine.clone(),
            rng,
            second_group,
            deals: [None, None, None],
        };
        (dealer, state)
    }

    /// The true outcome of the afterstate's pending reveal.
    pub fn reveal(&mut self, s: &GameState) -> Reveal {
        let mut out = Reveal::default();
        let Some(req) = &s.reveal else { return out };
        let db = self.engine.db();
        if let Some(age) = req.deal {
            let deal = deal_age(db, age, &mut self.rng);
            for slot in self.engine.face_up_slots(age) {
                out.cards.push((slot, deal.slots[slot as usize]));
            }
            self.deals[age.index()] = Some(deal);
            return out;
        }
        if !req.slots.is_empty() {
            let age = s.age().expect("slot reveal during an age");
            let deal = self.deals[age.index()].as_ref().expect("age was dealt");
            for &slot in &req.slots {
                out.cards.push((slot, deal.slots[slot as usize]));
            }
        }
        if req.library {
            let mut box_tokens: Vec<_> = s.box_tokens.iter().collect();
            box_tokens.shuffle(&mut self.rng);
            out.tokens = box_tokens
                .into_iter()
                .take(db.rules.library_draw)
                .collect();
        }
        if req.wonders {
            out.wonders = self.second_group;
        }
        out
    }

    pub fn deal(&self, age: Age) -> Option<&AgeDeal> {
        self.deals[age.index()].as_ref()
    }
}
