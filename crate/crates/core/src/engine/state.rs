use serde::{Deserialize, Serialize};

use super::{Pending, Phase, Player, RevealRequest, VictoryType};
use crate::data::{
    Age, CardId, CardSet, Color, ComponentDb, Effect, Resource, ScienceSymbol, TokenSet,
    WonderSet, SLOTS,
};

/// Public view of one layout position.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Slot {
    /// Taken, or no age in progress.
    #[default]
    Empty,
    /// Face down; identity unknown to both players.
    Hidden,
    /// Face up.
    Card(CardId),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct City {
    pub coins: u32,
    pub cards: CardSet,
    pub wonders_built: WonderSet,
    pub wonders_unbuilt: WonderSet,
    pub tokens: TokenSet,
    /// Cards used to build wonders.
    pub tucked: CardSet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Draft {
    /// Wonders on the table, not yet taken.
    pub offered: WonderSet,
    /// Every wonder revealed so far.
    pub seen: WonderSet,
    /// Wonders assigned so far (0..=8).
    pub picks: u8,
}

/// Picker of each of the 8 draft assignments. The 4th and 8th are automatic.
pub const DRAFT_ORDER: [Player; 8] = [
    Player::P1,
    Player::P2,
    Player::P2,
    Player::P1,
    Player::P2,
    Player::P1,
    Player::P1,
    Player::P2,
];

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GameState {
    pub phase: Phase,
    pub to_move: Player,
    pub slots: [Slot; SLOTS],
    /// Cards of the current age pool not yet seen by either player.
    pub unseen: CardSet,
    pub discard: CardSet,
    pub cities: [City; 2],
    /// Conflict pawn; positive means toward the second player's capital.
    pub military: i8,
    /// Looting tokens still on the track: bit 0/1 cost P2 2/5 coins, bit 2/3
    /// cost P1 2/5 coins.
    pub looting: u8,
    pub board_tokens: TokenSet,
    pub box_tokens: TokenSet,
    pub library_offer: TokenSet,
    pub draft: Draft,
    pub pending: Option<Pending>,
    pub reveal: Option<RevealRequest>,
    pub wonders_built_total: u8,
    pub last_actor: Player,
    pub extra_turn: bool,
    /// Set on an immediate scientific or military victory.
    pub decided: Option<(Player, VictoryType)>,
}

impl GameState {
    pub fn city(&self, p: Player) -> &City {
        &self.cities[p.index()]
    }

    pub fn city_mut(&mut self, p: Player) -> &mut City {
        &mut self.cities[p.index()]
    }

    pub fn is_terminal(&self) -> bool {
        self.phase == Phase::Terminal
    }

    pub fn is_afterstate(&self) -> bool {
        self.reveal.is_some()
    }

    pub fn age(&self) -> Option<Age> {
        match self.phase {
            Phase::Age(a) => Some(a),
            _ => None,
        }
    }

    /// Whether any card remains in the layout.
    pub fn layout_empty(&self) -> bool {
        self.slots.iter().all(|s| *s == Slot::Empty)
    }

    pub fn cards_left(&self) -> usize {
        self.slots.iter().filter(|s| **s != Slot::Empty).count()
    }

    /// Occupied slots with no card on top of them.
    pub fn accessible<'a>(&'a self, db: &'a ComponentDb) -> impl Iterator<Item = usize> + 'a {
        (0..SLOTS).filter(move |&s| self.is_accessible(db, s))
    }

    pub fn is_accessible(&self, db: &ComponentDb, slot: usize) -> bool {
        let Some(age) = self.age() else { return false };
        slot < SLOTS
            && self.slots[slot] != Slot::Empty
            && db
                .covered_by(age, slot)
                .iter()
                .all(|&c| self.slots[c as usize] == Slot::Empty)
    }
}

impl City {
    pub fn color_count(&self, db: &ComponentDb, color: Color) -> u32 {
        self.cards.intersection(db.cards_of_color(color)).len() as u32
    }

    /// Fixed production of brown and grey cards (what the opponent trades against).
    pub fn production(&self, db: &ComponentDb) -> [u8; 5] {
        let mut out = [0u8; 5];
        for c in self.cards.iter() {
            for e in &db.card(c).effects {
                if let Effect::Produce { resource, amount } = e {
                    out[*resource as usize] += amount;
                }
            }
        }
        out
    }

    /// One-of-several production from yellow cards and built wonders.
    pub fn production_choices(&self, db: &ComponentDb) -> Vec<Vec<Resource>> {
        let mut out = Vec::new();
        let card_effects = self.cards.iter().flat_map(|c| db.card(c).effects.iter());
        let wonder_effects = self.wonders_built.iter().flat_map(|w| db.wonder(w).effects.iter());
        for e in card_effects.chain(wonder_effects) {
            if let Effect::ProduceChoice { options } = e {
                out.push(options.clone());
            }
        }
        out
    }

    /// Resources this city buys for 1 coin.
    pub fn trade_discounts(&self, db: &ComponentDb) -> [bool; 5] {
        let mut out = [false; 5];
        for c in self.cards.iter() {
            for e in &db.card(c).effects {
                if let Effect::TradeDiscount { resources } = e {
                    for r in resources {
                        out[*r as usize] = true;
                    }
                }
            }
        }
        out
    }

    /// Distinct science symbols from cards and tokens.
    pub fn science_symbols(&self, db: &ComponentDb) -> [u8; 7] {
        let mut out = [0u8; 7];
        for c in self.cards.iter() {
            if let Some(s) = db.card(c).science() {
                out[s as usize] += 1;
            }
        }
        for t in self.tokens.iter() {
            for e in &db.token(t).effects {
                if let Effect::Science { symbol } = e {
                    out[*symbol as usize] += 1;
                }
            }
        }
        out
    }

    pub fn distinct_science(&self, db: &ComponentDb) -> usize {
        self.science_symbols(db).iter().filter(|&&n| n > 0).count()
    }

    pub fn has_symbol(&self, db: &ComponentDb, symbol: ScienceSymbol) -> bool {
        self.science_symbols(db)[symbol as usize] > 0
    }

    pub fn has_token_effect(&self, db: &ComponentDb, pred: impl Fn(&Effect) -> bool) -> bool {
        self.tokens.iter().any(|t| db.token(t).effects.iter().any(&pred))
    }

    pub fn has_chain(&self, db: &ComponentDb, symbol: crate::data::ChainSymbol) -> bool {
        self.cards.iter().any(|c| db.card(c).chain_to == Some(symbol))
    }
}
