//! Legality, costs and transitions.

use arrayvec::ArrayVec;
use serde::{Deserialize, Serialize};

use super::state::DRAFT_ORDER;
use super::{
    Action, Engine, EngineError, GameState, Pending, Phase, Player, Reason, RevealRequest, Slot,
    StepResult, TokenSource, VictoryType,
};
use crate::data::{Age, CardId, Color, Effect, Resource, WonderId};

/// Coins due for a build.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payment {
    pub total: u32,
    /// Part of `total` spent buying resources from the bank.
    pub trade: u32,
    pub chained: bool,
}

impl Engine {
    /// Legal actions in vocabulary order.
    pub fn legal_actions(&self, s: &GameState) -> Result<Vec<Action>, EngineError> {
        let mut out = Vec::with_capacity(32);
        self.legal_actions_into(s, &mut out)?;
        Ok(out)
    }

    pub fn legal_actions_into(&self, s: &GameState, out: &mut Vec<Action>) -> Result<(), EngineError> {
        out.clear();
        if s.is_terminal() {
            return Err(EngineError::Contract("legal_actions on a terminal state"));
        }
        if s.is_afterstate() {
            return Err(EngineError::Contract("legal_actions on an unresolved afterstate"));
        }
        let db = self.db();
        let p = s.to_move;
        if let Some(pending) = s.pending {
            match pending {
                Pending::PickToken { source, .. } => {
                    let set = match source {
                        TokenSource::Board => s.board_tokens,
                        TokenSource::Library => s.library_offer,
                    };
                    out.extend(set.iter().map(Action::PickToken));
                }
                Pending::PickDiscarded { .. } => out.extend(s.discard.iter().map(Action::PickDiscarded)),
                Pending::Destroy { color, .. } => {
                    let targets = s.city(p.other()).cards.intersection(db.cards_of_color(color));
                    out.extend(targets.iter().map(Action::DestroyCard));
                }
                Pending::ChooseStarter { .. } => {
                    out.extend(Player::BOTH.map(Action::ChooseAgeStarter));
                }
            }
            return Ok(());
        }
        match s.phase {
            Phase::WonderDraft => out.extend(s.draft.offered.iter().map(Action::PickWonder)),
            Phase::Age(_) => {
                let open: ArrayVec<u8, 20> = s.accessible(db).map(|i| i as u8).collect();
                let coins = s.city(p).coins;
                for &slot in &open {
                    if let Slot::Card(c) = s.slots[slot as usize] {
                        if self.card_payment(s, p, c).total <= coins {
                            out.push(Action::Build(slot));
                        }
                    }
                }
                out.extend(open.iter().map(|&slot| Action::Discard(slot)));
                if s.wonders_built_total < db.rules.max_wonders_built {
                    let affordable: ArrayVec<WonderId, 12> = s
                        .city(p)
                        .wonders_unbuilt
                        .iter()
                        .filter(|&w| self.wonder_payment(s, p, w).total <= coins)
                        .collect();
                    for &slot in &open {
                        out.extend(affordable.iter().map(|&w| Action::BuildWonder(slot, w)));
                    }
                }
            }
            Phase::Terminal => unreachable!(),
        }
        Ok(())
    }

    /// Why `a` is illegal in `s`, if it is.
    pub fn check(&self, s: &GameState, a: Action) -> Result<(), Reason> {
        if s.is_terminal() {
            return Err(Reason::GameOver);
        }
        if s.is_afterstate() {
            return Err(Reason::AwaitingReveal);
        }
        let db = self.db();
        let p = s.to_move;
        let is_pending_kind = matches!(
            a,
            Action::PickToken(_) | Action::PickDiscarded(_) | Action::DestroyCard(_) | Action::ChooseAgeStarter(_)
        );
        if let Some(pending) = s.pending {
            return match (pending, a) {
                (Pending::PickToken { source, .. }, Action::PickToken(t)) => {
                    let set = match source {
                        TokenSource::Board => s.board_tokens,
                        TokenSource::Library => s.library_offer,
                    };
                    if set.contains(t) {
                        Ok(())
                    } else {
                        Err(Reason::TokenUnavailable)
                    }
                }
                (Pending::PickDiscarded { .. }, Action::PickDiscarded(c)) => {
                    if s.discard.contains(c) {
                        Ok(())
                    } else {
                        Err(Reason::CardUnavailable)
                    }
                }
                (Pending::Destroy { color, .. }, Action::DestroyCard(c)) => {
                    if s.city(p.other()).cards.contains(c) && db.card(c).color == color {
                        Ok(())
                    } else {
                        Err(Reason::CardUnavailable)
                    }
                }
                (Pending::ChooseStarter { .. }, Action::ChooseAgeStarter(_)) => Ok(()),
                _ => Err(Reason::PendingDecision),
            };
        }
        if is_pending_kind {
            return Err(Reason::NotPending);
        }
        match (s.phase, a) {
            (Phase::WonderDraft, Action::PickWonder(w)) => {
                if s.draft.offered.contains(w) {
                    Ok(())
                } else {
                    Err(Reason::NotOffered)
                }
            }
            (Phase::Age(_), Action::Build(slot) | Action::Discard(slot) | Action::BuildWonder(slot, _)) => {
                let slot = slot as usize;
                match s.slots.get(slot) {
                    None | Some(Slot::Empty) => return Err(Reason::SlotEmpty),
                    Some(Slot::Hidden) => return Err(Reason::SlotHidden),
                    Some(Slot::Card(_)) => {}
                }
                if !s.is_accessible(db, slot) {
                    return Err(Reason::SlotCovered);
                }
                let Slot::Card(card) = s.slots[slot] else { unreachable!() };
                let coins = s.city(p).coins;
                match a {
                    Action::Build(_) => {
                        if self.card_payment(s, p, card).total > coins {
                            return Err(Reason::Unaffordable);
                        }
                    }
                    Action::BuildWonder(_, w) => {
                        if !s.city(p).wonders_unbuilt.contains(w) {
                            return Err(Reason::WonderNotOwned);
                        }
                        if s.wonders_built_total >= db.rules.max_wonders_built {
                            return Err(Reason::WonderLimit);
                        }
                        if self.wonder_payment(s, p, w).total > coins {
                            return Err(Reason::Unaffordable);
                        }
                    }
                    _ => {}
                }
                Ok(())
            }
            _ => Err(Reason::WrongPhase),
        }
    }

    pub fn is_legal(&self, s: &GameState, a: Action) -> bool {
        self.check(s, a).is_ok()
    }

    /// Trade price per resource unit for `p`.
    pub fn trade_prices(&self, s: &GameState, p: Player) -> [u32; 5] {
        let db = self.db();
        let opp = s.city(p.other()).production(db);
        let discount = s.city(p).trade_discounts(db);
        let mut out = [0u32; 5];
        for r in 0..5 {
            out[r] = if discount[r] {
                1
            } else {
                db.rules.trade_base_cost + opp[r] as u32
            };
        }
        out
    }

    /// Cheapest coins spent on trading to cover `need`, ignoring the
    /// `free_units` most expensive missing units.
    pub fn trade_cost(&self, s: &GameState, p: Player, need: [u8; 5], free_units: u8) -> u32 {
        let db = self.db();
        let city = s.city(p);
        let prod = city.production(db);
        let mut deficit = [0u8; 5];
        for r in 0..5 {
            deficit[r] = need[r].saturating_sub(prod[r]);
        }
        if deficit.iter().all(|&d| d == 0) {
            return 0;
        }
        let prices = self.trade_prices(s, p);
        let choices = city.production_choices(db);
        let mut best = u32::MAX;
        cover(&choices, 0, &mut deficit, &prices, free_units, &mut best);
        best
    }

    pub fn card_payment(&self, s: &GameState, p: Player, card: CardId) -> Payment {
        let db = self.db();
        let def = db.card(card);
        if let Some(symbol) = def.chain_from {
            if s.city(p).has_chain(db, symbol) {
                return Payment {
                    total: 0,
                    trade: 0,
                    chained: true,
                };
            }
        }
        let mut free = 0;
        for t in s.city(p).tokens.iter() {
            for e in &db.token(t).effects {
                if let Effect::ColorDiscount { color, resources } = e {
                    if *color == def.color {
                        free += resources;
                    }
                }
            }
        }
        let trade = self.trade_cost(s, p, def.cost.counts(), free);
        Payment {
            total: def.cost.coins + trade,
            trade,
            chained: false,
        }
    }

    pub fn wonder_payment(&self, s: &GameState, p: Player, w: WonderId) -> Payment {
        let db = self.db();
        let mut free = 0;
        for t in s.city(p).tokens.iter() {
            for e in &db.token(t).effects {
                if let Effect::WonderDiscount { resources } = e {
                    free += resources;
                }
            }
        }
        let trade = self.trade_cost(s, p, crate::data::resource_counts(&db.wonder(w).cost), free);
        Payment {
            total: trade,
            trade,
            chained: false,
        }
    }

    /// Apply a legal action.
    pub fn apply(&self, s: &GameState, a: Action) -> Result<StepResult, EngineError> {
        self.check(s, a)
            .map_err(|reason| EngineError::Illegal { action: a, reason })?;
        Ok(self.apply_unchecked(s, a))
    }

    /// Apply an action already known to be legal.
    pub fn apply_unchecked(&self, s: &GameState, a: Action) -> StepResult {
        let mut s = s.clone();
        let p = s.to_move;
        match a {
            Action::PickWonder(w) => return self.draft_pick(s, w),
            Action::Build(_) | Action::Discard(_) | Action::BuildWonder(..) => {
                return self.card_action(s, a);
            }
            Action::PickToken(t) => {
                let source = match s.pending.take() {
                    Some(Pending::PickToken { source, .. }) => source,
                    other => unreachable!("token pick with pending {other:?}"),
                };
                match source {
                    TokenSource::Board => s.board_tokens.remove(t),
                    TokenSource::Library => {
                        s.box_tokens.remove(t);
                        s.library_offer = Default::default();
                    }
                }
                self.gain_token(&mut s, p, t);
            }
            Action::PickDiscarded(c) => {
                s.pending = None;
                s.discard.remove(c);
                self.gain_card(&mut s, p, c, false);
            }
            Action::DestroyCard(c) => {
                s.pending = None;
                s.city_mut(p.other()).cards.remove(c);
                s.discard.insert(c);
            }
            Action::ChooseAgeStarter(starter) => {
                s.pending = None;
                let next = s
                    .age()
                    .and_then(Age::next)
                    .expect("starter choice only between ages");
                s.to_move = starter;
                s.extra_turn = false;
                s.reveal = Some(RevealRequest::deal(next));
                return StepResult::NeedsReveal(s);
            }
        }
        self.advance(s)
    }

    fn draft_pick(&self, mut s: GameState, w: WonderId) -> StepResult {
        let picker = DRAFT_ORDER[s.draft.picks as usize];
        s.draft.offered.remove(w);
        s.city_mut(picker).wonders_unbuilt.insert(w);
        s.draft.picks += 1;
        if s.draft.picks == 3 || s.draft.picks == 7 {
            let last = s.draft.offered.iter().next().expect("one wonder left in the group");
            let owner = DRAFT_ORDER[s.draft.picks as usize];
            s.draft.offered.remove(last);
            s.city_mut(owner).wonders_unbuilt.insert(last);
            s.draft.picks += 1;
        }
        match s.draft.picks {
            4 => {
                s.to_move = DRAFT_ORDER[4];
                s.reveal = Some(RevealRequest::wonders());
                StepResult::NeedsReveal(s)
            }
            8 => {
                s.to_move = Player::P1;
                s.reveal = Some(RevealRequest::deal(Age::I));
                StepResult::NeedsReveal(s)
            }
            n => {
                s.to_move = DRAFT_ORDER[n as usize];
                StepResult::NextState(s)
            }
        }
    }

    fn card_action(&self, mut s: GameState, a: Action) -> StepResult {
        let db = self.db();
        let p = s.to_move;
        let age = s.age().expect("card action during an age");
        let slot = a.slot().expect("card action");
        let Slot::Card(card) = s.slots[slot] else {
            unreachable!("card action on a non-visible slot")
        };
        s.slots[slot] = Slot::Empty;
        let mut request = RevealRequest::default();
        for &c in &db.layout(age).slots[slot].covers {
            if s.slots[c as usize] == Slot::Hidden && s.is_accessible(db, c as usize) {
                request.slots.push(c);
            }
        }
        request.slots.sort_unstable();

        match a {
            Action::Build(_) => {
                let pay = self.card_payment(&s, p, card);
                self.pay(&mut s, p, pay);
                self.gain_card(&mut s, p, card, pay.chained);
            }
            Action::Discard(_) => {
                let gain = db.rules.discard_base_coins + s.city(p).color_count(db, Color::Yellow);
                s.city_mut(p).coins += gain;
                s.discard.insert(card);
            }
            Action::BuildWonder(_, w) => {
                let pay = self.wonder_payment(&s, p, w);
                self.pay(&mut s, p, pay);
                s.city_mut(p).tucked.insert(card);
                if self.gain_wonder(&mut s, p, w) {
                    request.library = true;
                }
            }
            _ => unreachable!(),
        }
        s.last_actor = p;
        if s.decided.is_some() {
            return self.finish(s);
        }
        if !request.is_empty() {
            s.reveal = Some(request);
            return StepResult::NeedsReveal(s);
        }
        self.advance(s)
    }

    fn pay(&self, s: &mut GameState, p: Player, pay: Payment) {
        let db = self.db();
        s.city_mut(p).coins -= pay.total;
        if pay.trade > 0
            && s
                .city(p.other())
                .has_token_effect(db, |e| matches!(e, Effect::CollectTrade))
        {
            s.city_mut(p.other()).coins += pay.trade;
        }
    }

    /// Put a card into `p`'s city and resolve its immediate effects.
    pub(crate) fn gain_card(&self, s: &mut GameState, p: Player, card: CardId, chained: bool) {
        let db = self.db();
        let def = db.card(card);
        s.city_mut(p).cards.insert(card);
        for e in &def.effects {
            match e {
                Effect::Coins { amount } => s.city_mut(p).coins += *amount as u32,
                Effect::CoinsPerColor { colors, amount } => {
                    let n: u32 = colors.iter().map(|&c| s.city(p).color_count(db, c)).sum();
                    s.city_mut(p).coins += n * *amount as u32;
                }
                Effect::CoinsPerWonder { amount } => {
                    let n = s.city(p).wonders_built.len() as u32;
                    s.city_mut(p).coins += n * *amount as u32;
                }
                Effect::GuildCards { colors } => {
                    let most = Player::BOTH
                        .iter()
                        .map(|&q| colors.iter().map(|&c| s.city(q).color_count(db, c)).sum::<u32>())
                        .max()
                        .unwrap_or(0);
                    s.city_mut(p).coins += most;
                }
                Effect::Shields { amount } => {
                    let bonus = if def.color == Color::Red {
                        s.city(p)
                            .tokens
                            .iter()
                            .flat_map(|t| db.token(t).effects.iter())
                            .map(|e| match e {
                                Effect::MilitaryBonus { amount } => *amount,
                                _ => 0,
                            })
                            .sum()
                    } else {
                        0
                    };
                    self.move_military(s, p, amount + bonus);
                }
                Effect::Science { symbol } => {
                    let count = s.city(p).science_symbols(db)[*symbol as usize];
                    if count == 2 && !s.board_tokens.is_empty() && s.pending.is_none() {
                        s.pending = Some(Pending::PickToken {
                            player: p,
                            source: TokenSource::Board,
                        });
                    }
                    self.check_science(s, p);
                }
                _ => {}
            }
        }
        if chained {
            for t in s.city(p).tokens.iter() {
                for e in &db.token(t).effects {
                    if let Effect::ChainBonus { amount } = e {
                        s.cities[p.index()].coins += *amount as u32;
                    }
                }
            }
        }
    }

    /// Build wonder `w` for `p`. Returns true when a library draw is needed.
    fn gain_wonder(&self, s: &mut GameState, p: Player, w: WonderId) -> bool {
        let db = self.db();
        let def = db.wonder(w);
        let city = s.city_mut(p);
        city.wonders_unbuilt.remove(w);
        city.wonders_built.insert(w);
        s.wonders_built_total += 1;
        let mut library = false;
        for e in &def.effects {
            match e {
                Effect::Coins { amount } => s.city_mut(p).coins += *amount as u32,
                Effect::OpponentLosesCoins { amount } => {
                    let opp = s.city_mut(p.other());
                    opp.coins = opp.coins.saturating_sub(*amount as u32);
                }
                Effect::Shields { amount } => self.move_military(s, p, *amount),
                Effect::DestroyCard { color } => {
                    let targets = s.city(p.other()).cards.intersection(db.cards_of_color(*color));
                    if !targets.is_empty() {
                        s.pending = Some(Pending::Destroy { player: p, color: *color });
                    }
                }
                Effect::BuildFromDiscard => {
                    if !s.discard.is_empty() {
                        s.pending = Some(Pending::PickDiscarded { player: p });
                    }
                }
                Effect::LibraryDraw => {
                    if !s.box_tokens.is_empty() {
                        library = true;
                        s.pending = Some(Pending::PickToken {
                            player: p,
                            source: TokenSource::Library,
                        });
                    }
                }
                _ => {}
            }
        }
        let theology = s
            .city(p)
            .has_token_effect(db, |e| matches!(e, Effect::WondersExtraTurn));
        s.extra_turn = def.grants_extra_turn || theology;
        library
    }

    fn gain_token(&self, s: &mut GameState, p: Player, t: crate::data::TokenId) {
        let db = self.db();
        s.city_mut(p).tokens.insert(t);
        for e in &db.token(t).effects {
            match e {
                Effect::Coins { amount } => s.city_mut(p).coins += *amount as u32,
                Effect::Science { .. } => self.check_science(s, p),
                _ => {}
            }
        }
    }

    fn check_science(&self, s: &mut GameState, p: Player) {
        let db = self.db();
        if s.decided.is_none() && s.city(p).distinct_science(db) >= db.rules.science_victory_symbols {
            s.decided = Some((p, VictoryType::Scientific));
        }
    }

    fn move_military(&self, s: &mut GameState, p: Player, shields: u8) {
        if shields == 0 || s.decided.is_some() {
            return;
        }
        let cap = self.db().rules.military_capital;
        let step = shields as i8 * if p == Player::P1 { 1 } else { -1 };
        s.military = (s.military + step).clamp(-cap, cap);
        // (bit, threshold, victim, loss)
        let zones = [
            (0u8, 3i8, Player::P2, 2u32),
            (1, 6, Player::P2, 5),
            (2, -3, Player::P1, 2),
            (3, -6, Player::P1, 5),
        ];
        for (bit, threshold, victim, loss) in zones {
            let reached = if threshold > 0 {
                s.military >= threshold
            } else {
                s.military <= threshold
            };
            if reached && s.looting & (1 << bit) != 0 {
                s.looting &= !(1 << bit);
                let c = s.city_mut(victim);
                c.coins = c.coins.saturating_sub(loss);
            }
        }
        if s.military.abs() >= cap {
            s.decided = Some((p, VictoryType::Military));
        }
    }

    /// Move on after an action or reveal with no reveal outstanding.
    pub(crate) fn advance(&self, mut s: GameState) -> StepResult {
        if s.decided.is_some() {
            return self.finish(s);
        }
        if let Some(pending) = s.pending {
            s.to_move = pending.player();
            return StepResult::NextState(s);
        }
        if let Phase::Age(age) = s.phase {
            if s.layout_empty() {
                s.extra_turn = false;
                if age == Age::III {
                    return self.finish(s);
                }
                let chooser = match s.military {
                    m if m > 0 => Player::P2,
                    m if m < 0 => Player::P1,
                    _ => s.last_actor,
                };
                s.pending = Some(Pending::ChooseStarter { player: chooser });
                s.to_move = chooser;
                return StepResult::NextState(s);
            }
        }
        s.to_move = if s.extra_turn {
            s.last_actor
        } else {
            s.last_actor.other()
        };
        s.extra_turn = false;
        StepResult::NextState(s)
    }

    fn finish(&self, mut s: GameState) -> StepResult {
        s.phase = Phase::Terminal;
        s.pending = None;
        s.reveal = None;
        s.extra_turn = false;
        let outcome = self.score(&s).expect("terminal state scores");
        StepResult::Final(s, outcome)
    }
}

/// Assign flexible production, then price the remaining units.
fn cover(
    choices: &[Vec<Resource>],
    i: usize,
    deficit: &mut [u8; 5],
    prices: &[u32; 5],
    free_units: u8,
    best: &mut u32,
) {
    if i == choices.len() || deficit.iter().all(|&d| d == 0) {
        let mut units: ArrayVec<u32, 32> = ArrayVec::new();
        for r in 0..5 {
            for _ in 0..deficit[r] {
                units.push(prices[r]);
            }
        }
        units.sort_unstable_by(|a, b| b.cmp(a));
        let cost: u32 = units.iter().skip(free_units as usize).sum();
        *best = (*best).min(cost);
        return;
    }
    let mut used = false;
    for r in &choices[i] {
        let r = *r as usize;
        if deficit[r] > 0 {
            used = true;
            deficit[r] -= 1;
            cover(choices, i + 1, deficit, prices, free_units, best);
            deficit[r] += 1;
        }
    }
    if !used {
        cover(choices, i + 1, deficit, prices, free_units, best);
    }
}
