//! Chance events: face-down cards turning up, age deals, the second draft
//! group and the Great Library draw.
//!
//! Probabilities follow what both players know. In age III the layout holds
//! exactly three guilds, so a hidden slot is a guild with probability
//! (hidden guilds / hidden slots), split evenly over the unseen guilds.

use arrayvec::ArrayVec;
use num_rational::Ratio;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Engine, EngineError, GameState, Phase, Slot, StepResult};
use crate::data::{deal_age, Age, CardId, CardSet, ComponentDb, TokenSet, WonderSet};

/// Support larger than this is never listed.
pub const ENUMERATION_LIMIT: u128 = 100_000;

/// What must be revealed before play continues.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RevealRequest {
    /// Face-down slots just uncovered, ascending.
    pub slots: ArrayVec<u8, 4>,
    pub library: bool,
    pub wonders: bool,
    pub deal: Option<Age>,
}

impl RevealRequest {
    pub fn deal(age: Age) -> Self {
        RevealRequest {
            deal: Some(age),
            ..Default::default()
        }
    }

    pub fn wonders() -> Self {
        RevealRequest {
            wonders: true,
            ..Default::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty() && !self.library && !self.wonders && self.deal.is_none()
    }
}

/// A realized chance outcome.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Reveal {
    /// (slot, card), ascending by slot.
    pub cards: ArrayVec<(u8, CardId), 12>,
    #[serde(default, skip_serializing_if = "no_tokens")]
    pub tokens: TokenSet,
    #[serde(default, skip_serializing_if = "no_wonders")]
    pub wonders: WonderSet,
}

fn no_tokens(t: &TokenSet) -> bool {
    t.is_empty()
}

fn no_wonders(w: &WonderSet) -> bool {
    w.is_empty()
}

#[derive(Clone, Debug)]
pub enum RevealSupport {
    /// Every outcome with its exact probability.
    Enumerable(Vec<(Ratio<u64>, Reveal)>),
    /// Too many outcomes to list; draw with [`Engine::sample_reveal`].
    Unenumerable { support_size: u128 },
}

/// Counts behind the belief over hidden slots.
#[derive(Clone, Copy, Debug)]
struct Belief {
    unseen: CardSet,
    guild_pool: CardSet,
    hidden: u64,
    hidden_guilds: u64,
}

impl Belief {
    fn new(db: &ComponentDb, s: &GameState) -> Belief {
        let hidden = s.slots.iter().filter(|x| **x == Slot::Hidden).count() as u64;
        let (guild_pool, hidden_guilds) = if s.age() == Some(Age::III) {
            let unseen_guilds = s.unseen.intersection(db.guilds()).len() as u64;
            let unused = (db.rules.guild_count - db.rules.guilds_in_age_three) as u64;
            (db.guilds(), unseen_guilds.saturating_sub(unused))
        } else {
            (CardSet::EMPTY, 0)
        };
        Belief {
            unseen: s.unseen,
            guild_pool,
            hidden,
            hidden_guilds,
        }
    }

    /// Distribution of the next hidden slot.
    fn candidates(&self) -> Vec<(Ratio<u64>, CardId)> {
        let guilds = self.unseen.intersection(self.guild_pool);
        let others = self.unseen.difference(self.guild_pool);
        let h = self.hidden;
        let mut out = Vec::with_capacity(self.unseen.len());
        if self.hidden_guilds > 0 && !guilds.is_empty() {
            let p = Ratio::new(self.hidden_guilds, h * guilds.len() as u64);
            out.extend(guilds.iter().map(|c| (p, c)));
        }
        if h > self.hidden_guilds && !others.is_empty() {
            let p = Ratio::new(h - self.hidden_guilds, h * others.len() as u64);
            out.extend(others.iter().map(|c| (p, c)));
        }
        out.sort_by_key(|(_, c)| *c);
        out
    }

    fn take(&mut self, c: CardId) {
        self.unseen.remove(c);
        self.hidden -= 1;
        if self.guild_pool.contains(c) {
            self.hidden_guilds -= 1;
        }
    }

    fn admits(&self, c: CardId) -> bool {
        if !self.unseen.contains(c) || self.hidden == 0 {
            return false;
        }
        if self.guild_pool.contains(c) {
            self.hidden_guilds > 0
        } else {
            self.hidden > self.hidden_guilds
        }
    }
}

fn subsets<T: Copy>(items: &[T], k: usize) -> Vec<Vec<T>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    if items.len() < k {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (i, &x) in items.iter().enumerate() {
        for mut rest in subsets(&items[i + 1..], k - 1) {
            rest.insert(0, x);
            out.push(rest);
        }
    }
    out
}

fn falling(n: u128, k: u128) -> u128 {
    (0..k).map(|i| n - i).product()
}

fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

impl Engine {
    /// Face-up slots of an age layout, ascending.
    pub fn face_up_slots(&self, age: Age) -> Vec<u8> {
        self.db()
            .layout(age)
            .slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.face_up)
            .map(|(i, _)| i as u8)
            .collect()
    }

    fn library_size(&self, s: &GameState) -> usize {
        self.db().rules.library_draw.min(s.box_tokens.len())
    }

    fn wonder_pool(&self, s: &GameState) -> WonderSet {
        self.db().all_wonders().difference(s.draft.seen)
    }

    /// Number of distinct outcomes of the pending reveal.
    pub fn support_size(&self, s: &GameState) -> u128 {
        let Some(req) = &s.reveal else { return 0 };
        if let Some(age) = req.deal {
            let db = self.db();
            let faces = self.face_up_slots(age).len() as u128;
            let regular = db.age_deck(age).len() as u128;
            if age == Age::III {
                let guilds = db.guilds().len() as u128;
                let dealt = db.rules.guilds_in_age_three as u128;
                return (0..=dealt.min(faces))
                    .map(|g| binomial(faces, g) * falling(guilds, g) * falling(regular, faces - g))
                    .sum();
            }
            return falling(regular, faces);
        }
        let mut n: u128 = 1;
        if !req.slots.is_empty() {
            n *= count_slot_outcomes(&Belief::new(self.db(), s), req.slots.len());
        }
        if req.library {
            n *= binomial(s.box_tokens.len() as u128, self.library_size(s) as u128);
        }
        if req.wonders {
            n *= binomial(self.wonder_pool(s).len() as u128, 4);
        }
        n
    }

    /// All outcomes of the pending reveal with exact probabilities.
    pub fn enumerate_reveals(&self, s: &GameState) -> RevealSupport {
        let Some(req) = &s.reveal else {
            return RevealSupport::Enumerable(Vec::new());
        };
        let size = self.support_size(s);
        if req.deal.is_some() || size > ENUMERATION_LIMIT {
            return RevealSupport::Unenumerable { support_size: size };
        }
        let mut parts: Vec<(Ratio<u64>, Reveal)> = vec![(Ratio::from_integer(1), Reveal::default())];
        if !req.slots.is_empty() {
            let mut out = Vec::new();
            enumerate_slots(Belief::new(self.db(), s), &req.slots, Ratio::from_integer(1), &mut ArrayVec::new(), &mut out);
            parts = out
                .into_iter()
                .map(|(p, cards)| (p, Reveal { cards, ..Default::default() }))
                .collect();
        }
        if req.library {
            let box_tokens: Vec<_> = s.box_tokens.iter().collect();
            let draws = subsets(&box_tokens, self.library_size(s));
            let p = Ratio::new(1, draws.len() as u64);
            parts = parts
                .into_iter()
                .flat_map(|(q, r)| {
                    draws.iter().map(move |d| {
                        let mut r = r.clone();
                        r.tokens = d.iter().copied().collect();
                        (q * p, r)
                    })
                })
                .collect();
        }
        if req.wonders {
            let pool: Vec<_> = self.wonder_pool(s).iter().collect();
            let groups = subsets(&pool, 4);
            let p = Ratio::new(1, groups.len() as u64);
            parts = parts
                .into_iter()
                .flat_map(|(q, r)| {
                    groups.iter().map(move |g| {
                        let mut r = r.clone();
                        r.wonders = g.iter().copied().collect();
                        (q * p, r)
                    })
                })
                .collect();
        }
        RevealSupport::Enumerable(parts)
    }

    /// Draw an outcome of the pending reveal from the public belief.
    pub fn sample_reveal<R: Rng + ?Sized>(&self, s: &GameState, rng: &mut R) -> Reveal {
        let mut out = Reveal::default();
        let Some(req) = &s.reveal else { return out };
        let db = self.db();
        if let Some(age) = req.deal {
            let deal = deal_age(db, age, rng);
            for slot in self.face_up_slots(age) {
                out.cards.push((slot, deal.slots[slot as usize]));
            }
            return out;
        }
        let mut belief = Belief::new(db, s);
        for &slot in &req.slots {
            let cands = belief.candidates();
            let c = cands
                .choose_weighted(rng, |(p, _)| *p.numer() as f64 / *p.denom() as f64)
                .expect("hidden slot has candidates")
                .1;
            belief.take(c);
            out.cards.push((slot, c));
        }
        if req.library {
            let mut box_tokens: Vec<_> = s.box_tokens.iter().collect();
            box_tokens.shuffle(rng);
            out.tokens = box_tokens.into_iter().take(self.library_size(s)).collect();
        }
        if req.wonders {
            let mut pool: Vec<_> = self.wonder_pool(s).iter().collect();
            pool.shuffle(rng);
            out.wonders = pool.into_iter().take(4).collect();
        }
        out
    }

    /// Exact probability of `r` under the public belief (zero when inconsistent).
    pub fn reveal_probability(&self, s: &GameState, r: &Reveal) -> Ratio<u64> {
        match self.enumerate_reveals(s) {
            RevealSupport::Enumerable(all) => all
                .into_iter()
                .find(|(_, x)| x == r)
                .map(|(p, _)| p)
                .unwrap_or_else(|| Ratio::from_integer(0)),
            RevealSupport::Unenumerable { .. } => Ratio::from_integer(0),
        }
    }

    /// Apply a chance outcome to an afterstate.
    pub fn resolve_reveal(&self, s: &GameState, r: &Reveal) -> Result<StepResult, EngineError> {
        let bad = |m: String| Err(EngineError::InconsistentReveal(m));
        let Some(req) = &s.reveal else {
            return bad("state has no pending reveal".into());
        };
        let db = self.db();
        let mut next = s.clone();
        next.reveal = None;

        if let Some(age) = req.deal {
            let faces = self.face_up_slots(age);
            if r.cards.iter().map(|(slot, _)| *slot).ne(faces.iter().copied()) {
                return bad(format!("age {age:?} deal must fill face-up slots {faces:?}"));
            }
            let pool = db.age_pool(age);
            let shown: CardSet = r.cards.iter().map(|(_, c)| *c).collect();
            if shown.len() != faces.len() || !shown.difference(pool).is_empty() {
                return bad("deal cards must be distinct cards of the age".into());
            }
            if shown.intersection(db.guilds()).len() > db.rules.guilds_in_age_three {
                return bad("too many guilds in the deal".into());
            }
            if !r.tokens.is_empty() || !r.wonders.is_empty() {
                return bad("deal carries no tokens or wonders".into());
            }
            next.phase = Phase::Age(age);
            for (i, slot) in db.layout(age).slots.iter().enumerate() {
                next.slots[i] = if slot.face_up { Slot::Empty } else { Slot::Hidden };
            }
            for &(slot, c) in &r.cards {
                next.slots[slot as usize] = Slot::Card(c);
            }
            next.unseen = pool.difference(shown);
            return Ok(StepResult::NextState(next));
        }

        if r.cards.iter().map(|(slot, _)| *slot).ne(req.slots.iter().copied()) {
            return bad(format!("expected cards for slots {:?}", req.slots));
        }
        let mut belief = Belief::new(db, s);
        for &(slot, c) in &r.cards {
            if !belief.admits(c) {
                return bad(format!("card {} cannot be in slot {slot}", c.0));
            }
            belief.take(c);
            next.slots[slot as usize] = Slot::Card(c);
            next.unseen.remove(c);
        }
        if req.library {
            if r.tokens.len() != self.library_size(s) || !r.tokens.difference(s.box_tokens).is_empty() {
                return bad("library draw must come from the box".into());
            }
            next.library_offer = r.tokens;
        } else if !r.tokens.is_empty() {
            return bad("no library draw pending".into());
        }
        if req.wonders {
            if r.wonders.len() != 4 || !r.wonders.difference(self.wonder_pool(s)).is_empty() {
                return bad("second draft group must be 4 unseen wonders".into());
            }
            next.draft.offered = r.wonders;
            next.draft.seen = next.draft.seen.union(r.wonders);
            return Ok(StepResult::NextState(next));
        } else if !r.wonders.is_empty() {
            return bad("no wonder group pending".into());
        }
        Ok(self.advance(next))
    }
}

fn enumerate_slots(
    belief: Belief,
    slots: &[u8],
    p: Ratio<u64>,
    acc: &mut ArrayVec<(u8, CardId), 12>,
    out: &mut Vec<(Ratio<u64>, ArrayVec<(u8, CardId), 12>)>,
) {
    let Some((&slot, rest)) = slots.split_first() else {
        out.push((p, acc.clone()));
        return;
    };
    for (q, c) in belief.candidates() {
        let mut b = belief;
        b.take(c);
        acc.push((slot, c));
        enumerate_slots(b, rest, p * q, acc, out);
        acc.pop();
    }
}

fn count_slot_outcomes(belief: &Belief, k: usize) -> u128 {
    if k == 0 {
        return 1;
    }
    belief
        .candidates()
        .into_iter()
        .map(|(_, c)| {
            let mut b = *belief;
            b.take(c);
            count_slot_outcomes(&b, k - 1)
        })
        .sum()
}
