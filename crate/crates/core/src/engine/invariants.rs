use super::{GameState, Phase, Player, Slot};
use crate::data::{Age, CardSet, ComponentDb, SLOTS};

/// Structural checks every reachable state satisfies. Returns the first
/// violation found.
pub fn check_invariants(db: &ComponentDb, s: &GameState) -> Result<(), String> {
    let [c1, c2] = &s.cities;

    // Every card is in at most one place.
    let visible: CardSet = s
        .slots
        .iter()
        .filter_map(|x| match x {
            Slot::Card(c) => Some(*c),
            _ => None,
        })
        .collect();
    let places = [
        ("p1 city", c1.cards),
        ("p2 city", c2.cards),
        ("p1 wonders", c1.tucked),
        ("p2 wonders", c2.tucked),
        ("discard", s.discard),
        ("layout", visible),
        ("unseen", s.unseen),
    ];
    let mut placed = CardSet::EMPTY;
    for (name, set) in places {
        if !placed.intersection(set).is_empty() {
            return Err(format!("card in two places ({name}): {:?}", placed.intersection(set)));
        }
        placed = placed.union(set);
    }
    let placed = placed.difference(s.unseen);
    let hidden = s.slots.iter().filter(|x| **x == Slot::Hidden).count();

    let current = match s.phase {
        Phase::Age(a) => Some(a),
        _ => None,
    };
    if s.phase == Phase::WonderDraft && (!placed.is_empty() || hidden > 0) {
        return Err("cards in play during the wonder draft".into());
    }
    if let Some(age) = current {
        for a in Age::ALL {
            let pool = db.age_pool(a);
            let n = pool.intersection(placed).len();
            if a < age && n != SLOTS {
                return Err(format!("age {a:?} left {n} cards in play, expected {SLOTS}"));
            }
            if a > age && n != 0 {
                return Err(format!("age {a:?} cards in play early"));
            }
            if a == age {
                if n + hidden != SLOTS {
                    return Err(format!("age {a:?}: {n} seen + {hidden} hidden != {SLOTS}"));
                }
                if s.unseen != pool.difference(placed) {
                    return Err("unseen set disagrees with the cards seen this age".into());
                }
            }
        }
        for slot in s.accessible(db) {
            let awaiting = s.reveal.as_ref().is_some_and(|r| r.slots.contains(&(slot as u8)));
            if s.slots[slot] == Slot::Hidden && !awaiting {
                return Err(format!("uncovered slot {slot} still face down"));
            }
        }
    }

    // Wonders.
    let built = c1.wonders_built.len() + c2.wonders_built.len();
    if built != s.wonders_built_total as usize || built > db.rules.max_wonders_built as usize {
        return Err(format!("wonder count {built} vs total {}", s.wonders_built_total));
    }
    let owned = [c1.wonders_built, c1.wonders_unbuilt, c2.wonders_built, c2.wonders_unbuilt, s.draft.offered];
    let mut all = crate::data::WonderSet::EMPTY;
    for set in owned {
        if !all.intersection(set).is_empty() {
            return Err("wonder owned twice".into());
        }
        all = all.union(set);
    }
    if s.draft.picks == 8 {
        for (i, c) in s.cities.iter().enumerate() {
            let n = c.wonders_built.len() + c.wonders_unbuilt.len();
            if n != 4 {
                return Err(format!("player {} holds {n} wonders after the draft", i + 1));
            }
        }
    }
    let tucked = c1.tucked.len() + c2.tucked.len();
    if tucked != built {
        return Err("each built wonder needs exactly one tucked card".into());
    }

    // Tokens.
    let token_places = [s.board_tokens, s.box_tokens, c1.tokens, c2.tokens];
    let mut tokens = crate::data::TokenSet::EMPTY;
    for set in token_places {
        if !tokens.intersection(set).is_empty() {
            return Err("token in two places".into());
        }
        tokens = tokens.union(set);
    }
    if tokens != db.all_tokens() {
        return Err("tokens missing".into());
    }
    if !s.library_offer.difference(s.box_tokens).is_empty() {
        return Err("library offer outside the box".into());
    }

    // Military.
    let cap = db.rules.military_capital;
    if s.military.abs() > cap {
        return Err(format!("pawn out of bounds: {}", s.military));
    }
    if s.military.abs() == cap && !s.is_terminal() {
        return Err("pawn at a capital in a live state".into());
    }
    let loot = [(0, 3i8), (1, 6), (2, -3), (3, -6)];
    for (bit, threshold) in loot {
        let reached = if threshold > 0 { s.military >= threshold } else { s.military <= threshold };
        if reached && s.looting & (1 << bit) != 0 {
            return Err(format!("looting token {bit} not taken at pawn {}", s.military));
        }
    }

    // Science.
    if !s.is_terminal() {
        for p in Player::BOTH {
            if s.city(p).distinct_science(db) >= db.rules.science_victory_symbols {
                return Err(format!("{p} has a scientific victory in a live state"));
            }
        }
    }

    if let Some(pending) = s.pending {
        if !s.is_afterstate() && pending.player() != s.to_move {
            return Err("pending decision owner is not to move".into());
        }
    }
    Ok(())
}
