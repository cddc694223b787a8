mod common;

use std::collections::HashMap;

use common::*;
use duelzero_core::data::{deal_age, Age, CardId, CardSet};
use duelzero_core::engine::{
    check_invariants, Action, EngineError, GameState, Reveal, RevealRequest, RevealSupport, Slot,
    StepResult,
};
use num_rational::Ratio;
use proptest::prelude::*;

/// Chi-square statistic of observed counts against expected probabilities.
fn chi_square(counts: &[u64], probs: &[f64]) -> f64 {
    let n: u64 = counts.iter().sum();
    counts
        .iter()
        .zip(probs)
        .map(|(&o, &p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum()
}

fn falling(n: u128, k: u128) -> u128 {
    (0..k).map(|i| n - i).product()
}

fn choose(n: u128, k: u128) -> u128 {
    falling(n, k) / falling(k, k)
}

/// Every injective filling of `hidden` slots from `unseen` that keeps the
/// total number of guilds in the layout at `guilds_in_layout`.
fn completions(
    unseen: &[CardId],
    is_guild: &dyn Fn(CardId) -> bool,
    hidden: usize,
    guilds_needed: Option<usize>,
) -> Vec<Vec<CardId>> {
    fn go(
        unseen: &[CardId],
        is_guild: &dyn Fn(CardId) -> bool,
        left: usize,
        used: &mut Vec<CardId>,
        guilds_needed: Option<usize>,
        out: &mut Vec<Vec<CardId>>,
    ) {
        if left == 0 {
            let g = used.iter().filter(|&&c| is_guild(c)).count();
            if guilds_needed.is_none_or(|n| n == g) {
                out.push(used.clone());
            }
            return;
        }
        for &c in unseen {
            if !used.contains(&c) {
                used.push(c);
                go(unseen, is_guild, left - 1, used, guilds_needed, out);
                used.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(unseen, is_guild, hidden, &mut Vec::new(), guilds_needed, &mut out);
    out
}

/// Marginal over `asked` slots of the uniform distribution on completions.
fn brute_force_marginal(e: &duelzero_core::Engine, s: &GameState, asked: &[u8]) -> HashMap<Vec<CardId>, Ratio<u64>> {
    let db = e.db();
    let hidden: Vec<u8> = (0..20u8).filter(|&i| s.slots[i as usize] == Slot::Hidden).collect();
    let unseen: Vec<CardId> = s.unseen.iter().collect();
    let guilds = db.guilds();
    let is_guild = |c: CardId| guilds.contains(c);
    let needed = (s.age() == Some(Age::III)).then(|| {
        let visible_guilds = s
            .slots
            .iter()
            .filter(|x| matches!(x, Slot::Card(c) if guilds.contains(*c)))
            .count();
        let taken_guilds = CardSet::EMPTY
            .union(s.cities[0].cards)
            .union(s.cities[1].cards)
            .union(s.cities[0].tucked)
            .union(s.cities[1].tucked)
            .union(s.discard)
            .intersection(guilds)
            .len();
        3 - visible_guilds - taken_guilds
    });
    let all = completions(&unseen, &is_guild, hidden.len(), needed);
    let total = all.len() as u64;
    let mut out: HashMap<Vec<CardId>, u64> = HashMap::new();
    for c in &all {
        let key: Vec<CardId> = asked
            .iter()
            .map(|a| c[hidden.iter().position(|h| h == a).unwrap()])
            .collect();
        *out.entry(key).or_default() += 1;
    }
    out.into_iter().map(|(k, n)| (k, Ratio::new(n, total))).collect()
}

fn enumerated(e: &duelzero_core::Engine, s: &GameState) -> HashMap<Vec<CardId>, Ratio<u64>> {
    let RevealSupport::Enumerable(all) = e.enumerate_reveals(s) else { panic!("expected enumerable") };
    let sum: Ratio<u64> = all.iter().map(|(p, _)| *p).sum();
    assert_eq!(sum, Ratio::from_integer(1));
    all.into_iter()
        .map(|(p, r)| (r.cards.iter().map(|(_, c)| *c).collect(), p))
        .collect()
}

/// Age III with most of the layout revealed, so the completion count stays small.
fn late_age_three(e: &duelzero_core::Engine, seen_guild: bool) -> GameState {
    let mut s = age_state(e, Age::III, &[]);
    let mut regular = s.unseen.difference(e.db().guilds()).iter();
    let mut guilds = s.unseen.intersection(e.db().guilds()).iter();
    let fill = [
        regular.next().unwrap(),
        if seen_guild { guilds.next().unwrap() } else { regular.next().unwrap() },
        regular.next().unwrap(),
    ];
    for (slot, c) in [2usize, 3, 4].into_iter().zip(fill) {
        s.slots[slot] = Slot::Card(c);
        s.unseen.remove(c);
    }
    // Take the front row so that slots 15 and 16 lie open.
    for slot in [18usize, 19] {
        let Slot::Card(c) = s.slots[slot] else { panic!() };
        s.discard.insert(c);
        s.slots[slot] = Slot::Empty;
    }
    s
}

#[test]
fn opening_slot_nine_reveal_is_uniform() {
    let e = engine();
    let s = age_one(&e, &[]);
    let s = next(&e, &s, Action::Discard(14));
    let StepResult::NeedsReveal(s) = step(&e, &s, Action::Discard(15)) else { panic!() };
    assert_eq!(s.reveal.as_ref().unwrap().slots.as_slice(), &[9]);
    let dist = enumerated(&e, &s);
    assert_eq!(dist.len(), 11);
    assert!(dist.values().all(|p| *p == Ratio::new(1, 11)));
    assert_eq!(dist, brute_force_marginal(&e, &s, &[9]));

    // Sampled frequencies agree with the enumeration (df 10, p = 0.001).
    let keys: Vec<CardId> = s.unseen.iter().collect();
    let mut counts = vec![0u64; keys.len()];
    let mut r = rng(9);
    for _ in 0..11_000 {
        let rev = e.sample_reveal(&s, &mut r);
        counts[keys.iter().position(|&k| k == rev.cards[0].1).unwrap()] += 1;
    }
    let stat = chi_square(&counts, &vec![1.0 / 11.0; 11]);
    assert!(stat < 29.588, "chi-square {stat}");
}

#[test]
fn age_three_slot_probabilities_from_completion_counts() {
    let e = engine();
    let s = age_state(&e, Age::III, &[]);
    let mut s = s;
    s.reveal = Some(RevealRequest { slots: [15u8].into_iter().collect(), ..Default::default() });
    let dist = enumerated(&e, &s);
    let guild = e.db().guilds().iter().next().unwrap();
    let regular = s.unseen.difference(e.db().guilds()).iter().next().unwrap();
    // Eight hidden slots hold three of seven guilds and five of eight unseen
    // age cards: a guild lands in a given slot 3/8 of the time, split seven ways.
    assert_eq!(dist[&vec![guild]], Ratio::new(3, 8) * Ratio::new(1, 7));
    assert_eq!(dist[&vec![regular]], Ratio::new(5, 8) * Ratio::new(1, 8));
    assert_eq!(dist[&vec![guild]], Ratio::new(3, 56));
    assert_eq!(dist[&vec![regular]], Ratio::new(5, 64));
}

#[test]
fn late_age_three_reveal_matches_brute_force() {
    let e = engine();
    for seen_guild in [false, true] {
        let mut s = late_age_three(&e, seen_guild);
        s.reveal = Some(RevealRequest { slots: [15u8, 16].into_iter().collect(), ..Default::default() });
        let dist = enumerated(&e, &s);
        assert_eq!(dist, brute_force_marginal(&e, &s, &[15, 16]), "seen_guild={seen_guild}");
    }
}

#[test]
fn multi_slot_reveal_in_age_one() {
    let e = engine();
    let mut s = age_one(&e, &[]);
    // Empty the whole bottom row except 14: taking 15..19 opens 10..13.
    for slot in 15..20 {
        let Slot::Card(c) = s.slots[slot] else { panic!() };
        s.discard.insert(c);
        s.slots[slot] = Slot::Empty;
    }
    s.reveal = Some(RevealRequest { slots: [10u8, 11, 12].into_iter().collect(), ..Default::default() });
    let dist = enumerated(&e, &s);
    assert_eq!(dist.len(), 11 * 10 * 9);
    assert!(dist.values().all(|p| *p == Ratio::new(1, 990)));
    assert_eq!(e.support_size(&s), 990);
}

#[test]
fn inconsistent_reveals_are_rejected() {
    let e = engine();
    let s = age_one(&e, &[]);
    let s = next(&e, &s, Action::Discard(14));
    let StepResult::NeedsReveal(s) = step(&e, &s, Action::Discard(15)) else { panic!() };
    let visible = match s.slots[16] {
        Slot::Card(c) => c,
        _ => panic!(),
    };
    let bad = [
        Reveal { cards: [(9u8, visible)].into_iter().collect(), ..Default::default() },
        Reveal { cards: [(8u8, s.unseen.iter().next().unwrap())].into_iter().collect(), ..Default::default() },
        Reveal::default(),
        Reveal {
            cards: [(9u8, card(&e, "arsenal"))].into_iter().collect(),
            ..Default::default()
        },
    ];
    for r in bad {
        assert!(matches!(e.resolve_reveal(&s, &r), Err(EngineError::InconsistentReveal(_))), "{r:?}");
        assert_eq!(e.reveal_probability(&s, &r), Ratio::from_integer(0));
    }
    // A live state has nothing to reveal.
    let live = age_one(&e, &[]);
    assert!(e.resolve_reveal(&live, &Reveal::default()).is_err());
}

#[test]
fn seen_guilds_shrink_the_hidden_guild_count() {
    let e = engine();
    let mut s = age_state(&e, Age::III, &[]);
    // Three guilds visible: none can be hidden.
    let guilds: Vec<CardId> = e.db().guilds().iter().take(3).collect();
    for (slot, g) in [0usize, 1, 5].into_iter().zip(&guilds) {
        let Slot::Card(old) = s.slots[slot] else { panic!() };
        s.unseen.insert(old);
        s.slots[slot] = Slot::Card(*g);
        s.unseen.remove(*g);
    }
    s.reveal = Some(RevealRequest { slots: [15u8].into_iter().collect(), ..Default::default() });
    let dist = enumerated(&e, &s);
    assert!(dist.keys().all(|k| !e.db().guilds().contains(k[0])));
    assert_eq!(dist.len(), 11);
}

#[test]
fn deals_are_unenumerable_with_known_support() {
    let e = engine();
    let s = drafted(&e, P1_WONDERS, P2_WONDERS, BOARD, Age::I);
    assert!(matches!(e.enumerate_reveals(&s), RevealSupport::Unenumerable { .. }));
    assert_eq!(e.support_size(&s), falling(23, 12));
    let s3 = drafted(&e, P1_WONDERS, P2_WONDERS, BOARD, Age::III);
    // Every ordered choice of 12 of the 27 cards, minus those with more than 3 guilds.
    let too_many: u128 = (4..=7).map(|g| choose(12, g) * falling(7, g) * falling(20, 12 - g)).sum();
    assert_eq!(e.support_size(&s3), falling(27, 12) - too_many);
    let RevealSupport::Unenumerable { support_size } = e.enumerate_reveals(&s3) else { panic!() };
    assert_eq!(support_size, falling(27, 12) - too_many);
}

#[test]
fn wonder_reveal_after_the_first_group() {
    let e = engine();
    let mut s = e.deal_setup(&Default::default(), &mut rng(4));
    for _ in 0..3 {
        let a = e.legal_actions(&s).unwrap()[1.min(e.legal_actions(&s).unwrap().len() - 1)];
        s = step(&e, &s, a).into_state();
    }
    let dist = match e.enumerate_reveals(&s) {
        RevealSupport::Enumerable(all) => all,
        _ => panic!(),
    };
    assert_eq!(dist.len(), 70);
    assert!(dist.iter().all(|(p, r)| *p == Ratio::new(1, 70) && r.wonders.intersection(s.draft.seen).is_empty()));
}

#[test]
fn deal_age_is_a_partition() {
    let e = engine();
    let db = e.db();
    for (i, age) in Age::ALL.into_iter().enumerate() {
        let d = deal_age(db, age, &mut rng(i as u64));
        let placed: CardSet = d.slots.iter().copied().collect();
        assert_eq!(placed.len(), 20);
        assert!(placed.intersection(d.set_aside).is_empty());
        assert_eq!(placed.union(d.set_aside), db.age_pool(age));
        assert_eq!(d, deal_age(db, age, &mut rng(i as u64)));
    }
}

#[test]
fn age_three_always_holds_three_guilds() {
    let e = engine();
    for seed in 0..1000 {
        let d = deal_age(e.db(), Age::III, &mut rng(seed));
        let g = d.slots.iter().filter(|c| e.db().guilds().contains(**c)).count();
        assert_eq!(g, 3, "seed {seed}");
    }
}

#[test]
fn first_slot_of_age_one_is_uniform() {
    let e = engine();
    let deck: Vec<CardId> = e.db().age_deck(Age::I).iter().collect();
    let mut counts = vec![0u64; deck.len()];
    for seed in 0..10_000 {
        let d = deal_age(e.db(), Age::I, &mut rng(seed));
        counts[deck.iter().position(|&c| c == d.slots[0]).unwrap()] += 1;
    }
    // 23 outcomes, df 22, p = 0.001.
    let stat = chi_square(&counts, &vec![1.0 / 23.0; 23]);
    assert!(stat < 48.268, "chi-square {stat}");
}

#[test]
fn setup_coins_are_configurable() {
    let e = engine();
    let s = e.deal_setup(&duelzero_core::engine::SetupConfig { coins: [5, 10] }, &mut rng(0));
    assert_eq!(s.cities[0].coins, 5);
    assert_eq!(s.cities[1].coins, 10);
    assert_eq!(s.board_tokens.len(), 5);
    assert_eq!(s.draft.offered.len(), 4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_reveals_are_in_the_support(seed in any::<u64>(), moves in 0usize..40) {
        let e = engine();
        let (mut dealer, mut s) = duelzero_core::engine::Dealer::new(&e, &Default::default(), seed);
        let mut r = rng(seed ^ 0x5eed);
        let mut u = Uniform::new(seed);
        use duelzero_core::engine::Policy;
        for _ in 0..moves {
            if s.is_terminal() { break; }
            if s.is_afterstate() {
                if let RevealSupport::Enumerable(all) = e.enumerate_reveals(&s) {
                    let sample = e.sample_reveal(&s, &mut r);
                    prop_assert!(all.iter().any(|(p, x)| *x == sample && *p > Ratio::from_integer(0)));
                    let truth = dealer.reveal(&s);
                    prop_assert!(e.reveal_probability(&s, &truth) > Ratio::from_integer(0));
                    s = e.resolve_reveal(&s, &truth).unwrap().into_state();
                } else {
                    let truth = dealer.reveal(&s);
                    s = e.resolve_reveal(&s, &truth).unwrap().into_state();
                }
            } else {
                let legal = e.legal_actions(&s).unwrap();
                let a = u.decide(&e, &s, &legal).action;
                s = e.apply(&s, a).unwrap().into_state();
            }
            prop_assert!(check_invariants(e.db(), &s).is_ok());
        }
    }
}
