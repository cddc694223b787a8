mod common;

use std::collections::BTreeMap;

use common::*;
use duelzero_core::analysis::*;
use duelzero_core::data::{TokenId, WonderId};
use duelzero_core::engine::{
    replay, run_game, Action, Engine, Event, GameRecord, Phase, Player, SetupConfig, SetupEvent, VictoryType,
};
use duelzero_core::selfplay::{generate_bootstrap_set, BootstrapKind, BootstrapPolicy};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn victory_shares_by_direct_count() {
    let rs = [
        bare(Some(Player::P1), Some(VictoryType::Civilian)),
        bare(Some(Player::P2), Some(VictoryType::Scientific)),
        bare(Some(Player::P1), Some(VictoryType::Military)),
    ];
    let v = victory_distribution(&rs);
    for x in [v.civilian, v.scientific, v.military] {
        assert!((x - 1.0 / 3.0).abs() < 1e-12);
    }
    assert_eq!(v.draws, 0.0);
    assert!((v.decisive_split().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let draws = [bare(None, None), bare(None, None)];
    let v = victory_distribution(&draws);
    assert_eq!((v.civilian, v.scientific, v.military, v.draws), (0.0, 0.0, 0.0, 1.0));
    let seats = winner_by_seat(&rs);
    assert!((seats.first - 2.0 / 3.0).abs() < 1e-12);
    assert!((seats.second - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn draft_scores_on_a_scripted_draft() {
    let e = engine();
    let r = tactics_game(&e, 1, false);
    let scores: BTreeMap<WonderId, f64> = draft_scores(&r).into_iter().collect();
    let expect = [
        ("piraeus", 1.0),
        ("pyramids", 0.5),
        ("colossus", 0.5),
        ("great_lighthouse", 0.0),
        ("mausoleum", 1.0),
        ("statue_of_zeus", 0.5),
        ("circus_maximus", 0.5),
        ("great_library", 0.0),
    ];
    assert_eq!(scores.len(), 8);
    for (w, v) in expect {
        assert_eq!(scores[&wonder(&e, w)], v, "{w}");
    }
}

#[test]
fn preference_averages_over_appearances() {
    let e = engine();
    // Zeus picked second in one game and left over in another.
    let second = scripted(&e, [GROUPS[1], GROUPS[0]], TOKENS, 2, {
        let mut picks = ["mausoleum", "statue_of_zeus", "circus_maximus", "piraeus", "pyramids", "colossus"]
            .map(|w| wonder(&e, w))
            .into_iter();
        move |s, legal| if s.phase == Phase::WonderDraft { Action::PickWonder(picks.next().unwrap()) } else { legal[0] }
    });
    let fourth = scripted(&e, [GROUPS[1], GROUPS[0]], TOKENS, 3, {
        let mut picks = ["mausoleum", "circus_maximus", "great_library", "piraeus", "pyramids", "colossus"]
            .map(|w| wonder(&e, w))
            .into_iter();
        move |s, legal| if s.phase == Phase::WonderDraft { Action::PickWonder(picks.next().unwrap()) } else { legal[0] }
    });
    let p = wonder_preference(&[second, fourth]);
    let zeus = p[&wonder(&e, "statue_of_zeus")];
    assert_eq!(zeus.appearances, 2);
    assert_eq!(zeus.score, 0.25);
    assert_eq!(p[&wonder(&e, "mausoleum")].score, 1.0);
    assert!(p.values().all(|x| (0.0..=1.0).contains(&x.score)));
}

/// Independent route: score each pick from the size of the offer it was
/// taken from, and the wonder left when the offer drops to one.
fn scores_from_states(e: &Engine, r: &GameRecord) -> Vec<(WonderId, f64)> {
    let states = replay(e, r).unwrap();
    let mut out = Vec::new();
    for (k, ev) in r.events.iter().enumerate() {
        if let Event::Action { action: Action::PickWonder(w), .. } = ev {
            let offered = states[k].draft.offered;
            out.push((*w, if offered.len() == 4 { 1.0 } else { 0.5 }));
            if offered.len() == 2 {
                let mut rest = offered;
                rest.remove(*w);
                out.extend(rest.iter().map(|x| (x, 0.0)));
            }
        }
    }
    out
}

#[test]
fn draft_scores_agree_with_the_state_oracle() {
    let e = engine();
    for r in generate_bootstrap_set(&e, 200, 3, 1) {
        let mut a = draft_scores(&r);
        let mut b = scores_from_states(&e, &r);
        a.sort_by(|x, y| x.0.cmp(&y.0));
        b.sort_by(|x, y| x.0.cmp(&y.0));
        assert_eq!(a, b);
        let mut multiset: Vec<f64> = a.iter().map(|x| x.1).collect();
        multiset.sort_by(f64::total_cmp);
        assert_eq!(multiset, vec![0.0, 0.0, 0.5, 0.5, 0.5, 0.5, 1.0, 1.0]);
    }
}

#[test]
fn random_drafts_have_neutral_preference() {
    let e = engine();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut records = Vec::with_capacity(10_000);
    for i in 0..10_000 {
        let mut s = e.deal_setup(&SetupConfig::default(), &mut rng);
        let mut r = bare(None, None);
        r.setup = SetupEvent { tokens: s.board_tokens, wonders: s.draft.offered };
        while s.phase == Phase::WonderDraft {
            let step = if s.reveal.is_some() {
                let rev = e.sample_reveal(&s, &mut rng);
                r.events.push(Event::Reveal(rev.clone()));
                e.resolve_reveal(&s, &rev).unwrap()
            } else {
                let a = *e.legal_actions(&s).unwrap().choose(&mut rng).unwrap();
                r.events.push(Event::Action { player: s.to_move, action: a, visits: None });
                e.apply(&s, a).unwrap()
            };
            s = step.into_state();
            if s.draft.picks == 8 {
                break;
            }
        }
        assert_eq!(r.events.len(), 7, "draft {i}");
        records.push(r);
    }
    let p = wonder_preference(&records);
    assert_eq!(p.len(), 12);
    for (w, x) in p {
        assert!((x.score - 0.5).abs() <= 0.05, "{} {}", e.db().wonder(w).id, x.score);
    }
}

#[test]
fn token_ranking_counts_per_availability() {
    let e = engine();
    let theology = token(&e, "theology");
    let mut records = Vec::new();
    let mut offers = Vec::new();
    for i in 0..300u64 {
        let mk = |seed| TheologyFirst {
            inner: BootstrapPolicy::new(BootstrapKind::GreenSeeker, seed),
            theology,
            offers: Vec::new(),
        };
        let (mut a, mut b) = (mk(2 * i), mk(2 * i + 1));
        records.push(run_game(&e, &mut a, &mut b, &SetupConfig::default(), i));
        offers.extend(a.offers);
        offers.extend(b.offers);
    }
    let mut picked = BTreeMap::<TokenId, usize>::new();
    let mut available = BTreeMap::<TokenId, usize>::new();
    for (offer, t) in &offers {
        *picked.entry(*t).or_default() += 1;
        for x in offer.iter() {
            *available.entry(x).or_default() += 1;
        }
    }
    let ranking = token_pick_ranking(&e, &records).unwrap();
    assert_eq!(ranking.len(), 10);
    for r in &ranking {
        assert_eq!(r.picked, picked.get(&r.token).copied().unwrap_or(0));
        assert_eq!(r.available, available.get(&r.token).copied().unwrap_or(0));
    }
    let th = ranking.iter().find(|r| r.token == theology).unwrap();
    assert!(th.available > 0);
    assert_eq!(th.frequency, Some(1.0));
    assert_eq!(ranking[0].frequency, Some(1.0));
    let freqs: Vec<f64> = ranking.iter().filter_map(|r| r.frequency).collect();
    assert!(freqs.windows(2).all(|w| w[0] >= w[1]));

    // One game without the library: box tokens are never offered.
    let one = token_pick_ranking(&e, &records[..1]).unwrap();
    let unseen: Vec<_> = one.iter().filter(|r| r.available == 0).collect();
    assert!(!unseen.is_empty());
    assert!(unseen.iter().all(|r| r.frequency.is_none()));
    let first_none = one.iter().position(|r| r.frequency.is_none()).unwrap();
    assert!(one[first_none..].iter().all(|r| r.frequency.is_none()));
}

#[test]
fn extra_turn_tactics_on_scripted_games() {
    let e = engine();
    let (piraeus, pyramids) = (wonder(&e, "piraeus"), wonder(&e, "pyramids"));
    let a = tactics_game(&e, 5, false);
    let b = tactics_game(&e, 6, true);
    assert_eq!(built_in_age_one(&e, &a, piraeus), Some((Player::P1, 2)));
    assert_eq!(built_in_age_one(&e, &b, piraeus), Some((Player::P1, 2)));
    assert_eq!(built_in_age_one(&e, &a, pyramids), None);
    assert!(matches!(built_in_age_one(&e, &b, pyramids), Some((Player::P2, _))));

    let t = age1_wonder_tactics(&e, std::slice::from_ref(&a)).unwrap();
    // P1 moves with 20, 18, ..., 2 cards left holding Piraeus; P2 holds no
    // extra-turn wonder and adds no chances.
    for left in 0..=20 {
        let expect = if left % 2 == 0 && left >= 2 { 1 } else { 0 };
        assert_eq!(t.by_cards_left[left].chances, expect, "{left} left");
    }
    assert_eq!(t.two_left, Rate { hits: 1, chances: 1 });
    assert_eq!(t.four_left, Rate { hits: 0, chances: 1 });
    assert_eq!(t.wonders_per_seat, [1.0, 0.0]);

    let t = age1_wonder_tactics(&e, &[a, b]).unwrap();
    assert_eq!(t.two_left, Rate { hits: 2, chances: 2 });
    assert_eq!(t.four_left, Rate { hits: 0, chances: 2 });
    assert_eq!(t.wonders_per_seat, [1.0, 0.5]);
}

#[test]
fn stats_survive_a_serialization_round_trip() {
    let e = engine();
    let records = generate_bootstrap_set(&e, 60, 8, 1);
    let reloaded: Vec<GameRecord> = records.iter().map(|r| GameRecord::from_jsonl(&r.to_jsonl()).unwrap()).collect();
    let a = stats_report(&e, &records).unwrap();
    assert_eq!(a, stats_report(&e, &reloaded).unwrap());
    let v = a.victory;
    assert!((v.civilian + v.scientific + v.military + v.draws + v.forfeits - 1.0).abs() < 1e-12);
    assert!((a.seats.first + a.seats.second + a.seats.draws - 1.0).abs() < 1e-12);
    assert!(a.wonder_preference.iter().all(|w| (0.0..=1.0).contains(&w.score)));
    assert!(a.wonder_preference.windows(2).all(|w| w[0].score >= w[1].score));
    let builds: f64 = a.card_builds.values().flat_map(|m| m.values()).sum();
    assert!(builds > 0.0);
}

#[test]
fn reference_table() {
    let empty = compare_with_reference(None);
    assert!(empty.iter().all(|r| r.computed.is_none() && r.delta.is_none()));
    assert!(empty.iter().any(|r| r.statistic == "civilian share" && r.reference == 0.580));
    assert!(empty.iter().any(|r| r.statistic == "first player win rate" && r.reference == 0.557));
    assert!(empty.iter().any(|r| r.reference == 0.668));
    let text = render_comparison(&empty);
    assert!(text.contains("0.580") && text.contains("0.557"));
    assert!(text.lines().count() == empty.len() + 1);

    let e = engine();
    let report = stats_report(&e, &generate_bootstrap_set(&e, 30, 1, 1)).unwrap();
    let rows = compare_with_reference(Some(&report));
    let civ = rows.iter().find(|r| r.statistic == "civilian share").unwrap();
    let split = report.victory.decisive_split();
    assert_eq!(civ.computed, Some(split[0]));
    assert!((civ.delta.unwrap() - (split[0] - 0.617)).abs() < 1e-12);

    assert_eq!(reference::coin_variant(6, 10), Some(0.536));
    assert_eq!(reference::coin_variant(7, 7), Some(reference::ENGINE_FIRST_PLAYER_WIN));
    assert_eq!(reference::coin_variant(8, 8), None);
    assert_eq!(reference::DRAFT_VARIANTS.map(|x| x.1), [0.676, 0.600, 0.546, 0.516]);
}

#[test]
fn wilson_interval_matches_the_closed_form() {
    // 50 of 100: centre 0.5, half-width z*sqrt(0.25/100 + z^2/40000)/(1+z^2/100).
    let z: f64 = 1.959_963_984_540_054;
    let half = z * (0.0025 + z * z / 40_000.0).sqrt() / (1.0 + z * z / 100.0);
    let (lo, hi) = wilson_interval(50, 100);
    assert!((lo - (0.5 - half)).abs() < 1e-12 && (hi - (0.5 + half)).abs() < 1e-12);
    assert_eq!(wilson_interval(0, 0), (0.0, 1.0));
    let (lo, hi) = wilson_interval(0, 10);
    assert_eq!(lo, 0.0);
    assert!(hi > 0.0 && hi < 0.35);
}
