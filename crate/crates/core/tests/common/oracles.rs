//! Independent oracles and scripted scenarios, shared by the module test
//! suites and the acceptance run.

use std::collections::HashSet;

use duelzero_core::data::{Age, TokenId, TokenSet, WonderId, WonderSet};
use duelzero_core::encode::{encode, legal_indices, TokenSequence};
use duelzero_core::engine::{
    replay, run_game, Action, Decision, Engine, Event, GameRecord, GameState, Header, Outcome, Phase, Player, Points,
    Policy, Reveal, SetupConfig, SetupEvent, Slot, StepResult, VictoryType, RECORD_VERSION,
};
use duelzero_core::nn::TrainingExample;
use duelzero_core::selfplay::BootstrapPolicy;
use duelzero_core::variants::{Side, Tree};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

pub fn outcome(winner: Option<Player>, victory: Option<VictoryType>) -> Outcome {
    Outcome { winner, victory, points: [Points::default(); 2], note: None }
}

pub fn bare(winner: Option<Player>, victory: Option<VictoryType>) -> GameRecord {
    GameRecord {
        header: Header { version: RECORD_VERSION, seed: 0, coins: [7, 7], policies: ["a".into(), "b".into()] },
        setup: SetupEvent { tokens: TokenSet::EMPTY, wonders: WonderSet::EMPTY },
        events: Vec::new(),
        outcome: outcome(winner, victory),
    }
}

/// Play a full game with fixed draft groups, choosing moves with `choose`
/// and drawing other reveals from a seeded generator.
pub fn scripted(
    e: &Engine,
    groups: [[&str; 4]; 2],
    tokens: [&str; 5],
    seed: u64,
    mut choose: impl FnMut(&GameState, &[Action]) -> Action,
) -> GameRecord {
    let tokens: TokenSet = tokens.iter().map(|t| token(e, t)).collect();
    let g: Vec<WonderSet> = groups.iter().map(|g| g.iter().map(|w| wonder(e, w)).collect()).collect();
    let setup = SetupConfig::default();
    let mut s = e.initial_state(&setup, tokens, g[0]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    loop {
        let step = if let Some(req) = &s.reveal {
            let r = if req.wonders { Reveal { wonders: g[1], ..Default::default() } } else { e.sample_reveal(&s, &mut rng) };
            events.push(Event::Reveal(r.clone()));
            e.resolve_reveal(&s, &r).unwrap()
        } else {
            let legal = e.legal_actions(&s).unwrap();
            let a = choose(&s, &legal);
            assert!(legal.contains(&a), "script chose an illegal {a:?}");
            events.push(Event::Action { player: s.to_move, action: a, visits: None });
            e.apply(&s, a).unwrap()
        };
        match step {
            StepResult::NextState(n) | StepResult::NeedsReveal(n) => s = n,
            StepResult::Final(_, o) => {
                return GameRecord {
                    header: Header { version: RECORD_VERSION, seed, coins: setup.coins, policies: ["s".into(), "s".into()] },
                    setup: SetupEvent { tokens, wonders: g[0] },
                    events,
                    outcome: o,
                };
            }
        }
    }
}

pub const GROUPS: [[&str; 4]; 2] = [
    ["piraeus", "pyramids", "colossus", "great_lighthouse"],
    ["mausoleum", "statue_of_zeus", "circus_maximus", "great_library"],
];

pub const TOKENS: [&str; 5] = ["agriculture", "law", "economy", "masonry", "urbanism"];

/// Draft: P1 piraeus, P2 pyramids then colossus, P2 mausoleum, P1 zeus then
/// circus. Then everybody discards, except the scripted wonder builds.
pub fn tactics_game(e: &Engine, seed: u64, p2_builds_pyramids: bool) -> GameRecord {
    let order = ["piraeus", "pyramids", "colossus", "mausoleum", "statue_of_zeus", "circus_maximus"];
    let mut picks = order.iter().map(|w| wonder(e, w));
    let (piraeus, pyramids) = (wonder(e, "piraeus"), wonder(e, "pyramids"));
    scripted(e, GROUPS, TOKENS, seed, |s, legal| {
        if s.phase == Phase::WonderDraft {
            return Action::PickWonder(picks.next().unwrap());
        }
        if s.phase == Phase::Age(Age::I) && s.pending.is_none() {
            let wants = match s.to_move {
                Player::P1 if s.cards_left() == 2 => Some(piraeus),
                Player::P2 if p2_builds_pyramids => Some(pyramids),
                _ => None,
            };
            if let Some(w) = wants {
                if let Some(a) = legal.iter().find(|a| matches!(a, Action::BuildWonder(_, x) if *x == w)) {
                    return *a;
                }
            }
        }
        *legal.iter().find(|a| matches!(a, Action::Discard(_))).unwrap_or(&legal[0])
    })
}

pub fn built_in_age_one(e: &Engine, r: &GameRecord, w: WonderId) -> Option<(Player, usize)> {
    let states = replay(e, r).unwrap();
    r.events.iter().enumerate().find_map(|(k, ev)| match ev {
        Event::Action { player, action: Action::BuildWonder(_, x), .. }
            if *x == w && states[k].phase == Phase::Age(Age::I) =>
        {
            Some((*player, states[k].cards_left()))
        }
        _ => None,
    })
}

/// Bootstrap play, except that Theology is always taken when offered.
pub struct TheologyFirst {
    pub inner: BootstrapPolicy,
    pub theology: TokenId,
    pub offers: Vec<(TokenSet, TokenId)>,
}

impl Policy for TheologyFirst {
    fn name(&self) -> String {
        "theology".into()
    }

    fn decide(&mut self, e: &Engine, s: &GameState, legal: &[Action]) -> Decision {
        let offer: TokenSet =
            legal.iter().filter_map(|a| if let Action::PickToken(t) = a { Some(*t) } else { None }).collect();
        let a = if offer.contains(self.theology) {
            Action::PickToken(self.theology)
        } else {
            self.inner.decide(e, s, legal).action
        };
        if let Action::PickToken(t) = a {
            self.offers.push((offer, t));
        }
        a.into()
    }
}

/// Exact game value for P1 by exhaustive search; panics on chance events.
pub fn exact_value(e: &Engine, s: &GameState) -> f32 {
    let mover = s.to_move;
    let mut best: Option<f32> = None;
    for a in e.legal_actions(s).unwrap() {
        let v = match step(e, s, a) {
            StepResult::Final(_, o) => o.value_for(Player::P1),
            StepResult::NextState(n) => exact_value(e, &n),
            StepResult::NeedsReveal(n) => panic!("endgame has a chance event after {a:?}: {:?}", n.reveal),
        };
        let better = match best {
            None => true,
            Some(b) if mover == Player::P1 => v > b,
            Some(b) => v < b,
        };
        if better {
            best = Some(v);
        }
    }
    best.unwrap()
}

/// Age III with only the named face-up slots left.
pub fn endgame(e: &Engine, keep: usize, wonders: bool) -> GameState {
    let mut s = age_state(e, Age::III, &[]);
    let faces = e.face_up_slots(Age::III);
    let kept: Vec<usize> = faces.iter().rev().take(keep).map(|&x| x as usize).collect();
    for (i, slot) in s.slots.iter_mut().enumerate() {
        if !kept.contains(&i) {
            *slot = Slot::Empty;
        }
    }
    let library = wonder(e, "great_library");
    for c in s.cities.iter_mut() {
        // The library draws tokens, a chance event.
        c.wonders_unbuilt.remove(library);
        if !wonders {
            c.wonders_unbuilt = WonderSet::EMPTY;
        }
    }
    s
}

pub fn random_tree(rng: &mut ChaCha8Rng, depth: usize) -> Tree<usize, f64> {
    if depth == 0 || (depth < 3 && rng.random_bool(0.25)) {
        return Tree::Leaf(rng.random_range(-1.0..1.0));
    }
    let decider = if rng.random_bool(0.5) { Side::Reference } else { Side::Opponent };
    let k = rng.random_range(1..=3);
    Tree::Node { decider, children: (0..k).map(|i| (i, random_tree(rng, depth - 1))).collect() }
}

/// Normal-form oracle: enumerate every pure strategy of both players and
/// take max over the reference player's of min over the opponent's.
pub fn strategy_profile_value(t: &Tree<usize, f64>) -> Option<f64> {
    fn index<'a>(t: &'a Tree<usize, f64>, nodes: &mut Vec<(&'a Tree<usize, f64>, Side, usize)>) {
        if let Tree::Node { decider, children } = t {
            nodes.push((t, *decider, children.len()));
            for (_, c) in children {
                index(c, nodes);
            }
        }
    }
    let mut nodes = Vec::new();
    index(t, &mut nodes);
    let mine: Vec<usize> = (0..nodes.len()).filter(|&i| nodes[i].1 == Side::Reference).collect();
    let theirs: Vec<usize> = (0..nodes.len()).filter(|&i| nodes[i].1 == Side::Opponent).collect();
    let count = |ids: &[usize]| ids.iter().map(|&i| nodes[i].2).product::<usize>();
    if count(&mine) > 3000 || count(&theirs) > 3000 {
        return None;
    }
    let decode = |ids: &[usize], mut code: usize| {
        let mut choice = vec![0usize; nodes.len()];
        for &i in ids {
            choice[i] = code % nodes[i].2;
            code /= nodes[i].2;
        }
        choice
    };
    let play = |a: &[usize], b: &[usize]| {
        let mut cur = t;
        loop {
            match cur {
                Tree::Leaf(v) => return *v,
                Tree::Node { decider, children } => {
                    let i = nodes.iter().position(|n| std::ptr::eq(n.0, cur)).unwrap();
                    let c = if *decider == Side::Reference { a[i] } else { b[i] };
                    cur = &children[c].1;
                }
            }
        }
    };
    let mut best = f64::NEG_INFINITY;
    for x in 0..count(&mine) {
        let a = decode(&mine, x);
        let worst = (0..count(&theirs)).map(|y| play(&a, &decode(&theirs, y))).fold(f64::INFINITY, f64::min);
        best = best.max(worst);
    }
    Some(best)
}

/// Standard drafts by brute force: every ordering of each group, with the
/// seat sequence 1-2-2-1 then 2-1-1-2 and the last wonder forced.
pub fn standard_sequences(groups: [&[WonderId]; 2]) -> HashSet<(Vec<WonderId>, Vec<WonderId>)> {
    fn perms(v: &[WonderId]) -> Vec<Vec<WonderId>> {
        if v.is_empty() {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for i in 0..v.len() {
            let mut rest = v.to_vec();
            let x = rest.remove(i);
            for mut p in perms(&rest) {
                p.insert(0, x);
                out.push(p);
            }
        }
        out
    }
    let mut out = HashSet::new();
    for a in perms(groups[0]) {
        for b in perms(groups[1]) {
            out.insert((a[..3].to_vec(), b[..3].to_vec()));
        }
    }
    out
}

pub fn hands_of(groups: [&[WonderId]; 2], seq: &(Vec<WonderId>, Vec<WonderId>)) -> (WonderSet, WonderSet) {
    let seats = [[0, 1, 1, 0], [1, 0, 0, 1]];
    let mut hands = [WonderSet::EMPTY; 2];
    for g in 0..2 {
        let picks = if g == 0 { &seq.0 } else { &seq.1 };
        let last = groups[g].iter().find(|w| !picks.contains(w)).unwrap();
        for (k, w) in picks.iter().chain(std::iter::once(last)).enumerate() {
            hands[seats[g][k]].insert(*w);
        }
    }
    (hands[0], hands[1])
}

/// Play a standard draft through the engine.
pub fn engine_draft(e: &Engine, tokens: TokenSet, w: &[WonderId], seq: &(Vec<WonderId>, Vec<WonderId>)) -> GameState {
    let mut s = e.initial_state(&SetupConfig::default(), tokens, w[..4].iter().copied().collect());
    for p in &seq.0 {
        s = e.apply(&s, Action::PickWonder(*p)).unwrap().into_state();
    }
    let r = Reveal { wonders: w[4..].iter().copied().collect(), ..Default::default() };
    s = e.resolve_reveal(&s, &r).unwrap().into_state();
    for (k, p) in seq.1.iter().enumerate() {
        match e.apply(&s, Action::PickWonder(*p)).unwrap() {
            StepResult::NeedsReveal(n) => {
                assert_eq!(k, 2);
                s = n;
            }
            StepResult::NextState(n) => s = n,
            StepResult::Final(..) => panic!("draft cannot end the game"),
        }
    }
    s
}

/// Non-terminal positions from a few random games with their legal actions.
pub fn positions(games: u64, every: usize) -> Vec<(TokenSequence, Vec<usize>)> {
    let e = engine();
    let mut out = Vec::new();
    for seed in 0..games {
        let rec = run_game(&e, &mut Uniform::new(seed), &mut Uniform::new(seed + 7), &SetupConfig::default(), seed);
        for s in replay(&e, &rec).unwrap().iter().step_by(every) {
            if s.is_terminal() || s.is_afterstate() {
                continue;
            }
            out.push((encode(s), legal_indices(&e, s).unwrap()));
        }
    }
    out
}

pub fn examples(n: usize, seed: u64) -> Vec<TrainingExample> {
    let mut r = rng(seed);
    positions(4, 5)
        .into_iter()
        .take(n)
        .map(|(seq, legal)| {
            let raw: Vec<f32> = legal.iter().map(|_| r.random_range(0.0..1.0)).collect();
            let sum: f32 = raw.iter().sum();
            let pi = raw.iter().map(|x| x / sum).collect();
            let z = [-1.0, 0.0, 1.0][r.random_range(0..3)];
            TrainingExample::new(seq, legal.iter().map(|&i| i as u16).collect(), z, Some(pi))
        })
        .collect()
}
