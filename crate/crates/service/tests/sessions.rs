use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use duelzero_core::engine::{
    replay, state_hash, Action, Dealer, Event, GameRecord, GameState, Player, Reason, SetupConfig, Slot, StepResult,
};
use duelzero_core::nn::{save_model, Model, ModelConfig};
use duelzero_core::Engine;
use duelzero_service::session::Legal;
use duelzero_service::view::{Face, Notification, StateView};
use duelzero_service::{Checkpoints, Manager, SeatKind, ServiceError, SessionSettings};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn manager() -> Manager {
    Manager::new(Engine::default(), Checkpoints::new(None), None, 1).unwrap()
}

fn settings(seed: u64, seats: [SeatKind; 2], sims: u32) -> SessionSettings {
    SessionSettings { seed: Some(seed), seats, simulations: sims, ..Default::default() }
}

const HUMAN_VS_ENGINE: [SeatKind; 2] = [SeatKind::Human, SeatKind::Engine];
const HUMANS: [SeatKind; 2] = [SeatKind::Human, SeatKind::Human];

/// Card keys named anywhere in a view.
fn keys_in(view: &StateView, e: &Engine) -> BTreeSet<String> {
    let text = serde_json::to_string(view).unwrap();
    e.db()
        .all_cards()
        .iter()
        .map(|c| e.db().card(c).id.clone())
        .filter(|k| text.contains(&format!("\"{k}\"")))
        .collect()
}

/// Play a session to the end: the human seats move at random, the engine
/// seats search. Returns every view seen along the way.
fn play_out(m: &Manager, id: &str, seed: u64) -> Vec<StateView> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut views = vec![];
    loop {
        let v = m.view(id, None).unwrap();
        if v.outcome.is_some() {
            views.push(v);
            return views;
        }
        let seat = v.to_move;
        views.push(m.view(id, Some(seat)).unwrap());
        views.push(m.view(id, Some(3 - seat)).unwrap());
        views.push(v);
        match m.engine_move(id) {
            Ok(mv) => assert!(mv.view.events > views.last().unwrap().events),
            Err(ServiceError::NotEngineTurn) => {
                let legal = m.legal(id, Some(seat)).unwrap().legal;
                let a = legal.choose(&mut rng).unwrap().action;
                m.submit(id, seat, a).unwrap();
            }
            Err(e) => panic!("{e}"),
        }
    }
}

fn record(m: &Manager, id: &str) -> GameRecord {
    GameRecord::from_jsonl(&m.transcript(id).unwrap().to_jsonl()).unwrap()
}

#[test]
fn default_session_starts_in_the_draft() {
    let m = manager();
    let c = m.create(SessionSettings::default()).unwrap();
    assert_eq!(c.schema_version, 1);
    assert_eq!(c.view.phase, "wonder_draft");
    assert_eq!(c.view.draft.offered.len(), 4);
    assert_eq!(c.view.to_move, 1);
    assert!(c.view.slots.iter().all(|s| s.face == Face::Empty));
    let legal = m.legal(&c.session, Some(1)).unwrap();
    assert_eq!(legal.legal.len(), 4);
    assert!(legal.legal.iter().all(|l| matches!(l.action, Action::PickWonder(_))));
}

#[test]
fn fixed_seeds_give_identical_views() {
    let a = manager().create(settings(42, HUMAN_VS_ENGINE, 10)).unwrap();
    let b = manager().create(settings(42, HUMAN_VS_ENGINE, 10)).unwrap();
    assert_eq!(a, b);
    let c = manager().create(settings(43, HUMAN_VS_ENGINE, 10)).unwrap();
    assert_ne!(a.view.state_hash, c.view.state_hash);
}

#[test]
fn bad_settings_create_nothing() {
    let m = manager();
    let bad = SessionSettings { checkpoint: "nope".into(), ..Default::default() };
    assert!(matches!(m.create(bad), Err(ServiceError::UnknownCheckpoint(_))));
    let traversal = SessionSettings { checkpoint: "../model_001".into(), ..Default::default() };
    assert!(matches!(m.create(traversal), Err(ServiceError::UnknownCheckpoint(_))));
    let schema = SessionSettings { schema_version: 2, ..Default::default() };
    assert!(matches!(m.create(schema), Err(ServiceError::Schema(2))));
    assert!(m.session_ids().is_empty());
    assert!(matches!(m.view("g000000", None), Err(ServiceError::NotFound(_))));
}

#[test]
fn checkpoints_are_listed_and_loaded() {
    let dir = tempfile::tempdir().unwrap();
    let model = Model::<f32>::new(ModelConfig::toy(), 3).unwrap();
    save_model(&model, dir.path().join("model_001.dznn")).unwrap();
    std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
    let m = Manager::new(Engine::default(), Checkpoints::new(Some(dir.path().into())), None, 0).unwrap();
    assert_eq!(m.checkpoints(), ["uniform", "model_001"]);
    let c = m
        .create(SessionSettings { checkpoint: "model_001".into(), ..settings(1, [SeatKind::Engine, SeatKind::Human], 8) })
        .unwrap();
    let mv = m.engine_move(&c.session).unwrap();
    assert!(matches!(mv.action, Action::PickWonder(_)));
    assert_eq!(mv.search.simulations, 8);
}

#[test]
fn submissions_are_validated() {
    let m = manager();
    let id = m.create(settings(5, HUMAN_VS_ENGINE, 10)).unwrap().session;
    let Legal { legal, .. } = m.legal(&id, Some(1)).unwrap();
    // Seat 2 is the engine and not on move.
    assert!(matches!(m.submit(&id, 2, legal[0].action), Err(ServiceError::NotYourTurn(2))));
    assert!(matches!(m.submit(&id, 3, legal[0].action), Err(ServiceError::BadRequest(_))));
    match m.submit(&id, 1, Action::Build(0)) {
        Err(ServiceError::Illegal { reason, .. }) => assert_eq!(reason, Reason::WrongPhase),
        other => panic!("{other:?}"),
    }
    assert!(matches!(m.submit("g999999", 1, legal[0].action), Err(ServiceError::NotFound(_))));
    assert!(matches!(m.engine_move(&id), Err(ServiceError::NotEngineTurn)));
    let r = m.submit(&id, 1, legal[0].action).unwrap();
    assert_eq!(r.view.to_move, 2);
    assert_eq!(r.next.to_move, 2);
    assert_eq!(r.next.legal.len(), 3);
    assert!(r.outcome.is_none());
    // The engine holds seat 2.
    assert!(matches!(m.submit(&id, 2, r.next.legal[0].action), Err(ServiceError::EngineSeat(2))));
    // Rejections leave the game untouched.
    assert_eq!(m.view(&id, None).unwrap().events, 1);
}

#[test]
fn full_game_transcript_replays_to_the_final_state() {
    let e = Engine::default();
    let m = manager();
    let id = m.create(settings(11, HUMAN_VS_ENGINE, 16)).unwrap().session;
    assert!(matches!(m.transcript(&id), Err(ServiceError::InProgress)));
    let views = play_out(&m, &id, 3);
    let last = views.last().unwrap();
    let outcome = last.outcome.as_ref().unwrap();
    assert_eq!(last.phase, "terminal");
    let rec = record(&m, &id);
    let states = replay(&e, &rec).unwrap();
    assert_eq!(format!("{:016x}", state_hash(states.last().unwrap())), last.state_hash);
    assert_eq!(rec.outcome.winner.map(|p| p.index() as u8 + 1), outcome.winner);
    assert_eq!(rec.header.policies, ["human".to_string(), "engine:uniform:16".to_string()]);
    assert!(matches!(m.submit(&id, 1, Action::Build(0)), Err(ServiceError::GameOver)));
    assert!(matches!(m.analysis(&id, 1, 5), Err(ServiceError::GameOver)));
    // Engine moves carry their visit counts into the record.
    assert!(rec.events.iter().any(|ev| matches!(ev, Event::Action { player: Player::P2, visits: Some(_), .. })));
}

/// The card later revealed at each hidden slot, per event index.
fn hidden_truth(e: &Engine, rec: &GameRecord, states: &[GameState], k: usize) -> Vec<String> {
    let s = &states[k];
    let hidden: Vec<u8> = (0..s.slots.len() as u8).filter(|&i| s.slots[i as usize] == Slot::Hidden).collect();
    let mut out = Vec::new();
    for ev in &rec.events[k..] {
        if let Event::Reveal(r) = ev {
            if r.cards.len() > 4 {
                break; // next age dealt
            }
            for &(slot, c) in &r.cards {
                if hidden.contains(&slot) {
                    out.push(e.db().card(c).id.clone());
                }
            }
        }
    }
    out
}

#[test]
fn views_never_show_hidden_cards() {
    let e = Engine::default();
    let m = manager();
    for seed in 0..3 {
        let id = m.create(settings(100 + seed, [SeatKind::Human, SeatKind::Human], 8)).unwrap().session;
        let views = play_out(&m, &id, seed);
        let rec = record(&m, &id);
        let states = replay(&e, &rec).unwrap();
        let mut checked = 0;
        for v in &views {
            let s = &states[v.events];
            assert_eq!(format!("{:016x}", state_hash(s)), v.state_hash);
            for sv in &v.slots {
                let truth = s.slots[sv.slot as usize];
                assert_eq!(sv.face == Face::Hidden, truth == Slot::Hidden);
                if sv.face != Face::Up {
                    assert!(sv.card.is_none());
                    let json = serde_json::to_value(sv).unwrap();
                    let fields: BTreeSet<&str> = json.as_object().unwrap().keys().map(|k| k.as_str()).collect();
                    assert_eq!(fields, BTreeSet::from(["slot", "row", "column", "face", "accessible"]));
                }
            }
            let named = keys_in(v, &e);
            for k in hidden_truth(&e, &rec, &states, v.events) {
                assert!(!named.contains(&k), "hidden {k} leaked at event {}", v.events);
                checked += 1;
            }
        }
        assert!(checked > 0);
    }
}

#[test]
fn library_draws_are_private() {
    let e = Engine::default();
    let m = manager();
    // Find a game in which someone builds the Great Library.
    for seed in 0..400u64 {
        let id = m.create(settings(seed, HUMANS, 8)).unwrap().session;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let library = e.db().wonder_id("great_library").unwrap();
        loop {
            let v = m.view(&id, None).unwrap();
            if v.outcome.is_some() {
                break;
            }
            if v.pending.as_ref().is_some_and(|p| p.detail.as_deref() == Some("library_draw")) {
                let me = v.to_move;
                let mine = m.view(&id, Some(me)).unwrap();
                let theirs = m.view(&id, Some(3 - me)).unwrap();
                let offer = mine.library_offer.clone().unwrap();
                assert_eq!(offer.len(), 3);
                assert!(theirs.library_offer.is_none() && v.library_offer.is_none());
                assert!(theirs.legal.is_none());
                assert!(m.legal(&id, Some(3 - me)).unwrap().legal.is_empty());
                assert!(m.legal(&id, None).unwrap().legal.is_empty());
                assert_eq!(m.legal(&id, Some(me)).unwrap().legal.len(), 3);
                assert!(matches!(m.analysis(&id, 3 - me, 4), Err(ServiceError::NotYourTurn(_))));
                return;
            }
            let legal = m.legal(&id, Some(v.to_move)).unwrap().legal;
            let a = legal
                .iter()
                .find(|l| matches!(l.action, Action::BuildWonder(_, w) if w == library))
                .unwrap_or_else(|| legal.choose(&mut rng).unwrap())
                .action;
            m.submit(&id, v.to_move, a).unwrap();
        }
    }
    panic!("no game built the Great Library");
}

#[test]
fn engine_moves_are_deterministic_and_sorted() {
    let run = || {
        let m = manager();
        let id = m.create(settings(9, [SeatKind::Engine, SeatKind::Human], 60)).unwrap().session;
        m.engine_move(&id).unwrap()
    };
    let a = run();
    assert_eq!(a, run());
    assert_eq!(a.search.simulations, 60);
    assert_eq!(a.search.edges.iter().map(|x| x.visits).sum::<u32>(), 60);
    assert!(a.search.edges.windows(2).all(|w| w[0].visits >= w[1].visits));
    assert_eq!(a.action, a.search.edges[0].action);
    assert_eq!(a.view.to_move, 2);
}

#[test]
fn analysis_is_cached_and_agrees_with_the_engine() {
    let m = manager();
    let id = m.create(settings(21, [SeatKind::Engine, SeatKind::Human], 40)).unwrap().session;
    let before = m.view(&id, None).unwrap();
    let (a, hit) = m.analysis(&id, 1, 40).unwrap();
    assert!(!hit);
    let (b, hit) = m.analysis(&id, 1, 40).unwrap();
    assert!(hit);
    assert_eq!(a, b);
    assert_eq!(m.view(&id, None).unwrap(), before, "analysis must not advance the game");
    let (one, _) = m.analysis(&id, 2, 1).unwrap();
    assert_eq!(one.simulations, 1);
    assert_eq!(one.edges.iter().map(|x| x.visits).sum::<u32>(), 1);
    assert!(matches!(m.analysis(&id, 1, 0), Err(ServiceError::BadRequest(_))));
    let mv = m.engine_move(&id).unwrap();
    assert_eq!(mv.action, a.edges[0].action);
    assert_eq!(mv.search, a);

    // The human's position: a table over their legal actions.
    let (h, _) = m.analysis(&id, 2, 30).unwrap();
    let legal: BTreeSet<Action> = m.legal(&id, Some(2)).unwrap().legal.iter().map(|l| l.action).collect();
    assert_eq!(h.seat, 2);
    assert_eq!(h.edges.iter().map(|x| x.action).collect::<BTreeSet<_>>(), legal);
}

/// A seed and opening after which the player to move can win at once,
/// found by random play with the session's own dealer.
fn forced_win(e: &Engine) -> (u64, Vec<Action>, Player) {
    for seed in 0..2000u64 {
        let (mut dealer, mut s) = Dealer::new(e, &SetupConfig::default(), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut opening = Vec::new();
        loop {
            if s.is_afterstate() {
                let r = dealer.reveal(&s);
                s = e.resolve_reveal(&s, &r).unwrap().into_state();
                continue;
            }
            let legal = e.legal_actions(&s).unwrap();
            let wins: Vec<Action> = legal
                .iter()
                .copied()
                .filter(|&a| matches!(e.apply(&s, a).unwrap(), StepResult::Final(_, o) if o.winner == Some(s.to_move)))
                .collect();
            if !wins.is_empty() && wins.len() < legal.len() && legal.len() >= 3 && s.age().is_some() {
                return (seed, opening, s.to_move);
            }
            let a = *legal.choose(&mut rng).unwrap();
            opening.push(a);
            match e.apply(&s, a).unwrap() {
                StepResult::Final(..) => break,
                step => s = step.into_state(),
            }
        }
    }
    panic!("no forced win found");
}

#[test]
fn engine_takes_a_forced_win() {
    let e = Engine::default();
    let (seed, opening, mover) = forced_win(&e);
    let mut seats = HUMANS;
    seats[mover.index()] = SeatKind::Engine;
    let m = manager();
    let c = m.create_from(settings(seed, seats, 200), &opening).unwrap();
    assert_eq!(c.view.to_move, mover.index() as u8 + 1);
    let mv = m.engine_move(&c.session).unwrap();
    let out = mv.view.outcome.expect("game over");
    assert_eq!(out.winner, Some(mover.index() as u8 + 1));
    let rec = record(&m, &c.session);
    assert_eq!(rec.decisions(), opening.len() + 1);
}

#[test]
fn sessions_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let open = || Manager::new(Engine::default(), Checkpoints::new(None), Some(dir.path().into()), 7).unwrap();
    let (id, views) = {
        let m = open();
        let id = m.create(settings(31, HUMAN_VS_ENGINE, 8)).unwrap().session;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..25 {
            let v = m.view(&id, None).unwrap();
            if m.engine_move(&id).is_err() {
                let legal = m.legal(&id, Some(v.to_move)).unwrap().legal;
                m.submit(&id, v.to_move, legal.choose(&mut rng).unwrap().action).unwrap();
            }
        }
        let views = [m.view(&id, None).unwrap(), m.view(&id, Some(1)).unwrap()];
        (id, views)
    };
    let m = open();
    assert_eq!(m.session_ids(), [id.clone()]);
    assert_eq!([m.view(&id, None).unwrap(), m.view(&id, Some(1)).unwrap()], views);
    // The game continues and new sessions do not reuse the id.
    play_out(&m, &id, 1);
    let rec = record(&m, &id);
    replay(&Engine::default(), &rec).unwrap();
    assert_eq!(m.create(settings(1, HUMANS, 8)).unwrap().session, "g000001");

    // A torn last line is dropped and the log rewritten.
    let path = dir.path().join("g000001.jsonl");
    let lines = std::fs::read_to_string(&path).unwrap();
    let m = open();
    let a = m.legal("g000001", Some(1)).unwrap().legal[0].action;
    m.submit("g000001", 1, a).unwrap();
    drop(m);
    let mut text = std::fs::read_to_string(&path).unwrap();
    assert!(text.len() > lines.len());
    text.push_str("{\"type\":\"eve");
    std::fs::write(&path, &text).unwrap();
    let m = open();
    assert_eq!(m.view("g000001", None).unwrap().events, 1);
    assert!(!std::fs::read_to_string(&path).unwrap().contains("\"eve\n"));
    assert!(std::fs::read_to_string(&path).unwrap().lines().all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));
}

#[test]
fn concurrent_engine_moves_are_refused_and_progress_is_streamed() {
    let m = Arc::new(manager());
    let id = m.create(settings(3, [SeatKind::Engine, SeatKind::Human], 400_000)).unwrap().session;
    let (backlog, mut rx) = m.subscribe(&id, None).unwrap();
    assert!(matches!(backlog[0].message, Notification::TurnChange { to_move: 1, .. }));
    let worker = {
        let (m, id) = (m.clone(), id.clone());
        std::thread::spawn(move || m.engine_move(&id))
    };
    // Wait for the first progress report, then try again.
    loop {
        match rx.blocking_recv().unwrap().message {
            Notification::EngineProgress { simulations, total } => {
                assert_eq!(total, 400_000);
                assert!(simulations > 0);
                break;
            }
            other => panic!("unexpected {other:?}"),
        }
    }
    assert!(matches!(m.engine_move(&id), Err(ServiceError::Busy)));
    let done = worker.join().unwrap().unwrap();
    assert_eq!(done.search.simulations, 400_000);
    // After the move: the next turn change is stored for replay.
    let (backlog, _) = m.subscribe(&id, Some(1)).unwrap();
    assert!(matches!(backlog[0].message, Notification::TurnChange { to_move: 2, .. }));
}

#[test]
fn analysis_is_cancelled_when_the_position_moves() {
    let m = Arc::new(manager());
    let id = m.create(settings(4, HUMANS, 8)).unwrap().session;
    let worker = {
        let (m, id) = (m.clone(), id.clone());
        std::thread::spawn(move || m.analysis(&id, 1, 50_000_000))
    };
    std::thread::sleep(Duration::from_millis(300));
    let a = m.legal(&id, Some(1)).unwrap().legal[0].action;
    m.submit(&id, 1, a).unwrap();
    assert!(matches!(worker.join().unwrap(), Err(ServiceError::Cancelled)));
}
