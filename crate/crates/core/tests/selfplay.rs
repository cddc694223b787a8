mod common;

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::sync::Arc;

use common::*;
use duelzero_core::analysis::{mean_game_length, victory_distribution, winner_by_seat};
use duelzero_core::data::Color;
use duelzero_core::encode::{legal_indices, TokenSequence};
use duelzero_core::engine::{
    replay, run_game, Action, Decision, Engine, Event, GameRecord, GameState, Policy, SetupConfig, Slot, VictoryType,
};
use duelzero_core::mcts::SearchConfig;
use duelzero_core::nn::{evaluate_loss, load_model, Model, ModelConfig, TrainConfig, TrainingExample};
use duelzero_core::selfplay::*;
use proptest::prelude::*;

fn decision_states(e: &Engine, records: &[GameRecord]) -> Vec<(GameState, Vec<Action>)> {
    let mut out = Vec::new();
    for r in records {
        let states = replay(e, r).unwrap();
        for (k, ev) in r.events.iter().enumerate() {
            if matches!(ev, Event::Action { .. }) {
                let legal = e.legal_actions(&states[k]).unwrap();
                out.push((states[k].clone(), legal));
            }
        }
    }
    out
}

fn builds_of(e: &Engine, s: &GameState, legal: &[Action], color: Color) -> Vec<Action> {
    legal
        .iter()
        .copied()
        .filter(|a| match *a {
            Action::Build(slot) => matches!(s.slots[slot as usize], Slot::Card(c) if e.db().card(c).color == color),
            _ => false,
        })
        .collect()
}

#[test]
fn bootstrap_rules() {
    let e = engine();
    let records = generate_bootstrap_set(&e, 20, 1, 1);
    let states = decision_states(&e, &records);
    let mut r = rng(3);
    let mut green_states = 0;
    for (s, legal) in states.iter().take(600) {
        let has_keep = legal.iter().any(|a| !matches!(a, Action::Discard(_)));
        for _ in 0..20 {
            let a = bootstrap_action(BootstrapKind::RandomPreferNotDiscard, &e, s, legal, &mut r);
            assert!(legal.contains(&a));
            if has_keep {
                assert!(!matches!(a, Action::Discard(_)));
            }
        }
        for (kind, color) in [(BootstrapKind::GreenSeeker, Color::Green), (BootstrapKind::RedSeeker, Color::Red)] {
            let targets = builds_of(&e, s, legal, color);
            let a = bootstrap_action(kind, &e, s, legal, &mut r);
            assert!(legal.contains(&a));
            if !targets.is_empty() {
                assert!(targets.contains(&a), "{kind:?} ignored a {color:?} build");
                green_states += (color == Color::Green) as usize;
            } else if has_keep {
                assert!(!matches!(a, Action::Discard(_)));
            }
        }
    }
    assert!(green_states > 0, "fixture never offered a green build");
}

#[test]
fn bootstrap_samples_uniformly_within_the_allowed_set() {
    let e = engine();
    let records = generate_bootstrap_set(&e, 5, 2, 1);
    let (s, legal) = decision_states(&e, &records)
        .into_iter()
        .find(|(_, l)| {
            let discards = l.iter().filter(|a| matches!(a, Action::Discard(_))).count();
            discards >= 2 && l.len() - discards >= 3
        })
        .unwrap();
    let only_discards: Vec<Action> = legal.iter().copied().filter(|a| matches!(a, Action::Discard(_))).collect();
    assert!(only_discards.len() >= 2);
    let n = 6000;
    for kind in BootstrapKind::ALL {
        let mut r = rng(kind as u64);
        let mut counts: BTreeMap<Action, usize> = BTreeMap::new();
        for _ in 0..n {
            *counts.entry(bootstrap_action(kind, &e, &s, &only_discards, &mut r)).or_default() += 1;
        }
        let k = only_discards.len() as f64;
        let expect = n as f64 / k;
        let sd = (n as f64 * (1.0 / k) * (1.0 - 1.0 / k)).sqrt();
        assert_eq!(counts.len(), only_discards.len());
        for c in counts.values() {
            assert!((*c as f64 - expect).abs() < 5.0 * sd, "{kind:?} {counts:?}");
        }
    }
}

#[test]
fn bootstrap_set_is_deterministic_and_varied() {
    let e = engine();
    let a = generate_bootstrap_set(&e, 400, 9, 1);
    let b = generate_bootstrap_set(&e, 400, 9, 3);
    assert_eq!(a, b);
    assert_eq!(a.len(), 400);
    let types: HashSet<_> = a.iter().filter_map(|r| r.outcome.victory).collect();
    for t in [VictoryType::Civilian, VictoryType::Scientific, VictoryType::Military] {
        assert!(types.contains(&t), "no {t:?} win in the set");
    }
    let pairs: HashSet<_> = a.iter().map(|r| r.header.policies.clone()).collect();
    assert_eq!(pairs.len(), 9);
    assert_ne!(a, generate_bootstrap_set(&e, 400, 10, 1));
}

#[test]
fn example_targets_follow_the_winner() {
    let e = engine();
    let records = generate_bootstrap_set(&e, 3000, 4, 1);
    let mut saw_draw = false;
    for r in records.iter().take(50).chain(records.iter().filter(|r| r.outcome.winner.is_none()).take(3)) {
        let ex = examples_from_record(&e, r, true).unwrap();
        let states = replay(&e, r).unwrap();
        let movers: Vec<_> = r
            .events
            .iter()
            .enumerate()
            .filter(|(_, ev)| matches!(ev, Event::Action { .. }))
            .map(|(k, _)| states[k].to_move)
            .collect();
        assert_eq!(ex.len(), movers.len());
        assert_eq!(ex.len(), r.decisions());
        for (x, p) in ex.iter().zip(movers) {
            let z = match r.outcome.winner {
                None => 0.0,
                Some(w) if w == p => 1.0,
                Some(_) => -1.0,
            };
            assert_eq!(x.value, z);
            assert!(x.policy.is_none(), "bootstrap games carry no visits");
        }
        saw_draw |= r.outcome.winner.is_none();
    }
    assert!(saw_draw, "no drawn game among 3000 bootstrap games");
}

fn tagged(game: usize, n: usize) -> Vec<TrainingExample> {
    (0..n)
        .map(|i| TrainingExample::new(TokenSequence { tokens: vec![[0, 0]] }, vec![0], (game * 100 + i) as f32, None))
        .collect()
}

#[test]
fn buffer_evicts_whole_games_oldest_first() {
    let mut b = ReplayBuffer::new(3);
    for g in 0..5 {
        b.push_game(tagged(g, g + 1));
    }
    assert_eq!(b.games(), 3);
    assert_eq!(b.len(), 3 + 4 + 5);
    let firsts: Vec<f32> = (0..3).map(|i| b.game(i).unwrap()[0].value).collect();
    assert_eq!(firsts, vec![200.0, 300.0, 400.0]);
}

proptest! {
    #[test]
    fn buffer_matches_a_fifo_model(cap in 1usize..8, sizes in prop::collection::vec(0usize..4, 0..30)) {
        let mut b = ReplayBuffer::new(cap);
        let mut model: VecDeque<usize> = VecDeque::new();
        for (g, n) in sizes.iter().enumerate() {
            b.push_game(tagged(g, *n));
            model.push_back(g);
            if model.len() > cap {
                model.pop_front();
            }
            prop_assert!(b.games() <= cap);
            prop_assert_eq!(b.games(), model.len());
            for (i, g) in model.iter().enumerate() {
                prop_assert_eq!(b.game(i).unwrap().len(), sizes[*g]);
                if sizes[*g] > 0 {
                    prop_assert_eq!(b.game(i).unwrap()[0].value, (*g * 100) as f32);
                }
            }
        }
    }
}

fn toy() -> Arc<Model<f32>> {
    Arc::new(Model::new(ModelConfig::toy(), 17).unwrap())
}

#[test]
fn selfplay_records_are_reproducible_and_carry_visit_targets() {
    let e = engine();
    let m = toy();
    let search = SearchConfig::training().with_simulations(8);
    let (a, stats) = selfplay_iteration(&e, &m, 3, &search, 5, 1);
    let (b, _) = selfplay_iteration(&e, &m, 3, &search, 5, 2);
    assert_eq!(a, b);
    for r in &a {
        assert!(r.events.iter().any(|ev| matches!(ev, Event::Action { visits: Some(_), .. })));
        let states = replay(&e, r).unwrap();
        let ex = examples_from_record(&e, r, true).unwrap();
        let mut k = 0;
        for (i, ev) in r.events.iter().enumerate() {
            let Event::Action { visits, .. } = ev else { continue };
            let x = &ex[k];
            k += 1;
            let legal: Vec<u16> = legal_indices(&e, &states[i]).unwrap().iter().map(|&j| j as u16).collect();
            assert_eq!(x.legal, legal);
            match (visits, &x.policy) {
                (Some(_), Some(p)) => {
                    assert_eq!(p.len(), legal.len());
                    assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-5);
                    assert!(p.iter().all(|&q| q >= 0.0));
                }
                (None, None) => assert_eq!(legal.len(), 1, "only forced moves skip search"),
                other => panic!("visits and target disagree: {other:?}"),
            }
        }
    }
    // Iteration statistics agree with the analysis module.
    let seats = winner_by_seat(&a);
    assert_eq!(stats.games, 3);
    assert!((stats.first_player_win_rate - seats.first).abs() < 1e-12);
    let v = victory_distribution(&a);
    assert!((stats.victory_split[0] - v.civilian).abs() < 1e-12);
    assert!((stats.victory_split[1] - v.scientific).abs() < 1e-12);
    assert!((stats.victory_split[2] - v.military).abs() < 1e-12);
    assert!((stats.mean_length - mean_game_length(&a)).abs() < 1e-12);
}

#[test]
fn arena_alternates_seats() {
    let e = engine();
    let a = Contender::Bootstrap(BootstrapKind::GreenSeeker);
    let b = Contender::Bootstrap(BootstrapKind::RedSeeker);
    let (rep, recs) = arena_match(&e, &a, &b, 10, &SetupConfig::default(), 1, 2);
    assert_eq!(rep.a_first.games, 5);
    assert_eq!(rep.a_second.games, 5);
    assert_eq!(rep.a_wins + rep.b_wins + rep.draws, 10);
    for (i, r) in recs.iter().enumerate() {
        let first = &r.header.policies[0];
        assert_eq!(first == "bootstrap:green", i % 2 == 0);
    }
    let (again, _) = arena_match(&e, &a, &b, 10, &SetupConfig::default(), 1, 1);
    assert_eq!(rep, again);
    let (one, recs) = arena_match(&e, &a, &b, 1, &SetupConfig::default(), 1, 1);
    assert_eq!((one.games, recs.len()), (1, 1));
    assert_eq!(one.a_wins + one.b_wins + one.draws, 1);

    let m = Contender::Model { model: toy(), simulations: 2, label: "toy".into() };
    let (selfmatch, _) = arena_match(&e, &m, &m, 4, &SetupConfig::default(), 2, 1);
    assert_eq!(selfmatch.a_first.games, selfmatch.a_second.games);
}

#[test]
fn pretraining_beats_the_zero_baseline() {
    let e = engine();
    let records = generate_bootstrap_set(&e, 550, 6, 1);
    let (train, held) = records.split_at(500);
    let mut m = Model::<f32>::new(ModelConfig::toy(), 1).unwrap();
    let cfg = PipelineConfig::toy();
    pretrain_value(&e, &mut m, train, &cfg.train, cfg.pretrain_epochs, 2).unwrap();
    let held: Vec<TrainingExample> = held.iter().flat_map(|r| examples_from_record(&e, r, false).unwrap()).collect();
    let mse = evaluate_loss(&m, &held, 0.0).unwrap().value;
    let baseline = zero_baseline_mse(&held);
    assert!(mse < baseline, "held-out mse {mse} vs baseline {baseline}");
}

#[test]
fn small_sets_are_sampled_with_replacement() {
    let e = engine();
    let r = generate_bootstrap_set(&e, 1, 1, 1);
    let ex: Vec<_> = examples_from_record(&e, &r[0], false).unwrap().into_iter().take(5).collect();
    let mut m = Model::<f32>::new(ModelConfig::toy(), 1).unwrap();
    let reports = train_epochs(&mut m, &ex, &TrainConfig { batch_size: 32, ..Default::default() }, 2, 0).unwrap();
    assert_eq!(reports.len(), 2);
    assert!(reports.iter().all(|r| r.examples == 32));
    assert!(train_epochs(&mut m, &[], &TrainConfig::default(), 1, 0).is_err());
}

/// Bootstrap player that reports its move as a one-visit search result, so
/// records carry a learnable policy target.
struct Teacher(BootstrapPolicy);

impl Policy for Teacher {
    fn name(&self) -> String {
        "teacher".into()
    }

    fn decide(&mut self, e: &Engine, s: &GameState, legal: &[Action]) -> Decision {
        let a = self.0.decide(e, s, legal).action;
        Decision { action: a, visits: Some(vec![(a, 1)]) }
    }
}

#[test]
fn retraining_lowers_held_out_policy_loss() {
    let e = engine();
    let records: Vec<GameRecord> = (0..70)
        .map(|i| {
            let mut a = Teacher(BootstrapPolicy::new(BootstrapKind::RandomPreferNotDiscard, 2 * i));
            let mut b = Teacher(BootstrapPolicy::new(BootstrapKind::RandomPreferNotDiscard, 2 * i + 1));
            run_game(&e, &mut a, &mut b, &SetupConfig::default(), i)
        })
        .collect();
    let mut buffer = ReplayBuffer::new(100);
    for r in &records[..60] {
        buffer.push_game(examples_from_record(&e, r, true).unwrap());
    }
    let held: Vec<TrainingExample> =
        records[60..].iter().flat_map(|r| examples_from_record(&e, r, true).unwrap()).collect();
    assert!(held.iter().all(|x| x.policy.is_some()));
    let m = toy();
    let before = evaluate_loss(&*m, &held, 0.0).unwrap().policy;
    let mut trained = (*m).clone();
    retrain(&mut trained, &buffer, &PipelineConfig::toy().train, 2, 1).unwrap();
    let after = evaluate_loss(&trained, &held, 0.0).unwrap().policy;
    assert!(after < before, "policy loss {before} -> {after}");
}

#[test]
fn config_files_round_trip() {
    for name in ["toy", "paper"] {
        let c = PipelineConfig::preset(name).unwrap();
        c.validate().unwrap();
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
    let toy = PipelineConfig::toy();
    assert_eq!((toy.bootstrap_games, toy.games_per_iteration, toy.buffer_games), (2000, 500, 2000));
    let paper = PipelineConfig::paper();
    assert_eq!((paper.bootstrap_games, paper.games_per_iteration, paper.buffer_games), (35_000, 3000, 100_000));
    assert_eq!((paper.training_simulations, paper.play_simulations), (1000, 5000));
    let bad = PipelineConfig { iterations: 0, ..toy.clone() };
    assert!(bad.validate().is_err());
    assert!(PipelineConfig::from_toml(&bad.to_toml()).is_err());
    let extra = format!("{}\nsurprise = 1\n", toy.to_toml());
    assert!(PipelineConfig::from_toml(&extra).is_err());
}

fn tiny(dir: &std::path::Path, iterations: usize) -> PipelineConfig {
    PipelineConfig {
        bootstrap_games: 8,
        holdout_games: 2,
        games_per_iteration: 2,
        iterations,
        training_simulations: 4,
        buffer_games: 7,
        pretrain_epochs: 1,
        retrain_epochs: 1,
        checkpoint_dir: dir.to_path_buf(),
        threads: 1,
        train: TrainConfig { batch_size: 64, ..Default::default() },
        ..PipelineConfig::toy()
    }
}

fn snapshot(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in walk(dir) {
        let rel = entry.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
        if rel != "metrics.jsonl" {
            out.insert(rel, std::fs::read(&entry).unwrap());
        }
    }
    out
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn pipeline_resumes_to_identical_files() {
    let e = engine();
    let full = tempfile::tempdir().unwrap();
    let summary = run_pipeline(&e, &tiny(full.path(), 2), 42).unwrap();
    assert_eq!(summary.iterations_completed, 2);
    assert!(load_model(&summary.final_model).is_ok());
    let metrics = std::fs::read_to_string(full.path().join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 4);

    // Stopped after one iteration, then resumed.
    let part = tempfile::tempdir().unwrap();
    run_pipeline(&e, &tiny(part.path(), 1), 42).unwrap();
    run_pipeline(&e, &tiny(part.path(), 2), 42).unwrap();
    assert_eq!(snapshot(full.path()), snapshot(part.path()));

    // Interrupted between writing records and saving the model.
    std::fs::remove_file(full.path().join("model_002.dznn")).unwrap();
    let before = snapshot(part.path());
    run_pipeline(&e, &tiny(full.path(), 2), 42).unwrap();
    assert_eq!(snapshot(full.path()), before);
}
