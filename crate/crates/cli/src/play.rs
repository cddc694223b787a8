//! Terminal play against the engine.

use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use duelzero_core::engine::{
    Dealer, Event, GameRecord, Header, Policy, SetupConfig, SetupEvent, StepResult, RECORD_VERSION,
};
use duelzero_core::mcts::{NetEvaluator, SearchConfig, SearchPolicy, UniformEvaluator};
use duelzero_core::nn::load_model;
use duelzero_core::selfplay::derive_seed;
use duelzero_core::Engine;
use duelzero_service::view::{player_of, seat_of, state_view, OutcomeView, StateView};

use crate::{io_err, write_file, CliError, CliResult, PlayArgs};

fn render(v: &StateView, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "\n== {} | seat {} to move ==", v.phase, v.to_move)?;
    for c in &v.players {
        let you = if Some(c.seat) == v.viewer { " (you)" } else { "" };
        writeln!(out, "seat {}{you}: {} coins, {} points", c.seat, c.coins, c.points)?;
        if !c.cards.is_empty() {
            writeln!(out, "  cards: {}", c.cards.join(", "))?;
        }
        if !c.wonders_built.is_empty() || !c.wonders_unbuilt.is_empty() {
            writeln!(out, "  wonders built: [{}] unbuilt: [{}]", c.wonders_built.join(", "), c.wonders_unbuilt.join(", "))?;
        }
        if !c.tokens.is_empty() {
            writeln!(out, "  tokens: {}", c.tokens.join(", "))?;
        }
    }
    writeln!(out, "military {:+} (positive toward seat 2)", v.military)?;
    if !v.board_tokens.is_empty() {
        writeln!(out, "board tokens: {}", v.board_tokens.join(", "))?;
    }
    if v.phase == "wonder_draft" {
        writeln!(out, "wonders on offer: {}", v.draft.offered.join(", "))?;
    } else {
        let open: Vec<String> = v
            .slots
            .iter()
            .filter(|s| s.accessible)
            .filter_map(|s| s.card.as_ref().map(|c| format!("{}:{c}", s.slot)))
            .collect();
        writeln!(out, "accessible: {}", open.join(", "))?;
    }
    if let Some(p) = &v.pending {
        writeln!(out, "pending: {} for seat {}{}", p.kind, p.seat, p.detail.as_ref().map_or(String::new(), |d| format!(" ({d})")))?;
    }
    if let Some(lib) = &v.library_offer {
        writeln!(out, "library draw: {}", lib.join(", "))?;
    }
    Ok(())
}

fn describe_outcome(o: &OutcomeView) -> String {
    let how = o.victory.map_or(String::new(), |v| format!(" by {v:?}").to_lowercase());
    match o.winner {
        Some(w) => format!("seat {w} wins{how}, points {} to {}", o.points[0], o.points[1]),
        None => format!("draw, points {} to {}", o.points[0], o.points[1]),
    }
}

pub(crate) fn play(engine: &Engine, a: &PlayArgs, seed: u64, input: &mut dyn BufRead, out: &mut dyn Write) -> CliResult<()> {
    let human = player_of(a.human_seat).ok_or_else(|| CliError::Usage("--human-seat is 1 or 2".into()))?;
    let search = SearchConfig::play().with_simulations(a.sims);
    let search_seed = derive_seed(seed, 8, 0);
    let mut bot: Box<dyn Policy> = match &a.model {
        Some(p) => {
            let model = load_model(p).map_err(|e| CliError::Model(format!("{}: {e}", p.display())))?;
            Box::new(SearchPolicy::new("engine", NetEvaluator { model: Arc::new(model) }, search, search_seed))
        }
        None => Box::new(SearchPolicy::new("engine-uniform", UniformEvaluator, search, search_seed)),
    };
    let setup = a.coins.map_or_else(SetupConfig::default, |c| c.setup());
    let (mut dealer, mut state) = Dealer::new(engine, &setup, seed);
    let mut names = [bot.name(), bot.name()];
    names[human.index()] = "human".into();
    let header = Header { version: RECORD_VERSION, seed, coins: setup.coins, policies: names };
    let start = SetupEvent { tokens: state.board_tokens, wonders: state.draft.offered };
    let mut events = Vec::new();
    let stdout = Path::new("<stdout>");
    let mut line = String::new();

    let outcome = loop {
        let step = if state.is_afterstate() {
            let r = dealer.reveal(&state);
            let step = engine.resolve_reveal(&state, &r).map_err(|e| CliError::Failed(e.to_string()))?;
            events.push(Event::Reveal(r));
            step
        } else {
            let legal = engine.legal_actions(&state).map_err(|e| CliError::Failed(e.to_string()))?;
            let player = state.to_move;
            let decision = if player == human {
                let view = state_view(engine, "local", &state, None, events.len(), Some(human));
                render(&view, out).map_err(io_err(stdout))?;
                let choices = view.legal.unwrap_or_default();
                loop {
                    for (i, c) in choices.iter().enumerate() {
                        writeln!(out, "  {:>2}) {}", i + 1, c.label).map_err(io_err(stdout))?;
                    }
                    write!(out, "your move (number, or q to resign)> ").map_err(io_err(stdout))?;
                    out.flush().map_err(io_err(stdout))?;
                    line.clear();
                    let n = input.read_line(&mut line).map_err(io_err(Path::new("<stdin>")))?;
                    let text = line.trim();
                    if n == 0 || text == "q" || text == "quit" {
                        writeln!(out, "\nresigned").map_err(io_err(stdout))?;
                        return Ok(());
                    }
                    match text.parse::<usize>() {
                        Ok(k) if (1..=choices.len()).contains(&k) => break choices[k - 1].action.into(),
                        _ => writeln!(out, "enter a number from 1 to {}", choices.len()).map_err(io_err(stdout))?,
                    }
                }
            } else {
                let d = bot.decide(engine, &state, &legal);
                writeln!(out, "seat {} plays: {}", seat_of(player), d.action.describe(engine.db(), &state))
                    .map_err(io_err(stdout))?;
                d
            };
            events.push(Event::Action { player, action: decision.action, visits: decision.visits });
            engine.apply(&state, decision.action).map_err(|e| CliError::Failed(e.to_string()))?
        };
        match step {
            StepResult::Final(_, o) => break o,
            other => state = other.into_state(),
        }
    };
    writeln!(out, "\ngame over: {}", describe_outcome(&OutcomeView::new(&outcome))).map_err(io_err(stdout))?;
    if let Some(p) = &a.out {
        let record = GameRecord { header, setup: start, events, outcome };
        write_file(p, &record.to_jsonl())?;
    }
    Ok(())
}
