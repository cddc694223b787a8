//! Statistics over sets of game records.
//!
//! Every function here is a pure function of the records; replays go
//! through the engine only to recover the public state at each decision.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Age, CardAge, TokenId, WonderId};
use crate::engine::{replay, Action, Engine, Event, GameRecord, Pending, Phase, Player, RecordError, Slot, VictoryType};

/// 95% Wilson score interval for `successes` out of `n`.
pub fn wilson_interval(successes: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    wilson_interval_for(successes as f64 / n as f64, n)
}

/// Wilson interval around an observed proportion `p` over `n` trials; also
/// used for scores where a draw counts half.
pub fn wilson_interval_for(p: f64, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054_f64;
    let n = n as f64;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VictoryShares {
    pub civilian: f64,
    pub scientific: f64,
    pub military: f64,
    pub draws: f64,
    /// Games ended by an illegal move; zero for engine-generated games.
    pub forfeits: f64,
    pub games: usize,
}

impl VictoryShares {
    /// The three-way split with draws and forfeits left out.
    pub fn decisive_split(&self) -> [f64; 3] {
        let t = self.civilian + self.scientific + self.military;
        if t == 0.0 {
            return [0.0; 3];
        }
        [self.civilian / t, self.scientific / t, self.military / t]
    }
}

pub fn victory_distribution(records: &[GameRecord]) -> VictoryShares {
    let mut s = VictoryShares { games: records.len(), ..Default::default() };
    if records.is_empty() {
        return s;
    }
    let unit = 1.0 / records.len() as f64;
    for r in records {
        match (r.outcome.winner, r.outcome.victory) {
            (None, _) => s.draws += unit,
            (_, Some(VictoryType::Civilian)) => s.civilian += unit,
            (_, Some(VictoryType::Scientific)) => s.scientific += unit,
            (_, Some(VictoryType::Military)) => s.military += unit,
            (_, Some(VictoryType::Forfeit)) | (_, None) => s.forfeits += unit,
        }
    }
    s
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeatShares {
    pub first: f64,
    pub second: f64,
    pub draws: f64,
    pub games: usize,
}

pub fn winner_by_seat(records: &[GameRecord]) -> SeatShares {
    let mut s = SeatShares { games: records.len(), ..Default::default() };
    if records.is_empty() {
        return s;
    }
    let unit = 1.0 / records.len() as f64;
    for r in records {
        match r.outcome.winner {
            Some(Player::P1) => s.first += unit,
            Some(Player::P2) => s.second += unit,
            None => s.draws += unit,
        }
    }
    s
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Preference {
    /// Mean draft score in [0, 1].
    pub score: f64,
    pub appearances: usize,
}

/// Draft scores of one record: for each group of four, the first pick
/// scores 1, the second and third 0.5, the wonder left over 0.
pub fn draft_scores(record: &GameRecord) -> Vec<(WonderId, f64)> {
    let mut out = Vec::with_capacity(8);
    let mut group: Vec<WonderId> = record.setup.wonders.iter().collect();
    let mut picks = 0;
    let close = |group: &mut Vec<WonderId>, out: &mut Vec<(WonderId, f64)>| {
        for w in group.drain(..) {
            out.push((w, 0.0));
        }
    };
    for e in &record.events {
        match e {
            Event::Action { action: Action::PickWonder(w), .. } => {
                let score = if picks % 3 == 0 { 1.0 } else { 0.5 };
                out.push((*w, score));
                group.retain(|x| x != w);
                picks += 1;
                if picks % 3 == 0 {
                    close(&mut group, &mut out);
                }
            }
            Event::Reveal(r) if !r.wonders.is_empty() => group = r.wonders.iter().collect(),
            _ => {}
        }
    }
    out
}

pub fn wonder_preference(records: &[GameRecord]) -> BTreeMap<WonderId, Preference> {
    let mut sums: BTreeMap<WonderId, (f64, usize)> = BTreeMap::new();
    for r in records {
        for (w, s) in draft_scores(r) {
            let e = sums.entry(w).or_default();
            e.0 += s;
            e.1 += 1;
        }
    }
    sums.into_iter()
        .map(|(w, (s, n))| (w, Preference { score: s / n as f64, appearances: n }))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenRank {
    pub token: TokenId,
    pub picked: usize,
    /// Token decisions at which this token could be taken.
    pub available: usize,
    /// `None` when the token was never available.
    pub frequency: Option<f64>,
}

/// Tokens by pick frequency per availability, highest first; ties by id;
/// never-available tokens last.
pub fn token_pick_ranking(engine: &Engine, records: &[GameRecord]) -> Result<Vec<TokenRank>, RecordError> {
    let n = engine.db().tokens.len();
    let mut picked = vec![0usize; n];
    let mut available = vec![0usize; n];
    for r in records {
        let states = replay(engine, r)?;
        for (k, e) in r.events.iter().enumerate() {
            let Event::Action { action: Action::PickToken(t), .. } = e else { continue };
            let s = &states[k];
            let offer = match s.pending {
                Some(Pending::PickToken { source: crate::engine::TokenSource::Library, .. }) => s.library_offer,
                _ => s.board_tokens,
            };
            for x in offer.iter() {
                available[x.0 as usize] += 1;
            }
            picked[t.0 as usize] += 1;
        }
    }
    let mut out: Vec<TokenRank> = (0..n)
        .map(|i| TokenRank {
            token: TokenId(i as u8),
            picked: picked[i],
            available: available[i],
            frequency: (available[i] > 0).then(|| picked[i] as f64 / available[i] as f64),
        })
        .collect();
    out.sort_by(|a, b| match (a.frequency, b.frequency) {
        (Some(x), Some(y)) => y.total_cmp(&x).then(a.token.cmp(&b.token)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.token.cmp(&b.token),
    });
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub hits: usize,
    pub chances: usize,
}

impl Rate {
    pub fn value(&self) -> Option<f64> {
        (self.chances > 0).then(|| self.hits as f64 / self.chances as f64)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Age1Tactics {
    /// Index = cards left in the age-I layout at the decision.
    pub by_cards_left: Vec<Rate>,
    pub two_left: Rate,
    pub four_left: Rate,
    /// Mean wonders built during age I, by seat.
    pub wonders_per_seat: [f64; 2],
}

/// Extra-turn wonder builds in age I. A turn counts as a chance when the
/// mover still holds an unbuilt extra-turn wonder.
pub fn age1_wonder_tactics(engine: &Engine, records: &[GameRecord]) -> Result<Age1Tactics, RecordError> {
    let db = engine.db();
    let extra = db.extra_turn_wonders();
    let mut out = Age1Tactics { by_cards_left: vec![Rate::default(); 21], ..Default::default() };
    let mut built = [0usize; 2];
    for r in records {
        let states = replay(engine, r)?;
        for (k, e) in r.events.iter().enumerate() {
            let Event::Action { player, action, .. } = e else { continue };
            let s = &states[k];
            if s.phase != Phase::Age(Age::I) || s.pending.is_some() {
                continue;
            }
            if let Action::BuildWonder(..) = action {
                built[player.index()] += 1;
            }
            if s.city(*player).wonders_unbuilt.intersection(extra).is_empty() {
                continue;
            }
            let left = s.cards_left();
            let rate = &mut out.by_cards_left[left.min(20)];
            rate.chances += 1;
            if matches!(action, Action::BuildWonder(_, w) if extra.contains(*w)) {
                rate.hits += 1;
            }
        }
    }
    out.two_left = out.by_cards_left[2];
    out.four_left = out.by_cards_left[4];
    if !records.is_empty() {
        let n = records.len() as f64;
        out.wonders_per_seat = [built[0] as f64 / n, built[1] as f64 / n];
    }
    Ok(out)
}

/// Builds per game of each card, keyed by card key, grouped by age.
pub fn card_build_frequency(
    engine: &Engine,
    records: &[GameRecord],
) -> Result<BTreeMap<String, BTreeMap<String, f64>>, RecordError> {
    let db = engine.db();
    let mut counts: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for r in records {
        let states = replay(engine, r)?;
        for (k, e) in r.events.iter().enumerate() {
            let Event::Action { action, .. } = e else { continue };
            let card = match *action {
                Action::Build(slot) => match states[k].slots[slot as usize] {
                    Slot::Card(c) => Some(c),
                    _ => None,
                },
                Action::PickDiscarded(c) => Some(c),
                _ => None,
            };
            if let Some(c) = card {
                let def = db.card(c);
                let age = match def.age {
                    CardAge::I => "I",
                    CardAge::II => "II",
                    CardAge::III | CardAge::Guild => "III",
                };
                *counts.entry(age.to_string()).or_default().entry(def.id.clone()).or_default() += 1.0;
            }
        }
    }
    if !records.is_empty() {
        let n = records.len() as f64;
        counts.values_mut().flat_map(|m| m.values_mut()).for_each(|v| *v /= n);
    }
    Ok(counts)
}

pub fn mean_game_length(records: &[GameRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().map(|r| r.decisions() as f64).sum::<f64>() / records.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WonderRow {
    pub wonder: String,
    pub score: f64,
    pub appearances: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenRow {
    pub token: String,
    pub picked: usize,
    pub available: usize,
    pub frequency: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub games: usize,
    pub victory: VictoryShares,
    pub seats: SeatShares,
    /// Highest preference first.
    pub wonder_preference: Vec<WonderRow>,
    pub token_ranking: Vec<TokenRow>,
    pub age1_tactics: Age1Tactics,
    pub card_builds: BTreeMap<String, BTreeMap<String, f64>>,
    pub mean_game_length: f64,
}

pub fn stats_report(engine: &Engine, records: &[GameRecord]) -> Result<StatsReport, RecordError> {
    let db = engine.db();
    let mut wonders: Vec<WonderRow> = wonder_preference(records)
        .into_iter()
        .map(|(w, p)| WonderRow { wonder: db.wonder(w).id.clone(), score: p.score, appearances: p.appearances })
        .collect();
    wonders.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.wonder.cmp(&b.wonder)));
    let tokens = token_pick_ranking(engine, records)?
        .into_iter()
        .map(|t| TokenRow {
            token: db.token(t.token).id.clone(),
            picked: t.picked,
            available: t.available,
            frequency: t.frequency,
        })
        .collect();
    Ok(StatsReport {
        games: records.len(),
        victory: victory_distribution(records),
        seats: winner_by_seat(records),
        wonder_preference: wonders,
        token_ranking: tokens,
        age1_tactics: age1_wonder_tactics(engine, records)?,
        card_builds: card_build_frequency(engine, records)?,
        mean_game_length: mean_game_length(records),
    })
}

/// Published figures kept for comparison. They come from a full-scale
/// training run and from online human games and cannot be reproduced at
/// desk scale.
pub mod reference {
    /// Full-scale self-play: civilian, scientific, military.
    pub const ENGINE_VICTORY_SPLIT: [f64; 3] = [0.617, 0.214, 0.169];
    /// Games between strong human players.
    pub const HUMAN_VICTORY_SPLIT: [f64; 3] = [0.580, 0.256, 0.164];
    pub const ENGINE_FIRST_PLAYER_WIN: f64 = 0.668;
    /// From 605 human games.
    pub const HUMAN_FIRST_PLAYER_WIN: f64 = 0.557;
    pub const EXTRA_TURN_WONDER_TWO_LEFT: f64 = 0.52;
    pub const EXTRA_TURN_WONDER_FOUR_LEFT: f64 = 0.12;
    /// Age-I wonders built by the first and second player.
    pub const AGE1_WONDERS_PER_SEAT: [f64; 2] = [0.83, 0.49];
    /// Most-picked progress tokens, in no particular order.
    pub const TOP_TOKENS: [&str; 3] = ["theology", "law", "strategy"];
    /// First-player win rate by (first player coins, second player coins).
    pub const COIN_VARIANTS: [((u32, u32), f64); 12] = [
        ((7, 7), 0.668),
        ((7, 8), 0.655),
        ((7, 9), 0.634),
        ((7, 10), 0.588),
        ((6, 7), 0.637),
        ((6, 8), 0.624),
        ((6, 9), 0.592),
        ((6, 10), 0.536),
        ((5, 7), 0.625),
        ((5, 8), 0.583),
        ((5, 9), 0.595),
        ((5, 10), 0.544),
    ];
    /// Estimated win rate of the player starting age I (standard rules)
    /// or of the second decision maker (variants 1 to 3).
    pub const DRAFT_VARIANTS: [(&str, f64); 4] = [("standard", 0.676), ("v1", 0.600), ("v2", 0.546), ("v3", 0.516)];

    pub fn coin_variant(first: u32, second: u32) -> Option<f64> {
        COIN_VARIANTS.iter().find(|(c, _)| *c == (first, second)).map(|(_, v)| *v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub statistic: String,
    /// Where the reference number comes from.
    pub source: String,
    pub reference: f64,
    pub computed: Option<f64>,
    pub delta: Option<f64>,
}

const ENGINE_SRC: &str = "full-scale self-play (reference only, not reproducible here)";
const HUMAN_SRC: &str = "online human games (reference only)";

/// Join a report with the stored reference numbers. With no report the
/// computed column is empty.
pub fn compare_with_reference(report: Option<&StatsReport>) -> Vec<ComparisonRow> {
    use reference::*;
    let split = report.map(|r| r.victory.decisive_split());
    let mut rows = Vec::new();
    let mut push = |stat: &str, source: &str, reference: f64, computed: Option<f64>| {
        rows.push(ComparisonRow {
            statistic: stat.to_string(),
            source: source.to_string(),
            reference,
            computed,
            delta: computed.map(|c| c - reference),
        });
    };
    let names = ["civilian share", "scientific share", "military share"];
    for i in 0..3 {
        push(names[i], ENGINE_SRC, ENGINE_VICTORY_SPLIT[i], split.map(|s| s[i]));
        push(names[i], HUMAN_SRC, HUMAN_VICTORY_SPLIT[i], split.map(|s| s[i]));
    }
    let first = report.map(|r| r.seats.first);
    push("first player win rate", ENGINE_SRC, ENGINE_FIRST_PLAYER_WIN, first);
    push("first player win rate", HUMAN_SRC, HUMAN_FIRST_PLAYER_WIN, first);
    let tactics = report.map(|r| &r.age1_tactics);
    push(
        "extra-turn wonder, 2 cards left in age I",
        ENGINE_SRC,
        EXTRA_TURN_WONDER_TWO_LEFT,
        tactics.and_then(|t| t.two_left.value()),
    );
    push(
        "extra-turn wonder, 4 cards left in age I",
        ENGINE_SRC,
        EXTRA_TURN_WONDER_FOUR_LEFT,
        tactics.and_then(|t| t.four_left.value()),
    );
    push("age-I wonders, first player", ENGINE_SRC, AGE1_WONDERS_PER_SEAT[0], tactics.map(|t| t.wonders_per_seat[0]));
    push("age-I wonders, second player", ENGINE_SRC, AGE1_WONDERS_PER_SEAT[1], tactics.map(|t| t.wonders_per_seat[1]));
    rows
}

/// Plain-text table of a comparison.
pub fn render_comparison(rows: &[ComparisonRow]) -> String {
    let fmt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
    let mut out = format!("{:<42} {:>9} {:>9} {:>8}  source\n", "statistic", "reference", "computed", "delta");
    for r in rows {
        out.push_str(&format!(
            "{:<42} {:>9.3} {:>9} {:>8}  {}\n",
            r.statistic,
            r.reference,
            fmt(r.computed),
            fmt(r.delta),
            r.source
        ));
    }
    out
}
