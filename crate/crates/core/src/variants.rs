//! Rule variants: different starting coins, and alternative wonder drafts
//! valued by minimax over the evaluator's values of end-of-draft afterstates.
//!
//! In the draft variants one player (Aristotle) makes the draft decisions and
//! the other (Cleopatra) is the player whose win rate is reported. For the
//! standard draft the reported player is the one who starts age I.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::wilson_interval_for;
use crate::data::{Age, TokenSet, WonderId, WonderSet};
use crate::encode::{encode, EncodeError};
use crate::engine::{Engine, GameRecord, GameState, Player, RevealRequest, SetupConfig};
use crate::nn::{Model, NnError};
use crate::selfplay::{arena_match, derive_seed, parallel_map, Contender};

#[derive(Debug, thiserror::Error)]
pub enum VariantError {
    #[error("at least one game or setup is required")]
    Empty,
    #[error("a draft needs 8 wonders, got {0}")]
    WonderCount(usize),
    #[error("wonder {0:?} appears twice")]
    DuplicateWonder(WonderId),
    #[error("unknown wonder {0:?}")]
    UnknownWonder(WonderId),
    #[error(transparent)]
    Network(#[from] NnError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
}

/// Starting coins for the first and second player.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CoinVariant {
    pub first: u32,
    pub second: u32,
}

impl CoinVariant {
    pub fn new(first: u32, second: u32) -> CoinVariant {
        CoinVariant { first, second }
    }

    pub fn standard() -> CoinVariant {
        CoinVariant::new(7, 7)
    }

    pub fn mirrored(self) -> CoinVariant {
        CoinVariant::new(self.second, self.first)
    }

    pub fn setup(self) -> SetupConfig {
        SetupConfig { coins: [self.first, self.second] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoinReport {
    pub variant: CoinVariant,
    pub games: usize,
    pub first_wins: usize,
    pub second_wins: usize,
    pub draws: usize,
    /// First player's score, a draw counting half.
    pub first_score: f64,
    /// 95% Wilson interval around `first_score`.
    pub ci: (f64, f64),
}

impl CoinReport {
    pub fn from_records(variant: CoinVariant, records: &[GameRecord]) -> CoinReport {
        let mut rep = CoinReport {
            variant,
            games: records.len(),
            first_wins: 0,
            second_wins: 0,
            draws: 0,
            first_score: 0.0,
            ci: (0.0, 1.0),
        };
        for r in records {
            match r.outcome.winner {
                Some(Player::P1) => rep.first_wins += 1,
                Some(Player::P2) => rep.second_wins += 1,
                None => rep.draws += 1,
            }
        }
        if rep.games > 0 {
            rep.first_score = (rep.first_wins as f64 + 0.5 * rep.draws as f64) / rep.games as f64;
            rep.ci = wilson_interval_for(rep.first_score, rep.games);
        }
        rep
    }
}

/// Self-play `games` games of `player` against itself with the variant's
/// starting coins.
pub fn coin_variant_winrate(
    engine: &Engine,
    player: &Contender,
    variant: CoinVariant,
    games: usize,
    seed: u64,
    threads: usize,
) -> Result<(CoinReport, Vec<GameRecord>), VariantError> {
    if games == 0 {
        return Err(VariantError::Empty);
    }
    let (_, records) = arena_match(engine, player, player, games, &variant.setup(), seed, threads);
    Ok((CoinReport::from_records(variant, &records), records))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DraftKind {
    /// Picks 1-2-2-1 then 2-1-1-2; the first picker starts age I.
    Standard,
    /// Aristotle chooses whether to start the first draft; the other player
    /// starts the second; Cleopatra starts age I.
    V1,
    /// Aristotle chooses whether to start each draft; Cleopatra starts age I.
    V2,
    /// Aristotle splits the 8 wonders into the age-I starter's 4 and the
    /// other player's 4; Cleopatra then chooses whether to start age I.
    V3,
}

impl DraftKind {
    pub const ALL: [DraftKind; 4] = [DraftKind::Standard, DraftKind::V1, DraftKind::V2, DraftKind::V3];

    pub fn name(self) -> &'static str {
        match self {
            DraftKind::Standard => "standard",
            DraftKind::V1 => "v1",
            DraftKind::V2 => "v2",
            DraftKind::V3 => "v3",
        }
    }

    pub fn parse(s: &str) -> Option<DraftKind> {
        DraftKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// The player whose win rate is reported, or their opponent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Reference,
    Opponent,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Reference => Side::Opponent,
            Side::Opponent => Side::Reference,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// A finite two-player game tree. The maximizer is the reference player.
#[derive(Clone, Debug, PartialEq)]
pub enum Tree<M, L> {
    Leaf(L),
    Node { decider: Side, children: Vec<(M, Tree<M, L>)> },
}

impl<M, L> Tree<M, L> {
    pub fn leaf_count(&self) -> usize {
        match self {
            Tree::Leaf(_) => 1,
            Tree::Node { children, .. } => children.iter().map(|(_, c)| c.leaf_count()).sum(),
        }
    }

    pub fn leaves(&self) -> Vec<&L> {
        fn walk<'a, M, L>(t: &'a Tree<M, L>, out: &mut Vec<&'a L>) {
            match t {
                Tree::Leaf(l) => out.push(l),
                Tree::Node { children, .. } => children.iter().for_each(|(_, c)| walk(c, out)),
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out
    }

    pub fn children(&self) -> &[(M, Tree<M, L>)] {
        match self {
            Tree::Leaf(_) => &[],
            Tree::Node { children, .. } => children,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimax<M> {
    /// Root value for the reference player.
    pub value: f64,
    /// Child indices along the optimal line.
    pub path: Vec<usize>,
    pub moves: Vec<M>,
}

/// Exact backward induction; ties go to the earliest child.
pub fn minimax<M: Clone, L>(tree: &Tree<M, L>, leaf_value: &mut impl FnMut(&L) -> f64) -> Minimax<M> {
    match tree {
        Tree::Leaf(l) => Minimax { value: leaf_value(l), path: Vec::new(), moves: Vec::new() },
        Tree::Node { decider, children } => {
            assert!(!children.is_empty(), "decision node without children");
            let mut best: Option<(usize, Minimax<M>)> = None;
            for (i, (_, child)) in children.iter().enumerate() {
                let r = minimax(child, leaf_value);
                let better = match &best {
                    None => true,
                    Some((_, b)) => match decider {
                        Side::Reference => r.value > b.value,
                        Side::Opponent => r.value < b.value,
                    },
                };
                if better {
                    best = Some((i, r));
                }
            }
            let (i, mut r) = best.unwrap();
            r.path.insert(0, i);
            r.moves.insert(0, children[i].0.clone());
            r
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DraftMove {
    Pick(WonderId),
    /// Whether the decider starts the current draft group.
    StartDraft(bool),
    /// The 4 wonders given to the age-I starter.
    Partition(WonderSet),
    /// Whether the decider starts age I.
    StartAge(bool),
}

/// A finished draft.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DraftLeaf {
    /// Wonders of the player starting age I.
    pub starter: WonderSet,
    pub other: WonderSet,
    pub reference_starts: bool,
}

#[derive(Clone, Debug)]
pub struct DraftTree {
    pub kind: DraftKind,
    /// The two draft groups, in reveal order.
    pub groups: [WonderSet; 2],
    pub tokens: TokenSet,
    pub root: Tree<DraftMove, DraftLeaf>,
}

impl DraftTree {
    /// Leaves with distinct wonder assignments, seat-relative.
    pub fn distinct_assignments(&self) -> Vec<(WonderSet, WonderSet)> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for l in self.root.leaves() {
            if seen.insert((l.starter, l.other)) {
                out.push((l.starter, l.other));
            }
        }
        out
    }
}

struct Builder {
    kind: DraftKind,
    groups: [WonderSet; 2],
}

impl Builder {
    fn group_start(&self, g: usize, hands: [WonderSet; 2], first_starter: Side) -> Tree<DraftMove, DraftLeaf> {
        let fixed = |starter| self.pick(g, starter, self.groups[g], 0, hands, starter);
        let choice = || Tree::Node {
            decider: Side::Opponent,
            children: vec![
                (DraftMove::StartDraft(true), self.pick(g, Side::Opponent, self.groups[g], 0, hands, Side::Opponent)),
                (DraftMove::StartDraft(false), self.pick(g, Side::Reference, self.groups[g], 0, hands, Side::Reference)),
            ],
        };
        match (self.kind, g) {
            (DraftKind::Standard, 0) => fixed(Side::Reference),
            (DraftKind::Standard, _) => fixed(Side::Opponent),
            (DraftKind::V1, 0) | (DraftKind::V2, _) => choice(),
            (DraftKind::V1, _) => fixed(first_starter.other()),
            (DraftKind::V3, _) => unreachable!("partition draft has no pick groups"),
        }
    }

    /// Picks within one group of 4: the starter takes one, the other player
    /// two, and the starter gets the last.
    fn pick(
        &self,
        g: usize,
        starter: Side,
        left: WonderSet,
        picked: usize,
        hands: [WonderSet; 2],
        first_starter: Side,
    ) -> Tree<DraftMove, DraftLeaf> {
        if picked == 3 {
            let mut hands = hands;
            hands[starter.index()] = hands[starter.index()].union(left);
            let first_starter = if g == 0 { starter } else { first_starter };
            return if g == 0 {
                self.group_start(1, hands, first_starter)
            } else {
                Tree::Leaf(DraftLeaf {
                    starter: hands[Side::Reference.index()],
                    other: hands[Side::Opponent.index()],
                    reference_starts: true,
                })
            };
        }
        let decider = if picked == 0 { starter } else { starter.other() };
        let children = left
            .iter()
            .map(|w| {
                let mut rest = left;
                rest.remove(w);
                let mut h = hands;
                h[decider.index()].insert(w);
                (DraftMove::Pick(w), self.pick(g, starter, rest, picked + 1, h, first_starter))
            })
            .collect();
        Tree::Node { decider, children }
    }

    fn partition(&self) -> Tree<DraftMove, DraftLeaf> {
        let all = self.groups[0].union(self.groups[1]);
        let children = four_subsets(all)
            .into_iter()
            .map(|starter| {
                let other = all.difference(starter);
                let age = Tree::Node {
                    decider: Side::Reference,
                    children: vec![
                        (DraftMove::StartAge(true), Tree::Leaf(DraftLeaf { starter, other, reference_starts: true })),
                        (DraftMove::StartAge(false), Tree::Leaf(DraftLeaf { starter, other, reference_starts: false })),
                    ],
                };
                (DraftMove::Partition(starter), age)
            })
            .collect();
        Tree::Node { decider: Side::Opponent, children }
    }
}

/// All 4-element subsets, in lexicographic order of member positions.
pub fn four_subsets(set: WonderSet) -> Vec<WonderSet> {
    let ids: Vec<WonderId> = set.iter().collect();
    let n = ids.len();
    let mut out = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                for d in c + 1..n {
                    out.push([ids[a], ids[b], ids[c], ids[d]].into_iter().collect());
                }
            }
        }
    }
    out
}

/// Draft tree for 8 revealed wonders (first group = the first 4).
pub fn build_draft_tree(kind: DraftKind, wonders: &[WonderId], tokens: TokenSet) -> Result<DraftTree, VariantError> {
    if wonders.len() != 8 {
        return Err(VariantError::WonderCount(wonders.len()));
    }
    let mut all = WonderSet::EMPTY;
    for &w in wonders {
        if w.0 as u32 >= u16::BITS {
            return Err(VariantError::UnknownWonder(w));
        }
        if all.contains(w) {
            return Err(VariantError::DuplicateWonder(w));
        }
        all.insert(w);
    }
    let groups = [wonders[..4].iter().copied().collect(), wonders[4..].iter().copied().collect()];
    let b = Builder { kind, groups };
    let root = match kind {
        DraftKind::V3 => b.partition(),
        _ => b.group_start(0, [WonderSet::EMPTY; 2], Side::Reference),
    };
    Ok(DraftTree { kind, groups, tokens, root })
}

pub fn minimax_draft(tree: &DraftTree, mut leaf_value: impl FnMut(&DraftLeaf) -> f64) -> Minimax<DraftMove> {
    minimax(&tree.root, &mut leaf_value)
}

/// The standard-rules afterstate at the end of the draft: the first player
/// holds `p1`, the second `p2`, and the age I deal is pending.
pub fn draft_afterstate(
    engine: &Engine,
    setup: &SetupConfig,
    tokens: TokenSet,
    groups: [WonderSet; 2],
    p1: WonderSet,
    p2: WonderSet,
) -> GameState {
    let mut s = engine.initial_state(setup, tokens, groups[0]);
    s.draft.offered = WonderSet::EMPTY;
    s.draft.seen = groups[0].union(groups[1]);
    s.draft.picks = 8;
    s.cities[0].wonders_unbuilt = p1;
    s.cities[1].wonders_unbuilt = p2;
    s.to_move = Player::P1;
    s.reveal = Some(RevealRequest::deal(Age::I));
    s
}

/// Values of afterstates in [-1, 1] from the first player's point of view.
pub trait AfterstateValue: Sync {
    fn first_player_values(&self, states: &[GameState]) -> Result<Vec<f64>, VariantError>;
}

impl AfterstateValue for Model<f32> {
    fn first_player_values(&self, states: &[GameState]) -> Result<Vec<f64>, VariantError> {
        let seqs: Vec<_> = states.iter().map(encode).collect();
        let refs: Vec<_> = seqs.iter().collect();
        let values = self.evaluate_values(&refs)?;
        Ok(states
            .iter()
            .zip(values)
            .map(|(s, v)| if s.to_move == Player::P1 { v as f64 } else { -(v as f64) })
            .collect())
    }
}

/// Adapter for a plain function of the state.
pub struct ValueFn<F>(pub F);

impl<F: Fn(&GameState) -> f64 + Sync> AfterstateValue for ValueFn<F> {
    fn first_player_values(&self, states: &[GameState]) -> Result<Vec<f64>, VariantError> {
        Ok(states.iter().map(&self.0).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetupValue {
    pub wonders: Vec<WonderId>,
    pub tokens: TokenSet,
    /// Reference player's win probability under optimal drafting.
    pub win_probability: f64,
    pub line: Vec<DraftMove>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub kind: DraftKind,
    pub setups: Vec<SetupValue>,
    pub mean: f64,
    pub std_error: f64,
}

/// Value one setup: evaluate every distinct leaf once, then minimax over
/// win probabilities p = (v + 1) / 2.
pub fn evaluate_setup(
    engine: &Engine,
    evaluator: &dyn AfterstateValue,
    kind: DraftKind,
    wonders: &[WonderId],
    tokens: TokenSet,
) -> Result<SetupValue, VariantError> {
    let tree = build_draft_tree(kind, wonders, tokens)?;
    let setup = SetupConfig::default();
    let assignments = tree.distinct_assignments();
    let states: Vec<GameState> = assignments
        .iter()
        .map(|&(a, b)| draft_afterstate(engine, &setup, tokens, tree.groups, a, b))
        .collect();
    let values = evaluator.first_player_values(&states)?;
    let by_assignment: HashMap<(WonderSet, WonderSet), f64> = assignments.into_iter().zip(values).collect();
    let r = minimax_draft(&tree, |l| {
        let v = by_assignment[&(l.starter, l.other)];
        let v = if l.reference_starts { v } else { -v };
        (v + 1.0) / 2.0
    });
    Ok(SetupValue { wonders: wonders.to_vec(), tokens, win_probability: r.value, line: r.moves })
}

/// Random 8 wonders (in reveal order) and board tokens.
pub fn sample_setup(engine: &Engine, seed: u64) -> (Vec<WonderId>, TokenSet) {
    let db = engine.db();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wonders: Vec<WonderId> = db.all_wonders().iter().collect();
    wonders.shuffle(&mut rng);
    wonders.truncate(8);
    let mut tokens: Vec<_> = db.all_tokens().iter().collect();
    tokens.shuffle(&mut rng);
    (wonders, tokens[..db.rules.board_tokens].iter().copied().collect())
}

/// Mean reference-player win probability over `n` sampled setups.
pub fn variant_winrate(
    engine: &Engine,
    evaluator: &dyn AfterstateValue,
    kind: DraftKind,
    n: usize,
    seed: u64,
    threads: usize,
) -> Result<VariantReport, VariantError> {
    if n == 0 {
        return Err(VariantError::Empty);
    }
    let ids: Vec<u64> = (0..n as u64).collect();
    let setups = parallel_map(&ids, threads, |_, &i| {
        let (wonders, tokens) = sample_setup(engine, derive_seed(seed, 4, i));
        evaluate_setup(engine, evaluator, kind, &wonders, tokens)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let ps: Vec<f64> = setups.iter().map(|s| s.win_probability).collect();
    let mean = ps.iter().sum::<f64>() / n as f64;
    let var = if n > 1 { ps.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    Ok(VariantReport { kind, setups, mean, std_error: (var / n as f64).sqrt() })
}
