//! Monte Carlo tree search over decision nodes and capped chance nodes.
//!
//! Decision nodes pick edges by PUCT. An afterstate becomes a chance node
//! that holds at most `cap(n)` realized children: while under the cap a new
//! outcome is drawn from the public belief (a repeat of an existing outcome
//! counts as a visit to that child), and once at the cap the search continues
//! through a uniformly chosen existing child.
//!
//! Values are always stored from the view of the player to move at the
//! node owning the edge, and backups follow player identity rather than
//! depth, since extra turns give one player consecutive decisions.

use std::ops::ControlFlow;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encode::{action_index, encode, EncodeError};
use crate::engine::{Action, Engine, EngineError, GameState, Player, Reveal, StepResult};
use crate::nn::{BatchClient, Input, Model, NnError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    /// Fixed chance cap, root noise, moves sampled by visit count.
    Training,
    /// Widening chance cap, most-visited move.
    Play,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RootNoise {
    pub enabled: bool,
    /// Dirichlet concentration.
    pub alpha: f64,
    /// Share of the noise in the mixed prior.
    pub weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub simulations: u32,
    pub c_puct: f32,
    /// Children allowed per chance node before widening.
    pub base_cap: u32,
    /// Play-mode widening: cap grows by one at n = w, 4w, 9w, ...
    pub widening_divisor: u32,
    pub noise: RootNoise,
    pub mode: SearchMode,
}

impl SearchConfig {
    pub fn training() -> SearchConfig {
        SearchConfig {
            simulations: 1000,
            c_puct: 1.25,
            base_cap: 11,
            widening_divisor: 64,
            // As in AlphaZero.
            noise: RootNoise { enabled: true, alpha: 0.3, weight: 0.25 },
            mode: SearchMode::Training,
        }
    }

    pub fn play() -> SearchConfig {
        SearchConfig {
            simulations: 5000,
            noise: RootNoise { enabled: false, ..Self::training().noise },
            mode: SearchMode::Play,
            ..Self::training()
        }
    }

    pub fn with_simulations(self, simulations: u32) -> SearchConfig {
        SearchConfig { simulations, ..self }
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        if self.simulations == 0 || self.base_cap == 0 || self.widening_divisor == 0 {
            return Err(SearchError::Config("simulations, cap and widening divisor must be positive"));
        }
        if !(self.c_puct >= 0.0) {
            return Err(SearchError::Config("c_puct must be non-negative"));
        }
        Ok(())
    }

    /// Children allowed at a chance node visited `n` times.
    pub fn chance_cap(&self, n: u32) -> u32 {
        match self.mode {
            SearchMode::Training => self.base_cap,
            SearchMode::Play => self.base_cap + ((n / self.widening_divisor) as f64).sqrt().floor() as u32,
        }
    }
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search config: {0}")]
    Config(&'static str),
    #[error("cannot search from a terminal state")]
    Terminal,
    #[error("cannot search from an afterstate; resolve the reveal first")]
    Afterstate,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Network(#[from] NnError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("evaluator returned {got} priors for {expected} actions")]
    PriorLength { got: usize, expected: usize },
    #[error("search cancelled")]
    Cancelled,
}

/// Leaf evaluation: value for the player to move and priors aligned with
/// the legal actions.
pub trait Evaluator {
    fn evaluate(&self, engine: &Engine, state: &GameState, legal: &[Action]) -> Result<(f32, Vec<f32>), SearchError>;
}

impl<E: Evaluator + ?Sized> Evaluator for &E {
    fn evaluate(&self, engine: &Engine, state: &GameState, legal: &[Action]) -> Result<(f32, Vec<f32>), SearchError> {
        (**self).evaluate(engine, state, legal)
    }
}

/// Value 0 and uniform priors.
#[derive(Clone, Copy, Debug, Default)]
pub struct UniformEvaluator;

impl Evaluator for UniformEvaluator {
    fn evaluate(&self, _: &Engine, _: &GameState, legal: &[Action]) -> Result<(f32, Vec<f32>), SearchError> {
        Ok((0.0, vec![1.0 / legal.len() as f32; legal.len()]))
    }
}

fn indices(legal: &[Action]) -> Result<Vec<usize>, SearchError> {
    legal
        .iter()
        .map(|&a| Ok(action_index(a)?))
        .collect()
}

/// Direct evaluation with a shared model.
#[derive(Clone)]
pub struct NetEvaluator {
    pub model: Arc<Model<f32>>,
}

impl Evaluator for NetEvaluator {
    fn evaluate(&self, _: &Engine, state: &GameState, legal: &[Action]) -> Result<(f32, Vec<f32>), SearchError> {
        let idx = indices(legal)?;
        let seq = encode(state);
        let ev = self.model.evaluate_batch(&[Input { seq: &seq, legal: &idx }])?.pop().expect("one result");
        Ok((ev.value, idx.iter().map(|&i| ev.policy[i]).collect()))
    }
}

/// Evaluation through a [`crate::nn::BatchServer`].
#[derive(Clone)]
pub struct BatchedEvaluator {
    pub client: BatchClient,
}

impl Evaluator for BatchedEvaluator {
    fn evaluate(&self, _: &Engine, state: &GameState, legal: &[Action]) -> Result<(f32, Vec<f32>), SearchError> {
        let idx = indices(legal)?;
        let ev = self.client.evaluate(encode(state), idx.clone())?;
        Ok((ev.value, idx.iter().map(|&i| ev.policy[i]).collect()))
    }
}

/// Statistics of one root edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeStats {
    pub action: Action,
    pub visits: u32,
    /// Mean value for the root player; 0 when unvisited.
    pub q: f32,
    pub prior: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub player: Player,
    /// One entry per legal action, in vocabulary order.
    pub edges: Vec<EdgeStats>,
    /// Mean backed-up value over all root simulations, for the root player.
    pub value: f32,
    /// Most-visited line of play from the root.
    pub principal_variation: Vec<Action>,
    pub simulations: u32,
}

impl SearchResult {
    pub fn visits(&self) -> Vec<(Action, u32)> {
        self.edges.iter().map(|e| (e.action, e.visits)).collect()
    }

    /// Visit distribution over the legal actions.
    pub fn policy(&self) -> Vec<f32> {
        let total: u32 = self.edges.iter().map(|e| e.visits).sum();
        self.edges.iter().map(|e| e.visits as f32 / total.max(1) as f32).collect()
    }
}

/// Sample by visit count in training mode; most visits (lowest index on
/// ties) in play mode.
pub fn choose_action<R: Rng + ?Sized>(result: &SearchResult, mode: SearchMode, rng: &mut R) -> Action {
    assert!(!result.edges.is_empty(), "search result has no edges");
    let total: u64 = result.edges.iter().map(|e| e.visits as u64).sum();
    if mode == SearchMode::Training && total > 0 {
        let mut x = rng.random_range(0..total);
        for e in &result.edges {
            if x < e.visits as u64 {
                return e.action;
            }
            x -= e.visits as u64;
        }
    }
    most_visited(&result.edges).action
}

fn most_visited(edges: &[EdgeStats]) -> &EdgeStats {
    // max_by_key keeps the last maximum; scan by hand to keep the first.
    let mut best = &edges[0];
    for e in &edges[1..] {
        if e.visits > best.visits {
            best = e;
        }
    }
    best
}

#[derive(Clone, Debug)]
pub struct Edge {
    pub action: Action,
    pub prior: f32,
    pub visits: u32,
    /// Sum of backed-up values for the node's player.
    pub total: f32,
    child: Option<usize>,
}

impl Edge {
    pub fn new(action: Action, prior: f32, visits: u32, total: f32) -> Edge {
        Edge { action, prior, visits, total, child: None }
    }

    pub fn q(&self) -> f32 {
        if self.visits == 0 {
            0.0
        } else {
            self.total / self.visits as f32
        }
    }
}

/// `value` seen from `leaf` converted to the view of `player`.
pub fn value_for(player: Player, leaf: Player, value: f32) -> f32 {
    if player == leaf {
        value
    } else {
        -value
    }
}

/// PUCT choice: `Q + c * P * sqrt(sum N) / (1 + N)`, lowest index on ties.
/// The visit sum is floored at one so a fresh node follows its priors.
pub fn select_edge(edges: &[Edge], c_puct: f32) -> usize {
    let sum: u32 = edges.iter().map(|e| e.visits).sum();
    let sqrt = (sum.max(1) as f32).sqrt();
    let mut best = 0;
    let mut best_score = f32::NEG_INFINITY;
    for (i, e) in edges.iter().enumerate() {
        let score = e.q() + c_puct * e.prior * sqrt / (1.0 + e.visits as f32);
        if score > best_score {
            best = i;
            best_score = score;
        }
    }
    best
}

#[derive(Clone, Debug)]
struct ChanceChild {
    reveal: Reveal,
    node: usize,
    visits: u32,
}

#[derive(Clone, Debug)]
enum Kind {
    /// Created but not yet evaluated.
    Leaf,
    Decision { edges: Vec<Edge> },
    Chance { children: Vec<ChanceChild> },
    /// Value for the first player.
    Terminal { value: f32 },
}

#[derive(Clone, Debug)]
struct Node {
    state: GameState,
    visits: u32,
    kind: Kind,
}

/// Search tree; kept after a search for inspection.
pub struct SearchTree {
    nodes: Vec<Node>,
}

/// Shape of a chance node, for inspection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChanceInfo {
    pub state: GameState,
    pub visits: u32,
    pub children: usize,
    pub child_visits: u32,
}

/// Shape of a decision node, for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionInfo {
    pub visits: u32,
    pub edge_visits: u32,
    pub q: Vec<f32>,
}

impl SearchTree {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn chance_nodes(&self) -> Vec<ChanceInfo> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.kind {
                Kind::Chance { children } => Some(ChanceInfo {
                    state: n.state.clone(),
                    visits: n.visits,
                    children: children.len(),
                    child_visits: children.iter().map(|c| c.visits).sum(),
                }),
                _ => None,
            })
            .collect()
    }

    pub fn decision_nodes(&self) -> Vec<DecisionInfo> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.kind {
                Kind::Decision { edges } => Some(DecisionInfo {
                    visits: n.visits,
                    edge_visits: edges.iter().map(|e| e.visits).sum(),
                    q: edges.iter().filter(|e| e.visits > 0).map(Edge::q).collect(),
                }),
                _ => None,
            })
            .collect()
    }
}

/// One search from `root`. Deterministic given the inputs and `rng` state.
pub fn search<E: Evaluator, R: Rng + ?Sized>(
    engine: &Engine,
    root: &GameState,
    evaluator: &E,
    config: &SearchConfig,
    rng: &mut R,
) -> Result<SearchResult, SearchError> {
    search_tree(engine, root, evaluator, config, rng).map(|(r, _)| r)
}

/// As [`search`], calling `progress` with the number of finished
/// simulations every `every` simulations and after the last one. Returning
/// `ControlFlow::Break` from `progress` abandons the search.
pub fn search_with_progress<E: Evaluator, R: Rng + ?Sized>(
    engine: &Engine,
    root: &GameState,
    evaluator: &E,
    config: &SearchConfig,
    rng: &mut R,
    every: u32,
    progress: &mut dyn FnMut(u32) -> ControlFlow<()>,
) -> Result<SearchResult, SearchError> {
    run(engine, root, evaluator, config, rng, every.max(1), progress).map(|(r, _)| r)
}

/// As [`search`], also returning the tree.
pub fn search_tree<E: Evaluator, R: Rng + ?Sized>(
    engine: &Engine,
    root: &GameState,
    evaluator: &E,
    config: &SearchConfig,
    rng: &mut R,
) -> Result<(SearchResult, SearchTree), SearchError> {
    run(engine, root, evaluator, config, rng, u32::MAX, &mut |_| ControlFlow::Continue(()))
}

fn run<E: Evaluator, R: Rng + ?Sized>(
    engine: &Engine,
    root: &GameState,
    evaluator: &E,
    config: &SearchConfig,
    rng: &mut R,
    every: u32,
    progress: &mut dyn FnMut(u32) -> ControlFlow<()>,
) -> Result<(SearchResult, SearchTree), SearchError> {
    config.validate()?;
    if root.is_terminal() {
        return Err(SearchError::Terminal);
    }
    if root.is_afterstate() {
        return Err(SearchError::Afterstate);
    }
    let mut s = Searcher {
        engine,
        evaluator,
        config,
        nodes: vec![Node { state: root.clone(), visits: 0, kind: Kind::Leaf }],
    };
    s.expand(0)?;
    if config.noise.enabled {
        s.add_root_noise(rng);
    }
    for i in 1..=config.simulations {
        s.simulate(rng)?;
        if (i % every == 0 || i == config.simulations) && progress(i).is_break() {
            return Err(SearchError::Cancelled);
        }
    }
    let result = s.result();
    Ok((result, SearchTree { nodes: s.nodes }))
}

struct Searcher<'a, E> {
    engine: &'a Engine,
    evaluator: &'a E,
    config: &'a SearchConfig,
    nodes: Vec<Node>,
}

enum Step {
    Edge(usize, usize),
    Chance(usize),
}

impl<E: Evaluator> Searcher<'_, E> {
    fn new_node(&mut self, result: StepResult) -> Result<usize, SearchError> {
        let (state, kind) = match result {
            StepResult::Final(state, outcome) => {
                let value = outcome.value_for(Player::P1);
                (state, Kind::Terminal { value })
            }
            StepResult::NeedsReveal(state) => (state, Kind::Chance { children: Vec::new() }),
            StepResult::NextState(state) => (state, Kind::Leaf),
        };
        self.nodes.push(Node { state, visits: 0, kind });
        Ok(self.nodes.len() - 1)
    }

    /// Evaluate a leaf and give it edges. Returns the value for its player.
    fn expand(&mut self, id: usize) -> Result<f32, SearchError> {
        let state = &self.nodes[id].state;
        let legal = self.engine.legal_actions(state)?;
        let (value, priors) = self.evaluator.evaluate(self.engine, state, &legal)?;
        if priors.len() != legal.len() {
            return Err(SearchError::PriorLength { got: priors.len(), expected: legal.len() });
        }
        let sum: f32 = priors.iter().sum();
        let edges = legal
            .iter()
            .zip(&priors)
            .map(|(&action, &p)| Edge {
                action,
                prior: if sum > 0.0 { p / sum } else { 1.0 / legal.len() as f32 },
                visits: 0,
                total: 0.0,
                child: None,
            })
            .collect();
        let node = &mut self.nodes[id];
        node.kind = Kind::Decision { edges };
        node.visits = 1;
        Ok(value.clamp(-1.0, 1.0))
    }

    fn add_root_noise<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let Kind::Decision { edges } = &mut self.nodes[0].kind else { return };
        if edges.len() < 2 {
            return;
        }
        let gamma = Gamma::new(self.config.noise.alpha, 1.0).expect("positive concentration");
        let draws: Vec<f64> = edges.iter().map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        let w = self.config.noise.weight;
        let n = edges.len() as f64;
        for (e, d) in edges.iter_mut().zip(draws) {
            let noise = if total > 0.0 { d / total } else { 1.0 / n };
            e.prior = ((1.0 - w) * e.prior as f64 + w * noise) as f32;
        }
    }

    fn simulate<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<(), SearchError> {
        let mut path: Vec<Step> = Vec::new();
        let mut id = 0;
        let (value, player) = loop {
            match &self.nodes[id].kind {
                Kind::Terminal { value } => break (*value, Player::P1),
                Kind::Leaf => {
                    let v = self.expand(id)?;
                    break (v, self.nodes[id].state.to_move);
                }
                Kind::Decision { edges } => {
                    let e = select_edge(edges, self.config.c_puct);
                    path.push(Step::Edge(id, e));
                    id = match edges[e].child {
                        Some(c) => c,
                        None => {
                            let r = self.engine.apply(&self.nodes[id].state, edges[e].action)?;
                            let c = self.new_node(r)?;
                            let Kind::Decision { edges } = &mut self.nodes[id].kind else { unreachable!() };
                            edges[e].child = Some(c);
                            c
                        }
                    };
                }
                Kind::Chance { .. } => {
                    path.push(Step::Chance(id));
                    id = self.descend_chance(id, rng)?;
                }
            }
        };
        if matches!(self.nodes[id].kind, Kind::Terminal { .. }) {
            self.nodes[id].visits += 1;
        }
        self.backup(&path, value, player);
        Ok(())
    }

    /// Pick or create a child of a chance node and count the visit to it.
    fn descend_chance<R: Rng + ?Sized>(&mut self, id: usize, rng: &mut R) -> Result<usize, SearchError> {
        let n = self.nodes[id].visits;
        let cap = self.config.chance_cap(n) as usize;
        let Kind::Chance { children } = &self.nodes[id].kind else { unreachable!() };
        let k = if children.len() < cap {
            let reveal = self.engine.sample_reveal(&self.nodes[id].state, rng);
            match children.iter().position(|c| c.reveal == reveal) {
                Some(k) => k,
                None => {
                    let r = self.engine.resolve_reveal(&self.nodes[id].state, &reveal)?;
                    let node = self.new_node(r)?;
                    let Kind::Chance { children } = &mut self.nodes[id].kind else { unreachable!() };
                    children.push(ChanceChild { reveal, node, visits: 0 });
                    children.len() - 1
                }
            }
        } else {
            rng.random_range(0..children.len())
        };
        let Kind::Chance { children } = &mut self.nodes[id].kind else { unreachable!() };
        children[k].visits += 1;
        Ok(children[k].node)
    }

    fn backup(&mut self, path: &[Step], value: f32, player: Player) {
        for step in path {
            match *step {
                Step::Edge(id, e) => {
                    let node = &mut self.nodes[id];
                    let v = value_for(node.state.to_move, player, value);
                    node.visits += 1;
                    let Kind::Decision { edges } = &mut node.kind else { unreachable!() };
                    edges[e].visits += 1;
                    edges[e].total += v;
                }
                Step::Chance(id) => self.nodes[id].visits += 1,
            }
        }
    }

    fn result(&self) -> SearchResult {
        let root = &self.nodes[0];
        let Kind::Decision { edges } = &root.kind else { unreachable!("root is expanded") };
        let stats: Vec<EdgeStats> = edges
            .iter()
            .map(|e| EdgeStats { action: e.action, visits: e.visits, q: e.q(), prior: e.prior })
            .collect();
        let visits: u32 = edges.iter().map(|e| e.visits).sum();
        let total: f32 = edges.iter().map(|e| e.total).sum();
        SearchResult {
            player: root.state.to_move,
            value: if visits > 0 { total / visits as f32 } else { 0.0 },
            principal_variation: self.principal_variation(),
            simulations: visits,
            edges: stats,
        }
    }

    fn principal_variation(&self) -> Vec<Action> {
        let mut out = Vec::new();
        let mut id = 0;
        loop {
            match &self.nodes[id].kind {
                Kind::Decision { edges } => {
                    let mut best: Option<&Edge> = None;
                    for e in edges {
                        if e.visits > 0 && best.is_none_or(|b| e.visits > b.visits) {
                            best = Some(e);
                        }
                    }
                    let Some(e) = best else { break };
                    out.push(e.action);
                    match e.child {
                        Some(c) => id = c,
                        None => break,
                    }
                }
                Kind::Chance { children } => {
                    let Some(c) = children.iter().max_by_key(|c| c.visits) else { break };
                    id = c.node;
                }
                _ => break,
            }
        }
        out
    }
}

/// Search-backed player for records and matches.
pub struct SearchPolicy<E> {
    pub name: String,
    pub evaluator: E,
    pub config: SearchConfig,
    pub rng: rand_chacha::ChaCha8Rng,
    /// Result of the most recent decision.
    pub last: Option<SearchResult>,
}

impl<E: Evaluator> SearchPolicy<E> {
    pub fn new(name: impl Into<String>, evaluator: E, config: SearchConfig, seed: u64) -> Self {
        use rand::SeedableRng;
        SearchPolicy {
            name: name.into(),
            evaluator,
            config,
            rng: rand_chacha::ChaCha8Rng::seed_from_u64(seed),
            last: None,
        }
    }
}

impl<E: Evaluator> crate::engine::Policy for SearchPolicy<E> {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn decide(&mut self, engine: &Engine, state: &GameState, legal: &[Action]) -> crate::engine::Decision {
        if legal.len() == 1 {
            self.last = None;
            return crate::engine::Decision { action: legal[0], visits: None };
        }
        match search(engine, state, &self.evaluator, &self.config, &mut self.rng) {
            Ok(result) => {
                let action = choose_action(&result, self.config.mode, &mut self.rng);
                let visits = Some(result.visits());
                self.last = Some(result);
                crate::engine::Decision { action, visits }
            }
            Err(e) => {
                tracing::warn!("search failed ({e}); playing a random legal action");
                self.last = None;
                (*legal.choose(&mut self.rng).expect("legal actions")).into()
            }
        }
    }
}
