//! Rules engine, search and learning pipeline for 7 Wonders Duel.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: the component database (cards, wonders, progress tokens and
//!   age layouts) and the random deals built from it.
//! - [`engine`]: the immutable-state rules engine, chance reveals, scoring
//!   and game records.
//! - [`encode`]: state-to-token encoding and the fixed action vocabulary.
//! - [`nn`]: a self-contained Transformer encoder with value and policy heads.
//! - [`mcts`]: PUCT search over decision nodes and capped chance nodes.
//! - [`selfplay`]: bootstrap policies, replay buffer, training loop, arena.
//! - [`analysis`]: statistics over sets of game records.
//! - [`variants`]: coin and wonder-draft rule variants.

pub mod analysis;
pub mod data;
pub mod encode;
pub mod engine;
pub mod mcts;
pub mod nn;
pub mod selfplay;
pub mod variants;

pub use data::ComponentDb;
pub use engine::{Action, Engine, GameState, Player};
