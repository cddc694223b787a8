use serde::{Deserialize, Serialize};

use super::{Engine, EngineError, GameState, Outcome, Player, VictoryType};
use crate::data::{Color, ComponentDb, Effect};

/// Civilian victory points by category.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Points {
    pub blue: u32,
    pub green: u32,
    pub yellow: u32,
    pub guilds: u32,
    pub wonders: u32,
    pub tokens: u32,
    pub coins: u32,
    pub military: u32,
    pub total: u32,
}

fn military_points(pos: i8) -> u32 {
    match pos.unsigned_abs() {
        0 => 0,
        1..=2 => 2,
        3..=5 => 5,
        _ => 10,
    }
}

/// Points each player would score if the game ended now.
pub fn civilian_points(db: &ComponentDb, s: &GameState) -> [Points; 2] {
    Player::BOTH.map(|p| {
        let city = s.city(p);
        let mut pts = Points::default();
        for c in city.cards.iter() {
            let def = db.card(c);
            let v = def.points();
            match def.color {
                Color::Blue => pts.blue += v,
                Color::Green => pts.green += v,
                Color::Yellow => pts.yellow += v,
                Color::Purple => {
                    for e in &def.effects {
                        pts.guilds += match e {
                            Effect::GuildCards { colors } => Player::BOTH
                                .iter()
                                .map(|&q| colors.iter().map(|&col| s.city(q).color_count(db, col)).sum::<u32>())
                                .max()
                                .unwrap_or(0),
                            Effect::GuildWonders { points } => {
                                let most = Player::BOTH
                                    .iter()
                                    .map(|&q| s.city(q).wonders_built.len() as u32)
                                    .max()
                                    .unwrap_or(0);
                                most * *points as u32
                            }
                            Effect::GuildTreasury => {
                                Player::BOTH.iter().map(|&q| s.city(q).coins).max().unwrap_or(0) / 3
                            }
                            _ => 0,
                        };
                    }
                }
                _ => {}
            }
        }
        pts.wonders = city.wonders_built.iter().map(|w| db.wonder(w).points()).sum();
        let owned = city.tokens.len() as u32;
        for t in city.tokens.iter() {
            for e in &db.token(t).effects {
                pts.tokens += match e {
                    Effect::Points { amount } => *amount as u32,
                    Effect::PointsPerToken { amount } => *amount as u32 * owned,
                    _ => 0,
                };
            }
        }
        pts.coins = city.coins / 3;
        let favours = match p {
            Player::P1 => s.military > 0,
            Player::P2 => s.military < 0,
        };
        if favours {
            pts.military = military_points(s.military);
        }
        pts.total = pts.blue + pts.green + pts.yellow + pts.guilds + pts.wonders + pts.tokens + pts.coins + pts.military;
        pts
    })
}

impl Engine {
    /// Final result of a terminal state.
    pub fn score(&self, s: &GameState) -> Result<Outcome, EngineError> {
        if !s.is_terminal() {
            return Err(EngineError::Contract("score on a non-terminal state"));
        }
        let points = civilian_points(self.db(), s);
        if let Some((winner, victory)) = s.decided {
            return Ok(Outcome {
                winner: Some(winner),
                victory: Some(victory),
                points,
                note: None,
            });
        }
        let key = |p: &crate::engine::Points| (p.total, p.blue);
        let winner = match key(&points[0]).cmp(&key(&points[1])) {
            std::cmp::Ordering::Greater => Some(Player::P1),
            std::cmp::Ordering::Less => Some(Player::P2),
            std::cmp::Ordering::Equal => None,
        };
        Ok(Outcome {
            winner,
            victory: winner.map(|_| VictoryType::Civilian),
            points,
            note: None,
        })
    }
}
