//! Static component database: building cards, wonders, progress tokens and
//! the three age layouts.
//!
//! The database is read from a TOML document (the base game ships embedded,
//! see [`ComponentDb::base`]) and validated once. After loading it is
//! immutable and shared behind an [`Arc`].

mod deal;
mod sets;

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use deal::{deal_age, AgeDeal};
pub use sets::{CardSet, TokenSet, WonderSet};

/// Schema version understood by this loader.
pub const SCHEMA_VERSION: u32 = 1;

const BASE_GAME: &str = include_str!("../../data/components.toml");

/// Cards per age deck (I, II, III) in the base game.
pub const AGE_DECK_SIZES: [usize; 3] = [23, 23, 20];
pub const GUILD_COUNT: usize = 7;
pub const CARD_COUNT: usize = 73;
pub const WONDER_COUNT: usize = 12;
pub const TOKEN_COUNT: usize = 10;
pub const EXTRA_TURN_WONDERS: usize = 5;
pub const SLOTS: usize = 20;

const LAYOUT_ROWS: [&[usize]; 3] = [&[2, 3, 4, 5, 6], &[6, 5, 4, 3, 2], &[2, 3, 4, 2, 4, 3, 2]];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CardId(pub u8);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WonderId(pub u8);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u8);

/// One of the three ages of card play.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Age {
    I,
    II,
    III,
}

impl Age {
    pub const ALL: [Age; 3] = [Age::I, Age::II, Age::III];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn next(self) -> Option<Age> {
        match self {
            Age::I => Some(Age::II),
            Age::II => Some(Age::III),
            Age::III => None,
        }
    }
}

/// Deck a card belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CardAge {
    I,
    II,
    III,
    Guild,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Brown,
    Grey,
    Yellow,
    Red,
    Blue,
    Green,
    Purple,
}

impl Color {
    pub const ALL: [Color; 7] = [
        Color::Brown,
        Color::Grey,
        Color::Yellow,
        Color::Red,
        Color::Blue,
        Color::Green,
        Color::Purple,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resource {
    Wood,
    Clay,
    Stone,
    Glass,
    Papyrus,
}

impl Resource {
    pub const ALL: [Resource; 5] = [
        Resource::Wood,
        Resource::Clay,
        Resource::Stone,
        Resource::Glass,
        Resource::Papyrus,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScienceSymbol {
    Globe,
    Wheel,
    Sundial,
    Mortar,
    SetSquare,
    Quill,
    Law,
}

/// Chain symbols linking a card to a later one that can be built for free.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainSymbol {
    Horseshoe,
    Sword,
    Tower,
    Target,
    Helmet,
    Book,
    Gear,
    Lyre,
    Lamp,
    Mask,
    Moon,
    Drop,
    Pillar,
    Sun,
    Bank,
    Jug,
    Barrel,
}

/// Coin amount plus a multiset of resources.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cost {
    #[serde(default)]
    pub coins: u32,
    #[serde(default)]
    pub resources: Vec<Resource>,
}

impl Cost {
    /// Units required per resource, indexed like [`Resource::ALL`].
    pub fn counts(&self) -> [u8; 5] {
        resource_counts(&self.resources)
    }
}

pub fn resource_counts(resources: &[Resource]) -> [u8; 5] {
    let mut out = [0u8; 5];
    for r in resources {
        out[*r as usize] += 1;
    }
    out
}

/// Everything a card, wonder or token can do.
///
/// One-shot effects resolve when the component enters a city; the rest are
/// read by the cost and scoring code while the component is owned.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Effect {
    Produce { resource: Resource, amount: u8 },
    ProduceChoice { options: Vec<Resource> },
    Points { amount: u8 },
    Shields { amount: u8 },
    Science { symbol: ScienceSymbol },
    Coins { amount: u8 },
    /// Buy these resources for 1 coin each.
    TradeDiscount { resources: Vec<Resource> },
    /// Coins per own card of the listed colors, counted when built.
    CoinsPerColor { colors: Vec<Color>, amount: u8 },
    CoinsPerWonder { amount: u8 },
    /// 1 coin (on build) and 1 point (at the end) per matching card in the
    /// city with the most.
    GuildCards { colors: Vec<Color> },
    /// Points per wonder in the city with the most wonders.
    GuildWonders { points: u8 },
    /// 1 point per 3 coins in the richest city.
    GuildTreasury,
    OpponentLosesCoins { amount: u8 },
    DestroyCard { color: Color },
    BuildFromDiscard,
    LibraryDraw,
    WonderDiscount { resources: u8 },
    ColorDiscount { color: Color, resources: u8 },
    /// Coins the opponent spends on trading go to the owner.
    CollectTrade,
    PointsPerToken { amount: u8 },
    MilitaryBonus { amount: u8 },
    WondersExtraTurn,
    ChainBonus { amount: u8 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CardDef {
    pub id: String,
    pub name: String,
    pub age: CardAge,
    pub color: Color,
    pub cost: Cost,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain_from: Option<ChainSymbol>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain_to: Option<ChainSymbol>,
    pub effects: Vec<Effect>,
}

impl CardDef {
    pub fn points(&self) -> u32 {
        self.effects
            .iter()
            .map(|e| match e {
                Effect::Points { amount } => *amount as u32,
                _ => 0,
            })
            .sum()
    }

    pub fn shields(&self) -> u32 {
        self.effects
            .iter()
            .map(|e| match e {
                Effect::Shields { amount } => *amount as u32,
                _ => 0,
            })
            .sum()
    }

    pub fn science(&self) -> Option<ScienceSymbol> {
        self.effects.iter().find_map(|e| match e {
            Effect::Science { symbol } => Some(*symbol),
            _ => None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WonderDef {
    pub id: String,
    pub name: String,
    pub cost: Vec<Resource>,
    pub grants_extra_turn: bool,
    pub effects: Vec<Effect>,
}

impl WonderDef {
    pub fn points(&self) -> u32 {
        self.effects
            .iter()
            .map(|e| match e {
                Effect::Points { amount } => *amount as u32,
                _ => 0,
            })
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenDef {
    pub id: String,
    pub name: String,
    pub effects: Vec<Effect>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotDef {
    pub row: u8,
    pub column: u8,
    pub face_up: bool,
    /// Slots this card lies on top of.
    pub covers: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgeLayout {
    pub age: u8,
    pub slots: Vec<SlotDef>,
}

/// Numeric rule constants shipped with the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RulesConfig {
    pub age_deck_sizes: [usize; 3],
    pub guild_count: usize,
    pub removed_per_age: usize,
    pub guilds_in_age_three: usize,
    pub slots_per_layout: usize,
    pub starting_coins: u32,
    pub board_tokens: usize,
    pub drafted_wonders: usize,
    pub max_wonders_built: u8,
    pub discard_base_coins: u32,
    pub trade_base_cost: u32,
    pub library_draw: usize,
    pub science_victory_symbols: usize,
    pub military_capital: i8,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    schema_version: u32,
    rules: RulesConfig,
    cards: Vec<CardDef>,
    wonders: Vec<WonderDef>,
    tokens: Vec<TokenDef>,
    layouts: Vec<AgeLayout>,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("malformed component document: {0}")]
    Malformed(String),
    #[error("cannot read component document: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported schema_version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("{category}: expected {expected}, found {found}")]
    CountMismatch {
        category: String,
        expected: usize,
        found: usize,
    },
    #[error("duplicate {category} id `{id}`")]
    DuplicateId { category: &'static str, id: String },
    #[error("card `{card}` chains from {symbol:?}, which no earlier card grants")]
    DanglingChain { card: String, symbol: ChainSymbol },
    #[error("card `{card}`: guild cards must be purple and purple cards must be guilds")]
    GuildColor { card: String },
    #[error("age {age} layout: {reason}")]
    Layout { age: u8, reason: String },
    #[error("invalid rules section: {0}")]
    Rules(String),
}

/// Validated, immutable component database.
#[derive(Debug)]
pub struct ComponentDb {
    pub schema_version: u32,
    pub rules: RulesConfig,
    pub cards: Vec<CardDef>,
    pub wonders: Vec<WonderDef>,
    pub tokens: Vec<TokenDef>,
    pub layouts: [AgeLayout; 3],
    age_decks: [CardSet; 3],
    guilds: CardSet,
    by_color: [CardSet; 7],
    covered_by: [Vec<Vec<u8>>; 3],
    card_index: HashMap<String, CardId>,
    wonder_index: HashMap<String, WonderId>,
    token_index: HashMap<String, TokenId>,
}

impl ComponentDb {
    /// The embedded base-game database, parsed once per process.
    pub fn base() -> Arc<ComponentDb> {
        static BASE: OnceLock<Arc<ComponentDb>> = OnceLock::new();
        BASE.get_or_init(|| {
            Arc::new(ComponentDb::from_toml_str(BASE_GAME).expect("embedded component data is valid"))
        })
        .clone()
    }

    /// Raw text of the embedded base-game document.
    pub fn base_document() -> &'static str {
        BASE_GAME
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ComponentDb, DataError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<ComponentDb, DataError> {
        // Version gate first so that future documents fail with a clear message.
        let probe: toml::Table = text.parse().map_err(|e: toml::de::Error| DataError::Malformed(e.to_string()))?;
        match probe.get("schema_version").and_then(|v| v.as_integer()) {
            Some(v) if v == SCHEMA_VERSION as i64 => {}
            Some(v) => {
                return Err(DataError::UnsupportedVersion {
                    found: v.max(0) as u32,
                    expected: SCHEMA_VERSION,
                })
            }
            None => return Err(DataError::Malformed("missing schema_version".into())),
        }
        let doc: Document = toml::from_str(text).map_err(|e| DataError::Malformed(e.to_string()))?;
        Self::validate(doc)
    }

    fn validate(doc: Document) -> Result<ComponentDb, DataError> {
        let Document {
            schema_version,
            rules,
            cards,
            wonders,
            tokens,
            layouts,
        } = doc;

        check_unique("card", cards.iter().map(|c| c.id.as_str()))?;
        check_unique("wonder", wonders.iter().map(|w| w.id.as_str()))?;
        check_unique("token", tokens.iter().map(|t| t.id.as_str()))?;

        for (i, (age, label)) in [(CardAge::I, "age I"), (CardAge::II, "age II"), (CardAge::III, "age III")]
            .into_iter()
            .enumerate()
        {
            let found = cards.iter().filter(|c| c.age == age).count();
            if found != AGE_DECK_SIZES[i] {
                return Err(DataError::CountMismatch {
                    category: format!("{label} cards"),
                    expected: AGE_DECK_SIZES[i],
                    found,
                });
            }
        }
        let guild_total = cards.iter().filter(|c| c.age == CardAge::Guild).count();
        if guild_total != GUILD_COUNT {
            return Err(DataError::CountMismatch {
                category: "guild cards".into(),
                expected: GUILD_COUNT,
                found: guild_total,
            });
        }
        if cards.len() > 128 {
            return Err(DataError::CountMismatch {
                category: "cards".into(),
                expected: CARD_COUNT,
                found: cards.len(),
            });
        }
        for card in &cards {
            if (card.age == CardAge::Guild) != (card.color == Color::Purple) {
                return Err(DataError::GuildColor { card: card.id.clone() });
            }
        }
        if wonders.len() != WONDER_COUNT {
            return Err(DataError::CountMismatch {
                category: "wonders".into(),
                expected: WONDER_COUNT,
                found: wonders.len(),
            });
        }
        let extra = wonders.iter().filter(|w| w.grants_extra_turn).count();
        if extra != EXTRA_TURN_WONDERS {
            return Err(DataError::CountMismatch {
                category: "extra-turn wonders".into(),
                expected: EXTRA_TURN_WONDERS,
                found: extra,
            });
        }
        if tokens.len() != TOKEN_COUNT {
            return Err(DataError::CountMismatch {
                category: "progress tokens".into(),
                expected: TOKEN_COUNT,
                found: tokens.len(),
            });
        }

        // A chain symbol must be granted by a card of a strictly earlier age.
        let age_rank = |a: CardAge| match a {
            CardAge::I => 0,
            CardAge::II => 1,
            CardAge::III | CardAge::Guild => 2,
        };
        for card in &cards {
            if let Some(symbol) = card.chain_from {
                let granted = cards
                    .iter()
                    .any(|c| c.chain_to == Some(symbol) && age_rank(c.age) < age_rank(card.age));
                if !granted {
                    return Err(DataError::DanglingChain {
                        card: card.id.clone(),
                        symbol,
                    });
                }
            }
        }

        validate_rules(&rules)?;
        let layouts = validate_layouts(layouts)?;

        let mut age_decks = [CardSet::EMPTY; 3];
        let mut guilds = CardSet::EMPTY;
        let mut by_color = [CardSet::EMPTY; 7];
        for (i, card) in cards.iter().enumerate() {
            let id = CardId(i as u8);
            match card.age {
                CardAge::I => age_decks[0].insert(id),
                CardAge::II => age_decks[1].insert(id),
                CardAge::III => age_decks[2].insert(id),
                CardAge::Guild => guilds.insert(id),
            }
            by_color[card.color as usize].insert(id);
        }
        let covered_by = layouts.clone().map(|layout| {
            let mut out = vec![Vec::new(); layout.slots.len()];
            for (i, slot) in layout.slots.iter().enumerate() {
                for &c in &slot.covers {
                    out[c as usize].push(i as u8);
                }
            }
            out
        });

        let card_index = cards
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id.clone(), CardId(i as u8)))
            .collect();
        let wonder_index = wonders
            .iter()
            .enumerate()
            .map(|(i, w)| (w.id.clone(), WonderId(i as u8)))
            .collect();
        let token_index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.id.clone(), TokenId(i as u8)))
            .collect();

        Ok(ComponentDb {
            schema_version,
            rules,
            cards,
            wonders,
            tokens,
            layouts,
            age_decks,
            guilds,
            by_color,
            covered_by,
            card_index,
            wonder_index,
            token_index,
        })
    }

    pub fn card(&self, id: CardId) -> &CardDef {
        &self.cards[id.0 as usize]
    }

    pub fn wonder(&self, id: WonderId) -> &WonderDef {
        &self.wonders[id.0 as usize]
    }

    pub fn token(&self, id: TokenId) -> &TokenDef {
        &self.tokens[id.0 as usize]
    }

    pub fn card_id(&self, key: &str) -> Option<CardId> {
        self.card_index.get(key).copied()
    }

    pub fn wonder_id(&self, key: &str) -> Option<WonderId> {
        self.wonder_index.get(key).copied()
    }

    pub fn token_id(&self, key: &str) -> Option<TokenId> {
        self.token_index.get(key).copied()
    }

    /// Cards of one age deck (guilds excluded).
    pub fn age_deck(&self, age: Age) -> CardSet {
        self.age_decks[age.index()]
    }

    pub fn guilds(&self) -> CardSet {
        self.guilds
    }

    /// Every card that can appear in the layout of `age`.
    pub fn age_pool(&self, age: Age) -> CardSet {
        match age {
            Age::III => self.age_decks[2].union(self.guilds),
            _ => self.age_decks[age.index()],
        }
    }

    pub fn cards_of_color(&self, color: Color) -> CardSet {
        self.by_color[color as usize]
    }

    pub fn all_cards(&self) -> CardSet {
        CardSet(if self.cards.len() == 128 { u128::MAX } else { (1u128 << self.cards.len()) - 1 })
    }

    pub fn all_wonders(&self) -> WonderSet {
        WonderSet((1u16 << self.wonders.len()) - 1)
    }

    pub fn all_tokens(&self) -> TokenSet {
        TokenSet((1u16 << self.tokens.len()) - 1)
    }

    pub fn layout(&self, age: Age) -> &AgeLayout {
        &self.layouts[age.index()]
    }

    /// Slots lying on top of `slot` in the layout of `age`.
    pub fn covered_by(&self, age: Age, slot: usize) -> &[u8] {
        &self.covered_by[age.index()][slot]
    }

    pub fn extra_turn_wonders(&self) -> WonderSet {
        self.wonders
            .iter()
            .enumerate()
            .filter(|(_, w)| w.grants_extra_turn)
            .map(|(i, _)| WonderId(i as u8))
            .collect()
    }

    /// One-line count summary, e.g. for `data validate`.
    pub fn summary(&self) -> String {
        let per_age: Vec<String> = [CardAge::I, CardAge::II, CardAge::III, CardAge::Guild]
            .iter()
            .map(|a| self.cards.iter().filter(|c| c.age == *a).count().to_string())
            .collect();
        format!(
            "{} cards ({}), {} wonders, {} progress tokens",
            self.cards.len(),
            per_age.join("/"),
            self.wonders.len(),
            self.tokens.len()
        )
    }
}

fn check_unique<'a>(category: &'static str, ids: impl Iterator<Item = &'a str>) -> Result<(), DataError> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(DataError::DuplicateId {
                category,
                id: id.to_string(),
            });
        }
    }
    Ok(())
}

fn validate_rules(rules: &RulesConfig) -> Result<(), DataError> {
    if rules.age_deck_sizes != AGE_DECK_SIZES || rules.guild_count != GUILD_COUNT {
        return Err(DataError::Rules("deck sizes disagree with the card list".into()));
    }
    if rules.slots_per_layout != SLOTS {
        return Err(DataError::Rules("layouts hold exactly 20 slots".into()));
    }
    let dealt = [
        rules.age_deck_sizes[0] - rules.removed_per_age,
        rules.age_deck_sizes[1] - rules.removed_per_age,
        rules.age_deck_sizes[2] - rules.removed_per_age + rules.guilds_in_age_three,
    ];
    if dealt.iter().any(|&d| d != SLOTS) {
        return Err(DataError::Rules("dealt cards per age must fill the 20 slots".into()));
    }
    if rules.board_tokens + rules.library_draw > TOKEN_COUNT + rules.library_draw
        || rules.board_tokens >= TOKEN_COUNT
        || rules.library_draw > TOKEN_COUNT - rules.board_tokens
    {
        return Err(DataError::Rules("token counts out of range".into()));
    }
    if rules.drafted_wonders != 8 || rules.max_wonders_built as usize >= rules.drafted_wonders {
        return Err(DataError::Rules("wonder draft counts out of range".into()));
    }
    if rules.military_capital <= 0 {
        return Err(DataError::Rules("military_capital must be positive".into()));
    }
    Ok(())
}

fn validate_layouts(layouts: Vec<AgeLayout>) -> Result<[AgeLayout; 3], DataError> {
    if layouts.len() != 3 {
        return Err(DataError::CountMismatch {
            category: "age layouts".into(),
            expected: 3,
            found: layouts.len(),
        });
    }
    for (i, layout) in layouts.iter().enumerate() {
        let age = layout.age;
        if age as usize != i + 1 {
            return Err(DataError::Layout {
                age,
                reason: "layouts must be listed in age order".into(),
            });
        }
        if layout.slots.len() != SLOTS {
            return Err(DataError::Layout {
                age,
                reason: format!("expected {SLOTS} slots, found {}", layout.slots.len()),
            });
        }
        let mut row_sizes = Vec::new();
        for (j, slot) in layout.slots.iter().enumerate() {
            let row = slot.row as usize;
            if row == row_sizes.len() {
                row_sizes.push(0);
            } else if row + 1 != row_sizes.len() {
                return Err(DataError::Layout {
                    age,
                    reason: format!("slot {j} out of row order"),
                });
            }
            row_sizes[row] += 1;
            // Rows alternate face up / face down, starting face up at the top.
            if slot.face_up != (row % 2 == 0) {
                return Err(DataError::Layout {
                    age,
                    reason: format!("slot {j}: face-up pattern must alternate by row"),
                });
            }
            for &c in &slot.covers {
                // Covered cards always sit in the row directly above, which
                // makes the relation acyclic.
                let covered = layout.slots.get(c as usize).ok_or_else(|| DataError::Layout {
                    age,
                    reason: format!("slot {j} covers missing slot {c}"),
                })?;
                if covered.row as usize + 1 != row {
                    return Err(DataError::Layout {
                        age,
                        reason: format!("slot {j} covers slot {c} outside the row above"),
                    });
                }
            }
        }
        if row_sizes != LAYOUT_ROWS[i] {
            return Err(DataError::Layout {
                age,
                reason: format!("row sizes {row_sizes:?} do not match the age structure"),
            });
        }
        let last = row_sizes.len() - 1;
        if !layout.slots.iter().all(|s| s.row as usize == last || layout.slots.iter().any(|t| t.covers.contains(&(index_of(layout, s) as u8)))) {
            return Err(DataError::Layout {
                age,
                reason: "only the bottom row may start uncovered".into(),
            });
        }
    }
    let mut it = layouts.into_iter();
    Ok([it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
}

fn index_of(layout: &AgeLayout, slot: &SlotDef) -> usize {
    layout
        .slots
        .iter()
        .position(|s| s.row == slot.row && s.column == slot.column)
        .unwrap_or(usize::MAX)
}
