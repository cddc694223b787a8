use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Age, CardId, CardSet, ComponentDb, SLOTS};

/// Hidden truth of one age: which card lies in every slot of the layout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgeDeal {
    pub age: Age,
    pub slots: [CardId; SLOTS],
    /// Cards returned to the box unseen (including unused guilds in age III).
    pub set_aside: CardSet,
}

/// Shuffle the deck of `age` and deal it into the layout.
///
/// Age III mixes the regular deck (minus the removed cards) with a random
/// subset of the guilds. Every slot is uniform over the age pool.
pub fn deal_age<R: Rng + ?Sized>(db: &ComponentDb, age: Age, rng: &mut R) -> AgeDeal {
    let mut deck: Vec<CardId> = db.age_deck(age).iter().collect();
    deck.shuffle(rng);
    let keep = deck.len() - db.rules.removed_per_age;
    let mut dealt: Vec<CardId> = deck[..keep].to_vec();
    let mut set_aside: CardSet = deck[keep..].iter().copied().collect();
    if age == Age::III {
        let mut guilds: Vec<CardId> = db.guilds().iter().collect();
        guilds.shuffle(rng);
        let g = db.rules.guilds_in_age_three;
        dealt.extend_from_slice(&guilds[..g]);
        set_aside = set_aside.union(guilds[g..].iter().copied().collect());
    }
    dealt.shuffle(rng);
    let slots: [CardId; SLOTS] = dealt.try_into().expect("validated deck sizes fill the layout");
    AgeDeal { age, slots, set_aside }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn deals_partition_the_pool() {
        let db = ComponentDb::base();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for age in Age::ALL {
            for _ in 0..50 {
                let deal = deal_age(&db, age, &mut rng);
                let dealt: CardSet = deal.slots.iter().copied().collect();
                assert_eq!(dealt.len(), SLOTS);
                assert!(dealt.intersection(deal.set_aside).is_empty());
                assert_eq!(dealt.union(deal.set_aside), db.age_pool(age));
                if age == Age::III {
                    assert_eq!(dealt.intersection(db.guilds()).len(), 3);
                }
            }
        }
    }
}
