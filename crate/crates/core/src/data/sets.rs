//! Bit sets over component indices.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{CardId, TokenId, WonderId};

macro_rules! bitset {
    ($(#[$meta:meta])* $name:ident, $bits:ty, $id:ident) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub $bits);

        impl $name {
            pub const EMPTY: Self = Self(0);

            #[inline]
            pub fn contains(self, id: $id) -> bool {
                self.0 >> id.0 & 1 == 1
            }

            #[inline]
            pub fn insert(&mut self, id: $id) {
                self.0 |= (1 as $bits) << id.0;
            }

            #[inline]
            pub fn remove(&mut self, id: $id) {
                self.0 &= !((1 as $bits) << id.0);
            }

            #[inline]
            pub fn len(self) -> usize {
                self.0.count_ones() as usize
            }

            #[inline]
            pub fn is_empty(self) -> bool {
                self.0 == 0
            }

            #[inline]
            pub fn union(self, other: Self) -> Self {
                Self(self.0 | other.0)
            }

            #[inline]
            pub fn intersection(self, other: Self) -> Self {
                Self(self.0 & other.0)
            }

            #[inline]
            pub fn difference(self, other: Self) -> Self {
                Self(self.0 & !other.0)
            }

            /// Ids in ascending order.
            pub fn iter(self) -> impl Iterator<Item = $id> {
                let mut bits = self.0;
                std::iter::from_fn(move || {
                    if bits == 0 {
                        return None;
                    }
                    let i = bits.trailing_zeros();
                    bits &= bits - 1;
                    Some($id(i as u8))
                })
            }
        }

        impl FromIterator<$id> for $name {
            fn from_iter<I: IntoIterator<Item = $id>>(iter: I) -> Self {
                let mut set = Self::EMPTY;
                for id in iter {
                    set.insert(id);
                }
                set
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_seq(self.iter().map(|i| i.0))
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let ids = Vec::<u8>::deserialize(d)?;
                let mut set = Self::EMPTY;
                for i in ids {
                    if i as u32 >= <$bits>::BITS {
                        return Err(serde::de::Error::custom(format!("id {i} out of range")));
                    }
                    set.insert($id(i));
                }
                Ok(set)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.debug_set().entries(self.iter().map(|i| i.0)).finish()
            }
        }
    };
}

bitset!(
    /// Set of building cards (73 fit in a `u128`).
    CardSet, u128, CardId
);
bitset!(
    /// Set of wonders.
    WonderSet, u16, WonderId
);
bitset!(
    /// Set of progress tokens.
    TokenSet, u16, TokenId
);
