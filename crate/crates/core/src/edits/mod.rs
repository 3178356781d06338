//! Building and manipulating edit sets: subset application, diff-based edit
//! extraction, grouping, and the M2 / JSONL interchange formats.

mod diff;
pub mod jsonl;
pub mod m2;

pub use diff::extract_edits;

use crate::types::{EditError, EditSet, Sentence, MAX_PLAYERS};

/// A subset of the players of an edit set; bit `i` set means player `i` is
/// included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct SubsetMask(u32);

impl SubsetMask {
    pub const EMPTY: SubsetMask = SubsetMask(0);

    /// Checks `bits < 2^width` and `width <= 30`.
    pub fn new(bits: u32, width: usize) -> Result<Self, EditError> {
        if width > MAX_PLAYERS {
            return Err(EditError::TooManyPlayers {
                n: width,
                max: MAX_PLAYERS,
            });
        }
        if u64::from(bits) >= 1u64 << width {
            return Err(EditError::InvalidPartition(format!(
                "mask {bits:#b} wider than {width} players"
            )));
        }
        Ok(SubsetMask(bits))
    }

    pub(crate) const fn from_bits(bits: u32) -> Self {
        SubsetMask(bits)
    }

    pub fn full(width: usize) -> Self {
        assert!(width <= MAX_PLAYERS, "mask width {width} exceeds {MAX_PLAYERS}");
        SubsetMask(((1u64 << width) - 1) as u32)
    }

    pub fn from_players(players: impl IntoIterator<Item = usize>) -> Self {
        SubsetMask(players.into_iter().fold(0, |acc, p| acc | (1 << p)))
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn contains(self, player: usize) -> bool {
        self.0 >> player & 1 == 1
    }

    pub fn with(self, player: usize) -> Self {
        SubsetMask(self.0 | 1 << player)
    }

    pub fn without(self, player: usize) -> Self {
        SubsetMask(self.0 & !(1 << player))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

/// The source sentence with the edits of every player in `mask` applied.
///
/// Edits are anchored to source coordinates, so the result does not depend
/// on the order in which the chosen edits are applied.
pub fn apply_subset(es: &EditSet, mask: SubsetMask) -> Sentence {
    let mut included = vec![false; es.edits().len()];
    for (player, members) in es.groups().iter().enumerate() {
        if mask.contains(player) {
            for &e in members {
                included[e] = true;
            }
        }
    }
    es.apply_edits(&included)
}

/// Merges players into groups; see [`EditSet::group`].
pub fn group_edits(es: &EditSet, groups: &[Vec<usize>]) -> Result<EditSet, EditError> {
    es.group(groups)
}
