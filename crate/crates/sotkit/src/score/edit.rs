//! Levenshtein alignment with a deterministic error decomposition.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

/// Unit-cost edit counts of a minimal alignment plus the reference length.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_len: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    pub fn rate(&self) -> f64 {
        if self.ref_len == 0 {
            if self.errors() == 0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.errors() as f64 / self.ref_len as f64
        }
    }
}

impl Add for EditCounts {
    type Output = EditCounts;
    fn add(self, rhs: EditCounts) -> EditCounts {
        EditCounts {
            substitutions: self.substitutions + rhs.substitutions,
            insertions: self.insertions + rhs.insertions,
            deletions: self.deletions + rhs.deletions,
            ref_len: self.ref_len + rhs.ref_len,
        }
    }
}

impl AddAssign for EditCounts {
    fn add_assign(&mut self, rhs: EditCounts) {
        *self = *self + rhs;
    }
}

#[derive(Clone, Copy)]
struct Cell {
    cost: usize,
    subs: usize,
    ins: usize,
    dels: usize,
}

/// Minimal-cost alignment counts between token slices. Among equal-cost
/// alignments the decomposition is pinned by preferring substitution over an
/// insertion+deletion pair, then deletion over insertion.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditCounts {
    let m = reference.len();
    let n = hypothesis.len();
    let mut prev: Vec<Cell> = (0..=n)
        .map(|j| Cell {
            cost: j,
            subs: 0,
            ins: j,
            dels: 0,
        })
        .collect();
    let mut curr = prev.clone();

    for i in 1..=m {
        curr[0] = Cell {
            cost: i,
            subs: 0,
            ins: 0,
            dels: i,
        };
        for j in 1..=n {
            let sub_cost = usize::from(reference[i - 1] != hypothesis[j - 1]);
            let diag = Cell {
                cost: prev[j - 1].cost + sub_cost,
                subs: prev[j - 1].subs + sub_cost,
                ins: prev[j - 1].ins,
                dels: prev[j - 1].dels,
            };
            let del = Cell {
                cost: prev[j].cost + 1,
                subs: prev[j].subs,
                ins: prev[j].ins,
                dels: prev[j].dels + 1,
            };
            let ins = Cell {
                cost: curr[j - 1].cost + 1,
                subs: curr[j - 1].subs,
                ins: curr[j - 1].ins + 1,
                dels: curr[j - 1].dels,
            };
            // preference order on ties: substitution/match, deletion, insertion
            let mut best = diag;
            if del.cost < best.cost {
                best = del;
            }
            if ins.cost < best.cost {
                best = ins;
            }
            curr[j] = best;
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    let final_cell = prev[n];
    EditCounts {
        substitutions: final_cell.subs,
        insertions: final_cell.ins,
        deletions: final_cell.dels,
        ref_len: m,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identical_is_zero() {
        let e = edit_distance(&words("a b c"), &words("a b c"));
        assert_eq!(e.errors(), 0);
        assert_eq!(e.ref_len, 3);
    }

    #[test]
    fn one_substitution() {
        let e = edit_distance(&words("a b c"), &words("a x c"));
        assert_eq!(
            e,
            EditCounts {
                substitutions: 1,
                insertions: 0,
                deletions: 0,
                ref_len: 3
            }
        );
    }

    #[test]
    fn sub_plus_insertion() {
        // ref "a b", hyp "a x y": one substitution and one insertion
        let e = edit_distance(&words("a b"), &words("a x y"));
        assert_eq!(e.substitutions, 1);
        assert_eq!(e.insertions, 1);
        assert_eq!(e.deletions, 0);
        assert_eq!(e.errors(), 2);
    }

    #[test]
    fn tie_prefers_substitutions() {
        // "ab" vs "ba" can be 2 subs or del+ins; the pinned choice is 2 subs
        let e = edit_distance(&["a", "b"], &["b", "a"]);
        assert_eq!(e.substitutions, 2);
        assert_eq!(e.insertions, 0);
        assert_eq!(e.deletions, 0);
    }

    #[test]
    fn empty_sides() {
        let none: [&str; 0] = [];
        let e = edit_distance(&none, &words("x y"));
        assert_eq!(e.insertions, 2);
        assert_eq!(e.ref_len, 0);
        let e = edit_distance(&words("x y"), &none);
        assert_eq!(e.deletions, 2);
    }
}
