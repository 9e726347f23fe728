//! Permutation-invariant speaker assignment.
//!
//! The reference semantics is an exhaustive search over all one-to-one
//! assignments after padding the smaller side with empty streams. A Hungarian
//! solver gives the same minimal cost in O(n^3) for instances beyond the
//! exhaustive cap.

use serde::{Deserialize, Serialize};

use super::edit::{edit_distance, EditCounts};
use super::ScoreError;

/// Exhaustive search is limited to this many padded speakers.
pub const EXHAUSTIVE_CAP: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AssignmentMode {
    /// All n! assignments; errors beyond [`EXHAUSTIVE_CAP`].
    #[default]
    Exhaustive,
    /// Hungarian algorithm on the pairwise edit-cost matrix.
    Hungarian,
    /// Exhaustive up to the cap, Hungarian above it.
    Auto,
}

/// One matched pair; `None` marks a padding stream on that side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignedPair {
    pub reference: Option<usize>,
    pub hypothesis: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub pairs: Vec<AssignedPair>,
}

/// Find the speaker assignment minimizing total edit errors.
///
/// Pads to `n = max(|refs|, |hyps|)` with empty token lists; `ref_len` counts
/// only real reference tokens.
pub fn best_assignment<T: PartialEq + Clone>(
    refs: &[Vec<T>],
    hyps: &[Vec<T>],
) -> Result<(Assignment, EditCounts), ScoreError> {
    best_assignment_with(refs, hyps, AssignmentMode::Exhaustive)
}

pub fn best_assignment_with<T: PartialEq + Clone>(
    refs: &[Vec<T>],
    hyps: &[Vec<T>],
    mode: AssignmentMode,
) -> Result<(Assignment, EditCounts), ScoreError> {
    let n = refs.len().max(hyps.len());
    if n == 0 {
        return Ok((Assignment::default(), EditCounts::default()));
    }
    let empty: Vec<T> = Vec::new();
    let ref_at = |i: usize| -> &[T] { refs.get(i).unwrap_or(&empty) };
    let hyp_at = |j: usize| -> &[T] { hyps.get(j).unwrap_or(&empty) };

    // pairwise edit counts over the padded square
    let costs: Vec<Vec<EditCounts>> = (0..n)
        .map(|i| (0..n).map(|j| edit_distance(ref_at(i), hyp_at(j))).collect())
        .collect();

    let mode = match mode {
        AssignmentMode::Auto if n > EXHAUSTIVE_CAP => AssignmentMode::Hungarian,
        AssignmentMode::Auto => AssignmentMode::Exhaustive,
        m => m,
    };
    let perm = match mode {
        AssignmentMode::Exhaustive => {
            if n > EXHAUSTIVE_CAP {
                return Err(ScoreError::CapExceeded {
                    n,
                    cap: EXHAUSTIVE_CAP,
                });
            }
            exhaustive_min(&costs, n)
        }
        AssignmentMode::Hungarian => {
            let int_costs: Vec<Vec<i64>> = costs
                .iter()
                .map(|row| row.iter().map(|c| c.errors() as i64).collect())
                .collect();
            hungarian(&int_costs)
        }
        AssignmentMode::Auto => unreachable!(),
    };

    let mut total = EditCounts::default();
    let mut pairs = Vec::with_capacity(n);
    for (i, &j) in perm.iter().enumerate() {
        total += costs[i][j];
        pairs.push(AssignedPair {
            reference: (i < refs.len()).then_some(i),
            hypothesis: (j < hyps.len()).then_some(j),
        });
    }
    Ok((Assignment { pairs }, total))
}

/// First permutation (in lexicographic order) reaching the minimal total
/// error, by depth-first enumeration.
fn exhaustive_min(costs: &[Vec<EditCounts>], n: usize) -> Vec<usize> {
    let mut best: Option<(usize, Vec<usize>)> = None;
    let mut current = Vec::with_capacity(n);
    let mut used = vec![false; n];
    search(costs, n, 0, 0, &mut current, &mut used, &mut best);
    best.expect("n >= 1").1
}

fn search(
    costs: &[Vec<EditCounts>],
    n: usize,
    row: usize,
    acc: usize,
    current: &mut Vec<usize>,
    used: &mut [bool],
    best: &mut Option<(usize, Vec<usize>)>,
) {
    if let Some((b, _)) = best {
        // costs are non-negative, so an extension can never beat the minimum
        if acc >= *b {
            return;
        }
    }
    if row == n {
        *best = Some((acc, current.clone()));
        return;
    }
    for j in 0..n {
        if !used[j] {
            used[j] = true;
            current.push(j);
            search(costs, n, row + 1, acc + costs[row][j].errors(), current, used, best);
            current.pop();
            used[j] = false;
        }
    }
}

/// Minimum-cost assignment on a square matrix via the potentials form of the
/// Hungarian algorithm. Returns the column matched to each row.
pub fn hungarian(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    const INF: i64 = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut matched_row = vec![0usize; n + 1]; // column j -> row (1-based, 0 = free)
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut min_slack = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = INF;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let reduced = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if reduced < min_slack[j] {
                        min_slack[j] = reduced;
                        way[j] = j0;
                    }
                    if min_slack[j] < delta {
                        delta = min_slack[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        // augment along the found path
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut result = vec![0usize; n];
    for j in 1..=n {
        if matched_row[j] > 0 {
            result[matched_row[j] - 1] = j - 1;
        }
    }
    result
}
