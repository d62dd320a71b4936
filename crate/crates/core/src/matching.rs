//! Pairing two sets of trajectories: similarity matrices and the forward, backward,
//! bidirectional and Hungarian matching strategies.
//!
//! All strategies break ties toward the lowest index.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Trajectory;

/// Cost given to padding rows/columns when a rectangular problem is squared up.
pub const PAD_COST: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Ade,
    Fde,
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Ade => "ade",
            Criterion::Fde => "fde",
        })
    }
}

impl FromStr for Criterion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ade" => Ok(Criterion::Ade),
            "fde" => Ok(Criterion::Fde),
            other => Err(Error::Config(format!("unknown similarity criterion {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchStrategy {
    Forward,
    Backward,
    Bidirectional,
    Hungarian,
}

impl MatchStrategy {
    pub const ALL: [MatchStrategy; 4] = [
        MatchStrategy::Forward,
        MatchStrategy::Backward,
        MatchStrategy::Bidirectional,
        MatchStrategy::Hungarian,
    ];
}

impl fmt::Display for MatchStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatchStrategy::Forward => "forward",
            MatchStrategy::Backward => "backward",
            MatchStrategy::Bidirectional => "bidirectional",
            MatchStrategy::Hungarian => "hungarian",
        })
    }
}

impl FromStr for MatchStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "forward" => Ok(MatchStrategy::Forward),
            "backward" => Ok(MatchStrategy::Backward),
            "bidirectional" => Ok(MatchStrategy::Bidirectional),
            "hungarian" => Ok(MatchStrategy::Hungarian),
            other => Err(Error::Config(format!("unknown matching strategy {other:?}"))),
        }
    }
}

/// Row-major `rows x cols` matrix of nonnegative finite costs (meters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    cost: Vec<f64>,
    criterion: Criterion,
}

impl SimilarityMatrix {
    pub fn new(rows: usize, cols: usize, cost: Vec<f64>, criterion: Criterion) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Invalid("similarity matrix must be nonempty".into()));
        }
        if cost.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} costs for a {rows}x{cols} matrix",
                cost.len()
            )));
        }
        if let Some(i) = cost.iter().position(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::NonFinite { row: i / cols, col: i % cols });
        }
        Ok(Self { rows, cols, cost, criterion })
    }

    pub fn from_rows(rows: &[Vec<f64>], criterion: Criterion) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("ragged cost rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat(), criterion)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn criterion(&self) -> Criterion {
        self.criterion
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.cost[row * self.cols + col]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.cost
    }

    pub fn transposed(&self) -> Self {
        let mut cost = Vec::with_capacity(self.cost.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                cost.push(self.get(r, c));
            }
        }
        Self { rows: self.cols, cols: self.rows, cost, criterion: self.criterion }
    }

    fn row_argmin(&self, row: usize) -> usize {
        let mut best = 0;
        for c in 1..self.cols {
            if self.get(row, c) < self.get(row, best) {
                best = c;
            }
        }
        best
    }

    fn col_argmin(&self, col: usize) -> usize {
        let mut best = 0;
        for r in 1..self.rows {
            if self.get(r, col) < self.get(best, col) {
                best = r;
            }
        }
        best
    }
}

/// Number of steps two trajectories share when `b` starts `shift` steps after `a`.
pub fn overlap_len(len_a: usize, len_b: usize, shift: usize) -> Result<usize> {
    let n = len_a.saturating_sub(shift).min(len_b);
    if n == 0 {
        return Err(Error::EmptyOverlap { shift, left: len_a, right: len_b });
    }
    Ok(n)
}

/// Distance between `a` and `b` over their overlap, `a` being `shift` steps ahead.
pub fn overlap_distance(a: &Trajectory, b: &Trajectory, shift: usize, criterion: Criterion) -> Result<f64> {
    let n = overlap_len(a.len(), b.len(), shift)?;
    let pa = &a.points()[shift..shift + n];
    let pb = &b.points()[..n];
    Ok(match criterion {
        Criterion::Ade => pa.iter().zip(pb).map(|(p, q)| p.distance(q)).sum::<f64>() / n as f64,
        Criterion::Fde => pa[n - 1].distance(&pb[n - 1]),
    })
}

/// Pairwise costs between `set_a` (rows) and `set_b` (columns).
///
/// Step `shift + t` of a row trajectory is compared with step `t` of a column trajectory, so a
/// zero shift compares the full horizons.
pub fn similarity(
    set_a: &[Trajectory],
    set_b: &[Trajectory],
    criterion: Criterion,
    shift: usize,
) -> Result<SimilarityMatrix> {
    let mut cost = Vec::with_capacity(set_a.len() * set_b.len());
    for a in set_a {
        for b in set_b {
            cost.push(overlap_distance(a, b, shift, criterion)?);
        }
    }
    SimilarityMatrix::new(set_a.len(), set_b.len(), cost, criterion)
}

/// Index pairs `(row, col)` chosen by one strategy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<(usize, usize)>,
    pub strategy: MatchStrategy,
}

impl MatchResult {
    pub fn total_cost(&self, s: &SimilarityMatrix) -> f64 {
        let mut pairs = self.pairs.clone();
        pairs.sort_unstable();
        pairs.iter().map(|&(r, c)| s.get(r, c)).sum()
    }

    pub fn is_one_to_one(&self) -> bool {
        let mut rows: Vec<_> = self.pairs.iter().map(|p| p.0).collect();
        let mut cols: Vec<_> = self.pairs.iter().map(|p| p.1).collect();
        rows.sort_unstable();
        cols.sort_unstable();
        rows.windows(2).all(|w| w[0] != w[1]) && cols.windows(2).all(|w| w[0] != w[1])
    }
}

/// Each row takes its cheapest column; several rows may share a column.
pub fn match_forward(s: &SimilarityMatrix) -> MatchResult {
    let pairs = (0..s.rows).map(|r| (r, s.row_argmin(r))).collect();
    MatchResult { pairs, strategy: MatchStrategy::Forward }
}

/// Each column takes its cheapest row.
pub fn match_backward(s: &SimilarityMatrix) -> MatchResult {
    let pairs = (0..s.cols).map(|c| (s.col_argmin(c), c)).collect();
    MatchResult { pairs, strategy: MatchStrategy::Backward }
}

/// Mutual nearest neighbours: `(r, c)` survives only if each is the other's cheapest partner.
pub fn match_bidirectional(s: &SimilarityMatrix) -> MatchResult {
    let col_best: Vec<usize> = (0..s.cols).map(|c| s.col_argmin(c)).collect();
    let pairs = (0..s.rows)
        .filter_map(|r| {
            let c = s.row_argmin(r);
            (col_best[c] == r).then_some((r, c))
        })
        .collect();
    MatchResult { pairs, strategy: MatchStrategy::Bidirectional }
}

/// Minimum-cost one-to-one assignment. Rectangular problems are padded with [`PAD_COST`] and the
/// padded pairs dropped, so `min(rows, cols)` pairs come back.
pub fn match_hungarian(s: &SimilarityMatrix) -> MatchResult {
    // SimilarityMatrix guarantees finite costs
    let (pairs, _) = linear_sum_assignment(&s.cost, s.rows, s.cols).expect("finite costs");
    MatchResult { pairs, strategy: MatchStrategy::Hungarian }
}

pub fn match_with(s: &SimilarityMatrix, strategy: MatchStrategy) -> MatchResult {
    match strategy {
        MatchStrategy::Forward => match_forward(s),
        MatchStrategy::Backward => match_backward(s),
        MatchStrategy::Bidirectional => match_bidirectional(s),
        MatchStrategy::Hungarian => match_hungarian(s),
    }
}

/// Solves the assignment problem on a row-major cost matrix with shortest augmenting paths and
/// dual potentials, O(n^3). Returns the pairs sorted by row and their total cost.
pub fn linear_sum_assignment(
    cost: &[f64],
    rows: usize,
    cols: usize,
) -> Result<(Vec<(usize, usize)>, f64)> {
    if cost.len() != rows * cols {
        return Err(Error::ShapeMismatch(format!("{} costs for a {rows}x{cols} matrix", cost.len())));
    }
    if let Some(i) = cost.iter().position(|c| !c.is_finite()) {
        return Err(Error::NonFinite { row: i / cols, col: i % cols });
    }
    let n = rows.max(cols);
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    let at = |r: usize, c: usize| if r < rows && c < cols { cost[r * cols + c] } else { PAD_COST };

    // 1-based indexing; column 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for r in 1..=n {
        owner[0] = r;
        let mut col = 0;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col] = true;
            let row = owner[col];
            let mut delta = f64::INFINITY;
            let mut next = 0;
            for c in 1..=n {
                if used[c] {
                    continue;
                }
                let reduced = at(row - 1, c - 1) - u[row] - v[c];
                if reduced < min_to[c] {
                    min_to[c] = reduced;
                    way[c] = col;
                }
                if min_to[c] < delta {
                    delta = min_to[c];
                    next = c;
                }
            }
            for c in 0..=n {
                if used[c] {
                    u[owner[c]] += delta;
                    v[c] -= delta;
                } else {
                    min_to[c] -= delta;
                }
            }
            col = next;
            if owner[col] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col];
            owner[col] = owner[prev];
            col = prev;
            if col == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=n)
        .filter(|&c| owner[c] != 0)
        .map(|c| (owner[c] - 1, c - 1))
        .filter(|&(r, c)| r < rows && c < cols)
        .collect();
    pairs.sort_unstable();
    let total = pairs.iter().map(|&(r, c)| cost[r * cols + c]).sum();
    Ok((pairs, total))
}
