//! Prior-modified Hungarian assignment and the composite training loss.
//!
//! The matching cost extends the standard set-prediction cost (class, L1
//! box, GIoU) by subtracting the combined prior, so candidates consistent
//! with the phrase's spatial and visual cues are preferred during
//! assignment. The loss adds a squared-error confidence term that treats
//! prior scores as soft labels.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::{giou, BoxN};
use crate::priors::PriorBundle;
use crate::sample::Sample;

/// Loss and cost weights. `prior` scales the subtracted prior term in the
/// matching cost; the rest follow the usual 1 : 5 : 2 class/L1/GIoU scheme
/// with the confidence term weighted like the classification term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub cls: f64,
    pub l1: f64,
    pub giou: f64,
    pub conf: f64,
    pub prior: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { cls: 1.0, l1: 5.0, giou: 2.0, conf: 1.0, prior: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), MatchError> {
        for (name, v) in [
            ("cls", self.cls),
            ("l1", self.l1),
            ("giou", self.giou),
            ("conf", self.conf),
            ("prior", self.prior),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(MatchError::BadWeight { name, value: v });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MatchError {
    /// Assignment indices out of range for the sample.
    AssignmentMismatch { detail: String },
    /// Sample carries no ground-truth box.
    MissingGroundTruth { id: String },
    /// Prior bundle length differs from the candidate count.
    BundleMismatch { candidates: usize, bundle: usize },
    /// Negative or non-finite loss weight.
    BadWeight { name: &'static str, value: f64 },
    /// Non-finite entry handed to the solver.
    NonFiniteCost { row: usize, col: usize },
}

impl fmt::Display for MatchError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::AssignmentMismatch { detail } => write!(f, "assignment mismatch: {detail}"),
            Self::MissingGroundTruth { id } => write!(f, "sample {id} has no ground truth"),
            Self::BundleMismatch { candidates, bundle } => {
                write!(f, "{candidates} candidates but bundle of length {bundle}")
            }
            Self::BadWeight { name, value } => write!(f, "weight {name} = {value} invalid"),
            Self::NonFiniteCost { row, col } => {
                write!(f, "non-finite cost at ({row}, {col})")
            }
        }
    }
}

impl std::error::Error for MatchError {}

/// Per-cell cost components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostCell {
    pub cls: f64,
    pub l1: f64,
    pub giou: f64,
    pub prior: f64,
}

/// Candidate-by-ground-truth cost matrix with its component breakdown.
/// Every combined entry satisfies
/// `cls + l1_weight * l1 + giou_weight * giou_cost - prior_weight * h`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    combined: Vec<f64>,
    components: Vec<CostCell>,
    weights: LossWeights,
}

impl CostMatrix {
    /// Wrap a plain matrix for direct solver use. The whole entry is carried
    /// in the class component so the decomposition identity stays trivial.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, MatchError> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut combined = Vec::with_capacity(n_rows * n_cols);
        let mut components = Vec::with_capacity(n_rows * n_cols);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != n_cols {
                return Err(MatchError::AssignmentMismatch {
                    detail: format!("ragged row {r}: {} != {n_cols}", row.len()),
                });
            }
            for (c, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(MatchError::NonFiniteCost { row: r, col: c });
                }
                combined.push(v);
                components.push(CostCell { cls: v, l1: 0.0, giou: 0.0, prior: 0.0 });
            }
        }
        Ok(Self {
            rows: n_rows,
            cols: n_cols,
            combined,
            components,
            weights: LossWeights { cls: 1.0, l1: 0.0, giou: 0.0, conf: 0.0, prior: 0.0 },
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.combined[row * self.cols + col]
    }

    pub fn cell(&self, row: usize, col: usize) -> CostCell {
        self.components[row * self.cols + col]
    }

    pub fn weights(&self) -> &LossWeights {
        &self.weights
    }
}

/// Sum of absolute coordinate differences in normalized xyxy.
fn l1_box(a: &BoxN, b: &BoxN) -> f64 {
    (a.x1 - b.x1).abs() + (a.y1 - b.y1).abs() + (a.x2 - b.x2).abs() + (a.y2 - b.y2).abs()
}

/// Build the prior-modified matching cost for one sample. Entry (j, k) is
/// `(1 - p_j) + l1_w * L1(box_j, gt_k) + giou_w * (1 - giou) - prior_w * h_j`;
/// the prior column is constant across ground truths.
pub fn build_cost(
    sample: &Sample,
    bundle: &PriorBundle,
    weights: &LossWeights,
) -> Result<CostMatrix, MatchError> {
    weights.validate()?;
    if bundle.len() != sample.candidates.len() {
        return Err(MatchError::BundleMismatch {
            candidates: sample.candidates.len(),
            bundle: bundle.len(),
        });
    }
    let gt = sample
        .gt
        .as_ref()
        .ok_or_else(|| MatchError::MissingGroundTruth { id: sample.id.clone() })?;
    let gts = std::slice::from_ref(gt);
    let rows = sample.candidates.len();
    let cols = gts.len();
    let mut combined = Vec::with_capacity(rows * cols);
    let mut components = Vec::with_capacity(rows * cols);
    for (j, cand) in sample.candidates.iter().enumerate() {
        for g in gts {
            let cell = CostCell {
                cls: 1.0 - bundle.p[j],
                l1: l1_box(&cand.bbox, g),
                giou: 1.0 - giou(&cand.bbox, g),
                prior: bundle.h[j],
            };
            combined.push(
                cell.cls + weights.l1 * cell.l1 + weights.giou * cell.giou
                    - weights.prior * cell.prior,
            );
            components.push(cell);
        }
    }
    Ok(CostMatrix { rows, cols, combined, components, weights: *weights })
}

/// Minimum-cost one-to-one assignment as (row, col) pairs sorted by column,
/// of size `min(rows, cols)`. Rectangular inputs are padded internally;
/// padded pairs never appear in the output. Among equal-cost optima the
/// lexicographically smallest assignment by (col, row) is returned.
pub fn hungarian(cost: &CostMatrix) -> Vec<(usize, usize)> {
    let (rows, cols) = (cost.rows, cost.cols);
    let k = rows.min(cols);
    if k == 0 {
        return Vec::new();
    }
    let all_rows: Vec<usize> = (0..rows).collect();
    let total = solve_subproblem(cost, &all_rows, 0);
    let tol = 1e-9 * (1.0 + total.abs());

    // Fix pairs greedily in lexicographic (col, row) order; a pair is kept
    // when an optimal completion over later columns still exists.
    let mut free_rows = all_rows;
    let mut chosen = Vec::with_capacity(k);
    let mut acc = 0.0;
    let mut next_col = 0;
    while chosen.len() < k {
        let needed = k - chosen.len() - 1;
        let found = next_optimal_pair(cost, &free_rows, next_col, needed, total - acc, tol);
        let Some((slot, col)) = found else {
            debug_assert!(false, "optimal completion must exist");
            break;
        };
        let row = free_rows.remove(slot);
        acc += cost.at(row, col);
        chosen.push((row, col));
        next_col = col + 1;
    }
    chosen
}

/// The lexicographically smallest (col, row) pair that still admits an
/// optimal completion of `needed` further pairs within `budget`.
fn next_optimal_pair(
    cost: &CostMatrix,
    free_rows: &[usize],
    col_start: usize,
    needed: usize,
    budget: f64,
    tol: f64,
) -> Option<(usize, usize)> {
    for c in col_start..cost.cols {
        if cost.cols - c - 1 < needed {
            return None;
        }
        for (slot, &r) in free_rows.iter().enumerate() {
            let rest = if needed == 0 {
                0.0
            } else {
                let rest_rows: Vec<usize> =
                    free_rows.iter().copied().filter(|&rr| rr != r).collect();
                if rest_rows.len() < needed {
                    continue;
                }
                solve_subproblem(cost, &rest_rows, c + 1)
            };
            if (cost.at(r, c) + rest - budget).abs() <= tol {
                return Some((slot, c));
            }
        }
    }
    None
}

/// Total cost of an assignment, summed in column order.
pub fn assignment_cost(cost: &CostMatrix, assignment: &[(usize, usize)]) -> f64 {
    let mut pairs = assignment.to_vec();
    pairs.sort_by_key(|&(_, c)| c);
    pairs.iter().map(|&(r, c)| cost.at(r, c)).sum()
}

/// Optimal total over `row_subset` x `cols[col_start..]`, assigning
/// `min(|rows|, |cols|)` pairs via the O(n^3) augmenting-path solver on a
/// square matrix padded with a constant above every real entry.
fn solve_subproblem(cost: &CostMatrix, row_subset: &[usize], col_start: usize) -> f64 {
    let sub_rows = row_subset.len();
    let sub_cols = cost.cols - col_start;
    let k = sub_rows.min(sub_cols);
    if k == 0 {
        return 0.0;
    }
    let n = sub_rows.max(sub_cols);
    let mut pad = f64::NEG_INFINITY;
    for &r in row_subset {
        for c in col_start..cost.cols {
            pad = pad.max(cost.at(r, c));
        }
    }
    let pad = pad + 1.0;
    let entry = |i: usize, j: usize| -> f64 {
        if i < sub_rows && j < sub_cols {
            cost.at(row_subset[i], col_start + j)
        } else {
            pad
        }
    };

    // Augmenting-path assignment with dual potentials, 1-based internally.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut assigned = vec![0usize; n + 1]; // assigned[j] = row for col j, 0 = free
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        assigned[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = assigned[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = entry(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[assigned[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if assigned[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            assigned[j0] = assigned[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    // Sum real (unpadded) cells in column order.
    let mut total = 0.0;
    for (j, &row) in assigned.iter().enumerate().skip(1) {
        let i = row - 1;
        if i < sub_rows && j - 1 < sub_cols {
            total += entry(i, j - 1);
        }
    }
    total
}

/// Exhaustive minimum-cost assignment for small matrices; the independent
/// oracle for the solver. Enumerates (col, row) sequences in lexicographic
/// order, so ties resolve to the lexicographically smallest assignment.
///
/// # Panics
/// Panics when `min(rows, cols) > 7`.
pub fn brute_force_assignment(cost: &CostMatrix) -> (f64, Vec<(usize, usize)>) {
    let k = cost.rows.min(cost.cols);
    assert!(k <= 7, "brute force limited to 7 assignments");
    let mut best_cost = f64::INFINITY;
    let mut best: Vec<(usize, usize)> = Vec::new();
    let mut stack: Vec<(usize, usize)> = Vec::with_capacity(k);
    let mut used_rows = vec![false; cost.rows];
    recurse(cost, k, 0, &mut used_rows, &mut stack, &mut best_cost, &mut best);
    (best_cost, best)
}

fn recurse(
    cost: &CostMatrix,
    k: usize,
    col_start: usize,
    used_rows: &mut [bool],
    stack: &mut Vec<(usize, usize)>,
    best_cost: &mut f64,
    best: &mut Vec<(usize, usize)>,
) {
    if stack.len() == k {
        let total: f64 = stack.iter().map(|&(r, c)| cost.at(r, c)).sum();
        if total < *best_cost {
            *best_cost = total;
            *best = stack.clone();
        }
        return;
    }
    let needed = k - stack.len();
    for c in col_start..cost.cols {
        if cost.cols - c < needed {
            break;
        }
        for r in 0..cost.rows {
            if used_rows[r] {
                continue;
            }
            used_rows[r] = true;
            stack.push((r, c));
            recurse(cost, k, c + 1, used_rows, stack, best_cost, best);
            stack.pop();
            used_rows[r] = false;
        }
    }
}

/// Loss breakdown for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub cls: f64,
    pub bbox: f64,
    pub conf: f64,
}

fn bce(z: f64, y: f64) -> f64 {
    let z = z.clamp(1e-7, 1.0 - 1e-7);
    -(y * z.ln() + (1.0 - y) * (1.0 - z).ln())
}

/// Composite loss for one sample under a given assignment.
///
/// Classification: mean binary cross-entropy of the predicted confidences
/// against matched/unmatched labels. Box: weighted L1 plus GIoU complement on
/// matched pairs, averaged over ground truths. Confidence: mean squared error
/// between predicted confidences and the combined prior over all candidates.
pub fn compute_loss(
    sample: &Sample,
    bundle: &PriorBundle,
    assignment: &[(usize, usize)],
    weights: &LossWeights,
    predicted_conf: &[f64],
) -> Result<LossReport, MatchError> {
    weights.validate()?;
    let n_cand = sample.candidates.len();
    if bundle.len() != n_cand {
        return Err(MatchError::BundleMismatch { candidates: n_cand, bundle: bundle.len() });
    }
    if predicted_conf.len() != n_cand {
        return Err(MatchError::AssignmentMismatch {
            detail: format!("{} confidences for {n_cand} candidates", predicted_conf.len()),
        });
    }
    let gt = sample
        .gt
        .as_ref()
        .ok_or_else(|| MatchError::MissingGroundTruth { id: sample.id.clone() })?;
    let gts = std::slice::from_ref(gt);

    let mut matched = vec![false; n_cand];
    let mut col_seen = vec![false; gts.len()];
    for &(r, c) in assignment {
        if r >= n_cand || c >= gts.len() {
            return Err(MatchError::AssignmentMismatch {
                detail: format!("pair ({r}, {c}) outside {n_cand} x {}", gts.len()),
            });
        }
        if matched[r] || col_seen[c] {
            return Err(MatchError::AssignmentMismatch {
                detail: format!("duplicate row or column in pair ({r}, {c})"),
            });
        }
        matched[r] = true;
        col_seen[c] = true;
    }

    let m = n_cand as f64;
    let cls = (0..n_cand)
        .map(|j| bce(predicted_conf[j], if matched[j] { 1.0 } else { 0.0 }))
        .sum::<f64>()
        / m;
    let bbox = assignment
        .iter()
        .map(|&(r, c)| {
            let cand = &sample.candidates[r].bbox;
            weights.l1 * l1_box(cand, &gts[c]) + weights.giou * (1.0 - giou(cand, &gts[c]))
        })
        .sum::<f64>()
        / gts.len() as f64;
    let conf = (0..n_cand)
        .map(|j| (predicted_conf[j] - bundle.h[j]) * (predicted_conf[j] - bundle.h[j]))
        .sum::<f64>()
        / m;
    Ok(LossReport {
        total: weights.cls * cls + bbox + weights.conf * conf,
        cls,
        bbox,
        conf,
    })
}
