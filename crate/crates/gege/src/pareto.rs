//! Dominance relations, sub-optimality gaps, and complexity measures.
//!
//! Arms are compared through their mean vectors in `R^d`. Arm `i` is weakly
//! dominated by arm `j` when `mu_j` is componentwise at least `mu_i` with at
//! least one strict coordinate, and strictly dominated when every coordinate
//! is strictly larger. The Pareto set collects the arms no other arm weakly
//! dominates.
//!
//! All gap quantities reduce to the pairwise margin
//! `m(i, j) = min_c (mu_j[c] - mu_i[c])`, the largest amount by which `mu_i`
//! can be raised in every coordinate before `j` stops dominating it, and its
//! negation `M(i, j) = -m(i, j)`. `m(i, j) > 0` holds exactly when `j`
//! strictly dominates `i`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};

/// Arm means, one row per arm, one column per objective.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanMatrix {
    values: DMatrix<f64>,
}

impl MeanMatrix {
    /// Wraps a `K x d` matrix of finite values, `K >= 1`, `d >= 1`.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidInstance(
                "mean matrix must have at least one arm and one objective".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInstance(
                "mean matrix contains a non-finite entry".into(),
            ));
        }
        Ok(Self { values })
    }

    /// Builds from per-arm rows; all rows must share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidInstance("no arms given".into()));
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch(
                "mean rows have unequal lengths".into(),
            ));
        }
        Self::new(DMatrix::from_fn(rows.len(), d, |i, c| rows[i][c]))
    }

    pub fn arms(&self) -> usize {
        self.values.nrows()
    }

    pub fn objectives(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, arm: usize, objective: usize) -> f64 {
        self.values[(arm, objective)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Mean vector of one arm.
    pub fn row(&self, arm: usize) -> Vec<f64> {
        self.values.row(arm).iter().copied().collect()
    }

    pub(crate) fn check_arm(&self, index: usize) -> Result<()> {
        if index >= self.arms() {
            return Err(Error::ArmIndex {
                index,
                arms: self.arms(),
            });
        }
        Ok(())
    }
}

/// `m(i, j) = min_c (mu_j[c] - mu_i[c])`; positive iff `j` strictly dominates `i`.
pub fn pairwise_margin(means: &MeanMatrix, i: usize, j: usize) -> Result<f64> {
    means.check_arm(i)?;
    means.check_arm(j)?;
    Ok(margin_unchecked(means.matrix(), i, j))
}

fn margin_unchecked(m: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    let mut min = f64::INFINITY;
    for c in 0..m.ncols() {
        let diff = m[(j, c)] - m[(i, c)];
        if diff < min {
            min = diff;
        }
    }
    min
}

/// Indices of arms not dominated by any other arm, ascending.
///
/// With `strict = false` domination means weak dominance (componentwise `>=`
/// with one strict coordinate); with `strict = true` it means strict
/// dominance in every coordinate. The weak form defines the Pareto set of an
/// instance; the strict form is what the elimination rounds apply to
/// estimated means.
pub fn pareto_set(means: &MeanMatrix, strict: bool) -> Vec<usize> {
    let m = means.matrix();
    let k = m.nrows();
    let mut result = Vec::new();
    'arms: for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let mij = margin_unchecked(m, i, j);
            let dominated = if strict {
                mij > 0.0
            } else {
                // j >= i everywhere and j > i somewhere
                mij >= 0.0 && margin_unchecked(m, j, i) < 0.0
            };
            if dominated {
                continue 'arms;
            }
        }
        result.push(i);
    }
    result
}

/// Per-arm gap decomposition of an instance.
#[derive(Debug, Clone)]
pub struct GapProfile {
    pareto: Vec<bool>,
    delta_star: Vec<f64>,
    delta_opt: Vec<Option<f64>>,
    gap: Vec<f64>,
}

impl GapProfile {
    pub fn arms(&self) -> usize {
        self.gap.len()
    }

    pub fn is_pareto(&self, arm: usize) -> bool {
        self.pareto[arm]
    }

    pub fn pareto_flags(&self) -> &[bool] {
        &self.pareto
    }

    /// Arms flagged Pareto-optimal, ascending.
    pub fn pareto_set(&self) -> Vec<usize> {
        (0..self.arms()).filter(|&i| self.pareto[i]).collect()
    }

    /// `max_{j != i} m(i, j)`: how far arm `i` is inside the dominated
    /// region (negative for Pareto arms). `-inf` for a single-arm instance.
    pub fn delta_star(&self) -> &[f64] {
        &self.delta_star
    }

    /// Margin by which a Pareto arm stays in the Pareto set; `None` for
    /// dominated arms.
    pub fn delta_opt(&self, arm: usize) -> Option<f64> {
        self.delta_opt[arm]
    }

    /// The gap of each arm: `delta_star` for dominated arms, `delta_opt`
    /// for Pareto arms.
    pub fn gaps(&self) -> &[f64] {
        &self.gap
    }

    pub fn gap(&self, arm: usize) -> f64 {
        self.gap[arm]
    }

    /// Gaps sorted ascending; equal values keep arm-index order.
    pub fn sorted_gaps(&self) -> Vec<f64> {
        self.sorted_gaps_indexed().iter().map(|&(_, g)| g).collect()
    }

    /// `(arm, gap)` pairs sorted by gap ascending, ties by arm index.
    pub fn sorted_gaps_indexed(&self) -> Vec<(usize, f64)> {
        let mut order: Vec<usize> = (0..self.arms()).collect();
        order.sort_by(|&a, &b| {
            self.gap[a]
                .partial_cmp(&self.gap[b])
                .expect("gaps are never NaN")
                .then(a.cmp(&b))
        });
        order.iter().map(|&i| (i, self.gap[i])).collect()
    }

    pub fn min_gap(&self) -> f64 {
        self.gap.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// True when some gap is not strictly positive, i.e. the instance has
    /// duplicate or tie-degenerate mean rows and gap-based complexity is
    /// undefined.
    pub fn is_degenerate(&self) -> bool {
        self.gap.iter().any(|&g| g <= 0.0)
    }
}

/// Computes every arm's gap from exact means.
///
/// Dominated arms get `Delta*_i = max_{j != i} m(i, j)`, the margin of
/// their best dominator. Pareto arms get
/// `delta*_i = min_{j != i} [ M(i, j) min ( (M(j, i))_+ + (Delta*_j)_+ ) ]`,
/// the amount by which they could be degraded before leaving the Pareto
/// set. Vacuous extrema (single arm) produce `+inf` gaps.
pub fn true_gaps(means: &MeanMatrix) -> GapProfile {
    let k = means.arms();
    let m = means.matrix();

    // margins[(i, j)] = m(i, j)
    let margins = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            0.0
        } else {
            margin_unchecked(m, i, j)
        }
    });

    let mut delta_star = vec![f64::NEG_INFINITY; k];
    for i in 0..k {
        for j in 0..k {
            if i != j && margins[(i, j)] > delta_star[i] {
                delta_star[i] = margins[(i, j)];
            }
        }
    }

    let pareto_ids = pareto_set(means, false);
    let mut pareto = vec![false; k];
    for &i in &pareto_ids {
        pareto[i] = true;
    }

    let mut delta_opt = vec![None; k];
    let mut gap = vec![0.0; k];
    for i in 0..k {
        if pareto[i] {
            let mut min = f64::INFINITY;
            for j in 0..k {
                if i == j {
                    continue;
                }
                let big_m_ij = -margins[(i, j)];
                let big_m_ji = -margins[(j, i)];
                let term = big_m_ij.min(big_m_ji.max(0.0) + delta_star[j].max(0.0));
                if term < min {
                    min = term;
                }
            }
            delta_opt[i] = Some(min);
            gap[i] = min;
        } else {
            gap[i] = delta_star[i];
        }
    }

    GapProfile {
        pareto,
        delta_star,
        delta_opt,
        gap,
    }
}

/// Empirical round quantities computed from estimated means of the active arms.
#[derive(Debug, Clone)]
pub struct EmpiricalGaps {
    /// Active arms (original ids) whose estimate no other active estimate
    /// strictly dominates, ascending.
    pub pareto: Vec<usize>,
    /// One gap per active arm, aligned with the `active` slice.
    pub gaps: Vec<f64>,
}

/// Computes the empirical Pareto set and empirical gaps over the active arms.
///
/// `estimated` holds one row per entry of `active`, in the same order. The
/// empirical Pareto set uses strict dominance; gaps mirror [`true_gaps`] but
/// restricted to the active arms. A lone active arm gets gap `+inf`.
pub fn empirical_gaps(estimated: &MeanMatrix, active: &[usize]) -> Result<EmpiricalGaps> {
    if estimated.arms() != active.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimated rows for {} active arms",
            estimated.arms(),
            active.len()
        )));
    }
    let n = active.len();
    let m = estimated.matrix();

    let margins = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            margin_unchecked(m, i, j)
        }
    });

    let mut delta_star = vec![f64::NEG_INFINITY; n];
    for i in 0..n {
        for j in 0..n {
            if i != j && margins[(i, j)] > delta_star[i] {
                delta_star[i] = margins[(i, j)];
            }
        }
    }

    // Strictly dominated <=> max_{j != i} m(i, j) > 0, so the strict Pareto
    // rows fall out of delta_star directly.
    let mut gaps = vec![0.0; n];
    let mut pareto = Vec::new();
    for i in 0..n {
        if delta_star[i] > 0.0 {
            gaps[i] = delta_star[i];
        } else {
            pareto.push(active[i]);
            let mut min = f64::INFINITY;
            for j in 0..n {
                if i == j {
                    continue;
                }
                let big_m_ij = -margins[(i, j)];
                let big_m_ji = -margins[(j, i)];
                let term = big_m_ij.min(big_m_ji.max(0.0) + delta_star[j].max(0.0));
                if term < min {
                    min = term;
                }
            }
            gaps[i] = min;
        }
    }

    Ok(EmpiricalGaps { pareto, gaps })
}

/// Instance hardness summaries computed from sorted gaps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComplexityMeasures {
    /// Sum of all inverse squared gaps.
    pub h1: f64,
    /// `max_i i * gap_(i)^-2` over all arms (1-based rank in ascending order).
    pub h2: f64,
    /// Sum of the `h` smallest inverse squared gaps.
    pub h1_lin: f64,
    /// `max_{i <= h} i * gap_(i)^-2`.
    pub h2_lin: f64,
}

/// Computes the four complexity measures for a subspace dimension `h`.
///
/// Requires every gap finite and strictly positive (fails with a degeneracy
/// error otherwise) and `1 <= h <= K`.
pub fn complexities(profile: &GapProfile, h: usize) -> Result<ComplexityMeasures> {
    let k = profile.arms();
    if h == 0 || h > k {
        return Err(Error::Config(format!(
            "subspace dimension {h} outside 1..={k}"
        )));
    }
    let sorted = profile.sorted_gaps();
    if let Some(&bad) = sorted.iter().find(|g| !g.is_finite() || **g <= 0.0) {
        return Err(Error::Degenerate(format!(
            "complexity measures need finite positive gaps, found {bad}"
        )));
    }

    let mut h1 = 0.0;
    let mut h2: f64 = 0.0;
    let mut h1_lin = 0.0;
    let mut h2_lin: f64 = 0.0;
    for (rank0, &g) in sorted.iter().enumerate() {
        let inv = 1.0 / (g * g);
        let weighted = (rank0 + 1) as f64 * inv;
        h1 += inv;
        h2 = h2.max(weighted);
        if rank0 < h {
            h1_lin += inv;
            h2_lin = h2_lin.max(weighted);
        }
    }

    Ok(ComplexityMeasures {
        h1,
        h2,
        h1_lin,
        h2_lin,
    })
}
