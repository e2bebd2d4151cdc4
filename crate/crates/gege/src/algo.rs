//! Elimination algorithms for Pareto set identification, plus a
//! uniform-sampling baseline.
//!
//! Both variants proceed in rounds. A round restricts attention to the
//! active arms, computes a G-optimal design on the subspace they span,
//! rounds it to an integer allocation, pulls accordingly, and estimates
//! every active mean by least squares. Arms whose empirical gap is resolved
//! at the round's accuracy are moved out of the active set: empirically
//! Pareto arms are accepted, empirically dominated ones are rejected. The
//! recommendation is the accepted set plus whatever remains active at the
//! end; rejected arms are never recommended.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::design::{
    g_optimal_design, round_design, subspace_basis, FeatureSet, SubspaceBasis,
    DEFAULT_DESIGN_MAX_ITER, DEFAULT_DESIGN_TOL, DEFAULT_RANK_TOL,
};
use crate::env::{Instance, RngStream};
use crate::error::{Error, Result};
use crate::pareto::{empirical_gaps, pareto_set, MeanMatrix};

/// Rounds a fixed-confidence run may execute before it is declared stuck.
///
/// Per-round budgets grow geometrically, so a run on a degenerate (zero
/// minimum gap) instance trips the budget-range diagnostic around round 30;
/// the round cap is a second line of defense behind it.
pub const FC_ROUND_CAP: usize = 64;

/// Rounding slack for every fixed-budget round.
pub const FB_KAPPA: f64 = 1.0 / 3.0;

/// Largest per-round pull count the accounting arithmetic accepts.
const MAX_ROUND_BUDGET: f64 = 9.0e18;

/// One elimination round as recorded in a run trace.
#[derive(Debug, Clone, Serialize)]
pub struct RoundState {
    /// 1-based round number.
    pub round: usize,
    /// Active arms at the start of the round, ascending.
    pub active: Vec<usize>,
    /// Dimension of the subspace spanned by the active features.
    pub subspace_dim: usize,
    /// Pulls spent this round.
    pub budget: usize,
    /// Active arms whose estimate no other active estimate strictly
    /// dominates, ascending.
    pub empirical_pareto: Vec<usize>,
    /// Empirical gap of each active arm, aligned with `active`.
    pub empirical_gaps: Vec<f64>,
    /// Arms accepted into the recommendation this round, ascending.
    pub accepted: Vec<usize>,
    /// Arms rejected from contention this round, ascending.
    pub rejected: Vec<usize>,
}

/// Outcome of one algorithm run.
#[derive(Debug, Clone, Serialize)]
pub struct RunResult {
    /// Recommended arms, ascending.
    pub recommended: Vec<usize>,
    /// Total pulls across all rounds.
    pub total_samples: u64,
    /// Per-round history, in execution order.
    pub trace: Vec<RoundState>,
    /// Whether the recommendation matches a known ground truth; `None`
    /// when no ground truth was supplied.
    pub correct: Option<bool>,
}

impl RunResult {
    /// Number of executed rounds.
    pub fn rounds(&self) -> usize {
        self.trace.len()
    }
}

/// A fitted round: the coefficient estimate in basis coordinates and the
/// resulting mean estimates for the active arms.
struct RoundFit {
    /// `h_r x d` coefficients in the coordinates of the round's basis.
    theta_sub: DMatrix<f64>,
    /// `|active| x d` estimated means, rows aligned with the active arms.
    estimates: MeanMatrix,
}

/// Designs, samples, and fits one round on the given active arms.
///
/// `transformed` holds the active features in basis coordinates, one row
/// per arm of `active` in the same order. The continuous design is accepted
/// even when the optimizer stops short of its tolerance: the rounding step
/// certifies the integer allocation against the `(1 + 6 kappa) h_r / n`
/// bound, which is the guarantee the estimator needs.
fn fit_round(
    instance: &Instance,
    active: &[usize],
    transformed: &DMatrix<f64>,
    budget: usize,
    kappa: f64,
    rng: &mut RngStream,
) -> Result<RoundFit> {
    let design = match g_optimal_design(transformed, DEFAULT_DESIGN_TOL, DEFAULT_DESIGN_MAX_ITER) {
        Ok(d) => d,
        Err(Error::DesignNotConverged { best, .. }) => best,
        Err(e) => return Err(e),
    };
    let alloc = round_design(&design, transformed, budget, kappa)?;

    let h_r = transformed.ncols();
    let d = instance.objective_count();
    let mut info = DMatrix::zeros(h_r, h_r);
    let mut moments = DMatrix::zeros(h_r, d);
    for (row, &arm) in active.iter().enumerate() {
        let count = alloc.counts[row];
        if count == 0 {
            continue;
        }
        let x = transformed.row(row);
        info += x.transpose() * x * count as f64;
        // One aggregate draw carries the law of `count` iid pulls, so the
        // moment update is O(d) regardless of the allocation size.
        let total = instance.sample_total(arm, count, rng)?;
        moments += x.transpose() * total.transpose();
    }
    let chol = info.cholesky().ok_or(Error::UnsampledDirection)?;
    let theta_sub = chol.solve(&moments);
    let estimates = MeanMatrix::new(transformed * &theta_sub)?;
    Ok(RoundFit {
        theta_sub,
        estimates,
    })
}

fn active_basis(instance: &Instance, active: &[usize]) -> Result<(SubspaceBasis, DMatrix<f64>)> {
    let fs = FeatureSet::from_rows(instance.features(), active)?;
    let basis = subspace_basis(&fs, DEFAULT_RANK_TOL)?;
    let transformed = basis.transform(fs.matrix());
    Ok((basis, transformed))
}

/// Pulls `budget` samples across the arms of `active` according to a
/// rounded G-optimal design and returns the least-squares estimate of the
/// coefficient matrix, lifted back to ambient coordinates (`h x d`),
/// together with the number of pulls spent.
pub fn opt_estimator(
    instance: &Instance,
    active: &[usize],
    budget: usize,
    kappa: f64,
    rng: &mut RngStream,
) -> Result<(DMatrix<f64>, usize)> {
    let (basis, transformed) = active_basis(instance, active)?;
    let fit = fit_round(instance, active, &transformed, budget, kappa, rng)?;
    Ok((basis.matrix() * fit.theta_sub, budget))
}

/// Marks which entries of `active` appear in the ascending id list `subset`.
fn membership(active: &[usize], subset: &[usize]) -> Vec<bool> {
    active
        .iter()
        .map(|arm| subset.binary_search(arm).is_ok())
        .collect()
}

fn add_round_budget(total: u64, budget: usize) -> Result<u64> {
    total
        .checked_add(budget as u64)
        .ok_or_else(|| Error::Config("total sample count overflows a 64-bit counter".into()))
}

/// Fixed-budget elimination.
///
/// Splits `total_budget` evenly over `ceil(log2 h)` rounds (`h` the rank of
/// the full feature set; a rank-one instance still gets one round). Every
/// round keeps the `ceil(h / 2^r)` active arms with the smallest empirical
/// gaps, breaking ties in favor of empirically Pareto arms and then lower
/// ids, and classifies each discarded arm as accepted (empirically Pareto)
/// or rejected. Errors with [`Error::FixedBudgetTooSmall`] when the
/// per-round share cannot fund the rounding floor `ceil(5 h_r / kappa^2)`
/// at `kappa = 1/3`.
pub fn gege_fixed_budget(
    instance: &Instance,
    total_budget: usize,
    rng: &mut RngStream,
) -> Result<RunResult> {
    let k = instance.arm_count();
    let all: Vec<usize> = (0..k).collect();
    let (basis, _) = active_basis(instance, &all)?;
    let h = basis.dim();
    let rounds_total = usize::max(1, h.next_power_of_two().trailing_zeros() as usize);
    let per_round = total_budget / rounds_total;

    let mut active = all;
    let mut accepted_all: Vec<usize> = Vec::new();
    let mut rejected_all: Vec<usize> = Vec::new();
    let mut trace: Vec<RoundState> = Vec::with_capacity(rounds_total);
    let mut total: u64 = 0;

    for round in 1..=rounds_total {
        let (basis, transformed) = active_basis(instance, &active)?;
        let h_r = basis.dim();
        let round_minimum = (5.0 * h_r as f64 / (FB_KAPPA * FB_KAPPA)).ceil() as usize;
        if per_round < round_minimum {
            return Err(Error::FixedBudgetTooSmall {
                given: total_budget,
                minimum: round_minimum * rounds_total,
                rounds: rounds_total,
                h_r,
            });
        }

        let fit = fit_round(instance, &active, &transformed, per_round, FB_KAPPA, rng)?;
        total = add_round_budget(total, per_round)?;
        let emp = empirical_gaps(&fit.estimates, &active)?;
        let is_pareto = membership(&active, &emp.pareto);

        // The schedule never asks for more arms than are active because
        // ceil(h / 2^r) is monotone in r and at most K at round one.
        let keep = usize::min(h.div_ceil(1usize << round.min(63)), active.len());
        let mut order: Vec<usize> = (0..active.len()).collect();
        order.sort_by(|&a, &b| {
            emp.gaps[a]
                .partial_cmp(&emp.gaps[b])
                .expect("gaps are never NaN")
                .then(is_pareto[b].cmp(&is_pareto[a]))
                .then(active[a].cmp(&active[b]))
        });

        let mut kept: Vec<usize> = order[..keep].iter().map(|&i| active[i]).collect();
        kept.sort_unstable();
        let mut accepted_now: Vec<usize> = Vec::new();
        let mut rejected_now: Vec<usize> = Vec::new();
        for &i in &order[keep..] {
            if is_pareto[i] {
                accepted_now.push(active[i]);
            } else {
                rejected_now.push(active[i]);
            }
        }
        accepted_now.sort_unstable();
        rejected_now.sort_unstable();

        trace.push(RoundState {
            round,
            active: active.clone(),
            subspace_dim: h_r,
            budget: per_round,
            empirical_pareto: emp.pareto,
            empirical_gaps: emp.gaps,
            accepted: accepted_now.clone(),
            rejected: rejected_now.clone(),
        });
        accepted_all.extend(accepted_now);
        rejected_all.extend(rejected_now);
        active = kept;
        debug_assert_eq!(active.len() + accepted_all.len() + rejected_all.len(), k);
    }

    let mut recommended = accepted_all;
    recommended.extend(active);
    recommended.sort_unstable();
    Ok(RunResult {
        recommended,
        total_samples: total,
        trace,
        correct: None,
    })
}

/// Fixed-confidence elimination with an optional epsilon relaxation.
///
/// Round `r` works at accuracy `eps_r = 2^-(r+1)` and risk
/// `delta_r = 6 delta / (pi^2 r^2)`. Its budget is
/// `ceil(32 (1 + 3 eps_r) sigma^2 h_r / eps_r^2 * ln(|A_r| d / (2 delta_r)))`,
/// floored at the rounding minimum `ceil(5 h_r / eps_r^2)` so the design
/// certificate holds even for tiny noise scales. Empirically Pareto arms
/// with gap at least `eps_r` are accepted; empirically dominated arms with
/// gap at least `eps_r / 2` are rejected. The loop stops once at most one
/// arm is active or, for `epsilon > 0`, once `eps_r <= epsilon / 4`, and
/// recommends the accepted arms plus the remaining active ones.
pub fn gege_fixed_confidence(
    instance: &Instance,
    delta: f64,
    epsilon: f64,
    rng: &mut RngStream,
) -> Result<RunResult> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!(
            "risk level must lie strictly between 0 and 1, got {delta}"
        )));
    }
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::Config(format!(
            "relaxation must be finite and nonnegative, got {epsilon}"
        )));
    }

    let k = instance.arm_count();
    let d = instance.objective_count() as f64;
    let sigma = instance.sigma();

    let mut active: Vec<usize> = (0..k).collect();
    let mut accepted_all: Vec<usize> = Vec::new();
    let mut rejected_all: Vec<usize> = Vec::new();
    let mut trace: Vec<RoundState> = Vec::new();
    let mut total: u64 = 0;

    let mut round = 1usize;
    loop {
        let eps_r = 0.25 * 0.5f64.powi(round as i32 - 1);
        if active.len() <= 1 {
            break;
        }
        if epsilon > 0.0 && eps_r <= epsilon / 4.0 {
            break;
        }
        if round > FC_ROUND_CAP {
            return Err(Error::RoundCapExceeded(FC_ROUND_CAP));
        }

        let (basis, transformed) = active_basis(instance, &active)?;
        let h_r = basis.dim();
        let delta_r = 6.0 * delta / (PI * PI * (round * round) as f64);
        let floor = (5.0 * h_r as f64) / (eps_r * eps_r);
        let concentration = 32.0 * (1.0 + 3.0 * eps_r) * sigma * sigma * h_r as f64
            / (eps_r * eps_r)
            * (active.len() as f64 * d / (2.0 * delta_r)).ln();
        let raw = concentration.max(floor).ceil();
        if !(raw >= 1.0 && raw <= MAX_ROUND_BUDGET) {
            return Err(Error::Config(format!(
                "round {round} asks for {raw:.3e} pulls, outside the accountable range \
                 (the minimum gap is too small to resolve)"
            )));
        }
        let budget = raw as usize;

        let fit = fit_round(instance, &active, &transformed, budget, eps_r, rng)?;
        total = add_round_budget(total, budget)?;
        let emp = empirical_gaps(&fit.estimates, &active)?;
        let is_pareto = membership(&active, &emp.pareto);

        let mut kept: Vec<usize> = Vec::new();
        let mut accepted_now: Vec<usize> = Vec::new();
        let mut rejected_now: Vec<usize> = Vec::new();
        for (i, &arm) in active.iter().enumerate() {
            if is_pareto[i] && emp.gaps[i] >= eps_r {
                accepted_now.push(arm);
            } else if !is_pareto[i] && emp.gaps[i] >= eps_r / 2.0 {
                rejected_now.push(arm);
            } else {
                kept.push(arm);
            }
        }

        trace.push(RoundState {
            round,
            active: active.clone(),
            subspace_dim: h_r,
            budget,
            empirical_pareto: emp.pareto,
            empirical_gaps: emp.gaps,
            accepted: accepted_now.clone(),
            rejected: rejected_now.clone(),
        });
        accepted_all.extend(accepted_now);
        rejected_all.extend(rejected_now);
        active = kept;
        debug_assert_eq!(active.len() + accepted_all.len() + rejected_all.len(), k);
        round += 1;
    }

    let mut recommended = accepted_all;
    recommended.extend(active);
    recommended.sort_unstable();
    Ok(RunResult {
        recommended,
        total_samples: total,
        trace,
        correct: None,
    })
}

/// Uniform-sampling baseline: spreads `total_budget` as evenly as possible
/// over all arms (earlier arms get the remainder), estimates each mean by
/// its sample average, and recommends the arms no other arm weakly
/// dominates. The trace holds a single round whose gap diagnostics use the
/// same strict-dominance computation as the elimination algorithms;
/// `subspace_dim` is zero because no design is fitted.
pub fn uniform_fixed_budget(
    instance: &Instance,
    total_budget: usize,
    rng: &mut RngStream,
) -> Result<RunResult> {
    let k = instance.arm_count();
    if total_budget < k {
        return Err(Error::Config(format!(
            "uniform baseline needs at least one pull per arm: budget {total_budget} < {k} arms"
        )));
    }
    let base = total_budget / k;
    let extra = total_budget % k;
    let d = instance.objective_count();

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k);
    for arm in 0..k {
        let count = base + usize::from(arm < extra);
        let sum = instance.sample_total(arm, count, rng)?;
        rows.push((0..d).map(|c| sum[c] / count as f64).collect());
    }
    let estimates = MeanMatrix::from_rows(&rows)?;
    let recommended = pareto_set(&estimates, false);
    let keep = membership(&(0..k).collect::<Vec<_>>(), &recommended);
    let rejected: Vec<usize> = (0..k).filter(|&i| !keep[i]).collect();

    let all: Vec<usize> = (0..k).collect();
    let emp = empirical_gaps(&estimates, &all)?;
    let trace = vec![RoundState {
        round: 1,
        active: all,
        subspace_dim: 0,
        budget: total_budget,
        empirical_pareto: emp.pareto,
        empirical_gaps: emp.gaps,
        accepted: recommended.clone(),
        rejected,
    }];
    Ok(RunResult {
        recommended,
        total_samples: total_budget as u64,
        trace,
        correct: None,
    })
}
