//! G-optimal experimental designs over a feature subspace.
//!
//! Given arm features restricted to an index set `S`, the pipeline is:
//! an orthonormal basis `B` of `span{x_i : i in S}` (numerical rank via
//! SVD), transformed features `x~_i = B^T x_i`, a design `w` on the
//! simplex minimizing `max_i x~_i^T V(w)^{-1} x~_i` with
//! `V(w) = sum_i w_i x~_i x~_i^T`, and an integer allocation of `N` pulls
//! whose realized criterion is certified against `(1 + 6 kappa) h_S / N`.
//!
//! The minimax optimum equals exactly `h_S = dim span`, which is what makes
//! the certificates checkable: the continuous solver stops when the
//! criterion is within `tol` of `h_S`, and any probability vector has
//! criterion at least `h_S` (taking the trace shows the average of the
//! per-arm criteria is already `h_S`).

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};

/// Stopping tolerance on `|criterion - h_S|` for the continuous solver.
pub const DEFAULT_DESIGN_TOL: f64 = 1e-3;
/// Iteration cap for the continuous solver.
pub const DEFAULT_DESIGN_MAX_ITER: usize = 10_000;
/// Relative singular value threshold for rank decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;
/// Design weights below this are dropped before integer rounding.
const SUPPORT_PRUNE: f64 = 1e-9;
/// Cap on greedy repair moves during rounding certification.
const REPAIR_MOVE_CAP: usize = 10_000;

/// Features of an arm subset: one row per kept arm plus the original ids.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    matrix: DMatrix<f64>,
    ids: Vec<usize>,
}

impl FeatureSet {
    /// Validates shape agreement, finite entries, and distinct ids.
    pub fn new(matrix: DMatrix<f64>, ids: Vec<usize>) -> Result<Self> {
        if matrix.nrows() == 0 {
            return Err(Error::InvalidInstance("empty feature set".into()));
        }
        if matrix.nrows() != ids.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows for {} ids",
                matrix.nrows(),
                ids.len()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInstance(
                "feature matrix contains a non-finite entry".into(),
            ));
        }
        let mut seen = ids.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != ids.len() {
            return Err(Error::InvalidInstance("duplicate arm ids".into()));
        }
        Ok(Self { matrix, ids })
    }

    /// Rows of a full feature matrix selected by `ids`.
    pub fn from_rows(features: &DMatrix<f64>, ids: &[usize]) -> Result<Self> {
        for &i in ids {
            if i >= features.nrows() {
                return Err(Error::ArmIndex {
                    index: i,
                    arms: features.nrows(),
                });
            }
        }
        let matrix = DMatrix::from_fn(ids.len(), features.ncols(), |r, c| {
            features[(ids[r], c)]
        });
        Self::new(matrix, ids.to_vec())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ambient_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

/// Orthonormal basis of the span of a feature set.
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    matrix: DMatrix<f64>,
}

impl SubspaceBasis {
    /// Subspace dimension `h_S`.
    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    /// The `h x h_S` basis matrix `B`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Projects features into basis coordinates: `X B`, one row per arm.
    pub fn transform(&self, features: &DMatrix<f64>) -> DMatrix<f64> {
        features * &self.matrix
    }
}

/// Computes an orthonormal basis of the row span of `features`.
///
/// The rank is the number of singular values above `rank_tol` times the
/// largest one. Errors if the features are all zero.
pub fn subspace_basis(features: &FeatureSet, rank_tol: f64) -> Result<SubspaceBasis> {
    let x = features.matrix();
    // Left singular vectors of X^T are an orthonormal basis of the row
    // span of X.
    let svd = x.transpose().svd(true, false);
    let u = svd.u.as_ref().expect("u requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .expect("singular values are finite")
    });
    let sigma_max = svd.singular_values[order[0]];
    if sigma_max <= 0.0 {
        return Err(Error::RankZero);
    }
    let rank = order
        .iter()
        .filter(|&&i| svd.singular_values[i] > rank_tol * sigma_max)
        .count();
    let mut basis = DMatrix::zeros(features.ambient_dim(), rank);
    for (col, &i) in order.iter().take(rank).enumerate() {
        basis.set_column(col, &u.column(i));
    }
    debug_assert!(orthonormal_defect(&basis) < 1e-10);
    Ok(SubspaceBasis { matrix: basis })
}

fn orthonormal_defect(b: &DMatrix<f64>) -> f64 {
    let gram = b.transpose() * b;
    let mut defect: f64 = 0.0;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            defect = defect.max((gram[(i, j)] - target).abs());
        }
    }
    defect
}

/// A probability design over an arm subset, with its criterion value.
#[derive(Debug, Clone, Serialize)]
pub struct Design {
    pub weights: Vec<f64>,
    /// `max_i x~_i^T V(w)^{-1} x~_i` at `weights`.
    pub value: f64,
}

/// Evaluates the G-criterion `max_i x~_i^T V(m)^{-1} x~_i` for nonnegative
/// masses `m` (a probability design or an integer allocation alike).
///
/// Errors if some direction of the span carries no mass.
pub fn design_value(masses: &[f64], transformed: &DMatrix<f64>) -> Result<f64> {
    if masses.len() != transformed.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} masses for {} feature rows",
            masses.len(),
            transformed.nrows()
        )));
    }
    if masses.iter().any(|&w| !w.is_finite() || w < 0.0) {
        return Err(Error::InvalidInstance(
            "design masses must be finite and nonnegative".into(),
        ));
    }
    criterion(masses, transformed)
        .map(|(value, _)| value)
        .ok_or(Error::UnsampledDirection)
}

/// Returns `(max_i f_i, all f_i)` or `None` when the moment matrix is singular.
fn criterion(masses: &[f64], transformed: &DMatrix<f64>) -> Option<(f64, Vec<f64>)> {
    let m = transformed.ncols();
    let mut scaled = transformed.clone();
    for (i, &w) in masses.iter().enumerate() {
        let s = w.sqrt();
        for c in 0..m {
            scaled[(i, c)] *= s;
        }
    }
    let moment = scaled.transpose() * &scaled;
    let chol = moment.cholesky()?;
    // f_i = x~_i^T V^{-1} x~_i via one solve against all features at once.
    let solved = chol.solve(&transformed.transpose()); // m x |S|
    let mut values = Vec::with_capacity(transformed.nrows());
    let mut max = f64::NEG_INFINITY;
    for i in 0..transformed.nrows() {
        let mut f = 0.0;
        for c in 0..m {
            f += transformed[(i, c)] * solved[(c, i)];
        }
        values.push(f);
        if f > max {
            max = f;
        }
    }
    if !max.is_finite() {
        return None;
    }
    Some((max, values))
}

/// Solves the G-optimal design over transformed features by entropic mirror
/// descent with multiplicative updates.
///
/// Starts uniform and stops once the criterion is within `tol` of the known
/// optimum `h_S = transformed.ncols()`. Each iteration reweights arm `i` by
/// `exp(eta_t g_i)` with gradient `g_i = ||x~_i||^2_{V(w)^{-1}}` and step
/// `eta_t = 1 / max_i g_i`. Since the `g_i` are the partial derivatives of
/// `log det V(w)`, whose maximizers over the simplex are exactly the
/// G-optimal designs, this is exponentiated-gradient ascent on that
/// criterion; the scale-free step bounds every exponent by 1, which keeps
/// the update stable without a problem-dependent constant. On hitting
/// `max_iter` the error carries the best design seen so the caller can
/// accept it or abort.
pub fn g_optimal_design(
    transformed: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<Design> {
    let n = transformed.nrows();
    let target = transformed.ncols() as f64;
    if n == 0 {
        return Err(Error::InvalidInstance("empty feature set".into()));
    }
    if transformed.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInstance(
            "feature matrix contains a non-finite entry".into(),
        ));
    }

    let uniform = vec![1.0 / n as f64; n];
    let (value0, f0) = criterion(&uniform, transformed).ok_or_else(|| {
        Error::InvalidInstance(
            "transformed features do not span the design space; \
             compute the basis first"
                .into(),
        )
    })?;

    // Multiplicative updates in log space so tiny weights cannot underflow
    // to exact zero and stall.
    let mut log_w: Vec<f64> = uniform.iter().map(|w| w.ln()).collect();
    let mut weights = uniform;
    let mut value = value0;
    let mut grads = f0;
    let mut best = Design {
        weights: weights.clone(),
        value,
    };

    for t in 1..=max_iter {
        if (value - target).abs() < tol {
            return Ok(Design { weights, value });
        }
        // The criterion value is max_i g_i, strictly positive on the span.
        let eta = 1.0 / value;
        for i in 0..n {
            log_w[i] += eta * grads[i];
        }
        let shift = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for i in 0..n {
            weights[i] = (log_w[i] - shift).exp();
            sum += weights[i];
        }
        for w in weights.iter_mut() {
            *w /= sum;
        }
        // Keep the log representation normalized as well so exponents stay
        // in range over long runs.
        let log_sum = sum.ln() + shift;
        for lw in log_w.iter_mut() {
            *lw -= log_sum;
        }

        let (v, f) = match criterion(&weights, transformed) {
            Some(result) => result,
            None => {
                // A collapsing iterate lost the span; the best seen design
                // is still valid, so report non-convergence with it.
                return Err(Error::DesignNotConverged {
                    value: best.value,
                    target,
                    iterations: t,
                    tolerance: tol,
                    best,
                });
            }
        };
        value = v;
        grads = f;
        if value < best.value {
            best = Design {
                weights: weights.clone(),
                value,
            };
        }
    }

    if (value - target).abs() < tol {
        return Ok(Design { weights, value });
    }
    Err(Error::DesignNotConverged {
        value: best.value,
        target,
        iterations: max_iter,
        tolerance: tol,
        best,
    })
}

/// An integer sampling allocation over an arm subset.
#[derive(Debug, Clone, Serialize)]
pub struct IntegerAllocation {
    pub counts: Vec<usize>,
    pub total: usize,
}

impl IntegerAllocation {
    pub fn as_masses(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

/// Rounds a continuous design to `n` integer pulls with a certified
/// G-criterion bound.
///
/// Requires `kappa` in `(0, 1/3]` and `n >= 5 h_S / kappa^2`. Weights below
/// 1e-9 are pruned, the rest apportioned by largest remainder, then greedy
/// single-pull moves repair the allocation until
/// `max_i x~_i^T V(counts)^{-1} x~_i <= (1 + 6 kappa) h_S / n`,
/// which is asserted before returning.
pub fn round_design(
    design: &Design,
    transformed: &DMatrix<f64>,
    n: usize,
    kappa: f64,
) -> Result<IntegerAllocation> {
    if !(kappa > 0.0 && kappa <= 1.0 / 3.0) {
        return Err(Error::InvalidKappa(kappa));
    }
    let h_s = transformed.ncols();
    let size = transformed.nrows();
    if design.weights.len() != size {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} feature rows",
            design.weights.len(),
            size
        )));
    }
    let minimum = (5.0 * h_s as f64 / (kappa * kappa)).ceil() as usize;
    if n < minimum {
        return Err(Error::BudgetTooSmall {
            given: n,
            minimum,
            h_s,
        });
    }

    // Prune negligible support and renormalize.
    let mut weights: Vec<f64> = design
        .weights
        .iter()
        .map(|&w| if w < SUPPORT_PRUNE { 0.0 } else { w })
        .collect();
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return Err(Error::InvalidInstance("design has empty support".into()));
    }
    for w in weights.iter_mut() {
        *w /= sum;
    }

    // Largest-remainder apportionment of n pulls.
    let mut counts = vec![0usize; size];
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(size);
    let mut assigned = 0usize;
    for i in 0..size {
        let exact = n as f64 * weights[i];
        let floor = exact.floor();
        counts[i] = floor as usize;
        assigned += counts[i];
        remainders.push((i, exact - floor));
    }
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite").then(a.0.cmp(&b.0)));
    // For n near 2^53 the products n * w_i are inexact and the floors can
    // overshoot n in total; trim the excess off the largest counts.
    while assigned > n {
        let largest = (0..size)
            .max_by_key(|&i| counts[i])
            .expect("nonempty counts");
        counts[largest] -= 1;
        assigned -= 1;
    }
    let mut leftover = n - assigned;
    for &(i, _) in remainders.iter() {
        if leftover == 0 {
            break;
        }
        // Leftover pulls only go to supported arms; the apportionment of a
        // spanning design always has enough of them.
        if weights[i] > 0.0 {
            counts[i] += 1;
            leftover -= 1;
        }
    }
    if leftover > 0 {
        // All support already taken (cannot happen for spanning designs,
        // kept as a defensive path): dump the rest on the heaviest arm.
        let heaviest = (0..size)
            .max_by(|&a, &b| weights[a].partial_cmp(&weights[b]).expect("finite"))
            .expect("nonempty");
        counts[heaviest] += leftover;
    }

    let support: Vec<usize> = (0..size).filter(|&i| weights[i] > 0.0).collect();
    // Supported arms keep at least one pull: a tiny supported weight can
    // round to zero and cost the allocation its span.
    for &i in &support {
        if counts[i] == 0 {
            let donor = (0..size)
                .filter(|&j| j != i)
                .max_by_key(|&j| counts[j])
                .expect("more than one arm when a count is zero");
            if counts[donor] >= 2 {
                counts[donor] -= 1;
                counts[i] = 1;
            }
        }
    }

    let bound = (1.0 + 6.0 * kappa) * h_s as f64 / n as f64;
    let masses = |c: &[usize]| -> Vec<f64> { c.iter().map(|&x| x as f64).collect() };

    let mut value = criterion(&masses(&counts), transformed)
        .map(|(v, _)| v)
        .unwrap_or(f64::INFINITY);
    let mut moves = 0usize;
    while value > bound && moves < REPAIR_MOVE_CAP {
        let mut best_move: Option<(usize, usize, f64)> = None;
        // Cheap pass: add where coverage is worst, scan sources.
        let dst_first = criterion(&masses(&counts), transformed).map(|(_, f)| {
            support
                .iter()
                .copied()
                .max_by(|&a, &b| f[a].partial_cmp(&f[b]).expect("finite"))
                .expect("nonempty support")
        });
        let consider = |src: usize, dst: usize, counts: &mut Vec<usize>| {
            if src == dst || counts[src] == 0 {
                return None;
            }
            counts[src] -= 1;
            counts[dst] += 1;
            let v = criterion(&masses(counts), transformed)
                .map(|(v, _)| v)
                .unwrap_or(f64::INFINITY);
            counts[src] += 1;
            counts[dst] -= 1;
            Some(v)
        };
        if let Some(dst) = dst_first {
            for src in 0..size {
                if let Some(v) = consider(src, dst, &mut counts) {
                    if v < value && best_move.map_or(true, |(_, _, bv)| v < bv) {
                        best_move = Some((src, dst, v));
                    }
                }
            }
        }
        if best_move.is_none() {
            // Full scan over support pairs.
            for &dst in &support {
                for src in 0..size {
                    if let Some(v) = consider(src, dst, &mut counts) {
                        if v < value && best_move.map_or(true, |(_, _, bv)| v < bv) {
                            best_move = Some((src, dst, v));
                        }
                    }
                }
            }
        }
        match best_move {
            Some((src, dst, v)) => {
                counts[src] -= 1;
                counts[dst] += 1;
                value = v;
                moves += 1;
            }
            None => break,
        }
    }

    if value > bound {
        return Err(Error::RoundingBound { value, bound });
    }
    debug_assert_eq!(counts.iter().sum::<usize>(), n);
    Ok(IntegerAllocation { counts, total: n })
}
