//! Sampling environments: bandit instances, noise models, seeded RNG
//! streams, and a synthetic instance family with a controlled gap ladder.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::pareto::{true_gaps, MeanMatrix};

/// Attempts per padding arm before the synthetic construction gives up.
/// The acceptance region (dominated, above the gap floor, basis gaps
/// untouched) thins out near h = 4 where the pocket is shallowest, so the
/// cap is generous; candidates are cheap to test.
pub const PADDING_ATTEMPTS: usize = 100_000;

/// Stream id reserved for instance construction so replication streams
/// (numbered from 0) never share a generator state with it.
const CONSTRUCTION_STREAM: u64 = u64::MAX;

/// Counter-based RNG stream: one master seed, independent streams by id.
///
/// Every (master seed, stream id) pair names a reproducible sequence that
/// is independent of how many other streams exist or which thread runs it.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha12Rng,
    master_seed: u64,
    stream_id: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_id);
        Self {
            rng,
            master_seed,
            stream_id,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

/// Observation noise attached to an instance.
#[derive(Debug, Clone)]
pub enum NoiseKind {
    /// Independent `N(0, sigma^2)` per objective; `sigma` lives on the
    /// instance.
    GaussianIid,
    /// Correlated `N(0, cov)` across objectives. The scale is fully
    /// described by `cov`; the instance sigma is ignored for sampling and
    /// reported as the largest marginal standard deviation.
    GaussianCov {
        cov: DMatrix<f64>,
        chol: DMatrix<f64>,
    },
}

impl NoiseKind {
    /// Validates and factorizes a covariance matrix (must be symmetric
    /// positive definite).
    pub fn gaussian_cov(cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != cov.ncols() || cov.nrows() == 0 {
            return Err(Error::InvalidInstance(format!(
                "noise covariance must be square, got {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let sym_defect = (&cov - cov.transpose()).abs().max();
        if !sym_defect.is_finite() || sym_defect > 1e-10 {
            return Err(Error::InvalidInstance(
                "noise covariance is not symmetric".into(),
            ));
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| {
                Error::InvalidInstance("noise covariance is not positive definite".into())
            })?
            .l();
        Ok(NoiseKind::GaussianCov { cov, chol })
    }
}

/// Linear instance: `K` feature rows in `R^h`, parameter `Theta` (`h x d`),
/// responses `Theta^T x + noise`.
#[derive(Debug, Clone)]
pub struct LinearInstance {
    features: DMatrix<f64>,
    theta: DMatrix<f64>,
    means: MeanMatrix,
    sigma: f64,
    noise: NoiseKind,
}

impl LinearInstance {
    pub fn new(features: DMatrix<f64>, theta: DMatrix<f64>, sigma: f64) -> Result<Self> {
        Self::with_noise(features, theta, sigma, NoiseKind::GaussianIid)
    }

    pub fn with_noise(
        features: DMatrix<f64>,
        theta: DMatrix<f64>,
        sigma: f64,
        noise: NoiseKind,
    ) -> Result<Self> {
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(Error::InvalidInstance("empty feature matrix".into()));
        }
        if theta.nrows() != features.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "features in R^{} against parameter with {} rows",
                features.ncols(),
                theta.nrows()
            )));
        }
        if !features.iter().all(|v| v.is_finite()) || !theta.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInstance(
                "features and parameter must be finite".into(),
            ));
        }
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::InvalidInstance(format!(
                "noise scale must be finite and nonnegative, got {sigma}"
            )));
        }
        if let NoiseKind::GaussianCov { cov, .. } = &noise {
            if cov.nrows() != theta.ncols() {
                return Err(Error::DimensionMismatch(format!(
                    "{}-objective instance against {}x{} noise covariance",
                    theta.ncols(),
                    cov.nrows(),
                    cov.ncols()
                )));
            }
        }
        let means = MeanMatrix::new(&features * &theta)?;
        Ok(Self {
            features,
            theta,
            means,
            sigma,
            noise,
        })
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }
}

/// Instance specified directly by its mean matrix; features are the
/// canonical basis of `R^K`, noise is independent Gaussian.
#[derive(Debug, Clone)]
pub struct FixedMeansInstance {
    features: DMatrix<f64>,
    means: MeanMatrix,
    sigma: f64,
}

impl FixedMeansInstance {
    pub fn new(means: MeanMatrix, sigma: f64) -> Result<Self> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::InvalidInstance(format!(
                "noise scale must be finite and nonnegative, got {sigma}"
            )));
        }
        let features = DMatrix::identity(means.arms(), means.arms());
        Ok(Self {
            features,
            means,
            sigma,
        })
    }
}

/// A sampling environment the algorithms interrogate only through arm
/// pulls and the (public) feature rows.
#[derive(Debug, Clone)]
pub enum Instance {
    Linear(LinearInstance),
    FixedMeans(FixedMeansInstance),
}

impl Instance {
    pub fn arm_count(&self) -> usize {
        self.features().nrows()
    }

    pub fn ambient_dim(&self) -> usize {
        self.features().ncols()
    }

    pub fn objective_count(&self) -> usize {
        self.mean_matrix().objectives()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        match self {
            Instance::Linear(li) => &li.features,
            Instance::FixedMeans(fi) => &fi.features,
        }
    }

    pub fn mean_matrix(&self) -> &MeanMatrix {
        match self {
            Instance::Linear(li) => &li.means,
            Instance::FixedMeans(fi) => &fi.means,
        }
    }

    /// Subgaussian scale of each objective's noise (largest marginal
    /// standard deviation under correlated noise).
    pub fn sigma(&self) -> f64 {
        match self {
            Instance::Linear(li) => match &li.noise {
                NoiseKind::GaussianIid => li.sigma,
                NoiseKind::GaussianCov { cov, .. } => cov
                    .diagonal()
                    .iter()
                    .fold(0.0f64, |acc, v| acc.max(*v))
                    .sqrt(),
            },
            Instance::FixedMeans(fi) => fi.sigma,
        }
    }

    /// Replaces the noise scale (independent-Gaussian instances only).
    pub fn set_sigma(&mut self, sigma: f64) -> Result<()> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::InvalidInstance(format!(
                "noise scale must be finite and nonnegative, got {sigma}"
            )));
        }
        match self {
            Instance::Linear(li) => match li.noise {
                NoiseKind::GaussianIid => li.sigma = sigma,
                NoiseKind::GaussianCov { .. } => {
                    return Err(Error::Config(
                        "cannot override the scale of covariance noise".into(),
                    ))
                }
            },
            Instance::FixedMeans(fi) => fi.sigma = sigma,
        }
        Ok(())
    }

    /// One observation of the given arm.
    pub fn sample(&self, arm: usize, rng: &mut RngStream) -> Result<DVector<f64>> {
        let total = self.sample_total(arm, 1, rng)?;
        Ok(total)
    }

    /// Sum of `count` independent observations of the given arm.
    ///
    /// Gaussian sums are Gaussian, so the sum is drawn in one shot as
    /// `count * mu + sqrt(count) * noise`; the law is exactly that of
    /// adding `count` individual samples, and the estimators downstream
    /// depend on the observations only through these per-arm sums.
    pub fn sample_total(&self, arm: usize, count: usize, rng: &mut RngStream) -> Result<DVector<f64>> {
        let means = self.mean_matrix();
        means.check_arm(arm)?;
        let d = means.objectives();
        if count == 0 {
            return Ok(DVector::zeros(d));
        }
        let scale = (count as f64).sqrt();
        let mut out = DVector::from_fn(d, |c, _| means.get(arm, c) * count as f64);
        match self {
            Instance::Linear(li) => match &li.noise {
                NoiseKind::GaussianIid => {
                    for c in 0..d {
                        out[c] += scale * li.sigma * rng.standard_normal();
                    }
                }
                NoiseKind::GaussianCov { chol, .. } => {
                    let z = DVector::from_fn(d, |_, _| rng.standard_normal());
                    let noise = chol * z;
                    out += scale * noise;
                }
            },
            Instance::FixedMeans(fi) => {
                for c in 0..d {
                    out[c] += scale * fi.sigma * rng.standard_normal();
                }
            }
        }
        Ok(out)
    }

    /// Forgets the feature structure: the same means and noise presented
    /// as a `K`-dimensional instance with canonical features, so arms
    /// share no information.
    pub fn unstructured(&self) -> Result<Instance> {
        let k = self.arm_count();
        let theta = self.mean_matrix().matrix().clone();
        let features = DMatrix::identity(k, k);
        let li = match self {
            Instance::Linear(inner) => LinearInstance::with_noise(
                features,
                theta,
                inner.sigma,
                inner.noise.clone(),
            )?,
            Instance::FixedMeans(inner) => {
                LinearInstance::new(features, theta, inner.sigma)?
            }
        };
        Ok(Instance::Linear(li))
    }
}

/// Builds a synthetic linear instance with `h` canonical-basis arms whose
/// means form a strictly concave descending front in two alternating
/// coordinate patterns, plus `k - h` simplex-mixture arms that are
/// strictly dominated by a clear margin.
///
/// The construction guarantees, and asserts, that:
/// - the optimal set is exactly the `h` basis arms;
/// - all gaps are positive, and the `h` smallest belong to the basis arms;
/// - the basis arms' sorted gaps are strictly increasing except for the
///   two arms sharing the overall minimum (any instance's minimum gap is
///   attained at least twice);
/// - adding mixture arms leaves every basis gap bit-for-bit unchanged.
///
/// Mixture candidates are rejected until their own gap clears the largest
/// basis gap by 5% and the basis gaps are untouched; if a padding slot
/// exhausts its attempts the construction reports the seed and fails.
/// With `h = 2` the front is a single segment with no interior pocket, so
/// only `k = 2` is constructible.
///
/// The default noise scale is 1; override it with [`Instance::set_sigma`].
pub fn make_synthetic_family(h: usize, d: usize, k: usize, seed: u64) -> Result<Instance> {
    if h < 2 {
        return Err(Error::Config(format!(
            "synthetic family needs at least 2 basis arms, got {h}"
        )));
    }
    if d < 2 {
        return Err(Error::Config(format!(
            "synthetic family needs at least 2 objectives, got {d}"
        )));
    }
    if k < h {
        return Err(Error::Config(format!(
            "synthetic family needs at least as many arms ({k}) as basis arms ({h})"
        )));
    }

    // Front geometry in two coordinates: arm j sits at (a_j, b_j), moving
    // right and down with per-step slopes that sweep a geometric ladder,
    // which bows the front and opens a pocket for dominated mixtures.
    // The sweep range trades pocket depth against the basis gaps: a wider
    // sweep digs a deeper pocket but squeezes the gaps. This range keeps
    // every basis gap of an h <= 8 family inside one halving band
    // (1/16, 1/8), so elimination runs resolve the whole front in the same
    // accuracy round regardless of K and the padding arms one band higher.
    let steps = h - 1;
    let mut slopes = vec![1.0f64; steps];
    if h > 2 {
        let (lo, hi) = (0.3f64, 10.0 / 3.0);
        for (idx, s) in slopes.iter_mut().enumerate() {
            *s = lo * (hi / lo).powf(idx as f64 / (steps - 1) as f64);
        }
    }
    // Gap ladder: step j contributes a pairwise margin of v_j, strictly
    // increasing so the sorted gaps are distinct above the forced minimum
    // pair. The increments stay small so the whole ladder fits one
    // halving band; wider spreads push the largest gap (and with it the
    // padding floor) past the pocket depth.
    let raw: Vec<(f64, f64)> = slopes
        .iter()
        .enumerate()
        .map(|(j, &s)| {
            let v = 1.0 + 0.01 * j as f64;
            (v / s.min(1.0), v * s.max(1.0))
        })
        .collect();
    let span_a: f64 = raw.iter().map(|(t, _)| t).sum();
    let span_b: f64 = raw.iter().map(|(_, u)| u).sum();
    let c = 0.8 / span_a.max(span_b);

    let mut a = vec![0.0f64; h];
    let mut b = vec![0.0f64; h];
    a[0] = 0.08;
    b[0] = 0.92;
    for j in 0..steps {
        a[j + 1] = a[j] + c * raw[j].0;
        b[j + 1] = b[j] - c * raw[j].1;
    }

    // Parameter rows are the basis arms' means: coordinate patterns (a, b)
    // repeat cyclically across the d objectives, which preserves every
    // pairwise margin of the two-coordinate design.
    let theta = DMatrix::from_fn(h, d, |j, col| if col % 2 == 0 { a[j] } else { b[j] });
    for v in theta.iter() {
        assert!(
            (0.0..=1.0).contains(v),
            "synthetic front left the unit box: {v}"
        );
    }

    let base_means = MeanMatrix::new(theta.clone())?;
    let base_profile = true_gaps(&base_means);
    let base_gaps: Vec<f64> = (0..h).map(|j| base_profile.gap(j)).collect();
    assert_eq!(
        base_profile.pareto_set(),
        (0..h).collect::<Vec<_>>(),
        "synthetic basis arms must all be optimal"
    );
    assert!(
        base_gaps.iter().all(|g| g.is_finite() && *g > 0.0),
        "synthetic basis gaps must be positive"
    );
    let mut sorted = base_gaps.clone();
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
    assert_eq!(
        sorted[0], sorted[1],
        "the minimum gap is shared by the first front pair"
    );
    for w in sorted[1..].windows(2) {
        assert!(w[0] < w[1], "basis gaps above the minimum must be distinct");
    }
    let max_base_gap = sorted[h - 1];

    let mut features = DMatrix::zeros(k, h);
    for j in 0..h {
        features[(j, j)] = 1.0;
    }

    let mut rng = RngStream::new(seed, CONSTRUCTION_STREAM);
    let mut candidate = DMatrix::zeros(h + 1, d);
    candidate.rows_mut(0, h).copy_from(&theta);
    for slot in h..k {
        let mut accepted = false;
        for _ in 0..PADDING_ATTEMPTS {
            let mut x = DVector::from_fn(h, |_, _| rng.uniform());
            let sum: f64 = x.iter().sum();
            if sum < 1e-12 {
                continue;
            }
            x /= sum;
            let mean = theta.transpose() * &x;
            candidate.row_mut(h).copy_from(&mean.transpose());

            let profile = true_gaps(&MeanMatrix::new(candidate.clone())?);
            if profile.is_pareto(h) || profile.gap(h) <= 1.05 * max_base_gap {
                continue;
            }
            // Exact invariance of the basis gaps; a candidate close enough
            // to the front to perturb any of them is rejected.
            if (0..h).any(|j| profile.gap(j).to_bits() != base_gaps[j].to_bits()) {
                continue;
            }
            features.row_mut(slot).copy_from(&x.transpose());
            accepted = true;
            break;
        }
        if !accepted {
            return Err(Error::PaddingExhausted {
                attempts: PADDING_ATTEMPTS,
                seed,
            });
        }
    }

    Ok(Instance::Linear(LinearInstance::new(features, theta, 1.0)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pareto::{complexities, true_gaps};
    use approx::assert_relative_eq;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = RngStream::new(42, 3);
        let mut b = RngStream::new(42, 3);
        let mut other_stream = RngStream::new(42, 4);
        let mut other_seed = RngStream::new(43, 3);
        let seq_a: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let seq_b: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        let seq_c: Vec<u64> = (0..16).map(|_| other_stream.next_u64()).collect();
        let seq_d: Vec<u64> = (0..16).map(|_| other_seed.next_u64()).collect();
        assert_eq!(seq_a, seq_b);
        assert_ne!(seq_a, seq_c);
        assert_ne!(seq_a, seq_d);
    }

    #[test]
    fn summed_samples_have_the_aggregate_law() {
        let means = MeanMatrix::from_rows(&[vec![0.5, -1.0]]).unwrap();
        let inst = Instance::FixedMeans(FixedMeansInstance::new(means, 2.0).unwrap());
        let mut rng = RngStream::new(7, 0);
        let count = 4usize;
        let reps = 200_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..reps {
            let total = inst.sample_total(0, count, &mut rng).unwrap();
            sum += total[0];
            sum_sq += total[0] * total[0];
        }
        let mean = sum / reps as f64;
        let var = sum_sq / reps as f64 - mean * mean;
        // Law of the sum: N(count * mu, count * sigma^2) = N(2, 16).
        assert_relative_eq!(mean, 2.0, epsilon = 0.05);
        assert_relative_eq!(var, 16.0, epsilon = 0.5);
    }

    #[test]
    fn covariance_noise_shapes_the_samples() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.8, 0.8, 1.0]);
        let noise = NoiseKind::gaussian_cov(cov).unwrap();
        let features = DMatrix::identity(1, 1);
        let theta = DMatrix::from_row_slice(1, 2, &[0.0, 0.0]);
        let inst =
            Instance::Linear(LinearInstance::with_noise(features, theta, 1.0, noise).unwrap());
        assert_relative_eq!(inst.sigma(), 1.0, epsilon = 1e-12);

        let mut rng = RngStream::new(11, 0);
        let reps = 200_000;
        let mut cross = 0.0;
        for _ in 0..reps {
            let y = inst.sample(0, &mut rng).unwrap();
            cross += y[0] * y[1];
        }
        assert_relative_eq!(cross / reps as f64, 0.8, epsilon = 0.02);
    }

    #[test]
    fn bad_covariances_are_rejected() {
        assert!(NoiseKind::gaussian_cov(DMatrix::from_row_slice(1, 2, &[1.0, 0.0])).is_err());
        assert!(
            NoiseKind::gaussian_cov(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.2, 1.0]))
                .is_err()
        );
        assert!(
            NoiseKind::gaussian_cov(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]))
                .is_err()
        );
    }

    #[test]
    fn synthetic_family_is_deterministic() {
        let one = make_synthetic_family(4, 2, 12, 99).unwrap();
        let two = make_synthetic_family(4, 2, 12, 99).unwrap();
        assert_eq!(one.features(), two.features());
        assert_eq!(one.mean_matrix().matrix(), two.mean_matrix().matrix());
        let three = make_synthetic_family(4, 2, 12, 100).unwrap();
        assert_ne!(one.features(), three.features());
    }

    #[test]
    fn synthetic_family_has_the_advertised_structure() {
        for (h, d, k) in [(3, 2, 6), (4, 3, 16), (6, 2, 24), (8, 4, 8)] {
            let inst = make_synthetic_family(h, d, k, 5).unwrap();
            assert_eq!(inst.arm_count(), k);
            assert_eq!(inst.ambient_dim(), h);
            assert_eq!(inst.objective_count(), d);

            let profile = true_gaps(inst.mean_matrix());
            assert_eq!(profile.pareto_set(), (0..h).collect::<Vec<_>>());
            let sorted = profile.sorted_gaps_indexed();
            assert!(sorted.iter().all(|(_, g)| *g > 0.0));
            // The h smallest gaps belong to the basis arms.
            for (arm, _) in &sorted[..h] {
                assert!(*arm < h, "basis arms must own the smallest gaps");
            }
            for (arm, _) in &sorted[h..] {
                assert!(*arm >= h, "mixture arms must sit above the basis gaps");
            }
            if k > h {
                assert!(sorted[h].1 > 1.05 * sorted[h - 1].1);
            }
        }
    }

    #[test]
    fn linear_complexity_is_invariant_to_padding() {
        let h = 5;
        let base = make_synthetic_family(h, 2, h, 17).unwrap();
        let c0 = complexities(&true_gaps(base.mean_matrix()), h).unwrap();
        for k in [2 * h, 4 * h, 8 * h] {
            let inst = make_synthetic_family(h, 2, k, 17).unwrap();
            let c = complexities(&true_gaps(inst.mean_matrix()), h).unwrap();
            assert_relative_eq!(c.h1_lin, c0.h1_lin, epsilon = 1e-9);
            assert_relative_eq!(c.h2_lin, c0.h2_lin, epsilon = 1e-9);
            assert!(c.h1 > c0.h1);
        }
    }

    #[test]
    fn two_basis_arms_cannot_be_padded() {
        assert!(make_synthetic_family(2, 2, 2, 1).is_ok());
        assert!(matches!(
            make_synthetic_family(2, 2, 3, 1),
            Err(Error::PaddingExhausted { .. })
        ));
    }

    #[test]
    fn unstructured_view_keeps_means_and_forgets_features() {
        let inst = make_synthetic_family(4, 2, 10, 3).unwrap();
        let flat = inst.unstructured().unwrap();
        assert_eq!(flat.ambient_dim(), 10);
        assert_eq!(flat.arm_count(), 10);
        assert_eq!(flat.features(), &DMatrix::identity(10, 10));
        assert_eq!(flat.mean_matrix().matrix(), inst.mean_matrix().matrix());
    }

    #[test]
    fn noiseless_samples_are_the_means() {
        let mut inst = make_synthetic_family(3, 2, 5, 2).unwrap();
        inst.set_sigma(0.0).unwrap();
        let mut rng = RngStream::new(0, 0);
        let total = inst.sample_total(2, 7, &mut rng).unwrap();
        for c in 0..2 {
            assert_relative_eq!(
                total[c],
                7.0 * inst.mean_matrix().get(2, c),
                epsilon = 1e-12
            );
        }
    }
}
