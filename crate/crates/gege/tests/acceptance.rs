//! Scripted end-to-end checks over the whole pipeline.
//!
//! `acceptance_criteria` runs eleven numbered checks in sequence, prints one
//! PASS/FAIL line per check, and fails if any check failed. Workloads and
//! tolerances are pinned as constants below; every random input draws from a
//! fixed seed, so reruns are bit-identical.

use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;

use gege::algo::{gege_fixed_budget, gege_fixed_confidence, RunResult};
use gege::bench::{run_benchmark, Algorithm, BenchMode, ExperimentConfig, ResultRow};
use gege::design::{
    design_value, g_optimal_design, round_design, subspace_basis, Design, FeatureSet,
    DEFAULT_DESIGN_MAX_ITER, DEFAULT_DESIGN_TOL, DEFAULT_RANK_TOL,
};
use gege::env::{make_synthetic_family, Instance, LinearInstance, NoiseKind, RngStream};
use gege::pareto::{pairwise_margin, true_gaps, GapProfile, MeanMatrix};
use gege::regression::{ols_from_moments, pseudo_inverse};

/// One generated problem together with both noiseless runs on it.
struct NoiselessCase {
    instance: Instance,
    profile: GapProfile,
    confidence: RunResult,
    budget: RunResult,
}

struct Report {
    failures: Vec<String>,
}

impl Report {
    fn new() -> Self {
        Report {
            failures: Vec::new(),
        }
    }

    fn record(&mut self, id: usize, pass: bool, detail: String) {
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("criterion {id:2}: {verdict} ({detail})");
        if !pass {
            self.failures.push(format!("criterion {id}: {detail}"));
        }
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Draws an integer uniformly from `lo..=hi`.
fn pick(rng: &mut RngStream, lo: usize, hi: usize) -> usize {
    lo + (rng.uniform() * (hi - lo + 1) as f64) as usize
}

/// Random noiseless instance with K <= 20, h <= 6, d <= 4, all gaps
/// pairwise distinct and bounded away from zero. Means are rescaled into
/// [-0.45, 0.45] so every gap sits strictly below 1.
fn random_noiseless_instance(stream: u64) -> (Instance, GapProfile) {
    let mut rng = RngStream::new(0x0acc_0001, stream);
    for _ in 0..1_000 {
        let k = pick(&mut rng, 2, 20);
        let h = pick(&mut rng, 2, 6);
        let d = pick(&mut rng, 2, 4);
        let features = DMatrix::from_fn(k, h, |_, _| rng.standard_normal());
        let mut theta = DMatrix::from_fn(h, d, |_, _| rng.standard_normal());
        let peak = (&features * &theta)
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        if peak < 1e-9 {
            continue;
        }
        theta *= 0.45 / peak;
        let Ok(linear) = LinearInstance::new(features, theta, 0.0) else {
            continue;
        };
        let instance = Instance::Linear(linear);
        let profile = true_gaps(instance.mean_matrix());
        if profile.min_gap() < 5e-3 {
            continue;
        }
        // The smallest gap is always shared by the pair of arms attaining
        // it, so distinctness is required of every other adjacent pair.
        let mut sorted = profile.gaps().to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        if sorted.windows(2).skip(1).any(|w| w[1] - w[0] < 1e-9) {
            continue;
        }
        return (instance, profile);
    }
    panic!("no admissible random instance within 1000 draws on stream {stream}");
}

/// Random feature set of `size` rows spanning an `h_s`-dimensional space;
/// odd draws embed the span into a larger ambient space.
fn random_feature_set(rng: &mut RngStream, embed: bool) -> (DMatrix<f64>, usize) {
    loop {
        let h_s = pick(rng, 2, 8);
        let size = pick(rng, h_s, 64);
        let matrix = if embed {
            let span = DMatrix::from_fn(size, h_s, |_, _| rng.standard_normal());
            let lift = DMatrix::from_fn(h_s, h_s + 2, |_, _| rng.standard_normal());
            span * lift
        } else {
            DMatrix::from_fn(size, h_s, |_, _| rng.standard_normal())
        };
        let set = FeatureSet::new(matrix, (0..size).collect()).expect("feature set");
        let basis = subspace_basis(&set, DEFAULT_RANK_TOL).expect("basis");
        if basis.dim() != h_s {
            continue;
        }
        return (basis.transform(set.matrix()), h_s);
    }
}

/// Exact upper tail P[Bin(n, 1/2) >= k].
fn binomial_upper_tail_half(n: usize, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    let mut log_factorial = vec![0.0f64; n + 1];
    for i in 1..=n {
        log_factorial[i] = log_factorial[i - 1] + (i as f64).ln();
    }
    let ln_half_n = n as f64 * std::f64::consts::LN_2;
    (k..=n)
        .map(|j| (log_factorial[n] - log_factorial[j] - log_factorial[n - j] - ln_half_n).exp())
        .sum()
}

/// Rounds-to-accuracy bound `ceil(log2(1 / min_gap))` for a profile with
/// every gap strictly inside (0, 1).
fn round_bound(profile: &GapProfile) -> usize {
    (1.0 / profile.min_gap()).log2().ceil() as usize
}

/// Whether every active sub-optimal arm keeps an active dominator that
/// attains its full sub-optimality margin, at every recorded round.
fn dominators_stay_active(means: &MeanMatrix, profile: &GapProfile, run: &RunResult) -> bool {
    let k = means.arms();
    for state in &run.trace {
        for &i in &state.active {
            if profile.is_pareto(i) {
                continue;
            }
            let best = (0..k)
                .filter(|&j| j != i)
                .map(|j| pairwise_margin(means, i, j).expect("margin"))
                .fold(f64::NEG_INFINITY, f64::max);
            let covered = state
                .active
                .iter()
                .any(|&j| j != i && pairwise_margin(means, i, j).expect("margin") >= best - 1e-12);
            if !covered {
                return false;
            }
        }
    }
    true
}

fn error_rate(rows: &[ResultRow]) -> f64 {
    let wrong = rows.iter().filter(|r| r.correct != Some(1)).count();
    wrong as f64 / rows.len() as f64
}

fn mean_samples(rows: &[ResultRow]) -> f64 {
    rows.iter().map(|r| r.total_samples as f64).sum::<f64>() / rows.len() as f64
}

fn family_config(
    algorithm: Algorithm,
    mode: BenchMode,
    replications: usize,
    master_seed: u64,
) -> ExperimentConfig {
    ExperimentConfig {
        algorithm,
        mode,
        epsilon: 0.0,
        replications,
        master_seed,
        threads: 8,
    }
}

/// Strips the wall-clock column from a results CSV, keeping everything else.
fn drop_wall_ms(csv: &str) -> Vec<String> {
    csv.lines()
        .map(|line| line.rsplit_once(',').expect("csv column").0.to_string())
        .collect()
}

#[test]
fn acceptance_criteria() {
    let mut report = Report::new();

    // Criterion 1: noiseless exactness of both variants on 100 random
    // instances, and material for criteria 8 and 9.
    let started = Instant::now();
    let mut cases: Vec<NoiselessCase> = Vec::with_capacity(100);
    let mut exact = 0usize;
    for stream in 0..100u64 {
        let (instance, profile) = random_noiseless_instance(stream);
        let truth = profile.pareto_set();
        let confidence = gege_fixed_confidence(
            &instance,
            0.1,
            0.0,
            &mut RngStream::new(0x0acc_0002, 2 * stream),
        )
        .expect("fixed confidence run");
        let budget = gege_fixed_budget(
            &instance,
            900,
            &mut RngStream::new(0x0acc_0002, 2 * stream + 1),
        )
        .expect("fixed budget run");
        if confidence.recommended == truth && budget.recommended == truth {
            exact += 1;
        }
        cases.push(NoiselessCase {
            instance,
            profile,
            confidence,
            budget,
        });
    }
    let elapsed = started.elapsed();
    report.record(
        1,
        exact == 100 && elapsed < Duration::from_secs(10),
        format!("exact {exact}/100 in {:.2}s (limit 10s)", secs(elapsed)),
    );

    // Criterion 2: the design solver certifies the Kiefer-Wolfowitz value
    // h_S within 1e-3 on 50 random feature sets, re-evaluated independently
    // of the solver's own bookkeeping.
    let started = Instant::now();
    let mut design_rng = RngStream::new(0x0acc_0003, 0);
    let mut solved: Vec<(DMatrix<f64>, usize, Design)> = Vec::with_capacity(50);
    let mut worst_excess = f64::NEG_INFINITY;
    for trial in 0..50 {
        let (transformed, h_s) = random_feature_set(&mut design_rng, trial % 2 == 1);
        let design = g_optimal_design(&transformed, DEFAULT_DESIGN_TOL, DEFAULT_DESIGN_MAX_ITER)
            .expect("design convergence");
        let value = design_value(&design.weights, &transformed).expect("design value");
        worst_excess = worst_excess.max(value - h_s as f64);
        solved.push((transformed, h_s, design));
    }
    let elapsed = started.elapsed();
    report.record(
        2,
        worst_excess <= 1e-3 && elapsed < Duration::from_secs(30),
        format!(
            "worst excess {worst_excess:.2e} over 50 sets (limit 1e-3) in {:.2}s (limit 30s)",
            secs(elapsed)
        ),
    );

    // Criterion 3: integer rounding keeps the realized criterion below
    // (1 + 6 kappa) h_S / N on 50 triples built over the criterion-2 sets.
    let started = Instant::now();
    let mut round_rng = RngStream::new(0x0acc_0004, 0);
    let mut certified = 0usize;
    let mut worst_ratio = f64::NEG_INFINITY;
    for (transformed, h_s, design) in &solved {
        let kappa = 0.05 + round_rng.uniform() * (1.0 / 3.0 - 0.05);
        let floor = (5.0 * *h_s as f64 / (kappa * kappa)).ceil() as usize;
        let n = floor + (round_rng.uniform() * floor as f64 * 0.5) as usize;
        let allocation = round_design(design, transformed, n, kappa).expect("rounding");
        assert_eq!(allocation.total, n, "allocation must spend exactly n pulls");
        let achieved = design_value(&allocation.as_masses(), transformed).expect("counts value");
        let bound = (1.0 + 6.0 * kappa) * *h_s as f64 / n as f64;
        worst_ratio = worst_ratio.max(achieved / bound);
        if achieved <= bound {
            certified += 1;
        }
    }
    let elapsed = started.elapsed();
    report.record(
        3,
        certified == 50 && elapsed < Duration::from_secs(30),
        format!(
            "certified {certified}/50, worst achieved/bound {worst_ratio:.3} in {:.2}s (limit 30s)",
            secs(elapsed)
        ),
    );

    // Criterion 4: the least-squares estimator's per-arm covariance under
    // correlated noise matches its closed form within 10% entrywise over
    // 50000 replications of a fixed 20-pull allocation.
    let started = Instant::now();
    let features = DMatrix::from_row_slice(
        3,
        2,
        &[
            1.0,
            0.0,
            0.0,
            1.0,
            std::f64::consts::FRAC_1_SQRT_2,
            std::f64::consts::FRAC_1_SQRT_2,
        ],
    );
    let theta = DMatrix::from_row_slice(2, 2, &[0.2, -0.1, 0.4, 0.3]);
    let noise_cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
    let instance = Instance::Linear(
        LinearInstance::with_noise(
            features.clone(),
            theta,
            1.0,
            NoiseKind::gaussian_cov(noise_cov.clone()).expect("noise covariance"),
        )
        .expect("correlated instance"),
    );
    let counts = [8usize, 8, 4];
    let info = {
        let mut acc = DMatrix::zeros(2, 2);
        for (arm, &c) in counts.iter().enumerate() {
            let x = features.row(arm).transpose();
            acc += c as f64 * &x * x.transpose();
        }
        acc
    };
    let set = FeatureSet::new(features.clone(), vec![0, 1, 2]).expect("feature set");
    let basis = subspace_basis(&set, DEFAULT_RANK_TOL).expect("basis");
    let inverse = pseudo_inverse(&info, &basis).expect("information inverse");
    let replications = 50_000usize;
    let mut rng = RngStream::new(0x0acc_0005, 0);
    let mut mean_acc = vec![DMatrix::zeros(2, 1); 3];
    let mut square_acc = vec![DMatrix::zeros(2, 2); 3];
    for _ in 0..replications {
        let mut moments = DMatrix::zeros(2, 2);
        for (arm, &c) in counts.iter().enumerate() {
            let total = instance.sample_total(arm, c, &mut rng).expect("pulls");
            moments += features.row(arm).transpose() * total.transpose();
        }
        let estimate = ols_from_moments(&inverse, &moments).expect("least squares");
        for arm in 0..3 {
            let predicted = estimate.transpose() * features.row(arm).transpose();
            square_acc[arm] += &predicted * predicted.transpose();
            mean_acc[arm] += predicted;
        }
    }
    let mut worst_relative = 0.0f64;
    for arm in 0..3 {
        let mean = &mean_acc[arm] / replications as f64;
        let observed = &square_acc[arm] / replications as f64 - &mean * mean.transpose();
        let leverage = (features.row(arm) * &inverse * features.row(arm).transpose())[(0, 0)];
        let expected = leverage * &noise_cov;
        for r in 0..2 {
            for c in 0..2 {
                let relative = (observed[(r, c)] - expected[(r, c)]).abs() / expected[(r, c)].abs();
                worst_relative = worst_relative.max(relative);
            }
        }
    }
    let elapsed = started.elapsed();
    report.record(
        4,
        worst_relative <= 0.10 && elapsed < Duration::from_secs(60),
        format!(
            "worst entrywise relative error {:.3} over 3 arms (limit 0.10) in {:.2}s (limit 60s)",
            worst_relative,
            secs(elapsed)
        ),
    );

    // Criterion 5: risk-level correctness on the bundled synthetic family at
    // K = 20 over 200 replications; rows are reused by criterion 8.
    let started = Instant::now();
    let family_20 = make_synthetic_family(8, 2, 20, 1).expect("synthetic family K=20");
    let family_20_profile = true_gaps(family_20.mean_matrix());
    let confidence_rows = run_benchmark(
        &family_20,
        &family_config(
            Algorithm::Gege,
            BenchMode::FixedConfidence { delta: 0.1 },
            200,
            0x0acc_0006,
        ),
    )
    .expect("confidence benchmark");
    let observed_error = error_rate(&confidence_rows);
    let elapsed = started.elapsed();
    report.record(
        5,
        observed_error <= 0.12 && elapsed < Duration::from_secs(300),
        format!(
            "error rate {observed_error:.3} over 200 runs (limit 0.12) in {:.2}s (limit 5min)",
            secs(elapsed)
        ),
    );

    // Criterion 6: mean sample complexity grows by at most 1.5x from K = 16
    // to K = 128 with features, and by more than 3x with structure erased.
    let started = Instant::now();
    let mut structured_means = Vec::new();
    let mut unstructured_means = Vec::new();
    for k in [16usize, 64, 128] {
        let family = make_synthetic_family(8, 2, k, 1).expect("synthetic family");
        for (algorithm, sink) in [
            (Algorithm::Gege, &mut structured_means),
            (Algorithm::GegeUnstructured, &mut unstructured_means),
        ] {
            let rows = run_benchmark(
                &family,
                &family_config(
                    algorithm,
                    BenchMode::FixedConfidence { delta: 0.1 },
                    50,
                    0x0acc_0007,
                ),
            )
            .expect("scaling benchmark");
            assert!(
                rows.iter().all(|r| r.correct.is_some()),
                "errored replication in the scaling sweep"
            );
            sink.push((k, mean_samples(&rows)));
        }
    }
    let structured_ratio = structured_means[2].1 / structured_means[0].1;
    let unstructured_ratio = unstructured_means[2].1 / unstructured_means[0].1;
    let elapsed = started.elapsed();
    report.record(
        6,
        structured_ratio <= 1.5 && unstructured_ratio > 3.0 && elapsed < Duration::from_secs(900),
        format!(
            "K=128/K=16 mean-sample ratio {structured_ratio:.3} with features (limit 1.5), \
             {unstructured_ratio:.3} without (must exceed 3) in {:.2}s (limit 15min)",
            secs(elapsed)
        ),
    );

    // Criterion 7: fixed-budget runs beat the uniform baseline on the
    // K = 64 family at T = ceil(45 h log2 h), as a paired one-sided sign
    // test over 500 shared random streams.
    let started = Instant::now();
    let family_64 = make_synthetic_family(8, 2, 64, 3).expect("synthetic family K=64");
    let budget = (45.0 * 8.0 * 8f64.log2()).ceil() as usize;
    let paired = |algorithm: Algorithm| {
        run_benchmark(
            &family_64,
            &family_config(algorithm, BenchMode::FixedBudget(budget), 500, 0x0acc_0008),
        )
        .expect("paired benchmark")
    };
    let elimination_rows = paired(Algorithm::Gege);
    let uniform_rows = paired(Algorithm::Uniform);
    let mut wins = 0usize;
    let mut losses = 0usize;
    for (e, u) in elimination_rows.iter().zip(&uniform_rows) {
        assert_eq!(e.stream_id, u.stream_id, "pairing must share streams");
        match (e.correct == Some(1), u.correct == Some(1)) {
            (true, false) => wins += 1,
            (false, true) => losses += 1,
            _ => {}
        }
    }
    let p_value = binomial_upper_tail_half(wins + losses, wins);
    let elapsed = started.elapsed();
    report.record(
        7,
        p_value < 0.01 && elapsed < Duration::from_secs(600),
        format!(
            "budget {budget}: error {:.3} vs uniform {:.3}, discordant wins {wins} losses {losses}, \
             one-sided p {p_value:.3} (need < 0.01) in {:.2}s (limit 10min)",
            error_rate(&elimination_rows),
            error_rate(&uniform_rows),
            secs(elapsed)
        ),
    );

    // Criterion 8: the halving round bound ceil(log2(1/min gap)) holds on
    // every noiseless confidence run and on at least 85% of the noisy ones.
    let noiseless_within = cases
        .iter()
        .filter(|case| case.confidence.rounds() <= round_bound(&case.profile))
        .count();
    let noisy_bound = round_bound(&family_20_profile);
    let noisy_within = confidence_rows
        .iter()
        .filter(|row| row.rounds <= noisy_bound)
        .count();
    let noisy_fraction = noisy_within as f64 / confidence_rows.len() as f64;
    report.record(
        8,
        noiseless_within == 100 && noisy_fraction >= 0.85,
        format!(
            "noiseless within bound {noiseless_within}/100, noisy within bound \
             {noisy_fraction:.3} (need 0.85) at bound {noisy_bound}"
        ),
    );

    // Criterion 9: in every noiseless trace of both variants, each active
    // sub-optimal arm keeps an active dominator attaining its full margin.
    let covered = cases
        .iter()
        .filter(|case| {
            let means = case.instance.mean_matrix();
            dominators_stay_active(means, &case.profile, &case.confidence)
                && dominators_stay_active(means, &case.profile, &case.budget)
        })
        .count();
    report.record(9, covered == 100, format!("dominators active {covered}/100"));

    // Criterion 10: one single-threaded confidence run at K = 500, h = 8,
    // d = 8 finishes within 10 seconds.
    let family_500 = make_synthetic_family(8, 8, 500, 1).expect("synthetic family K=500");
    let family_500_front = true_gaps(family_500.mean_matrix()).pareto_set();
    let started = Instant::now();
    let run = gege_fixed_confidence(&family_500, 0.1, 0.0, &mut RngStream::new(0x0acc_0009, 0))
        .expect("large confidence run");
    let elapsed = started.elapsed();
    report.record(
        10,
        elapsed < Duration::from_secs(10),
        format!(
            "{:.2}s (limit 10s), {} rounds, {} samples, exact front {}",
            secs(elapsed),
            run.rounds(),
            run.total_samples,
            run.recommended == family_500_front
        ),
    );

    // Criterion 11: the benchmark binary emits identical rows for 1 and 8
    // worker threads once the wall-clock column is stripped.
    let bench_output = |threads: &str| {
        let output = Command::new(env!("CARGO_BIN_EXE_gege"))
            .args([
                "bench",
                "--synth",
                "6,2,24",
                "--budget",
                "4000",
                "--reps",
                "16",
                "--seed",
                "7",
                "--threads",
                threads,
                "--format",
                "csv",
            ])
            .output()
            .expect("bench invocation");
        assert!(
            output.status.success(),
            "bench failed: {}",
            String::from_utf8_lossy(&output.stderr)
        );
        String::from_utf8(output.stdout).expect("utf-8 csv")
    };
    let single = drop_wall_ms(&bench_output("1"));
    let pooled = drop_wall_ms(&bench_output("8"));
    report.record(
        11,
        single == pooled && single.len() == 17,
        format!(
            "rows with 1 thread match rows with 8 threads: {}",
            single == pooled
        ),
    );

    assert!(
        report.failures.is_empty(),
        "{} acceptance criteria failed:\n{}",
        report.failures.len(),
        report.failures.join("\n")
    );
}
