//! Instance files, experiment configuration, the replication runner, and
//! result emission.
//!
//! Instance files are UTF-8 CSVs with header `f1,...,fh,y1,...,yd`: one row
//! per arm, feature columns first, objective columns after. Results are
//! rows of the schema `stream_id,algorithm,K,h,d,param,total_samples,
//! rounds,correct,recommended,wall_ms`, where `recommended` joins 1-based
//! arm indices with `;`. A replication that fails an algorithm
//! precondition still yields a row: `correct` is empty, counters are zero,
//! and `recommended` carries the error message prefixed with `!`.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::algo::{gege_fixed_budget, gege_fixed_confidence, uniform_fixed_budget};
use crate::design::{subspace_basis, FeatureSet, DEFAULT_RANK_TOL};
use crate::env::{FixedMeansInstance, Instance, LinearInstance, RngStream};
use crate::error::{Error, Result};
use crate::pareto::{true_gaps, MeanMatrix};
use crate::regression::{info_matrix, ols_estimate, pseudo_inverse, PullLog};

/// How an instance file is turned into a sampling environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadMode {
    /// Fit coefficients to the objective columns by least squares; the
    /// instance means are the fitted predictions and keep the feature
    /// structure.
    Linearize,
    /// Take the objective columns as raw means with no feature structure
    /// (canonical-basis features).
    Raw,
}

/// Options for [`load_instance`].
#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub mode: LoadMode,
    /// Divide every feature column by its largest absolute value
    /// (all-zero columns are left alone).
    pub normalize: bool,
    /// Noise scale of the resulting environment.
    pub sigma: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            mode: LoadMode::Linearize,
            normalize: true,
            sigma: 1.0,
        }
    }
}

fn csv_error(err: csv::Error) -> Error {
    let line = err
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or_default();
    let message = err.to_string();
    match err.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        _ => Error::Parse { line, message },
    }
}

/// Reads an instance CSV (`f1..fh,y1..yd` header) into an environment.
///
/// Parse failures name the 1-based file line they occur on. A
/// rank-deficient feature matrix under [`LoadMode::Linearize`] prints a
/// warning to stderr and fits on the spanned subspace.
pub fn load_instance(path: &Path, options: &LoadOptions) -> Result<Instance> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_error)?;

    let header = reader.headers().map_err(csv_error)?.clone();
    let names: Vec<String> = header.iter().map(str::to_owned).collect();
    let h = names.iter().take_while(|n| n.starts_with('f')).count();
    let d = names.len() - h;
    if h == 0 || d == 0 {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "header must be f1..fh,y1..yd with at least one of each, found '{}'",
                names.join(",")
            ),
        });
    }
    for (i, name) in names.iter().enumerate() {
        let expect = if i < h {
            format!("f{}", i + 1)
        } else {
            format!("y{}", i - h + 1)
        };
        if *name != expect {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected column '{expect}', found '{name}'"),
            });
        }
    }

    let mut features: Vec<f64> = Vec::new();
    let mut objectives: Vec<f64> = Vec::new();
    let mut k = 0usize;
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or_default();
        for (j, cell) in record.iter().enumerate() {
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                message: format!("non-numeric cell '{cell}' in column '{}'", names[j]),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("non-finite cell in column '{}'", names[j]),
                });
            }
            if j < h {
                features.push(value);
            } else {
                objectives.push(value);
            }
        }
        k += 1;
    }
    if k == 0 {
        return Err(Error::Parse {
            line: 1,
            message: "file has a header but no data rows".into(),
        });
    }

    let mut x = DMatrix::from_row_slice(k, h, &features);
    let y = DMatrix::from_row_slice(k, d, &objectives);
    if options.normalize {
        for c in 0..h {
            let scale = x.column(c).iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if scale > 0.0 {
                for r in 0..k {
                    x[(r, c)] /= scale;
                }
            }
        }
    }

    match options.mode {
        LoadMode::Raw => Ok(Instance::FixedMeans(FixedMeansInstance::new(
            MeanMatrix::new(y)?,
            options.sigma,
        )?)),
        LoadMode::Linearize => {
            let ids: Vec<usize> = (0..k).collect();
            let fs = FeatureSet::new(x.clone(), ids.clone())?;
            let basis = subspace_basis(&fs, DEFAULT_RANK_TOL)?;
            if basis.dim() < h {
                eprintln!(
                    "warning: feature matrix spans only {} of {} dimensions; \
                     fitting on the spanned subspace",
                    basis.dim(),
                    h
                );
            }
            let log = PullLog::new(ids, x.clone(), y)?;
            let pinv = pseudo_inverse(&info_matrix(&log), &basis)?;
            let theta = ols_estimate(&log, &pinv)?;
            Ok(Instance::Linear(LinearInstance::new(
                x,
                theta,
                options.sigma,
            )?))
        }
    }
}

/// Reads only the feature columns of an instance CSV. The header must
/// start with `f1..fh`; any trailing `y` columns are ignored, so both
/// feature-only files and full instance files are accepted.
pub fn load_feature_columns(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_error)?;
    let header = reader.headers().map_err(csv_error)?.clone();
    let names: Vec<String> = header.iter().map(str::to_owned).collect();
    let h = names.iter().take_while(|n| n.starts_with('f')).count();
    if h == 0 {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "header must start with feature columns f1..fh, found '{}'",
                names.join(",")
            ),
        });
    }
    for (i, name) in names.iter().enumerate().take(h) {
        let expect = format!("f{}", i + 1);
        if *name != expect {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected column '{expect}', found '{name}'"),
            });
        }
    }

    let mut cells: Vec<f64> = Vec::new();
    let mut k = 0usize;
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or_default();
        for (j, cell) in record.iter().enumerate().take(h) {
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                message: format!("non-numeric cell '{cell}' in column '{}'", names[j]),
            })?;
            cells.push(value);
        }
        k += 1;
    }
    if k == 0 {
        return Err(Error::Parse {
            line: 1,
            message: "file has a header but no data rows".into(),
        });
    }
    Ok(DMatrix::from_row_slice(k, h, &cells))
}

/// Writes an instance in the `f1..fh,y1..yd` file format, with objective
/// columns holding the exact means.
pub fn write_instance_csv<W: Write>(instance: &Instance, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let h = instance.ambient_dim();
    let d = instance.objective_count();
    let mut header: Vec<String> = (1..=h).map(|i| format!("f{i}")).collect();
    header.extend((1..=d).map(|i| format!("y{i}")));
    w.write_record(&header).map_err(csv_error)?;

    let x = instance.features();
    let m = instance.mean_matrix();
    for arm in 0..instance.arm_count() {
        let mut row: Vec<String> = (0..h).map(|c| x[(arm, c)].to_string()).collect();
        row.extend((0..d).map(|c| m.get(arm, c).to_string()));
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Which sampler a benchmark batch runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    /// Design-based elimination on the instance as given.
    Gege,
    /// Even split of the budget over all arms.
    Uniform,
    /// Design-based elimination with the feature structure erased
    /// (canonical-basis features, so the subspace dimension equals the
    /// number of arms).
    GegeUnstructured,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Gege => "gege",
            Algorithm::Uniform => "uniform",
            Algorithm::GegeUnstructured => "gege_unstructured",
        }
    }
}

/// Stopping regime of a benchmark batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BenchMode {
    FixedBudget(usize),
    FixedConfidence { delta: f64 },
}

impl BenchMode {
    /// The `param` column: the budget or the risk level.
    fn param(&self) -> String {
        match self {
            BenchMode::FixedBudget(t) => t.to_string(),
            BenchMode::FixedConfidence { delta } => delta.to_string(),
        }
    }
}

/// One batch of seeded replications.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub mode: BenchMode,
    /// Relaxation for fixed-confidence runs; ignored in fixed budget.
    pub epsilon: f64,
    /// Replications, one per stream id `0..replications`.
    pub replications: usize,
    pub master_seed: u64,
    /// Worker threads; results are identical for any value.
    pub threads: usize,
}

/// One replication's outcome in the documented column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub stream_id: u64,
    pub algorithm: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub h: usize,
    pub d: usize,
    pub param: String,
    pub total_samples: u64,
    pub rounds: usize,
    /// 1 when the recommendation equals the exact Pareto set, 0 when not,
    /// empty when the replication errored.
    pub correct: Option<u8>,
    /// `;`-joined 1-based arm indices, or `!message` for an errored
    /// replication.
    pub recommended: String,
    pub wall_ms: u64,
}

fn join_one_based(arms: &[usize]) -> String {
    arms.iter()
        .map(|a| (a + 1).to_string())
        .collect::<Vec<_>>()
        .join(";")
}

fn run_one(
    instance: &Instance,
    config: &ExperimentConfig,
    truth: &[usize],
    dims: (usize, usize, usize),
    stream_id: u64,
) -> ResultRow {
    let mut rng = RngStream::new(config.master_seed, stream_id);
    let start = Instant::now();
    let outcome = match (config.algorithm, config.mode) {
        (Algorithm::Uniform, BenchMode::FixedBudget(t)) => {
            uniform_fixed_budget(instance, t, &mut rng)
        }
        (Algorithm::Uniform, BenchMode::FixedConfidence { .. }) => Err(Error::Config(
            "the uniform baseline runs in fixed-budget mode only".into(),
        )),
        (_, BenchMode::FixedBudget(t)) => gege_fixed_budget(instance, t, &mut rng),
        (_, BenchMode::FixedConfidence { delta }) => {
            gege_fixed_confidence(instance, delta, config.epsilon, &mut rng)
        }
    };
    let wall_ms = start.elapsed().as_millis() as u64;

    let (k, h, d) = dims;
    let mut row = ResultRow {
        stream_id,
        algorithm: config.algorithm.as_str().to_owned(),
        k,
        h,
        d,
        param: config.mode.param(),
        total_samples: 0,
        rounds: 0,
        correct: None,
        recommended: String::new(),
        wall_ms,
    };
    match outcome {
        Ok(run) => {
            row.total_samples = run.total_samples;
            row.rounds = run.rounds();
            row.correct = Some(u8::from(run.recommended == truth));
            row.recommended = join_one_based(&run.recommended);
        }
        Err(err) => {
            row.recommended = format!("!{err}");
        }
    }
    row
}

/// Runs `config.replications` seeded replications of one experiment over
/// `instance` and returns one row per replication, ordered by stream id.
///
/// Replication `i` draws from the RNG stream `i` of the master seed, so
/// the output does not depend on `threads`. Algorithm precondition
/// failures become error rows rather than aborting the batch.
pub fn run_benchmark(instance: &Instance, config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    if config.replications == 0 {
        return Err(Error::Config("need at least one replication".into()));
    }
    if config.threads == 0 {
        return Err(Error::Config("need at least one worker thread".into()));
    }
    if config.algorithm == Algorithm::Uniform
        && matches!(config.mode, BenchMode::FixedConfidence { .. })
    {
        return Err(Error::Config(
            "the uniform baseline runs in fixed-budget mode only".into(),
        ));
    }
    if !(config.epsilon.is_finite() && config.epsilon >= 0.0) {
        return Err(Error::Config(format!(
            "relaxation must be finite and nonnegative, got {}",
            config.epsilon
        )));
    }

    let truth = true_gaps(instance.mean_matrix()).pareto_set();
    let run_instance = match config.algorithm {
        Algorithm::GegeUnstructured => instance.unstructured()?,
        _ => instance.clone(),
    };
    let dims = (
        run_instance.arm_count(),
        run_instance.ambient_dim(),
        run_instance.objective_count(),
    );

    let reps = config.replications;
    let threads = config.threads.min(reps);
    let chunk = reps.div_ceil(threads);
    let mut rows: Vec<ResultRow> = Vec::with_capacity(reps);
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let lo = t * chunk;
                let hi = usize::min(lo + chunk, reps);
                let run_instance = &run_instance;
                let truth = &truth;
                scope.spawn(move || {
                    (lo..hi)
                        .map(|sid| run_one(run_instance, config, truth, dims, sid as u64))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for handle in handles {
            rows.extend(handle.join().expect("benchmark worker panicked"));
        }
    });
    Ok(rows)
}

/// Batch statistics over result rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    /// All rows seen, error rows included.
    pub rows: usize,
    /// Rows that carry no `correct` flag (errored replications).
    pub failures: usize,
    /// `1 - mean(correct)` over the non-errored rows.
    pub error_rate: f64,
    pub mean_samples: f64,
    pub median_samples: f64,
    pub p90_samples: f64,
    pub mean_rounds: f64,
}

/// Linear-interpolation percentile on ascending values: the rank is
/// `q (n-1)` and fractional ranks interpolate between neighbors, so
/// `p90` of (10, 20, 30) is 28.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = q * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

/// Aggregates one batch: error rate over decided rows, sample-complexity
/// and round statistics over the same rows. Errors when no row carries a
/// `correct` flag.
pub fn aggregate(rows: &[ResultRow]) -> Result<Summary> {
    let decided: Vec<&ResultRow> = rows.iter().filter(|r| r.correct.is_some()).collect();
    if decided.is_empty() {
        return Err(Error::Config(
            "cannot aggregate: no successful replications".into(),
        ));
    }
    let n = decided.len();
    let wrong = decided.iter().filter(|r| r.correct == Some(0)).count();
    let mut samples: Vec<f64> = decided.iter().map(|r| r.total_samples as f64).collect();
    samples.sort_by(|a, b| a.partial_cmp(b).expect("sample counts are finite"));
    let mean_samples = samples.iter().sum::<f64>() / n as f64;
    let mean_rounds = decided.iter().map(|r| r.rounds as f64).sum::<f64>() / n as f64;
    Ok(Summary {
        rows: rows.len(),
        failures: rows.len() - n,
        error_rate: wrong as f64 / n as f64,
        mean_samples,
        median_samples: percentile(&samples, 0.5),
        p90_samples: percentile(&samples, 0.9),
        mean_rounds,
    })
}

/// Writes rows as CSV in the documented column order, header included.
pub fn write_rows_csv<W: Write>(rows: &[ResultRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes rows as a pretty-printed JSON array.
pub fn write_rows_json<W: Write>(rows: &[ResultRow], mut writer: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut writer, rows)?;
    writer.write_all(b"\n")?;
    Ok(())
}

/// Reads rows back from the CSV format.
pub fn read_rows_csv<R: Read>(reader: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for record in r.deserialize() {
        rows.push(record.map_err(csv_error)?);
    }
    Ok(rows)
}
