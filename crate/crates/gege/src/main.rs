//! Command-line surface: designs, gap reports, single runs, benchmarks,
//! and synthetic instance emission.
//!
//! Arm indices in CSV result files and in human-facing listings are
//! 1-based; JSON traces mirror the library structures and are 0-based.
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 algorithm
//! precondition error.

use std::fs::File;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gege::algo::{gege_fixed_budget, gege_fixed_confidence, RunResult};
use gege::bench::{
    aggregate, load_feature_columns, load_instance, run_benchmark, write_instance_csv,
    write_rows_csv, write_rows_json, Algorithm, BenchMode, ExperimentConfig, LoadMode,
    LoadOptions, ResultRow,
};
use gege::design::{
    g_optimal_design, round_design, subspace_basis, FeatureSet, DEFAULT_DESIGN_MAX_ITER,
    DEFAULT_DESIGN_TOL, DEFAULT_RANK_TOL,
};
use gege::env::{make_synthetic_family, Instance, RngStream};
use gege::pareto::{complexities, true_gaps};
use gege::Error;

#[derive(Parser)]
#[command(
    name = "gege",
    version,
    about = "Pareto set identification in multi-output linear bandits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a G-optimal design (and optionally an integer allocation)
    /// for a feature set; prints JSON to stdout.
    Design(DesignArgs),
    /// Print the gap profile and complexity measures of an instance as
    /// JSON (arm numbers 1-based).
    Gaps(InstanceArgs),
    /// One fixed-budget elimination run; prints the run trace as JSON.
    RunFb {
        #[command(flatten)]
        instance: InstanceArgs,
        /// Total pull budget.
        #[arg(long)]
        budget: usize,
    },
    /// One fixed-confidence elimination run; prints the run trace as JSON.
    RunFc {
        #[command(flatten)]
        instance: InstanceArgs,
        /// Risk level in (0, 1).
        #[arg(long)]
        delta: f64,
        /// Relaxation: stop refining once accuracy eps/4 is reached.
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
    },
    /// Seeded replications of an experiment; emits one result row per
    /// replication and prints per-batch summaries to stderr.
    Bench(BenchArgs),
    /// Generate a synthetic instance and emit it in the CSV file format.
    Synth {
        #[command(flatten)]
        instance: InstanceArgs,
        /// Output path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DesignArgs {
    /// CSV whose f-columns hold the feature rows (y-columns are ignored).
    #[arg(long)]
    features: PathBuf,
    /// Absolute tolerance on the G-criterion optimality certificate.
    #[arg(long, default_value_t = DEFAULT_DESIGN_TOL)]
    tol: f64,
    /// Iteration cap for the design optimizer.
    #[arg(long, default_value_t = DEFAULT_DESIGN_MAX_ITER)]
    max_iter: usize,
    /// Also round the design to this many integer pulls.
    #[arg(long)]
    round: Option<usize>,
    /// Rounding slack in (0, 1/3].
    #[arg(long, default_value_t = 1.0 / 3.0)]
    kappa: f64,
}

#[derive(Args)]
struct InstanceArgs {
    /// Instance CSV file with header f1..fh,y1..yd.
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Synthetic instance parameters as h,d,K (e.g. 8,2,20).
    #[arg(long, value_parser = parse_triple)]
    synth: Option<(usize, usize, usize)>,
    /// How to interpret an instance file.
    #[arg(long, value_enum, default_value_t = ModeArg::Linearize)]
    mode: ModeArg,
    /// Keep feature columns at their original scale.
    #[arg(long)]
    no_normalize: bool,
    /// Override the noise scale.
    #[arg(long)]
    sigma: Option<f64>,
    /// Master seed: seeds the synthetic generator and the run streams.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    /// Sampler to benchmark.
    #[arg(long, value_enum, default_value_t = AlgorithmArg::Gege)]
    algorithm: AlgorithmArg,
    /// Fixed-confidence risk level (chooses the fixed-confidence mode).
    #[arg(long)]
    delta: Option<f64>,
    /// Fixed pull budget (chooses the fixed-budget mode).
    #[arg(long)]
    budget: Option<usize>,
    /// Relaxation for fixed-confidence runs.
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    /// Replications per batch, one RNG stream each.
    #[arg(long, default_value_t = 1)]
    reps: usize,
    /// Worker threads; the output is identical for any value.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Sweep over arm counts (synthetic instances only), e.g. 16,64,128.
    #[arg(long, value_delimiter = ',')]
    sweep_k: Vec<usize>,
    /// Sweep over budgets in fixed-budget mode, e.g. 500,1000,2000.
    #[arg(long, value_delimiter = ',')]
    sweep_budget: Vec<usize>,
    /// Output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format.
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Linearize,
    Raw,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AlgorithmArg {
    Gege,
    Uniform,
    GegeUnstructured,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

fn parse_triple(s: &str) -> Result<(usize, usize, usize), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected h,d,K (three comma-separated integers), got '{s}'"));
    }
    let mut nums = [0usize; 3];
    for (slot, part) in nums.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| format!("'{part}' is not a positive integer"))?;
    }
    Ok((nums[0], nums[1], nums[2]))
}

/// CLI failures split into usage errors (exit 1) and library errors
/// (exit 2 or 3 by class).
enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        Failure::Lib(err)
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure::Usage(message.into())
}

impl InstanceArgs {
    fn load(&self) -> Result<Instance, Failure> {
        let mut inst = match (&self.instance, self.synth) {
            (Some(_), Some(_)) => {
                return Err(usage("--instance and --synth are mutually exclusive"))
            }
            (None, None) => return Err(usage("one of --instance or --synth is required")),
            (Some(path), None) => {
                let options = LoadOptions {
                    mode: match self.mode {
                        ModeArg::Linearize => LoadMode::Linearize,
                        ModeArg::Raw => LoadMode::Raw,
                    },
                    normalize: !self.no_normalize,
                    sigma: self.sigma.unwrap_or(1.0),
                };
                load_instance(path, &options)?
            }
            (None, Some((h, d, k))) => make_synthetic_family(h, d, k, self.seed)?,
        };
        if let Some(sigma) = self.sigma {
            inst.set_sigma(sigma)?;
        }
        Ok(inst)
    }
}

fn write_json_stdout<T: Serialize>(value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{text}").map_err(Error::from)?;
    Ok(())
}

#[derive(Serialize)]
struct DesignReport {
    weights: Vec<f64>,
    value: f64,
    h_s: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    counts: Option<Vec<usize>>,
}

fn cmd_design(args: &DesignArgs) -> Result<(), Failure> {
    let features = load_feature_columns(&args.features)?;
    let ids: Vec<usize> = (0..features.nrows()).collect();
    let fs = FeatureSet::new(features, ids)?;
    let basis = subspace_basis(&fs, DEFAULT_RANK_TOL)?;
    let transformed = basis.transform(fs.matrix());
    let design = g_optimal_design(&transformed, args.tol, args.max_iter)?;
    let counts = match args.round {
        Some(n) => Some(round_design(&design, &transformed, n, args.kappa)?.counts),
        None => None,
    };
    write_json_stdout(&DesignReport {
        value: design.value,
        weights: design.weights,
        h_s: basis.dim(),
        counts,
    })
}

#[derive(Serialize)]
struct ArmReport {
    /// 1-based arm number.
    arm: usize,
    pareto: bool,
    gap: f64,
}

#[derive(Serialize)]
struct GapsReport {
    arms: Vec<ArmReport>,
    pareto: Vec<usize>,
    rank: usize,
    h1: f64,
    h2: f64,
    h1_lin: f64,
    h2_lin: f64,
}

fn cmd_gaps(args: &InstanceArgs) -> Result<(), Failure> {
    let inst = args.load()?;
    let profile = true_gaps(inst.mean_matrix());
    let ids: Vec<usize> = (0..inst.arm_count()).collect();
    let fs = FeatureSet::from_rows(inst.features(), &ids)?;
    let rank = subspace_basis(&fs, DEFAULT_RANK_TOL)?.dim();
    let measures = complexities(&profile, rank)?;
    write_json_stdout(&GapsReport {
        arms: (0..inst.arm_count())
            .map(|i| ArmReport {
                arm: i + 1,
                pareto: profile.is_pareto(i),
                gap: profile.gap(i),
            })
            .collect(),
        pareto: profile.pareto_set().iter().map(|a| a + 1).collect(),
        rank,
        h1: measures.h1,
        h2: measures.h2,
        h1_lin: measures.h1_lin,
        h2_lin: measures.h2_lin,
    })
}

fn finish_run(inst: &Instance, mut run: RunResult) -> Result<(), Failure> {
    let truth = true_gaps(inst.mean_matrix()).pareto_set();
    run.correct = Some(run.recommended == truth);
    write_json_stdout(&run)
}

fn cmd_bench(args: &BenchArgs) -> Result<(), Failure> {
    let mode_flags =
        usize::from(args.delta.is_some()) + usize::from(args.budget.is_some() || !args.sweep_budget.is_empty());
    if mode_flags != 1 {
        return Err(usage(
            "choose exactly one stopping rule: --delta, --budget, or --sweep-budget",
        ));
    }
    if args.budget.is_some() && !args.sweep_budget.is_empty() {
        return Err(usage("--budget and --sweep-budget are mutually exclusive"));
    }
    if !args.sweep_k.is_empty() && args.instance.synth.is_none() {
        return Err(usage("--sweep-k needs a synthetic instance (--synth h,d,K)"));
    }
    if !args.sweep_k.is_empty() && !args.sweep_budget.is_empty() {
        return Err(usage("--sweep-k and --sweep-budget are mutually exclusive"));
    }

    let algorithm = match args.algorithm {
        AlgorithmArg::Gege => Algorithm::Gege,
        AlgorithmArg::Uniform => Algorithm::Uniform,
        AlgorithmArg::GegeUnstructured => Algorithm::GegeUnstructured,
    };

    // Each batch is one (instance, mode) pair; sweeps expand to batches.
    let mut batches: Vec<(Instance, BenchMode)> = Vec::new();
    let modes: Vec<BenchMode> = if let Some(delta) = args.delta {
        vec![BenchMode::FixedConfidence { delta }]
    } else if let Some(budget) = args.budget {
        vec![BenchMode::FixedBudget(budget)]
    } else {
        args.sweep_budget
            .iter()
            .map(|&t| BenchMode::FixedBudget(t))
            .collect()
    };
    if args.sweep_k.is_empty() {
        let inst = args.instance.load()?;
        for mode in modes {
            batches.push((inst.clone(), mode));
        }
    } else {
        let (h, d, _) = args.instance.synth.expect("checked above");
        let mode = modes[0];
        for &k in &args.sweep_k {
            let mut inst = make_synthetic_family(h, d, k, args.instance.seed)?;
            if let Some(sigma) = args.instance.sigma {
                inst.set_sigma(sigma)?;
            }
            batches.push((inst, mode));
        }
    }

    let mut rows: Vec<ResultRow> = Vec::new();
    for (inst, mode) in &batches {
        let config = ExperimentConfig {
            algorithm,
            mode: *mode,
            epsilon: args.epsilon,
            replications: args.reps,
            master_seed: args.instance.seed,
            threads: args.threads,
        };
        let batch_rows = run_benchmark(inst, &config)?;
        match aggregate(&batch_rows) {
            Ok(s) => eprintln!(
                "batch K={} param={}: rows={} failures={} error_rate={:.4} \
                 samples mean={:.1} median={:.1} p90={:.1} rounds mean={:.2}",
                inst.arm_count(),
                batch_rows[0].param,
                s.rows,
                s.failures,
                s.error_rate,
                s.mean_samples,
                s.median_samples,
                s.p90_samples,
                s.mean_rounds,
            ),
            Err(_) => eprintln!(
                "batch K={}: no successful replications",
                inst.arm_count()
            ),
        }
        rows.extend(batch_rows);
    }

    match &args.out {
        Some(path) => {
            let file = File::create(path).map_err(Error::from)?;
            emit_rows(&rows, file, args.format)?;
        }
        None => {
            let stdout = std::io::stdout().lock();
            emit_rows(&rows, stdout, args.format)?;
        }
    }
    Ok(())
}

fn emit_rows<W: Write>(rows: &[ResultRow], writer: W, format: FormatArg) -> Result<(), Failure> {
    match format {
        FormatArg::Csv => write_rows_csv(rows, writer)?,
        FormatArg::Json => write_rows_json(rows, writer)?,
    }
    Ok(())
}

fn cmd_synth(args: &InstanceArgs, out: &Option<PathBuf>) -> Result<(), Failure> {
    if args.synth.is_none() {
        return Err(usage("synth needs --synth h,d,K"));
    }
    if args.instance.is_some() {
        return Err(usage("synth generates instances; --instance does not apply"));
    }
    let inst = args.load()?;
    match out {
        Some(path) => {
            let file = File::create(path).map_err(Error::from)?;
            write_instance_csv(&inst, file)?;
        }
        None => {
            let stdout = std::io::stdout().lock();
            write_instance_csv(&inst, stdout)?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Design(args) => cmd_design(args),
        Command::Gaps(args) => cmd_gaps(args),
        Command::RunFb { instance, budget } => {
            let inst = instance.load()?;
            let mut rng = RngStream::new(instance.seed, 0);
            let run = gege_fixed_budget(&inst, *budget, &mut rng)?;
            finish_run(&inst, run)
        }
        Command::RunFc {
            instance,
            delta,
            epsilon,
        } => {
            let inst = instance.load()?;
            let mut rng = RngStream::new(instance.seed, 0);
            let run = gege_fixed_confidence(&inst, *delta, *epsilon, &mut rng)?;
            finish_run(&inst, run)
        }
        Command::Bench(args) => cmd_bench(args),
        Command::Synth { instance, out } => cmd_synth(instance, out),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp
                | clap::error::ErrorKind::DisplayVersion
                | clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 0,
                _ => 1,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    if let Err(failure) = run(cli) {
        match failure {
            Failure::Usage(message) => {
                eprintln!("usage error: {message}");
                std::process::exit(1);
            }
            Failure::Lib(err) => {
                // A reader that stops consuming stdout (e.g. piping into
                // head) is not an error worth reporting.
                if let Error::Io(io) = &err {
                    if io.kind() == std::io::ErrorKind::BrokenPipe {
                        std::process::exit(0);
                    }
                }
                eprintln!("error: {err}");
                std::process::exit(err.exit_code());
            }
        }
    }
}
