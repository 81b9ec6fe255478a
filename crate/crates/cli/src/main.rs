//! `amplab`: run window scans, spectral checks and studies from the command line.
//!
//! Exit codes: 0 success, 1 verdict failure, 2 usage or configuration error,
//! 3 numerical failure. The output directory defaults to `$AMPLAB_OUT_DIR`,
//! then `amplab-out`.

/// `println!` that ignores a closed stdout (for example `amplab … | head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use amplab::harness::{
    emit_report, load_record, run_batch, run_cached, write_rows, ExpansionSource, ExpansionSpec, Experiment, ExperimentSpec, InputSpec,
    OperatorSpec, Overrides, Reference, ReportFormat, RunRecord, RunStore, ThresholdCell, ThresholdSpec, TimeLadder, WindowScanSpec,
    SmoothingSpec,
};
use amplab::operators::{read_triplets, write_triplets, GridOperator};
use amplab::resolvent::{OffsetLadder, Side, WindowMode};
use amplab::semigroup::{NormMode, SigmaRule};
use amplab::spectral::{assumption_from_report, mesh_robust_domination};
use amplab::{ConeTolerance, LabError, SolverConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "amplab", version, about = "Maximum and anti-maximum principle experiments on discretized operators")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (JSON); flags below override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for run records, reports and operator files.
    #[arg(long, global = true, env = "AMPLAB_OUT_DIR", default_value = "amplab-out")]
    out: PathBuf,
    /// Random seed for generated inputs and matrices.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Mesh sizes, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    mesh: Option<Vec<usize>>,
    /// Exponents p, comma separated.
    #[arg(long = "p", global = true, value_delimiter = ',')]
    p: Option<Vec<f64>>,
    /// Relative cone tolerance.
    #[arg(long, global = true)]
    tol_rel: Option<f64>,
    /// Largest side handled with dense linear algebra.
    #[arg(long, global = true)]
    dense_cap: Option<usize>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Recompute even when a record for the same spec exists.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble an operator and write it as a sparse-triplet file.
    BuildOp {
        #[command(flatten)]
        op: OpArg,
    },
    /// Leading eigenpair and spectral assumption on each mesh.
    SpectralCheck {
        #[command(flatten)]
        op: OpArg,
        /// Read the operator from a sparse-triplet file instead.
        #[arg(long, conflicts_with = "op")]
        triplets: Option<PathBuf>,
    },
    /// Scan resolvent windows on one side of the leading eigenvalue.
    ScanWindow {
        #[command(flatten)]
        op: OpArg,
        /// Which side of λ₀ to scan.
        #[arg(long, value_enum, default_value = "left")]
        side: SideArg,
        /// Plain or strong anti-maximum test.
        #[arg(long, value_enum, default_value = "plain")]
        mode: ModeArg,
        /// Family of random inputs f.
        #[arg(long, value_enum, default_value = "squared-gaussian")]
        inputs: InputArg,
        /// Number of random inputs.
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Reference function u of the cone test.
        #[arg(long, value_enum, default_value = "ones")]
        reference: RefArg,
        /// Ratio between successive ladder offsets.
        #[arg(long, default_value_t = 2.0)]
        ratio: f64,
        /// Number of ladder offsets.
        #[arg(long, default_value_t = 20)]
        rungs: usize,
        /// Expect empty windows (for negative controls).
        #[arg(long)]
        expect_empty: bool,
    },
    /// Verify the resolvent expansion formula.
    ExpansionCheck {
        /// Operator to test; random dense matrices when absent.
        #[arg(long)]
        op: Option<String>,
        /// Number of random matrices.
        #[arg(long, default_value_t = 20)]
        random: usize,
        /// Largest side of the random matrices.
        #[arg(long, default_value_t = 50)]
        max_side: usize,
        /// Expansion orders m, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        orders: Vec<usize>,
        /// Largest accepted relative residual.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Fit ‖e^{tA}‖_{p→∞} ≈ c t^{-q} over a geometric time ladder.
    SmoothingFit {
        #[command(flatten)]
        op: OpArg,
        /// First time of the ladder.
        #[arg(long, default_value_t = 1e-3)]
        t_min: f64,
        /// Ratio between successive times.
        #[arg(long, default_value_t = 2.0)]
        ratio: f64,
        /// Number of times.
        #[arg(long, default_value_t = 7)]
        count: usize,
        /// Expected range of q, as lo,hi.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        q_range: Option<Vec<f64>>,
    },
    /// Growth of ‖Res(σ)^n‖_{p→∞} under mesh refinement.
    DominationIndex {
        #[command(flatten)]
        op: OpArg,
        /// How ‖Res(σ)^n‖_{p→∞} is estimated.
        #[arg(long, value_enum, default_value = "auto")]
        norm: NormArg,
        /// Smallest bump radius, in mesh widths.
        #[arg(long, default_value_t = 0.5)]
        w_min_h: f64,
        /// Largest bump radius.
        #[arg(long, default_value_t = 0.25)]
        w_max: f64,
        /// Highest resolvent power n.
        #[arg(long, default_value_t = 1)]
        n_max: u32,
        /// Fixed probe point σ instead of λ₀ + max(1, |λ₀|).
        #[arg(long, allow_negative_numbers = true)]
        sigma: Option<f64>,
        /// Also scan anti-maximum windows on the finest mesh.
        #[arg(long)]
        window: bool,
    },
    /// Run the experiment(s) in a config file: one spec or an array of specs.
    Run {
        /// Config path (same as --config).
        path: Option<PathBuf>,
    },
    /// Write the report files of a stored run record.
    Report {
        /// Record path, run directory or spec hash.
        record: String,
        /// Report tables or a copy of the run record.
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
    },
}

#[derive(Args)]
struct OpArg {
    /// Operator: rank_one, dirichlet:D, neumann:D, robin:D:BETA, dtn:D, coupled:D:N, power:K:<base> or JSON.
    #[arg(long)]
    op: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    Left,
    Right,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Plain,
    Strong,
}

#[derive(Clone, Copy, ValueEnum)]
enum InputArg {
    SquaredGaussian,
    PointBumps,
    Mixed,
    Constant,
}

#[derive(Clone, Copy, ValueEnum)]
enum RefArg {
    Ones,
    Eigenvector,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    Auto,
    Exact,
    Bumps,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    RunRecord,
}

/// Ways a command can fail, in exit-code order.
enum Failure {
    Verdict,
    Usage(String),
    Numerical(String),
}

impl From<LabError> for Failure {
    fn from(e: LabError) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

type Outcome = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

impl Global {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            mesh: self.mesh.clone(),
            p: self.p.clone(),
            tol_rel: self.tol_rel,
            dense_cap: self.dense_cap,
        }
    }

    fn solver(&self) -> SolverConfig {
        let mut cfg = SolverConfig::default();
        if let Some(cap) = self.dense_cap {
            cfg.dense_cap = cap;
            cfg.eig_dense_cap = cap;
        }
        cfg
    }

    fn meshes(&self, default: &[usize]) -> Vec<usize> {
        self.mesh.clone().unwrap_or_else(|| default.to_vec())
    }

    fn store(&self) -> RunStore {
        RunStore::new(&self.out)
    }
}

fn read_specs(path: &Path) -> Result<Vec<ExperimentSpec>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let items = match value {
        serde_json::Value::Array(items) => items,
        single => vec![single],
    };
    items
        .into_iter()
        .map(|v| ExperimentSpec::from_json(&v.to_string()).map_err(Failure::from))
        .collect()
}

/// The spec of a single-experiment subcommand: from `--config` when given (its
/// kind must be `kind`), otherwise from `build`.
fn single_spec(g: &Global, kind: &str, build: impl FnOnce() -> Result<Experiment, Failure>) -> Result<ExperimentSpec, Failure> {
    let mut spec = match &g.config {
        Some(path) => {
            let mut specs = read_specs(path)?;
            if specs.len() != 1 {
                return Err(usage(format!("{} holds {} specs; use `amplab run` for batches", path.display(), specs.len())));
            }
            let spec = specs.remove(0);
            if spec.experiment.kind() != kind {
                return Err(usage(format!("{} is a {} config, expected {kind}", path.display(), spec.experiment.kind())));
            }
            spec
        }
        None => {
            let mut spec = ExperimentSpec::new(0, build()?);
            spec.solver = g.solver();
            spec
        }
    };
    spec.apply(&g.overrides())?;
    spec.validate()?;
    Ok(spec)
}

fn operator(op: &OpArg) -> Result<OperatorSpec, Failure> {
    let text = op.op.as_deref().ok_or_else(|| usage("--op is required without --config"))?;
    Ok(text.parse()?)
}

fn print_record(rec: &RunRecord, cached: bool, store: &RunStore) {
    let name = rec.spec.name.as_deref().unwrap_or(rec.spec.experiment.kind());
    say!(
        "{name}: {} ({}, {:.2} s)",
        if rec.passed() { "PASS" } else { "FAIL" },
        if cached { "cached" } else { "computed" },
        rec.wall_clock_s
    );
    for v in &rec.verdicts {
        say!("  {:<24} {}  {}", v.name, if v.passed { "pass" } else { "FAIL" }, v.detail);
    }
    say!("  record: {}", store.record_path(&rec.spec_hash).display());
}

fn execute(g: &Global, spec: &ExperimentSpec) -> Outcome {
    let store = g.store();
    let (rec, cached) = run_cached(&store, spec, g.force)?;
    emit_report(&rec, ReportFormat::Csv, &store.run_dir(&rec.spec_hash))?;
    print_record(&rec, cached, &store);
    if rec.passed() {
        Ok(())
    } else {
        Err(Failure::Verdict)
    }
}

fn slug(text: &str) -> String {
    text.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' }).collect()
}

fn build_op(g: &Global, op: &OpArg) -> Outcome {
    let spec = operator(op)?;
    let dir = g.out.join("operators");
    fs::create_dir_all(&dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    for n in g.meshes(&[32]) {
        let built = spec.build(n)?;
        let path = dir.join(format!("{}_n{n}.triplets", slug(op.op.as_deref().unwrap_or("op"))));
        let file = fs::File::create(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        write_triplets(&built, std::io::BufWriter::new(file))?;
        say!("n={n}: side {} nnz {} -> {}", built.side(), built.matrix().nnz(), path.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct SpectralRow {
    mesh: usize,
    lambda0: f64,
    gap: f64,
    multiplicity: usize,
    c_dom: f64,
    phi_min: f64,
    assumption: bool,
}

fn spectral_check(g: &Global, op: &OpArg, triplets: Option<&Path>) -> Outcome {
    let cfg = g.solver();
    let tol = ConeTolerance::relative(g.tol_rel.unwrap_or(1e-10))?;
    let mut cases: Vec<(usize, GridOperator)> = Vec::new();
    let spec = match triplets {
        Some(path) => {
            let file = fs::File::open(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            let built = read_triplets(BufReader::new(file))?;
            cases.push((built.side(), built));
            None
        }
        None => {
            let spec = operator(op)?;
            for n in g.meshes(&[25, 50, 100]) {
                cases.push((n, spec.build(n)?));
            }
            Some(spec)
        }
    };
    let mut rows = Vec::new();
    for (mesh, built) in &cases {
        let report = amplab::leading_eigenpair(built, &cfg)?;
        let verdict = assumption_from_report(&report, &built.space().ones(), &tol)?;
        say!(
            "n={mesh}: λ₀ = {:.12e}, gap {:.4e}, c_dom {:.4e}, φ_min {:.4e}, simple {}, assumption {}",
            report.lambda0,
            report.gap,
            report.c_dom,
            report.phi_min,
            verdict.simple,
            if verdict.overall { "holds" } else { "FAILS" }
        );
        rows.push(SpectralRow {
            mesh: *mesh,
            lambda0: report.lambda0,
            gap: report.gap,
            multiplicity: report.multiplicity,
            c_dom: report.c_dom,
            phi_min: report.phi_min,
            assumption: verdict.overall,
        });
    }
    if let Some(spec) = spec.filter(|_| cases.len() >= 3) {
        let meshes: Vec<usize> = cases.iter().map(|c| c.0).collect();
        let fit = mesh_robust_domination(|n| spec.build(n), &meshes, |s| s.ones(), &cfg)?;
        say!("c_dom ~ h^α with α = {:.4} (residual {:.2e})", fit.alpha, fit.alpha_residual);
    }
    fs::create_dir_all(&g.out).map_err(|e| usage(format!("{}: {e}", g.out.display())))?;
    let path = g.out.join("spectral.csv");
    write_rows(&path, &["mesh", "lambda0", "gap", "multiplicity", "c_dom", "phi_min", "assumption"], &rows)?;
    say!("table: {}", path.display());
    if rows.iter().all(|r| r.assumption) {
        Ok(())
    } else {
        Err(Failure::Verdict)
    }
}

fn run_configs(g: &Global, path: Option<&Path>) -> Outcome {
    let path = path.or(g.config.as_deref()).ok_or_else(|| usage("run needs a config file"))?;
    let mut specs = read_specs(path)?;
    for s in &mut specs {
        s.apply(&g.overrides())?;
        s.validate()?;
    }
    let store = g.store();
    let cached: Vec<bool> = specs.iter().map(|s| !g.force && store.record_path(&s.hash()).is_file()).collect();
    let jobs = g.jobs.unwrap_or_else(rayon::current_num_threads);
    let results = run_batch(&store, &specs, jobs, g.force)?;
    let (mut verdict_failed, mut numerical) = (false, None);
    for ((spec, res), cached) in specs.iter().zip(results).zip(cached) {
        match res {
            Ok(rec) => {
                emit_report(&rec, ReportFormat::Csv, &store.run_dir(&rec.spec_hash))?;
                print_record(&rec, cached, &store);
                verdict_failed |= !rec.passed();
            }
            Err(e) => {
                let name = spec.name.as_deref().unwrap_or(spec.experiment.kind());
                eprintln!("{name}: error: {e}");
                match Failure::from(e) {
                    Failure::Usage(m) => return Err(Failure::Usage(m)),
                    f => numerical = numerical.or(Some(f)),
                }
            }
        }
    }
    match numerical {
        Some(f) => Err(f),
        None if verdict_failed => Err(Failure::Verdict),
        None => Ok(()),
    }
}

fn report(g: &Global, record: &str, format: FormatArg) -> Outcome {
    let store = g.store();
    let candidate = PathBuf::from(record);
    let path = if candidate.is_file() {
        candidate
    } else if candidate.is_dir() {
        candidate.join("record.json")
    } else {
        store.record_path(record)
    };
    if !path.is_file() {
        return Err(usage(format!("no run record at {}", path.display())));
    }
    let rec = load_record(&path)?;
    let format = match format {
        FormatArg::Csv => ReportFormat::Csv,
        FormatArg::RunRecord => ReportFormat::RunRecord,
    };
    let dir = g.out.join("reports").join(&rec.spec_hash);
    for file in emit_report(&rec, format, &dir)? {
        say!("{}", file.display());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Outcome {
    let g = &cli.global;
    match &cli.command {
        Command::BuildOp { op } => build_op(g, op),
        Command::SpectralCheck { op, triplets } => spectral_check(g, op, triplets.as_deref()),
        Command::ScanWindow {
            op,
            side,
            mode,
            inputs,
            count,
            reference,
            ratio,
            rungs,
            expect_empty,
        } => {
            let spec = single_spec(g, "window_scan", || {
                Ok(Experiment::WindowScan(WindowScanSpec {
                    operator: operator(op)?,
                    mesh: g.meshes(&[64])[0],
                    inputs: match inputs {
                        InputArg::SquaredGaussian => InputSpec::SquaredGaussian { count: *count },
                        InputArg::PointBumps => InputSpec::PointBumps { count: *count },
                        InputArg::Mixed => InputSpec::Mixed { count: *count },
                        InputArg::Constant => InputSpec::Constant,
                    },
                    side: match side {
                        SideArg::Left => Side::Left,
                        SideArg::Right => Side::Right,
                    },
                    mode: match mode {
                        ModeArg::Plain => WindowMode::Plain,
                        ModeArg::Strong => WindowMode::Strong,
                    },
                    reference: match reference {
                        RefArg::Ones => Reference::Ones,
                        RefArg::Eigenvector => Reference::Eigenvector,
                    },
                    ladder: OffsetLadder::new(*ratio, *rungs)?,
                    tol_rel: 1e-10,
                    expect_nonempty: !expect_empty,
                }))
            })?;
            execute(g, &spec)
        }
        Command::ExpansionCheck {
            op,
            random,
            max_side,
            orders,
            tol,
        } => {
            let spec = single_spec(g, "expansion_check", || {
                let source = match op {
                    Some(text) => ExpansionSource::Operator {
                        operator: text.parse()?,
                        mesh: g.meshes(&[32])[0],
                    },
                    None => ExpansionSource::Random {
                        count: *random,
                        max_side: *max_side,
                    },
                };
                Ok(Experiment::ExpansionCheck(ExpansionSpec {
                    source,
                    orders: orders.clone(),
                    tol: *tol,
                }))
            })?;
            execute(g, &spec)
        }
        Command::SmoothingFit {
            op,
            t_min,
            ratio,
            count,
            q_range,
        } => {
            if q_range.as_ref().is_some_and(|q| q.len() != 2) {
                return Err(usage("--q-range takes two values, lo,hi"));
            }
            let spec = single_spec(g, "smoothing_study", || {
                Ok(Experiment::SmoothingStudy(SmoothingSpec {
                    operator: operator(op)?,
                    mesh: g.meshes(&[100])[0],
                    p: g.p.clone().unwrap_or_else(|| vec![2.0]),
                    times: TimeLadder {
                        t_min: *t_min,
                        ratio: *ratio,
                        count: *count,
                    },
                    max_residual: 0.05,
                    q_range: q_range.as_ref().map(|q| [q[0], q[1]]),
                }))
            })?;
            execute(g, &spec)
        }
        Command::DominationIndex {
            op,
            norm,
            w_min_h,
            w_max,
            n_max,
            sigma,
            window,
        } => {
            let spec = single_spec(g, "threshold_study", || {
                let operator = operator(op)?;
                let mesh = g.meshes(&[25, 50, 100]);
                let norm = match norm {
                    NormArg::Auto => NormMode::Auto,
                    NormArg::Exact => NormMode::Exact,
                    NormArg::Bumps => NormMode::Bumps {
                        w_min_h: *w_min_h,
                        w_max: *w_max,
                    },
                };
                // one template cell; --p expands it per exponent
                let cells = vec![ThresholdCell {
                    operator,
                    mesh,
                    p: 2.0,
                    n_max: *n_max,
                    norm,
                    sigma: sigma.map_or(SigmaRule::AboveBound, SigmaRule::Fixed),
                    threshold: 0.1,
                    window: *window,
                }];
                Ok(Experiment::ThresholdStudy(ThresholdSpec {
                    cells,
                    inputs: InputSpec::default(),
                    ladder: OffsetLadder::default(),
                    tol_rel: 1e-10,
                }))
            })?;
            execute(g, &spec)
        }
        Command::Run { path } => run_configs(g, path.as_deref()),
        Command::Report { record, format } => report(g, record, *format),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.global.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        // a second initialization only happens in tests; ignoring it keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verdict) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(3)
        }
    }
}
