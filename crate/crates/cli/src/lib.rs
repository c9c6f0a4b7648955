//! Command-line front end of the `meshloop` benchmark runner.
//!
//! Exit codes follow the BSD sysexits convention: 64 for bad flags or
//! configurations, 65 for malformed mesh input, 70 for execution failures
//! and 74 for report or table I/O errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use meshloop::apps::seed_from_env;
use meshloop::driver::{self, AppKind, MeshSource, RunSpec, TuneMode};
use meshloop::error::{Error, ExecError};
use meshloop::exec::{BackendConfig, BackendKind};
use meshloop::partition::{halo_stats_csv, Partitioner};
use meshloop::perf::emit_report;
use meshloop::plan::{PlanConfig, DEFAULT_BLOCK_SIZE};
use meshloop::tuner::{table_path, TuningTable};
use meshloop::ElemKind;

pub const EX_OK: i32 = 0;
pub const EX_USAGE: i32 = 64;
pub const EX_DATAERR: i32 = 65;
pub const EX_SOFTWARE: i32 = 70;
pub const EX_IOERR: i32 = 74;

#[derive(Debug, Parser)]
#[command(name = "meshloop", version, about = "Run unstructured-mesh loop programs on serial, threaded, multi-rank and hybrid executors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a bundled app and emit a performance report.
    Bench {
        #[arg(value_enum)]
        app: App,
        #[command(flatten)]
        opts: BenchOpts,
    },
    /// Print halo statistics of the bundled loop program for several rank counts.
    HaloStats(HaloOpts),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum App {
    CellArea,
    Diffusion,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    F64,
    I64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Backend {
    Serial,
    Threads,
    Ranks,
    Hybrid,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PartitionerArg {
    Trivial,
    Rcb,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Tune {
    Block,
    Balance,
    Both,
}

#[derive(Debug, Args)]
struct MeshOpts {
    /// Refinement of the generated unit-square mesh (n x n squares, 2n^2 triangles).
    #[arg(long, default_value_t = 8)]
    n: usize,
    /// Read the mesh from a text mesh file instead of generating one.
    #[arg(long, value_name = "PATH")]
    mesh: Option<PathBuf>,
    /// Randomly renumber every set first, seeded by MESHLOOP_SEED.
    #[arg(long)]
    shuffle: bool,
}

#[derive(Debug, Args)]
struct BenchOpts {
    #[command(flatten)]
    mesh: MeshOpts,
    /// Diffusion time steps.
    #[arg(long, default_value_t = 10)]
    steps: usize,
    /// Diffusion step size [default: 1 / max node degree].
    #[arg(long)]
    dt: Option<f64>,
    /// Number type of the app data; i64 is bit-reproducible on every backend.
    #[arg(long, value_enum, default_value = "f64")]
    kind: Kind,
    #[arg(long, value_enum, default_value = "serial")]
    backend: Backend,
    /// Worker threads of the threads backend.
    #[arg(long, default_value_t = 1)]
    nthreads: usize,
    /// Ranks of the ranks and hybrid backends.
    #[arg(long, default_value_t = 1)]
    nranks: usize,
    /// Hybrid balance factor: class-A partition over combined class-B partition.
    #[arg(long, default_value_t = 1.0)]
    balance: f64,
    /// Hybrid ranks in class A.
    #[arg(long, default_value_t = 1)]
    class_a_ranks: usize,
    /// Pool width of each class-A rank.
    #[arg(long, default_value_t = 2)]
    class_a_threads: usize,
    /// Pool width of each class-B rank.
    #[arg(long, default_value_t = 1)]
    class_b_threads: usize,
    /// Bound on every blocking halo receive, in milliseconds.
    #[arg(long, default_value_t = 10_000)]
    timeout_ms: u64,
    /// Elements per block of the execution plans.
    #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE)]
    block_size: usize,
    #[arg(long, value_enum, default_value = "trivial")]
    partitioner: PartitionerArg,
    /// Reverse Cuthill-McKee renumbering before execution.
    #[arg(long, value_enum, default_value = "off")]
    renumber: OnOff,
    /// Report file; the extension (.csv or .json) picks the format. Printed as CSV when omitted.
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
    /// Sweep block sizes and/or the hybrid balance and store the table next to the report.
    #[arg(long, value_enum)]
    tune: Option<Tune>,
}

#[derive(Debug, Args)]
struct HaloOpts {
    #[command(flatten)]
    mesh: MeshOpts,
    /// Comma-separated rank counts.
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
    nranks: Vec<usize>,
    #[arg(long, value_enum, default_value = "rcb")]
    partitioner: PartitionerArg,
    /// CSV output file; printed when omitted.
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
}

/// Failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    msg: String,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Failure {
            code: EX_USAGE,
            msg: msg.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Format(_) | Error::Mesh(_) => EX_DATAERR,
            Error::Exec(ExecError::Config(_)) => EX_USAGE,
            Error::Io { .. } => EX_IOERR,
            _ => EX_SOFTWARE,
        };
        Failure {
            code,
            msg: e.to_string(),
        }
    }
}

fn partitioner(p: PartitionerArg) -> Partitioner {
    match p {
        PartitionerArg::Trivial => Partitioner::Trivial,
        PartitionerArg::Rcb => Partitioner::Rcb,
    }
}

fn mesh_source(m: &MeshOpts) -> MeshSource {
    match &m.mesh {
        Some(p) => MeshSource::File(p.clone()),
        None => MeshSource::Generated(m.n),
    }
}

fn check_report_path(path: &Path, allowed: &[&str]) -> Result<(), Failure> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if allowed.contains(&ext) => Ok(()),
        _ => Err(Failure::usage(format!(
            "--report {}: extension must be one of {}",
            path.display(),
            allowed.join(", ")
        ))),
    }
}

fn backend_config(o: &BenchOpts) -> BackendConfig {
    BackendConfig {
        kind: match o.backend {
            Backend::Serial => BackendKind::Serial,
            Backend::Threads => BackendKind::Threads,
            Backend::Ranks => BackendKind::Ranks,
            Backend::Hybrid => BackendKind::Hybrid,
        },
        nthreads: o.nthreads,
        nranks: o.nranks,
        plan: PlanConfig {
            block_size: o.block_size,
        },
        partitioner: partitioner(o.partitioner),
        balance: o.balance,
        class_a_ranks: o.class_a_ranks,
        class_a_threads: o.class_a_threads,
        class_b_threads: o.class_b_threads,
        timeout: Duration::from_millis(o.timeout_ms),
        ..BackendConfig::default()
    }
}

fn bench(app: App, o: &BenchOpts, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    if let Some(p) = &o.report {
        check_report_path(p, &["csv", "json"])?;
    }
    let backend = backend_config(o);
    backend.validate().map_err(|e| Failure::usage(e.to_string()))?;
    let app = match app {
        App::CellArea => AppKind::CellArea,
        App::Diffusion => AppKind::Diffusion,
    };
    let kind = match o.kind {
        Kind::F64 => ElemKind::F64,
        Kind::I64 => ElemKind::I64,
    };
    let mut spec = RunSpec::new(app, kind, o.mesh.n, backend);
    spec.mesh = mesh_source(&o.mesh);
    spec.steps = o.steps;
    spec.dt = o.dt;
    spec.shuffle = o.mesh.shuffle.then(seed_from_env);
    spec.renumber = matches!(o.renumber, OnOff::On);
    spec.tune = o.tune.map(|t| match t {
        Tune::Block => TuneMode::Block,
        Tune::Balance => TuneMode::Balance,
        Tune::Both => TuneMode::Both,
    });
    let table_file = table_path(o.report.as_deref().unwrap_or(Path::new("meshloop.csv")));
    if spec.tune.is_none() && table_file.exists() {
        spec.table = Some(TuningTable::load(&table_file)?);
        let _ = writeln!(err, "using tuning table {}", table_file.display());
    }

    let result = driver::run(&spec)?;
    if let Some(table) = &result.table {
        table.save(&table_file)?;
        let _ = writeln!(err, "tuning table written to {}", table_file.display());
    }
    match &o.report {
        Some(path) => {
            emit_report(&result.report, path)?;
            let _ = writeln!(err, "report written to {}", path.display());
        }
        None => {
            out.write_all(result.report.to_csv().as_bytes())
                .map_err(|e| Failure {
                    code: EX_IOERR,
                    msg: format!("stdout: {e}"),
                })?;
        }
    }
    if let Some(r) = result.residuals.last() {
        let _ = writeln!(err, "final residual {r:.6e} after {} steps", result.residuals.len());
    }
    Ok(())
}

fn halo(o: &HaloOpts, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    if let Some(p) = &o.report {
        check_report_path(p, &["csv"])?;
    }
    if o.nranks.is_empty() || o.nranks.contains(&0) {
        return Err(Failure::usage("--nranks needs positive rank counts"));
    }
    let mesh = driver::load_mesh(&mesh_source(&o.mesh), o.mesh.shuffle.then(seed_from_env))?;
    let rows = driver::halo_table(&mesh, &o.nranks, partitioner(o.partitioner))?;
    let csv = halo_stats_csv(&rows);
    match &o.report {
        Some(path) => {
            std::fs::write(path, &csv).map_err(|e| Failure {
                code: EX_IOERR,
                msg: format!("{}: {e}", path.display()),
            })?;
            let _ = writeln!(err, "halo statistics written to {}", path.display());
        }
        None => {
            let _ = out.write_all(csv.as_bytes());
        }
    }
    Ok(())
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code. Diagnostics go to `err`.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EX_USAGE } else { EX_OK };
            let text = e.render().to_string();
            let _ = if code == EX_OK {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let r = match &cli.command {
        Command::Bench { app, opts } => bench(*app, opts, out, err),
        Command::HaloStats(opts) => halo(opts, out, err),
    };
    match r {
        Ok(()) => EX_OK,
        Err(f) => {
            let _ = writeln!(err, "meshloop: {}", f.msg);
            f.code
        }
    }
}

pub fn run(argv: Vec<OsString>) -> i32 {
    run_with(argv, &mut std::io::stdout(), &mut std::io::stderr())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let argv = std::iter::once("meshloop").chain(args.iter().copied());
        let c = run_with(argv, &mut out, &mut err);
        (c, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        assert_eq!(code(&["bench", "cell-area", "--frobnicate"]).0, EX_USAGE);
        assert_eq!(code(&["bench", "nope"]).0, EX_USAGE);
    }

    #[test]
    fn bad_report_extension() {
        let (c, _, err) = code(&["bench", "cell-area", "--n", "2", "--report", "x.txt"]);
        assert_eq!(c, EX_USAGE);
        assert!(err.contains("extension"));
    }

    #[test]
    fn zero_threads_is_config_error() {
        assert_eq!(code(&["bench", "cell-area", "--backend", "threads", "--nthreads", "0"]).0, EX_USAGE);
    }

    #[test]
    fn csv_on_stdout_without_report() {
        let (c, out, _) = code(&["bench", "cell-area", "--n", "2"]);
        assert_eq!(c, EX_OK);
        assert!(out.contains("loop,time,calls,GB/sec,pct_runtime,nb,nc,comm,comp"));
    }
}
