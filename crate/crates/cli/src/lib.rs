//! The `ftls-bench` command line: instance generation and solver benchmarks.

// Validation is written as `!(x > 0.0)` so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use ftls_core::bench::{run_benchmark, to_csv, to_json, to_table, BenchOptions, Method};
use ftls_core::data::{self, CsvOptions, Instance};
use ftls_core::Error;

#[derive(Parser)]
#[command(name = "ftls-bench", version, about = "Exact and sketched total least squares benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic instance.
    Gen {
        /// toy, toy-appendix, identity, gaussian, or small-gaussian
        family: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Destination file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run solvers on an instance and report costs and times.
    Solve(SolveArgs),
}

#[derive(clap::Args)]
struct SolveArgs {
    /// A CSV table or a file written by `gen`.
    #[arg(long, conflicts_with = "family", required_unless_present = "family")]
    input: Option<PathBuf>,
    /// A generated family, optionally with its size: `identity:10`.
    #[arg(long)]
    family: Option<String>,
    /// Number of leading predictor columns; required for CSV input.
    #[arg(long)]
    n_predictors: Option<usize>,
    /// One or more of tls, ls, ftls, rftls (comma separated).
    #[arg(long, value_delimiter = ',', default_values_t = [MethodArg::Tls, MethodArg::Ls, MethodArg::Ftls])]
    method: Vec<MethodArg>,
    /// Sample densities for ftls and rftls (comma separated); sizes follow
    /// from --eps when omitted.
    #[arg(long, value_delimiter = ',')]
    rho: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Best-of-k boosting for ftls.
    #[arg(long, default_value_t = 1)]
    boost: usize,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip timing and run repeats concurrently.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Debug)]
enum MethodArg {
    Tls,
    Ls,
    Ftls,
    Rftls,
}

impl std::fmt::Display for MethodArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            MethodArg::Tls => "tls",
            MethodArg::Ls => "ls",
            MethodArg::Ftls => "ftls",
            MethodArg::Rftls => "rftls",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
    Table,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    fn ingestion(e: Error) -> Self {
        Self { code: 3, message: e.to_string() }
    }
}

fn parse_family(spec: &str, seed: u64) -> Result<Instance, Failure> {
    let (name, k) = match spec.split_once(':') {
        Some((name, k)) => {
            let k = k.parse().map_err(|_| Failure::usage(format!("bad family size in {spec:?}")))?;
            (name, k)
        }
        None => (spec, 5),
    };
    data::generate(name, k, seed).map_err(|e| Failure::usage(e.to_string()))
}

fn first_line_has_header(path: &Path) -> Result<bool, Failure> {
    let file = fs::File::open(path).map_err(|e| Failure::ingestion(e.into()))?;
    let mut line = String::new();
    io::BufReader::new(file)
        .read_line(&mut line)
        .map_err(|e| Failure::ingestion(e.into()))?;
    let first = line.split(',').next().unwrap_or("").trim();
    Ok(!first.is_empty() && first.parse::<f64>().is_err())
}

fn load_input(path: &Path, n_predictors: Option<usize>) -> Result<Instance, Failure> {
    if data::is_instance_file(path).map_err(Failure::ingestion)? {
        let instance = data::load_instance(path).map_err(Failure::ingestion)?;
        if let Some(n) = n_predictors.filter(|&n| n != instance.n()) {
            return Err(Failure::usage(format!(
                "--n-predictors {n} disagrees with the instance file ({} predictors)",
                instance.n()
            )));
        }
        return Ok(instance);
    }
    let n = n_predictors.ok_or_else(|| Failure::usage("--n-predictors is required for CSV input"))?;
    let options = CsvOptions {
        header: first_line_has_header(path)?,
        ..CsvOptions::default()
    };
    data::load_csv(path, n, &options).map_err(Failure::ingestion)
}

fn methods(args: &SolveArgs) -> Result<Vec<Method>, Failure> {
    if let Some(bad) = args.rho.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        return Err(Failure::usage(format!("--rho values must lie in (0, 1], got {bad}")));
    }
    let rhos: Vec<Option<f64>> = if args.rho.is_empty() {
        vec![None]
    } else {
        args.rho.iter().copied().map(Some).collect()
    };
    let mut out = Vec::new();
    for m in &args.method {
        match m {
            MethodArg::Tls => out.push(Method::Tls),
            MethodArg::Ls => out.push(Method::Ls),
            MethodArg::Ftls => out.extend(rhos.iter().map(|&rho| Method::Ftls { rho })),
            MethodArg::Rftls => out.extend(rhos.iter().map(|&rho| Method::Rftls { lambda: args.lambda, rho })),
        }
    }
    out.dedup();
    Ok(out)
}

fn write_output(path: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<(), Failure> {
    match path {
        Some(path) => fs::write(path, text).map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display()))),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| Failure::usage(format!("cannot write output: {e}"))),
    }
}

fn solve(args: SolveArgs, stdout: &mut dyn Write) -> Result<(), Failure> {
    if !(args.eps > 0.0 && args.eps < 1.0) {
        return Err(Failure::usage(format!("--eps must lie in (0, 1), got {}", args.eps)));
    }
    if args.delta.is_some_and(|d| !(d > 0.0)) {
        return Err(Failure::usage("--delta must be positive"));
    }
    if !(args.lambda > 0.0) {
        return Err(Failure::usage("--lambda must be positive"));
    }
    if args.repeats == 0 || args.boost == 0 {
        return Err(Failure::usage("--repeats and --boost must be at least 1"));
    }
    let methods = methods(&args)?;
    let instance = match (&args.input, &args.family) {
        (Some(path), _) => load_input(path, args.n_predictors)?,
        (None, Some(spec)) => {
            let instance = parse_family(spec, args.seed)?;
            if let Some(n) = args.n_predictors.filter(|&n| n != instance.n()) {
                return Err(Failure::usage(format!(
                    "--n-predictors {n} disagrees with family {spec} ({} predictors)",
                    instance.n()
                )));
            }
            instance
        }
        (None, None) => return Err(Failure::usage("one of --input or --family is required")),
    };
    let opts = BenchOptions {
        repeats: args.repeats,
        seed: args.seed,
        timing: !args.no_timing,
        boost: args.boost,
        eps: args.eps,
        delta: args.delta,
        ..BenchOptions::default()
    };
    let records = run_benchmark(&instance, &methods, &opts).map_err(|e| Failure { code: 4, message: e.to_string() })?;
    let text = match args.format {
        Format::Csv => to_csv(&records),
        Format::Json => to_json(&records),
        Format::Table => to_table(&records),
    };
    write_output(args.out.as_deref(), &text, stdout)?;
    if let Some(failed) = records.iter().find(|r| r.error.is_some()) {
        return Err(Failure {
            code: 4,
            message: format!("{} failed: {}", failed.method, failed.error.as_deref().unwrap_or("")),
        });
    }
    Ok(())
}

fn gen(family: &str, k: usize, seed: u64, out: Option<PathBuf>, stdout: &mut dyn Write) -> Result<(), Failure> {
    let instance = data::generate(family, k, seed).map_err(|e| Failure::usage(e.to_string()))?;
    let mut buf = Vec::new();
    data::write_instance(&instance, &mut buf).map_err(|e| Failure::usage(e.to_string()))?;
    write_output(out.as_deref(), &String::from_utf8(buf).expect("instance text is UTF-8"), stdout)
}

/// Runs the command line `args` (program name first) and returns the exit
/// code: 0 on success, 2 for argument errors, 3 for unreadable input, and 4
/// when a solver fails.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Gen { family, k, seed, out } => gen(&family, k, seed, out, stdout),
        Command::Solve(args) => solve(args, stdout),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `(exit code, stdout, stderr)` of one invocation.
    fn call(args: &[&str]) -> (u8, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(std::iter::once("ftls-bench").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn generated_instances_feed_back_into_solve() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.txt");
        let path = path.to_str().unwrap();
        assert_eq!(call(&["gen", "toy", "--out", path]).0, 0);
        let (code, text, _) = call(&["solve", "--input", path, "--method", "tls,ls", "--format", "csv"]);
        assert_eq!(code, 0);
        assert!(text.starts_with("method,cost_mean,cost_std,time_mean,time_std,repeats,seed,failures,error\n"));
        let rows: Vec<csv::StringRecord> = csv::Reader::from_reader(text.as_bytes()).records().map(|r| r.unwrap()).collect();
        assert_eq!(&rows[0][0], "TLS");
        assert!((rows[0][1].parse::<f64>().unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(&rows[1][0], "LS");
        assert!((rows[1][1].parse::<f64>().unwrap() - 9.0).abs() < 1e-9);
    }

    #[test]
    fn gen_writes_to_stdout_by_default() {
        let (code, text, _) = call(&["gen", "identity", "--k", "1"]);
        assert_eq!(code, 0);
        assert_eq!(text.lines().next(), Some("ftls-instance 20 2 1"));
        assert_eq!(text.lines().count(), 21);
    }

    #[test]
    fn plain_csv_with_header_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.csv");
        fs::write(&path, "x1,x2,y\n1,0,0\n0,1,0\n0,0,3\n").unwrap();
        let args = ["solve", "--input", path.to_str().unwrap(), "--n-predictors", "2", "--method", "tls", "--format", "json"];
        let (code, text, err) = call(&args);
        assert_eq!(code, 0, "{err}");
        assert!(text.contains("\"method\": \"TLS\""));
    }

    #[test]
    fn argument_errors_exit_with_2() {
        assert_eq!(call(&["solve", "--family", "toy", "--format", "xml"]).0, 2);
        assert_eq!(call(&["solve", "--family", "nope"]).0, 2);
        assert_eq!(call(&["solve", "--family", "identity:x"]).0, 2);
        assert_eq!(call(&["solve", "--family", "toy", "--rho", "1.5"]).0, 2);
        assert_eq!(call(&["solve", "--family", "toy", "--eps", "0"]).0, 2);
        assert_eq!(call(&["solve", "--family", "toy", "--n-predictors", "3"]).0, 2);
        assert_eq!(call(&["solve"]).0, 2);
        assert_eq!(call(&["--help"]).0, 0);

        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("no-n.csv");
        fs::write(&csv, "1,2,3\n").unwrap();
        assert_eq!(call(&["solve", "--input", csv.to_str().unwrap()]).0, 2);
    }

    #[test]
    fn ingestion_errors_exit_with_3() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.csv");
        fs::write(&bad, "1,2,3\n4,oops,6\n").unwrap();
        let (code, _, err) = call(&["solve", "--input", bad.to_str().unwrap(), "--n-predictors", "2"]);
        assert_eq!(code, 3);
        assert!(err.contains("line 2, column 2"), "{err}");
        let missing = dir.path().join("missing.csv");
        assert_eq!(call(&["solve", "--input", missing.to_str().unwrap(), "--n-predictors", "2"]).0, 3);
    }

    #[test]
    fn solver_errors_exit_with_4_but_still_report() {
        let dir = tempfile::tempdir().unwrap();
        let zero = dir.path().join("zero.csv");
        fs::write(&zero, "0,0\n0,0\n0,0\n").unwrap();
        let args = ["solve", "--input", zero.to_str().unwrap(), "--n-predictors", "1", "--method", "ftls", "--format", "csv"];
        let (code, text, _) = call(&args);
        assert_eq!(code, 4);
        assert!(text.lines().nth(1).unwrap().starts_with("FTLS"));
    }

    #[test]
    fn table_lists_methods_in_order() {
        let args = ["solve", "--family", "toy-appendix", "--method", "rftls,ftls,ls,tls", "--rho", "0.6", "--seed", "3"];
        let (code, text, _) = call(&args);
        assert_eq!(code, 0);
        let names: Vec<&str> = text.lines().skip(1).map(|l| l.split("  ").next().unwrap().trim()).collect();
        assert_eq!(names, ["TLS", "LS", "FTLS 0.6", "RFTLS 1,0.6"]);
    }

    #[test]
    fn untimed_runs_are_reproducible() {
        let args = ["solve", "--family", "small-gaussian", "--method", "ftls,rftls", "--rho", "0.7", "--repeats", "4", "--seed", "7", "--format", "json", "--no-timing"];
        let first = call(&args);
        assert_eq!(first.0, 0);
        assert_eq!(first, call(&args));
        assert!(first.1.contains("\"time_mean\": null"));
    }
}
