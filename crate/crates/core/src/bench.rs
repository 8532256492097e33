//! Repeated, timed runs of every solver on one instance, aggregated into the
//! rows of a cost/time table.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Instance;
use crate::error::{Error, Result};
use crate::ftls::{ftls_boosted, ftls_solve, run_seed, EstimatorConfig, FtlsConfig, Sizing};
use crate::rftls::{rftls_solve, RftlsConfig};
use crate::tls_exact::{ls_solve, tls_solve};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method {
    Tls,
    Ls,
    /// `rho = None` sizes the sketches from `eps`.
    Ftls { rho: Option<f64> },
    Rftls { lambda: f64, rho: Option<f64> },
}

impl Method {
    pub fn label(&self) -> String {
        let rho_label = |rho: Option<f64>| rho.map_or_else(|| "theory".to_string(), |r| r.to_string());
        match self {
            Method::Tls => "TLS".into(),
            Method::Ls => "LS".into(),
            Method::Ftls { rho } => format!("FTLS {}", rho_label(*rho)),
            Method::Rftls { lambda, rho } => format!("RFTLS {lambda},{}", rho_label(*rho)),
        }
    }

    fn rank(&self) -> (u8, f64) {
        let desc = |rho: &Option<f64>| -rho.unwrap_or(f64::INFINITY);
        match self {
            Method::Tls => (0, 0.0),
            Method::Ls => (1, 0.0),
            Method::Ftls { rho } => (2, desc(rho)),
            Method::Rftls { rho, .. } => (3, desc(rho)),
        }
    }

    fn is_deterministic(&self) -> bool {
        matches!(self, Method::Tls | Method::Ls)
    }
}

/// Orders methods as TLS, LS, FTLS by descending density, then RFTLS.
pub fn sort_methods(methods: &mut [Method]) {
    methods.sort_by(|a, b| {
        let (ka, ra) = a.rank();
        let (kb, rb) = b.rank();
        ka.cmp(&kb).then(ra.total_cmp(&rb))
    });
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchOptions {
    pub repeats: usize,
    pub seed: u64,
    /// When false, repeats run concurrently and time fields are zero.
    pub timing: bool,
    /// Best-of-k boosting for FTLS; 1 disables it.
    pub boost: usize,
    pub eps: f64,
    pub delta: Option<f64>,
    pub perturb_delta: f64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            repeats: 1,
            seed: 0,
            timing: true,
            boost: 1,
            eps: 0.1,
            delta: None,
            perturb_delta: 1e-8,
        }
    }
}

/// One row of the report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub method: String,
    pub cost_mean: Option<f64>,
    pub cost_std: Option<f64>,
    pub time_mean: Option<f64>,
    pub time_std: Option<f64>,
    pub repeats: usize,
    pub seed: u64,
    pub failures: usize,
    /// First error message, when every run failed.
    pub error: Option<String>,
}

/// Mean and sample standard deviation; identical samples give exactly 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.iter().all(|v| v.to_bits() == values[0].to_bits()) {
        return (values[0], 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn ftls_config(rho: Option<f64>, opts: &BenchOptions, seed: u64) -> FtlsConfig {
    FtlsConfig {
        eps: opts.eps,
        delta: opts.delta,
        sizing: rho.map_or(Sizing::Theory, Sizing::Density),
        seed,
        evaluate_cost: false,
        ..FtlsConfig::default()
    }
}

fn rftls_config(lambda: f64, rho: Option<f64>, opts: &BenchOptions, seed: u64) -> RftlsConfig {
    RftlsConfig {
        lambda,
        eps: opts.eps,
        delta: opts.delta,
        sizing: rho.map_or(Sizing::Theory, Sizing::Density),
        seed,
        evaluate_cost: false,
        ..RftlsConfig::default()
    }
}

/// A prepared run: the solve (timed) returns a closure computing its cost (untimed).
type Evaluation<'a> = Box<dyn FnOnce() -> Result<f64> + 'a>;

fn solve_once<'a>(instance: &'a Instance, method: Method, opts: &BenchOptions, seed: u64) -> Result<Evaluation<'a>> {
    let (a, b) = (&instance.a, &instance.b);
    Ok(match method {
        Method::Tls => {
            let cost = tls_solve(a, b, opts.perturb_delta)?.cost;
            Box::new(move || Ok(cost))
        }
        Method::Ls => {
            let cost = ls_solve(a, b)?.cost;
            Box::new(move || Ok(cost))
        }
        Method::Ftls { rho } => {
            let cfg = ftls_config(rho, opts, seed);
            let out = if opts.boost > 1 {
                ftls_boosted(a, b, &cfg, opts.boost, EstimatorConfig::default())?.best
            } else {
                ftls_solve(a, b, &cfg)?
            };
            let block = cfg.block_rows;
            Box::new(move || out.evaluate(&instance.c()?, block))
        }
        Method::Rftls { lambda, rho } => {
            let cfg = RftlsConfig {
                evaluate_cost: true,
                ..rftls_config(lambda, rho, opts, seed)
            };
            let cost = rftls_solve(a, b, &cfg)?.cost.expect("cost requested").total();
            Box::new(move || Ok(cost))
        }
    })
}

/// `(cost, seconds)` of one repeat.
fn run_once(instance: &Instance, method: Method, opts: &BenchOptions, seed: u64, warm_up: bool) -> Result<(f64, f64)> {
    if warm_up {
        let _ = solve_once(instance, method, opts, seed)?;
    }
    let started = Instant::now();
    let evaluation = solve_once(instance, method, opts, seed)?;
    let seconds = started.elapsed().as_secs_f64();
    Ok((evaluation()?, if opts.timing { seconds } else { 0.0 }))
}

fn aggregate(method: Method, opts: &BenchOptions, runs: Vec<Result<(f64, f64)>>) -> BenchRecord {
    let failures = runs.iter().filter(|r| r.is_err()).count();
    let first_error = runs.iter().find_map(|r| r.as_ref().err().map(|e| e.to_string()));
    let ok: Vec<(f64, f64)> = runs.into_iter().filter_map(|r| r.ok()).collect();
    let mut record = BenchRecord {
        method: method.label(),
        cost_mean: None,
        cost_std: None,
        time_mean: None,
        time_std: None,
        repeats: opts.repeats,
        seed: opts.seed,
        failures,
        error: None,
    };
    if ok.is_empty() {
        record.error = first_error;
        return record;
    }
    let costs: Vec<f64> = ok.iter().map(|r| r.0).collect();
    let times: Vec<f64> = ok.iter().map(|r| r.1).collect();
    let (cm, mut cs) = mean_std(&costs);
    if method.is_deterministic() {
        cs = 0.0;
    }
    record.cost_mean = Some(cm);
    record.cost_std = Some(cs);
    if opts.timing {
        let (tm, ts) = mean_std(&times);
        record.time_mean = Some(tm);
        record.time_std = Some(ts);
    }
    record
}

/// Runs every method `opts.repeats` times; repeat `r` uses seed
/// [`run_seed`]`(opts.seed, r)`. Only the solve is timed. Failed runs are
/// counted; a method whose runs all fail yields a row carrying the error.
pub fn run_benchmark(instance: &Instance, methods: &[Method], opts: &BenchOptions) -> Result<Vec<BenchRecord>> {
    if methods.is_empty() {
        return Err(Error::InvalidArgument("at least one method is required".into()));
    }
    if opts.repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be at least 1".into()));
    }
    let mut methods = methods.to_vec();
    sort_methods(&mut methods);
    let warm_up = opts.timing && opts.repeats >= 3;
    Ok(methods
        .iter()
        .map(|&method| {
            let one = |r: usize| run_once(instance, method, opts, run_seed(opts.seed, r), warm_up);
            let runs: Vec<_> = if opts.timing {
                (0..opts.repeats).map(one).collect()
            } else {
                (0..opts.repeats).into_par_iter().map(one).collect()
            };
            aggregate(method, opts, runs)
        })
        .collect())
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// CSV report; fields containing commas or quotes are quoted.
pub fn to_csv(records: &[BenchRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "cost_mean", "cost_std", "time_mean", "time_std", "repeats", "seed", "failures", "error"])
        .expect("in-memory write");
    for r in records {
        w.write_record([
            r.method.clone(),
            opt_num(r.cost_mean),
            opt_num(r.cost_std),
            opt_num(r.time_mean),
            opt_num(r.time_std),
            r.repeats.to_string(),
            r.seed.to_string(),
            r.failures.to_string(),
            r.error.clone().unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 fields")
}

pub fn to_json(records: &[BenchRecord]) -> String {
    let mut out = serde_json::to_string_pretty(records).expect("records serialize");
    out.push('\n');
    out
}

/// Aligned text table with the columns Method, Cost, C-std, Time, T-std.
pub fn to_table(records: &[BenchRecord]) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
    let rows: Vec<[String; 5]> = records
        .iter()
        .map(|r| {
            [
                r.method.clone(),
                r.error.as_ref().map_or_else(|| fmt(r.cost_mean), |e| format!("error: {e}")),
                fmt(r.cost_std),
                fmt(r.time_mean),
                fmt(r.time_std),
            ]
        })
        .collect();
    let header = ["Method", "Cost", "C-std", "Time", "T-std"];
    let widths: Vec<usize> = (0..5)
        .map(|k| rows.iter().map(|r| r[k].len()).chain([header[k].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: [&str; 5]| {
        let mut s = format!("{:<w$}", cells[0], w = widths[0]);
        for k in 1..5 {
            let _ = write!(s, "  {:>w$}", cells[k], w = widths[k]);
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header);
    for r in &rows {
        out.push_str(&line([&r[0], &r[1], &r[2], &r[3], &r[4]]));
    }
    out
}
