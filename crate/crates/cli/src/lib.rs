//! Experiment driver for the BDDC solver: single runs, parameter sweeps and
//! CSV output with one row per configuration.

pub mod config;

use std::io::Write;
use std::time::Instant;

use mlbddc::oracle::{self, AuditReport, DenseOracle, DEFAULT_ORACLE_CAP};
use mlbddc::{
    assemble_global, build_hierarchy, pcg, random_zero_mean_rhs, BddcPreconditioner, CoarseSpace,
    PcgOptions, SolveReport,
};

pub use config::{RunConfig, Sweep, SweepAxis, DEFAULT_MAX_DOFS};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),

    #[error("problem has {n} unknowns, above the limit of {limit} (raise --max-dofs)")]
    TooLarge { n: usize, limit: usize },

    #[error(transparent)]
    Solver(#[from] mlbddc::Error),

    #[error("{context}: {source}")]
    Run {
        context: String,
        source: mlbddc::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub const CSV_HEADER: [&str; 10] = [
    "L",
    "ratio",
    "coarse_space",
    "iter",
    "cond_est",
    "cond_exact",
    "n",
    "n_gamma",
    "wall_time",
    "converged",
];

/// Outcome of one configuration; metric fields are empty when it failed.
#[derive(Debug, Clone)]
pub struct ResultRow {
    pub levels: usize,
    pub ratio: String,
    pub coarse_space: CoarseSpace,
    pub iter: Option<usize>,
    pub cond_est: Option<f64>,
    pub cond_exact: Option<f64>,
    pub n: Option<usize>,
    pub n_gamma: Option<usize>,
    /// Seconds for setup and solve.
    pub wall_time: Option<f64>,
    pub converged: bool,
    pub report: Option<SolveReport>,
    pub audit: Option<AuditReport>,
    pub error: Option<String>,
}

impl ResultRow {
    fn empty(config: &RunConfig) -> Self {
        ResultRow {
            levels: config.levels,
            ratio: config::format_ratios(&config.ratios),
            coarse_space: config.coarse_space,
            iter: None,
            cond_est: None,
            cond_exact: None,
            n: None,
            n_gamma: None,
            wall_time: None,
            converged: false,
            report: None,
            audit: None,
            error: None,
        }
    }

    pub fn failed(&self) -> bool {
        self.error.is_some() || !self.converged
    }
}

fn context(config: &RunConfig, what: &str) -> impl Fn(mlbddc::Error) -> CliError {
    let context = format!(
        "{what} (dim={}, L={}, r={}, {})",
        config.dim,
        config.levels,
        config::format_ratios(&config.ratios),
        config.coarse_space
    );
    move |source| CliError::Run {
        context: context.clone(),
        source,
    }
}

/// Builds the problem, runs preconditioned CG from a seeded right-hand side
/// and, with `oracle` set and a small enough problem, adds the exact
/// condition number and the audit of the finest level.
pub fn run(config: &RunConfig) -> Result<ResultRow, CliError> {
    let spec = config.validate()?;
    let grid = spec.grid()?;
    let mut row = ResultRow::empty(config);

    let start = Instant::now();
    let hierarchy = build_hierarchy(&spec, &grid).map_err(context(config, "hierarchy"))?;
    let a = assemble_global(&grid).map_err(context(config, "assembly"))?;
    let prec = BddcPreconditioner::setup(&hierarchy).map_err(context(config, "setup"))?;
    let b = random_zero_mean_rhs(hierarchy.n(), config.seed)?;
    let opts = PcgOptions {
        tol: config.tol,
        maxit: config.maxit,
        zero_mean: true,
    };
    let (_, mut report) = pcg(&a, &prec, &b, &opts).map_err(context(config, "solve"))?;
    row.wall_time = Some(start.elapsed().as_secs_f64());
    report.seed = Some(config.seed);

    row.n = Some(hierarchy.n());
    row.n_gamma = Some(hierarchy.n_gamma());
    row.iter = Some(report.iterations);
    row.cond_est = Some(report.cond_est);
    row.converged = report.converged;

    if config.oracle && hierarchy.n() <= DEFAULT_ORACLE_CAP {
        let spectrum = DenseOracle::build(&a, &prec, DEFAULT_ORACLE_CAP)
            .and_then(|o| o.spectrum())
            .map_err(context(config, "oracle"))?;
        row.cond_exact = Some(spectrum.kappa);
        let two_level = if hierarchy.num_levels() == 2 {
            prec
        } else {
            BddcPreconditioner::setup_truncated(&hierarchy, 2).map_err(context(config, "setup"))?
        };
        row.audit = match oracle::audit_multispace_assumptions(&two_level, 1) {
            Ok(a) => Some(a),
            // broken space of the finest level too large for dense work
            Err(mlbddc::Error::OracleCap { .. }) => None,
            Err(e) => return Err(context(config, "audit")(e)),
        };
    }
    row.report = Some(report);
    Ok(row)
}

/// Checks every variant against its preconditions, including the size
/// budget, before anything runs; then runs them all, recording failures in
/// their row.
pub fn sweep(template: &RunConfig, sweep: &Sweep) -> Result<Vec<ResultRow>, CliError> {
    let variants = sweep.variants(template)?;
    for v in &variants {
        v.validate()?;
    }
    Ok(variants.iter().map(run_or_record).collect())
}

pub fn run_or_record(config: &RunConfig) -> ResultRow {
    run(config).unwrap_or_else(|e| {
        let mut row = ResultRow::empty(config);
        if let Ok(spec) = config.hierarchy_spec() {
            if let Ok(grid) = spec.grid() {
                if let Ok(h) = build_hierarchy(&spec, &grid) {
                    row.n = Some(h.n());
                    row.n_gamma = Some(h.n_gamma());
                }
            }
        }
        row.error = Some(e.to_string());
        row
    })
}

/// Formats with four significant digits.
pub fn sig4(x: f64) -> String {
    if !x.is_finite() {
        return String::new();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let mag = x.abs().log10().floor() as i32;
    let mut decimals = 3 - mag;
    let rounded = round_to(x, decimals);
    if rounded.abs() >= 10f64.powi(mag + 1) {
        decimals -= 1;
    }
    if decimals >= 0 {
        format!("{:.*}", decimals as usize, round_to(x, decimals))
    } else {
        format!("{:.0}", round_to(x, decimals))
    }
}

fn round_to(x: f64, decimals: i32) -> f64 {
    let s = 10f64.powi(decimals);
    (x * s).round() / s
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes rows as CSV; `timing = false` leaves `wall_time` empty so the
/// output is reproducible byte for byte.
pub fn write_csv<W: Write>(rows: &[ResultRow], out: W, timing: bool) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.levels.to_string(),
            r.ratio.clone(),
            r.coarse_space.to_string(),
            opt(r.iter),
            r.cond_est.map(sig4).unwrap_or_default(),
            r.cond_exact.map(sig4).unwrap_or_default(),
            opt(r.n),
            opt(r.n_gamma),
            if timing {
                r.wall_time.map(|t| format!("{t:.6}")).unwrap_or_default()
            } else {
                String::new()
            },
            r.converged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Audit reports of all rows that have one, as `key=value` sections.
pub fn write_audits<W: Write>(rows: &[ResultRow], mut out: W) -> std::io::Result<usize> {
    let mut count = 0;
    for r in rows {
        if let Some(a) = &r.audit {
            writeln!(
                out,
                "# L={} ratio={} coarse_space={}",
                r.levels, r.ratio, r.coarse_space
            )?;
            write!(out, "{a}")?;
            if let Some(k) = r.cond_exact {
                writeln!(out, "kappa_full={k:.12}")?;
            }
            writeln!(out)?;
            count += 1;
        }
    }
    Ok(count)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_significant_digits() {
        assert_eq!(sig4(1.918518), "1.919");
        assert_eq!(sig4(5.3157), "5.316");
        assert_eq!(sig4(12.345), "12.35");
        assert_eq!(sig4(9.99996), "10.00");
        assert_eq!(sig4(12345.0), "12350");
        assert_eq!(sig4(0.0012345), "0.001235");
        assert_eq!(sig4(1.0), "1.000");
        assert_eq!(sig4(f64::NAN), "");
    }

    #[test]
    fn failed_rows_keep_their_configuration() {
        let c = RunConfig {
            levels: 3,
            ratios: vec![3, 3, 3],
            ..Default::default()
        };
        let row = run_or_record(&c);
        assert!(row.failed());
        assert!(row.iter.is_none() && row.n.is_none());
        assert_eq!(row.ratio, "3/3/3");
        let mut buf = Vec::new();
        write_csv(&[row], &mut buf, true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "3,3/3/3,C,,,,,,,false");
    }

    #[test]
    fn single_run_fills_counts() {
        let row = run(&RunConfig {
            coarse_space: CoarseSpace::CE,
            ..Default::default()
        })
        .unwrap();
        assert_eq!((row.n, row.n_gamma), (Some(144), Some(80)));
        assert_eq!(row.iter, Some(5));
        assert!(row.converged && row.cond_exact.is_none());
        assert_eq!(row.report.unwrap().seed, Some(0));
    }
}
