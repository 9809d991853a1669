use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use bddc_cli::config::parse_count;
use bddc_cli::{run_or_record, sweep, write_audits, write_csv, CliError, RunConfig, Sweep};
use clap::Parser;

/// Solve periodic Poisson problems with multilevel BDDC and report
/// iteration counts and condition number estimates as CSV.
#[derive(Debug, Parser)]
#[command(name = "mlbddc", version)]
struct Args {
    /// Spatial dimension (2 or 3).
    #[arg(long)]
    dim: Option<usize>,

    /// Number of levels L, including the coarsest.
    #[arg(long)]
    levels: Option<usize>,

    /// Coarsening ratio, uniform (`3`) or per level (`3/4`).
    #[arg(long)]
    ratio: Option<String>,

    /// C, E, CE or CEF.
    #[arg(long)]
    coarse_space: Option<String>,

    #[arg(long)]
    tol: Option<f64>,

    #[arg(long)]
    seed: Option<u64>,

    #[arg(long)]
    maxit: Option<usize>,

    /// Add exact condition numbers and the multispace audit (small problems).
    #[arg(long)]
    oracle: bool,

    /// CSV output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Vary one parameter: `L=2,3,4`, `r=3,4` or `coarse_space=C,CE`.
    #[arg(long)]
    sweep: Option<String>,

    /// Flat `key = value` file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Refuse problems with more unknowns than this.
    #[arg(long)]
    max_dofs: Option<String>,

    /// Leave the wall_time column empty.
    #[arg(long)]
    no_timing: bool,
}

fn build_config(args: &Args) -> Result<RunConfig, CliError> {
    let mut c = RunConfig::default();
    if let Some(path) = &args.config {
        c.apply_file_contents(&std::fs::read_to_string(path)?)?;
    }
    let flags: [(&str, Option<String>); 8] = [
        ("dim", args.dim.map(|v| v.to_string())),
        ("levels", args.levels.map(|v| v.to_string())),
        ("ratio", args.ratio.clone()),
        ("coarse_space", args.coarse_space.clone()),
        ("tol", args.tol.map(|v| v.to_string())),
        ("seed", args.seed.map(|v| v.to_string())),
        ("maxit", args.maxit.map(|v| v.to_string())),
        ("max_dofs", args.max_dofs.clone()),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            c.set(k, &v)?;
        }
    }
    if args.oracle {
        c.oracle = true;
    }
    if let Some(m) = &args.max_dofs {
        c.max_dofs =
            parse_count(m).ok_or_else(|| CliError::Config(format!("bad --max-dofs {m}")))?;
    }
    Ok(c)
}

fn audit_path(out: Option<&PathBuf>) -> PathBuf {
    match out {
        Some(p) => {
            let mut s = p.clone().into_os_string();
            s.push(".audit.txt");
            PathBuf::from(s)
        }
        None => PathBuf::from("mlbddc_audit.txt"),
    }
}

fn main_inner(args: Args) -> Result<bool, CliError> {
    let config = build_config(&args)?;
    let rows = match &args.sweep {
        Some(s) => sweep(&config, &s.parse::<Sweep>()?)?,
        None => {
            config.validate()?;
            vec![run_or_record(&config)]
        }
    };
    for r in &rows {
        if let Some(e) = &r.error {
            eprintln!("error: {e}");
        } else if !r.converged {
            eprintln!(
                "warning: L={} r={} {} did not converge in {} iterations",
                r.levels, r.ratio, r.coarse_space, config.maxit
            );
        }
    }
    match &args.out {
        Some(p) => write_csv(&rows, BufWriter::new(File::create(p)?), !args.no_timing)?,
        None => write_csv(&rows, io::stdout().lock(), !args.no_timing)?,
    }
    if config.oracle {
        let path = audit_path(args.out.as_ref());
        let mut f = BufWriter::new(File::create(&path)?);
        let n = write_audits(&rows, &mut f)?;
        f.flush()?;
        eprintln!("audit report ({n} instances): {}", path.display());
    }
    Ok(rows.iter().all(|r| !r.failed()))
}

fn main() -> ExitCode {
    match main_inner(Args::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
