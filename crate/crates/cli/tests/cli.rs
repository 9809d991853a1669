use std::path::Path;
use std::process::{Command, Output};

fn mlbddc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlbddc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn records(path: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(path).unwrap();
    assert_eq!(
        r.headers().unwrap().iter().collect::<Vec<_>>(),
        bddc_cli::CSV_HEADER
    );
    r.records().map(|x| x.unwrap()).collect()
}

#[test]
fn empty_sweep_writes_only_the_header() {
    let out = mlbddc(&["--sweep", "L="]);
    assert!(out.status.success());
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        "L,ratio,coarse_space,iter,cond_est,cond_exact,n,n_gamma,wall_time,converged\n"
    );
}

#[test]
fn identical_bytes_for_identical_config_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let out = mlbddc(&[
            "--sweep",
            "coarse_space=C,CE",
            "--seed",
            "11",
            "--no-timing",
            "--out",
            p.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    let (x, y) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(x, y);
    let rows = records(&a);
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[1][2], "CE");
    assert_eq!(&rows[1][8], "");
    assert_eq!(&rows[1][9], "true");
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "# small 2D run\nlevels = 3\ncoarse_space = CE\nratio = 4\n",
    )
    .unwrap();
    let out = mlbddc(&[
        "--config",
        cfg.to_str().unwrap(),
        "--ratio",
        "3",
        "--no-timing",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..4], ["3", "3", "CE", "7"]);
    assert_eq!(row[6], "1296");
}

#[test]
fn size_budget_refuses_before_running() {
    let out = mlbddc(&[
        "--dim",
        "3",
        "--levels",
        "4",
        "--ratio",
        "4",
        "--max-dofs",
        "1e6",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("above the limit"), "{err}");
    assert!(out.stdout.is_empty());

    let out = mlbddc(&["--sweep", "L=2,5", "--max-dofs", "100000"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
}

#[test]
fn invalid_configuration_exits_with_two() {
    let out = mlbddc(&["--coarse-space", "E"]);
    assert_eq!(out.status.code(), Some(2));
    let out = mlbddc(&["--sweep", "x=1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unconverged_row_exits_nonzero() {
    let out = mlbddc(&["--maxit", "2", "--no-timing"]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().nth(1).unwrap().ends_with(",false"));
}

#[test]
fn oracle_prints_audit_path() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("o.csv");
    let out = mlbddc(&[
        "--oracle",
        "--coarse-space",
        "CE",
        "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    let audit = dir.path().join("o.csv.audit.txt");
    assert!(err.contains(audit.to_str().unwrap()), "{err}");
    let kv = mlbddc::oracle::parse_report(&std::fs::read_to_string(&audit).unwrap());
    assert_eq!(kv["pass"], "true");
    let rows = records(&csv_path);
    let est: f64 = rows[0][4].parse().unwrap();
    let exact: f64 = rows[0][5].parse().unwrap();
    assert!((est - exact).abs() / exact < 0.05);
    assert_eq!(&rows[0][5], "1.078");
}

/// Uniform coarsening: the condition number increases with L and its log
/// grows at most linearly, κ(L) ≤ κ(2)^(L-1).
#[test]
fn growth_pattern_over_levels() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("g.csv");
    let out = mlbddc(&["--sweep", "L=2,3,4", "--out", p.to_str().unwrap()]);
    assert!(out.status.success());
    let rows = records(&p);
    let cond: Vec<f64> = rows.iter().map(|r| r[4].parse().unwrap()).collect();
    assert_eq!(cond.len(), 3);
    assert!(cond[0] < cond[1] && cond[1] < cond[2], "{cond:?}");
    for (k, c) in cond.iter().enumerate() {
        assert!(c.ln() <= (k + 1) as f64 * cond[0].ln() + 1e-12, "{cond:?}");
    }
}
