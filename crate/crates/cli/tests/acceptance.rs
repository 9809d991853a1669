//! Exit criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::io::Write as _;
use std::process::ExitCode;
use std::time::Instant;

use bddc_cli::{run, RunConfig};
use mlbddc::oracle::{
    audit_multispace_assumptions, multiset_distance, parse_report, without_unit_eigenvalues,
    DenseOracle, ReducedBddc, DEFAULT_ORACLE_CAP,
};
use mlbddc::{
    assemble_global, build_hierarchy, element_stiffness, random_zero_mean_rhs, BddcPreconditioner,
    CoarseSpace, GlobalOperator, Hierarchy, HierarchySpec, PcgOptions,
};
use nalgebra::DMatrix;

type Check = (bool, String);

fn config(dim: usize, levels: usize, ratio: usize, cs: CoarseSpace) -> RunConfig {
    RunConfig {
        dim,
        levels,
        ratios: vec![ratio],
        coarse_space: cs,
        ..Default::default()
    }
}

fn hierarchy(spec: HierarchySpec) -> Hierarchy {
    build_hierarchy(&spec, &spec.grid().unwrap()).unwrap()
}

struct TableRow {
    dim: usize,
    levels: usize,
    ratio: usize,
    cs: CoarseSpace,
    iter: Option<(usize, usize)>,
    cond: f64,
}

fn row(
    dim: usize,
    levels: usize,
    ratio: usize,
    cs: CoarseSpace,
    iter: Option<(usize, usize)>,
    cond: f64,
) -> TableRow {
    TableRow {
        dim,
        levels,
        ratio,
        cs,
        iter,
        cond,
    }
}

/// Iterations within the given slack and condition estimate within 10%.
fn table(rows: &[TableRow]) -> Check {
    let mut ok = true;
    let mut parts = Vec::new();
    for t in rows {
        let label = format!("{}D L={} r={} {}", t.dim, t.levels, t.ratio, t.cs);
        match run(&config(t.dim, t.levels, t.ratio, t.cs)) {
            Ok(r) => {
                let it = r.iter.unwrap();
                let cond = r.cond_est.unwrap();
                let cond_ok = ((cond - t.cond) / t.cond).abs() <= 0.10;
                let iter_ok = t
                    .iter
                    .map_or(true, |(want, slack)| it.abs_diff(want) <= slack);
                ok &= cond_ok && iter_ok && r.converged;
                let want_it = t.iter.map_or("-".into(), |(w, _)| w.to_string());
                parts.push(format!(
                    "{label}: iter {it} (expected {want_it}) cond {cond:.3} (expected {:.2})",
                    t.cond
                ));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{label}: {e}"));
            }
        }
    }
    (ok, parts.join("; "))
}

fn criterion_1() -> Check {
    use CoarseSpace::*;
    table(&[
        row(2, 2, 3, C, Some((8, 2)), 1.92),
        row(2, 2, 3, CE, Some((5, 2)), 1.08),
        row(2, 3, 3, C, Some((13, 2)), 3.10),
        row(2, 3, 3, CE, Some((7, 2)), 1.34),
        row(2, 4, 3, C, Some((17, 3)), 5.31),
    ])
}

fn criterion_2() -> Check {
    use CoarseSpace::*;
    table(&[
        row(2, 2, 4, C, None, 2.20),
        row(2, 3, 4, C, None, 4.02),
        row(2, 3, 4, CE, None, 1.51),
    ])
}

fn criterion_3() -> Check {
    use CoarseSpace::*;
    table(&[
        row(3, 2, 3, E, Some((10, 2)), 1.85),
        row(3, 2, 3, CE, None, 1.47),
        row(3, 2, 3, CEF, Some((5, 2)), 1.08),
        row(3, 3, 3, E, None, 3.02),
        row(3, 3, 3, CEF, None, 1.50),
    ])
}

fn criterion_4() -> Check {
    use CoarseSpace::*;
    let cases = [
        (2, vec![3], C),
        (2, vec![3], CE),
        (2, vec![4], C),
        (2, vec![4], CE),
        (2, vec![3, 3], C),
        (2, vec![3, 3], CE),
        (3, vec![3], E),
        (3, vec![3], CE),
        (3, vec![3], CEF),
    ];
    let mut ok = true;
    let mut worst_rel: f64 = 0.0;
    let mut worst_min = f64::INFINITY;
    let mut worst_asym: f64 = 0.0;
    let mut bad = Vec::new();
    for (dim, ratios, cs) in cases {
        let h = hierarchy(HierarchySpec::new(dim, ratios.clone(), cs));
        assert!(h.n() <= 1728);
        let a = assemble_global(&h.grid).unwrap();
        let p = BddcPreconditioner::setup(&h).unwrap();
        let b = random_zero_mean_rhs(h.n(), 0).unwrap();
        let (_, rep) = mlbddc::pcg(&a, &p, &b, &PcgOptions::default()).unwrap();
        let o = DenseOracle::build(&a, &p, DEFAULT_ORACLE_CAP).unwrap();
        let s = o.spectrum().unwrap();
        let rel = (rep.cond_est - s.kappa).abs() / s.kappa;
        worst_rel = worst_rel.max(rel);
        worst_min = worst_min.min(s.lambda_min);
        worst_asym = worst_asym.max(o.b_asymmetry());
        if rel > 0.05 || s.lambda_min < 1.0 - 1e-8 {
            ok = false;
            bad.push(format!("{dim}D {ratios:?} {cs}"));
        }
    }
    (
        ok,
        format!(
            "9 instances; max |est-exact|/exact {worst_rel:.2e}, min lambda {worst_min:.10}, B asymmetry {worst_asym:.1e}{}",
            if bad.is_empty() {
                String::new()
            } else {
                format!("; failing {}", bad.join(", "))
            }
        ),
    )
}

fn criterion_5() -> Check {
    let mut ok = true;
    let mut parts = Vec::new();
    for cs in [CoarseSpace::C, CoarseSpace::CE] {
        let h = hierarchy(HierarchySpec::new(2, vec![3], cs));
        let a = assemble_global(&h.grid).unwrap();
        let p = BddcPreconditioner::setup(&h).unwrap();
        let full = DenseOracle::build(&a, &p, DEFAULT_ORACLE_CAP)
            .unwrap()
            .spectrum()
            .unwrap();
        let reduced = ReducedBddc::build(&p, 1, DEFAULT_ORACLE_CAP)
            .unwrap()
            .spectrum()
            .unwrap();
        let x = without_unit_eigenvalues(&full.eigenvalues, 1e-7);
        let y = without_unit_eigenvalues(&reduced.eigenvalues, 1e-7);
        match multiset_distance(&x, &y) {
            Some(d) => {
                ok &= d <= 1e-7;
                parts.push(format!(
                    "{cs}: {} eigenvalues != 1, max diff {d:.1e}",
                    x.len()
                ));
            }
            None => {
                ok = false;
                parts.push(format!("{cs}: {} vs {} eigenvalues != 1", x.len(), y.len()));
            }
        }
    }
    (ok, parts.join("; "))
}

fn criterion_6() -> Check {
    use CoarseSpace::*;
    let dir = tempfile::tempdir().unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for (ratio, cs) in [(3, C), (3, CE), (4, C), (4, CE)] {
        let h = hierarchy(HierarchySpec::new(2, vec![ratio], cs));
        let p = BddcPreconditioner::setup(&h).unwrap();
        let rep = audit_multispace_assumptions(&p, 1).unwrap();
        // round trip through the key-value report
        let path = dir.path().join(format!("audit_{ratio}_{cs}.txt"));
        std::fs::File::create(&path)
            .unwrap()
            .write_all(rep.to_string().as_bytes())
            .unwrap();
        let kv = parse_report(&std::fs::read_to_string(&path).unwrap());
        let get = |k: &str| kv[k].parse::<f64>().unwrap();
        let defect = [
            "orthogonality_defect",
            "projection_defect",
            "unity_defect",
            "span_defect",
            "harmonic_identity_defect",
        ]
        .iter()
        .map(|k| get(k))
        .fold(0.0, f64::max);
        let kappa = get("kappa_exact");
        let omega = get("omega_max");
        let defects_ok = defect <= 1e-9 && get("preconditioner_defect") <= 1e-9;
        let bound_ok = kappa <= omega + 1e-6;
        ok &= defects_ok && bound_ok;
        parts.push(format!(
            "r={ratio} {cs}: defects {defect:.1e}, kappa {kappa:.4} {} omega {omega:.4} (combined {:.4}, image bound {:.4})",
            if bound_ok { "<=" } else { ">" },
            get("omega_combined"),
            omega * get("image_cosine_radius"),
        ));
    }
    (ok, parts.join("; "))
}

fn criterion_7() -> Check {
    let mut ok = true;
    let mut parts = Vec::new();
    for cs in [CoarseSpace::C, CoarseSpace::CE] {
        let h3 = hierarchy(HierarchySpec::new(2, vec![3, 3], cs));
        let a = assemble_global(&h3.grid).unwrap();
        let truncated = BddcPreconditioner::setup_truncated(&h3, 2).unwrap();
        let full = BddcPreconditioner::setup(&h3).unwrap();
        // the same finest decomposition as a two-level hierarchy
        let h2 = hierarchy(HierarchySpec::new(2, vec![3], cs).with_coarsest_per_axis(12));
        assert_eq!(h2.n(), h3.n());
        let two_level = BddcPreconditioner::setup(&h2).unwrap();
        let kappa = |p: &BddcPreconditioner| {
            DenseOracle::build(&a, p, DEFAULT_ORACLE_CAP)
                .unwrap()
                .spectrum()
                .unwrap()
                .kappa
        };
        let (kt, k2, k3) = (kappa(&truncated), kappa(&two_level), kappa(&full));
        ok &= (kt - k2).abs() <= 1e-7;
        parts.push(format!(
            "{cs}: exact level 2 {kt:.9}, two-level {k2:.9}, diff {:.1e} (three-level {k3:.4})",
            (kt - k2).abs()
        ));
    }
    (ok, parts.join("; "))
}

fn criterion_8() -> Check {
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };

    for dim in [2, 3] {
        let k = element_stiffness(dim, 0.25).unwrap().entries;
        let worst = k.row_iter().map(|r| r.sum().abs()).fold(0.0, f64::max);
        check("element row sums", worst <= 1e-14 * k.amax());
    }

    let h = hierarchy(HierarchySpec::new(2, vec![3, 3], CoarseSpace::C));
    let a: GlobalOperator = assemble_global(&h.grid).unwrap();
    let p = BddcPreconditioner::setup(&h).unwrap();
    let n = h.n();

    for lvl in &p.levels {
        let u: Vec<f64> = (0..lvl.n_dofs)
            .map(|i| ((i * 37) % 11) as f64 - 5.0)
            .collect();
        let back = lvl.average(&lvl.restrict(&u));
        let unity = back
            .iter()
            .zip(&u)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        check("E partition of unity", unity <= 1e-12);
        let w = broken(lvl.n_local, lvl.n_subs);
        let once = lvl.restrict(&lvl.average(&w));
        let twice = lvl.restrict(&lvl.average(&once));
        check("RE idempotent", (&twice - &once).amax() <= 1e-12);
    }

    let mut worst_sym: f64 = 0.0;
    let mut min_ratio = f64::INFINITY;
    for seed in 0..50u64 {
        let x = random_zero_mean_rhs(n, seed).unwrap();
        let y = random_zero_mean_rhs(n, seed + 1000).unwrap();
        let bx = p.apply(&x).unwrap();
        let by = p.apply(&y).unwrap();
        let xby: f64 = x.iter().zip(&by).map(|(a, b)| a * b).sum();
        let ybx: f64 = y.iter().zip(&bx).map(|(a, b)| a * b).sum();
        worst_sym = worst_sym.max((xby - ybx).abs() / xby.abs().max(ybx.abs()).max(1e-300));
        let xbx: f64 = x.iter().zip(&bx).map(|(a, b)| a * b).sum();
        let xx: f64 = x.iter().map(|a| a * a).sum();
        min_ratio = min_ratio.min(xbx / xx);
    }
    check("B symmetric", worst_sym <= 1e-9);
    check("B positive on zero-mean vectors", min_ratio > 0.0);

    // ½xᵀAx - bᵀx differs from the squared energy error by a constant
    let b = random_zero_mean_rhs(n, 7).unwrap();
    let mut energies = Vec::new();
    let opts = PcgOptions {
        tol: 1e-12,
        ..Default::default()
    };
    let (_, r1) = mlbddc::krylov::pcg_with_monitor(&a, &p, &b, &opts, &mut |_, x| {
        let ax = a.apply(x);
        let e: f64 = x
            .iter()
            .zip(&ax)
            .zip(&b)
            .map(|((xi, ai), bi)| 0.5 * xi * ai - bi * xi)
            .sum();
        energies.push(e);
    })
    .unwrap();
    let scale = energies.iter().map(|e| e.abs()).fold(0.0, f64::max);
    check(
        "PCG energy error monotone",
        energies.windows(2).all(|w| w[1] <= w[0] + 1e-13 * scale),
    );
    let (_, r2) = mlbddc::pcg(&a, &p, &b, &opts).unwrap();
    check("SolveReport deterministic", r1 == r2);

    (
        failures.is_empty(),
        if failures.is_empty() {
            format!("element rows, averaging, B symmetry {worst_sym:.1e}, min xᵀBx/xᵀx {min_ratio:.3e}, {} energy steps, determinism", energies.len())
        } else {
            format!("failed: {}", failures.join(", "))
        },
    )
}

/// Deterministic broken vector, one column per substructure.
fn broken(n_local: usize, n_subs: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n_local, n_subs, |i, s| ((i * 13 + s * 7) % 17) as f64 - 8.0)
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("2D iterations, ratio 3", criterion_1),
        ("2D condition numbers, ratio 4", criterion_2),
        ("3D iterations, ratio 3", criterion_3),
        ("estimate vs exact spectrum", criterion_4),
        ("reduced-problem spectral equivalence", criterion_5),
        ("multispace audit", criterion_6),
        ("exact coarse solve limit", criterion_7),
        ("property suite", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (ok, detail) = f();
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {} ({name}): {} [{:.1}s] {detail}",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
