use std::process::Command;

use orbicheck::{describe, dump_fields, evaluate, run_suite, FieldKind, HarnessError, SuiteConfig};

fn config(text: &str) -> SuiteConfig {
    SuiteConfig::from_toml(text).unwrap()
}

fn rows(path: &std::path::Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let data = r.records().map(|rec| rec.unwrap().iter().map(|v| v.parse().unwrap()).collect()).collect();
    (header, data)
}

#[test]
fn football_full_suite_reports_id_order_nine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&format!("seed = 1\nout = {:?}\n[orbifold]\npreset = \"football\"\norder = 3\n", dir.path()));
    let report = run_suite(&cfg).unwrap();
    let rec = report.record("corollary2.id_order").unwrap();
    assert!(rec.pass);
    assert_eq!(rec.witnesses[0], "got 9, want 9");
    assert!(report.pass(), "{}", report.to_json());
    assert!(dir.path().join("report.json").exists());
    assert!(dir.path().join("strata.csv").exists());
    let sections: Vec<&str> = report.suites.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(sections, orbicheck::config::SUITES);
}

#[test]
fn trivial_group_has_exactly_zero_equivariance_residuals() {
    let cfg = config("[orbifold]\npreset = \"flat_manifold\"\ndim = 2\n");
    let (report, _) = evaluate(&cfg).unwrap();
    let eq: Vec<_> = report.records().filter(|r| r.name.contains("equivariance")).collect();
    assert!(eq.len() >= 3);
    for r in eq {
        assert_eq!(r.residual, 0.0, "{}", r.name);
    }
}

#[test]
fn suites_run_in_declared_order_regardless_of_selection_order() {
    let cfg = config("suites = [\"riemann\", \"group\"]\n");
    let (report, _) = evaluate(&cfg).unwrap();
    let names: Vec<&str> = report.suites.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["group", "riemann"]);
}

#[test]
fn identical_config_and_seed_give_identical_bytes() {
    let cfg = config("seed = 42\nsuites = [\"tangent\", \"riemann\", \"theorem1\"]\n[riemann]\nsamples = 5\nc1_norm = 0.04\nexp_radius = 0.3\ntriples = 20\n");
    let a = evaluate(&cfg).unwrap().0.to_json();
    let b = evaluate(&cfg).unwrap().0.to_json();
    assert_eq!(a, b);
    let mut other = cfg.clone();
    other.seed = 43;
    assert_ne!(evaluate(&other).unwrap().0.to_json(), a);
}

#[test]
fn report_echo_reproduces_the_run() {
    let cfg = config("seed = 5\nsuites = [\"maps\"]\n[orbifold]\npreset = \"dihedral_plane\"\norder = 4\n");
    let (report, _) = evaluate(&cfg).unwrap();
    let echoed = SuiteConfig::from_toml(&report.config.to_toml()).unwrap();
    assert_eq!(echoed, cfg);
    assert_eq!(evaluate(&echoed).unwrap().0.to_json(), report.to_json());
    for r in report.records() {
        assert_eq!(r.pass, r.residual <= r.tolerance);
        assert!(!r.anchor.is_empty());
    }
}

#[test]
fn non_orthogonal_generator_is_named() {
    let err = SuiteConfig::from_toml(
        "[orbifold]\nmodel = \"flat\"\ndim = 2\ngenerators = [[0.0, -1.0, 1.0, 0.0], [1.0, 0.5, 0.0, 1.0]]\n",
    )
    .unwrap_err();
    match err {
        HarnessError::ConfigInvalid { field, message } => {
            assert_eq!(field, "orbifold.generators[1]");
            assert!(message.contains("[1.0, 0.5, 0.0, 1.0]"), "{message}");
        }
        other => panic!("{other}"),
    }
}

#[test]
fn other_config_errors_name_their_fields() {
    let field = |text: &str| match SuiteConfig::from_toml(text).unwrap_err() {
        HarnessError::ConfigInvalid { field, .. } => field,
        other => panic!("{other}"),
    };
    assert_eq!(field("suites = [\"nope\"]\n"), "suites");
    assert_eq!(field("[tolerances]\nequivariance = 0.0\nroundtrip = 1e-8\naveraging = 1e-10\npartition = 1e-9\nrepresentative = 1e-9\nidempotence = 1e-12\n"), "tolerances.equivariance");
    assert_eq!(field("[orbifold]\npreset = \"klein\"\n"), "orbifold.preset");
    assert_eq!(field("[orbifold]\npreset = \"football\"\n"), "orbifold.order");
    assert_eq!(field("[orbifold]\nmodel = \"flat\"\ndim = 2\ngenerators = [[1.0, 0.0, 0.0]]\n"), "orbifold.generators[0]");
    assert_eq!(field("bogus = 1\n"), "toml");
}

#[test]
fn custom_generators_match_the_preset() {
    let c = -0.5;
    let s = 3f64.sqrt() / 2.0;
    let custom = config(&format!(
        "suites = [\"group\", \"maps\"]\n[orbifold]\nmodel = \"sphere\"\ndim = 2\ngenerators = [[{c}, {}, 0.0, {s}, {c}, 0.0, 0.0, 0.0, 1.0]]\n",
        -s
    ));
    let (report, _) = evaluate(&custom).unwrap();
    assert!(report.pass());
    assert_eq!(report.record("maps.id_order").unwrap().witnesses[0], "got 9, want 9");
}

#[test]
fn describe_examples() {
    let fb = describe(&config("[orbifold]\npreset = \"football\"\norder = 5\n")).unwrap();
    assert!(fb.lines().nth(1).unwrap().starts_with("3 strata; poles order 5"), "{fb}");
    let m = describe(&config("[orbifold]\npreset = \"flat_manifold\"\ndim = 2\n")).unwrap();
    assert_eq!(m.lines().nth(1).unwrap(), "1 stratum");
    let sq = describe(&config("[orbifold]\npreset = \"square_corner\"\n")).unwrap();
    assert!(sq.contains("corner order 4"), "{sq}");
    assert!(sq.contains("isotropy order 4"));
}

#[test]
fn partition_dump_sums_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&format!("out = {:?}\n", dir.path()));
    let path = dump_fields(&cfg, FieldKind::Partition, 20).unwrap();
    let (header, data) = rows(&path);
    assert_eq!(header.last().unwrap(), "sum");
    assert!(header.iter().any(|h| h == "w_chart0"));
    assert!(!data.is_empty());
    for r in &data {
        assert!((r.last().unwrap() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn zero_orbisection_dump_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&format!("out = {:?}\n[dump]\norbisection = \"zero\"\n", dir.path()));
    let (header, data) = rows(&dump_fields(&cfg, FieldKind::Orbisection, 12).unwrap());
    let v: Vec<usize> = header.iter().enumerate().filter(|(_, h)| h.starts_with('v')).map(|(i, _)| i).collect();
    assert_eq!(v.len(), 3);
    for r in &data {
        assert!(v.iter().all(|&i| r[i] == 0.0));
    }
}

#[test]
fn metric_dump_is_positive_definite() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&format!("out = {:?}\n[orbifold]\npreset = \"dihedral_plane\"\norder = 4\n", dir.path()));
    let (header, data) = rows(&dump_fields(&cfg, FieldKind::Metric, 16).unwrap());
    assert_eq!(header.last().unwrap(), "min_eigenvalue");
    assert!(data.iter().all(|r| *r.last().unwrap() > 0.0));
}

#[test]
fn cli_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_orbicheck");
    let dir = tempfile::tempdir().unwrap();
    let ok = Command::new(bin)
        .args(["--suite", "group", "--suite", "strata", "--seed", "3", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert!(stdout.contains("PASS group.theta_choices"));
    assert!(!stdout.contains("theorem1"));

    // a vanishing tolerance turns roundoff-level residuals into failures
    let strict = Command::new(bin)
        .args(["--suite", "tangent", "--tol-scale", "1e-30", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(strict.status.code(), Some(1));

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[orbifold]\nmodel = \"flat\"\ndim = 1\ngenerators = [[2.0]]\n").unwrap();
    let bad = Command::new(bin).arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("orbifold.generators[0]"));

    let d = Command::new(bin).args(["describe", "--grid", "32"]).output().unwrap();
    assert!(String::from_utf8_lossy(&d.stdout).contains("3 strata; poles order 3"));
}
