//! Scan properties and command-line behaviour.

use std::path::Path;
use std::process::Command;

use num_rational::BigRational;
use num_traits::Signed;

use posicert::driver::{
    certify, epsilon_margin, positivity_precheck, DriverOptions, Outcome, StepOutcome,
};
use posicert::exact::{parse_certificate, verify_certificate};
use posicert::parse::{parse_problem, Mode, ProblemSpec};

const MOTZKIN: &str = "x^4*y^2 + x^2*y^4 + z^6 - 3*x^2*y^2*z^2";

fn spec_of(doc: &str) -> ProblemSpec {
    parse_problem(doc).unwrap()
}

fn motzkin_spec() -> ProblemSpec {
    let mut s = spec_of(&format!("vars = x, y, z\nf = \"{MOTZKIN}\"\nmode = certify\n"));
    s.n_max = 2;
    s
}

fn cli(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_posicert")).args(args).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap_or(-1), text)
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn scans_are_deterministic_and_thread_independent() {
    let s = motzkin_spec();
    let a = certify(&s, &DriverOptions::default()).unwrap();
    let b = certify(&s, &DriverOptions::default()).unwrap();
    let c = certify(
        &s,
        &DriverOptions {
            threads: 3,
            ..DriverOptions::default()
        },
    )
    .unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_eq!(a.certificate().unwrap().n, 1);
    assert_eq!(positivity_precheck(&s, 500, 9), positivity_precheck(&s, 500, 9));
}

/// Every index skipped as ParityInfeasible has a point of K where the
/// target is negative, so no weighted sum of squares can equal it.
#[test]
fn parity_skips_are_sound() {
    let cases = [
        ("vars = x, y\nf = \"x^3 + y^3\"\n", 2),
        ("vars = x, y\nf = \"x*y^2\"\ng = \"x^2 + y^2\"\nh = [\"x^2 + y^2\"]\n", 2),
        ("vars = x, y, z\nf = \"x^2*z + y^3\"\n", 1),
    ];
    for (doc, n_max) in cases {
        let mut s = spec_of(doc);
        s.n_max = n_max;
        s.mode = Mode::Certify;
        let report = certify(&s, &DriverOptions::default()).unwrap();
        let skipped: Vec<u32> = report
            .records
            .iter()
            .filter(|r| r.outcome == StepOutcome::ParityInfeasible)
            .map(|r| r.index)
            .collect();
        assert!(!skipped.is_empty(), "{doc}");
        for n in skipped {
            let target = &s.f * &s.g.pow(n);
            let witness = (-3i64..=3)
                .flat_map(|a| (-3i64..=3).map(move |b| (a, b)))
                .map(|(a, b)| {
                    let mut p = vec![BigRational::from_integer(a.into()), BigRational::from_integer(b.into())];
                    p.resize(s.n_vars(), BigRational::from_integer(1.into()));
                    p
                })
                .filter(|p| s.constraints.iter().all(|h| !h.evaluate(p).unwrap().is_negative()))
                .find(|p| target.evaluate(p).unwrap().is_negative());
            assert!(witness.is_some(), "{doc} N = {n}");
        }
    }
}

#[test]
fn epsilon_with_zero_of_f_is_not_found() {
    let mut s = spec_of("vars = x, y\nf = \"x^2\"\nh_margin = \"x*y + y^2\"\nmode = epsilon-margin\n");
    s.n_max = 2;
    let report = epsilon_margin(&s, &DriverOptions::default()).unwrap();
    assert!(report.certificate().is_none());
    for r in &report.records {
        if let Some(e) = r.epsilon_star {
            assert!(e <= 1e-6, "eps* = {e} at N = {}", r.index);
        }
    }
}

#[test]
fn epsilon_certificate_verifies() {
    let mut s = spec_of("vars = x, y\nf = \"x^2 + y^2\"\nh_margin = \"x*y\"\nmode = epsilon-margin\n");
    s.n_max = 1;
    let report = epsilon_margin(&s, &DriverOptions::default()).unwrap();
    let cert = report.certificate().expect("certified");
    assert!(report.epsilon.as_ref().unwrap().is_positive());
    assert!(verify_certificate(cert).is_valid());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let sos = write(d, "sos.txt", "vars = x, y\nf = \"x^2 + y^2\"\n");
    let cert = d.join("sos.cert");
    let (code, out) = cli(&["check-sos", &sos, "--out", cert.to_str().unwrap()]);
    assert_eq!(code, 0, "{out}");
    assert_eq!(cli(&["verify", cert.to_str().unwrap()]).0, 0);
    assert!(parse_certificate(&std::fs::read_to_string(&cert).unwrap()).is_ok());

    let indefinite = write(d, "indef.txt", "vars = x, y\nf = \"x^2 - y^2\"\n");
    let (code, out) = cli(&["certify", &indefinite]);
    assert_eq!(code, 2, "{out}");
    assert!(out.contains("counterexample"));
    let (code, out) = cli(&["certify", &indefinite, "--force", "--n-max", "1"]);
    assert_eq!(code, 1, "{out}");

    let motzkin = write(d, "m.txt", &format!("vars = x, y, z\nf = \"{MOTZKIN}\"\n"));
    assert_eq!(cli(&["certify", &motzkin]).0, 2);

    let bad = write(d, "bad.txt", "vars = x\nf = \"x^^2\"\n");
    assert_eq!(cli(&["certify", &bad]).0, 3);
    assert_eq!(cli(&["certify", "/nonexistent/problem"]).0, 3);
    assert_eq!(cli(&["certify"]).0, 3);
    let garbage = write(d, "garbage.cert", "vars = x\nN = 0\n");
    assert_eq!(cli(&["verify", &garbage]).0, 3);

    let (code, dump) = cli(&["dump-sdp", &sos, "--n", "0"]);
    assert_eq!(code, 0);
    assert!(posicert::sdp::dump::parse_dump(&dump).is_ok());
}

#[test]
fn zero_margin_polynomial_is_not_certified_at_n_zero() {
    let s = motzkin_spec();
    let report = certify(&s, &DriverOptions::default()).unwrap();
    let first = report.record(0).unwrap();
    assert_eq!(first.outcome, StepOutcome::MarginNegative);
    assert!(matches!(report.outcome, Outcome::Certified(_)));
}
