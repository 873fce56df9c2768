use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use posicert::driver::{
    bounds_up_to, describe_certificate, margin_sdp, positivity_precheck, run, DriverError, DriverOptions, Outcome,
    PrecheckResult,
};
use posicert::exact::{format_certificate, parse_certificate, verify_certificate, Verdict};
use posicert::parse::{format_polynomial, parse_problem, Mode, ProblemSpec};
use posicert::sdp::dump::write_dump;

const EXIT_NOT_FOUND: u8 = 1;
const EXIT_COUNTEREXAMPLE: u8 = 2;
const EXIT_INPUT: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(name = "posicert", version, about = "Exact sum-of-squares certificates for f·g^N = Σ s_e·h^e")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan N = 0..n_max for f·g^N = Σ_e s_e·h^e.
    Certify(SearchArgs),
    /// Decide whether f itself is a sum of squares (N = 0, no constraints).
    CheckSos(SearchArgs),
    /// Look for an odd power f^m that is a sum of squares.
    OddPower(SearchArgs),
    /// Certify g^N·(g·f − ε·h²) for the largest ε found.
    Epsilon(SearchArgs),
    /// Re-check a certificate file in exact arithmetic.
    Verify { certificate: PathBuf },
    /// Print the margin SDP for one N in the plain-text dump format.
    DumpSdp {
        problem: PathBuf,
        #[arg(long)]
        n: u32,
        #[arg(long)]
        no_prune: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SearchArgs {
    problem: PathBuf,
    #[arg(long)]
    n_max: Option<u32>,
    #[arg(long)]
    m_max: Option<u32>,
    /// Relative gap and residual tolerance of the SDP solver.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Largest denominator tried when rounding Gram matrices.
    #[arg(long)]
    denom_bound: Option<u64>,
    /// Search even when the precheck finds a counterexample or zeros.
    #[arg(long)]
    force: bool,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// Keep the full monomial basis.
    #[arg(long)]
    no_prune: bool,
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| fail(EXIT_INPUT, format!("cannot read {}: {e}", path.display())))
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| fail(EXIT_INPUT, format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_problem(path: &Path) -> Result<ProblemSpec, Failure> {
    parse_problem(&read(path)?).map_err(|e| fail(EXIT_INPUT, format!("{}: {e}", path.display())))
}

fn driver_failure(e: DriverError) -> Failure {
    let code = match e {
        DriverError::Input(_) | DriverError::Gram(_) => EXIT_INPUT,
        DriverError::Sdp(_) | DriverError::Exact(_) => EXIT_NUMERICAL,
    };
    fail(code, e.to_string())
}

fn point_text(point: &[num_rational::BigRational]) -> String {
    let parts: Vec<String> = point.iter().map(|c| c.to_string()).collect();
    format!("({})", parts.join(", "))
}

fn precheck(spec: &ProblemSpec, args: &SearchArgs) -> Result<(), Failure> {
    let result = positivity_precheck(spec, args.samples, args.seed);
    for &i in result.thin() {
        eprintln!(
            "warning: every sample violates h[{}] >= 0; K may be thin, proceeding anyway",
            i + 1
        );
    }
    match result {
        PrecheckResult::Counterexample {
            point,
            f_value,
            g_value,
            ..
        } => {
            println!(
                "counterexample at {}: f = {f_value}, g = {g_value}",
                point_text(&point)
            );
            if !args.force {
                return Err(fail(EXIT_COUNTEREXAMPLE, "search skipped; use --force to search anyway"));
            }
        }
        PrecheckResult::NoCounterexample { zeros, .. } if !zeros.is_empty() => {
            let shown: Vec<String> = zeros.iter().take(6).map(|z| point_text(z)).collect();
            println!("f or g vanishes on K at {} sample point(s), e.g. {}", zeros.len(), shown.join(", "));
            if !args.force {
                return Err(fail(EXIT_COUNTEREXAMPLE, "search skipped; use --force for nonnegative inputs"));
            }
        }
        PrecheckResult::NoCounterexample { .. } => {}
    }
    Ok(())
}

fn search(mode: Mode, args: SearchArgs) -> Result<u8, Failure> {
    let mut spec = load_problem(&args.problem)?;
    spec.mode = mode;
    if let Some(n) = args.n_max {
        spec.n_max = n;
    }
    if let Some(m) = args.m_max {
        spec.m_max = m;
    }
    if !(args.tol > 0.0 && args.tol < 1.0) {
        return Err(fail(EXIT_INPUT, format!("--tol must lie in (0, 1), got {}", args.tol)));
    }
    let mut opts = DriverOptions {
        threads: args.threads.max(1),
        prune: !args.no_prune,
        ..DriverOptions::default()
    };
    opts.sdp.tolerance = args.tol;
    opts.tight_tolerance = opts.tight_tolerance.min(args.tol);
    if let Some(b) = args.denom_bound {
        opts.denominator_bounds = bounds_up_to(b);
    }
    precheck(&spec, &args)?;
    let report = run(&spec, &opts).map_err(driver_failure)?;
    print!("{report}");
    match &report.outcome {
        Outcome::Certified(cert) => {
            if let Verdict::Invalid(reason) = verify_certificate(cert) {
                return Err(fail(EXIT_NUMERICAL, format!("emitted certificate failed verification: {reason}")));
            }
            print!("{}", describe_certificate(cert));
            if let Some(e) = &report.epsilon {
                println!("certified: g^{}·(g·f − {e}·h²) is a sum of squares", cert.n);
            }
            if let Some(p) = &args.out {
                write_output(Some(p), &format_certificate(cert))?;
                println!("certificate written to {}", p.display());
            }
            Ok(0)
        }
        Outcome::NotFoundUpTo(_) | Outcome::Unknown(_) => Ok(EXIT_NOT_FOUND),
        Outcome::NumericalFailure(_) => Ok(EXIT_NUMERICAL),
    }
}

fn verify(path: &Path) -> Result<u8, Failure> {
    let cert = parse_certificate(&read(path)?).map_err(|e| fail(EXIT_INPUT, format!("{}: {e}", path.display())))?;
    match verify_certificate(&cert) {
        Verdict::Valid => {
            println!("Valid: f·g^{} = Σ_e s_e·h^e with f = {}", cert.n, format_polynomial(&cert.f, &cert.variables));
            Ok(0)
        }
        Verdict::Invalid(reason) => {
            println!("Invalid: {reason}");
            Ok(EXIT_NOT_FOUND)
        }
    }
}

fn dump(problem: &Path, n: u32, no_prune: bool, out: Option<&Path>) -> Result<u8, Failure> {
    let spec = load_problem(problem)?;
    let sdp = margin_sdp(&spec, n, !no_prune).map_err(driver_failure)?;
    write_output(out, &write_dump(&sdp))?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Certify(a) => search(Mode::Certify, a),
        Command::CheckSos(a) => search(Mode::CheckSos, a),
        Command::OddPower(a) => search(Mode::OddPower, a),
        Command::Epsilon(a) => search(Mode::EpsilonMargin, a),
        Command::Verify { certificate } => verify(&certificate),
        Command::DumpSdp {
            problem,
            n,
            no_prune,
            out,
        } => dump(&problem, n, no_prune, out.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
