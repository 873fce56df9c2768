//! Certificates `f·g^N = Σ_e (Σ_j w_j·p_j²)·h^e`, their text format and the
//! exact verifier.

use std::collections::BTreeSet;
use std::fmt::{self, Write};
use std::str::FromStr;

use num_rational::BigRational;
use num_traits::{One, Signed};
use thiserror::Error;

use crate::parse::{
    format_grading, format_monomial_in, format_polynomial, is_valid_variable_name, parse_grading_field,
    parse_polynomial, parse_sections, Entry, ParseError, Value,
};
use crate::poly::{Grading, Monomial, Polynomial};

use super::normalize_square;

/// How `f` relates to the polynomial the user asked about.
#[derive(Debug, Clone, PartialEq)]
pub enum Origin {
    Direct,
    /// `f = source^power`.
    OddPower { source: Polynomial, power: u32 },
    /// `f = g·source − epsilon·h_margin²`.
    EpsilonMargin {
        source: Polynomial,
        epsilon: BigRational,
        h_margin: Polynomial,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertBlock {
    pub product_index: Vec<bool>,
    pub basis: Vec<Monomial>,
    pub squares: Vec<(BigRational, Polynomial)>,
}

impl CertBlock {
    pub fn sum_of_squares(&self, n_vars: usize) -> Polynomial {
        self.squares
            .iter()
            .fold(Polynomial::zero(n_vars), |acc, (w, p)| &acc + &p.square().scale(w))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub variables: Vec<String>,
    pub grading: Grading,
    pub f: Polynomial,
    pub g: Polynomial,
    pub constraints: Vec<Polynomial>,
    pub n: u32,
    pub blocks: Vec<CertBlock>,
    pub origin: Origin,
    pub margin: Option<f64>,
    pub denominator_bound: Option<u64>,
    pub trajectory: Vec<String>,
}

impl Certificate {
    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    /// `h^e` for a product index.
    pub fn multiplier(&self, e: &[bool]) -> Polynomial {
        e.iter()
            .zip(&self.constraints)
            .filter(|(on, _)| **on)
            .fold(Polynomial::one(self.n_vars()), |acc, (_, h)| &acc * h)
    }

    /// `Σ_e s_e·h^e`.
    pub fn right_hand_side(&self) -> Polynomial {
        self.blocks.iter().fold(Polynomial::zero(self.n_vars()), |acc, b| {
            &acc + &(&b.sum_of_squares(self.n_vars()) * &self.multiplier(&b.product_index))
        })
    }
}

/// Why a certificate failed verification.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InvalidReason {
    #[error("polynomials do not all use the {0} declared variables")]
    VariableCount(usize),
    #[error("block {block}: product index has length {got}, expected {expected}")]
    ProductIndexLength { block: usize, expected: usize, got: usize },
    #[error("block {block}: product index repeats an earlier block")]
    DuplicateBlock { block: usize },
    #[error("block {block}, square {square}: weight {weight} is not positive")]
    NonpositiveWeight { block: usize, square: usize, weight: String },
    #[error("block {block}, square {square}: polynomial is zero")]
    ZeroSquare { block: usize, square: usize },
    #[error("block {block}, square {square}: lowest term has coefficient {coeff}, expected 1")]
    NotNormalized { block: usize, square: usize, coeff: String },
    #[error("block {block}, square {square}: monomial {monomial} is not in the block basis")]
    OutsideBasis { block: usize, square: usize, monomial: String },
    #[error("identity fails at monomial {monomial}: f*g^N has {expected}, the squares give {got}")]
    Mismatch { monomial: String, expected: String, got: String },
    #[error("f does not match its stated origin: {0}")]
    Origin(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Valid,
    Invalid(InvalidReason),
}

impl Verdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, Verdict::Valid)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Valid => write!(f, "Valid"),
            Verdict::Invalid(r) => write!(f, "Invalid: {r}"),
        }
    }
}

/// Re-proves the certificate identity in exact arithmetic.
pub fn verify_certificate(cert: &Certificate) -> Verdict {
    match check(cert) {
        Ok(()) => Verdict::Valid,
        Err(r) => Verdict::Invalid(r),
    }
}

fn check(cert: &Certificate) -> Result<(), InvalidReason> {
    let n = cert.n_vars();
    let vars = &cert.variables;
    let all_polys = std::iter::once(&cert.f)
        .chain(std::iter::once(&cert.g))
        .chain(&cert.constraints)
        .chain(cert.blocks.iter().flat_map(|b| b.squares.iter().map(|(_, p)| p)));
    if all_polys.into_iter().any(|p| p.n_vars() != n)
        || cert.blocks.iter().flat_map(|b| &b.basis).any(|m| m.n_vars() != n)
    {
        return Err(InvalidReason::VariableCount(n));
    }
    let r = cert.constraints.len();
    let mut seen = BTreeSet::new();
    for (bi, block) in cert.blocks.iter().enumerate() {
        if block.product_index.len() != r {
            return Err(InvalidReason::ProductIndexLength {
                block: bi,
                expected: r,
                got: block.product_index.len(),
            });
        }
        if !seen.insert(block.product_index.clone()) {
            return Err(InvalidReason::DuplicateBlock { block: bi });
        }
        let basis: BTreeSet<&Monomial> = block.basis.iter().collect();
        for (si, (w, p)) in block.squares.iter().enumerate() {
            if !w.is_positive() {
                return Err(InvalidReason::NonpositiveWeight {
                    block: bi,
                    square: si,
                    weight: w.to_string(),
                });
            }
            let Some((_, lowest)) = p.terms().next() else {
                return Err(InvalidReason::ZeroSquare { block: bi, square: si });
            };
            if !lowest.is_one() {
                return Err(InvalidReason::NotNormalized {
                    block: bi,
                    square: si,
                    coeff: lowest.to_string(),
                });
            }
            if let Some(m) = p.monomials().find(|m| !basis.contains(m)) {
                return Err(InvalidReason::OutsideBasis {
                    block: bi,
                    square: si,
                    monomial: format_monomial_in(m, vars),
                });
            }
        }
    }
    match &cert.origin {
        Origin::Direct => {}
        Origin::OddPower { source, power } => {
            if power % 2 == 0 {
                return Err(InvalidReason::Origin(format!("power {power} is even")));
            }
            if source.n_vars() != n || source.pow(*power) != cert.f {
                return Err(InvalidReason::Origin(format!("f is not source_f^{power}")));
            }
        }
        Origin::EpsilonMargin {
            source,
            epsilon,
            h_margin,
        } => {
            if !epsilon.is_positive() {
                return Err(InvalidReason::Origin(format!("epsilon {epsilon} is not positive")));
            }
            if source.n_vars() != n || h_margin.n_vars() != n {
                return Err(InvalidReason::VariableCount(n));
            }
            let expected = &(&cert.g * source) - &h_margin.square().scale(epsilon);
            if expected != cert.f {
                return Err(InvalidReason::Origin("f is not g*source_f - epsilon*h_margin^2".into()));
            }
        }
    }
    let target = &cert.f * &cert.g.pow(cert.n);
    let rhs = cert.right_hand_side();
    let diff = &target - &rhs;
    if let Some((m, _)) = diff.terms().next_back() {
        return Err(InvalidReason::Mismatch {
            monomial: format_monomial_in(m, vars),
            expected: target.coeff(m).to_string(),
            got: rhs.coeff(m).to_string(),
        });
    }
    Ok(())
}

/// From a certificate at `N`, one at `N + 2`: every square `w·p²` becomes
/// `w·(g·p)²`.
pub fn lift_by_g_squared(cert: &Certificate) -> Certificate {
    let mut out = cert.clone();
    out.n = cert.n + 2;
    for block in &mut out.blocks {
        block.squares = block
            .squares
            .iter()
            .map(|(w, p)| normalize_square(w, &(&cert.g * p)))
            .collect();
        let support: BTreeSet<Monomial> = block
            .squares
            .iter()
            .flat_map(|(_, p)| p.monomials().cloned())
            .collect();
        block.basis = support.into_iter().collect();
    }
    out.trajectory.push(format!("lifted from N={} by g^2", cert.n));
    out
}

fn quoted(p: &Polynomial, vars: &[String]) -> String {
    format!("\"{}\"", format_polynomial(p, vars))
}

/// Serializes a certificate. Weights and coefficients are exact `p/q`.
pub fn format_certificate(cert: &Certificate) -> String {
    let v = &cert.variables;
    let mut out = String::from("# posicert certificate\n");
    let _ = writeln!(out, "vars = {}", v.join(", "));
    if cert.grading.n_blocks() > 1 {
        let _ = writeln!(out, "blocks = {}", format_grading(&cert.grading, v));
    }
    let _ = writeln!(out, "f = {}", quoted(&cert.f, v));
    let _ = writeln!(out, "g = {}", quoted(&cert.g, v));
    if !cert.constraints.is_empty() {
        let hs: Vec<String> = cert.constraints.iter().map(|h| quoted(h, v)).collect();
        let _ = writeln!(out, "h = [{}]", hs.join(", "));
    }
    let _ = writeln!(out, "N = {}", cert.n);
    match &cert.origin {
        Origin::Direct => {}
        Origin::OddPower { source, power } => {
            let _ = writeln!(out, "source_f = {}", quoted(source, v));
            let _ = writeln!(out, "power = {power}");
        }
        Origin::EpsilonMargin {
            source,
            epsilon,
            h_margin,
        } => {
            let _ = writeln!(out, "source_f = {}", quoted(source, v));
            let _ = writeln!(out, "epsilon = {epsilon}");
            let _ = writeln!(out, "h_margin = {}", quoted(h_margin, v));
        }
    }
    if let Some(m) = cert.margin {
        let _ = writeln!(out, "margin = {m:?}");
    }
    if let Some(b) = cert.denominator_bound {
        let _ = writeln!(out, "denominator_bound = {b}");
    }
    if !cert.trajectory.is_empty() {
        out.push_str("trajectory = [\n");
        for t in &cert.trajectory {
            let _ = writeln!(out, "  \"{}\",", t.replace('"', "'"));
        }
        out.push_str("]\n");
    }
    for block in &cert.blocks {
        out.push_str("\n[block]\n");
        let e: Vec<&str> = block.product_index.iter().map(|&b| if b { "1" } else { "0" }).collect();
        let _ = writeln!(out, "e = ({})", e.join(", "));
        let basis: Vec<String> = block
            .basis
            .iter()
            .map(|m| format!("\"{}\"", format_monomial_in(m, v)))
            .collect();
        let _ = writeln!(out, "basis = [{}]", basis.join(", "));
        out.push_str("squares = [\n");
        for (w, p) in &block.squares {
            let _ = writeln!(out, "  ({w}, {}),", quoted(p, v));
        }
        out.push_str("]\n");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertificateError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("missing field `{0}`")]
    Missing(&'static str),
    #[error("field `{field}` (line {line}): {reason}")]
    Field { field: String, line: usize, reason: String },
}

fn field_err(e: &Entry, reason: impl Into<String>) -> CertificateError {
    CertificateError::Field {
        field: e.key.clone(),
        line: e.line,
        reason: reason.into(),
    }
}

fn text(e: &Entry) -> Result<&str, CertificateError> {
    e.value.text().ok_or_else(|| field_err(e, "expected a string"))
}

const PROLOGUE_KEYS: &[&str] = &[
    "vars",
    "blocks",
    "f",
    "g",
    "h",
    "N",
    "source_f",
    "power",
    "epsilon",
    "h_margin",
    "margin",
    "denominator_bound",
    "trajectory",
];

fn check_keys(entries: &[Entry], allowed: &[&str]) -> Result<(), CertificateError> {
    let mut seen = BTreeSet::new();
    for e in entries {
        if !allowed.contains(&e.key.as_str()) {
            return Err(ParseError::UnknownKey {
                key: e.key.clone(),
                line: e.line,
            }
            .into());
        }
        if !seen.insert(e.key.as_str()) {
            return Err(field_err(e, "duplicate key"));
        }
    }
    Ok(())
}

fn parse_num<T: FromStr>(e: &Entry) -> Result<T, CertificateError> {
    let s = text(e)?;
    s.parse().map_err(|_| field_err(e, format!("bad number `{s}`")))
}

fn string_list(e: &Entry) -> Result<Vec<String>, CertificateError> {
    match &e.value {
        Value::List(items) => items
            .iter()
            .map(|v| v.text().map(str::to_string).ok_or_else(|| field_err(e, "expected strings")))
            .collect(),
        _ => Err(field_err(e, "expected a list")),
    }
}

/// Parses the output of [`format_certificate`].
pub fn parse_certificate(doc: &str) -> Result<Certificate, CertificateError> {
    let sections = parse_sections(doc)?;
    let prologue = &sections[0].entries;
    check_keys(prologue, PROLOGUE_KEYS)?;
    let get = |k: &str| prologue.iter().find(|e| e.key == k);
    let vars_entry = get("vars").ok_or(CertificateError::Missing("vars"))?;
    let variables: Vec<String> = vars_entry
        .raw
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if variables.is_empty() || !variables.iter().all(|v| is_valid_variable_name(v)) {
        return Err(field_err(vars_entry, "expected a list of variable names"));
    }
    let poly = |e: &Entry, t: &str| parse_polynomial(t, &variables).map_err(|err| field_err(e, err.to_string()));
    let grading = match get("blocks") {
        Some(e) => parse_grading_field(&e.raw, &variables)?,
        None => Grading::single(variables.len()),
    };
    let required = |k: &'static str| get(k).ok_or(CertificateError::Missing(k));
    let fe = required("f")?;
    let f = poly(fe, text(fe)?)?;
    let ge = required("g")?;
    let g = poly(ge, text(ge)?)?;
    let constraints = match get("h") {
        None => Vec::new(),
        Some(e) => string_list(e)?
            .iter()
            .map(|t| poly(e, t))
            .collect::<Result<Vec<_>, _>>()?,
    };
    let n: u32 = parse_num(required("N")?)?;
    let origin = match (get("source_f"), get("power"), get("epsilon")) {
        (None, None, None) => Origin::Direct,
        (Some(se), Some(pe), None) => Origin::OddPower {
            source: poly(se, text(se)?)?,
            power: parse_num(pe)?,
        },
        (Some(se), None, Some(ee)) => {
            let he = required("h_margin")?;
            let epsilon = BigRational::from_str(text(ee)?).map_err(|_| field_err(ee, "expected p/q"))?;
            Origin::EpsilonMargin {
                source: poly(se, text(se)?)?,
                epsilon,
                h_margin: poly(he, text(he)?)?,
            }
        }
        _ => {
            return Err(CertificateError::Field {
                field: "source_f".into(),
                line: 0,
                reason: "source_f needs exactly one of power or epsilon".into(),
            })
        }
    };
    let margin = get("margin").map(parse_num::<f64>).transpose()?;
    let denominator_bound = get("denominator_bound").map(parse_num::<u64>).transpose()?;
    let trajectory = get("trajectory").map(string_list).transpose()?.unwrap_or_default();

    let mut blocks = Vec::new();
    for sec in &sections[1..] {
        if sec.name != "block" {
            return Err(ParseError::Syntax {
                line: sec.line,
                reason: format!("unexpected section `[{}]`", sec.name),
            }
            .into());
        }
        check_keys(&sec.entries, &["e", "basis", "squares"])?;
        let bget = |k: &'static str| {
            sec.entries.iter().find(|e| e.key == k).ok_or(CertificateError::Missing(k))
        };
        let ee = bget("e")?;
        let product_index = match &ee.value {
            Value::Tuple(items) => items
                .iter()
                .map(|v| match v.text() {
                    Some("0") => Ok(false),
                    Some("1") => Ok(true),
                    _ => Err(field_err(ee, "entries must be 0 or 1")),
                })
                .collect::<Result<Vec<_>, _>>()?,
            _ => return Err(field_err(ee, "expected a tuple like (0, 1)")),
        };
        let be = bget("basis")?;
        let basis = string_list(be)?
            .iter()
            .map(|t| {
                let p = poly(be, t)?;
                let single = match p.terms().next() {
                    Some((m, c)) if p.len() == 1 && c.is_one() => Some(m.clone()),
                    _ => None,
                };
                single.ok_or_else(|| field_err(be, format!("`{t}` is not a monomial")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let se = bget("squares")?;
        let Value::List(items) = &se.value else {
            return Err(field_err(se, "expected a list of (weight, \"poly\") pairs"));
        };
        let squares = items
            .iter()
            .map(|item| match item {
                Value::Tuple(pair) if pair.len() == 2 => {
                    let w = pair[0]
                        .text()
                        .and_then(|s| BigRational::from_str(s).ok())
                        .ok_or_else(|| field_err(se, "weight must be an exact rational p/q"))?;
                    let p = pair[1]
                        .text()
                        .ok_or_else(|| field_err(se, "square must be a string"))
                        .and_then(|t| poly(se, t))?;
                    Ok((w, p))
                }
                _ => Err(field_err(se, "expected (weight, \"poly\")")),
            })
            .collect::<Result<Vec<_>, CertificateError>>()?;
        blocks.push(CertBlock {
            product_index,
            basis,
            squares,
        });
    }
    Ok(Certificate {
        variables,
        grading,
        f,
        g,
        constraints,
        n,
        blocks,
        origin,
        margin,
        denominator_bound,
        trajectory,
    })
}
