//! Polynomial text grammar, problem documents and canonical formatting.
//!
//! Polynomials are written as sums of terms with optional rational
//! coefficients (`3`, `-1/2`), variable powers (`x^4`), explicit `*` or
//! juxtaposition, and parenthesized subexpressions which are expanded on the
//! spot. Problem documents are line-oriented `key = value` files; see
//! [`parse_problem`].

use std::collections::HashSet;
use std::fmt::Write as _;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::poly::{Grading, Monomial, Polynomial};

/// Largest exponent accepted after `^`.
pub const MAX_EXPONENT: u32 = 512;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("empty polynomial expression")]
    Empty,
    #[error("unknown variable `{name}` at offset {pos}")]
    UnknownVariable { name: String, pos: usize },
    #[error("malformed exponent at offset {pos}: {reason}")]
    MalformedExponent { pos: usize, reason: String },
    #[error("unbalanced parentheses at offset {pos}")]
    UnbalancedParens { pos: usize },
    #[error("unexpected {found} at offset {pos}")]
    Unexpected { found: String, pos: usize },
    #[error("division by zero at offset {pos}")]
    DivisionByZero { pos: usize },
    #[error("invalid variable name `{0}`")]
    InvalidVariableName(String),
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("unknown key `{key}` on line {line}")]
    UnknownKey { key: String, line: usize },
    #[error("missing required field `{0}`")]
    MissingField(&'static str),
    #[error("field `{field}`: {reason}")]
    Field { field: String, reason: String },
}

impl ParseError {
    fn field(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ParseError::Field {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

// ---------------------------------------------------------------------------
// Polynomial grammar
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(BigInt),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Dot,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(n) => format!("number `{n}`"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Dot => "`.`".into(),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'0'..=b'9' => {
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let n: BigInt = text[start..i].parse().expect("ascii digits");
                out.push((Tok::Num(n), start));
                continue;
            }
            b'a'..=b'z' | b'A'..=b'Z' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(text[start..i].to_string()), start));
                continue;
            }
            b'+' => out.push((Tok::Plus, i)),
            b'-' => out.push((Tok::Minus, i)),
            b'*' => out.push((Tok::Star, i)),
            b'/' => out.push((Tok::Slash, i)),
            b'^' => out.push((Tok::Caret, i)),
            b'(' => out.push((Tok::LParen, i)),
            b')' => out.push((Tok::RParen, i)),
            b'.' => out.push((Tok::Dot, i)),
            _ => {
                let ch = text[i..].chars().next().unwrap_or('?');
                return Err(ParseError::Unexpected {
                    found: format!("character `{ch}`"),
                    pos: i,
                });
            }
        }
        i += 1;
    }
    Ok(out)
}

struct PolyParser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
    vars: &'a [String],
}

impl PolyParser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(_, p)| *p)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn unexpected(&self) -> ParseError {
        match self.peek() {
            Some(Tok::RParen) => ParseError::UnbalancedParens { pos: self.offset() },
            Some(t) => ParseError::Unexpected {
                found: t.describe(),
                pos: self.offset(),
            },
            None => ParseError::Unexpected {
                found: "end of input".into(),
                pos: self.end,
            },
        }
    }

    fn n(&self) -> usize {
        self.vars.len()
    }

    // expr := [+|-] term ((+|-) term)*
    fn expr(&mut self) -> Result<Polynomial, ParseError> {
        let mut acc = Polynomial::zero(self.n());
        let mut negate = match self.peek() {
            Some(Tok::Plus) => {
                self.bump();
                false
            }
            Some(Tok::Minus) => {
                self.bump();
                true
            }
            _ => false,
        };
        loop {
            let t = self.term()?;
            acc = if negate { &acc - &t } else { &acc + &t };
            match self.peek() {
                Some(Tok::Plus) => {
                    self.bump();
                    negate = false;
                }
                Some(Tok::Minus) => {
                    self.bump();
                    negate = true;
                }
                _ => return Ok(acc),
            }
        }
    }

    // term := power ([*] power)*
    fn term(&mut self) -> Result<Polynomial, ParseError> {
        let mut acc = self.power()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.bump();
                    let rhs = self.power()?;
                    acc = &acc * &rhs;
                }
                Some(Tok::Num(_)) | Some(Tok::Ident(_)) | Some(Tok::LParen) => {
                    let rhs = self.power()?;
                    acc = &acc * &rhs;
                }
                _ => return Ok(acc),
            }
        }
    }

    // power := atom [^ exponent]
    fn power(&mut self) -> Result<Polynomial, ParseError> {
        let base = self.atom()?;
        if self.peek() == Some(&Tok::Caret) {
            self.bump();
            let k = self.exponent()?;
            return Ok(base.pow(k));
        }
        Ok(base)
    }

    fn exponent(&mut self) -> Result<u32, ParseError> {
        let pos = self.offset();
        let bad = |reason: &str| ParseError::MalformedExponent {
            pos,
            reason: reason.to_string(),
        };
        let k = match self.bump() {
            Some(Tok::Num(n)) => n,
            Some(Tok::Minus) => return Err(bad("negative exponent")),
            Some(Tok::LParen) => return Err(bad("exponent must be a nonnegative integer literal")),
            _ => return Err(bad("missing exponent")),
        };
        match self.peek() {
            Some(Tok::Dot) | Some(Tok::Slash) => return Err(bad("fractional exponent")),
            _ => {}
        }
        u32::try_from(k)
            .ok()
            .filter(|&k| k <= MAX_EXPONENT)
            .ok_or_else(|| bad(&format!("exponent exceeds {MAX_EXPONENT}")))
    }

    // atom := number [/ number] | ident | ( expr ) | - atom
    fn atom(&mut self) -> Result<Polynomial, ParseError> {
        let pos = self.offset();
        match self.bump() {
            Some(Tok::Num(num)) => {
                if self.peek() == Some(&Tok::Slash) {
                    self.bump();
                    let dpos = self.offset();
                    match self.bump() {
                        Some(Tok::Num(den)) => {
                            if den.is_zero() {
                                return Err(ParseError::DivisionByZero { pos: dpos });
                            }
                            Ok(Polynomial::constant(self.n(), BigRational::new(num, den)))
                        }
                        _ => {
                            self.pos -= 1;
                            Err(ParseError::Unexpected {
                                found: format!(
                                    "{} after `/` (only integer denominators are allowed)",
                                    self.peek().map_or("end of input".into(), Tok::describe)
                                ),
                                pos: dpos,
                            })
                        }
                    }
                } else if self.peek() == Some(&Tok::Dot) {
                    Err(self.unexpected())
                } else {
                    Ok(Polynomial::constant(self.n(), BigRational::from_integer(num)))
                }
            }
            Some(Tok::Ident(name)) => match self.vars.iter().position(|v| *v == name) {
                Some(i) => Ok(Polynomial::var(self.n(), i)),
                None => Err(ParseError::UnknownVariable { name, pos }),
            },
            Some(Tok::LParen) => {
                if self.peek() == Some(&Tok::RParen) {
                    return Err(ParseError::Unexpected {
                        found: "empty parentheses".into(),
                        pos,
                    });
                }
                let inner = self.expr()?;
                match self.bump() {
                    Some(Tok::RParen) => Ok(inner),
                    None => Err(ParseError::UnbalancedParens { pos }),
                    Some(_) => {
                        self.pos -= 1;
                        Err(self.unexpected())
                    }
                }
            }
            Some(Tok::Minus) => {
                let inner = self.power()?;
                Ok(-&inner)
            }
            Some(_) => {
                self.pos -= 1;
                Err(self.unexpected())
            }
            None => Err(ParseError::Unexpected {
                found: "end of input".into(),
                pos: self.end,
            }),
        }
    }
}

/// Parses `text` over the ordered variable list `vars` and expands it.
pub fn parse_polynomial(text: &str, vars: &[String]) -> Result<Polynomial, ParseError> {
    let toks = lex(text)?;
    if toks.is_empty() {
        return Err(ParseError::Empty);
    }
    let mut p = PolyParser {
        toks,
        pos: 0,
        end: text.len(),
        vars,
    };
    let poly = p.expr()?;
    if p.pos < p.toks.len() {
        return Err(p.unexpected());
    }
    Ok(poly)
}

/// Convenience wrapper taking `&str` variable names.
pub fn parse_polynomial_in(text: &str, vars: &[&str]) -> Result<Polynomial, ParseError> {
    let owned: Vec<String> = vars.iter().map(|s| s.to_string()).collect();
    parse_polynomial(text, &owned)
}

pub fn is_valid_variable_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn format_monomial(m: &Monomial, vars: &[String]) -> String {
    let mut parts = Vec::new();
    for (name, &e) in vars.iter().zip(m.exponents()) {
        match e {
            0 => {}
            1 => parts.push(name.clone()),
            _ => parts.push(format!("{name}^{e}")),
        }
    }
    parts.join("*")
}

pub fn format_monomial_in(m: &Monomial, vars: &[String]) -> String {
    if m.is_one() {
        "1".to_string()
    } else {
        format_monomial(m, vars)
    }
}

/// Canonical text: terms in descending graded-lex order, `+`/`-` separators,
/// coefficients as reduced `p/q`. The zero polynomial is `"0"`.
pub fn format_polynomial(p: &Polynomial, vars: &[String]) -> String {
    if p.is_zero() {
        return "0".to_string();
    }
    let mut out = String::new();
    for (i, (m, c)) in p.terms().rev().enumerate() {
        let neg = c.is_negative();
        let mag = c.abs();
        if i == 0 {
            if neg {
                out.push('-');
            }
        } else {
            out.push_str(if neg { " - " } else { " + " });
        }
        if m.is_one() {
            write!(out, "{mag}").unwrap();
        } else {
            if !mag.is_one() {
                write!(out, "{mag}*").unwrap();
            }
            out.push_str(&format_monomial(m, vars));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Key-value documents (problem and certificate files)
// ---------------------------------------------------------------------------

/// Structured right-hand side of a `key = value` line.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Value {
    Str(String),
    Bare(String),
    List(Vec<Value>),
    Tuple(Vec<Value>),
}

impl Value {
    pub(crate) fn describe(&self) -> &'static str {
        match self {
            Value::Str(_) => "string",
            Value::Bare(_) => "word",
            Value::List(_) => "list",
            Value::Tuple(_) => "tuple",
        }
    }

    /// Text of a string or bare word.
    pub(crate) fn text(&self) -> Option<&str> {
        match self {
            Value::Str(s) | Value::Bare(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Entry {
    pub key: String,
    pub raw: String,
    pub value: Value,
    pub line: usize,
}

/// One `[section]` of a document; the prologue before any header has name `""`.
#[derive(Debug, Clone)]
pub(crate) struct Section {
    pub name: String,
    pub line: usize,
    pub entries: Vec<Entry>,
}

fn strip_comment(line: &str) -> &str {
    let mut in_str = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_str = !in_str,
            '#' if !in_str => return &line[..i],
            _ => {}
        }
    }
    line
}

/// Net bracket depth of `s`, ignoring quoted text.
fn bracket_depth(s: &str) -> i64 {
    let mut in_str = false;
    let mut depth = 0;
    for c in s.chars() {
        match c {
            '"' => in_str = !in_str,
            '[' | '(' if !in_str => depth += 1,
            ']' | ')' if !in_str => depth -= 1,
            _ => {}
        }
    }
    depth
}

struct ValueParser<'a> {
    s: &'a [u8],
    src: &'a str,
    i: usize,
    line: usize,
}

impl ValueParser<'_> {
    fn err(&self, reason: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            line: self.line,
            reason: reason.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.i < self.s.len() && self.s[self.i].is_ascii_whitespace() {
            self.i += 1;
        }
    }

    fn value(&mut self) -> Result<Value, ParseError> {
        self.skip_ws();
        match self.s.get(self.i) {
            None => Err(self.err("missing value")),
            Some(b'"') => {
                let start = self.i + 1;
                let end = self.src[start..]
                    .find('"')
                    .map(|k| start + k)
                    .ok_or_else(|| self.err("unterminated string"))?;
                self.i = end + 1;
                Ok(Value::Str(self.src[start..end].to_string()))
            }
            Some(b'[') => {
                self.i += 1;
                Ok(Value::List(self.seq(b']')?))
            }
            Some(b'(') => {
                self.i += 1;
                Ok(Value::Tuple(self.seq(b')')?))
            }
            Some(_) => {
                let start = self.i;
                while self.i < self.s.len() && !matches!(self.s[self.i], b',' | b']' | b')' | b'[' | b'(' | b'"')
                {
                    self.i += 1;
                }
                let word = self.src[start..self.i].trim();
                if word.is_empty() {
                    return Err(self.err("empty value"));
                }
                Ok(Value::Bare(word.to_string()))
            }
        }
    }

    fn seq(&mut self, close: u8) -> Result<Vec<Value>, ParseError> {
        let mut items = Vec::new();
        self.skip_ws();
        if self.s.get(self.i) == Some(&close) {
            self.i += 1;
            return Ok(items);
        }
        loop {
            items.push(self.value()?);
            self.skip_ws();
            match self.s.get(self.i) {
                Some(b',') => {
                    self.i += 1;
                    self.skip_ws();
                    // trailing comma
                    if self.s.get(self.i) == Some(&close) {
                        self.i += 1;
                        return Ok(items);
                    }
                }
                Some(&c) if c == close => {
                    self.i += 1;
                    return Ok(items);
                }
                _ => return Err(self.err(format!("expected `,` or `{}`", close as char))),
            }
        }
    }
}

pub(crate) fn parse_value(raw: &str, line: usize) -> Result<Value, ParseError> {
    if !raw.starts_with(['"', '[', '(']) {
        if raw.is_empty() {
            return Err(ParseError::Syntax {
                line,
                reason: "missing value".into(),
            });
        }
        return Ok(Value::Bare(raw.to_string()));
    }
    let mut p = ValueParser {
        s: raw.as_bytes(),
        src: raw,
        i: 0,
        line,
    };
    let v = p.value()?;
    p.skip_ws();
    if p.i != raw.len() {
        return Err(p.err(format!("trailing characters `{}`", &raw[p.i..])));
    }
    Ok(v)
}

/// Splits a document into sections of `key = value` entries. Values whose
/// brackets are not balanced continue onto the following lines.
pub(crate) fn parse_sections(doc: &str) -> Result<Vec<Section>, ParseError> {
    let mut sections = vec![Section {
        name: String::new(),
        line: 0,
        entries: Vec::new(),
    }];
    let lines: Vec<&str> = doc.lines().collect();
    let mut i = 0;
    while i < lines.len() {
        let lineno = i + 1;
        let line = strip_comment(lines[i]).trim();
        i += 1;
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') && line.ends_with(']') && !line.contains('=') {
            sections.push(Section {
                name: line[1..line.len() - 1].trim().to_string(),
                line: lineno,
                entries: Vec::new(),
            });
            continue;
        }
        let (key, rest) = line.split_once('=').ok_or_else(|| ParseError::Syntax {
            line: lineno,
            reason: format!("expected `key = value`, found `{line}`"),
        })?;
        let key = key.trim().to_string();
        let mut raw = rest.trim().to_string();
        while bracket_depth(&raw) > 0 && i < lines.len() {
            raw.push(' ');
            raw.push_str(strip_comment(lines[i]).trim());
            i += 1;
        }
        let value = parse_value(&raw, lineno)?;
        sections
            .last_mut()
            .expect("prologue section")
            .entries
            .push(Entry {
                key,
                raw,
                value,
                line: lineno,
            });
    }
    Ok(sections)
}

// ---------------------------------------------------------------------------
// Problem documents
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Certify,
    CheckSos,
    OddPower,
    EpsilonMargin,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Certify => "certify",
            Mode::CheckSos => "check-sos",
            Mode::OddPower => "odd-power",
            Mode::EpsilonMargin => "epsilon-margin",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        Some(match s {
            "certify" => Mode::Certify,
            "check-sos" => Mode::CheckSos,
            "odd-power" => Mode::OddPower,
            "epsilon-margin" | "epsilon" => Mode::EpsilonMargin,
            _ => return None,
        })
    }
}

pub const DEFAULT_N_MAX: u32 = 10;
pub const DEFAULT_M_MAX: u32 = 11;
pub const MAX_CONSTRAINTS: usize = 16;

/// A certification task: find `N` and sums of squares `s_e` with
/// `f*g^N = sum_e s_e * h^e`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub variables: Vec<String>,
    pub grading: Grading,
    pub f: Polynomial,
    pub g: Polynomial,
    pub constraints: Vec<Polynomial>,
    pub mode: Mode,
    pub n_max: u32,
    pub m_max: u32,
    pub h_margin: Option<Polynomial>,
    pub homogeneous_required: bool,
}

impl ProblemSpec {
    /// Minimal problem over `variables` with a single grading block and the
    /// default multiplier.
    pub fn new(variables: Vec<String>, f: Polynomial) -> Self {
        let n = variables.len();
        let grading = Grading::single(n);
        let g = default_multiplier(&grading);
        ProblemSpec {
            variables,
            grading,
            f,
            g,
            constraints: Vec::new(),
            mode: Mode::CheckSos,
            n_max: DEFAULT_N_MAX,
            m_max: DEFAULT_M_MAX,
            h_margin: None,
            homogeneous_required: false,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    /// Checks the structural invariants, naming the offending field.
    pub fn validate(&self) -> Result<(), ParseError> {
        let n = self.n_vars();
        let all = std::iter::once(("f".to_string(), &self.f))
            .chain(std::iter::once(("g".to_string(), &self.g)))
            .chain(
                self.constraints
                    .iter()
                    .enumerate()
                    .map(|(i, h)| (format!("h[{}]", i + 1), h)),
            )
            .chain(self.h_margin.iter().map(|h| ("h_margin".to_string(), h)));
        for (name, p) in all {
            if p.n_vars() != n {
                return Err(ParseError::field(name, "variable count differs from `vars`"));
            }
        }
        if self.grading.n_vars() != n {
            return Err(ParseError::field("blocks", "blocks do not cover the declared variables"));
        }
        if self.f.is_zero() {
            return Err(ParseError::field("f", "f must be nonzero"));
        }
        if self.g.is_zero() {
            return Err(ParseError::field("g", "g must be nonzero"));
        }
        if self.constraints.len() > MAX_CONSTRAINTS {
            return Err(ParseError::field(
                "h",
                format!("at most {MAX_CONSTRAINTS} constraints are supported, got {}", self.constraints.len()),
            ));
        }
        if self.mode == Mode::OddPower && self.m_max.is_multiple_of(2) {
            return Err(ParseError::field("m_max", "m_max must be odd"));
        }
        if self.mode == Mode::EpsilonMargin && self.h_margin.is_none() {
            return Err(ParseError::field("h_margin", "required in epsilon-margin mode"));
        }
        if self.homogeneous_required {
            self.f
                .multidegree(&self.grading)
                .map_err(|e| ParseError::field("f", format!("not graded: {e}")))?;
            let gdeg = self
                .g
                .multidegree(&self.grading)
                .map_err(|e| ParseError::field("g", format!("not graded: {e}")))?;
            if gdeg.iter().any(|d| d % 2 != 0) {
                return Err(ParseError::field("g", format!("degree {gdeg:?} is not even in every block")));
            }
            for (i, h) in self.constraints.iter().enumerate() {
                let field = format!("h[{}]", i + 1);
                let deg = h
                    .multidegree(&self.grading)
                    .map_err(|e| ParseError::field(field.clone(), format!("not graded: {e}")))?;
                if deg.iter().any(|d| d % 2 != 0) {
                    return Err(ParseError::field(field, format!("degree {deg:?} is not even in every block")));
                }
            }
        }
        Ok(())
    }
}

/// `sum x_i^2` for a single block; for several blocks the product of the
/// per-block sums, which has positive degree in every block.
pub fn default_multiplier(grading: &Grading) -> Polynomial {
    let n = grading.n_vars();
    grading
        .blocks()
        .iter()
        .fold(Polynomial::one(n), |acc, r| {
            &acc * &Polynomial::sum_of_squared_vars(n, r.clone())
        })
}

const PROBLEM_KEYS: &[&str] = &[
    "vars",
    "blocks",
    "f",
    "g",
    "h",
    "mode",
    "n_max",
    "m_max",
    "h_margin",
    "homogeneous",
];

fn string_field(e: &Entry) -> Result<&str, ParseError> {
    e.value
        .text()
        .ok_or_else(|| ParseError::field(e.key.clone(), format!("expected a string, found a {}", e.value.describe())))
}

fn collect_identifiers(text: &str, out: &mut Vec<String>) {
    if let Ok(toks) = lex(text) {
        for (t, _) in toks {
            if let Tok::Ident(s) = t {
                if !out.contains(&s) {
                    out.push(s);
                }
            }
        }
    }
}

fn parse_grading(raw: &str, vars: &[String]) -> Result<Grading, ParseError> {
    let inner = raw
        .trim()
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| ParseError::field("blocks", "expected `(a, b | c, ...)`"))?;
    let mut sizes = Vec::new();
    let mut names = Vec::new();
    for group in inner.split('|') {
        let members: Vec<String> = group
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if members.is_empty() {
            return Err(ParseError::field("blocks", "empty block"));
        }
        sizes.push(members.len());
        names.extend(members);
    }
    if names != vars {
        return Err(ParseError::field(
            "blocks",
            "blocks must list every declared variable once, in declaration order",
        ));
    }
    Grading::from_sizes(&sizes).ok_or_else(|| ParseError::field("blocks", "empty block"))
}

fn parse_bool(e: &Entry) -> Result<bool, ParseError> {
    match string_field(e)? {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(ParseError::field(e.key.clone(), format!("expected true or false, found `{other}`"))),
    }
}

fn parse_uint(e: &Entry) -> Result<u32, ParseError> {
    let s = string_field(e)?;
    s.parse()
        .map_err(|_| ParseError::field(e.key.clone(), format!("expected a nonnegative integer, found `{s}`")))
}

/// Parses a problem document.
///
/// ```text
/// vars = x, y, z
/// blocks = (x, y | z)      # optional
/// f = "x^4*y^2 + x^2*y^4 + z^6 - 3*x^2*y^2*z^2"
/// g = "x^2 + y^2 + z^2"    # optional, defaults to the sum of squared variables
/// h = ["x^2 - y^2"]        # optional
/// mode = certify           # certify | check-sos | odd-power | epsilon-margin
/// n_max = 10
/// m_max = 7
/// h_margin = "x*y"
/// homogeneous = true
/// ```
///
/// When `vars` is omitted the variables are the identifiers of the polynomial
/// fields in order of first appearance.
pub fn parse_problem(document: &str) -> Result<ProblemSpec, ParseError> {
    let sections = parse_sections(document)?;
    if let Some(s) = sections.iter().find(|s| !s.name.is_empty()) {
        return Err(ParseError::Syntax {
            line: s.line,
            reason: format!("unexpected section `[{}]` in a problem file", s.name),
        });
    }
    let entries = &sections[0].entries;
    let mut seen = HashSet::new();
    for e in entries {
        if !PROBLEM_KEYS.contains(&e.key.as_str()) {
            return Err(ParseError::UnknownKey {
                key: e.key.clone(),
                line: e.line,
            });
        }
        if !seen.insert(e.key.as_str()) {
            return Err(ParseError::Syntax {
                line: e.line,
                reason: format!("duplicate key `{}`", e.key),
            });
        }
    }
    let get = |k: &str| entries.iter().find(|e| e.key == k);

    let f_entry = get("f").ok_or(ParseError::MissingField("f"))?;
    let h_texts: Vec<String> = match get("h") {
        None => Vec::new(),
        Some(e) => match &e.value {
            Value::List(items) => items
                .iter()
                .map(|v| {
                    v.text()
                        .map(str::to_string)
                        .ok_or_else(|| ParseError::field("h", "expected a list of strings"))
                })
                .collect::<Result<_, _>>()?,
            Value::Str(s) => vec![s.clone()],
            _ => return Err(ParseError::field("h", "expected a list of strings")),
        },
    };

    let variables: Vec<String> = match get("vars") {
        Some(e) => e
            .raw
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect(),
        None => {
            let mut ids = Vec::new();
            collect_identifiers(string_field(f_entry)?, &mut ids);
            for k in ["g", "h_margin"] {
                if let Some(e) = get(k) {
                    collect_identifiers(string_field(e)?, &mut ids);
                }
            }
            for h in &h_texts {
                collect_identifiers(h, &mut ids);
            }
            ids
        }
    };
    if variables.is_empty() {
        return Err(ParseError::field("vars", "no variables declared"));
    }
    for v in &variables {
        if !is_valid_variable_name(v) {
            return Err(ParseError::InvalidVariableName(v.clone()));
        }
    }
    {
        let mut uniq = HashSet::new();
        if let Some(dup) = variables.iter().find(|v| !uniq.insert(v.as_str())) {
            return Err(ParseError::field("vars", format!("duplicate variable `{dup}`")));
        }
    }

    let poly = |field: &str, text: &str| {
        parse_polynomial(text, &variables).map_err(|e| ParseError::field(field, e.to_string()))
    };

    let grading = match get("blocks") {
        Some(e) => parse_grading(&e.raw, &variables)?,
        None => Grading::single(variables.len()),
    };
    let f = poly("f", string_field(f_entry)?)?;
    let g = match get("g") {
        Some(e) => poly("g", string_field(e)?)?,
        None => default_multiplier(&grading),
    };
    let constraints = h_texts
        .iter()
        .enumerate()
        .map(|(i, t)| poly(&format!("h[{}]", i + 1), t))
        .collect::<Result<Vec<_>, _>>()?;
    let mode = match get("mode") {
        Some(e) => {
            let s = string_field(e)?;
            Mode::parse(s).ok_or_else(|| ParseError::field("mode", format!("unknown mode `{s}`")))?
        }
        None => Mode::CheckSos,
    };
    let n_max = get("n_max").map(parse_uint).transpose()?.unwrap_or(DEFAULT_N_MAX);
    let m_max = get("m_max").map(parse_uint).transpose()?.unwrap_or(DEFAULT_M_MAX);
    let h_margin = get("h_margin")
        .map(|e| string_field(e).and_then(|t| poly("h_margin", t)))
        .transpose()?;
    let homogeneous_required = get("homogeneous").map(parse_bool).transpose()?.unwrap_or(false);

    let spec = ProblemSpec {
        variables,
        grading,
        f,
        g,
        constraints,
        mode,
        n_max,
        m_max,
        h_margin,
        homogeneous_required,
    };
    spec.validate()?;
    Ok(spec)
}

/// Renders `spec` back into the problem-file dialect.
pub fn format_problem(spec: &ProblemSpec) -> String {
    let v = &spec.variables;
    let mut out = String::new();
    writeln!(out, "vars = {}", v.join(", ")).unwrap();
    if spec.grading.n_blocks() > 1 {
        writeln!(out, "blocks = {}", format_grading(&spec.grading, v)).unwrap();
    }
    writeln!(out, "f = \"{}\"", format_polynomial(&spec.f, v)).unwrap();
    writeln!(out, "g = \"{}\"", format_polynomial(&spec.g, v)).unwrap();
    if !spec.constraints.is_empty() {
        let hs: Vec<String> = spec
            .constraints
            .iter()
            .map(|h| format!("\"{}\"", format_polynomial(h, v)))
            .collect();
        writeln!(out, "h = [{}]", hs.join(", ")).unwrap();
    }
    writeln!(out, "mode = {}", spec.mode.as_str()).unwrap();
    writeln!(out, "n_max = {}", spec.n_max).unwrap();
    if spec.mode == Mode::OddPower {
        writeln!(out, "m_max = {}", spec.m_max).unwrap();
    }
    if let Some(h) = &spec.h_margin {
        writeln!(out, "h_margin = \"{}\"", format_polynomial(h, v)).unwrap();
    }
    writeln!(out, "homogeneous = {}", spec.homogeneous_required).unwrap();
    out
}

pub(crate) fn format_grading(grading: &Grading, vars: &[String]) -> String {
    let groups: Vec<String> = grading
        .blocks()
        .iter()
        .map(|r| vars[r.clone()].join(", "))
        .collect();
    format!("({})", groups.join(" | "))
}

pub(crate) fn parse_grading_field(raw: &str, vars: &[String]) -> Result<Grading, ParseError> {
    parse_grading(raw, vars)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::{int, rat};

    fn xyz() -> Vec<String> {
        vec!["x".into(), "y".into(), "z".into()]
    }

    #[test]
    fn parses_motzkin() {
        let p = parse_polynomial("x^4*y^2 + x^2*y^4 + z^6 - 3*x^2*y^2*z^2", &xyz()).unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(p.coeff(&Monomial::new(vec![2, 2, 2])), int(-3));
        assert_eq!(p.coeff(&Monomial::new(vec![0, 0, 6])), int(1));
    }

    #[test]
    fn parses_and_expands_stengle() {
        let xy: Vec<String> = vec!["x".into(), "y".into()];
        let p = parse_polynomial("x^3 + (x*y^2 - x^2 - 1)^2", &xy).unwrap();
        // x^2y^4 - 2x^3y^2 + x^4 + x^3 - 2xy^2 + 2x^2 + 1
        assert_eq!(p.len(), 7);
        assert_eq!(p.evaluate(&[int(0), int(0)]).unwrap(), int(1));
        assert_eq!(p.coeff(&Monomial::new(vec![3, 2])), int(-2));
        assert_eq!(p.coeff(&Monomial::new(vec![3, 0])), int(1));
    }

    #[test]
    fn parses_zero_and_juxtaposition() {
        assert!(parse_polynomial("0", &xyz()).unwrap().is_zero());
        let a = parse_polynomial("3x^2 y", &xyz()).unwrap();
        let b = parse_polynomial("3*x^2*y", &xyz()).unwrap();
        assert_eq!(a, b);
        let c = parse_polynomial("-1/2 x(x - y)", &xyz()).unwrap();
        assert_eq!(c, parse_polynomial("-1/2*x^2 + 1/2*x*y", &xyz()).unwrap());
        let d = parse_polynomial("x*-y", &xyz()).unwrap();
        assert_eq!(d, parse_polynomial("-x*y", &xyz()).unwrap());
    }

    #[test]
    fn parse_errors() {
        let v = xyz();
        assert!(matches!(parse_polynomial("x + w", &v), Err(ParseError::UnknownVariable { .. })));
        assert!(matches!(parse_polynomial("x^-1", &v), Err(ParseError::MalformedExponent { .. })));
        assert!(matches!(parse_polynomial("x^1.5", &v), Err(ParseError::MalformedExponent { .. })));
        assert!(matches!(parse_polynomial("x^1/2", &v), Err(ParseError::MalformedExponent { .. })));
        assert!(matches!(parse_polynomial("", &v), Err(ParseError::Empty)));
        assert!(matches!(parse_polynomial("   ", &v), Err(ParseError::Empty)));
        assert!(matches!(parse_polynomial("(x + y", &v), Err(ParseError::UnbalancedParens { .. })));
        assert!(matches!(parse_polynomial("x + y)", &v), Err(ParseError::UnbalancedParens { .. })));
        assert!(matches!(parse_polynomial("1/0", &v), Err(ParseError::DivisionByZero { .. })));
        assert!(parse_polynomial("x/y", &v).is_err());
        assert!(parse_polynomial("x +", &v).is_err());
        assert!(parse_polynomial("x $ y", &v).is_err());
    }

    #[test]
    fn format_examples() {
        let v: Vec<String> = vec!["x".into(), "y".into()];
        let p = parse_polynomial("y^2 + x^2", &v).unwrap();
        assert_eq!(format_polynomial(&p, &v), "x^2 + y^2");
        assert_eq!(format_polynomial(&Polynomial::zero(2), &v), "0");
        let q = parse_polynomial("x^2 - 3/4*y^2", &v).unwrap();
        assert_eq!(format_polynomial(&q, &v), "x^2 - 3/4*y^2");
        let r = parse_polynomial("-3/4*x*y + 2", &v).unwrap();
        assert_eq!(format_polynomial(&r, &v), "-3/4*x*y + 2");
        let one = Polynomial::constant(2, rat(-1, 3));
        assert_eq!(format_polynomial(&one, &v), "-1/3");
    }

    #[test]
    fn problem_defaults() {
        let spec = parse_problem("vars = x, y\nf = \"x^2+y^2\"\n").unwrap();
        assert_eq!(spec.mode, Mode::CheckSos);
        assert_eq!(spec.g, parse_polynomial("x^2+y^2", &spec.variables).unwrap());
        assert!(spec.constraints.is_empty());
        assert_eq!(spec.n_max, DEFAULT_N_MAX);
        assert_eq!(spec.m_max, DEFAULT_M_MAX);

        // variables inferred when omitted
        let spec = parse_problem("f = \"x^2+y^2\"").unwrap();
        assert_eq!(spec.variables, vec!["x".to_string(), "y".to_string()]);
    }

    #[test]
    fn problem_constrained_example() {
        let doc = r#"
            # worked constrained example
            vars = x, y
            f = "x^2 - 1/2*y^2"
            g = "x^2+y^2"
            h = ["x^2-y^2"]
            mode = certify
            homogeneous = true
        "#;
        let spec = parse_problem(doc).unwrap();
        assert_eq!(spec.constraints.len(), 1);
        assert_eq!(spec.mode, Mode::Certify);
        assert!(spec.homogeneous_required);
        assert_eq!(spec.constraints[0], parse_polynomial("x^2 - y^2", &spec.variables).unwrap());
    }

    #[test]
    fn problem_rejects_odd_constraint() {
        let doc = "vars = x, y\nf = \"x^2+y^2\"\nh = [\"x^2\", \"x^3 - y^3\"]\nhomogeneous = true\n";
        match parse_problem(doc) {
            Err(ParseError::Field { field, .. }) => assert_eq!(field, "h[2]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn problem_errors() {
        assert_eq!(parse_problem("vars = x\n"), Err(ParseError::MissingField("f")));
        assert!(matches!(
            parse_problem("vars = x\nf = \"x^2\"\ncolour = red\n"),
            Err(ParseError::UnknownKey { .. })
        ));
        assert!(matches!(
            parse_problem("vars = x\nf = \"x^2\"\nmode = odd-power\nm_max = 4\n"),
            Err(ParseError::Field { .. })
        ));
        assert!(matches!(
            parse_problem("vars = x\nf = \"x^2\"\nmode = epsilon-margin\n"),
            Err(ParseError::Field { .. })
        ));
        assert!(matches!(
            parse_problem("vars = x, y\nf = \"x^2 + q\"\n"),
            Err(ParseError::Field { .. })
        ));
    }

    #[test]
    fn problem_blocks() {
        let doc = "vars = x0, x1, y0, y1\nblocks = (x0, x1 | y0, y1)\nf = \"x0^2*y0^2 + x1^2*y1^2 + x0^2*y1^2 + x1^2*y0^2\"\nhomogeneous = true\n";
        let spec = parse_problem(doc).unwrap();
        assert_eq!(spec.grading.n_blocks(), 2);
        assert_eq!(spec.g.multidegree(&spec.grading).unwrap(), vec![2, 2]);
        let back = parse_problem(&format_problem(&spec)).unwrap();
        assert_eq!(back, spec);

        let bad = "vars = x, y, z\nblocks = (y | x, z)\nf = \"x^2\"\n";
        assert!(matches!(parse_problem(bad), Err(ParseError::Field { .. })));
    }

    #[test]
    fn multiline_lists() {
        let doc = "vars = x, y\nf = \"x^2\"\nh = [\n  \"x^2\",  # first\n  \"y^2\",\n]\n";
        let spec = parse_problem(doc).unwrap();
        assert_eq!(spec.constraints.len(), 2);
    }
}
