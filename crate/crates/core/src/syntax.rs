//! Parser for a lavaan-style model description language.
//!
//! Supported statements, one per line (or separated by `;`):
//!
//! ```text
//! f1 =~ NA*A1 + A2 + A3     # measurement; first loading fixed to 1 unless NA*
//! i  ~  c1 + b*c2           # regression, optional label
//! f1 ~~ 1*f1                # variance / covariance
//! ```
//!
//! A term may carry one modifier: a number fixes the coefficient, `NA` frees
//! it, and any other identifier attaches a label.

use std::collections::{HashMap, HashSet};
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientStatus {
    Free,
    Fixed(f64),
    Labelled(String),
}

impl CoefficientStatus {
    pub fn is_fixed(&self) -> bool {
        matches!(self, CoefficientStatus::Fixed(_))
    }

    pub fn label(&self) -> Option<&str> {
        match self {
            CoefficientStatus::Labelled(l) => Some(l),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Relation {
    Measurement,
    Regression,
    Covariance,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Measurement => "=~",
            Relation::Regression => "~",
            Relation::Covariance => "~~",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Indicator {
    pub name: String,
    pub status: CoefficientStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentDef {
    pub name: String,
    pub indicators: Vec<Indicator>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regression {
    pub outcome: String,
    pub predictor: String,
    pub status: CoefficientStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Covariance {
    pub left: String,
    pub right: String,
    pub status: CoefficientStatus,
}

impl Covariance {
    pub fn is_variance(&self) -> bool {
        self.left == self.right
    }
}

/// A statement that repeated an earlier one with a compatible status.
#[derive(Debug, Clone, PartialEq)]
pub struct DuplicateStatement {
    pub line: usize,
    pub relation: Relation,
    pub lhs: String,
    pub rhs: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelSpec {
    pub latent_defs: Vec<LatentDef>,
    pub regressions: Vec<Regression>,
    pub covariances: Vec<Covariance>,
    pub observed_vars: Vec<String>,
    pub latent_vars: Vec<String>,
    /// Growth-model mean structure: observed intercepts fixed at 0, latent means free.
    pub mean_structure: bool,
    pub duplicates: Vec<DuplicateStatement>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("model text contains no statements")]
    Empty,
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown operator `{op}` at line {line}, column {column}")]
    UnknownOperator {
        line: usize,
        column: usize,
        op: String,
    },
    #[error("conflicting values for `{lhs} {relation} {rhs}` at line {line}: {first} vs {second}")]
    ConflictingFixed {
        line: usize,
        relation: Relation,
        lhs: String,
        rhs: String,
        first: String,
        second: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
enum Modifier {
    None,
    Free,
    Fixed(f64),
    Label(String),
}

#[derive(Debug, Clone)]
struct Term {
    name: String,
    modifier: Modifier,
}

#[derive(Debug, Clone)]
struct Statement {
    line: usize,
    relation: Relation,
    lhs: String,
    terms: Vec<Term>,
}

pub fn parse_model(text: &str) -> Result<ModelSpec, ParseError> {
    let statements = tokenize(text)?;
    if statements.is_empty() {
        return Err(ParseError::Empty);
    }
    assemble(statements)
}

impl ModelSpec {
    pub fn with_mean_structure(mut self, on: bool) -> Self {
        self.mean_structure = on;
        self
    }

    pub fn is_latent(&self, name: &str) -> bool {
        self.latent_vars.iter().any(|v| v == name)
    }

    pub fn is_observed(&self, name: &str) -> bool {
        self.observed_vars.iter().any(|v| v == name)
    }

    /// Copy with every list sorted, for order-insensitive comparison.
    pub fn canonical(&self) -> ModelSpec {
        let mut out = self.clone();
        out.latent_defs.sort_by(|a, b| a.name.cmp(&b.name));
        for def in &mut out.latent_defs {
            def.indicators.sort_by(|a, b| a.name.cmp(&b.name));
        }
        out.regressions
            .sort_by(|a, b| (&a.outcome, &a.predictor).cmp(&(&b.outcome, &b.predictor)));
        for cov in &mut out.covariances {
            if cov.left > cov.right {
                std::mem::swap(&mut cov.left, &mut cov.right);
            }
        }
        out.covariances
            .sort_by(|a, b| (&a.left, &a.right).cmp(&(&b.left, &b.right)));
        out.observed_vars.sort();
        out.latent_vars.sort();
        out.duplicates.clear();
        out
    }
}

fn status_prefix(status: &CoefficientStatus, explicit_free: bool) -> String {
    match status {
        CoefficientStatus::Free if explicit_free => "NA*".to_string(),
        CoefficientStatus::Free => String::new(),
        CoefficientStatus::Fixed(v) => format!("{v}*"),
        CoefficientStatus::Labelled(l) => format!("{l}*"),
    }
}

/// Canonical printer; loadings always carry an explicit modifier so the
/// first-indicator default never applies on re-parse.
impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for def in &self.latent_defs {
            let rhs: Vec<String> = def
                .indicators
                .iter()
                .map(|ind| format!("{}{}", status_prefix(&ind.status, true), ind.name))
                .collect();
            writeln!(f, "{} =~ {}", def.name, rhs.join(" + "))?;
        }
        for reg in &self.regressions {
            writeln!(
                f,
                "{} ~ {}{}",
                reg.outcome,
                status_prefix(&reg.status, false),
                reg.predictor
            )?;
        }
        for cov in &self.covariances {
            writeln!(
                f,
                "{} ~~ {}{}",
                cov.left,
                status_prefix(&cov.status, false),
                cov.right
            )?;
        }
        Ok(())
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_alphabetic() || c == '_' || c == '.' => {}
        _ => return false,
    }
    chars.all(|c| c.is_alphanumeric() || c == '_' || c == '.')
}

/// Column (1-based, in chars) of the first non-space char at or after `offset`.
fn column_of(segment: &str, base_col: usize, offset: usize) -> usize {
    let skipped = segment[offset..]
        .chars()
        .take_while(|c| c.is_whitespace())
        .count();
    base_col + segment[..offset].chars().count() + skipped
}

fn tokenize(text: &str) -> Result<Vec<Statement>, ParseError> {
    let mut out = Vec::new();
    for (line_idx, raw_line) in text.lines().enumerate() {
        let line = line_idx + 1;
        let content = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        };
        let mut col = 1;
        for segment in content.split(';') {
            if !segment.trim().is_empty() {
                out.push(parse_statement(segment, line, col)?);
            }
            col += segment.chars().count() + 1;
        }
    }
    Ok(out)
}

const OPERATOR_CHARS: &[char] = &['=', '~', '<', '>', ':', '|'];

fn parse_statement(segment: &str, line: usize, base_col: usize) -> Result<Statement, ParseError> {
    let op_pos = segment.find(OPERATOR_CHARS).ok_or_else(|| ParseError::Syntax {
        line,
        column: column_of(segment, base_col, 0),
        message: "expected one of `=~`, `~`, `~~`".to_string(),
    })?;
    let op_end = segment[op_pos..]
        .find(|c: char| !OPERATOR_CHARS.contains(&c))
        .map(|e| op_pos + e)
        .unwrap_or(segment.len());
    let op = &segment[op_pos..op_end];
    let op_col = base_col + segment[..op_pos].chars().count();
    let relation = match op {
        "=~" => Relation::Measurement,
        "~" => Relation::Regression,
        "~~" => Relation::Covariance,
        other => {
            return Err(ParseError::UnknownOperator {
                line,
                column: op_col,
                op: other.to_string(),
            })
        }
    };

    let lhs = segment[..op_pos].trim();
    if !is_identifier(lhs) {
        return Err(ParseError::Syntax {
            line,
            column: column_of(segment, base_col, 0),
            message: format!("invalid left-hand side `{lhs}`"),
        });
    }

    let rhs_text = &segment[op_end..];
    if let Some(extra) = rhs_text.find(OPERATOR_CHARS) {
        return Err(ParseError::Syntax {
            line,
            column: base_col + segment[..op_end + extra].chars().count(),
            message: "more than one operator in statement".to_string(),
        });
    }

    let mut terms = Vec::new();
    let mut offset = op_end;
    for piece in rhs_text.split('+') {
        let col = column_of(segment, base_col, offset);
        terms.push(parse_term(piece, line, col)?);
        offset += piece.len() + 1;
    }

    Ok(Statement {
        line,
        relation,
        lhs: lhs.to_string(),
        terms,
    })
}

fn parse_term(piece: &str, line: usize, column: usize) -> Result<Term, ParseError> {
    let syntax = |message: String| ParseError::Syntax {
        line,
        column,
        message,
    };
    let trimmed = piece.trim();
    if trimmed.is_empty() {
        return Err(syntax("empty term".to_string()));
    }
    let parts: Vec<&str> = trimmed.split('*').map(str::trim).collect();
    let (modifier, name) = match parts.as_slice() {
        [name] => (Modifier::None, *name),
        [modifier, name] => {
            let m = if *modifier == "NA" {
                Modifier::Free
            } else if let Ok(v) = modifier.parse::<f64>() {
                if !v.is_finite() {
                    return Err(syntax(format!("fixed value `{modifier}` is not finite")));
                }
                Modifier::Fixed(v)
            } else if is_identifier(modifier) {
                Modifier::Label(modifier.to_string())
            } else {
                return Err(syntax(format!("invalid modifier `{modifier}`")));
            };
            (m, *name)
        }
        _ => return Err(syntax("at most one modifier per term".to_string())),
    };
    if name == "1" {
        return Err(syntax("intercept terms are not supported".to_string()));
    }
    if !is_identifier(name) {
        return Err(syntax(format!("invalid variable name `{name}`")));
    }
    Ok(Term {
        name: name.to_string(),
        modifier,
    })
}

fn status_text(status: &CoefficientStatus) -> String {
    match status {
        CoefficientStatus::Free => "free".to_string(),
        CoefficientStatus::Fixed(v) => format!("fixed {v}"),
        CoefficientStatus::Labelled(l) => format!("label {l}"),
    }
}

/// Resolves a repeated entry. Returns the status to keep.
fn merge_status(
    existing: &CoefficientStatus,
    incoming: &CoefficientStatus,
) -> Result<CoefficientStatus, (String, String)> {
    if existing == incoming {
        return Ok(existing.clone());
    }
    if existing.is_fixed() || incoming.is_fixed() {
        return Err((status_text(existing), status_text(incoming)));
    }
    match (existing, incoming) {
        (CoefficientStatus::Labelled(a), CoefficientStatus::Labelled(b)) if a != b => {
            Err((status_text(existing), status_text(incoming)))
        }
        (CoefficientStatus::Labelled(_), _) => Ok(existing.clone()),
        _ => Ok(incoming.clone()),
    }
}

fn assemble(statements: Vec<Statement>) -> Result<ModelSpec, ParseError> {
    let mut spec = ModelSpec::default();
    let mut latent_index: HashMap<String, usize> = HashMap::new();
    let mut entry_index: HashMap<(Relation, String, String), usize> = HashMap::new();
    let mut explicit_entries: HashSet<(Relation, String, String)> = HashSet::new();

    for st in &statements {
        for term in &st.terms {
            let status_of = |m: &Modifier, is_first: bool| match m {
                Modifier::None if is_first => CoefficientStatus::Fixed(1.0),
                Modifier::None | Modifier::Free => CoefficientStatus::Free,
                Modifier::Fixed(v) => CoefficientStatus::Fixed(*v),
                Modifier::Label(l) => CoefficientStatus::Labelled(l.clone()),
            };
            let (lhs, rhs) = match st.relation {
                Relation::Covariance if st.lhs > term.name => (term.name.clone(), st.lhs.clone()),
                _ => (st.lhs.clone(), term.name.clone()),
            };
            let key = (st.relation, lhs, rhs);
            let is_first = st.relation == Relation::Measurement
                && latent_index
                    .get(&st.lhs)
                    .map(|&i| spec.latent_defs[i].indicators.is_empty())
                    .unwrap_or(true);
            let status = status_of(&term.modifier, is_first);

            if let Some(&idx) = entry_index.get(&key) {
                let slot = match st.relation {
                    Relation::Measurement => {
                        let def = &mut spec.latent_defs[latent_index[&st.lhs]];
                        &mut def.indicators[idx].status
                    }
                    Relation::Regression => &mut spec.regressions[idx].status,
                    Relation::Covariance => &mut spec.covariances[idx].status,
                };
                // an unmodified repeat adds nothing; an explicit modifier
                // replaces a default status and must agree with another explicit one
                let explicit = !matches!(term.modifier, Modifier::None);
                let was_explicit = explicit_entries.contains(&key);
                let merged = match (explicit, was_explicit) {
                    (false, _) => Ok(slot.clone()),
                    (true, false) => Ok(status),
                    (true, true) => merge_status(slot, &status),
                };
                if explicit {
                    explicit_entries.insert(key.clone());
                }
                match merged {
                    Ok(kept) => *slot = kept,
                    Err((first, second)) => {
                        return Err(ParseError::ConflictingFixed {
                            line: st.line,
                            relation: st.relation,
                            lhs: st.lhs.clone(),
                            rhs: term.name.clone(),
                            first,
                            second,
                        })
                    }
                }
                spec.duplicates.push(DuplicateStatement {
                    line: st.line,
                    relation: st.relation,
                    lhs: st.lhs.clone(),
                    rhs: term.name.clone(),
                });
                continue;
            }

            if !matches!(term.modifier, Modifier::None) {
                explicit_entries.insert(key.clone());
            }
            match st.relation {
                Relation::Measurement => {
                    let li = *latent_index.entry(st.lhs.clone()).or_insert_with(|| {
                        spec.latent_defs.push(LatentDef {
                            name: st.lhs.clone(),
                            indicators: Vec::new(),
                        });
                        spec.latent_defs.len() - 1
                    });
                    let def = &mut spec.latent_defs[li];
                    entry_index.insert(key, def.indicators.len());
                    def.indicators.push(Indicator {
                        name: term.name.clone(),
                        status,
                    });
                }
                Relation::Regression => {
                    entry_index.insert(key, spec.regressions.len());
                    spec.regressions.push(Regression {
                        outcome: st.lhs.clone(),
                        predictor: term.name.clone(),
                        status,
                    });
                }
                Relation::Covariance => {
                    entry_index.insert(key, spec.covariances.len());
                    spec.covariances.push(Covariance {
                        left: st.lhs.clone(),
                        right: term.name.clone(),
                        status,
                    });
                }
            }
        }
    }

    classify_variables(&mut spec);
    Ok(spec)
}

/// Latents are the left-hand sides of `=~`; every other name is observed.
/// Observed order is first appearance across loadings, regressions, covariances.
fn classify_variables(spec: &mut ModelSpec) {
    spec.latent_vars = spec.latent_defs.iter().map(|d| d.name.clone()).collect();
    let mut observed: Vec<String> = Vec::new();
    let mut note = |name: &str, latent: &[String]| {
        if !latent.iter().any(|l| l == name) && !observed.iter().any(|o| o == name) {
            observed.push(name.to_string());
        }
    };
    for def in &spec.latent_defs {
        for ind in &def.indicators {
            note(&ind.name, &spec.latent_vars);
        }
    }
    for reg in &spec.regressions {
        note(&reg.outcome, &spec.latent_vars);
        note(&reg.predictor, &spec.latent_vars);
    }
    for cov in &spec.covariances {
        note(&cov.left, &spec.latent_vars);
        note(&cov.right, &spec.latent_vars);
    }
    spec.observed_vars = observed;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FindingKind {
    UnknownVariable(String),
    UnscaledLatent(String),
    DuplicateStatement(DuplicateStatement),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Finding {
    pub severity: Severity,
    pub kind: FindingKind,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        match &self.kind {
            FindingKind::UnknownVariable(v) => write!(f, "{level}: unknown variable `{v}`"),
            FindingKind::UnscaledLatent(v) => write!(
                f,
                "{level}: latent `{v}` is unscaled (no fixed loading and no fixed variance)"
            ),
            FindingKind::DuplicateStatement(d) => write!(
                f,
                "{level}: duplicate statement `{} {} {}` at line {}",
                d.lhs, d.relation, d.rhs, d.line
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has_errors(&self) -> bool {
        self.findings.iter().any(|f| f.severity == Severity::Error)
    }

    pub fn unscaled_latents(&self) -> impl Iterator<Item = &str> {
        self.findings.iter().filter_map(|f| match &f.kind {
            FindingKind::UnscaledLatent(v) => Some(v.as_str()),
            _ => None,
        })
    }
}

/// A latent is scaled when one of its loadings or its variance is fixed to a nonzero value.
pub fn latent_is_scaled(spec: &ModelSpec, latent: &str) -> bool {
    let fixed_loading = spec
        .latent_defs
        .iter()
        .filter(|d| d.name == latent)
        .flat_map(|d| d.indicators.iter())
        .any(|i| matches!(i.status, CoefficientStatus::Fixed(v) if v != 0.0));
    let fixed_variance = spec.covariances.iter().any(|c| {
        c.left == latent
            && c.right == latent
            && matches!(c.status, CoefficientStatus::Fixed(v) if v != 0.0)
    });
    fixed_loading || fixed_variance
}

/// Checks identification conventions and, when `data_vars` is given, that every
/// observed name is available in the data.
pub fn validate_spec(spec: &ModelSpec, data_vars: Option<&[String]>) -> ValidationReport {
    let mut report = ValidationReport::default();
    if let Some(known) = data_vars {
        for v in &spec.observed_vars {
            if !known.iter().any(|k| k == v) {
                report.findings.push(Finding {
                    severity: Severity::Error,
                    kind: FindingKind::UnknownVariable(v.clone()),
                });
            }
        }
    }
    for latent in &spec.latent_vars {
        if !latent_is_scaled(spec, latent) {
            report.findings.push(Finding {
                severity: Severity::Warning,
                kind: FindingKind::UnscaledLatent(latent.clone()),
            });
        }
    }
    for dup in &spec.duplicates {
        report.findings.push(Finding {
            severity: Severity::Warning,
            kind: FindingKind::DuplicateStatement(dup.clone()),
        });
    }
    report
}
