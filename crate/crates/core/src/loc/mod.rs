//! Logic-of-Constraints formulas: parsing, assertion checking and
//! distribution analysis over traces.
//!
//! A formula is an arithmetic expression over annotation accessors such
//! as `time(forward[i+100])`, followed either by a relation and a constant
//! (an assertion that must hold for every `i`) or by one of the
//! distribution operators with an analysis period `{min, max, step}`.
//!
//! | token | meaning |
//! |-------|---------|
//! | `><`  | partition into `(-inf,min]`, `(min,min+step]`, ..., `(max,+inf)` |
//! | `<\|` | cumulative: instances `<= x` at each grid point |
//! | `\|>` | complementary: instances `>= x` at each grid point |

mod dist;
mod eval;
mod parse;

use std::fmt;

use thiserror::Error;

pub use dist::{bin_count, percentile_cut, Bin, BinBoundary, DistributionAnalyzer, DistributionResult};
pub use eval::{
    analyze_distribution, check, check_events, evaluate_instance, Checker, Evaluation, InstanceStream,
    ViolationReport,
};
pub use parse::parse_formula;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LocError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("only the single index variable `i` is allowed, found `{0}`")]
    MultipleIndexVariables(String),
    #[error("negative offset at byte {0}: only `i+k` offsets are supported")]
    NegativeOffset(usize),
    #[error("invalid analysis period: {0}")]
    InvalidPeriod(String),
    #[error("formula references no annotation")]
    NoAnnotation,
    #[error("annotation `{0}` is not declared in the trace header")]
    UnknownAnnotation(String),
    #[error("expected {expected} formula")]
    WrongKind { expected: &'static str },
}

/// `annotation(event[i+offset])`
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AnnotationRef {
    pub annotation: String,
    pub event: String,
    pub offset: usize,
}

impl fmt::Display for AnnotationRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.offset == 0 {
            write!(f, "{}({}[i])", self.annotation, self.event)
        } else {
            write!(f, "{}({}[i+{}])", self.annotation, self.event, self.offset)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Number(f64),
    Term(AnnotationRef),
    Neg(Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn visit_terms<'a>(&'a self, f: &mut impl FnMut(&'a AnnotationRef)) {
        match self {
            Expr::Number(_) => {}
            Expr::Term(t) => f(t),
            Expr::Neg(e) => e.visit_terms(f),
            Expr::Binary(_, l, r) => {
                l.visit_terms(f);
                r.visit_terms(f);
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Number(n) => write!(f, "{n}"),
            Expr::Term(t) => write!(f, "{t}"),
            Expr::Neg(e) => write!(f, "-({e})"),
            Expr::Binary(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Lt,
    Ge,
    Gt,
    Eq,
    Ne,
}

impl Relation {
    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Relation::Le => lhs <= rhs,
            Relation::Lt => lhs < rhs,
            Relation::Ge => lhs >= rhs,
            Relation::Gt => lhs > rhs,
            Relation::Eq => lhs == rhs,
            Relation::Ne => lhs != rhs,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Le => "<=",
            Relation::Lt => "<",
            Relation::Ge => ">=",
            Relation::Gt => ">",
            Relation::Eq => "==",
            Relation::Ne => "!=",
        }
    }
}

/// Distribution operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DistOp {
    /// `><`: histogram over the partition of the real line.
    Partition,
    /// `<|`: fraction of instances at or below each grid point.
    AtMost,
    /// `|>`: fraction of instances at or above each grid point.
    AtLeast,
}

impl DistOp {
    pub fn symbol(self) -> &'static str {
        match self {
            DistOp::Partition => "><",
            DistOp::AtMost => "<|",
            DistOp::AtLeast => "|>",
        }
    }
}

/// `{min, max, step}`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisPeriod {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

/// Refuse periods that would allocate absurd bin arrays.
const MAX_GRID_STEPS: usize = 10_000_000;

impl AnalysisPeriod {
    pub fn new(min: f64, max: f64, step: f64) -> Result<Self, LocError> {
        if !(min.is_finite() && max.is_finite() && step.is_finite()) {
            return Err(LocError::InvalidPeriod("bounds must be finite".into()));
        }
        if min >= max {
            return Err(LocError::InvalidPeriod(format!("min {min} must be below max {max}")));
        }
        if step <= 0.0 {
            return Err(LocError::InvalidPeriod(format!("step {step} must be positive")));
        }
        let p = AnalysisPeriod { min, max, step };
        if p.steps_unchecked() > MAX_GRID_STEPS as f64 {
            return Err(LocError::InvalidPeriod(format!(
                "more than {MAX_GRID_STEPS} bins"
            )));
        }
        Ok(p)
    }

    fn steps_unchecked(&self) -> f64 {
        let q = (self.max - self.min) / self.step;
        let r = q.round();
        // (2.25 - 0.5) / 0.01 lands a hair above 175
        if (q - r).abs() <= 1e-9 * r.max(1.0) {
            r
        } else {
            q.ceil()
        }
    }

    /// Number of interior intervals between `min` and `max`; the last one
    /// is clamped at `max` when the range is not a multiple of `step`.
    pub fn steps(&self) -> usize {
        self.steps_unchecked() as usize
    }

    /// Grid points `min, min+step, ..., max`.
    pub fn grid(&self) -> Vec<f64> {
        let n = self.steps();
        let mut g: Vec<f64> = (0..n).map(|k| self.min + k as f64 * self.step).collect();
        g.push(self.max);
        g
    }
}

impl fmt::Display for AnalysisPeriod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}, {}, {}}}", self.min, self.max, self.step)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    Assertion { relation: Relation, bound: f64 },
    Distribution { op: DistOp, period: AnalysisPeriod },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocFormula {
    pub lhs: Expr,
    pub constraint: Constraint,
}

impl LocFormula {
    pub fn is_assertion(&self) -> bool {
        matches!(self.constraint, Constraint::Assertion { .. })
    }

    pub fn terms(&self) -> Vec<&AnnotationRef> {
        let mut out = Vec::new();
        self.lhs.visit_terms(&mut |t| out.push(t));
        out
    }

    /// Largest `k` over all `event[i+k]` references. Evaluating instance
    /// `i` needs only instances `i..=i+k` of each referenced event.
    pub fn max_offset(&self) -> usize {
        self.terms().iter().map(|t| t.offset).max().unwrap_or(0)
    }
}

impl fmt::Display for LocFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.constraint {
            Constraint::Assertion { relation, bound } => {
                write!(f, "{} {} {}", self.lhs, relation.symbol(), bound)
            }
            Constraint::Distribution { op, period } => {
                write!(f, "{} {} {}", self.lhs, op.symbol(), period)
            }
        }
    }
}

/// Built-in formula shorthands.
pub fn shorthand(name: &str) -> Option<&'static str> {
    match name {
        "power100" => Some(
            "(energy(forward[i+100]) - energy(forward[i])) / (time(forward[i+100]) - time(forward[i])) |> {0.5, 2.25, 0.01}",
        ),
        // time is in microseconds, so bits per microsecond is already Mbps
        "tput100" => Some(
            "(total_bit(forward[i+100]) - total_bit(forward[i])) / (time(forward[i+100]) - time(forward[i])) <| {100, 3300, 10}",
        ),
        _ => None,
    }
}

/// Parse `text`, expanding the built-in shorthand names first.
pub fn resolve_formula(text: &str) -> Result<LocFormula, LocError> {
    parse_formula(shorthand(text.trim()).unwrap_or(text))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_offset_examples() {
        let eq1 = parse_formula("time(forward[i+100]) - time(forward[i]) >< {40, 80, 5}").unwrap();
        assert_eq!(eq1.max_offset(), 100);
        assert_eq!(parse_formula("energy(forward[i]) >= 0").unwrap().max_offset(), 0);
        assert_eq!(resolve_formula("power100").unwrap().max_offset(), 100);
    }

    #[test]
    fn bin_counts() {
        let p = AnalysisPeriod::new(40.0, 80.0, 5.0).unwrap();
        assert_eq!(bin_count(&p, DistOp::Partition), 10);
        let p = AnalysisPeriod::new(100.0, 3300.0, 10.0).unwrap();
        assert_eq!(bin_count(&p, DistOp::AtMost), 321);
        let p = AnalysisPeriod::new(0.0, 1.0, 0.3).unwrap();
        assert_eq!(bin_count(&p, DistOp::Partition), 6);
        let g = p.grid();
        assert_eq!(g.len(), 5);
        assert_eq!(*g.last().unwrap(), 1.0);
        let p = AnalysisPeriod::new(0.5, 2.25, 0.01).unwrap();
        assert_eq!(p.steps(), 175);
    }

    #[test]
    fn invalid_periods() {
        assert!(AnalysisPeriod::new(5.0, 5.0, 1.0).is_err());
        assert!(AnalysisPeriod::new(6.0, 5.0, 1.0).is_err());
        assert!(AnalysisPeriod::new(0.0, 5.0, 0.0).is_err());
        assert!(AnalysisPeriod::new(0.0, 5.0, -1.0).is_err());
        assert!(AnalysisPeriod::new(0.0, 1e12, 1e-6).is_err());
    }
}
