use std::collections::{HashMap, VecDeque};

use super::{BinaryOp, Constraint, Expr, LocError, LocFormula};
use crate::trace::{EventIndex, Header, Trace, TraceEvent};

/// Outcome of evaluating one formula instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Evaluation {
    Value(f64),
    /// Division by zero or another non-finite intermediate.
    Undefined,
    /// Some referenced event instance does not exist in the trace.
    NotEvaluable,
}

#[derive(Debug, Clone)]
enum Compiled {
    Num(f64),
    Term { name: usize, offset: usize, slot: usize },
    Neg(Box<Compiled>),
    Binary(BinaryOp, Box<Compiled>, Box<Compiled>),
}

struct Undefined;

impl Compiled {
    fn eval(&self, fetch: &impl Fn(usize, usize, usize) -> f64) -> Result<f64, Undefined> {
        let v = match self {
            Compiled::Num(n) => *n,
            Compiled::Term { name, offset, slot } => fetch(*name, *offset, *slot),
            Compiled::Neg(e) => -e.eval(fetch)?,
            Compiled::Binary(op, l, r) => {
                let a = l.eval(fetch)?;
                let b = r.eval(fetch)?;
                match op {
                    BinaryOp::Add => a + b,
                    BinaryOp::Sub => a - b,
                    BinaryOp::Mul => a * b,
                    BinaryOp::Div => {
                        if b == 0.0 {
                            return Err(Undefined);
                        }
                        a / b
                    }
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Undefined)
        }
    }
}

/// A formula bound to a concrete trace header.
#[derive(Debug, Clone)]
struct Program {
    names: Vec<String>,
    max_offsets: Vec<usize>,
    /// Per referenced event name, the header positions it needs.
    columns: Vec<Vec<usize>>,
    expr: Compiled,
}

impl Program {
    fn compile(formula: &LocFormula, header: &Header) -> Result<Self, LocError> {
        let mut p = Program {
            names: Vec::new(),
            max_offsets: Vec::new(),
            columns: Vec::new(),
            expr: Compiled::Num(0.0),
        };
        p.expr = p.lower(&formula.lhs, header)?;
        Ok(p)
    }

    fn lower(&mut self, e: &Expr, header: &Header) -> Result<Compiled, LocError> {
        Ok(match e {
            Expr::Number(n) => Compiled::Num(*n),
            Expr::Neg(inner) => Compiled::Neg(Box::new(self.lower(inner, header)?)),
            Expr::Binary(op, l, r) => Compiled::Binary(
                *op,
                Box::new(self.lower(l, header)?),
                Box::new(self.lower(r, header)?),
            ),
            Expr::Term(t) => {
                let col = header
                    .position(&t.annotation)
                    .ok_or_else(|| LocError::UnknownAnnotation(t.annotation.clone()))?;
                let name = match self.names.iter().position(|n| *n == t.event) {
                    Some(n) => n,
                    None => {
                        self.names.push(t.event.clone());
                        self.max_offsets.push(0);
                        self.columns.push(Vec::new());
                        self.names.len() - 1
                    }
                };
                self.max_offsets[name] = self.max_offsets[name].max(t.offset);
                let cols = &mut self.columns[name];
                let slot = match cols.iter().position(|c| *c == col) {
                    Some(s) => s,
                    None => {
                        cols.push(col);
                        cols.len() - 1
                    }
                };
                Compiled::Term {
                    name,
                    offset: t.offset,
                    slot,
                }
            }
        })
    }

    fn run(&self, fetch: impl Fn(usize, usize, usize) -> f64) -> Evaluation {
        match self.expr.eval(&fetch) {
            Ok(v) => Evaluation::Value(v),
            Err(Undefined) => Evaluation::Undefined,
        }
    }
}

/// Evaluate instance `i` against a materialized trace.
pub fn evaluate_instance(
    formula: &LocFormula,
    trace: &Trace,
    index: &EventIndex,
    i: usize,
) -> Result<Evaluation, LocError> {
    let prog = Program::compile(formula, &trace.header)?;
    let mut rows: Vec<Vec<usize>> = Vec::with_capacity(prog.names.len());
    for (name, max_off) in prog.names.iter().zip(&prog.max_offsets) {
        let mut positions = Vec::with_capacity(max_off + 1);
        for off in 0..=*max_off {
            match index.instance_at(name, i + off) {
                Some(p) => positions.push(p),
                None => return Ok(Evaluation::NotEvaluable),
            }
        }
        rows.push(positions);
    }
    Ok(prog.run(|name, offset, slot| {
        trace.events[rows[name][offset]].values[prog.columns[name][slot]]
    }))
}

/// Single-pass evaluator: feed events in trace order, receive formula
/// instances `0, 1, 2, ...` as soon as all the events they reference have
/// been seen.
///
/// For each referenced event name only instances `i..=i+max_offset` are
/// retained, plus however far one name runs ahead of the slowest one.
pub struct InstanceStream {
    prog: Program,
    lookup: HashMap<String, usize>,
    buffers: Vec<VecDeque<Box<[f64]>>>,
    seen: Vec<usize>,
    next: usize,
}

impl InstanceStream {
    pub fn new(formula: &LocFormula, header: &Header) -> Result<Self, LocError> {
        let prog = Program::compile(formula, header)?;
        let lookup = prog
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        let n = prog.names.len();
        Ok(InstanceStream {
            prog,
            lookup,
            buffers: vec![VecDeque::new(); n],
            seen: vec![0; n],
            next: 0,
        })
    }

    pub fn push(&mut self, ev: &TraceEvent, mut sink: impl FnMut(usize, Evaluation)) {
        let Some(&slot) = self.lookup.get(&*ev.name) else {
            return;
        };
        let snapshot: Box<[f64]> = self.prog.columns[slot].iter().map(|&c| ev.values[c]).collect();
        self.buffers[slot].push_back(snapshot);
        self.seen[slot] += 1;
        while self
            .buffers
            .iter()
            .zip(&self.prog.max_offsets)
            .all(|(b, m)| b.len() > *m)
        {
            let bufs = &self.buffers;
            let value = self.prog.run(|name, offset, s| bufs[name][offset][s]);
            sink(self.next, value);
            for b in &mut self.buffers {
                b.pop_front();
            }
            self.next += 1;
        }
    }

    /// Instances that were evaluated so far.
    pub fn evaluated(&self) -> usize {
        self.next
    }

    /// Candidate instances (those where at least one referenced event
    /// instance exists) that could not be evaluated.
    pub fn not_evaluable(&self) -> usize {
        self.seen.iter().copied().max().unwrap_or(0).saturating_sub(self.next)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViolationReport {
    pub formula: LocFormula,
    /// `(i, lhs value)` for every failing instance.
    pub violations: Vec<(usize, f64)>,
    pub evaluated_instances: usize,
    pub undefined_instances: usize,
    pub not_evaluable: usize,
}

impl ViolationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Streaming assertion checker.
pub struct Checker {
    formula: LocFormula,
    stream: InstanceStream,
    violations: Vec<(usize, f64)>,
    undefined: usize,
}

impl Checker {
    pub fn new(formula: &LocFormula, header: &Header) -> Result<Self, LocError> {
        if !formula.is_assertion() {
            return Err(LocError::WrongKind { expected: "an assertion" });
        }
        Ok(Checker {
            formula: formula.clone(),
            stream: InstanceStream::new(formula, header)?,
            violations: Vec::new(),
            undefined: 0,
        })
    }

    pub fn push(&mut self, ev: &TraceEvent) {
        let Constraint::Assertion { relation, bound } = self.formula.constraint else {
            unreachable!("checked in new")
        };
        let violations = &mut self.violations;
        let undefined = &mut self.undefined;
        self.stream.push(ev, |i, e| match e {
            Evaluation::Value(v) if !relation.holds(v, bound) => violations.push((i, v)),
            Evaluation::Value(_) => {}
            Evaluation::Undefined => *undefined += 1,
            Evaluation::NotEvaluable => {}
        });
    }

    pub fn finish(self) -> ViolationReport {
        ViolationReport {
            evaluated_instances: self.stream.evaluated(),
            not_evaluable: self.stream.not_evaluable(),
            formula: self.formula,
            violations: self.violations,
            undefined_instances: self.undefined,
        }
    }
}

/// Check an assertion over a materialized trace.
pub fn check(formula: &LocFormula, trace: &Trace) -> Result<ViolationReport, LocError> {
    check_events(formula, &trace.header, trace.events.iter())
}

pub fn check_events<'a>(
    formula: &LocFormula,
    header: &Header,
    events: impl IntoIterator<Item = &'a TraceEvent>,
) -> Result<ViolationReport, LocError> {
    let mut c = Checker::new(formula, header)?;
    for ev in events {
        c.push(ev);
    }
    Ok(c.finish())
}

/// Run a distribution analyzer over a materialized trace.
pub fn analyze_distribution(
    formula: &LocFormula,
    trace: &Trace,
) -> Result<super::DistributionResult, LocError> {
    let mut a = super::DistributionAnalyzer::new(formula, &trace.header)?;
    for ev in &trace.events {
        a.push(ev);
    }
    Ok(a.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loc::parse_formula;

    fn trace(header: &[&str], rows: &[(&str, &[f64])]) -> Trace {
        let mut t = Trace::new(Header::from_names(header).unwrap());
        for (n, v) in rows {
            t.events.push(TraceEvent::new(*n, v.to_vec()));
        }
        t
    }

    #[test]
    fn direct_subtraction_and_boundary() {
        let t = trace(&["time", "energy"], &[("forward", &[1.0, 0.0]), ("forward", &[2.5, 1.0])]);
        let idx = t.index();
        let f = parse_formula("time(forward[i+1]) - time(forward[i]) >= 0").unwrap();
        assert_eq!(evaluate_instance(&f, &t, &idx, 0).unwrap(), Evaluation::Value(1.5));
        assert_eq!(evaluate_instance(&f, &t, &idx, 1).unwrap(), Evaluation::NotEvaluable);
    }

    #[test]
    fn division_by_zero_is_undefined() {
        let t = trace(&["time", "energy"], &[("forward", &[1.0, 3.0]), ("forward", &[2.5, 4.0])]);
        let idx = t.index();
        let f = parse_formula("energy(forward[i]) / (time(forward[i]) - time(forward[i])) > 0").unwrap();
        for i in 0..2 {
            assert_eq!(evaluate_instance(&f, &t, &idx, i).unwrap(), Evaluation::Undefined);
        }
        let r = check(&f, &t).unwrap();
        assert_eq!(r.undefined_instances, 2);
        assert!(r.passed());
    }

    #[test]
    fn unknown_annotation_is_an_error() {
        let t = trace(&["time"], &[("forward", &[1.0])]);
        let f = parse_formula("energy(forward[i]) >= 0").unwrap();
        assert_eq!(
            check(&f, &t).unwrap_err(),
            LocError::UnknownAnnotation("energy".into())
        );
        assert!(evaluate_instance(&f, &t, &t.index(), 0).is_err());
    }

    /// Ten enq/deq pairs, gap 50 except pair 3 which has 60.
    fn enq_deq(gaps: &[f64]) -> Trace {
        let mut rows = Vec::new();
        let mut cycle = 0.0;
        for g in gaps {
            rows.push(("enq", vec![cycle]));
            rows.push(("deq", vec![cycle + g]));
            cycle += 100.0;
        }
        let mut t = Trace::new(Header::from_names(&["cycle"]).unwrap());
        for (n, v) in rows {
            t.events.push(TraceEvent::new(n, v));
        }
        t
    }

    #[test]
    fn latency_violation_found_by_enumeration() {
        let mut gaps = [50.0; 10];
        gaps[3] = 60.0;
        let t = enq_deq(&gaps);
        let f = parse_formula("cycle(deq[i]) - cycle(enq[i]) <= 50").unwrap();
        let r = check(&f, &t).unwrap();
        assert_eq!(r.violations, vec![(3, 60.0)]);
        assert_eq!(r.evaluated_instances, 10);
        assert_eq!(r.not_evaluable, 0);
    }

    #[test]
    fn inclusive_bound() {
        let t = enq_deq(&[50.0; 10]);
        let f = parse_formula("cycle(deq[i]) - cycle(enq[i]) <= 50").unwrap();
        assert!(check(&f, &t).unwrap().passed());
    }

    #[test]
    fn empty_trace() {
        let t = Trace::new(Header::from_names(&["cycle"]).unwrap());
        let f = parse_formula("cycle(deq[i]) - cycle(enq[i]) <= 50").unwrap();
        let r = check(&f, &t).unwrap();
        assert_eq!((r.violations.len(), r.evaluated_instances), (0, 0));
    }

    #[test]
    fn checker_rejects_distribution() {
        let h = Header::from_names(&["cycle"]).unwrap();
        let f = parse_formula("cycle(a[i]) >< {0, 1, 1}").unwrap();
        assert!(Checker::new(&f, &h).is_err());
    }

    #[test]
    fn unbalanced_names_still_pair_up() {
        // all enq first, then all deq
        let mut t = Trace::new(Header::from_names(&["cycle"]).unwrap());
        for k in 0..5 {
            t.events.push(TraceEvent::new("enq", vec![k as f64]));
        }
        for k in 0..3 {
            t.events.push(TraceEvent::new("deq", vec![k as f64 + 70.0]));
        }
        let f = parse_formula("cycle(deq[i]) - cycle(enq[i]) <= 69").unwrap();
        let r = check(&f, &t).unwrap();
        assert_eq!(r.evaluated_instances, 3);
        assert_eq!(r.not_evaluable, 2);
        assert_eq!(r.violations, vec![(0, 70.0), (1, 70.0), (2, 70.0)]);
    }
}
