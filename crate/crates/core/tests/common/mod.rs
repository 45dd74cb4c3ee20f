//! Brute-force reference for the distribution analyzer: materialize the
//! whole trace, evaluate every instance from a test-side expression tree,
//! and bin the values by direct comparison against each range.

#![allow(dead_code)]

use std::collections::BTreeMap;

use npdvs::loc::{resolve_formula, DistributionAnalyzer, DistributionResult};
use npdvs::trace::{Header, Trace, TraceEvent};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const NAMES: [&str; 3] = ["x", "y", "z"];
pub const KEYS: [&str; 2] = ["a", "b"];

#[derive(Debug, Clone)]
pub enum Ast {
    Num(f64),
    Term { key: usize, name: usize, offset: usize },
    Neg(Box<Ast>),
    Bin(char, Box<Ast>, Box<Ast>),
}

impl Ast {
    pub fn render(&self) -> String {
        match self {
            Ast::Num(v) => format!("{v}"),
            Ast::Term { key, name, offset } => {
                if *offset == 0 {
                    format!("{}({}[i])", KEYS[*key], NAMES[*name])
                } else {
                    format!("{}({}[i+{}])", KEYS[*key], NAMES[*name], offset)
                }
            }
            Ast::Neg(e) => format!("-({})", e.render()),
            Ast::Bin(op, l, r) => format!("({} {} {})", l.render(), op, r.render()),
        }
    }

    fn terms(&self, out: &mut Vec<(usize, usize)>) {
        match self {
            Ast::Num(_) => {}
            Ast::Term { name, offset, .. } => out.push((*name, *offset)),
            Ast::Neg(e) => e.terms(out),
            Ast::Bin(_, l, r) => {
                l.terms(out);
                r.terms(out);
            }
        }
    }

    /// `None` once any division by zero happens, anywhere in the tree.
    fn eval(&self, by_name: &BTreeMap<usize, Vec<&TraceEvent>>, i: usize) -> Option<f64> {
        Some(match self {
            Ast::Num(v) => *v,
            Ast::Term { key, name, offset } => by_name[name][i + offset].values[*key],
            Ast::Neg(e) => -e.eval(by_name, i)?,
            Ast::Bin(op, l, r) => {
                let (a, b) = (l.eval(by_name, i)?, r.eval(by_name, i)?);
                match op {
                    '+' => a + b,
                    '-' => a - b,
                    '*' => a * b,
                    _ if b == 0.0 => return None,
                    _ => a / b,
                }
            }
        })
    }
}

fn random_ast(rng: &mut ChaCha8Rng, depth: u32) -> Ast {
    if depth == 0 || rng.random_bool(0.3) {
        if rng.random_bool(0.75) {
            Ast::Term {
                key: rng.random_range(0..KEYS.len()),
                name: rng.random_range(0..NAMES.len()),
                offset: rng.random_range(0..4),
            }
        } else {
            Ast::Num(rng.random_range(0..8) as f64 * 0.5)
        }
    } else if rng.random_bool(0.1) {
        Ast::Neg(Box::new(random_ast(rng, depth - 1)))
    } else {
        let op = ['+', '-', '*', '/'][rng.random_range(0..4)];
        Ast::Bin(op, Box::new(random_ast(rng, depth - 1)), Box::new(random_ast(rng, depth - 1)))
    }
}

#[derive(Debug, Clone)]
pub struct Case {
    pub trace: Trace,
    pub ast: Ast,
    /// "><", "<|" or "|>"
    pub op: &'static str,
    pub min: f64,
    pub step: f64,
    pub n: usize,
}

impl Case {
    pub fn max(&self) -> f64 {
        self.min + self.n as f64 * self.step
    }

    pub fn formula(&self) -> String {
        format!("{} {} {{{}, {}, {}}}", self.ast.render(), self.op, self.min, self.max(), self.step)
    }
}

/// A random trace of up to `max_events` rows plus a random distribution
/// formula over it. Values are multiples of 0.5 so that many instances
/// land exactly on grid points.
pub fn random_case(seed: u64, max_events: usize) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ast = loop {
        let a = random_ast(&mut rng, 3);
        let mut t = Vec::new();
        a.terms(&mut t);
        if !t.is_empty() {
            break a;
        }
    };
    let len = rng.random_range(0..=max_events);
    let weights: Vec<f64> = NAMES.iter().map(|_| rng.random_range(0.1..1.0)).collect();
    let mut trace = Trace::new(Header::from_names(&KEYS).unwrap());
    for _ in 0..len {
        let mut pick = rng.random_range(0.0..weights.iter().sum::<f64>());
        let mut name = 0;
        while pick >= weights[name] && name + 1 < NAMES.len() {
            pick -= weights[name];
            name += 1;
        }
        let values = KEYS.iter().map(|_| rng.random_range(-20..=20) as f64 * 0.5).collect();
        trace.events.push(TraceEvent::new(NAMES[name], values));
    }
    let op = ["><", "<|", "|>"][rng.random_range(0..3)];
    let step = [0.5, 1.0, 2.0, 5.0][rng.random_range(0..4)];
    Case {
        trace,
        ast,
        op,
        min: rng.random_range(-40..=10) as f64 * 0.5,
        step,
        n: rng.random_range(1..=30),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counts {
    pub bins: Vec<u64>,
    pub total: u64,
    pub undefined: u64,
    pub not_evaluable: u64,
}

/// Two passes: group events by name, then evaluate each instance.
pub fn oracle(case: &Case) -> Counts {
    let mut by_name: BTreeMap<usize, Vec<&TraceEvent>> = BTreeMap::new();
    for ev in &case.trace.events {
        let k = NAMES.iter().position(|n| *n == &*ev.name).unwrap();
        by_name.entry(k).or_default().push(ev);
    }
    let mut terms = Vec::new();
    case.ast.terms(&mut terms);
    for (name, _) in &terms {
        by_name.entry(*name).or_default();
    }
    let instances = terms
        .iter()
        .map(|(name, off)| by_name[name].len().saturating_sub(*off))
        .min()
        .unwrap();
    let seen = terms.iter().map(|(name, _)| by_name[name].len()).max().unwrap();

    let grid: Vec<f64> = (0..=case.n).map(|k| case.min + k as f64 * case.step).collect();
    let nbins = if case.op == "><" { grid.len() + 1 } else { grid.len() };
    let mut bins = vec![0u64; nbins];
    let mut undefined = 0;
    for i in 0..instances {
        let v = match case.ast.eval(&by_name, i) {
            Some(v) if v.is_finite() => v,
            _ => {
                undefined += 1;
                continue;
            }
        };
        match case.op {
            "><" => {
                let mut j = 0;
                while j < grid.len() && v > grid[j] {
                    j += 1;
                }
                bins[j] += 1;
            }
            "<|" => {
                for (j, g) in grid.iter().enumerate() {
                    if v <= *g {
                        bins[j] += 1;
                    }
                }
            }
            _ => {
                for (j, g) in grid.iter().enumerate() {
                    if v >= *g {
                        bins[j] += 1;
                    }
                }
            }
        }
    }
    Counts {
        bins,
        total: instances as u64,
        undefined,
        not_evaluable: (seen - instances) as u64,
    }
}

/// Feeds the trace one event at a time through the library analyzer.
pub fn streaming(case: &Case) -> (Counts, DistributionResult) {
    let f = resolve_formula(&case.formula()).unwrap_or_else(|e| panic!("{}: {e}", case.formula()));
    let mut a = DistributionAnalyzer::new(&f, &case.trace.header).unwrap();
    for ev in &case.trace.events {
        a.push(ev);
    }
    let r = a.finish();
    let counts = Counts {
        bins: r.bins.iter().map(|b| b.count).collect(),
        total: r.total_instances,
        undefined: r.undefined_instances,
        not_evaluable: r.not_evaluable,
    };
    (counts, r)
}
