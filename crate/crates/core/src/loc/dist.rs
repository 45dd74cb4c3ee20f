use std::fmt;
use std::io::{self, Write};

use super::eval::{Evaluation, InstanceStream};
use super::{AnalysisPeriod, Constraint, DistOp, LocError, LocFormula};
use crate::trace::{Header, TraceEvent};

/// Number of bins an analyzer reports for `op` over `period`.
pub fn bin_count(period: &AnalysisPeriod, op: DistOp) -> usize {
    match op {
        DistOp::Partition => period.steps() + 2,
        DistOp::AtMost | DistOp::AtLeast => period.steps() + 1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BinBoundary {
    /// `(lo, hi]`; `None` stands for an infinite end. The last partition
    /// bin `(max, +inf)` is open on both sides.
    Interval { lo: Option<f64>, hi: Option<f64> },
    /// `(-inf, x]`
    AtMost(f64),
    /// `[x, +inf)`
    AtLeast(f64),
}

fn edge(x: f64) -> String {
    let s = format!("{x:.10}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

impl BinBoundary {
    /// Grid value used for plotting: upper edge, or the grid point.
    pub fn grid_value(&self) -> Option<f64> {
        match *self {
            BinBoundary::Interval { hi, .. } => hi,
            BinBoundary::AtMost(x) | BinBoundary::AtLeast(x) => Some(x),
        }
    }
}

impl fmt::Display for BinBoundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            BinBoundary::Interval { lo: None, hi: Some(h) } => write!(f, "(-inf,{}]", edge(h)),
            BinBoundary::Interval { lo: Some(l), hi: Some(h) } => write!(f, "({},{}]", edge(l), edge(h)),
            BinBoundary::Interval { lo: Some(l), hi: None } => write!(f, "({},+inf)", edge(l)),
            BinBoundary::Interval { lo: None, hi: None } => f.write_str("(-inf,+inf)"),
            BinBoundary::AtMost(x) => write!(f, "(-inf,{}]", edge(x)),
            BinBoundary::AtLeast(x) => write!(f, "[{},+inf)", edge(x)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bin {
    pub boundary: BinBoundary,
    pub count: u64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionResult {
    pub formula: LocFormula,
    pub op: DistOp,
    pub period: AnalysisPeriod,
    /// Evaluable instances, defined or not.
    pub total_instances: u64,
    pub undefined_instances: u64,
    pub not_evaluable: u64,
    pub bins: Vec<Bin>,
    /// Sum of the defined instance values; lets callers report a mean
    /// without a second pass.
    pub value_sum: f64,
}

impl DistributionResult {
    pub fn defined(&self) -> u64 {
        self.total_instances - self.undefined_instances
    }

    pub fn mean(&self) -> Option<f64> {
        let n = self.defined();
        (n > 0).then(|| self.value_sum / n as f64)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "# formula: {}", self.formula)?;
        writeln!(out, "# total: {}", self.total_instances)?;
        writeln!(out, "# undefined: {}", self.undefined_instances)?;
        writeln!(out, "# not_evaluable: {}", self.not_evaluable)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_boundary", "count", "fraction"])?;
        for b in &self.bins {
            w.write_record([b.boundary.to_string(), b.count.to_string(), b.fraction.to_string()])?;
        }
        w.flush()
    }

    /// Whitespace-separated `grid_value count fraction` rows for gnuplot.
    /// The open-ended partition bin is written at `max`.
    pub fn write_gnuplot<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "# {}", self.formula)?;
        for b in &self.bins {
            let x = b.boundary.grid_value().unwrap_or(self.period.max);
            writeln!(out, "{} {} {}", x, b.count, b.fraction)?;
        }
        Ok(())
    }
}

/// Grid cut for a cumulative result: for `<|` the smallest grid point
/// where at least `p` of the instances are `<=` it, for `|>` the largest
/// grid point where at least `p` are `>=` it.
pub fn percentile_cut(result: &DistributionResult, p: f64) -> Option<f64> {
    let qualifies = |b: &&Bin| b.fraction >= p;
    match result.op {
        DistOp::AtMost => result.bins.iter().find(qualifies).and_then(|b| b.boundary.grid_value()),
        DistOp::AtLeast => result.bins.iter().rev().find(qualifies).and_then(|b| b.boundary.grid_value()),
        DistOp::Partition => None,
    }
}

/// Bin arrays for all three operators at once.
#[derive(Debug, Clone)]
pub(crate) struct Histogram {
    grid: Vec<f64>,
    /// Indexed by the number of grid points strictly below the value,
    /// which is exactly the partition bin.
    below: Vec<u64>,
    /// Indexed by the number of grid points at or below the value.
    at_or_below: Vec<u64>,
    defined: u64,
    undefined: u64,
    sum: f64,
}

impl Histogram {
    pub(crate) fn new(period: &AnalysisPeriod) -> Self {
        let grid = period.grid();
        let n = grid.len() + 1;
        Histogram {
            grid,
            below: vec![0; n],
            at_or_below: vec![0; n],
            defined: 0,
            undefined: 0,
            sum: 0.0,
        }
    }

    pub(crate) fn add(&mut self, e: Evaluation) {
        match e {
            Evaluation::Value(v) => {
                self.below[self.grid.partition_point(|g| *g < v)] += 1;
                self.at_or_below[self.grid.partition_point(|g| *g <= v)] += 1;
                self.defined += 1;
                self.sum += v;
            }
            Evaluation::Undefined => self.undefined += 1,
            Evaluation::NotEvaluable => {}
        }
    }

    pub(crate) fn bins(&self, op: DistOp) -> Vec<Bin> {
        let frac = |c: u64| if self.defined == 0 { 0.0 } else { c as f64 / self.defined as f64 };
        let g = &self.grid;
        match op {
            DistOp::Partition => self
                .below
                .iter()
                .enumerate()
                .map(|(k, &count)| Bin {
                    boundary: BinBoundary::Interval {
                        lo: k.checked_sub(1).map(|j| g[j]),
                        hi: g.get(k).copied(),
                    },
                    count,
                    fraction: frac(count),
                })
                .collect(),
            DistOp::AtMost => {
                let mut acc = 0;
                g.iter()
                    .enumerate()
                    .map(|(k, &x)| {
                        acc += self.below[k];
                        Bin {
                            boundary: BinBoundary::AtMost(x),
                            count: acc,
                            fraction: frac(acc),
                        }
                    })
                    .collect()
            }
            DistOp::AtLeast => {
                let mut acc = 0;
                let mut out: Vec<Bin> = g
                    .iter()
                    .enumerate()
                    .rev()
                    .map(|(k, &x)| {
                        acc += self.at_or_below[k + 1];
                        Bin {
                            boundary: BinBoundary::AtLeast(x),
                            count: acc,
                            fraction: frac(acc),
                        }
                    })
                    .collect();
                out.reverse();
                out
            }
        }
    }
}

/// Streaming distribution analyzer. Memory is the fixed bin array plus
/// the instance window kept by [`InstanceStream`].
pub struct DistributionAnalyzer {
    formula: LocFormula,
    op: DistOp,
    period: AnalysisPeriod,
    stream: InstanceStream,
    hist: Histogram,
}

impl DistributionAnalyzer {
    pub fn new(formula: &LocFormula, header: &Header) -> Result<Self, LocError> {
        let Constraint::Distribution { op, period } = formula.constraint else {
            return Err(LocError::WrongKind { expected: "a distribution" });
        };
        Ok(DistributionAnalyzer {
            formula: formula.clone(),
            op,
            period,
            stream: InstanceStream::new(formula, header)?,
            hist: Histogram::new(&period),
        })
    }

    pub fn push(&mut self, ev: &TraceEvent) {
        let hist = &mut self.hist;
        self.stream.push(ev, |_, e| hist.add(e));
    }

    pub fn finish(self) -> DistributionResult {
        DistributionResult {
            bins: self.hist.bins(self.op),
            total_instances: self.hist.defined + self.hist.undefined,
            undefined_instances: self.hist.undefined,
            not_evaluable: self.stream.not_evaluable() as u64,
            value_sum: self.hist.sum,
            formula: self.formula,
            op: self.op,
            period: self.period,
        }
    }
}
