//! Trace data model and the line-oriented text format.
//!
//! A trace file starts with a header directive naming the annotation
//! columns, followed by one event per line:
//!
//! ```text
//! # annotations: cycle time energy p_loss
//! 365 1.573 0.768133 120 m2_pipeline
//! 367 1.580 0.784506 121 forward
//! ```
//!
//! Values are bound positionally to the header keys and the event name is
//! always the last column. Any other line starting with `#` is a comment.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::sync::Arc;

use thiserror::Error;

pub const CYCLE: &str = "cycle";
pub const TIME: &str = "time";
pub const ENERGY: &str = "energy";
pub const TOTAL_PKT: &str = "total_pkt";
pub const TOTAL_BIT: &str = "total_bit";
pub const IDLE_FRAC: &str = "idle_frac";
pub const P_LOSS: &str = "p_loss";

/// Annotations whose values must never decrease along a trace.
pub const CUMULATIVE_KEYS: [&str; 5] = [CYCLE, TIME, ENERGY, TOTAL_PKT, TOTAL_BIT];

const HEADER_DIRECTIVE: &str = "annotations:";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("trace has no `# annotations:` header directive")]
    MissingHeader,
    #[error("invalid identifier `{0}`")]
    InvalidIdentifier(String),
    #[error("duplicate annotation `{0}` in header")]
    DuplicateKey(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Name of an annotation column.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AnnotationKey(String);

impl AnnotationKey {
    pub fn new(name: impl Into<String>) -> Result<Self, TraceError> {
        let name = name.into();
        if is_identifier(&name) {
            Ok(AnnotationKey(name))
        } else {
            Err(TraceError::InvalidIdentifier(name))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Render `value` with the decimal precision used in trace files.
    pub fn format_value(&self, value: f64) -> String {
        match self.0.as_str() {
            CYCLE | TOTAL_PKT | TOTAL_BIT | P_LOSS => format!("{value:.0}"),
            TIME => format!("{value:.3}"),
            ENERGY | IDLE_FRAC => format!("{value:.6}"),
            _ => format!("{value}"),
        }
    }

    /// Round `value` exactly as writing and re-reading it would.
    pub fn quantize(&self, value: f64) -> f64 {
        self.format_value(value)
            .parse()
            .expect("formatted float always parses")
    }
}

impl fmt::Display for AnnotationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Ordered list of annotation keys declared by a trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    keys: Vec<AnnotationKey>,
}

impl Header {
    pub fn new(keys: Vec<AnnotationKey>) -> Result<Self, TraceError> {
        for (i, k) in keys.iter().enumerate() {
            if keys[..i].contains(k) {
                return Err(TraceError::DuplicateKey(k.0.clone()));
            }
        }
        Ok(Header { keys })
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self, TraceError> {
        let keys = names
            .iter()
            .map(|n| AnnotationKey::new(n.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        Header::new(keys)
    }

    pub fn keys(&self) -> &[AnnotationKey] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.keys.iter().position(|k| k.as_str() == name)
    }

    pub fn directive(&self) -> String {
        let names: Vec<&str> = self.keys.iter().map(|k| k.as_str()).collect();
        format!("# {HEADER_DIRECTIVE} {}", names.join(" "))
    }

    fn parse_directive(line: &str) -> Option<Result<Self, TraceError>> {
        let rest = line.strip_prefix('#')?.trim_start();
        let rest = rest.strip_prefix(HEADER_DIRECTIVE)?;
        let names: Vec<&str> = rest.split_whitespace().collect();
        Some(Header::from_names(&names))
    }
}

/// One timestamped event; `values` is positional with respect to the
/// trace header.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub name: Arc<str>,
    pub values: Vec<f64>,
}

impl TraceEvent {
    pub fn new(name: impl Into<Arc<str>>, values: Vec<f64>) -> Self {
        TraceEvent {
            name: name.into(),
            values,
        }
    }

    pub fn get(&self, header: &Header, key: &str) -> Option<f64> {
        header.position(key).map(|p| self.values[p])
    }
}

/// Parse one data row. `line_no` is used only for error messages.
pub fn parse_trace_line(line: &str, header: &Header, line_no: usize) -> Result<TraceEvent, TraceError> {
    let err = |msg: String| TraceError::Parse { line: line_no, msg };
    let cols: Vec<&str> = line.split_whitespace().collect();
    if cols.len() != header.len() + 1 {
        return Err(err(format!(
            "expected {} columns ({} annotations + event name), found {}",
            header.len() + 1,
            header.len(),
            cols.len()
        )));
    }
    let (name, nums) = cols.split_last().expect("at least one column");
    if !is_identifier(name) {
        return Err(err(format!("invalid event name `{name}`")));
    }
    let values = nums
        .iter()
        .zip(header.keys())
        .map(|(s, k)| {
            s.parse::<f64>()
                .map_err(|_| err(format!("malformed number `{s}` for annotation `{k}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TraceEvent::new(*name, values))
}

/// A cumulative annotation decreased between two consecutive rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityWarning {
    pub line: usize,
    pub event_position: usize,
    pub key: String,
    pub previous: f64,
    pub value: f64,
}

impl fmt::Display for MonotonicityWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "line {} (event {}): `{}` decreased from {} to {}",
            self.line, self.event_position, self.key, self.previous, self.value
        )
    }
}

/// Streaming trace reader. Yields events in file order and records
/// monotonicity warnings as it goes.
pub struct TraceReader<R> {
    source: R,
    header: Header,
    line_no: usize,
    position: usize,
    cumulative: Vec<(usize, f64)>,
    warnings: Vec<MonotonicityWarning>,
    buf: String,
}

impl<R: BufRead> TraceReader<R> {
    pub fn new(mut source: R) -> Result<Self, TraceError> {
        let mut buf = String::new();
        let mut line_no = 0;
        loop {
            buf.clear();
            if source.read_line(&mut buf)? == 0 {
                return Err(TraceError::MissingHeader);
            }
            line_no += 1;
            let line = buf.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(h) = Header::parse_directive(line) {
                let header = h?;
                let cumulative = CUMULATIVE_KEYS
                    .iter()
                    .filter_map(|k| header.position(k))
                    .map(|p| (p, f64::NEG_INFINITY))
                    .collect();
                return Ok(TraceReader {
                    source,
                    header,
                    line_no,
                    position: 0,
                    cumulative,
                    warnings: Vec::new(),
                    buf,
                });
            }
            if !line.starts_with('#') {
                return Err(TraceError::MissingHeader);
            }
        }
    }

    pub fn header(&self) -> &Header {
        &self.header
    }

    pub fn warnings(&self) -> &[MonotonicityWarning] {
        &self.warnings
    }

    fn next_event(&mut self) -> Result<Option<TraceEvent>, TraceError> {
        loop {
            self.buf.clear();
            if self.source.read_line(&mut self.buf)? == 0 {
                return Ok(None);
            }
            self.line_no += 1;
            let line = self.buf.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let ev = parse_trace_line(line, &self.header, self.line_no)?;
            for (pos, prev) in self.cumulative.iter_mut() {
                let v = ev.values[*pos];
                if v < *prev {
                    self.warnings.push(MonotonicityWarning {
                        line: self.line_no,
                        event_position: self.position,
                        key: self.header.keys[*pos].0.clone(),
                        previous: *prev,
                        value: v,
                    });
                }
                *prev = v;
            }
            self.position += 1;
            return Ok(Some(ev));
        }
    }

    /// Materialize the remaining events.
    pub fn into_trace(mut self) -> Result<(Trace, Vec<MonotonicityWarning>), TraceError> {
        let mut events = Vec::new();
        while let Some(ev) = self.next_event()? {
            events.push(ev);
        }
        Ok((
            Trace {
                header: self.header,
                events,
            },
            self.warnings,
        ))
    }
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = Result<TraceEvent, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_event().transpose()
    }
}

/// Convenience wrapper: read a whole trace from a byte stream.
pub fn read_trace<R: BufRead>(source: R) -> Result<(Trace, Vec<MonotonicityWarning>), TraceError> {
    TraceReader::new(source)?.into_trace()
}

pub struct TraceWriter<W: Write> {
    out: W,
    header: Header,
    line: String,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(mut out: W, header: Header) -> io::Result<Self> {
        writeln!(out, "{}", header.directive())?;
        Ok(TraceWriter {
            out,
            header,
            line: String::new(),
        })
    }

    pub fn write_event(&mut self, ev: &TraceEvent) -> io::Result<()> {
        debug_assert_eq!(ev.values.len(), self.header.len());
        self.line.clear();
        for (k, v) in self.header.keys.iter().zip(&ev.values) {
            self.line.push_str(&k.format_value(*v));
            self.line.push(' ');
        }
        self.line.push_str(&ev.name);
        self.line.push('\n');
        self.out.write_all(self.line.as_bytes())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// A fully materialized trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: Header,
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new(header: Header) -> Self {
        Trace {
            header,
            events: Vec::new(),
        }
    }

    pub fn index(&self) -> EventIndex {
        EventIndex::build(&self.events)
    }

    pub fn write_to<W: Write>(&self, out: W) -> io::Result<W> {
        let mut w = TraceWriter::new(out, self.header.clone())?;
        for ev in &self.events {
            w.write_event(ev)?;
        }
        Ok(w.into_inner())
    }
}

/// Positions of every instance of every event name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventIndex {
    positions: BTreeMap<Arc<str>, Vec<usize>>,
}

impl EventIndex {
    pub fn build(events: &[TraceEvent]) -> Self {
        let mut positions: BTreeMap<Arc<str>, Vec<usize>> = BTreeMap::new();
        for (pos, ev) in events.iter().enumerate() {
            positions.entry(ev.name.clone()).or_default().push(pos);
        }
        EventIndex { positions }
    }

    /// Position of instance `i` (0-based) of `name`.
    pub fn instance_at(&self, name: &str, i: usize) -> Option<usize> {
        self.positions.get(name).and_then(|v| v.get(i)).copied()
    }

    pub fn count(&self, name: &str) -> usize {
        self.positions.get(name).map_or(0, Vec::len)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.positions.keys().map(|k| &**k)
    }
}
