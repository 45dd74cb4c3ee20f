//! Voltage/frequency table and the two scaling controllers.
//!
//! Both controllers are pure functions of (policy parameters, window
//! statistic, current level). The simulator owns the monitor counters and
//! calls them at window boundaries.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DvsError {
    #[error("invalid VF table: {0}")]
    InvalidTable(String),
    #[error("monitor window duration must be positive")]
    ZeroDuration,
    #[error("invalid policy parameter: {0}")]
    InvalidParameter(String),
}

/// One operating point. Voltage is held in millivolts so the built-in
/// ladder is exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VfOperatingPoint {
    pub freq_mhz: u32,
    pub voltage_mv: u32,
}

impl VfOperatingPoint {
    pub fn voltage(&self) -> f64 {
        self.voltage_mv as f64 / 1000.0
    }

    pub fn frequency(&self) -> f64 {
        self.freq_mhz as f64
    }
}

/// Operating points ordered from the highest frequency (level 0) down.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VfTable {
    levels: Vec<VfOperatingPoint>,
}

impl Default for VfTable {
    /// 600 MHz / 1.3 V down to 400 MHz / 1.1 V in 50 MHz / 50 mV steps.
    fn default() -> Self {
        let levels = (0..5)
            .map(|k| {
                let f = 600 - 50 * k;
                VfOperatingPoint {
                    freq_mhz: f,
                    voltage_mv: 1100 + (f - 400),
                }
            })
            .collect();
        VfTable { levels }
    }
}

impl VfTable {
    pub fn new(levels: Vec<VfOperatingPoint>) -> Result<Self, DvsError> {
        if levels.is_empty() {
            return Err(DvsError::InvalidTable("no levels".into()));
        }
        if levels.iter().any(|p| p.freq_mhz == 0 || p.voltage_mv == 0) {
            return Err(DvsError::InvalidTable("frequency and voltage must be positive".into()));
        }
        if levels.windows(2).any(|w| w[1].freq_mhz >= w[0].freq_mhz) {
            return Err(DvsError::InvalidTable("frequencies must be strictly decreasing".into()));
        }
        Ok(VfTable { levels })
    }

    /// Parse `600:1.3,550:1.25,...` (MHz:volts).
    pub fn parse(s: &str) -> Result<Self, DvsError> {
        let levels = s
            .split(',')
            .map(|item| {
                let (f, v) = item
                    .trim()
                    .split_once(':')
                    .ok_or_else(|| DvsError::InvalidTable(format!("expected MHz:V, found `{item}`")))?;
                let freq_mhz = f
                    .trim()
                    .parse::<u32>()
                    .map_err(|_| DvsError::InvalidTable(format!("bad frequency `{f}`")))?;
                let volts = v
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| DvsError::InvalidTable(format!("bad voltage `{v}`")))?;
                if !(volts > 0.0 && volts < 100.0) {
                    return Err(DvsError::InvalidTable(format!("bad voltage `{v}`")));
                }
                Ok(VfOperatingPoint {
                    freq_mhz,
                    voltage_mv: (volts * 1000.0).round() as u32,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        VfTable::new(levels)
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn point(&self, level: usize) -> VfOperatingPoint {
        self.levels[level]
    }

    pub fn levels(&self) -> &[VfOperatingPoint] {
        &self.levels
    }

    pub fn lowest_level(&self) -> usize {
        self.levels.len() - 1
    }

    /// Frequency of level 0; window lengths and latencies are expressed
    /// in cycles of this clock.
    pub fn reference_mhz(&self) -> u32 {
        self.levels[0].freq_mhz
    }

    pub fn level_of(&self, freq_mhz: u32) -> Option<usize> {
        self.levels.iter().position(|p| p.freq_mhz == freq_mhz)
    }
}

impl fmt::Display for VfTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.levels.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}:{}", p.freq_mhz, p.voltage())?;
        }
        Ok(())
    }
}

/// Traffic threshold for an operating frequency, scaled down from the
/// top threshold in proportion to frequency.
pub fn threshold_for_level(top_mbps: f64, freq_mhz: u32, reference_mhz: u32) -> f64 {
    (top_mbps * freq_mhz as f64 / reference_mhz as f64).floor()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
    Hold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DvsDecision {
    pub direction: Direction,
    pub level: usize,
}

fn step(table_len: usize, current: usize, direction: Direction) -> DvsDecision {
    let level = match direction {
        Direction::Up => current.saturating_sub(1),
        Direction::Down => (current + 1).min(table_len - 1),
        Direction::Hold => current,
    };
    let direction = if level == current { Direction::Hold } else { direction };
    DvsDecision { direction, level }
}

/// Traffic-driven, chip-wide policy.
#[derive(Debug, Clone, PartialEq)]
pub struct TdvsPolicy {
    pub top_threshold_mbps: f64,
    /// Monitor window in reference-clock cycles.
    pub window_cycles: u64,
    thresholds: Vec<f64>,
}

impl TdvsPolicy {
    pub fn new(top_threshold_mbps: f64, window_cycles: u64, table: &VfTable) -> Result<Self, DvsError> {
        if window_cycles == 0 {
            return Err(DvsError::InvalidParameter("TDVS window must be positive".into()));
        }
        if !(top_threshold_mbps.is_finite() && top_threshold_mbps >= 0.0) {
            return Err(DvsError::InvalidParameter("TDVS threshold must be non-negative".into()));
        }
        let reference = table.reference_mhz();
        let thresholds = table
            .levels()
            .iter()
            .map(|p| threshold_for_level(top_threshold_mbps, p.freq_mhz, reference))
            .collect();
        Ok(TdvsPolicy {
            top_threshold_mbps,
            window_cycles,
            thresholds,
        })
    }

    /// Per-level thresholds in Mbps, level 0 first.
    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// One step down when the window rate is below the current level's
    /// threshold, one step up when above, hold on a tie.
    pub fn decide(&self, window_rate_mbps: f64, current: usize) -> DvsDecision {
        let t = self.thresholds[current];
        let dir = if window_rate_mbps < t {
            Direction::Down
        } else if window_rate_mbps > t {
            Direction::Up
        } else {
            Direction::Hold
        };
        step(self.thresholds.len(), current, dir)
    }
}

/// Idle-time-driven, per-microengine policy.
#[derive(Debug, Clone, PartialEq)]
pub struct EdvsPolicy {
    pub idle_threshold: f64,
    pub window_cycles: u64,
}

impl EdvsPolicy {
    pub const DEFAULT_IDLE_THRESHOLD: f64 = 0.10;

    pub fn new(idle_threshold: f64, window_cycles: u64) -> Result<Self, DvsError> {
        if !(idle_threshold > 0.0 && idle_threshold < 1.0) {
            return Err(DvsError::InvalidParameter(format!(
                "idle threshold {idle_threshold} must lie in (0, 1)"
            )));
        }
        if window_cycles == 0 {
            return Err(DvsError::InvalidParameter("EDVS window must be positive".into()));
        }
        Ok(EdvsPolicy {
            idle_threshold,
            window_cycles,
        })
    }

    pub fn decide(&self, idle_frac: f64, current: usize, table_len: usize) -> DvsDecision {
        let dir = if idle_frac > self.idle_threshold {
            Direction::Down
        } else if idle_frac < self.idle_threshold {
            Direction::Up
        } else {
            Direction::Hold
        };
        step(table_len, current, dir)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DvsPolicy {
    Tdvs(TdvsPolicy),
    Edvs(EdvsPolicy),
}

impl DvsPolicy {
    pub fn window_cycles(&self) -> u64 {
        match self {
            DvsPolicy::Tdvs(p) => p.window_cycles,
            DvsPolicy::Edvs(p) => p.window_cycles,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DvsPolicy::Tdvs(_) => "tdvs",
            DvsPolicy::Edvs(_) => "edvs",
        }
    }
}

/// Bits accumulated at the ports during the current window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrafficWindow {
    pub bits: u64,
    pub packets: u64,
}

impl TrafficWindow {
    pub fn record(&mut self, bits: u64) {
        self.bits += bits;
        self.packets += 1;
    }

    pub fn reset(&mut self) {
        *self = TrafficWindow::default();
    }
}

/// Per-microengine activity counters for the current window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IdleWindow {
    pub busy: u64,
    pub idle: u64,
    pub stalled: u64,
}

impl IdleWindow {
    pub fn total(&self) -> u64 {
        self.busy + self.idle + self.stalled
    }

    pub fn idle_frac(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.idle as f64 / t as f64,
        }
    }
}

/// Average rate over a window; one bit per microsecond is one Mbps.
pub fn window_rate(bits: u64, duration_us: f64) -> Result<f64, DvsError> {
    if duration_us <= 0.0 {
        return Err(DvsError::ZeroDuration);
    }
    Ok(bits as f64 / duration_us)
}

/// Energy of the traffic accumulator: one add per arriving packet.
pub fn tdvs_overhead_energy(adder_energy_uj: f64, packets: u64) -> f64 {
    adder_energy_uj * packets as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_table_is_exact() {
        let t = VfTable::default();
        let f: Vec<u32> = t.levels().iter().map(|p| p.freq_mhz).collect();
        let v: Vec<f64> = t.levels().iter().map(|p| p.voltage()).collect();
        assert_eq!(f, [600, 550, 500, 450, 400]);
        assert_eq!(v, [1.3, 1.25, 1.2, 1.15, 1.1]);
    }

    #[test]
    fn threshold_ladder() {
        let t = VfTable::default();
        let p = TdvsPolicy::new(1000.0, 20_000, &t).unwrap();
        assert_eq!(p.thresholds(), [1000.0, 916.0, 833.0, 750.0, 666.0]);
        assert_eq!(threshold_for_level(1000.0, 550, 600), 916.0);
        assert_eq!(threshold_for_level(1000.0, 600, 600), 1000.0);
        assert_eq!(threshold_for_level(1400.0, 400, 600), 933.0);
    }

    #[test]
    fn tdvs_examples() {
        let t = VfTable::default();
        let p = TdvsPolicy::new(1000.0, 20_000, &t).unwrap();
        let d = p.decide(900.0, 0);
        assert_eq!(d, DvsDecision { direction: Direction::Down, level: 1 });
        assert_eq!(t.point(d.level).freq_mhz, 550);
        assert_eq!(t.point(d.level).voltage(), 1.25);
        assert_eq!(p.decide(1100.0, 0).direction, Direction::Hold);
        assert_eq!(p.decide(1000.0, 0).direction, Direction::Hold);
        assert_eq!(p.decide(10.0, 4), DvsDecision { direction: Direction::Hold, level: 4 });

        let p = TdvsPolicy::new(1400.0, 20_000, &t).unwrap();
        let level500 = t.level_of(500).unwrap();
        assert_eq!(p.thresholds()[level500], 1166.0);
        let d = p.decide(1200.0, level500);
        assert_eq!(t.point(d.level).freq_mhz, 550);
    }

    #[test]
    fn edvs_examples() {
        let p = EdvsPolicy::new(0.10, 40_000).unwrap();
        let d = p.decide(0.35, 0, 5);
        assert_eq!(d, DvsDecision { direction: Direction::Down, level: 1 });
        assert_eq!(p.decide(0.04, 0, 5).direction, Direction::Hold);
        assert_eq!(p.decide(0.10, 2, 5).direction, Direction::Hold);
        assert_eq!(p.decide(0.04, 2, 5).level, 1);
        assert!(EdvsPolicy::new(0.0, 1).is_err());
        assert!(EdvsPolicy::new(1.0, 1).is_err());
        assert!(EdvsPolicy::new(0.1, 0).is_err());
    }

    #[test]
    fn rates() {
        let r = window_rate(33_333_333, 33_333.0).unwrap();
        assert!((r - 1000.0).abs() < 0.01, "{r}");
        assert_eq!(window_rate(0, 5.0).unwrap(), 0.0);
        let w = 20_000.0 / 600.0;
        assert!((window_rate(12_000, w).unwrap() - 360.0).abs() < 1e-9);
        assert_eq!(window_rate(1, 0.0), Err(DvsError::ZeroDuration));
    }

    #[test]
    fn overhead() {
        assert_eq!(tdvs_overhead_energy(0.0005, 0), 0.0);
        assert!((tdvs_overhead_energy(0.0005, 100) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn table_parse_and_validation() {
        let t = VfTable::parse("600:1.3, 550:1.25,500:1.2,450:1.15,400:1.1").unwrap();
        assert_eq!(t, VfTable::default());
        assert_eq!(t.to_string(), "600:1.3,550:1.25,500:1.2,450:1.15,400:1.1");
        assert!(VfTable::parse("400:1.1,600:1.3").is_err());
        assert!(VfTable::parse("600").is_err());
        assert!(VfTable::parse("").is_err());
    }
}
