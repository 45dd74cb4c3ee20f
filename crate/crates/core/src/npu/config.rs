use std::collections::BTreeSet;
use std::fmt;

use super::SimError;
use crate::dvs::VfTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Receive,
    Transmit,
}

/// Per-packet cost of a benchmark. Memory access counts are on the
/// receive path; `tx_compute_cycles` is the share of `compute_cycles`
/// executed by the transmit microengine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadProfile {
    pub name: String,
    pub compute_cycles: u32,
    pub sram_accesses: u32,
    pub sdram_accesses: u32,
    pub poll_cycles: u32,
    pub tx_compute_cycles: u32,
}

impl WorkloadProfile {
    pub const BUILTIN: [&'static str; 4] = ["ipfwdr", "url", "nat", "md4"];

    pub fn builtin(name: &str) -> Option<Self> {
        let (compute, sram, sdram) = match name {
            "ipfwdr" => (700, 4, 8),
            "url" => (900, 10, 12),
            "nat" => (300, 1, 0),
            "md4" => (1600, 16, 6),
            _ => return None,
        };
        Some(WorkloadProfile {
            name: name.to_string(),
            compute_cycles: compute,
            sram_accesses: sram,
            sdram_accesses: sdram,
            poll_cycles: 8,
            tx_compute_cycles: 20,
        })
    }

    pub fn memory_accesses(&self) -> u32 {
        self.sram_accesses + self.sdram_accesses
    }

    /// Uncontended fifo-to-forward latency in reference cycles.
    pub fn service_cycles(&self, sram_latency: u32, sdram_latency: u32) -> u64 {
        self.compute_cycles as u64
            + self.sram_accesses as u64 * sram_latency as u64
            + self.sdram_accesses as u64 * sdram_latency as u64
    }
}

/// `k_dyn * V^2 * f * activity + k_static * V`, with `f` in MHz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerCoefficients {
    /// W per (V^2 * MHz); lumps switched capacitance and activity.
    pub k_dyn: f64,
    /// Activity factor while idle or stalled.
    pub alpha_idle: f64,
    /// W per V.
    pub k_static: f64,
    /// Energy of one traffic-monitor accumulation, in microjoules.
    pub adder_energy_uj: f64,
}

impl Default for PowerCoefficients {
    /// Calibrated so a busy microengine at 600 MHz / 1.3 V draws 0.25 W.
    fn default() -> Self {
        PowerCoefficients {
            k_dyn: 0.25 / (1.3 * 1.3 * 600.0),
            alpha_idle: 0.1,
            k_static: 0.0,
            adder_energy_uj: 0.0005,
        }
    }
}

/// Which event kinds the simulator writes to its trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    Fifo,
    Forward,
    Pipeline,
    Idle,
}

impl EventKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fifo" => Some(EventKind::Fifo),
            "forward" => Some(EventKind::Forward),
            "pipeline" => Some(EventKind::Pipeline),
            "idle" => Some(EventKind::Idle),
            _ => None,
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Fifo => "fifo",
            EventKind::Forward => "forward",
            EventKind::Pipeline => "pipeline",
            EventKind::Idle => "idle",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmissionFilter(BTreeSet<EventKind>);

impl Default for EmissionFilter {
    fn default() -> Self {
        EmissionFilter([EventKind::Fifo, EventKind::Forward, EventKind::Idle].into_iter().collect())
    }
}

impl EmissionFilter {
    pub fn new(kinds: impl IntoIterator<Item = EventKind>) -> Self {
        EmissionFilter(kinds.into_iter().collect())
    }

    pub fn contains(&self, k: EventKind) -> bool {
        self.0.contains(&k)
    }

    pub fn parse(s: &str) -> Option<Self> {
        let kinds = s
            .split(',')
            .map(str::trim)
            .filter(|x| !x.is_empty())
            .map(EventKind::parse)
            .collect::<Option<BTreeSet<_>>>()?;
        Some(EmissionFilter(kinds))
    }
}

impl fmt::Display for EmissionFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.0.iter().map(|k| k.to_string()).collect();
        f.write_str(&names.join(","))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpuConfig {
    pub threads_per_me: usize,
    /// One role per microengine; its length is the microengine count.
    pub roles: Vec<Role>,
    pub ports: u16,
    /// Memory latencies and occupancies in reference-clock cycles; they
    /// stay fixed in wall time when a microengine changes frequency.
    pub sram_latency: u32,
    pub sdram_latency: u32,
    /// Minimum spacing between successive accesses accepted by a memory
    /// controller; bounds memory bandwidth.
    pub sram_occupancy: u32,
    pub sdram_occupancy: u32,
    pub queue_capacity: usize,
    pub profile: WorkloadProfile,
    pub power: PowerCoefficients,
    pub vf_table: VfTable,
    pub emit: EmissionFilter,
    /// Simulated span in reference-clock cycles.
    pub sim_length: u64,
    /// Monitor window for `m<k>_idle` events when no policy sets one.
    pub monitor_window: u64,
    pub scaling_penalty_us: u32,
    pub seed: u64,
}

impl Default for NpuConfig {
    fn default() -> Self {
        NpuConfig {
            threads_per_me: 4,
            roles: Self::split_roles(6, 4),
            ports: 16,
            sram_latency: 26,
            sdram_latency: 100,
            sram_occupancy: 4,
            sdram_occupancy: 41,
            queue_capacity: 256,
            profile: WorkloadProfile::builtin("ipfwdr").expect("builtin"),
            power: PowerCoefficients::default(),
            vf_table: VfTable::default(),
            emit: EmissionFilter::default(),
            sim_length: 8_000_000,
            monitor_window: 20_000,
            scaling_penalty_us: 10,
            seed: 1,
        }
    }
}

impl NpuConfig {
    /// First `receive` microengines receive, the rest transmit.
    pub fn split_roles(num_mes: usize, receive: usize) -> Vec<Role> {
        (0..num_mes)
            .map(|i| if i < receive { Role::Receive } else { Role::Transmit })
            .collect()
    }

    pub fn num_mes(&self) -> usize {
        self.roles.len()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if self.roles.is_empty() {
            return bad("num_mes must be at least 1");
        }
        if !self.roles.contains(&Role::Receive) || !self.roles.contains(&Role::Transmit) {
            return bad("need at least one receive and one transmit microengine");
        }
        if self.threads_per_me == 0 {
            return bad("threads_per_me must be at least 1");
        }
        if self.sim_length == 0 {
            return bad("sim_length must be positive");
        }
        if self.sram_latency == 0 || self.sdram_latency == 0 {
            return bad("memory latencies must be positive");
        }
        if self.monitor_window == 0 {
            return bad("monitor window must be positive");
        }
        if self.ports == 0 {
            return bad("ports must be positive");
        }
        if self.profile.tx_compute_cycles > self.profile.compute_cycles {
            return bad("tx_compute_cycles cannot exceed compute_cycles");
        }
        let p = &self.power;
        if [p.k_dyn, p.alpha_idle, p.k_static, p.adder_energy_uj]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return bad("power coefficients must be non-negative");
        }
        Ok(())
    }
}
