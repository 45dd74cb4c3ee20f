//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::dvs::{DvsError, DvsPolicy, EdvsPolicy, TdvsPolicy, VfTable};
use crate::npu::{EmissionFilter, NpuConfig, WorkloadProfile};
use crate::traffic::{ArrivalProcess, SizeModel, TrafficLevel, TrafficProfile};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{key}` given twice (lines {first} and {second})")]
    Duplicate { key: String, first: usize, second: usize },
    #[error("bad value `{value}` for `{key}`: {msg}")]
    Value { key: String, value: String, msg: String },
    #[error(transparent)]
    Dvs(#[from] DvsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PolicyKind {
    #[default]
    None,
    Tdvs,
    Edvs,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [PolicyKind::None, PolicyKind::Tdvs, PolicyKind::Edvs];
}

impl FromStr for PolicyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(PolicyKind::None),
            "tdvs" => Ok(PolicyKind::Tdvs),
            "edvs" => Ok(PolicyKind::Edvs),
            _ => Err("expected none, tdvs or edvs".into()),
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyKind::None => "none",
            PolicyKind::Tdvs => "tdvs",
            PolicyKind::Edvs => "edvs",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrafficSource {
    Generated {
        rate_mbps: f64,
        sizes: SizeModel,
        process: ArrivalProcess,
    },
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub npu: NpuConfig,
    pub policy: PolicyKind,
    pub tdvs_top_mbps: f64,
    pub tdvs_window: u64,
    pub edvs_idle_threshold: f64,
    pub edvs_window: u64,
    pub traffic: TrafficSource,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            npu: NpuConfig::default(),
            policy: PolicyKind::None,
            tdvs_top_mbps: 1000.0,
            tdvs_window: 80_000,
            edvs_idle_threshold: EdvsPolicy::DEFAULT_IDLE_THRESHOLD,
            edvs_window: 40_000,
            traffic: TrafficSource::Generated {
                rate_mbps: TrafficLevel::Medium.rate_mbps(),
                sizes: SizeModel::Fixed(crate::traffic::DEFAULT_PACKET_BITS),
                process: ArrivalProcess::Poisson,
            },
        }
    }
}

pub const KEYS: &[&str] = &[
    "num_mes",
    "receive_mes",
    "threads_per_me",
    "ports",
    "sram_latency",
    "sdram_latency",
    "sram_occupancy",
    "sdram_occupancy",
    "queue_capacity",
    "profile",
    "profile.compute_cycles",
    "profile.sram_accesses",
    "profile.sdram_accesses",
    "profile.poll_cycles",
    "profile.tx_compute_cycles",
    "power.k_dyn",
    "power.alpha_idle",
    "power.k_static",
    "power.adder_energy",
    "vf_table",
    "emit",
    "sim_length",
    "seed",
    "scaling_penalty_us",
    "monitor.window_kcycles",
    "dvs.policy",
    "tdvs.top_threshold_mbps",
    "tdvs.window_kcycles",
    "edvs.idle_threshold",
    "edvs.window_kcycles",
    "traffic",
    "traffic.rate_mbps",
    "traffic.packet_bits",
    "traffic.size_mix",
    "traffic.process",
    "traffic.csv",
];

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, (usize, String)>, ConfigError> {
    let mut out: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: line_no,
            msg: format!("expected `key = value`, found `{line}`"),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(ConfigError::UnknownKey(k.to_string()));
        }
        if let Some((first, _)) = out.get(k) {
            return Err(ConfigError::Duplicate {
                key: k.to_string(),
                first: *first,
                second: line_no,
            });
        }
        out.insert(k.to_string(), (line_no, v.to_string()));
    }
    Ok(out)
}

fn value<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| ConfigError::Value {
        key: key.to_string(),
        value: v.to_string(),
        msg: e.to_string(),
    })
}

fn bad(key: &str, v: &str, msg: &str) -> ConfigError {
    ConfigError::Value {
        key: key.to_string(),
        value: v.to_string(),
        msg: msg.to_string(),
    }
}

fn kcycles(key: &str, v: &str) -> Result<u64, ConfigError> {
    let k: f64 = value(key, v)?;
    let cycles = (k * 1000.0).round();
    if !(cycles >= 1.0 && cycles.is_finite()) {
        return Err(bad(key, v, "window must be positive"));
    }
    Ok(cycles as u64)
}

fn size_mix(key: &str, v: &str) -> Result<SizeModel, ConfigError> {
    let mut mix = Vec::new();
    for part in v.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (s, w) = part
            .split_once(':')
            .ok_or_else(|| bad(key, v, "expected `bits:weight,...`"))?;
        mix.push((value::<u32>(key, s.trim())?, value::<f64>(key, w.trim())?));
    }
    if mix.is_empty() {
        return Err(bad(key, v, "empty size mix"));
    }
    Ok(SizeModel::Mix(mix))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let pairs = parse_pairs(text)?;
        let get = |k: &str| pairs.get(k).map(|(_, v)| v.as_str());
        let mut c = RunConfig::default();
        let n = &mut c.npu;

        let num_mes: usize = get("num_mes").map(|v| value("num_mes", v)).transpose()?.unwrap_or(6);
        let receive: usize = get("receive_mes")
            .map(|v| value("receive_mes", v))
            .transpose()?
            .unwrap_or(if num_mes == 6 { 4 } else { num_mes.div_ceil(2) });
        if receive > num_mes {
            return Err(bad("receive_mes", &receive.to_string(), "exceeds num_mes"));
        }
        n.roles = NpuConfig::split_roles(num_mes, receive);

        if let Some(v) = get("profile") {
            n.profile = match (v, WorkloadProfile::builtin(v)) {
                (_, Some(p)) => p,
                ("custom", None) => WorkloadProfile {
                    name: v.to_string(),
                    ..n.profile.clone()
                },
                _ => return Err(bad("profile", v, "expected ipfwdr, url, nat, md4 or custom")),
            };
        }
        macro_rules! set {
            ($key:literal, $field:expr) => {
                if let Some(v) = get($key) {
                    $field = value($key, v)?;
                }
            };
        }
        set!("threads_per_me", n.threads_per_me);
        set!("ports", n.ports);
        set!("sram_latency", n.sram_latency);
        set!("sdram_latency", n.sdram_latency);
        set!("sram_occupancy", n.sram_occupancy);
        set!("sdram_occupancy", n.sdram_occupancy);
        set!("queue_capacity", n.queue_capacity);
        set!("profile.compute_cycles", n.profile.compute_cycles);
        set!("profile.sram_accesses", n.profile.sram_accesses);
        set!("profile.sdram_accesses", n.profile.sdram_accesses);
        set!("profile.poll_cycles", n.profile.poll_cycles);
        set!("profile.tx_compute_cycles", n.profile.tx_compute_cycles);
        set!("power.k_dyn", n.power.k_dyn);
        set!("power.alpha_idle", n.power.alpha_idle);
        set!("power.k_static", n.power.k_static);
        set!("power.adder_energy", n.power.adder_energy_uj);
        set!("sim_length", n.sim_length);
        set!("seed", n.seed);
        set!("scaling_penalty_us", n.scaling_penalty_us);
        if let Some(v) = get("vf_table") {
            n.vf_table = VfTable::parse(v)?;
        }
        if let Some(v) = get("emit") {
            n.emit = EmissionFilter::parse(v)
                .ok_or_else(|| bad("emit", v, "expected a list of fifo, forward, pipeline, idle"))?;
        }
        if let Some(v) = get("monitor.window_kcycles") {
            n.monitor_window = kcycles("monitor.window_kcycles", v)?;
        }

        if let Some(v) = get("dvs.policy") {
            c.policy = value("dvs.policy", v)?;
        }
        set!("tdvs.top_threshold_mbps", c.tdvs_top_mbps);
        set!("edvs.idle_threshold", c.edvs_idle_threshold);
        if let Some(v) = get("tdvs.window_kcycles") {
            c.tdvs_window = kcycles("tdvs.window_kcycles", v)?;
        }
        if let Some(v) = get("edvs.window_kcycles") {
            c.edvs_window = kcycles("edvs.window_kcycles", v)?;
        }

        if let Some(path) = get("traffic.csv") {
            for k in ["traffic", "traffic.rate_mbps", "traffic.packet_bits", "traffic.size_mix", "traffic.process"] {
                if pairs.contains_key(k) {
                    return Err(bad(k, get(k).unwrap_or(""), "cannot be combined with traffic.csv"));
                }
            }
            c.traffic = TrafficSource::Csv(PathBuf::from(path));
        } else {
            let TrafficSource::Generated {
                rate_mbps,
                sizes,
                process,
            } = &mut c.traffic
            else {
                unreachable!("default traffic is generated")
            };
            if let Some(v) = get("traffic") {
                *rate_mbps = TrafficLevel::parse(v)
                    .ok_or_else(|| bad("traffic", v, "expected high, medium or low"))?
                    .rate_mbps();
            }
            if let Some(v) = get("traffic.rate_mbps") {
                *rate_mbps = value("traffic.rate_mbps", v)?;
            }
            if let Some(v) = get("traffic.packet_bits") {
                *sizes = SizeModel::Fixed(value("traffic.packet_bits", v)?);
            }
            if let Some(v) = get("traffic.size_mix") {
                if pairs.contains_key("traffic.packet_bits") {
                    return Err(bad("traffic.size_mix", v, "cannot be combined with traffic.packet_bits"));
                }
                *sizes = size_mix("traffic.size_mix", v)?;
            }
            if let Some(v) = get("traffic.process") {
                *process = match v {
                    "poisson" => ArrivalProcess::Poisson,
                    "uniform" => ArrivalProcess::Uniform,
                    _ => return Err(bad("traffic.process", v, "expected poisson or uniform")),
                };
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.npu
            .validate()
            .map_err(|e| bad("config", "", &e.to_string()))?;
        self.dvs_policy()?;
        if let Some(t) = self.traffic_profile() {
            t.validate().map_err(|e| bad("traffic", "", &e.to_string()))?;
        }
        Ok(())
    }

    /// The configured controller, or `None` when scaling is off.
    pub fn dvs_policy(&self) -> Result<Option<DvsPolicy>, ConfigError> {
        Ok(match self.policy {
            PolicyKind::None => None,
            PolicyKind::Tdvs => Some(DvsPolicy::Tdvs(TdvsPolicy::new(
                self.tdvs_top_mbps,
                self.tdvs_window,
                &self.npu.vf_table,
            )?)),
            PolicyKind::Edvs => Some(DvsPolicy::Edvs(EdvsPolicy::new(
                self.edvs_idle_threshold,
                self.edvs_window,
            )?)),
        })
    }

    /// Simulated span in microseconds.
    pub fn duration_us(&self) -> f64 {
        self.npu.sim_length as f64 / self.npu.vf_table.reference_mhz() as f64
    }

    /// Generator settings for the run, seeded from the run seed; `None`
    /// for CSV-imported traffic.
    pub fn traffic_profile(&self) -> Option<TrafficProfile> {
        match &self.traffic {
            TrafficSource::Generated {
                rate_mbps,
                sizes,
                process,
            } => Some(TrafficProfile {
                sizes: sizes.clone(),
                ports: self.npu.ports,
                ..TrafficProfile::constant(*rate_mbps, self.duration_us(), 1, *process, self.npu.seed)
            }),
            TrafficSource::Csv(_) => None,
        }
    }
}
