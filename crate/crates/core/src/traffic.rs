//! Synthetic packet arrivals and CSV arrival import.

use std::io::Read;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, weighted::WeightedIndex};
use thiserror::Error;

pub const DEFAULT_PORTS: u16 = 16;
pub const DEFAULT_PACKET_BITS: u32 = 512;

#[derive(Debug, Error)]
pub enum TrafficError {
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error("invalid traffic profile: {0}")]
    Invalid(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Packet {
    pub arrival_us: f64,
    pub size_bits: u32,
    pub port: u16,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub duration_us: f64,
    pub rate_mbps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SizeModel {
    Fixed(u32),
    /// `(size in bits, weight)`; weights sum to one.
    Mix(Vec<(u32, f64)>),
}

impl SizeModel {
    pub fn mean_bits(&self) -> f64 {
        match self {
            SizeModel::Fixed(b) => *b as f64,
            SizeModel::Mix(m) => m.iter().map(|(s, w)| *s as f64 * w).sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrivalProcess {
    Poisson,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrafficLevel {
    High,
    Medium,
    Low,
}

impl TrafficLevel {
    pub const ALL: [TrafficLevel; 3] = [TrafficLevel::High, TrafficLevel::Medium, TrafficLevel::Low];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "high" => Some(TrafficLevel::High),
            "medium" => Some(TrafficLevel::Medium),
            "low" => Some(TrafficLevel::Low),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TrafficLevel::High => "high",
            TrafficLevel::Medium => "medium",
            TrafficLevel::Low => "low",
        }
    }

    /// Mean offered load of the built-in profile.
    pub fn rate_mbps(self) -> f64 {
        match self {
            TrafficLevel::High => 1400.0,
            TrafficLevel::Medium => 900.0,
            TrafficLevel::Low => 400.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficProfile {
    pub segments: Vec<Segment>,
    pub sizes: SizeModel,
    pub process: ArrivalProcess,
    pub ports: u16,
    pub seed: u64,
}

impl TrafficProfile {
    /// Constant-rate profile lasting `duration_us`.
    pub fn constant(rate_mbps: f64, duration_us: f64, packet_bits: u32, process: ArrivalProcess, seed: u64) -> Self {
        TrafficProfile {
            segments: vec![Segment {
                duration_us,
                rate_mbps,
            }],
            sizes: SizeModel::Fixed(packet_bits),
            process,
            ports: DEFAULT_PORTS,
            seed,
        }
    }

    /// Built-in high/medium/low profile: Poisson arrivals of fixed-size
    /// packets at the level's mean rate.
    pub fn builtin(level: TrafficLevel, duration_us: f64, seed: u64) -> Self {
        TrafficProfile::constant(
            level.rate_mbps(),
            duration_us,
            DEFAULT_PACKET_BITS,
            ArrivalProcess::Poisson,
            seed,
        )
    }

    pub fn validate(&self) -> Result<(), TrafficError> {
        let bad = |m: &str| Err(TrafficError::Invalid(m.to_string()));
        if self.ports == 0 {
            return bad("at least one port is required");
        }
        for s in &self.segments {
            if !(s.duration_us > 0.0 && s.duration_us.is_finite()) {
                return bad("segment durations must be positive");
            }
            if !(s.rate_mbps >= 0.0 && s.rate_mbps.is_finite()) {
                return bad("segment rates must be non-negative");
            }
        }
        match &self.sizes {
            SizeModel::Fixed(0) => return bad("packet size must be positive"),
            SizeModel::Fixed(_) => {}
            SizeModel::Mix(m) => {
                if m.is_empty() || m.iter().any(|(s, w)| *s == 0 || *w < 0.0) {
                    return bad("size mix needs positive sizes and non-negative weights");
                }
                let total: f64 = m.iter().map(|(_, w)| w).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return bad("size mix weights must sum to 1");
                }
            }
        }
        Ok(())
    }

    pub fn duration_us(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_us).sum()
    }
}

enum SizeSampler {
    Fixed(u32),
    Mix(Vec<u32>, WeightedIndex<f64>),
}

impl SizeSampler {
    fn new(model: &SizeModel) -> Result<Self, TrafficError> {
        Ok(match model {
            SizeModel::Fixed(b) => SizeSampler::Fixed(*b),
            SizeModel::Mix(m) => SizeSampler::Mix(
                m.iter().map(|(s, _)| *s).collect(),
                WeightedIndex::new(m.iter().map(|(_, w)| *w))
                    .map_err(|e| TrafficError::Invalid(e.to_string()))?,
            ),
        })
    }

    fn sample(&self, rng: &mut impl Rng) -> u32 {
        match self {
            SizeSampler::Fixed(b) => *b,
            SizeSampler::Mix(sizes, idx) => sizes[idx.sample(rng)],
        }
    }
}

/// Generate the arrival sequence for `profile`. Deterministic per seed.
pub fn generate(profile: &TrafficProfile) -> Result<Vec<Packet>, TrafficError> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let sizes = SizeSampler::new(&profile.sizes)?;
    let mean_bits = profile.sizes.mean_bits();
    let mut out = Vec::new();
    let mut start = 0.0;
    for seg in &profile.segments {
        let end = start + seg.duration_us;
        if seg.rate_mbps > 0.0 {
            let gap = mean_bits / seg.rate_mbps;
            match profile.process {
                ArrivalProcess::Uniform => {
                    let mut k = 0u64;
                    loop {
                        let t = start + k as f64 * gap;
                        if t >= end {
                            break;
                        }
                        out.push((t, sizes.sample(&mut rng)));
                        k += 1;
                    }
                }
                ArrivalProcess::Poisson => {
                    let exp = Exp::new(1.0 / gap).map_err(|e| TrafficError::Invalid(e.to_string()))?;
                    let mut t = start;
                    loop {
                        t += exp.sample(&mut rng);
                        if t >= end {
                            break;
                        }
                        out.push((t, sizes.sample(&mut rng)));
                    }
                }
            }
        }
        start = end;
    }
    Ok(out
        .into_iter()
        .enumerate()
        .map(|(i, (arrival_us, size_bits))| Packet {
            arrival_us,
            size_bits,
            port: (i % profile.ports as usize) as u16,
        })
        .collect())
}

/// Read `time_us,size_bits,port` rows. A leading header row is allowed.
pub fn import_csv<R: Read>(source: R) -> Result<Vec<Packet>, TrafficError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(source);
    let mut out: Vec<Packet> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec.position().map_or(i + 1, |p| p.line() as usize);
        if i == 0 && rec.get(0) == Some("time_us") {
            continue;
        }
        let err = |msg: String| TrafficError::Row { row, msg };
        if rec.len() != 3 {
            return Err(err(format!("expected 3 fields, found {}", rec.len())));
        }
        let arrival_us: f64 = rec[0]
            .parse()
            .map_err(|_| err(format!("bad time `{}`", &rec[0])))?;
        let size_bits: u32 = rec[1]
            .parse()
            .map_err(|_| err(format!("bad size `{}`", &rec[1])))?;
        let port: u16 = rec[2]
            .parse()
            .map_err(|_| err(format!("bad port `{}`", &rec[2])))?;
        if !(arrival_us.is_finite() && arrival_us >= 0.0) {
            return Err(err(format!("time must be a non-negative number, found {arrival_us}")));
        }
        if size_bits == 0 {
            return Err(err("packet size must be positive".into()));
        }
        if let Some(prev) = out.last() {
            if arrival_us < prev.arrival_us {
                return Err(err(format!(
                    "timestamps must be non-decreasing ({arrival_us} after {})",
                    prev.arrival_us
                )));
            }
        }
        out.push(Packet {
            arrival_us,
            size_bits,
            port,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rate_segment_is_silent() {
        let mut p = TrafficProfile::constant(0.0, 1000.0, 512, ArrivalProcess::Poisson, 1);
        p.segments.push(Segment {
            duration_us: 100.0,
            rate_mbps: 512.0,
        });
        let pk = generate(&p).unwrap();
        assert!(!pk.is_empty());
        assert!(pk.iter().all(|x| x.arrival_us >= 1000.0));
    }

    #[test]
    fn uniform_exact_count() {
        let p = TrafficProfile::constant(1000.0, 10_000.0, 10_000, ArrivalProcess::Uniform, 0);
        let pk = generate(&p).unwrap();
        assert_eq!(pk.len(), 1000);
        for (k, w) in pk.windows(2).enumerate() {
            assert!((w[1].arrival_us - w[0].arrival_us - 10.0).abs() < 1e-9, "gap {k}");
        }
        assert_eq!(pk[17].port, 1);
    }

    #[test]
    fn poisson_count_close_to_mean() {
        let total: usize = (0..20)
            .map(|s| {
                let p = TrafficProfile::constant(1000.0, 10_000.0, 10_000, ArrivalProcess::Poisson, s);
                generate(&p).unwrap().len()
            })
            .sum();
        let mean = total as f64 / 20.0;
        assert!((mean - 1000.0).abs() < 50.0, "mean count {mean}");
    }

    #[test]
    fn deterministic_per_seed() {
        let p = TrafficProfile::builtin(TrafficLevel::Medium, 2000.0, 9);
        assert_eq!(generate(&p).unwrap(), generate(&p).unwrap());
        let mut q = p.clone();
        q.seed = 10;
        assert_ne!(generate(&p).unwrap(), generate(&q).unwrap());
    }

    #[test]
    fn size_mix() {
        let p = TrafficProfile {
            segments: vec![Segment {
                duration_us: 5000.0,
                rate_mbps: 800.0,
            }],
            sizes: SizeModel::Mix(vec![(512, 0.5), (12_000, 0.5)]),
            process: ArrivalProcess::Poisson,
            ports: 16,
            seed: 3,
        };
        let pk = generate(&p).unwrap();
        assert!(pk.iter().any(|x| x.size_bits == 512));
        assert!(pk.iter().any(|x| x.size_bits == 12_000));
        let mut bad = p.clone();
        bad.sizes = SizeModel::Mix(vec![(512, 0.5), (1024, 0.4)]);
        assert!(generate(&bad).is_err());
    }

    #[test]
    fn csv_import() {
        let pk = import_csv("time_us,size_bits,port\n0.5,512,0\n1.0,1024,3\n".as_bytes()).unwrap();
        assert_eq!(pk.len(), 2);
        assert_eq!(pk[1], Packet { arrival_us: 1.0, size_bits: 1024, port: 3 });
        assert!(import_csv("".as_bytes()).unwrap().is_empty());
        match import_csv("1.0,512,0\n0.5,512,1\n".as_bytes()) {
            Err(TrafficError::Row { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(import_csv("1.0,abc,0\n".as_bytes()).is_err());
        assert!(import_csv("1.0,512\n".as_bytes()).is_err());
    }
}
