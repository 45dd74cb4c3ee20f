use npdvs::dvs::{DvsPolicy, EdvsPolicy, TdvsPolicy, VfTable};
use npdvs::npu::{
    run_simulation, simulate, EmissionFilter, EventKind, NpuConfig, NullSink, WorkloadProfile,
};
use npdvs::trace::{self, Trace, TraceWriter};
use npdvs::traffic::{generate, ArrivalProcess, Packet, SizeModel, TrafficProfile};
use proptest::prelude::*;

fn col(trace: &Trace, name: &str, key: &str) -> Vec<f64> {
    let p = trace.header.position(key).unwrap();
    trace.events.iter().filter(|e| &*e.name == name).map(|e| e.values[p]).collect()
}

fn packet(t: f64) -> Packet {
    Packet {
        arrival_us: t,
        size_bits: 512,
        port: 0,
    }
}

#[test]
fn empty_workload() {
    let cfg = NpuConfig {
        sim_length: 1_000_000,
        ..NpuConfig::default()
    };
    let (trace, stats) = simulate(&cfg, &[], None).unwrap();
    assert_eq!(col(&trace, "forward", trace::CYCLE).len(), 0);
    assert!(stats.energy_uj > 0.0);
    assert_eq!(stats.transitions(), 0);
    // Idle threads poll, so all six engines draw busy power throughout.
    assert!((stats.mean_power_w() - 1.5).abs() < 1e-9);
}

#[test]
fn single_packet_latency_matches_closed_form() {
    for name in WorkloadProfile::BUILTIN {
        let mut cfg = NpuConfig {
            sim_length: 100_000,
            profile: WorkloadProfile::builtin(name).unwrap(),
            ..NpuConfig::default()
        };
        cfg.sram_latency = 26;
        cfg.sdram_latency = 100;
        let p = &cfg.profile;
        let expected = p.compute_cycles as f64 + p.sram_accesses as f64 * 26.0 + p.sdram_accesses as f64 * 100.0;
        let (trace, _) = simulate(&cfg, &[packet(3.0)], None).unwrap();
        let fifo = col(&trace, "fifo", trace::CYCLE);
        let fwd = col(&trace, "forward", trace::CYCLE);
        assert_eq!((fifo.len(), fwd.len()), (1, 1), "{name}");
        assert_eq!(fwd[0] - fifo[0], expected, "{name}");
    }
}

#[test]
fn latency_tracks_custom_profile() {
    let cfg = NpuConfig {
        sim_length: 50_000,
        profile: WorkloadProfile {
            name: "custom".into(),
            compute_cycles: 37,
            sram_accesses: 3,
            sdram_accesses: 1,
            poll_cycles: 5,
            tx_compute_cycles: 11,
        },
        sram_latency: 13,
        sdram_latency: 71,
        ..NpuConfig::default()
    };
    let (trace, _) = simulate(&cfg, &[packet(0.5)], None).unwrap();
    let d = col(&trace, "forward", trace::CYCLE)[0] - col(&trace, "fifo", trace::CYCLE)[0];
    assert_eq!(d, 37.0 + 3.0 * 13.0 + 71.0);
}

fn medium_arrivals(cfg: &NpuConfig, seed: u64) -> Vec<Packet> {
    let dur = cfg.sim_length as f64 / 600.0;
    generate(&TrafficProfile::constant(900.0, dur, 512, ArrivalProcess::Poisson, seed)).unwrap()
}

#[test]
fn identical_runs_give_identical_bytes() {
    let cfg = NpuConfig {
        sim_length: 400_000,
        ..NpuConfig::default()
    };
    let arr = medium_arrivals(&cfg, 9);
    let policy = DvsPolicy::Tdvs(TdvsPolicy::new(1000.0, 20_000, &cfg.vf_table).unwrap());
    let write = || {
        let mut w = TraceWriter::new(Vec::new(), npdvs::npu::trace_header()).unwrap();
        run_simulation(&cfg, &arr, Some(&policy), &mut w).unwrap();
        w.into_inner()
    };
    let a = write();
    assert!(a.len() > 1000);
    assert_eq!(a, write());
}

#[test]
fn written_trace_reads_back_equal() {
    let cfg = NpuConfig {
        sim_length: 200_000,
        ..NpuConfig::default()
    };
    let arr = medium_arrivals(&cfg, 4);
    let policy = DvsPolicy::Edvs(EdvsPolicy::new(0.1, 20_000).unwrap());
    let (trace, _) = simulate(&cfg, &arr, Some(&policy)).unwrap();
    let bytes = trace.write_to(Vec::new()).unwrap();
    let (back, warnings) = trace::read_trace(bytes.as_slice()).unwrap();
    assert!(warnings.is_empty());
    assert_eq!(back, trace);
}

#[test]
fn scaling_stall_lasts_ten_microseconds() {
    // A single down-step at the first window boundary, then silence: the
    // lone transition stalls every engine for exactly 10 us.
    let cfg = NpuConfig {
        sim_length: 30_000,
        ..NpuConfig::default()
    };
    let policy = DvsPolicy::Tdvs(TdvsPolicy::new(1000.0, 20_000, &cfg.vf_table).unwrap());
    let stats = run_simulation(&cfg, &[], Some(&policy), NullSink).unwrap();
    assert_eq!(stats.transitions(), 6);
    for m in &stats.mes {
        assert_eq!(m.stalled_ticks, 10 * stats.ticks_per_us);
        assert_eq!(m.final_level, 1);
    }
    // 10 us is 6000 cycles of the 600 MHz clock.
    assert_eq!(stats.mes[0].stalled_ticks / stats.ticks_per_cycle, 6000);
    // At 400 MHz the same stall spans 4000 of that clock's cycles.
    let t = VfTable::default();
    let tick_400 = stats.ticks_per_us / t.point(4).freq_mhz as u64;
    assert_eq!(stats.mes[0].stalled_ticks / tick_400, 4000);
}

#[test]
fn no_dvs_means_no_transitions() {
    let cfg = NpuConfig {
        sim_length: 300_000,
        ..NpuConfig::default()
    };
    let stats = run_simulation(&cfg, &medium_arrivals(&cfg, 2), None, NullSink).unwrap();
    assert_eq!(stats.transitions(), 0);
    assert!(stats.mes.iter().all(|m| m.final_level == 0 && m.stalled_ticks == 0));
}

#[test]
fn pipeline_events_are_opt_in() {
    let mut cfg = NpuConfig {
        sim_length: 50_000,
        ..NpuConfig::default()
    };
    let arr = [packet(1.0)];
    let (t, _) = simulate(&cfg, &arr, None).unwrap();
    assert!(t.events.iter().all(|e| !e.name.ends_with("_pipeline")));
    cfg.emit = EmissionFilter::new([EventKind::Pipeline]);
    let (t, _) = simulate(&cfg, &arr, None).unwrap();
    // 12 memory accesses split receive compute into 13 segments on m0;
    // one transmit segment runs on m4.
    assert_eq!(t.events.iter().filter(|e| &*e.name == "m0_pipeline").count(), 13);
    assert_eq!(t.events.iter().filter(|e| &*e.name == "m4_pipeline").count(), 1);
    assert_eq!(t.events.len(), 14);
}

#[test]
fn idle_events_once_per_window_per_engine() {
    let cfg = NpuConfig {
        sim_length: 100_000,
        ..NpuConfig::default()
    };
    let (t, stats) = simulate(&cfg, &[], None).unwrap();
    for k in 0..6 {
        assert_eq!(col(&t, &format!("m{k}_idle"), trace::CYCLE), vec![20_000.0, 40_000.0, 60_000.0, 80_000.0, 100_000.0]);
    }
    assert_eq!(stats.windows.len(), 5);
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        NpuConfig {
            roles: vec![],
            ..NpuConfig::default()
        },
        NpuConfig {
            sim_length: 0,
            ..NpuConfig::default()
        },
        NpuConfig {
            sdram_latency: 0,
            ..NpuConfig::default()
        },
        NpuConfig {
            threads_per_me: 0,
            ..NpuConfig::default()
        },
    ];
    for cfg in bad {
        assert!(simulate(&cfg, &[], None).is_err());
    }
    let unsorted = [packet(2.0), packet(1.0)];
    assert!(simulate(&NpuConfig::default(), &unsorted, None).is_err());
}

#[test]
fn builtin_profile_memory_ordering() {
    let p = |n| WorkloadProfile::builtin(n).unwrap();
    let nat = p("nat");
    for n in WorkloadProfile::BUILTIN {
        let o = p(n);
        assert!(nat.sram_accesses <= o.sram_accesses && nat.sdram_accesses <= o.sdram_accesses);
    }
    let ip = p("ipfwdr").memory_accesses();
    assert!(p("url").memory_accesses() > ip && p("md4").memory_accesses() > ip);
}

fn small_config() -> impl Strategy<Value = (NpuConfig, Vec<Packet>, u8)> {
    (
        1usize..4,
        1usize..4,
        1usize..5,
        0u32..400,
        0u32..6,
        0u32..4,
        50.0f64..1500.0,
        any::<u64>(),
        0u8..3,
    )
        .prop_map(|(rx, tx, threads, compute, sram, sdram, rate, seed, pol)| {
            let cfg = NpuConfig {
                roles: NpuConfig::split_roles(rx + tx, rx),
                threads_per_me: threads,
                queue_capacity: 16,
                profile: WorkloadProfile {
                    name: "custom".into(),
                    compute_cycles: compute + 5,
                    sram_accesses: sram,
                    sdram_accesses: sdram,
                    poll_cycles: 3,
                    tx_compute_cycles: 5,
                },
                sim_length: 150_000,
                monitor_window: 10_000,
                ..NpuConfig::default()
            };
            let profile = TrafficProfile {
                sizes: SizeModel::Mix(vec![(512, 0.5), (4096, 0.3), (12000, 0.2)]),
                ..TrafficProfile::constant(rate, 250.0, 512, ArrivalProcess::Poisson, seed)
            };
            let arr = generate(&profile).unwrap();
            (cfg, arr, pol)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn simulator_invariants((cfg, arr, pol) in small_config()) {
        let policy = match pol {
            0 => None,
            1 => Some(DvsPolicy::Tdvs(TdvsPolicy::new(400.0, 10_000, &cfg.vf_table).unwrap())),
            _ => Some(DvsPolicy::Edvs(EdvsPolicy::new(0.1, 10_000).unwrap())),
        };
        let (trace, stats) = simulate(&cfg, &arr, policy.as_ref()).unwrap();
        let h = &trace.header;
        for key in trace::CUMULATIVE_KEYS {
            let p = h.position(key).unwrap();
            for w in trace.events.windows(2) {
                prop_assert!(w[1].values[p] >= w[0].values[p], "{} decreased", key);
            }
        }
        prop_assert!(stats.forwarded_pkts <= stats.arrived_pkts);
        prop_assert!(stats.forwarded_pkts + stats.dropped_pkts <= stats.arrived_pkts);
        let fwd_bits = col(&trace, "forward", trace::TOTAL_BIT);
        prop_assert_eq!(fwd_bits.last().copied().unwrap_or(0.0), stats.forwarded_bits as f64);
        prop_assert_eq!(fwd_bits.len() as u64, stats.forwarded_pkts);

        // Power between any two rows stays within the chip's busy maximum
        // plus the monitor's per-packet energy.
        let max_w = cfg.num_mes() as f64 * 0.25;
        let (te, ee) = (h.position(trace::TIME).unwrap(), h.position(trace::ENERGY).unwrap());
        for w in trace.events.windows(2) {
            let dt = w[1].values[te] - w[0].values[te];
            let de = w[1].values[ee] - w[0].values[ee];
            prop_assert!(de >= 0.0);
            if dt > 1.0 {
                let slack = 2e-6 + cfg.power.adder_energy_uj * stats.arrived_pkts as f64;
                prop_assert!(de <= max_w * dt + slack + 1e-6 * max_w, "{} over {}", de, dt);
            }
        }

        let window_ticks = stats.window_cycles * stats.ticks_per_cycle;
        for w in &stats.windows {
            for a in &w.activity {
                prop_assert_eq!(a.total(), window_ticks);
            }
            for &l in &w.levels {
                prop_assert!(l < cfg.vf_table.len());
            }
        }
        for pair in stats.windows.windows(2) {
            for (a, b) in pair[0].levels.iter().zip(&pair[1].levels) {
                prop_assert!(a.abs_diff(*b) <= 1);
            }
        }
        if policy.is_none() {
            prop_assert_eq!(stats.transitions(), 0);
        }
        if cfg.profile.memory_accesses() == 0 {
            for f in trace.events.iter().filter(|e| e.name.ends_with("_idle")) {
                prop_assert_eq!(f.values[h.position(trace::IDLE_FRAC).unwrap()], 0.0);
            }
        }
    }
}
