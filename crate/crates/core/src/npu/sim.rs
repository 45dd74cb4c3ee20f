use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::io::{self, Write};
use std::sync::Arc;

use super::config::{EventKind, NpuConfig, Role};
use super::power::dynamic_power;
use super::SimError;
use crate::dvs::{window_rate, DvsPolicy, IdleWindow};
use crate::trace::{self, AnnotationKey, Header, Trace, TraceEvent, TraceWriter};
use crate::traffic::Packet;

/// Receives events as the simulator produces them.
pub trait TraceSink {
    fn emit(&mut self, ev: &TraceEvent) -> io::Result<()>;
}

impl TraceSink for Vec<TraceEvent> {
    fn emit(&mut self, ev: &TraceEvent) -> io::Result<()> {
        self.push(ev.clone());
        Ok(())
    }
}

impl<W: Write> TraceSink for TraceWriter<W> {
    fn emit(&mut self, ev: &TraceEvent) -> io::Result<()> {
        self.write_event(ev)
    }
}

/// Discards everything.
pub struct NullSink;

impl TraceSink for NullSink {
    fn emit(&mut self, _: &TraceEvent) -> io::Result<()> {
        Ok(())
    }
}

impl<A: TraceSink, B: TraceSink> TraceSink for (A, B) {
    fn emit(&mut self, ev: &TraceEvent) -> io::Result<()> {
        self.0.emit(ev)?;
        self.1.emit(ev)
    }
}

impl<S: TraceSink + ?Sized> TraceSink for &mut S {
    fn emit(&mut self, ev: &TraceEvent) -> io::Result<()> {
        (**self).emit(ev)
    }
}

/// Annotation layout of every simulator trace.
pub fn trace_header() -> Header {
    Header::from_names(&[
        trace::CYCLE,
        trace::TIME,
        trace::ENERGY,
        trace::TOTAL_PKT,
        trace::TOTAL_BIT,
        trace::P_LOSS,
        trace::IDLE_FRAC,
    ])
    .expect("static header")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeStats {
    pub transitions: u64,
    pub busy_ticks: u64,
    pub idle_ticks: u64,
    pub stalled_ticks: u64,
    pub energy_uj: f64,
    pub final_level: usize,
}

/// Counters for one monitor window. Activity counters are in ticks.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowStats {
    pub end_cycle: u64,
    pub arrived_bits: u64,
    pub rate_mbps: f64,
    pub activity: Vec<IdleWindow>,
    /// Levels in force during the window, before its decision.
    pub levels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryStats {
    pub ticks_per_us: u64,
    pub ticks_per_cycle: u64,
    pub window_cycles: u64,
    pub sim_cycles: u64,
    pub duration_us: f64,
    /// Total energy including monitor overhead.
    pub energy_uj: f64,
    pub overhead_energy_uj: f64,
    pub arrived_pkts: u64,
    pub arrived_bits: u64,
    pub forwarded_pkts: u64,
    pub forwarded_bits: u64,
    pub dropped_pkts: u64,
    pub mes: Vec<MeStats>,
    pub windows: Vec<WindowStats>,
}

impl SummaryStats {
    pub fn mean_power_w(&self) -> f64 {
        self.energy_uj / self.duration_us
    }

    pub fn mean_throughput_mbps(&self) -> f64 {
        self.forwarded_bits as f64 / self.duration_us
    }

    pub fn transitions(&self) -> u64 {
        self.mes.iter().map(|m| m.transitions).sum()
    }

    /// Stalled time summed over microengines, in reference cycles.
    pub fn stalled_cycles(&self) -> u64 {
        self.mes.iter().map(|m| m.stalled_ticks).sum::<u64>() / self.ticks_per_cycle
    }

    pub const CSV_HEADER: &'static str =
        "sim_cycles,energy_uj,overhead_energy_uj,mean_power_w,mean_throughput_mbps,arrived_pkts,forwarded_pkts,forwarded_bits,dropped_pkts,transitions,stalled_cycles";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.3},{},{},{},{},{},{}",
            self.sim_cycles,
            self.energy_uj,
            self.overhead_energy_uj,
            self.mean_power_w(),
            self.mean_throughput_mbps(),
            self.arrived_pkts,
            self.forwarded_pkts,
            self.forwarded_bits,
            self.dropped_pkts,
            self.transitions(),
            self.stalled_cycles()
        )
    }
}

/// Runs the simulator and materializes its trace.
pub fn simulate(
    config: &NpuConfig,
    arrivals: &[Packet],
    policy: Option<&DvsPolicy>,
) -> Result<(Trace, SummaryStats), SimError> {
    let mut events = Vec::new();
    let stats = run_simulation(config, arrivals, policy, &mut events)?;
    let mut trace = Trace::new(trace_header());
    trace.events = events;
    Ok((trace, stats))
}

pub fn run_simulation<S: TraceSink>(
    config: &NpuConfig,
    arrivals: &[Packet],
    policy: Option<&DvsPolicy>,
    sink: S,
) -> Result<SummaryStats, SimError> {
    config.validate()?;
    if let Some(w) = arrivals.windows(2).find(|w| w[1].arrival_us < w[0].arrival_us) {
        return Err(SimError::Arrivals(format!(
            "arrivals not sorted: {} after {}",
            w[1].arrival_us, w[0].arrival_us
        )));
    }
    if let Some(p) = arrivals.iter().find(|p| p.size_bits == 0 || !p.arrival_us.is_finite() || p.arrival_us < 0.0) {
        return Err(SimError::Arrivals(format!("invalid packet {p:?}")));
    }
    let mut sim = Sim::new(config, arrivals, policy, sink)?;
    sim.run()?;
    Ok(sim.finish())
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// Ticks per microsecond: the least common multiple of the table's
/// frequencies in MHz, so that every level's cycle is a whole number of ticks.
pub fn ticks_per_us(config: &NpuConfig) -> Result<u64, SimError> {
    let mut l = 1u64;
    for p in config.vf_table.levels() {
        let f = p.freq_mhz as u64;
        l = l / gcd(l, f) * f;
        if l > 1_000_000_000 {
            return Err(SimError::Config("VF table frequencies have no usable common time base".into()));
        }
    }
    Ok(l)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step {
    Compute(u64),
    Sram,
    Sdram,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ThreadState {
    Free,
    Ready,
    Running,
    MemWait,
}

#[derive(Debug, Clone, Copy)]
struct Job {
    packet: usize,
    prog: usize,
    step: usize,
    remaining: u64,
}

#[derive(Debug, Clone, Copy)]
struct Thread {
    state: ThreadState,
    job: Option<Job>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Busy,
    Idle,
    Stalled,
}

struct Me {
    role: Role,
    level: usize,
    threads: Vec<Thread>,
    mem_wait: usize,
    ready: VecDeque<usize>,
    running: Option<usize>,
    seg_start: u64,
    seg_end: u64,
    gen: u64,
    stalled: bool,
    stall_until: u64,
    last_sync: u64,
    window: IdleWindow,
    stats: MeStats,
}

impl Me {
    fn mode(&self) -> Mode {
        if self.stalled {
            Mode::Stalled
        } else if self.mem_wait == self.threads.len() {
            Mode::Idle
        } else {
            Mode::Busy
        }
    }

    fn load(&self) -> usize {
        self.threads.iter().filter(|t| t.state != ThreadState::Free).count()
    }

    fn free_thread(&self) -> Option<usize> {
        self.threads.iter().position(|t| t.state == ThreadState::Free)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    SegmentDone { me: usize, gen: u64 },
    MemDone { me: usize, thread: usize },
    StallEnd { me: usize },
    Window,
}

struct MemController {
    latency: u64,
    occupancy: u64,
    free_at: u64,
}

impl MemController {
    fn access(&mut self, now: u64) -> u64 {
        let start = now.max(self.free_at);
        self.free_at = start + self.occupancy;
        start + self.latency
    }
}

struct Sim<'a, S> {
    cfg: &'a NpuConfig,
    arrivals: &'a [Packet],
    policy: Option<&'a DvsPolicy>,
    sink: S,
    header: Header,
    keys: Vec<AnnotationKey>,
    tpu: u64,
    ref_tpc: u64,
    end: u64,
    window_ticks: u64,
    penalty_ticks: u64,
    // progs[role][with_poll]
    progs: [[Vec<Step>; 2]; 2],
    mes: Vec<Me>,
    heap: BinaryHeap<Reverse<(u64, u64, Ev)>>,
    seq: u64,
    cursor: usize,
    rx_queue: VecDeque<usize>,
    fwd_queue: VecDeque<usize>,
    rr: [usize; 2],
    sram: MemController,
    sdram: MemController,
    chip_level: usize,
    window_bits: u64,
    window_index: u64,
    overhead_uj: f64,
    arrived_pkts: u64,
    arrived_bits: u64,
    forwarded_pkts: u64,
    forwarded_bits: u64,
    dropped: u64,
    windows: Vec<WindowStats>,
    me_names: Vec<(Arc<str>, Arc<str>)>,
    fifo_name: Arc<str>,
    forward_name: Arc<str>,
}

fn role_index(r: Role) -> usize {
    match r {
        Role::Receive => 0,
        Role::Transmit => 1,
    }
}

fn build_programs(cfg: &NpuConfig) -> [[Vec<Step>; 2]; 2] {
    let p = &cfg.profile;
    let rx_compute = (p.compute_cycles - p.tx_compute_cycles) as u64;
    let mems: Vec<Step> = std::iter::repeat_n(Step::Sram, p.sram_accesses as usize)
        .chain(std::iter::repeat_n(Step::Sdram, p.sdram_accesses as usize))
        .collect();
    // Spread receive compute over the gaps around memory accesses, the
    // remainder going to the earliest gaps.
    let gaps = mems.len() as u64 + 1;
    let mut rx = Vec::new();
    for g in 0..gaps {
        let c = rx_compute / gaps + u64::from(g < rx_compute % gaps);
        if c > 0 {
            rx.push(Step::Compute(c));
        }
        if let Some(m) = mems.get(g as usize) {
            rx.push(*m);
        }
    }
    let tx = if p.tx_compute_cycles > 0 {
        vec![Step::Compute(p.tx_compute_cycles as u64)]
    } else {
        Vec::new()
    };
    let with_poll = |prog: &Vec<Step>| {
        let poll = p.poll_cycles as u64;
        let mut out = prog.clone();
        if poll > 0 {
            match out.first_mut() {
                Some(Step::Compute(c)) => *c += poll,
                _ => out.insert(0, Step::Compute(poll)),
            }
        }
        out
    };
    let rx_poll = with_poll(&rx);
    let tx_poll = with_poll(&tx);
    [[rx, rx_poll], [tx, tx_poll]]
}

impl<'a, S: TraceSink> Sim<'a, S> {
    fn new(
        cfg: &'a NpuConfig,
        arrivals: &'a [Packet],
        policy: Option<&'a DvsPolicy>,
        sink: S,
    ) -> Result<Self, SimError> {
        let tpu = ticks_per_us(cfg)?;
        let reference = cfg.vf_table.reference_mhz() as u64;
        let ref_tpc = tpu / reference;
        let window_cycles = policy.map_or(cfg.monitor_window, |p| p.window_cycles());
        let end = cfg
            .sim_length
            .checked_mul(ref_tpc)
            .ok_or_else(|| SimError::Config("sim_length too large".into()))?;
        let window_ticks = window_cycles
            .checked_mul(ref_tpc)
            .ok_or_else(|| SimError::Config("window too large".into()))?;
        let header = trace_header();
        let keys = header.keys().to_vec();
        let mes = cfg
            .roles
            .iter()
            .map(|&role| Me {
                role,
                level: 0,
                threads: vec![
                    Thread {
                        state: ThreadState::Free,
                        job: None
                    };
                    cfg.threads_per_me
                ],
                mem_wait: 0,
                ready: VecDeque::new(),
                running: None,
                seg_start: 0,
                seg_end: 0,
                gen: 0,
                stalled: false,
                stall_until: 0,
                last_sync: 0,
                window: IdleWindow::default(),
                stats: MeStats::default(),
            })
            .collect();
        let me_names = (0..cfg.num_mes())
            .map(|k| (Arc::from(format!("m{k}_pipeline")), Arc::from(format!("m{k}_idle"))))
            .collect();
        let mut sim = Sim {
            cfg,
            arrivals,
            policy,
            sink,
            header,
            keys,
            tpu,
            ref_tpc,
            end,
            window_ticks,
            penalty_ticks: cfg.scaling_penalty_us as u64 * tpu,
            progs: build_programs(cfg),
            mes,
            heap: BinaryHeap::new(),
            seq: 0,
            cursor: 0,
            rx_queue: VecDeque::new(),
            fwd_queue: VecDeque::new(),
            rr: [0, 0],
            sram: MemController {
                latency: cfg.sram_latency as u64 * ref_tpc,
                occupancy: cfg.sram_occupancy as u64 * ref_tpc,
                free_at: 0,
            },
            sdram: MemController {
                latency: cfg.sdram_latency as u64 * ref_tpc,
                occupancy: cfg.sdram_occupancy as u64 * ref_tpc,
                free_at: 0,
            },
            chip_level: 0,
            window_bits: 0,
            window_index: 0,
            overhead_uj: 0.0,
            arrived_pkts: 0,
            arrived_bits: 0,
            forwarded_pkts: 0,
            forwarded_bits: 0,
            dropped: 0,
            windows: Vec::new(),
            me_names,
            fifo_name: Arc::from("fifo"),
            forward_name: Arc::from("forward"),
        };
        if sim.window_ticks <= sim.end {
            sim.push(sim.window_ticks, Ev::Window);
        }
        Ok(sim)
    }

    fn push(&mut self, at: u64, ev: Ev) {
        self.heap.push(Reverse((at, self.seq, ev)));
        self.seq += 1;
    }

    fn tpc(&self, me: usize) -> u64 {
        self.tpu / self.cfg.vf_table.point(self.mes[me].level).freq_mhz as u64
    }

    fn arrival_tick(&self, i: usize) -> u64 {
        (self.arrivals[i].arrival_us * self.tpu as f64).round() as u64
    }

    fn run(&mut self) -> Result<(), SimError> {
        loop {
            let next_arrival = (self.cursor < self.arrivals.len())
                .then(|| self.arrival_tick(self.cursor))
                .filter(|&t| t <= self.end);
            let next_event = self.heap.peek().map(|Reverse((t, _, _))| *t).filter(|&t| t <= self.end);
            match (next_event, next_arrival) {
                (Some(te), ta) if ta.is_none_or(|ta| te <= ta) => {
                    let Reverse((now, _, ev)) = self.heap.pop().expect("peeked");
                    self.handle(now, ev)?;
                }
                (_, Some(ta)) => {
                    let i = self.cursor;
                    self.cursor += 1;
                    self.arrive(ta, i)?;
                }
                _ => break,
            }
        }
        Ok(())
    }

    fn finish(mut self) -> SummaryStats {
        let end = self.end;
        for k in 0..self.mes.len() {
            self.sync(k, end);
        }
        let me_energy: f64 = self.mes.iter().map(|m| m.stats.energy_uj).sum();
        SummaryStats {
            ticks_per_us: self.tpu,
            ticks_per_cycle: self.ref_tpc,
            window_cycles: self.window_ticks / self.ref_tpc,
            sim_cycles: self.cfg.sim_length,
            duration_us: self.end as f64 / self.tpu as f64,
            energy_uj: me_energy + self.overhead_uj,
            overhead_energy_uj: self.overhead_uj,
            arrived_pkts: self.arrived_pkts,
            arrived_bits: self.arrived_bits,
            forwarded_pkts: self.forwarded_pkts,
            forwarded_bits: self.forwarded_bits,
            dropped_pkts: self.dropped,
            mes: self
                .mes
                .iter()
                .map(|m| MeStats {
                    final_level: m.level,
                    ..m.stats.clone()
                })
                .collect(),
            windows: self.windows,
        }
    }

    /// Brings a microengine's energy and activity counters up to `now`.
    fn sync(&mut self, k: usize, now: u64) {
        let coeffs = self.cfg.power;
        let me = &mut self.mes[k];
        let dt = now - me.last_sync;
        if dt == 0 {
            return;
        }
        let mode = me.mode();
        let point = self.cfg.vf_table.point(me.level);
        let p = dynamic_power(&coeffs, point, mode == Mode::Busy);
        me.stats.energy_uj += p * dt as f64 / self.tpu as f64;
        let (w, s) = match mode {
            Mode::Busy => (&mut me.window.busy, &mut me.stats.busy_ticks),
            Mode::Idle => (&mut me.window.idle, &mut me.stats.idle_ticks),
            Mode::Stalled => (&mut me.window.stalled, &mut me.stats.stalled_ticks),
        };
        *w += dt;
        *s += dt;
        me.last_sync = now;
    }

    fn energy_at(&mut self, now: u64) -> f64 {
        for k in 0..self.mes.len() {
            self.sync(k, now);
        }
        self.mes.iter().map(|m| m.stats.energy_uj).sum::<f64>() + self.overhead_uj
    }

    fn emit(&mut self, now: u64, name: Arc<str>, idle_frac: f64) -> Result<(), SimError> {
        let energy = self.energy_at(now);
        let raw = [
            (now / self.ref_tpc) as f64,
            now as f64 / self.tpu as f64,
            energy,
            self.forwarded_pkts as f64,
            self.forwarded_bits as f64,
            self.dropped as f64,
            idle_frac,
        ];
        let values = raw.iter().zip(&self.keys).map(|(v, k)| k.quantize(*v)).collect();
        debug_assert_eq!(self.header.len(), raw.len());
        self.sink.emit(&TraceEvent::new(name, values))?;
        Ok(())
    }

    fn emits(&self, k: EventKind) -> bool {
        self.cfg.emit.contains(k)
    }

    fn arrive(&mut self, now: u64, i: usize) -> Result<(), SimError> {
        let bits = self.arrivals[i].size_bits as u64;
        self.arrived_pkts += 1;
        self.arrived_bits += bits;
        if matches!(self.policy, Some(DvsPolicy::Tdvs(_))) {
            self.window_bits += bits;
            self.overhead_uj += self.cfg.power.adder_energy_uj;
        }
        if let Some((me, t)) = self.pick_thread(Role::Receive) {
            self.emit_fifo(now)?;
            self.start_job(me, t, i, false, now)?;
        } else if self.rx_queue.len() < self.cfg.queue_capacity {
            self.rx_queue.push_back(i);
            self.emit_fifo(now)?;
        } else {
            self.dropped += 1;
        }
        Ok(())
    }

    fn emit_fifo(&mut self, now: u64) -> Result<(), SimError> {
        if self.emits(EventKind::Fifo) {
            self.emit(now, self.fifo_name.clone(), 0.0)?;
        }
        Ok(())
    }

    /// Least-loaded microengine of `role` with a free thread, preferring
    /// ones not stalled; ties go round-robin.
    fn pick_thread(&mut self, role: Role) -> Option<(usize, usize)> {
        let n = self.mes.len();
        let r = role_index(role);
        let start = self.rr[r];
        let mut best: Option<(bool, usize, usize)> = None;
        for off in 0..n {
            let k = (start + off) % n;
            let me = &self.mes[k];
            if me.role != role || me.free_thread().is_none() {
                continue;
            }
            let key = (me.stalled, me.load());
            if best.is_none_or(|(s, l, _)| key < (s, l)) {
                best = Some((key.0, key.1, k));
            }
        }
        let (_, _, k) = best?;
        self.rr[r] = (k + 1) % n;
        Some((k, self.mes[k].free_thread().expect("has free thread")))
    }

    fn start_job(&mut self, k: usize, t: usize, packet: usize, poll: bool, now: u64) -> Result<(), SimError> {
        self.sync(k, now);
        let prog = role_index(self.mes[k].role) * 2 + usize::from(poll);
        let job = Job {
            packet,
            prog,
            step: 0,
            remaining: 0,
        };
        self.mes[k].threads[t].job = Some(job);
        self.advance(k, t, now)
    }

    fn program(&self, prog: usize) -> &[Step] {
        &self.progs[prog / 2][prog % 2]
    }

    /// Moves a thread onto its job's current step.
    fn advance(&mut self, k: usize, t: usize, now: u64) -> Result<(), SimError> {
        let job = self.mes[k].threads[t].job.expect("thread has a job");
        match self.program(job.prog).get(job.step).copied() {
            None => return self.complete(k, t, now),
            Some(Step::Compute(c)) => {
                let th = &mut self.mes[k].threads[t];
                th.job.as_mut().expect("job").remaining = c;
                th.state = ThreadState::Ready;
                self.mes[k].ready.push_back(t);
                self.schedule(k, now);
            }
            Some(step) => {
                let done = match step {
                    Step::Sram => self.sram.access(now),
                    _ => self.sdram.access(now),
                };
                let me = &mut self.mes[k];
                me.threads[t].state = ThreadState::MemWait;
                me.mem_wait += 1;
                self.push(done, Ev::MemDone { me: k, thread: t });
            }
        }
        Ok(())
    }

    /// Starts the next ready thread if the pipeline is free.
    fn schedule(&mut self, k: usize, now: u64) {
        let tpc = self.tpc(k);
        let me = &mut self.mes[k];
        if me.stalled || me.running.is_some() {
            return;
        }
        let Some(t) = me.ready.pop_front() else { return };
        let remaining = me.threads[t].job.expect("job").remaining;
        me.threads[t].state = ThreadState::Running;
        me.running = Some(t);
        me.seg_start = now;
        me.seg_end = now + remaining * tpc;
        let (end, gen) = (me.seg_end, me.gen);
        self.push(end, Ev::SegmentDone { me: k, gen });
    }

    fn complete(&mut self, k: usize, t: usize, now: u64) -> Result<(), SimError> {
        let job = self.mes[k].threads[t].job.take().expect("job");
        self.mes[k].threads[t].state = ThreadState::Free;
        let next = match self.mes[k].role {
            Role::Receive => {
                if let Some((mk, mt)) = self.pick_thread(Role::Transmit) {
                    self.start_job(mk, mt, job.packet, false, now)?;
                } else {
                    self.fwd_queue.push_back(job.packet);
                }
                self.rx_queue.pop_front()
            }
            Role::Transmit => {
                self.forwarded_pkts += 1;
                self.forwarded_bits += self.arrivals[job.packet].size_bits as u64;
                if self.emits(EventKind::Forward) {
                    self.emit(now, self.forward_name.clone(), 0.0)?;
                }
                self.fwd_queue.pop_front()
            }
        };
        match next {
            Some(p) => self.start_job(k, t, p, true, now),
            None => Ok(()),
        }
    }

    fn handle(&mut self, now: u64, ev: Ev) -> Result<(), SimError> {
        match ev {
            Ev::SegmentDone { me: k, gen } => {
                if self.mes[k].gen != gen || self.mes[k].running.is_none() {
                    return Ok(());
                }
                self.sync(k, now);
                let me = &mut self.mes[k];
                let t = me.running.take().expect("segment without running thread");
                me.gen += 1;
                let job = me.threads[t].job.as_mut().expect("job");
                job.step += 1;
                job.remaining = 0;
                if self.emits(EventKind::Pipeline) {
                    let name = self.me_names[k].0.clone();
                    self.emit(now, name, 0.0)?;
                }
                self.advance(k, t, now)?;
                self.schedule(k, now);
            }
            Ev::MemDone { me: k, thread: t } => {
                self.sync(k, now);
                let me = &mut self.mes[k];
                me.mem_wait -= 1;
                me.threads[t].state = ThreadState::Ready;
                me.threads[t].job.as_mut().expect("job").step += 1;
                self.advance(k, t, now)?;
            }
            Ev::StallEnd { me: k } => {
                if self.mes[k].stalled && self.mes[k].stall_until == now {
                    self.sync(k, now);
                    self.mes[k].stalled = false;
                    self.schedule(k, now);
                }
            }
            Ev::Window => self.window(now)?,
        }
        Ok(())
    }

    fn window(&mut self, now: u64) -> Result<(), SimError> {
        for k in 0..self.mes.len() {
            self.sync(k, now);
        }
        let duration_us = self.window_ticks as f64 / self.tpu as f64;
        let rate = window_rate(self.window_bits, duration_us)?;
        self.window_index += 1;
        self.windows.push(WindowStats {
            end_cycle: now / self.ref_tpc,
            arrived_bits: self.window_bits,
            rate_mbps: rate,
            activity: self.mes.iter().map(|m| m.window).collect(),
            levels: self.mes.iter().map(|m| m.level).collect(),
        });
        if self.emits(EventKind::Idle) {
            for k in 0..self.mes.len() {
                let frac = self.mes[k].window.idle_frac();
                self.emit(now, self.me_names[k].1.clone(), frac)?;
            }
        }
        match self.policy {
            Some(DvsPolicy::Tdvs(p)) => {
                let d = p.decide(rate, self.chip_level);
                if d.level != self.chip_level {
                    self.chip_level = d.level;
                    for k in 0..self.mes.len() {
                        self.apply_vf_change(k, d.level, now);
                    }
                }
            }
            Some(DvsPolicy::Edvs(p)) => {
                let len = self.cfg.vf_table.len();
                for k in 0..self.mes.len() {
                    let d = p.decide(self.mes[k].window.idle_frac(), self.mes[k].level, len);
                    self.apply_vf_change(k, d.level, now);
                }
            }
            None => {}
        }
        for me in &mut self.mes {
            me.window = IdleWindow::default();
        }
        self.window_bits = 0;
        if now + self.window_ticks <= self.end {
            self.push(now + self.window_ticks, Ev::Window);
        }
        Ok(())
    }

    /// Switches a microengine to `level` and stalls it for the scaling
    /// penalty. The interrupted segment resumes afterwards with its
    /// remaining cycles at the new clock.
    fn apply_vf_change(&mut self, k: usize, level: usize, now: u64) {
        if self.mes[k].level == level {
            return;
        }
        self.sync(k, now);
        let old_tpc = self.tpc(k);
        let penalty = self.penalty_ticks;
        let me = &mut self.mes[k];
        if let Some(t) = me.running.take() {
            let left = (me.seg_end - now).div_ceil(old_tpc);
            me.threads[t].job.as_mut().expect("job").remaining = left;
            me.threads[t].state = ThreadState::Ready;
            me.ready.push_front(t);
            me.gen += 1;
        }
        me.level = level;
        me.stalled = true;
        me.stall_until = now + penalty;
        me.stats.transitions += 1;
        self.push(now + penalty, Ev::StallEnd { me: k });
    }
}
