//! Controller throughput sweep (CBench style) and ping-pong latency runs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controlplane::{controller_capacity, Cluster, ClusterConfig, ClusterError, ClusterMode, ControllerId};
use crate::dataplane::{FlowKey, PacketIn};
use crate::metrics::{fit_labels, telemetry_labels, telemetry_row, MatrixWriter};
use crate::network::{NetConfig, NetworkError, NetworkSim, PingConfig, PingResult, SourceOptions};
use crate::sim::{Scheduler, SimTime};
use crate::topology::{NodeId, Topology};
use crate::traffic::{TrafficPattern, TrafficSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchError {
    #[error("invalid benchmark configuration: {0}")]
    InvalidConfig(String),
    #[error("results were produced by different configurations")]
    MismatchedConfigs,
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("export failed: {0}")]
    Export(String),
}

pub const DEFAULT_SWITCH_COUNTS: [u32; 7] = [3, 6, 12, 24, 48, 96, 192];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub switch_counts: Vec<u32>,
    /// Packet-ins per second per switch. `None` runs throughput mode: every
    /// switch keeps `window` requests outstanding.
    pub offered_rate_per_switch: Option<f64>,
    pub window: u32,
    pub duration: SimTime,
    /// Leading part of the run left out of the throughput-mode rate.
    pub warmup: SimTime,
    /// One-way switch to controller delay.
    pub control_delay: SimTime,
    pub modes: Vec<ClusterMode>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            switch_counts: DEFAULT_SWITCH_COUNTS.to_vec(),
            offered_rate_per_switch: None,
            window: 256,
            duration: SimTime::from_secs(1),
            warmup: SimTime::from_millis(100),
            control_delay: SimTime::from_micros(50),
            modes: vec![ClusterMode::Centralized, ClusterMode::DistributedFlat],
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::InvalidConfig(m.to_string()));
        if self.switch_counts.is_empty() || self.switch_counts.iter().any(|n| !(3..=192).contains(n)) {
            return bad("switch counts must lie in [3, 192]");
        }
        if self.switch_counts.windows(2).any(|w| w[0] >= w[1]) {
            return bad("switch counts must be strictly increasing");
        }
        if let Some(r) = self.offered_rate_per_switch {
            if !(r > 0.0 && r.is_finite()) {
                return bad("offered rate must be positive");
            }
        }
        if self.window == 0 || self.duration == SimTime::ZERO || self.warmup >= self.duration {
            return bad("window and duration must be positive and warmup shorter than duration");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub mode: ClusterMode,
    pub switches: u32,
    pub responses_per_s: f64,
    /// Sum of controller capacities at this mastership.
    pub capacity_oracle: f64,
}

#[derive(Clone, Copy, Debug)]
enum SweepEv {
    Send(u32),
    Arrive(ControllerId, PacketIn),
    Done(ControllerId),
    Response(u32),
}

fn sweep_point(cfg: &SweepConfig, cluster_cfg: &ClusterConfig, n: u32) -> Result<SweepPoint, BenchError> {
    let mut cc = cluster_cfg.clone();
    cc.params.inbox_capacity = None;
    let switches: Vec<NodeId> = (1..=n).map(NodeId::switch).collect();
    let mut cluster = Cluster::new(cc, switches)?;
    let capacity_oracle = cluster
        .controllers()
        .iter()
        .map(|c| controller_capacity(&c.params, c.owned()))
        .sum();
    let mut sched: Scheduler<SweepEv> = Scheduler::new();
    let d = cfg.control_delay;
    match cfg.offered_rate_per_switch {
        Some(rate) => {
            let per = (rate * cfg.duration.as_secs_f64()).floor() as u64;
            let step = 1e9 / rate;
            for s in 1..=n {
                let phase = step * f64::from(s - 1) / f64::from(n);
                for k in 0..per {
                    let t = SimTime::from_nanos((phase + k as f64 * step).round() as u64);
                    sched.schedule(t, SweepEv::Send(s)).expect("future");
                }
            }
        }
        None => {
            for s in 1..=n {
                for _ in 0..cfg.window {
                    sched.schedule(SimTime::ZERO, SweepEv::Send(s)).expect("future");
                }
            }
        }
    }
    let throughput_mode = cfg.offered_rate_per_switch.is_none();
    let end = if throughput_mode { cfg.duration } else { SimTime::MAX };
    let mut counted = 0u64;
    let mut seq = 0u64;
    while let Some((now, ev)) = sched.pop_before(end) {
        match ev {
            SweepEv::Send(s) => {
                let sw = NodeId::switch(s);
                let master = cluster.master_of(sw).expect("all switches mastered");
                seq += 1;
                let pi = PacketIn { switch: sw, key: FlowKey::new(0, s, seq), in_port: 0, sent_at: now, buffered: true };
                sched.schedule_in(d, SweepEv::Arrive(master, pi));
            }
            SweepEv::Arrive(c, pi) => {
                let m = cluster.controller_mut(c).expect("exists");
                if let Ok(true) = m.offer(pi) {
                    let st = m.effective_service_time();
                    sched.schedule_in(st, SweepEv::Done(c));
                }
            }
            SweepEv::Done(c) => {
                let m = cluster.controller_mut(c).expect("exists");
                let pi = m.complete().expect("busy controller has work");
                if m.is_busy() {
                    let st = m.effective_service_time();
                    sched.schedule_in(st, SweepEv::Done(c));
                }
                sched.schedule_in(d, SweepEv::Response(pi.switch.index));
            }
            SweepEv::Response(s) => {
                if !throughput_mode || now >= cfg.warmup {
                    counted += 1;
                }
                if throughput_mode {
                    sched.schedule_in(SimTime::ZERO, SweepEv::Send(s));
                }
            }
        }
    }
    let span = if throughput_mode { cfg.duration - cfg.warmup } else { cfg.duration };
    Ok(SweepPoint {
        mode: cluster_cfg.mode,
        switches: n,
        responses_per_s: counted as f64 / span.as_secs_f64(),
        capacity_oracle,
    })
}

/// One point per (mode, switch count), in config order. Points run on
/// separate threads.
pub fn run_sweep(cfg: &SweepConfig, clusters: &[ClusterConfig]) -> Result<Vec<SweepPoint>, BenchError> {
    cfg.validate()?;
    for c in clusters {
        c.validate()?;
    }
    let jobs: Vec<(&ClusterConfig, u32)> =
        clusters.iter().flat_map(|c| cfg.switch_counts.iter().map(move |n| (c, *n))).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = jobs.iter().map(|(c, n)| s.spawn(move || sweep_point(cfg, c, *n))).collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    Unacknowledged,
    Acknowledged,
}

impl Transport {
    pub fn label(self) -> &'static str {
        match self {
            Transport::Unacknowledged => "unack",
            Transport::Acknowledged => "ack",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PingPongConfig {
    /// Endpoints by host index; `None` picks the farthest host pair.
    pub node_a: Option<u32>,
    pub node_b: Option<u32>,
    pub count: u64,
    pub payload: u32,
    pub gap: SimTime,
    pub transport: Transport,
    /// Every message opens a new flow, so each exchange crosses the control
    /// plane. Warm runs reuse one flow and drop the first exchange.
    pub cold: bool,
}

impl Default for PingPongConfig {
    fn default() -> Self {
        PingPongConfig {
            node_a: None,
            node_b: None,
            count: 1000,
            payload: 64,
            gap: SimTime::from_millis(1),
            transport: Transport::Unacknowledged,
            cold: true,
        }
    }
}

impl PingPongConfig {
    pub fn endpoints(&self, topo: &Topology) -> Result<(u32, u32), BenchError> {
        match (self.node_a, self.node_b) {
            (Some(a), Some(b)) => Ok((a, b)),
            (None, None) => topo
                .farthest_pair()
                .map(|(a, b, _)| (a.index, b.index))
                .ok_or_else(|| BenchError::InvalidConfig("topology has fewer than two hosts".into())),
            _ => Err(BenchError::InvalidConfig("give both ping endpoints or neither".into())),
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.count == 0 || self.payload == 0 {
            return Err(BenchError::InvalidConfig("ping count and payload must be positive".into()));
        }
        if self.node_a.is_some() && self.node_a == self.node_b {
            return Err(BenchError::InvalidConfig("ping endpoints must differ".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PingPongResult {
    pub mode: ClusterMode,
    pub config: PingPongConfig,
    pub endpoints: (u32, u32),
    pub samples: Vec<PingResult>,
}

impl PingPongResult {
    pub fn rtts_us(&self) -> Vec<f64> {
        self.samples.iter().filter_map(|s| s.rtt).map(SimTime::as_micros_f64).collect()
    }

    pub fn mean_rtt_us(&self) -> f64 {
        let v = self.rtts_us();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }

    /// Mean one-way latency, taken as half the round trip.
    pub fn mean_one_way_us(&self) -> f64 {
        self.mean_rtt_us() / 2.0
    }

    pub fn lost(&self) -> usize {
        self.samples.iter().filter(|s| s.rtt.is_none()).count()
    }

    pub fn percentile_rtt_us(&self, p: f64) -> f64 {
        let mut v = self.rtts_us();
        if v.is_empty() {
            return 0.0;
        }
        v.sort_by(f64::total_cmp);
        let i = ((p / 100.0) * (v.len() - 1) as f64).round() as usize;
        v[i.min(v.len() - 1)]
    }
}

pub fn run_pingpong(
    cfg: &PingPongConfig,
    topo: Topology,
    cluster: &ClusterConfig,
    net: &NetConfig,
    seed: u64,
) -> Result<PingPongResult, BenchError> {
    cfg.validate()?;
    let (a, b) = cfg.endpoints(&topo)?;
    let mut sim = NetworkSim::new(topo, cluster.clone(), net.clone(), seed)?;
    let warm_extra = u64::from(!cfg.cold);
    sim.add_ping(PingConfig {
        client: a,
        server: b,
        count: cfg.count + warm_extra,
        payload: cfg.payload,
        gap: cfg.gap,
        start: SimTime::ZERO,
        acknowledged: cfg.transport == Transport::Acknowledged,
        cold: cfg.cold,
    })?;
    let per = cfg.gap + net.ping_timeout;
    let horizon = SimTime::from_nanos(per.as_nanos().saturating_mul(cfg.count + warm_extra + 1));
    let mut t = SimTime::ZERO;
    while (sim.ping_results().len() as u64) < cfg.count + warm_extra && t < horizon {
        t = t + SimTime::from_secs(1);
        sim.run_until(t);
    }
    let samples = sim.ping_results()[warm_extra as usize..].to_vec();
    Ok(PingPongResult { mode: cluster.mode, config: cfg.clone(), endpoints: (a, b), samples })
}

/// `(1 - a / b) * 100`: how much lower `a` is than `b`, in percent.
pub fn reduction_pct(mean_a: f64, mean_b: f64) -> f64 {
    (1.0 - mean_a / mean_b) * 100.0
}

/// Latency reduction of `a` relative to `b` by mean one-way latency.
pub fn compare_latency(a: &PingPongResult, b: &PingPongResult) -> Result<f64, BenchError> {
    if a.config != b.config || a.endpoints != b.endpoints {
        return Err(BenchError::MismatchedConfigs);
    }
    Ok(reduction_pct(a.mean_one_way_us(), b.mean_one_way_us()))
}

/// Telemetry workload: every host reports to `sink` in periodic groups; the
/// sink itself reports to the next host.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixRun {
    pub rows: usize,
    pub cols: usize,
    pub sample_interval: SimTime,
    pub group_size: u32,
    pub period: SimTime,
    pub packet_size: u32,
    pub sink: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixOutcome {
    pub rows: usize,
    pub cols: usize,
    pub events: u64,
    pub wall: std::time::Duration,
}

/// Runs the telemetry workload and streams one row per sample interval to `path`.
pub fn run_telemetry_matrix(
    run: &MatrixRun,
    topo: Topology,
    cluster: &ClusterConfig,
    net: &NetConfig,
    seed: u64,
    path: &std::path::Path,
) -> Result<MatrixOutcome, BenchError> {
    if run.rows == 0 || run.cols == 0 || run.sample_interval == SimTime::ZERO || run.period == SimTime::ZERO {
        return Err(BenchError::InvalidConfig("matrix run needs positive rows, columns and intervals".into()));
    }
    let started = std::time::Instant::now();
    let hosts: Vec<u32> = topo.hosts().map(|h| h.index).collect();
    if !hosts.contains(&run.sink) || hosts.len() < 2 {
        return Err(BenchError::InvalidConfig(format!("sink host {} is not in the topology", run.sink)));
    }
    let end = SimTime::from_nanos(run.sample_interval.as_nanos().saturating_mul(run.rows as u64));
    let mut sim = NetworkSim::new(topo, cluster.clone(), net.clone(), seed)?;
    let n = hosts.len() as u64;
    for (i, &h) in hosts.iter().enumerate() {
        let dst = if h == run.sink { hosts[(i + 1) % hosts.len()] } else { run.sink };
        let spec = TrafficSpec {
            pattern: TrafficPattern::PeriodicGroup { group_size: run.group_size, period: run.period },
            src: h,
            dst,
            packet_size: run.packet_size,
            start: SimTime::from_nanos(run.period.as_nanos() / n * i as u64),
            stop: end,
            spoofed: false,
        };
        sim.add_source(&format!("telemetry-h{h}"), spec, SourceOptions::default())?;
    }
    let export = |e: crate::metrics::MetricsError| BenchError::Export(e.to_string());
    let mut prev = sim.telemetry();
    let labels = fit_labels(telemetry_labels(&prev), run.cols);
    let mut w = MatrixWriter::create(path, &labels).map_err(export)?;
    for r in 1..=run.rows as u64 {
        sim.run_until(SimTime::from_nanos(run.sample_interval.as_nanos() * r));
        let cur = sim.telemetry();
        w.write_row(&telemetry_row(&prev, &cur)).map_err(export)?;
        prev = cur;
    }
    let rows = w.finish().map_err(export)?;
    Ok(MatrixOutcome { rows, cols: labels.len(), events: sim.events_executed(), wall: started.elapsed() })
}
