//! Traffic generators and the DoS attack scenario.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controlplane::{ClusterConfig, ControllerId};
use crate::dataplane::PacketKind;
use crate::metrics::{phase_summary, windowed_throughput, RunReport, ThroughputSeries};
use crate::network::{ControlEvent, ControlStats, NetConfig, NetworkError, NetworkSim, SourceOptions, TagStats};
use crate::sim::{RandomStream, SimTime};
use crate::topology::{build_ieee118_with, Ieee118Options, NodeId, Topology, DEFAULT_BANDWIDTH_BPS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrafficError {
    #[error("invalid traffic spec: {0}")]
    InvalidSpec(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrafficPattern {
    /// Exponential inter-arrivals at `rate_per_s`.
    Poisson { rate_per_s: f64 },
    /// `group_size` packets back to back every `period`.
    PeriodicGroup { group_size: u32, period: SimTime },
    /// Fixed spacing that yields `bits_per_s` at the source's packet size.
    ConstantRate { bits_per_s: f64 },
    /// `count` packets at a fixed inter-arrival time.
    Flood { count: u64, iat: SimTime },
}

/// One traffic source between two hosts (by host index) over `[start, stop)`.
/// A `spoofed` source draws a fresh random flow class per packet and uses
/// source address 0, so every packet is a new flow.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficSpec {
    pub pattern: TrafficPattern,
    pub src: u32,
    pub dst: u32,
    pub packet_size: u32,
    pub start: SimTime,
    pub stop: SimTime,
    #[serde(default)]
    pub spoofed: bool,
}

impl TrafficSpec {
    pub fn validate(&self) -> Result<(), TrafficError> {
        let bad = |m: &str| Err(TrafficError::InvalidSpec(m.to_string()));
        if self.packet_size == 0 {
            return bad("packet size must be positive");
        }
        if self.src == self.dst {
            return bad("source and destination must differ");
        }
        if self.stop < self.start {
            return bad("stop precedes start");
        }
        match self.pattern {
            TrafficPattern::Poisson { rate_per_s } if !(rate_per_s > 0.0 && rate_per_s.is_finite()) => {
                bad("poisson rate must be positive")
            }
            TrafficPattern::PeriodicGroup { group_size, period } if group_size == 0 || period == SimTime::ZERO => {
                bad("group size and period must be positive")
            }
            TrafficPattern::ConstantRate { bits_per_s } if !(bits_per_s > 0.0 && bits_per_s.is_finite()) => {
                bad("constant rate must be positive")
            }
            TrafficPattern::Flood { iat, .. } if iat == SimTime::ZERO => bad("flood inter-arrival must be positive"),
            _ => Ok(()),
        }
    }
}

/// Lazily produced emission instants of one spec. Packets of a group share
/// an instant.
#[derive(Clone, Debug)]
pub struct EmissionSchedule {
    spec: TrafficSpec,
    stream: RandomStream,
    k: u64,
    next_poisson: SimTime,
}

impl EmissionSchedule {
    pub fn new(spec: TrafficSpec, stream: RandomStream) -> Result<Self, TrafficError> {
        spec.validate()?;
        let mut s = EmissionSchedule { spec, stream, k: 0, next_poisson: spec.start };
        if let TrafficPattern::Poisson { rate_per_s } = spec.pattern {
            s.next_poisson = spec.start + s.stream.exp_duration(rate_per_s).expect("validated");
        }
        Ok(s)
    }

    pub fn spec(&self) -> &TrafficSpec {
        &self.spec
    }

    pub fn stream_mut(&mut self) -> &mut RandomStream {
        &mut self.stream
    }

    fn offset(start: SimTime, k: u64, step_ns: f64) -> SimTime {
        start + SimTime::from_nanos((k as f64 * step_ns).round() as u64)
    }
}

impl Iterator for EmissionSchedule {
    type Item = SimTime;

    fn next(&mut self) -> Option<SimTime> {
        let spec = self.spec;
        let t = match spec.pattern {
            TrafficPattern::Poisson { rate_per_s } => {
                let t = self.next_poisson;
                if t < spec.stop {
                    self.next_poisson = t + self.stream.exp_duration(rate_per_s).expect("validated");
                }
                t
            }
            TrafficPattern::PeriodicGroup { group_size, period } => {
                let group = self.k / u64::from(group_size);
                spec.start + SimTime::from_nanos(group * period.as_nanos())
            }
            TrafficPattern::ConstantRate { bits_per_s } => {
                let step = f64::from(spec.packet_size) * 8.0 / bits_per_s * 1e9;
                Self::offset(spec.start, self.k, step)
            }
            TrafficPattern::Flood { count, iat } => {
                if self.k >= count {
                    return None;
                }
                spec.start + SimTime::from_nanos(self.k * iat.as_nanos())
            }
        };
        if t >= spec.stop {
            return None;
        }
        self.k += 1;
        Some(t)
    }
}

/// Every emission instant of `spec`, materialized.
pub fn generate(spec: &TrafficSpec, stream: RandomStream) -> Result<Vec<SimTime>, TrafficError> {
    Ok(EmissionSchedule::new(*spec, stream)?.collect())
}

/// Run size. Desk scale divides every rate and bandwidth by 1000.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Desk,
    Full,
}

impl Scale {
    pub fn factor(self) -> f64 {
        match self {
            Scale::Desk => 1e-3,
            Scale::Full => 1.0,
        }
    }

    pub fn link_bandwidth_bps(self) -> f64 {
        DEFAULT_BANDWIDTH_BPS * self.factor()
    }
}

/// Flow-table size of every switch in the attack scenario.
pub const DOS_FLOW_TABLE_CAPACITY: usize = 6000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackScenario {
    pub attacker: u32,
    pub victim: u32,
    pub flood: TrafficSpec,
    pub background: TrafficSpec,
    pub total_duration: SimTime,
    pub attack_window: (SimTime, SimTime),
    /// The victim acknowledges every n-th background packet.
    pub ack_every: u32,
    pub window: SimTime,
    pub warmup: SimTime,
}

impl AttackScenario {
    /// Background 1 -> 2 for 30 s, spoofed flood 3 -> 2 over [10, 20) s.
    pub fn standard(scale: Scale) -> Self {
        let f = scale.factor();
        let (start, stop) = (SimTime::from_secs(10), SimTime::from_secs(20));
        let iat = SimTime::from_secs_f64(50e-9 / f);
        AttackScenario {
            attacker: 3,
            victim: 2,
            flood: TrafficSpec {
                pattern: TrafficPattern::Flood { count: (10.0 / iat.as_secs_f64()).round() as u64, iat },
                src: 3,
                dst: 2,
                packet_size: 64,
                start,
                stop,
                spoofed: true,
            },
            background: TrafficSpec {
                pattern: TrafficPattern::ConstantRate { bits_per_s: 18e9 * f },
                src: 1,
                dst: 2,
                packet_size: 1500,
                start: SimTime::ZERO,
                stop: SimTime::from_secs(30),
                spoofed: false,
            },
            total_duration: SimTime::from_secs(30),
            attack_window: (start, stop),
            ack_every: 10,
            window: SimTime::from_secs(1),
            warmup: SimTime::from_secs(5),
        }
    }

    pub fn validate(&self) -> Result<(), TrafficError> {
        let bad = |m: &str| Err(TrafficError::InvalidSpec(m.to_string()));
        if self.attacker == self.victim {
            return bad("victim and attacker must differ");
        }
        let (a, b) = self.attack_window;
        if a > b || b > self.total_duration {
            return bad("attack window must lie inside the run");
        }
        if !matches!(self.flood.pattern, TrafficPattern::Flood { .. }) {
            return bad("flood must use the flood pattern");
        }
        if !matches!(self.background.pattern, TrafficPattern::ConstantRate { .. }) {
            return bad("background must be constant rate");
        }
        if self.flood.src != self.attacker || self.flood.dst != self.victim || self.background.dst != self.victim {
            return bad("flood runs attacker to victim and background ends at the victim");
        }
        if self.ack_every == 0 || self.window == SimTime::ZERO || self.warmup > a {
            return bad("ack spacing and window must be positive and warmup must end before the attack");
        }
        self.flood.validate()?;
        self.background.validate()
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig { flow_table_capacity: Some(DOS_FLOW_TABLE_CAPACITY), jitter_mu: Some(1e6), ..NetConfig::default() }
    }
}

/// Everything measured in one attack run.
#[derive(Clone, Debug)]
pub struct DosRun {
    pub report: RunReport,
    pub background: TagStats,
    pub flood: TagStats,
    pub in_flight: u64,
    pub control: ControlStats,
    pub control_log: Vec<ControlEvent>,
    /// Cumulative drops at the victim's access port, sampled per window.
    pub victim_port_drops: Vec<u64>,
    pub wall: std::time::Duration,
}

/// Runs `scn` once. `failure` kills a controller at the given instant.
pub fn run_dos_scenario(
    scn: &AttackScenario,
    cluster: &ClusterConfig,
    topo: Topology,
    net: &NetConfig,
    seed: u64,
    rep: u32,
    failure: Option<(ControllerId, SimTime)>,
) -> Result<DosRun, NetworkError> {
    scn.validate()?;
    let started = std::time::Instant::now();
    let victim = NodeId::host(scn.victim);
    let access = topo.access_switch(victim).ok_or(NetworkError::UnknownHost(scn.victim))?;
    let mut sim = NetworkSim::new(topo, cluster.clone(), net.clone(), seed)?;
    let bg_opts = SourceOptions { ack_every: Some(scn.ack_every), window_bytes: None, record: true };
    let bg = sim.add_source("background", scn.background, bg_opts)?;
    let mut flood_spec = scn.flood;
    flood_spec.start = scn.attack_window.0;
    flood_spec.stop = scn.attack_window.1;
    let flood = if flood_spec.start < flood_spec.stop {
        Some(sim.add_source("flood", flood_spec, SourceOptions::default())?)
    } else {
        None
    };
    if let Some((c, at)) = failure {
        sim.schedule_failure(c, at)?;
    }
    let mut victim_port_drops = Vec::new();
    let mut t = SimTime::ZERO;
    while t < scn.total_duration {
        t = (t + scn.window).min(scn.total_duration);
        sim.run_until(t);
        victim_port_drops.push(sim.port_drops(access, victim).unwrap_or(0));
    }
    let records: Vec<(SimTime, u64)> = sim
        .deliveries(bg)
        .iter()
        .filter(|d| d.kind == PacketKind::Data)
        .map(|d| (d.time, u64::from(d.size) * 8))
        .collect();
    let bits = windowed_throughput(&records, scn.window, scn.total_duration);
    let series = ThroughputSeries { mode: cluster.mode.label().to_string(), rep, window: scn.window, bits };
    let (a, b) = scn.attack_window;
    let summary = phase_summary(&series.bits_per_s(), series.window_s(), (a.as_secs_f64(), b.as_secs_f64()), scn.warmup.as_secs_f64())
        .map_err(|e| NetworkError::InvalidConfig(e.to_string()))?;
    let in_flight = sim.in_flight(bg) + flood.map_or(0, |f| sim.in_flight(f));
    Ok(DosRun {
        report: RunReport {
            mode: series.mode.clone(),
            rep,
            seed,
            series,
            summary,
            rtts: sim.source_rtts(bg),
            events: sim.events_executed(),
        },
        background: sim.tag_stats(bg),
        flood: flood.map(|f| sim.tag_stats(f)).unwrap_or_default(),
        in_flight,
        control: sim.control_stats(),
        control_log: sim.control_log().to_vec(),
        victim_port_drops,
        wall: started.elapsed(),
    })
}

/// The scenario topology: the default grid network at the scale's bandwidth.
pub fn scenario_topology(scale: Scale) -> Topology {
    build_ieee118_with(&Ieee118Options { bandwidth_bps: scale.link_bandwidth_bps(), ..Ieee118Options::default() })
}
