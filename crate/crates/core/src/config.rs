//! Scenario configuration document (TOML). Every key is optional; missing
//! keys take the built-in defaults, unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{PingPongConfig, SweepConfig, Transport, DEFAULT_SWITCH_COUNTS};
use crate::controlplane::{ClusterConfig, ClusterMode};
use crate::network::NetConfig;
use crate::sim::SimTime;
use crate::topology::{build_ieee118_with, load_topology, Ieee118Options, Topology, DEFAULT_MEAN_PD_US, DEFAULT_PD_NOISE_US};
use crate::traffic::{AttackScenario, Scale, TrafficPattern};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologySection {
    /// Topology document; relative paths resolve against the config file.
    pub file: Option<PathBuf>,
    pub seed: u64,
    pub mean_pd_us: f64,
    pub pd_noise_stddev_us: f64,
    /// Link bandwidth of the built-in network; defaults to the scale's.
    pub bandwidth_bps: Option<f64>,
}

impl Default for TopologySection {
    fn default() -> Self {
        TopologySection {
            file: None,
            seed: 42,
            mean_pd_us: DEFAULT_MEAN_PD_US,
            pd_noise_stddev_us: DEFAULT_PD_NOISE_US,
            bandwidth_bps: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSection {
    pub base_service_us: Option<f64>,
    pub per_switch_overhead: Option<f64>,
    pub inbox_capacity: Option<usize>,
    pub unbounded_inbox: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterSection {
    pub modes: Vec<ClusterMode>,
    pub centralized: ControllerSection,
    pub distributed: ControllerSection,
    pub sync_delay_us: f64,
    pub detection_timeout_ms: f64,
}

impl Default for ClusterSection {
    fn default() -> Self {
        ClusterSection {
            modes: vec![ClusterMode::Centralized, ClusterMode::DistributedFlat],
            centralized: ControllerSection::default(),
            distributed: ControllerSection::default(),
            sync_delay_us: 1000.0,
            detection_timeout_ms: 500.0,
        }
    }
}

/// Overrides applied on top of each experiment's own network defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub port_capacity: Option<usize>,
    pub miss_buffer: Option<usize>,
    pub buffer_timeout_ms: Option<f64>,
    pub flow_table_capacity: Option<usize>,
    pub unlimited_flow_table: bool,
    pub idle_timeout_s: Option<f64>,
    pub control_delay_us: Option<f64>,
    pub jitter_mu: Option<f64>,
    pub no_jitter: bool,
    pub flush_on_outage: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    pub attacker: Option<u32>,
    pub victim: Option<u32>,
    pub sender: Option<u32>,
    pub duration_s: Option<f64>,
    pub start_s: Option<f64>,
    pub stop_s: Option<f64>,
    pub flood_iat_us: Option<f64>,
    pub flood_count: Option<u64>,
    pub flood_packet_size: Option<u32>,
    pub background_bps: Option<f64>,
    pub background_packet_size: Option<u32>,
    pub ack_every: Option<u32>,
    pub warmup_s: Option<f64>,
    /// Kill this controller during the run.
    pub fail_controller: Option<u32>,
    pub fail_at_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub switch_counts: Vec<u32>,
    pub offered_rate_per_switch: Option<f64>,
    pub window: u32,
    pub duration_s: f64,
    pub control_delay_us: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        let d = SweepConfig::default();
        SweepSection {
            switch_counts: DEFAULT_SWITCH_COUNTS.to_vec(),
            offered_rate_per_switch: None,
            window: d.window,
            duration_s: d.duration.as_secs_f64(),
            control_delay_us: d.control_delay.as_micros_f64(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PingSection {
    pub node_a: Option<u32>,
    pub node_b: Option<u32>,
    pub count: u64,
    pub payload: u32,
    pub gap_ms: f64,
    pub transports: Vec<Transport>,
    pub cold: bool,
}

impl Default for PingSection {
    fn default() -> Self {
        let d = PingPongConfig::default();
        PingSection {
            node_a: None,
            node_b: None,
            count: d.count,
            payload: d.payload,
            gap_ms: d.gap.as_secs_f64() * 1e3,
            transports: vec![Transport::Unacknowledged, Transport::Acknowledged],
            cold: d.cold,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub sweep: SweepSection,
    pub pingpong: PingSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatrixSection {
    pub rows: usize,
    pub cols: usize,
    pub sample_interval_s: f64,
    pub group_size: u32,
    pub period_s: f64,
    pub packet_size: u32,
    /// Host collecting every other host's telemetry.
    pub sink: u32,
    pub mode: ClusterMode,
}

impl Default for MatrixSection {
    fn default() -> Self {
        MatrixSection {
            rows: 10_000,
            cols: 691,
            sample_interval_s: 4.0,
            group_size: 4,
            period_s: 4.0,
            packet_size: 128,
            sink: 1,
            mode: ClusterMode::DistributedFlat,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Rep `i` uses `seeds[i]` when listed, otherwise `seeds[0] + i`.
    pub seeds: Vec<u64>,
    pub replications: u32,
    pub scale: Scale,
    pub topology: TopologySection,
    pub cluster: ClusterSection,
    pub network: NetworkSection,
    pub attack: AttackSection,
    pub bench: BenchSection,
    pub matrix: MatrixSection,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seeds: vec![1],
            replications: 3,
            scale: Scale::Desk,
            topology: TopologySection::default(),
            cluster: ClusterSection::default(),
            network: NetworkSection::default(),
            attack: AttackSection::default(),
            bench: BenchSection::default(),
            matrix: MatrixSection::default(),
        }
    }
}

fn ms(v: f64) -> SimTime {
    SimTime::from_secs_f64(v / 1e3)
}

fn us(v: f64) -> SimTime {
    SimTime::from_micros_f64(v)
}

fn positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!("{name} must be positive, got {v}")))
    }
}

impl ScenarioConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.message().to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.to_path_buf(), message: e.to_string() })?;
        let mut cfg = Self::parse(&text, path)?;
        if let (Some(f), Some(dir)) = (cfg.topology.file.as_ref(), path.parent()) {
            if f.is_relative() {
                cfg.topology.file = Some(dir.join(f));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn seed_for(&self, rep: u32) -> u64 {
        self.seeds.get(rep as usize).copied().unwrap_or_else(|| self.seeds[0].wrapping_add(u64::from(rep)))
    }

    pub fn topology(&self) -> Result<Topology, ConfigError> {
        if let Some(path) = &self.topology.file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError::Read { path: path.clone(), message: e.to_string() })?;
            return load_topology(&text).map_err(|e| ConfigError::Parse { path: path.clone(), message: e.to_string() });
        }
        let t = &self.topology;
        Ok(build_ieee118_with(&Ieee118Options {
            seed: t.seed,
            mean_pd_us: t.mean_pd_us,
            pd_noise_stddev_us: t.pd_noise_stddev_us,
            bandwidth_bps: t.bandwidth_bps.unwrap_or_else(|| self.scale.link_bandwidth_bps()),
            ..Ieee118Options::default()
        }))
    }

    pub fn cluster(&self, mode: ClusterMode) -> ClusterConfig {
        let mut c = ClusterConfig::for_mode(mode);
        let sec = match mode {
            ClusterMode::Centralized => &self.cluster.centralized,
            ClusterMode::DistributedFlat => &self.cluster.distributed,
        };
        if let Some(v) = sec.base_service_us {
            c.params.base_service_us = v;
        }
        if let Some(v) = sec.per_switch_overhead {
            c.params.per_switch_overhead = v;
        }
        if let Some(v) = sec.inbox_capacity {
            c.params.inbox_capacity = Some(v);
        }
        if sec.unbounded_inbox {
            c.params.inbox_capacity = None;
        }
        c.sync_delay = us(self.cluster.sync_delay_us);
        c.failure_detection_timeout = ms(self.cluster.detection_timeout_ms);
        c
    }

    pub fn apply_network(&self, mut n: NetConfig) -> NetConfig {
        let s = &self.network;
        if let Some(v) = s.port_capacity {
            n.port_capacity = v;
        }
        if let Some(v) = s.miss_buffer {
            n.miss_buffer = v;
        }
        if let Some(v) = s.buffer_timeout_ms {
            n.buffer_timeout = ms(v);
        }
        if let Some(v) = s.flow_table_capacity {
            n.flow_table_capacity = Some(v);
        }
        if s.unlimited_flow_table {
            n.flow_table_capacity = None;
        }
        if let Some(v) = s.idle_timeout_s {
            n.idle_timeout = SimTime::from_secs_f64(v);
        }
        if let Some(v) = s.control_delay_us {
            n.control_delay = Some(us(v));
        }
        if let Some(v) = s.jitter_mu {
            n.jitter_mu = Some(v);
        }
        if s.no_jitter {
            n.jitter_mu = None;
        }
        if let Some(v) = s.flush_on_outage {
            n.flush_on_outage = v;
        }
        n
    }

    pub fn attack(&self) -> AttackScenario {
        let mut scn = AttackScenario::standard(self.scale);
        let a = &self.attack;
        if let Some(v) = a.attacker {
            scn.attacker = v;
            scn.flood.src = v;
        }
        if let Some(v) = a.victim {
            scn.victim = v;
            scn.flood.dst = v;
            scn.background.dst = v;
        }
        if let Some(v) = a.sender {
            scn.background.src = v;
        }
        if let Some(v) = a.duration_s {
            scn.total_duration = SimTime::from_secs_f64(v);
            scn.background.stop = scn.total_duration;
        }
        if let Some(v) = a.start_s {
            scn.attack_window.0 = SimTime::from_secs_f64(v);
        }
        if let Some(v) = a.stop_s {
            scn.attack_window.1 = SimTime::from_secs_f64(v);
        }
        scn.flood.start = scn.attack_window.0;
        scn.flood.stop = scn.attack_window.1;
        if let TrafficPattern::Flood { count, iat } = &mut scn.flood.pattern {
            if let Some(v) = a.flood_iat_us {
                *iat = us(v);
            }
            let span = scn.attack_window.1.saturating_sub(scn.attack_window.0).as_secs_f64();
            *count = a.flood_count.unwrap_or_else(|| (span / iat.as_secs_f64().max(1e-12)).round() as u64);
        }
        if let Some(v) = a.flood_packet_size {
            scn.flood.packet_size = v;
        }
        if let Some(v) = a.background_bps {
            scn.background.pattern = TrafficPattern::ConstantRate { bits_per_s: v };
        }
        if let Some(v) = a.background_packet_size {
            scn.background.packet_size = v;
        }
        if let Some(v) = a.ack_every {
            scn.ack_every = v;
        }
        if let Some(v) = a.warmup_s {
            scn.warmup = SimTime::from_secs_f64(v);
        }
        scn
    }

    pub fn failure(&self) -> Option<(u32, SimTime)> {
        let c = self.attack.fail_controller?;
        Some((c, SimTime::from_secs_f64(self.attack.fail_at_s.unwrap_or(15.0))))
    }

    pub fn sweep(&self) -> SweepConfig {
        let s = &self.bench.sweep;
        let duration = SimTime::from_secs_f64(s.duration_s);
        SweepConfig {
            switch_counts: s.switch_counts.clone(),
            offered_rate_per_switch: s.offered_rate_per_switch,
            window: s.window,
            duration,
            warmup: SimTime::from_nanos(duration.as_nanos() / 10),
            control_delay: us(s.control_delay_us),
            modes: self.cluster.modes.clone(),
        }
    }

    pub fn pingpong(&self, transport: Transport) -> PingPongConfig {
        let p = &self.bench.pingpong;
        PingPongConfig {
            node_a: p.node_a,
            node_b: p.node_b,
            count: p.count,
            payload: p.payload,
            gap: ms(p.gap_ms),
            transport,
            cold: p.cold,
        }
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |m: String| Err(ConfigError::Invalid(m));
        if self.seeds.is_empty() {
            return inv("at least one seed is required".into());
        }
        if self.replications == 0 {
            return inv("replications must be positive".into());
        }
        if self.cluster.modes.is_empty() {
            return inv("at least one cluster mode is required".into());
        }
        positive("sync_delay_us", self.cluster.sync_delay_us)?;
        positive("detection_timeout_ms", self.cluster.detection_timeout_ms)?;
        let topo = self.topology()?;
        for m in &self.cluster.modes {
            self.cluster(*m).validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        for n in [self.apply_network(NetConfig::default()), self.apply_network(self.attack().net_config())] {
            n.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        let scn = self.attack();
        scn.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for h in [scn.attacker, scn.victim, scn.background.src] {
            if !topo.hosts().any(|x| x.index == h) {
                return inv(format!("attack host {h} is not in the topology"));
            }
        }
        if let Some((c, at)) = self.failure() {
            if at >= scn.total_duration {
                return inv("fail_at_s must fall inside the run".into());
            }
            for m in &self.cluster.modes {
                if c == 0 || c > self.cluster(*m).controller_count {
                    return inv(format!("controller {c} does not exist in {} mode", m.label()));
                }
            }
        }
        positive("sweep duration_s", self.bench.sweep.duration_s)?;
        self.sweep().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let p = &self.bench.pingpong;
        positive("gap_ms", p.gap_ms)?;
        if p.transports.is_empty() {
            return inv("at least one ping transport is required".into());
        }
        let pc = self.pingpong(Transport::Unacknowledged);
        pc.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let (a, b) = pc.endpoints(&topo).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for h in [a, b] {
            if !topo.hosts().any(|x| x.index == h) {
                return inv(format!("ping host {h} is not in the topology"));
            }
        }
        let m = &self.matrix;
        if m.rows == 0 || m.cols == 0 {
            return inv(format!("matrix dimensions must be positive, got {} x {}", m.rows, m.cols));
        }
        positive("sample_interval_s", m.sample_interval_s)?;
        positive("period_s", m.period_s)?;
        if m.group_size == 0 || m.packet_size == 0 {
            return inv("matrix group size and packet size must be positive".into());
        }
        if !topo.hosts().any(|x| x.index == m.sink) {
            return inv(format!("matrix sink host {} is not in the topology", m.sink));
        }
        Ok(())
    }
}
