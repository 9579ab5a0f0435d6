//! The composed simulation: hosts, switches and links from a [`Topology`],
//! a controller [`Cluster`], traffic sources and a ping client, all driven
//! by one event queue.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controlplane::{update_hash, Cluster, ClusterConfig, ClusterError, ControllerId, PathCache};
use crate::dataplane::{
    FlowKey, FlowRule, Forwarding, Packet, PacketIn, PacketKind, Switch, SwitchPort, DEFAULT_IDLE_TIMEOUT,
    DEFAULT_MISS_BUFFER, DEFAULT_PORT_CAPACITY,
};
use crate::sim::{RandomStream, Scheduler, SimTime};
use crate::topology::{NodeId, NodeKind, Topology};
use crate::traffic::{EmissionSchedule, TrafficError, TrafficSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error("host {0} is not in the topology")]
    UnknownHost(u32),
    #[error("invalid network configuration: {0}")]
    InvalidConfig(String),
}

/// Class shared by all packets of ping traffic; cold pings add the sequence.
pub const PING_CLASS: u64 = 1 << 40;
pub const ACK_SIZE: u32 = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub port_capacity: usize,
    pub miss_buffer: usize,
    /// Held packets older than this are discarded.
    pub buffer_timeout: SimTime,
    pub flow_table_capacity: Option<usize>,
    pub idle_timeout: SimTime,
    /// One-way switch-controller delay; `None` uses the topology's mean
    /// link propagation delay.
    pub control_delay: Option<SimTime>,
    /// Exponential per-packet service jitter at every port, rate per second.
    pub jitter_mu: Option<f64>,
    /// Switches left without any live controller drop their flow tables.
    pub flush_on_outage: bool,
    pub record_hops: bool,
    /// A ping with no reply after this long is counted lost.
    pub ping_timeout: SimTime,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            port_capacity: DEFAULT_PORT_CAPACITY,
            miss_buffer: DEFAULT_MISS_BUFFER,
            buffer_timeout: SimTime::from_secs(1),
            flow_table_capacity: None,
            idle_timeout: DEFAULT_IDLE_TIMEOUT,
            control_delay: None,
            jitter_mu: None,
            flush_on_outage: true,
            record_hops: false,
            ping_timeout: SimTime::from_secs(2),
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), NetworkError> {
        let bad = |m: &str| Err(NetworkError::InvalidConfig(m.to_string()));
        if self.port_capacity == 0 || self.miss_buffer == 0 {
            return bad("port capacity and miss buffer must be positive");
        }
        if self.flow_table_capacity == Some(0) {
            return bad("flow table capacity must be positive");
        }
        if self.buffer_timeout == SimTime::ZERO || self.ping_timeout == SimTime::ZERO {
            return bad("timeouts must be positive");
        }
        if let Some(mu) = self.jitter_mu {
            if !(mu > 0.0 && mu.is_finite()) {
                return bad("jitter rate must be positive");
            }
        }
        Ok(())
    }
}

/// Per-tag packet accounting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TagStats {
    pub generated: u64,
    pub delivered: u64,
    pub delivered_bytes: u64,
    pub port_drops: u64,
    pub buffer_drops: u64,
    pub other_drops: u64,
    pub window_blocked: u64,
}

impl TagStats {
    pub fn dropped(&self) -> u64 {
        self.port_drops + self.buffer_drops + self.other_drops
    }
}

/// One delivered packet of a recorded tag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Delivery {
    pub time: SimTime,
    pub kind: PacketKind,
    pub size: u32,
    pub seq: u64,
    pub latency: SimTime,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SourceOptions {
    /// Receiver acknowledges every n-th data packet.
    pub ack_every: Option<u32>,
    /// Window-limited sender: emissions are skipped while this many bytes
    /// are unacknowledged. Requires `ack_every`.
    pub window_bytes: Option<u64>,
    /// Keep a [`Delivery`] record for each delivered packet.
    pub record: bool,
}

#[derive(Clone, Debug)]
struct Source {
    schedule: EmissionSchedule,
    next: Option<SimTime>,
    tag: u32,
    opts: SourceOptions,
    emitted: u64,
    sent_bytes: u64,
    acked_bytes: u64,
    rx_count: u64,
    rtt_samples: Vec<SimTime>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PingConfig {
    pub client: u32,
    pub server: u32,
    pub count: u64,
    pub payload: u32,
    pub gap: SimTime,
    pub start: SimTime,
    /// The server sends an acknowledgement ahead of each reply.
    pub acknowledged: bool,
    /// Each message is a new flow, so every exchange crosses the control plane.
    pub cold: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PingResult {
    pub seq: u64,
    /// `None` when the exchange timed out.
    pub rtt: Option<SimTime>,
    pub one_way: Option<SimTime>,
}

#[derive(Clone, Debug)]
struct PingState {
    cfg: PingConfig,
    tag: u32,
    next_seq: u64,
    outstanding: Option<(u64, SimTime, Option<SimTime>)>,
    results: Vec<PingResult>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ControlEventKind {
    Failed(ControllerId),
    Detected(ControllerId),
    Recovered(ControllerId),
    Outage,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ControlEvent {
    pub time: SimTime,
    pub kind: ControlEventKind,
}

/// Control-plane counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ControlStats {
    pub packet_ins_sent: u64,
    pub packet_ins_unroutable: u64,
    pub packet_ins_to_dead: u64,
    /// Packet-ins sent to a dead controller after its failure was detected.
    pub packet_ins_to_dead_after_detection: u64,
    pub inbox_drops: u64,
    pub flow_mods_sent: u64,
    pub flow_mods_installed: u64,
    pub flow_mods_rejected: u64,
    pub recomputations: u64,
    pub outage_flushes: u64,
}

#[derive(Clone, Debug)]
enum Ev {
    Emit(usize),
    PortDone(usize),
    Arrive { node: usize, in_port: usize, pkt: Packet },
    PacketInArrive { ctrl: ControllerId, pi: PacketIn },
    ServiceDone { ctrl: ControllerId, epoch: u64 },
    FlowMod { node: usize, rule: FlowRule, issuer: ControllerId, pi: PacketIn, retried: bool },
    Recompute { ctrl: ControllerId, pi: PacketIn },
    Sync { peer: ControllerId, update: u64 },
    Fail(ControllerId),
    Detect { ctrl: ControllerId, epoch: u64 },
    Recover(ControllerId),
    PingSend,
    PingTimeout(u64),
    Sweep,
}

#[derive(Clone, Debug)]
struct PortSlot {
    port: SwitchPort,
    owner: usize,
    peer: usize,
    peer_port: usize,
}

#[derive(Clone, Debug)]
struct NodeSlot {
    id: NodeId,
    ports: Vec<usize>,
    switch: Option<Switch>,
}

/// Snapshot of the gauges and cumulative counters used for telemetry rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Telemetry {
    pub time: SimTime,
    /// Indexed by host index - 1.
    pub host_rx_packets: Vec<u64>,
    pub host_rx_bytes: Vec<u64>,
    pub host_latency_sum_us: Vec<f64>,
    /// `(switch, port, queue length)` in switch then port order.
    pub port_queue: Vec<(NodeId, usize, usize)>,
    /// `(switch, cumulative drops, flow-table size)`.
    pub switch_state: Vec<(NodeId, u64, usize)>,
    pub controller_inbox: Vec<(ControllerId, usize)>,
}

pub struct NetworkSim {
    topo: Topology,
    cfg: NetConfig,
    sched: Scheduler<Ev>,
    nodes: Vec<NodeSlot>,
    ports: Vec<PortSlot>,
    index: HashMap<NodeId, usize>,
    host_index: Vec<usize>,
    cluster: Cluster,
    paths: PathCache,
    control_delay: SimTime,
    jitter: RandomStream,
    sources: Vec<Source>,
    ping: Option<PingState>,
    tags: Vec<TagStats>,
    tag_names: Vec<String>,
    recording: Vec<bool>,
    deliveries: Vec<Vec<Delivery>>,
    next_packet: u64,
    next_update: u64,
    control: ControlStats,
    control_log: Vec<ControlEvent>,
    host_rx_packets: Vec<u64>,
    host_rx_bytes: Vec<u64>,
    host_latency_sum_us: Vec<f64>,
    seed: u64,
    sweeping: bool,
}

impl NetworkSim {
    pub fn new(topo: Topology, cluster_cfg: ClusterConfig, cfg: NetConfig, seed: u64) -> Result<Self, NetworkError> {
        cfg.validate()?;
        let cluster = Cluster::new(cluster_cfg, topo.switches().collect())?;
        let control_delay = cfg.control_delay.unwrap_or_else(|| SimTime::from_micros_f64(topo.mean_prop_delay_us()));

        let mut index = HashMap::new();
        let mut nodes: Vec<NodeSlot> = Vec::new();
        for n in topo.nodes() {
            index.insert(*n, nodes.len());
            nodes.push(NodeSlot { id: *n, ports: Vec::new(), switch: None });
        }
        let mut ports = Vec::new();
        for (i, slot) in nodes.iter_mut().enumerate() {
            for (nb, link) in topo.neighbors(slot.id) {
                let l = &topo.links()[*link];
                let mut port = SwitchPort::new(
                    l.bandwidth_bps,
                    SimTime::from_micros_f64(l.prop_delay_us),
                    cfg.port_capacity,
                );
                if let Some(mu) = cfg.jitter_mu {
                    port = port.with_jitter(mu);
                }
                slot.ports.push(ports.len());
                ports.push(PortSlot { port, owner: i, peer: index[nb], peer_port: 0 });
            }
            if slot.id.is_switch() {
                let nbs = topo.neighbors(slot.id).iter().map(|(n, _)| *n).collect();
                slot.switch = Some(Switch::new(slot.id, nbs, cfg.flow_table_capacity, cfg.miss_buffer));
            }
        }
        for p in 0..ports.len() {
            let (owner, peer) = (ports[p].owner, ports[p].peer);
            let owner_id = nodes[owner].id;
            let back = topo.neighbors(nodes[peer].id).iter().position(|(n, _)| *n == owner_id).expect("symmetric");
            ports[p].peer_port = back;
        }
        let max_host = topo.hosts().map(|h| h.index).max().unwrap_or(0) as usize;
        let mut host_index = vec![usize::MAX; max_host + 1];
        for h in topo.hosts() {
            host_index[h.index as usize] = index[&h];
        }
        Ok(NetworkSim {
            cfg,
            sched: Scheduler::new(),
            nodes,
            ports,
            index,
            host_index,
            cluster,
            paths: PathCache::default(),
            control_delay,
            jitter: RandomStream::new(seed, "net.jitter"),
            sources: Vec::new(),
            ping: None,
            tags: Vec::new(),
            tag_names: Vec::new(),
            recording: Vec::new(),
            deliveries: Vec::new(),
            next_packet: 0,
            next_update: 0,
            control: ControlStats::default(),
            control_log: Vec::new(),
            host_rx_packets: vec![0; max_host],
            host_rx_bytes: vec![0; max_host],
            host_latency_sum_us: vec![0.0; max_host],
            topo,
            seed,
            sweeping: false,
        })
    }

    fn alloc_tag(&mut self, name: &str, record: bool) -> u32 {
        self.tags.push(TagStats::default());
        self.tag_names.push(name.to_string());
        self.recording.push(record);
        self.deliveries.push(Vec::new());
        (self.tags.len() - 1) as u32
    }

    fn host_node(&self, host: u32) -> Result<usize, NetworkError> {
        match self.host_index.get(host as usize) {
            Some(i) if *i != usize::MAX => Ok(*i),
            _ => Err(NetworkError::UnknownHost(host)),
        }
    }

    /// Adds a traffic source; returns its tag.
    pub fn add_source(&mut self, name: &str, spec: TrafficSpec, opts: SourceOptions) -> Result<u32, NetworkError> {
        if !spec.spoofed {
            self.host_node(spec.src)?;
        }
        self.host_node(spec.dst)?;
        if opts.window_bytes.is_some() && opts.ack_every.is_none() {
            return Err(NetworkError::InvalidConfig("window-limited source needs acknowledgements".into()));
        }
        let tag = self.alloc_tag(name, opts.record);
        let stream = RandomStream::new(self.seed, format!("traffic.{name}"));
        let mut schedule = EmissionSchedule::new(spec, stream)?;
        let next = schedule.next();
        if let Some(t) = next {
            self.sched.schedule(t.max(self.sched.now()), Ev::Emit(self.sources.len())).expect("not in past");
        }
        self.sources.push(Source {
            schedule,
            next,
            tag,
            opts,
            emitted: 0,
            sent_bytes: 0,
            acked_bytes: 0,
            rx_count: 0,
            rtt_samples: Vec::new(),
        });
        Ok(tag)
    }

    /// Starts the closed-loop ping client; returns its tag.
    pub fn add_ping(&mut self, cfg: PingConfig) -> Result<u32, NetworkError> {
        self.host_node(cfg.client)?;
        self.host_node(cfg.server)?;
        if cfg.client == cfg.server || cfg.payload == 0 {
            return Err(NetworkError::InvalidConfig("ping needs distinct hosts and a positive payload".into()));
        }
        if self.ping.is_some() {
            return Err(NetworkError::InvalidConfig("only one ping client is supported".into()));
        }
        let tag = self.alloc_tag("ping", false);
        self.ping = Some(PingState { cfg, tag, next_seq: 0, outstanding: None, results: Vec::new() });
        if cfg.count > 0 {
            self.sched.schedule(cfg.start.max(self.sched.now()), Ev::PingSend).expect("not in past");
        }
        Ok(tag)
    }

    pub fn schedule_failure(&mut self, ctrl: ControllerId, at: SimTime) -> Result<(), NetworkError> {
        self.cluster.controller(ctrl).ok_or(ClusterError::NoSuchController(ctrl))?;
        self.sched.schedule(at.max(self.sched.now()), Ev::Fail(ctrl)).expect("not in past");
        Ok(())
    }

    pub fn schedule_recovery(&mut self, ctrl: ControllerId, at: SimTime) -> Result<(), NetworkError> {
        self.cluster.controller(ctrl).ok_or(ClusterError::NoSuchController(ctrl))?;
        self.sched.schedule(at.max(self.sched.now()), Ev::Recover(ctrl)).expect("not in past");
        Ok(())
    }

    /// Installs rules for `key` along the path from its source host's access
    /// switch, bypassing the controller.
    pub fn preinstall(&mut self, key: FlowKey) -> Result<(), NetworkError> {
        let src = self.host_node(key.src)?;
        let access = self.topo.access_switch(self.nodes[src].id).ok_or(NetworkError::UnknownHost(key.src))?;
        let hops = self.paths.hops(&self.topo, access, key.dst).map_err(ClusterError::from)?;
        let now = self.sched.now();
        for (sw, port) in hops.iter() {
            let idx = self.index[sw];
            let rule = FlowRule { key, out_port: *port, installed_at: now, idle_timeout: SimTime::MAX };
            self.nodes[idx].switch.as_mut().expect("switch").table.install(rule);
        }
        Ok(())
    }

    /// Delivers a FlowMod straight to `switch` as if sent by `issuer`.
    pub fn inject_flow_mod(&mut self, switch: NodeId, rule: FlowRule, issuer: ControllerId, pi: PacketIn) {
        let node = self.index[&switch];
        self.sched.schedule_in(SimTime::ZERO, Ev::FlowMod { node, rule, issuer, pi, retried: false });
    }

    pub fn now(&self) -> SimTime {
        self.sched.now()
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn cluster(&self) -> &Cluster {
        &self.cluster
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn control_delay(&self) -> SimTime {
        self.control_delay
    }

    pub fn events_executed(&self) -> u64 {
        self.sched.executed()
    }

    pub fn tag_stats(&self, tag: u32) -> TagStats {
        self.tags[tag as usize]
    }

    pub fn tag_name(&self, tag: u32) -> &str {
        &self.tag_names[tag as usize]
    }

    pub fn tag_count(&self) -> u32 {
        self.tags.len() as u32
    }

    pub fn deliveries(&self, tag: u32) -> &[Delivery] {
        &self.deliveries[tag as usize]
    }

    pub fn control_stats(&self) -> ControlStats {
        let mut c = self.control;
        c.inbox_drops = self.cluster.controllers().iter().map(|c| c.stats().inbox_drops).sum();
        c
    }

    pub fn control_log(&self) -> &[ControlEvent] {
        &self.control_log
    }

    pub fn ping_results(&self) -> &[PingResult] {
        self.ping.as_ref().map_or(&[], |p| p.results.as_slice())
    }

    /// Acknowledgement round-trip samples of a source.
    pub fn source_rtts(&self, tag: u32) -> Vec<SimTime> {
        self.sources.iter().find(|s| s.tag == tag).map(|s| s.rtt_samples.clone()).unwrap_or_default()
    }

    /// Tail drops at the port of `from` facing `to`.
    pub fn port_drops(&self, from: NodeId, to: NodeId) -> Option<u64> {
        let n = &self.nodes[*self.index.get(&from)?];
        let i = self.topo.neighbors(from).iter().position(|(x, _)| *x == to)?;
        Some(self.ports[n.ports[i]].port.stats().drops)
    }

    pub fn switch(&self, id: NodeId) -> Option<&Switch> {
        self.index.get(&id).and_then(|i| self.nodes[*i].switch.as_ref())
    }

    /// Packets of `tag` currently queued, buffered, or on a wire.
    pub fn in_flight(&self, tag: u32) -> u64 {
        let queued: usize = self.ports.iter().map(|p| p.port.packets().filter(|x| x.tag == tag).count()).sum();
        let held: usize = self
            .nodes
            .iter()
            .filter_map(|n| n.switch.as_ref())
            .map(|s| s.buffer.packets().filter(|x| x.tag == tag).count())
            .sum();
        let wire = self
            .sched
            .pending()
            .filter(|e| matches!(&e.action, Ev::Arrive { pkt, .. } if pkt.tag == tag))
            .count();
        (queued + held + wire) as u64
    }

    pub fn telemetry(&self) -> Telemetry {
        let mut port_queue = Vec::new();
        let mut switch_state = Vec::new();
        for n in &self.nodes {
            if let Some(sw) = &n.switch {
                let mut drops = sw.buffer_drops();
                for (i, p) in n.ports.iter().enumerate() {
                    port_queue.push((n.id, i, self.ports[*p].port.len()));
                    drops += self.ports[*p].port.stats().drops;
                }
                switch_state.push((n.id, drops, sw.table.len()));
            }
        }
        Telemetry {
            time: self.now(),
            host_rx_packets: self.host_rx_packets.clone(),
            host_rx_bytes: self.host_rx_bytes.clone(),
            host_latency_sum_us: self.host_latency_sum_us.clone(),
            port_queue,
            switch_state,
            controller_inbox: self.cluster.controllers().iter().map(|c| (c.id, c.inbox_len())).collect(),
        }
    }

    /// Runs every event before `end` and advances the clock to `end`.
    pub fn run_until(&mut self, end: SimTime) {
        if !self.sweeping {
            self.sweeping = true;
            let half = SimTime::from_nanos(self.cfg.buffer_timeout.as_nanos() / 2).max(SimTime::from_nanos(1));
            self.sched.schedule_in(half, Ev::Sweep);
        }
        while let Some((now, ev)) = self.sched.pop_before(end) {
            self.handle(now, ev);
        }
        self.sched.advance_to(end);
    }

    fn handle(&mut self, now: SimTime, ev: Ev) {
        match ev {
            Ev::Emit(i) => self.on_emit(now, i),
            Ev::PortDone(p) => self.on_port_done(now, p),
            Ev::Arrive { node, in_port, pkt } => self.on_arrive(now, node, in_port, pkt),
            Ev::PacketInArrive { ctrl, pi } => self.on_packet_in(now, ctrl, pi),
            Ev::ServiceDone { ctrl, epoch } => self.on_service_done(now, ctrl, epoch),
            Ev::FlowMod { node, rule, issuer, pi, retried } => self.on_flow_mod(now, node, rule, issuer, pi, retried),
            Ev::Recompute { ctrl, pi } => {
                if self.cluster.controller(ctrl).is_some_and(|c| c.is_up()) {
                    self.control.recomputations += 1;
                    self.send_flow_mods(now, ctrl, &pi, true);
                }
            }
            Ev::Sync { peer, update } => self.cluster.deliver_update(peer, update),
            Ev::Fail(ctrl) => {
                if self.cluster.fail(ctrl).is_ok() {
                    self.control_log.push(ControlEvent { time: now, kind: ControlEventKind::Failed(ctrl) });
                    let epoch = self.cluster.controller(ctrl).expect("exists").epoch();
                    let timeout = self.cluster.config().failure_detection_timeout;
                    self.sched.schedule_in(timeout, Ev::Detect { ctrl, epoch });
                }
            }
            Ev::Detect { ctrl, epoch } => {
                let c = self.cluster.controller(ctrl).expect("exists");
                if c.is_up() || c.epoch() != epoch {
                    return;
                }
                self.control_log.push(ControlEvent { time: now, kind: ControlEventKind::Detected(ctrl) });
                if self.cluster.remaster().is_err() {
                    self.control_log.push(ControlEvent { time: now, kind: ControlEventKind::Outage });
                    if self.cfg.flush_on_outage {
                        self.control.outage_flushes += 1;
                        for n in &mut self.nodes {
                            if let Some(sw) = n.switch.as_mut() {
                                sw.table.clear();
                            }
                        }
                    }
                }
            }
            Ev::Recover(ctrl) => {
                if self.cluster.recover(ctrl).is_ok() {
                    self.control_log.push(ControlEvent { time: now, kind: ControlEventKind::Recovered(ctrl) });
                }
            }
            Ev::PingSend => self.on_ping_send(now),
            Ev::PingTimeout(seq) => {
                let Some(p) = self.ping.as_mut() else { return };
                if matches!(p.outstanding, Some((s, _, _)) if s == seq) {
                    p.outstanding = None;
                    p.results.push(PingResult { seq, rtt: None, one_way: None });
                    self.schedule_next_ping();
                }
            }
            Ev::Sweep => {
                let timeout = self.cfg.buffer_timeout;
                for n in 0..self.nodes.len() {
                    self.expire_buffer(now, n, timeout);
                }
                let half = SimTime::from_nanos(timeout.as_nanos() / 2).max(SimTime::from_nanos(1));
                self.sched.schedule_in(half, Ev::Sweep);
            }
        }
    }

    fn expire_buffer(&mut self, now: SimTime, node: usize, timeout: SimTime) {
        let Some(sw) = self.nodes[node].switch.as_mut() else { return };
        if sw.buffer.is_empty() {
            return;
        }
        for p in sw.expire_buffer(now, timeout) {
            self.tags[p.tag as usize].buffer_drops += 1;
        }
    }

    fn new_packet(&mut self, flow: FlowKey, size: u32, kind: PacketKind, now: SimTime, tag: u32) -> Packet {
        let mut p = Packet::new(self.next_packet, flow, size, kind, now);
        self.next_packet += 1;
        p.tag = tag;
        self.tags[tag as usize].generated += 1;
        p
    }

    /// Puts a packet on a node's port, starting service if idle.
    fn enqueue(&mut self, now: SimTime, port: usize, pkt: Packet) {
        match self.ports[port].port.enqueue(pkt) {
            Ok(true) => self.start_service(now, port),
            Ok(false) => {}
            Err(p) => self.tags[p.tag as usize].port_drops += 1,
        }
    }

    fn start_service(&mut self, now: SimTime, port: usize) {
        if let Some(t) = self.ports[port].port.service(now, &mut self.jitter) {
            self.sched.schedule(t, Ev::PortDone(port)).expect("departure not in past");
        }
    }

    fn host_send(&mut self, now: SimTime, host: u32, pkt: Packet) {
        let node = self.host_index[host as usize];
        let port = self.nodes[node].ports[0];
        self.enqueue(now, port, pkt);
    }

    fn on_emit(&mut self, now: SimTime, i: usize) {
        while self.sources[i].next.is_some_and(|t| t <= now) {
            let src = &mut self.sources[i];
            let spec = *src.schedule.spec();
            src.next = src.schedule.next();
            let tag = src.tag;
            if let Some(w) = src.opts.window_bytes {
                if src.sent_bytes - src.acked_bytes + u64::from(spec.packet_size) > w {
                    self.tags[tag as usize].window_blocked += 1;
                    continue;
                }
            }
            let (flow, seq) = if spec.spoofed {
                let class = src.schedule.stream_mut().next_u64();
                (FlowKey::new(0, spec.dst, class), src.emitted)
            } else {
                (FlowKey::new(spec.src, spec.dst, u64::from(tag)), src.emitted)
            };
            src.emitted += 1;
            src.sent_bytes += u64::from(spec.packet_size);
            let mut pkt = self.new_packet(flow, spec.packet_size, PacketKind::Data, now, tag);
            pkt.seq = seq;
            // spoofed packets still leave from the attacker's own NIC
            self.host_send(now, spec.src, pkt);
        }
        if let Some(t) = self.sources[i].next {
            self.sched.schedule(t, Ev::Emit(i)).expect("emissions are ordered");
        }
    }

    fn on_port_done(&mut self, now: SimTime, p: usize) {
        let Some(pkt) = self.ports[p].port.complete() else { return };
        let slot = &self.ports[p];
        let at = now + slot.port.prop_delay();
        let (node, in_port) = (slot.peer, slot.peer_port);
        self.sched.schedule(at, Ev::Arrive { node, in_port, pkt }).expect("future");
        if self.ports[p].port.is_busy() {
            self.start_service(now, p);
        }
    }

    fn on_arrive(&mut self, now: SimTime, node: usize, in_port: usize, mut pkt: Packet) {
        if self.cfg.record_hops {
            pkt.hop_times.push(now);
        }
        match self.nodes[node].id.kind {
            NodeKind::Host => self.on_host_receive(now, node, pkt),
            NodeKind::Controller => self.tags[pkt.tag as usize].other_drops += 1,
            NodeKind::Switch => {
                let sw = self.nodes[node].switch.as_mut().expect("switch slot");
                match sw.handle_packet(pkt, in_port, now) {
                    Forwarding::Forward { port, packet } => {
                        let gp = self.nodes[node].ports[port];
                        self.enqueue(now, gp, packet);
                    }
                    Forwarding::Miss { packet_in, dropped } => {
                        if let Some(p) = dropped {
                            self.tags[p.tag as usize].buffer_drops += 1;
                        }
                        self.send_packet_in(packet_in);
                    }
                }
            }
        }
    }

    fn send_packet_in(&mut self, pi: PacketIn) {
        self.control.packet_ins_sent += 1;
        let Some(master) = self.cluster.master_of(pi.switch) else {
            self.control.packet_ins_unroutable += 1;
            return;
        };
        let c = self.cluster.controller(master).expect("master exists");
        if !c.is_up() {
            self.control.packet_ins_to_dead += 1;
            let detected = self
                .control_log
                .iter()
                .rev()
                .find_map(|e| match e.kind {
                    ControlEventKind::Detected(x) if x == master => Some(true),
                    ControlEventKind::Failed(x) if x == master => Some(false),
                    _ => None,
                })
                .unwrap_or(false);
            if detected {
                self.control.packet_ins_to_dead_after_detection += 1;
            }
        }
        self.sched.schedule_in(self.control_delay, Ev::PacketInArrive { ctrl: master, pi });
    }

    fn on_packet_in(&mut self, now: SimTime, ctrl: ControllerId, pi: PacketIn) {
        let c = self.cluster.controller_mut(ctrl).expect("exists");
        if let Ok(true) = c.offer(pi) {
            let (st, epoch) = (c.effective_service_time(), c.epoch());
            self.sched.schedule(now + st, Ev::ServiceDone { ctrl, epoch }).expect("future");
        }
    }

    fn on_service_done(&mut self, now: SimTime, ctrl: ControllerId, epoch: u64) {
        let c = self.cluster.controller_mut(ctrl).expect("exists");
        if !c.is_up() || c.epoch() != epoch {
            return;
        }
        let Some(pi) = c.complete() else { return };
        if c.is_busy() {
            let st = c.effective_service_time();
            self.sched.schedule(now + st, Ev::ServiceDone { ctrl, epoch }).expect("future");
        }
        self.send_flow_mods(now, ctrl, &pi, false);
    }

    fn send_flow_mods(&mut self, now: SimTime, ctrl: ControllerId, pi: &PacketIn, retried: bool) {
        let idle = self.cfg.idle_timeout;
        let Ok(mods) = self.cluster.plan_flow_mods(&self.topo, &mut self.paths, pi, now, idle) else {
            return;
        };
        let sync = self.cluster.config().sync_delay;
        for m in mods {
            self.control.flow_mods_sent += 1;
            let seq = self.next_update;
            self.next_update += 1;
            let update = update_hash(ctrl, &m.rule.key, m.switch, m.rule.out_port, seq);
            for peer in self.cluster.issue_update(ctrl, update) {
                self.sched.schedule_in(sync, Ev::Sync { peer, update });
            }
            let node = self.index[&m.switch];
            self.sched.schedule_in(self.control_delay, Ev::FlowMod { node, rule: m.rule, issuer: ctrl, pi: *pi, retried });
        }
    }

    fn on_flow_mod(&mut self, now: SimTime, node: usize, rule: FlowRule, issuer: ControllerId, pi: PacketIn, retried: bool) {
        let sw = self.nodes[node].switch.as_mut().expect("flow mods target switches");
        let rule = FlowRule { installed_at: now, ..rule };
        match sw.install_rule(rule) {
            Ok((released, _evicted)) => {
                self.control.flow_mods_installed += 1;
                let gp = self.nodes[node].ports[rule.out_port];
                for p in released {
                    self.enqueue(now, gp, p);
                }
            }
            Err(_) => {
                self.control.flow_mods_rejected += 1;
                if !retried {
                    self.sched.schedule_in(self.control_delay, Ev::Recompute { ctrl: issuer, pi });
                }
            }
        }
    }

    fn on_host_receive(&mut self, now: SimTime, node: usize, pkt: Packet) {
        let host = self.nodes[node].id.index;
        if pkt.flow.dst != host {
            self.tags[pkt.tag as usize].other_drops += 1;
            return;
        }
        let tag = pkt.tag as usize;
        let latency = now - pkt.created_at;
        self.tags[tag].delivered += 1;
        self.tags[tag].delivered_bytes += u64::from(pkt.size);
        let h = host as usize - 1;
        self.host_rx_packets[h] += 1;
        self.host_rx_bytes[h] += u64::from(pkt.size);
        self.host_latency_sum_us[h] += latency.as_micros_f64();
        if self.recording[tag] {
            self.deliveries[tag].push(Delivery { time: now, kind: pkt.kind, size: pkt.size, seq: pkt.seq, latency });
        }
        match pkt.kind {
            PacketKind::Data => self.on_data(now, host, &pkt),
            PacketKind::Ack if self.ping.as_ref().is_none_or(|p| p.tag != pkt.tag) => self.on_source_ack(now, &pkt),
            PacketKind::Ping => self.on_ping(now, host, &pkt),
            PacketKind::Pong => self.on_pong(now, &pkt),
            _ => {}
        }
    }

    fn on_data(&mut self, now: SimTime, host: u32, pkt: &Packet) {
        let Some(i) = self.sources.iter().position(|s| s.tag == pkt.tag) else { return };
        let s = &mut self.sources[i];
        let Some(every) = s.opts.ack_every else { return };
        if pkt.flow.src == 0 {
            return;
        }
        s.rx_count += 1;
        if s.rx_count % u64::from(every) != 0 {
            return;
        }
        let flow = FlowKey::new(host, pkt.flow.src, pkt.flow.class);
        let mut ack = self.new_packet(flow, ACK_SIZE, PacketKind::Ack, now, pkt.tag);
        ack.seq = pkt.seq;
        ack.echo_ts = pkt.created_at;
        self.host_send(now, host, ack);
    }

    fn on_source_ack(&mut self, now: SimTime, ack: &Packet) {
        let Some(s) = self.sources.iter_mut().find(|s| s.tag == ack.tag) else { return };
        let size = u64::from(s.schedule.spec().packet_size);
        s.acked_bytes = s.acked_bytes.max((ack.seq + 1) * size).min(s.sent_bytes);
        s.rtt_samples.push(now - ack.echo_ts);
    }

    fn ping_flow(cfg: &PingConfig, seq: u64, reverse: bool) -> FlowKey {
        let class = if cfg.cold { PING_CLASS + seq } else { PING_CLASS };
        if reverse {
            FlowKey::new(cfg.server, cfg.client, class)
        } else {
            FlowKey::new(cfg.client, cfg.server, class)
        }
    }

    fn on_ping_send(&mut self, now: SimTime) {
        let Some(p) = self.ping.as_mut() else { return };
        if p.next_seq >= p.cfg.count || p.outstanding.is_some() {
            return;
        }
        let seq = p.next_seq;
        p.next_seq += 1;
        p.outstanding = Some((seq, now, None));
        let (cfg, tag) = (p.cfg, p.tag);
        let mut pkt = self.new_packet(Self::ping_flow(&cfg, seq, false), cfg.payload, PacketKind::Ping, now, tag);
        pkt.seq = seq;
        self.host_send(now, cfg.client, pkt);
        self.sched.schedule_in(self.cfg.ping_timeout, Ev::PingTimeout(seq));
    }

    fn on_ping(&mut self, now: SimTime, host: u32, pkt: &Packet) {
        let Some(p) = self.ping.as_mut() else { return };
        let (cfg, tag) = (p.cfg, p.tag);
        if let Some((s, _, rx)) = p.outstanding.as_mut() {
            if *s == pkt.seq {
                *rx = Some(now);
            }
        }
        let flow = Self::ping_flow(&cfg, pkt.seq, true);
        if cfg.acknowledged {
            let mut ack = self.new_packet(flow, ACK_SIZE, PacketKind::Ack, now, tag);
            ack.seq = pkt.seq;
            ack.echo_ts = pkt.created_at;
            self.host_send(now, host, ack);
        }
        let mut pong = self.new_packet(flow, cfg.payload, PacketKind::Pong, now, tag);
        pong.seq = pkt.seq;
        pong.echo_ts = pkt.created_at;
        self.host_send(now, host, pong);
    }

    fn on_pong(&mut self, now: SimTime, pkt: &Packet) {
        let Some(p) = self.ping.as_mut() else { return };
        let Some((seq, sent, rx)) = p.outstanding else { return };
        if seq != pkt.seq {
            return;
        }
        p.outstanding = None;
        p.results.push(PingResult { seq, rtt: Some(now - sent), one_way: rx.map(|r| r - sent) });
        self.schedule_next_ping();
    }

    fn schedule_next_ping(&mut self) {
        let Some(p) = self.ping.as_ref() else { return };
        if p.next_seq < p.cfg.count {
            self.sched.schedule_in(p.cfg.gap, Ev::PingSend);
        }
    }
}
