//! Forwarding elements: packets, flow tables, output ports, miss buffers and
//! port monitors.

use std::collections::{HashMap, VecDeque};

use thiserror::Error;

use crate::sim::{RandomStream, Scheduler, SimTime};
use crate::topology::NodeId;

pub const DEFAULT_PORT_CAPACITY: usize = 1000;
pub const DEFAULT_MISS_BUFFER: usize = 256;
pub const DEFAULT_IDLE_TIMEOUT: SimTime = SimTime::from_secs(30);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataplaneError {
    #[error("switch {switch} has no port {port}")]
    UnknownPort { switch: NodeId, port: usize },
    #[error("monitor sample at {at} is not after previous sample {prev}")]
    NonIncreasingSample { at: SimTime, prev: SimTime },
}

/// Exact-match flow identity. `src == 0` marks a spoofed/unknown source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowKey {
    pub src: u32,
    pub dst: u32,
    pub class: u64,
}

impl FlowKey {
    pub const fn new(src: u32, dst: u32, class: u64) -> Self {
        FlowKey { src, dst, class }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PacketKind {
    Data,
    Ping,
    Pong,
    PacketIn,
    FlowMod,
    Ack,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Packet {
    pub id: u64,
    pub flow: FlowKey,
    pub size: u32,
    pub kind: PacketKind,
    pub created_at: SimTime,
    /// Traffic source that produced the packet, for per-flow accounting.
    pub tag: u32,
    pub seq: u64,
    /// Send time of the packet being acknowledged or echoed.
    pub echo_ts: SimTime,
    /// Arrival time at each node after the first; only filled when hop
    /// recording is enabled.
    pub hop_times: Vec<SimTime>,
}

impl Packet {
    pub fn new(id: u64, flow: FlowKey, size: u32, kind: PacketKind, created_at: SimTime) -> Self {
        assert!(size > 0, "packet size must be positive");
        Packet { id, flow, size, kind, created_at, tag: 0, seq: 0, echo_ts: SimTime::ZERO, hop_times: Vec::new() }
    }

    pub fn bits(&self) -> u64 {
        u64::from(self.size) * 8
    }
}

/// An installed match/action entry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowRule {
    pub key: FlowKey,
    pub out_port: usize,
    pub installed_at: SimTime,
    pub idle_timeout: SimTime,
}

#[derive(Clone, Copy, Debug)]
struct TableEntry {
    out_port: usize,
    installed_at: SimTime,
    last_hit: SimTime,
    idle_timeout: SimTime,
    seq: u64,
}

/// Exact-match table, one rule per key. When full, installing a new key
/// evicts the oldest installed rule.
#[derive(Clone, Debug)]
pub struct FlowTable {
    entries: HashMap<FlowKey, TableEntry>,
    order: VecDeque<(FlowKey, u64)>,
    capacity: Option<usize>,
    next_seq: u64,
    evictions: u64,
    expirations: u64,
}

impl FlowTable {
    pub fn new(capacity: Option<usize>) -> Self {
        FlowTable {
            entries: HashMap::new(),
            order: VecDeque::new(),
            capacity,
            next_seq: 0,
            evictions: 0,
            expirations: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn evictions(&self) -> u64 {
        self.evictions
    }

    pub fn expirations(&self) -> u64 {
        self.expirations
    }

    /// Matching output port, refreshing the idle timer. Idle rules expire lazily here.
    pub fn lookup(&mut self, key: &FlowKey, now: SimTime) -> Option<usize> {
        let e = self.entries.get_mut(key)?;
        if now.saturating_sub(e.last_hit) > e.idle_timeout {
            self.entries.remove(key);
            self.expirations += 1;
            return None;
        }
        e.last_hit = now;
        Some(e.out_port)
    }

    pub fn get(&self, key: &FlowKey) -> Option<FlowRule> {
        self.entries.get(key).map(|e| FlowRule {
            key: *key,
            out_port: e.out_port,
            installed_at: e.installed_at,
            idle_timeout: e.idle_timeout,
        })
    }

    /// Inserts or overwrites; returns the key evicted to make room, if any.
    pub fn install(&mut self, rule: FlowRule) -> Option<FlowKey> {
        let mut evicted = None;
        if !self.entries.contains_key(&rule.key) {
            if let Some(cap) = self.capacity {
                if self.entries.len() >= cap {
                    evicted = self.evict_oldest();
                }
            }
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.entries.insert(
            rule.key,
            TableEntry {
                out_port: rule.out_port,
                installed_at: rule.installed_at,
                last_hit: rule.installed_at,
                idle_timeout: rule.idle_timeout,
                seq,
            },
        );
        self.order.push_back((rule.key, seq));
        if self.order.len() > 2 * self.entries.len() + 64 {
            let entries = &self.entries;
            self.order.retain(|(k, s)| entries.get(k).is_some_and(|e| e.seq == *s));
        }
        evicted
    }

    fn evict_oldest(&mut self) -> Option<FlowKey> {
        while let Some((k, s)) = self.order.pop_front() {
            if self.entries.get(&k).is_some_and(|e| e.seq == s) {
                self.entries.remove(&k);
                self.evictions += 1;
                return Some(k);
            }
        }
        None
    }

    pub fn clear(&mut self) {
        self.entries.clear();
        self.order.clear();
    }
}

/// Bounded FIFO of packets awaiting a flow rule.
#[derive(Clone, Debug)]
pub struct MissBuffer {
    packets: VecDeque<(SimTime, Packet)>,
    capacity: usize,
}

impl MissBuffer {
    pub fn new(capacity: usize) -> Self {
        MissBuffer { packets: VecDeque::new(), capacity }
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    /// Hands the packet back if the buffer is full.
    pub fn hold(&mut self, now: SimTime, pkt: Packet) -> Result<(), Packet> {
        if self.packets.len() >= self.capacity {
            return Err(pkt);
        }
        self.packets.push_back((now, pkt));
        Ok(())
    }

    /// Removes and returns every held packet of `key`, in arrival order.
    pub fn release(&mut self, key: &FlowKey) -> Vec<Packet> {
        if !self.packets.iter().any(|(_, p)| p.flow == *key) {
            return Vec::new();
        }
        let mut out = Vec::new();
        let mut keep = VecDeque::with_capacity(self.packets.len());
        for (t, p) in self.packets.drain(..) {
            if p.flow == *key {
                out.push(p);
            } else {
                keep.push_back((t, p));
            }
        }
        self.packets = keep;
        out
    }

    /// Drops packets held longer than `timeout`.
    pub fn expire(&mut self, now: SimTime, timeout: SimTime) -> Vec<Packet> {
        let mut out = Vec::new();
        while let Some((t, _)) = self.packets.front() {
            if now.saturating_sub(*t) <= timeout {
                break;
            }
            out.push(self.packets.pop_front().expect("front exists").1);
        }
        out
    }

    pub fn packets(&self) -> impl Iterator<Item = &Packet> {
        self.packets.iter().map(|(_, p)| p)
    }

    pub fn drain_all(&mut self) -> Vec<Packet> {
        self.packets.drain(..).map(|(_, p)| p).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PortStats {
    pub sent_packets: u64,
    pub sent_bytes: u64,
    pub drops: u64,
}

/// Output port: finite FIFO drained at link rate, with optional exponential
/// service jitter of rate `mu` (per second).
#[derive(Clone, Debug)]
pub struct SwitchPort {
    queue: VecDeque<Packet>,
    capacity: usize,
    bandwidth_bps: f64,
    prop_delay: SimTime,
    jitter_rate: Option<f64>,
    busy: bool,
    stats: PortStats,
}

impl SwitchPort {
    pub fn new(bandwidth_bps: f64, prop_delay: SimTime, capacity: usize) -> Self {
        assert!(bandwidth_bps > 0.0, "bandwidth must be positive");
        assert!(capacity > 0, "port capacity must be positive");
        SwitchPort {
            queue: VecDeque::new(),
            capacity,
            bandwidth_bps,
            prop_delay,
            jitter_rate: None,
            busy: false,
            stats: PortStats::default(),
        }
    }

    pub fn with_jitter(mut self, mu_per_sec: f64) -> Self {
        self.jitter_rate = Some(mu_per_sec);
        self
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn is_busy(&self) -> bool {
        self.busy
    }

    pub fn stats(&self) -> PortStats {
        self.stats
    }

    pub fn prop_delay(&self) -> SimTime {
        self.prop_delay
    }

    pub fn bandwidth_bps(&self) -> f64 {
        self.bandwidth_bps
    }

    pub fn packets(&self) -> impl Iterator<Item = &Packet> {
        self.queue.iter()
    }

    pub fn transmission_time(&self, size: u32) -> SimTime {
        if self.bandwidth_bps.is_infinite() {
            return SimTime::ZERO;
        }
        SimTime::from_secs_f64(f64::from(size) * 8.0 / self.bandwidth_bps)
    }

    /// Tail-drop enqueue. `Ok(true)` means the port was idle and the caller
    /// must start service; a full queue hands the packet back as dropped.
    pub fn enqueue(&mut self, pkt: Packet) -> Result<bool, Packet> {
        if self.queue.len() >= self.capacity {
            self.stats.drops += 1;
            return Err(pkt);
        }
        self.queue.push_back(pkt);
        if self.busy {
            Ok(false)
        } else {
            self.busy = true;
            Ok(true)
        }
    }

    /// Departure time of the head packet if service starts at `now`;
    /// `None` for an empty queue.
    pub fn service(&mut self, now: SimTime, rng: &mut RandomStream) -> Option<SimTime> {
        let head = self.queue.front()?;
        let mut t = now + self.transmission_time(head.size);
        if let Some(mu) = self.jitter_rate {
            t += rng.exp_duration(mu).expect("jitter rate validated");
        }
        Some(t)
    }

    /// Completes the head transmission. Returns the departed packet; the port
    /// stays busy while packets remain.
    pub fn complete(&mut self) -> Option<Packet> {
        let pkt = self.queue.pop_front()?;
        self.stats.sent_packets += 1;
        self.stats.sent_bytes += u64::from(pkt.size);
        self.busy = !self.queue.is_empty();
        Some(pkt)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PortSample {
    pub time: SimTime,
    pub queue_len: usize,
    pub bytes_sent: u64,
    pub drops: u64,
}

/// Periodic sampler of one port.
#[derive(Clone, Debug)]
pub struct PortMonitor {
    pub interval: SimTime,
    samples: Vec<PortSample>,
}

impl PortMonitor {
    pub fn new(interval: SimTime) -> Self {
        PortMonitor { interval, samples: Vec::new() }
    }

    pub fn sample(&mut self, now: SimTime, port: &SwitchPort) -> Result<(), DataplaneError> {
        if let Some(prev) = self.samples.last() {
            if now <= prev.time {
                return Err(DataplaneError::NonIncreasingSample { at: now, prev: prev.time });
            }
        }
        let s = port.stats();
        self.samples.push(PortSample { time: now, queue_len: port.len(), bytes_sent: s.sent_bytes, drops: s.drops });
        Ok(())
    }

    pub fn samples(&self) -> &[PortSample] {
        &self.samples
    }
}

/// Table-miss notification from a switch to its master controller.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PacketIn {
    pub switch: NodeId,
    pub key: FlowKey,
    pub in_port: usize,
    pub sent_at: SimTime,
    pub buffered: bool,
}

/// What a switch does with an arriving packet.
#[derive(Debug, PartialEq)]
pub enum Forwarding {
    Forward { port: usize, packet: Packet },
    /// Table miss. The packet is held unless the miss buffer is full, in
    /// which case it comes back in `dropped`.
    Miss { packet_in: PacketIn, dropped: Option<Packet> },
}

/// Forwarding state of one switch. Ports are identified by local index;
/// `neighbors[i]` is the node behind port `i`.
#[derive(Clone, Debug)]
pub struct Switch {
    pub id: NodeId,
    pub table: FlowTable,
    pub buffer: MissBuffer,
    neighbors: Vec<NodeId>,
    buffer_drops: u64,
}

impl Switch {
    pub fn new(id: NodeId, neighbors: Vec<NodeId>, table_capacity: Option<usize>, buffer_capacity: usize) -> Self {
        Switch {
            id,
            table: FlowTable::new(table_capacity),
            buffer: MissBuffer::new(buffer_capacity),
            neighbors,
            buffer_drops: 0,
        }
    }

    pub fn neighbors(&self) -> &[NodeId] {
        &self.neighbors
    }

    pub fn port_to(&self, n: NodeId) -> Option<usize> {
        self.neighbors.iter().position(|x| *x == n)
    }

    pub fn buffer_drops(&self) -> u64 {
        self.buffer_drops
    }

    pub fn handle_packet(&mut self, packet: Packet, in_port: usize, now: SimTime) -> Forwarding {
        if let Some(port) = self.table.lookup(&packet.flow, now) {
            return Forwarding::Forward { port, packet };
        }
        let key = packet.flow;
        let (buffered, dropped) = match self.buffer.hold(now, packet) {
            Ok(()) => (true, None),
            Err(p) => {
                self.buffer_drops += 1;
                (false, Some(p))
            }
        };
        Forwarding::Miss {
            packet_in: PacketIn { switch: self.id, key, in_port, sent_at: now, buffered },
            dropped,
        }
    }

    /// Activates `rule` and returns the held packets of its flow in arrival
    /// order, plus any key evicted to make room.
    pub fn install_rule(&mut self, rule: FlowRule) -> Result<(Vec<Packet>, Option<FlowKey>), DataplaneError> {
        if rule.out_port >= self.neighbors.len() {
            return Err(DataplaneError::UnknownPort { switch: self.id, port: rule.out_port });
        }
        let evicted = self.table.install(rule);
        Ok((self.buffer.release(&rule.key), evicted))
    }

    /// Drops everything held past `timeout`; counted as buffer drops.
    pub fn expire_buffer(&mut self, now: SimTime, timeout: SimTime) -> Vec<Packet> {
        let out = self.buffer.expire(now, timeout);
        self.buffer_drops += out.len() as u64;
        out
    }
}

/// Outcome of the single-port queueing check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mm1Outcome {
    pub served: u64,
    pub mean_sojourn_s: f64,
    pub drops: u64,
}

#[derive(Debug)]
enum Mm1Event {
    Arrival,
    Departure,
}

/// Drives one jittered port with Poisson arrivals until `packets` have been
/// served and reports the mean time in system.
pub fn simulate_mm1_port(lambda: f64, mu: f64, packets: u64, seed: u64) -> Mm1Outcome {
    let mut port = SwitchPort::new(f64::INFINITY, SimTime::ZERO, usize::MAX).with_jitter(mu);
    let mut arrivals = RandomStream::new(seed, "mm1.arrivals");
    let mut service = RandomStream::new(seed, "mm1.service");
    let mut sched: Scheduler<Mm1Event> = Scheduler::new();
    let first = arrivals.exp_duration(lambda).expect("positive rate");
    sched.schedule(first, Mm1Event::Arrival).expect("future");
    let mut next_id = 0u64;
    let mut served = 0u64;
    let mut total = 0.0f64;
    while served < packets {
        let Some((now, ev)) = sched.pop_before(SimTime::MAX) else { break };
        match ev {
            Mm1Event::Arrival => {
                let pkt = Packet::new(next_id, FlowKey::new(1, 2, 0), 64, PacketKind::Data, now);
                next_id += 1;
                if let Ok(true) = port.enqueue(pkt) {
                    let t = port.service(now, &mut service).expect("non-empty");
                    sched.schedule(t, Mm1Event::Departure).expect("future");
                }
                let gap = arrivals.exp_duration(lambda).expect("positive rate");
                sched.schedule_in(gap, Mm1Event::Arrival);
            }
            Mm1Event::Departure => {
                let pkt = port.complete().expect("busy port has a head");
                served += 1;
                total += (now - pkt.created_at).as_secs_f64();
                if let Some(t) = port.service(now, &mut service) {
                    sched.schedule(t, Mm1Event::Departure).expect("future");
                }
            }
        }
    }
    Mm1Outcome { served, mean_sojourn_s: total / served.max(1) as f64, drops: port.stats().drops }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pkt(id: u64, key: FlowKey) -> Packet {
        Packet::new(id, key, 1500, PacketKind::Data, SimTime::ZERO)
    }

    fn rule(key: FlowKey, port: usize) -> FlowRule {
        FlowRule { key, out_port: port, installed_at: SimTime::ZERO, idle_timeout: DEFAULT_IDLE_TIMEOUT }
    }

    fn sw() -> Switch {
        Switch::new(NodeId::switch(1), vec![NodeId::host(1), NodeId::switch(2)], None, 4)
    }

    #[test]
    fn hit_forwards_and_miss_buffers() {
        let f = FlowKey::new(1, 2, 0);
        let mut s = sw();
        match s.handle_packet(pkt(0, f), 0, SimTime::ZERO) {
            Forwarding::Miss { packet_in, dropped } => {
                assert!(packet_in.buffered);
                assert!(dropped.is_none());
                assert_eq!(packet_in.key, f);
            }
            other => panic!("expected miss, got {other:?}"),
        }
        let (released, _) = s.install_rule(rule(f, 1)).unwrap();
        assert_eq!(released.len(), 1);
        assert!(matches!(s.handle_packet(pkt(1, f), 0, SimTime::ZERO), Forwarding::Forward { port: 1, .. }));
    }

    #[test]
    fn full_miss_buffer_drops() {
        let mut s = sw();
        for i in 0..4 {
            s.handle_packet(pkt(i, FlowKey::new(1, 2, i)), 0, SimTime::ZERO);
        }
        match s.handle_packet(pkt(9, FlowKey::new(1, 2, 9)), 0, SimTime::ZERO) {
            Forwarding::Miss { packet_in, dropped } => {
                assert!(!packet_in.buffered);
                assert_eq!(dropped.unwrap().id, 9);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(s.buffer_drops(), 1);
    }

    #[test]
    fn reinstall_overwrites() {
        let f = FlowKey::new(1, 2, 0);
        let mut s = sw();
        s.install_rule(rule(f, 0)).unwrap();
        s.install_rule(rule(f, 1)).unwrap();
        assert_eq!(s.table.len(), 1);
        assert_eq!(s.table.get(&f).unwrap().out_port, 1);
    }

    #[test]
    fn unknown_port_rejected() {
        let mut s = sw();
        let err = s.install_rule(rule(FlowKey::new(1, 2, 0), 5)).unwrap_err();
        assert_eq!(err, DataplaneError::UnknownPort { switch: NodeId::switch(1), port: 5 });
    }

    #[test]
    fn release_preserves_arrival_order() {
        let f = FlowKey::new(1, 2, 0);
        let g = FlowKey::new(3, 2, 0);
        let mut s = Switch::new(NodeId::switch(1), vec![NodeId::host(1)], None, 16);
        for (i, k) in [f, g, f, g, f].into_iter().enumerate() {
            s.handle_packet(pkt(i as u64, k), 0, SimTime::ZERO);
        }
        let (released, _) = s.install_rule(rule(f, 0)).unwrap();
        let ids: Vec<u64> = released.iter().map(|p| p.id).collect();
        assert_eq!(ids, vec![0, 2, 4]);
        assert_eq!(s.buffer.len(), 2);
    }

    #[test]
    fn table_evicts_oldest_when_full() {
        let mut t = FlowTable::new(Some(2));
        let k = |c| FlowKey::new(1, 2, c);
        assert_eq!(t.install(rule(k(0), 0)), None);
        assert_eq!(t.install(rule(k(1), 0)), None);
        // refreshing k0 makes k1 the oldest
        assert_eq!(t.install(rule(k(0), 0)), None);
        assert_eq!(t.install(rule(k(2), 0)), Some(k(1)));
        assert_eq!(t.len(), 2);
        assert_eq!(t.evictions(), 1);
    }

    #[test]
    fn idle_rules_expire() {
        let mut t = FlowTable::new(None);
        let f = FlowKey::new(1, 2, 0);
        t.install(FlowRule { key: f, out_port: 0, installed_at: SimTime::ZERO, idle_timeout: SimTime::from_secs(1) });
        assert_eq!(t.lookup(&f, SimTime::from_millis(900)), Some(0));
        assert_eq!(t.lookup(&f, SimTime::from_millis(1800)), Some(0));
        assert_eq!(t.lookup(&f, SimTime::from_secs(5)), None);
        assert!(t.is_empty());
    }

    #[test]
    fn port_tail_drop_and_fifo() {
        let mut p = SwitchPort::new(20e9, SimTime::ZERO, 2);
        assert_eq!(p.enqueue(pkt(0, FlowKey::new(1, 2, 0))), Ok(true));
        assert_eq!(p.enqueue(pkt(1, FlowKey::new(1, 2, 0))), Ok(false));
        assert!(p.enqueue(pkt(2, FlowKey::new(1, 2, 0))).is_err());
        assert_eq!(p.stats().drops, 1);
        assert_eq!(p.complete().unwrap().id, 0);
        assert_eq!(p.complete().unwrap().id, 1);
        assert!(!p.is_busy());
    }

    #[test]
    fn full_frame_transmission_time() {
        let mut p = SwitchPort::new(20e9, SimTime::ZERO, 10);
        let mut rng = RandomStream::new(1, "t");
        assert_eq!(p.service(SimTime::ZERO, &mut rng), None);
        p.enqueue(pkt(0, FlowKey::new(1, 2, 0))).unwrap();
        assert_eq!(p.service(SimTime::ZERO, &mut rng), Some(SimTime::from_nanos(600)));
    }

    #[test]
    fn monitor_requires_increasing_times() {
        let p = SwitchPort::new(1e6, SimTime::ZERO, 10);
        let mut m = PortMonitor::new(SimTime::from_secs(1));
        m.sample(SimTime::from_secs(1), &p).unwrap();
        assert!(m.sample(SimTime::from_secs(1), &p).is_err());
        m.sample(SimTime::from_secs(2), &p).unwrap();
        assert_eq!(m.samples().len(), 2);
    }

    #[test]
    fn buffer_expiry() {
        let mut b = MissBuffer::new(8);
        b.hold(SimTime::ZERO, pkt(0, FlowKey::new(1, 2, 0))).unwrap();
        b.hold(SimTime::from_secs(2), pkt(1, FlowKey::new(1, 2, 1))).unwrap();
        let gone = b.expire(SimTime::from_millis(2500), SimTime::from_secs(1));
        assert_eq!(gone.len(), 1);
        assert_eq!(b.len(), 1);
    }
}
