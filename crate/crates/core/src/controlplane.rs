//! Controller models and cluster state for the centralized (single
//! controller) and flat distributed (three peers) control planes.
//!
//! Per packet-in a controller spends `s0 * (1 + alpha * owned_switches)`
//! microseconds. The two calibration presets are labeled constants chosen to
//! reproduce the qualitative gap between a POX-like and an ONOS-like
//! controller; they are not measurements of either.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataplane::{FlowKey, FlowRule, PacketIn};
use crate::sim::SimTime;
use crate::topology::{NodeId, Topology, TopologyError};

pub type ControllerId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("no controller is up: total control-plane outage")]
    TotalOutage,
    #[error("invalid cluster configuration: {0}")]
    InvalidConfig(String),
    #[error("controller {0} does not exist")]
    NoSuchController(ControllerId),
    #[error("controller {0} is already down")]
    AlreadyDown(ControllerId),
    #[error("controller {0} is already up")]
    AlreadyUp(ControllerId),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMode {
    Centralized,
    DistributedFlat,
}

impl ClusterMode {
    /// Label used in report files.
    pub fn label(self) -> &'static str {
        match self {
            ClusterMode::Centralized => "centralized",
            ClusterMode::DistributedFlat => "distributed3",
        }
    }
}

/// Service-time model of one controller.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    /// Base service time per packet-in, microseconds.
    pub base_service_us: f64,
    /// Per-owned-switch overhead factor.
    pub per_switch_overhead: f64,
    /// Inbox bound; `None` is unbounded.
    pub inbox_capacity: Option<usize>,
}

pub const DEFAULT_INBOX_CAPACITY: usize = 10_000;

impl ControllerParams {
    pub const fn onos_like() -> Self {
        ControllerParams { base_service_us: 10.0, per_switch_overhead: 0.02, inbox_capacity: Some(DEFAULT_INBOX_CAPACITY) }
    }

    pub const fn pox_like() -> Self {
        ControllerParams { base_service_us: 300.0, per_switch_overhead: 0.05, inbox_capacity: Some(DEFAULT_INBOX_CAPACITY) }
    }

    pub fn effective_service_us(&self, owned: usize) -> f64 {
        self.base_service_us * (1.0 + self.per_switch_overhead * owned as f64)
    }
}

/// Packet-ins per second a controller sustains while owning `owned` switches.
pub fn controller_capacity(params: &ControllerParams, owned: usize) -> f64 {
    1e6 / params.effective_service_us(owned)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub mode: ClusterMode,
    pub controller_count: u32,
    pub params: ControllerParams,
    pub sync_delay: SimTime,
    pub failure_detection_timeout: SimTime,
}

impl ClusterConfig {
    pub fn centralized() -> Self {
        ClusterConfig {
            mode: ClusterMode::Centralized,
            controller_count: 1,
            params: ControllerParams::pox_like(),
            sync_delay: SimTime::from_millis(1),
            failure_detection_timeout: SimTime::from_millis(500),
        }
    }

    pub fn distributed() -> Self {
        ClusterConfig {
            mode: ClusterMode::DistributedFlat,
            controller_count: 3,
            params: ControllerParams::onos_like(),
            sync_delay: SimTime::from_millis(1),
            failure_detection_timeout: SimTime::from_millis(500),
        }
    }

    pub fn for_mode(mode: ClusterMode) -> Self {
        match mode {
            ClusterMode::Centralized => Self::centralized(),
            ClusterMode::DistributedFlat => Self::distributed(),
        }
    }

    pub fn validate(&self) -> Result<(), ClusterError> {
        let want = match self.mode {
            ClusterMode::Centralized => 1,
            ClusterMode::DistributedFlat => 3,
        };
        if self.controller_count != want {
            return Err(ClusterError::InvalidConfig(format!(
                "{} mode requires {want} controller(s), got {}",
                self.mode.label(),
                self.controller_count
            )));
        }
        if !(self.params.base_service_us > 0.0) || !(self.params.per_switch_overhead >= 0.0) {
            return Err(ClusterError::InvalidConfig("service time must be positive and overhead non-negative".into()));
        }
        if self.params.inbox_capacity == Some(0) {
            return Err(ClusterError::InvalidConfig("inbox capacity must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Liveness {
    Up,
    Down,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ControllerStats {
    pub received: u64,
    pub processed: u64,
    pub inbox_drops: u64,
    pub lost_on_failure: u64,
}

/// One controller: FIFO inbox served by a single worker.
#[derive(Clone, Debug)]
pub struct ControllerModel {
    pub id: ControllerId,
    pub params: ControllerParams,
    inbox: VecDeque<PacketIn>,
    liveness: Liveness,
    busy: bool,
    owned: usize,
    /// Bumped on failure so completions scheduled before it are ignored.
    epoch: u64,
    stats: ControllerStats,
}

impl ControllerModel {
    pub fn new(id: ControllerId, params: ControllerParams) -> Self {
        ControllerModel {
            id,
            params,
            inbox: VecDeque::new(),
            liveness: Liveness::Up,
            busy: false,
            owned: 0,
            epoch: 0,
            stats: ControllerStats::default(),
        }
    }

    pub fn liveness(&self) -> Liveness {
        self.liveness
    }

    pub fn is_up(&self) -> bool {
        self.liveness == Liveness::Up
    }

    pub fn owned(&self) -> usize {
        self.owned
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn inbox_len(&self) -> usize {
        self.inbox.len()
    }

    pub fn stats(&self) -> ControllerStats {
        self.stats
    }

    pub fn effective_service_time(&self) -> SimTime {
        SimTime::from_micros_f64(self.params.effective_service_us(self.owned))
    }

    pub fn capacity(&self) -> f64 {
        controller_capacity(&self.params, self.owned)
    }

    /// Queues a packet-in. `Ok(true)` means the worker was idle and service
    /// must be started; a full inbox or a down controller hands it back.
    pub fn offer(&mut self, pi: PacketIn) -> Result<bool, PacketIn> {
        if !self.is_up() {
            return Err(pi);
        }
        self.stats.received += 1;
        if self.params.inbox_capacity.is_some_and(|cap| self.inbox.len() >= cap) {
            self.stats.inbox_drops += 1;
            return Err(pi);
        }
        self.inbox.push_back(pi);
        if self.busy {
            Ok(false)
        } else {
            self.busy = true;
            Ok(true)
        }
    }

    /// Finishes the head packet-in. The worker stays busy while work remains.
    pub fn complete(&mut self) -> Option<PacketIn> {
        let pi = self.inbox.pop_front()?;
        self.stats.processed += 1;
        self.busy = !self.inbox.is_empty();
        Some(pi)
    }

    pub fn is_busy(&self) -> bool {
        self.busy
    }

    fn go_down(&mut self) -> usize {
        self.liveness = Liveness::Down;
        self.busy = false;
        self.epoch += 1;
        let lost = self.inbox.len();
        self.stats.lost_on_failure += lost as u64;
        self.inbox.clear();
        lost
    }

    fn go_up(&mut self) {
        self.liveness = Liveness::Up;
        self.epoch += 1;
    }
}

/// Switch to master-controller assignment.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MastershipMap {
    assignment: BTreeMap<NodeId, ControllerId>,
    version: u64,
}

impl MastershipMap {
    pub fn master_of(&self, switch: NodeId) -> Option<ControllerId> {
        self.assignment.get(&switch).copied()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn assignment(&self) -> &BTreeMap<NodeId, ControllerId> {
        &self.assignment
    }

    pub fn counts(&self) -> BTreeMap<ControllerId, usize> {
        let mut m = BTreeMap::new();
        for c in self.assignment.values() {
            *m.entry(*c).or_insert(0) += 1;
        }
        m
    }

    pub fn switches_of(&self, c: ControllerId) -> Vec<NodeId> {
        self.assignment.iter().filter(|(_, m)| **m == c).map(|(s, _)| *s).collect()
    }
}

/// Contiguous balanced partition of `switches` (in index order) over the up
/// controllers (ascending id). Earlier controllers take the remainder.
pub fn assign_mastership(
    up: &[ControllerId],
    switches: &[NodeId],
) -> Result<BTreeMap<NodeId, ControllerId>, ClusterError> {
    if up.is_empty() {
        return Err(ClusterError::TotalOutage);
    }
    let mut up = up.to_vec();
    up.sort_unstable();
    let mut switches = switches.to_vec();
    switches.sort();
    let n = switches.len();
    let k = up.len();
    let mut out = BTreeMap::new();
    let mut it = switches.into_iter();
    for (i, c) in up.iter().enumerate() {
        let size = n / k + usize::from(i < n % k);
        for s in it.by_ref().take(size) {
            out.insert(s, *c);
        }
    }
    Ok(out)
}

/// Order-independent digest of the flow state a controller knows about.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GlobalView {
    pub applied: u64,
    pub digest: u64,
}

impl GlobalView {
    pub fn apply(&mut self, update: u64) {
        self.applied += 1;
        self.digest = self.digest.wrapping_add(update);
    }
}

/// Deterministic hash of one flow-installation update.
pub fn update_hash(issuer: ControllerId, key: &FlowKey, switch: NodeId, port: usize, seq: u64) -> u64 {
    let mut h: u64 = 0x243f_6a88_85a3_08d3 ^ seq;
    for v in [u64::from(issuer), u64::from(key.src), u64::from(key.dst), key.class, u64::from(switch.index), port as u64] {
        h ^= v;
        h = h.wrapping_mul(0x0000_0100_0000_01b3).rotate_left(29);
    }
    h
}

/// A FlowMod to deliver: target switch plus the rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowModPlan {
    pub switch: NodeId,
    pub rule: FlowRule,
}

/// Memoized forwarding paths: `(from switch, dst host)` to the hop list of
/// `(switch, output port)` pairs.
#[derive(Debug, Default)]
pub struct PathCache {
    paths: HashMap<(NodeId, u32), Rc<Vec<(NodeId, usize)>>>,
}

impl PathCache {
    pub fn hops(&mut self, topo: &Topology, from: NodeId, dst_host: u32) -> Result<Rc<Vec<(NodeId, usize)>>, TopologyError> {
        if let Some(p) = self.paths.get(&(from, dst_host)) {
            return Ok(Rc::clone(p));
        }
        let path = topo.shortest_path(from, NodeId::host(dst_host))?;
        let mut hops = Vec::with_capacity(path.len());
        for w in path.windows(2) {
            if !w[0].is_switch() {
                continue;
            }
            let port = topo
                .neighbors(w[0])
                .iter()
                .position(|(n, _)| *n == w[1])
                .expect("path follows links");
            hops.push((w[0], port));
        }
        let hops = Rc::new(hops);
        self.paths.insert((from, dst_host), Rc::clone(&hops));
        Ok(hops)
    }
}

/// Controllers, mastership, and per-controller views.
#[derive(Clone, Debug)]
pub struct Cluster {
    config: ClusterConfig,
    switches: Vec<NodeId>,
    controllers: Vec<ControllerModel>,
    mastership: MastershipMap,
    views: Vec<GlobalView>,
    store: GlobalView,
}

impl Cluster {
    pub fn new(config: ClusterConfig, switches: Vec<NodeId>) -> Result<Self, ClusterError> {
        config.validate()?;
        let controllers = (1..=config.controller_count).map(|id| ControllerModel::new(id, config.params)).collect();
        let mut c = Cluster {
            views: vec![GlobalView::default(); config.controller_count as usize],
            config,
            switches,
            controllers,
            mastership: MastershipMap::default(),
            store: GlobalView::default(),
        };
        c.remaster()?;
        Ok(c)
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.config
    }

    pub fn mode(&self) -> ClusterMode {
        self.config.mode
    }

    pub fn mastership(&self) -> &MastershipMap {
        &self.mastership
    }

    pub fn controllers(&self) -> &[ControllerModel] {
        &self.controllers
    }

    pub fn controller(&self, id: ControllerId) -> Option<&ControllerModel> {
        self.controllers.get((id as usize).wrapping_sub(1))
    }

    pub fn controller_mut(&mut self, id: ControllerId) -> Option<&mut ControllerModel> {
        self.controllers.get_mut((id as usize).wrapping_sub(1))
    }

    pub fn up_ids(&self) -> Vec<ControllerId> {
        self.controllers.iter().filter(|c| c.is_up()).map(|c| c.id).collect()
    }

    pub fn master_of(&self, switch: NodeId) -> Option<ControllerId> {
        self.mastership.master_of(switch)
    }

    /// Re-partitions switches over the up controllers. On total outage the
    /// map is emptied and the error returned.
    pub fn remaster(&mut self) -> Result<(), ClusterError> {
        let result = assign_mastership(&self.up_ids(), &self.switches);
        self.mastership.assignment = result.clone().unwrap_or_default();
        self.mastership.version += 1;
        let counts = self.mastership.counts();
        for c in &mut self.controllers {
            c.owned = counts.get(&c.id).copied().unwrap_or(0);
        }
        result.map(|_| ())
    }

    /// Marks `id` down. Its inbox is lost; mastership is not touched until
    /// the caller runs [`Cluster::remaster`] after the detection timeout.
    pub fn fail(&mut self, id: ControllerId) -> Result<usize, ClusterError> {
        let c = self.controller_mut(id).ok_or(ClusterError::NoSuchController(id))?;
        if !c.is_up() {
            return Err(ClusterError::AlreadyDown(id));
        }
        Ok(c.go_down())
    }

    /// Brings `id` back with a copy of the authoritative state and rebalances.
    pub fn recover(&mut self, id: ControllerId) -> Result<(), ClusterError> {
        let store = self.store;
        let c = self.controller_mut(id).ok_or(ClusterError::NoSuchController(id))?;
        if c.is_up() {
            return Err(ClusterError::AlreadyUp(id));
        }
        c.go_up();
        self.views[id as usize - 1] = store;
        self.remaster()
    }

    pub fn view(&self, id: ControllerId) -> GlobalView {
        self.views[id as usize - 1]
    }

    pub fn store(&self) -> GlobalView {
        self.store
    }

    /// Records an update issued by `issuer`; returns the peers that must
    /// receive it after the sync delay.
    pub fn issue_update(&mut self, issuer: ControllerId, update: u64) -> Vec<ControllerId> {
        self.store.apply(update);
        self.views[issuer as usize - 1].apply(update);
        self.controllers.iter().filter(|c| c.is_up() && c.id != issuer).map(|c| c.id).collect()
    }

    /// Delivers a synced update; dropped if the peer went down meanwhile.
    pub fn deliver_update(&mut self, peer: ControllerId, update: u64) {
        if self.controller(peer).is_some_and(ControllerModel::is_up) {
            self.views[peer as usize - 1].apply(update);
        }
    }

    /// True when every up controller's view matches the authoritative state.
    pub fn views_converged(&self) -> bool {
        self.controllers.iter().filter(|c| c.is_up()).all(|c| self.views[c.id as usize - 1] == self.store)
    }

    /// Sum of capacities over up controllers at the current mastership.
    pub fn aggregate_capacity(&self) -> f64 {
        self.controllers.iter().filter(|c| c.is_up()).map(ControllerModel::capacity).sum()
    }

    /// FlowMods for the path from the packet-in's switch to the flow's
    /// destination host: one rule per switch on the path.
    pub fn plan_flow_mods(
        &self,
        topo: &Topology,
        paths: &mut PathCache,
        pi: &PacketIn,
        now: SimTime,
        idle_timeout: SimTime,
    ) -> Result<Vec<FlowModPlan>, ClusterError> {
        let hops = paths.hops(topo, pi.switch, pi.key.dst)?;
        Ok(hops
            .iter()
            .map(|(sw, port)| FlowModPlan {
                switch: *sw,
                rule: FlowRule { key: pi.key, out_port: *port, installed_at: now, idle_timeout },
            })
            .collect())
    }
}
