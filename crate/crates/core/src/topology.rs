//! Communication-layer graph: hosts, switches, optional controller nodes, and
//! links carrying bandwidth and propagation delay.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::Deserialize;
use thiserror::Error;

use crate::queueing::{length_for_delay, propagation_delay};
use crate::sim::RandomStream;

/// Mean per-line propagation delay of the 118-bus communication layer, in µs.
pub const DEFAULT_MEAN_PD_US: f64 = 203.307;
/// Default Gaussian noise on link delays: 10% of the mean.
pub const DEFAULT_PD_NOISE_US: f64 = 20.33;
pub const DEFAULT_PROPAGATION_SPEED_KM_S: f64 = 200_000.0;
pub const DEFAULT_BANDWIDTH_BPS: f64 = 20e9;
pub const IEEE118_HOSTS: u32 = 118;
pub const IEEE118_SWITCHES: u32 = 45;
/// Delays are clamped from below to this value after noise.
pub const MIN_PD_US: f64 = 1.0;

// mesh: ring plus a chord from every 5th switch to the switch 14 positions ahead
const CHORD_EVERY: u32 = 5;
const CHORD_SPAN: u32 = 14;
// host pair relabelled onto the maximum-hop switch pair
const FAR_HOST_A: u32 = 1;
const FAR_HOST_B: u32 = 112;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("topology document is malformed: {0}")]
    Parse(String),
    #[error("unknown node kind {0:?}")]
    UnknownKind(String),
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("link {link} references unknown node {node:?}")]
    UnknownNode { link: usize, node: String },
    #[error("link {link} ({a}-{b}): missing bandwidth")]
    MissingBandwidth { link: usize, a: String, b: String },
    #[error("link {link} ({a}-{b}): bandwidth must be positive")]
    NonPositiveBandwidth { link: usize, a: String, b: String },
    #[error("link {link} ({a}-{b}): exactly one of length_km / prop_delay_us is required")]
    DelaySpec { link: usize, a: String, b: String },
    #[error("link {link} ({a}-{b}): length and delay must be non-negative")]
    NegativeDelay { link: usize, a: String, b: String },
    #[error("link {link}: self-loop on {node}")]
    SelfLoop { link: usize, node: NodeId },
    #[error("host {0} must attach to exactly one switch")]
    HostAttachment(NodeId),
    #[error("graph is disconnected: {0} unreachable from {1}")]
    Disconnected(NodeId, NodeId),
    #[error("propagation speed must be positive, got {0}")]
    InvalidSpeed(f64),
    #[error("node {0} not in topology")]
    NoSuchNode(NodeId),
    #[error("no path between {0} and {1}")]
    Unreachable(NodeId, NodeId),
    #[error("path endpoints must be hosts or switches, got {0}")]
    BadEndpoint(NodeId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKind {
    Host,
    Switch,
    Controller,
}

/// Node identity: kind plus a positive index unique within the kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId {
    pub kind: NodeKind,
    pub index: u32,
}

impl NodeId {
    pub const fn host(index: u32) -> Self {
        NodeId { kind: NodeKind::Host, index }
    }

    pub const fn switch(index: u32) -> Self {
        NodeId { kind: NodeKind::Switch, index }
    }

    pub const fn controller(index: u32) -> Self {
        NodeId { kind: NodeKind::Controller, index }
    }

    pub fn is_host(&self) -> bool {
        self.kind == NodeKind::Host
    }

    pub fn is_switch(&self) -> bool {
        self.kind == NodeKind::Switch
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = match self.kind {
            NodeKind::Host => 'h',
            NodeKind::Switch => 's',
            NodeKind::Controller => 'c',
        };
        write!(f, "{p}{}", self.index)
    }
}

impl FromStr for NodeId {
    type Err = TopologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TopologyError::Parse(format!("bad node reference {s:?}"));
        let mut chars = s.chars();
        let kind = match chars.next() {
            Some('h') => NodeKind::Host,
            Some('s') => NodeKind::Switch,
            Some('c') => NodeKind::Controller,
            _ => return Err(bad()),
        };
        let index: u32 = chars.as_str().parse().map_err(|_| bad())?;
        if index == 0 {
            return Err(bad());
        }
        Ok(NodeId { kind, index })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Link {
    pub a: NodeId,
    pub b: NodeId,
    pub bandwidth_bps: f64,
    pub prop_delay_us: f64,
    pub length_km: f64,
}

impl Link {
    pub fn other(&self, n: NodeId) -> NodeId {
        if self.a == n {
            self.b
        } else {
            self.a
        }
    }
}

/// Immutable network graph.
#[derive(Clone, Debug)]
pub struct Topology {
    nodes: Vec<NodeId>,
    links: Vec<Link>,
    // neighbor lists sorted by neighbor id
    adjacency: BTreeMap<NodeId, Vec<(NodeId, usize)>>,
    propagation_speed_km_s: f64,
}

impl Topology {
    /// Assembles and validates a topology.
    pub fn new(mut nodes: Vec<NodeId>, links: Vec<Link>, propagation_speed_km_s: f64) -> Result<Self, TopologyError> {
        if !(propagation_speed_km_s > 0.0) {
            return Err(TopologyError::InvalidSpeed(propagation_speed_km_s));
        }
        nodes.sort();
        for w in nodes.windows(2) {
            if w[0] == w[1] {
                return Err(TopologyError::DuplicateNode(w[0]));
            }
        }
        let mut adjacency: BTreeMap<NodeId, Vec<(NodeId, usize)>> = nodes.iter().map(|n| (*n, Vec::new())).collect();
        for (i, l) in links.iter().enumerate() {
            if l.a == l.b {
                return Err(TopologyError::SelfLoop { link: i, node: l.a });
            }
            for (x, y) in [(l.a, l.b), (l.b, l.a)] {
                adjacency
                    .get_mut(&x)
                    .ok_or_else(|| TopologyError::UnknownNode { link: i, node: x.to_string() })?
                    .push((y, i));
            }
        }
        for v in adjacency.values_mut() {
            v.sort();
        }
        let topo = Topology { nodes, links, adjacency, propagation_speed_km_s };
        topo.validate_structure()?;
        Ok(topo)
    }

    fn validate_structure(&self) -> Result<(), TopologyError> {
        for h in self.hosts() {
            let switches = self.adjacency[&h].iter().filter(|(n, _)| n.is_switch()).count();
            if switches != 1 || self.adjacency[&h].len() != 1 {
                return Err(TopologyError::HostAttachment(h));
            }
        }
        let fabric: Vec<NodeId> = self.nodes.iter().copied().filter(|n| n.kind != NodeKind::Controller).collect();
        if let Some(&root) = fabric.first() {
            let dist = self.bfs(root);
            if let Some(&lost) = fabric.iter().find(|n| !dist.contains_key(n)) {
                return Err(TopologyError::Disconnected(lost, root));
            }
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn propagation_speed_km_s(&self) -> f64 {
        self.propagation_speed_km_s
    }

    pub fn contains(&self, n: NodeId) -> bool {
        self.adjacency.contains_key(&n)
    }

    pub fn hosts(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().copied().filter(NodeId::is_host)
    }

    pub fn switches(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().copied().filter(NodeId::is_switch)
    }

    pub fn host_count(&self) -> usize {
        self.hosts().count()
    }

    pub fn switch_count(&self) -> usize {
        self.switches().count()
    }

    /// Neighbors of `n` with the connecting link index, sorted by neighbor id.
    pub fn neighbors(&self, n: NodeId) -> &[(NodeId, usize)] {
        self.adjacency.get(&n).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn link_between(&self, a: NodeId, b: NodeId) -> Option<&Link> {
        self.neighbors(a).iter().find(|(n, _)| *n == b).map(|(_, i)| &self.links[*i])
    }

    /// The switch a host attaches to.
    pub fn access_switch(&self, host: NodeId) -> Option<NodeId> {
        self.neighbors(host).iter().map(|(n, _)| *n).find(NodeId::is_switch)
    }

    pub fn mean_prop_delay_us(&self) -> f64 {
        if self.links.is_empty() {
            return 0.0;
        }
        self.links.iter().map(|l| l.prop_delay_us).sum::<f64>() / self.links.len() as f64
    }

    /// Sum of per-link propagation delays along `path`.
    pub fn path_prop_delay_us(&self, path: &[NodeId]) -> f64 {
        path.windows(2)
            .map(|w| self.link_between(w[0], w[1]).map_or(0.0, |l| l.prop_delay_us))
            .sum()
    }

    // hop distances from `src` over hosts and switches; hosts are leaves
    fn bfs(&self, src: NodeId) -> HashMap<NodeId, u32> {
        let mut dist = HashMap::new();
        dist.insert(src, 0);
        let mut q = VecDeque::from([src]);
        while let Some(u) = q.pop_front() {
            let du = dist[&u];
            if u != src && !u.is_switch() {
                continue;
            }
            for (v, _) in self.neighbors(u) {
                if v.kind == NodeKind::Controller || dist.contains_key(v) {
                    continue;
                }
                dist.insert(*v, du + 1);
                q.push_back(*v);
            }
        }
        dist
    }

    pub fn hop_distances(&self, src: NodeId) -> HashMap<NodeId, u32> {
        self.bfs(src)
    }

    /// Minimum-hop path from `a` to `b`. Among equal-length paths the
    /// lexicographically smallest node sequence wins.
    pub fn shortest_path(&self, a: NodeId, b: NodeId) -> Result<Vec<NodeId>, TopologyError> {
        for n in [a, b] {
            if !self.contains(n) {
                return Err(TopologyError::NoSuchNode(n));
            }
            if n.kind == NodeKind::Controller {
                return Err(TopologyError::BadEndpoint(n));
            }
        }
        let to_b = self.bfs(b);
        let mut d = *to_b.get(&a).ok_or(TopologyError::Unreachable(a, b))?;
        let mut path = vec![a];
        let mut cur = a;
        while d > 0 {
            let next = self
                .neighbors(cur)
                .iter()
                .map(|(n, _)| *n)
                .filter(|n| (n.is_switch() || *n == b) && to_b.get(n) == Some(&(d - 1)))
                .min()
                .ok_or(TopologyError::Unreachable(a, b))?;
            path.push(next);
            cur = next;
            d -= 1;
        }
        Ok(path)
    }

    /// Host pair with the largest hop count; ties go to the lexicographically
    /// smallest `(a, b)` with `a < b`.
    pub fn farthest_pair(&self) -> Option<(NodeId, NodeId, u32)> {
        let hosts: Vec<NodeId> = self.hosts().collect();
        let mut best: Option<(NodeId, NodeId, u32)> = None;
        for (i, &a) in hosts.iter().enumerate() {
            let dist = self.bfs(a);
            for &b in &hosts[i + 1..] {
                let Some(&d) = dist.get(&b) else { continue };
                if best.is_none_or(|(_, _, bd)| d > bd) {
                    best = Some((a, b, d));
                }
            }
        }
        best
    }
}

/// Parameters for the default 118-host / 45-switch build.
#[derive(Clone, Debug, PartialEq)]
pub struct Ieee118Options {
    pub seed: u64,
    pub mean_pd_us: f64,
    pub pd_noise_stddev_us: f64,
    pub bandwidth_bps: f64,
    pub propagation_speed_km_s: f64,
}

impl Default for Ieee118Options {
    fn default() -> Self {
        Ieee118Options {
            seed: 42,
            mean_pd_us: DEFAULT_MEAN_PD_US,
            pd_noise_stddev_us: DEFAULT_PD_NOISE_US,
            bandwidth_bps: DEFAULT_BANDWIDTH_BPS,
            propagation_speed_km_s: DEFAULT_PROPAGATION_SPEED_KM_S,
        }
    }
}

/// Builds the default communication layer with the given delay statistics.
pub fn build_ieee118(seed: u64, mean_pd_us: f64, pd_noise_stddev_us: f64) -> Topology {
    build_ieee118_with(&Ieee118Options { seed, mean_pd_us, pd_noise_stddev_us, ..Default::default() })
}

pub fn build_ieee118_with(opts: &Ieee118Options) -> Topology {
    assert!(opts.mean_pd_us > 0.0, "mean propagation delay must be positive");
    assert!(opts.pd_noise_stddev_us >= 0.0, "noise stddev must be non-negative");
    let n_sw = IEEE118_SWITCHES;
    let mut sw_edges: Vec<(u32, u32)> = (1..=n_sw).map(|k| (k, k % n_sw + 1)).collect();
    for k in (1..=n_sw).step_by(CHORD_EVERY as usize) {
        let to = (k - 1 + CHORD_SPAN) % n_sw + 1;
        sw_edges.push((k.min(to), k.max(to)));
    }

    // round-robin attachment: switch k serves hosts k, k+45, k+90
    let mut host_switch: Vec<u32> = (0..IEEE118_HOSTS).map(|h| h % n_sw + 1).collect();
    relabel_far_hosts(&mut host_switch, &sw_edges, n_sw);

    let mut pd_stream = RandomStream::new(opts.seed, "topology.link-pd");
    let mut nodes: Vec<NodeId> = (1..=IEEE118_HOSTS).map(NodeId::host).collect();
    nodes.extend((1..=n_sw).map(NodeId::switch));
    let mut links = Vec::new();
    let mut push = |a: NodeId, b: NodeId| {
        let pd = pd_stream
            .sample_gaussian(opts.mean_pd_us, opts.pd_noise_stddev_us)
            .expect("validated stddev")
            .max(MIN_PD_US);
        links.push(Link {
            a,
            b,
            bandwidth_bps: opts.bandwidth_bps,
            prop_delay_us: pd,
            length_km: length_for_delay(pd, opts.propagation_speed_km_s),
        });
    };
    for (a, b) in &sw_edges {
        push(NodeId::switch(*a), NodeId::switch(*b));
    }
    for (h, s) in host_switch.iter().enumerate() {
        push(NodeId::host(h as u32 + 1), NodeId::switch(*s));
    }
    let topo = Topology::new(nodes, links, opts.propagation_speed_km_s).expect("default build is valid");
    debug_assert_eq!(
        topo.farthest_pair().map(|(a, b, _)| (a.index, b.index)),
        Some((FAR_HOST_A, FAR_HOST_B))
    );
    topo
}

fn switch_distances(edges: &[(u32, u32)], n: u32, src: u32) -> Vec<u32> {
    let mut adj = vec![Vec::new(); n as usize + 1];
    for (a, b) in edges {
        adj[*a as usize].push(*b);
        adj[*b as usize].push(*a);
    }
    let mut dist = vec![u32::MAX; n as usize + 1];
    dist[src as usize] = 0;
    let mut q = VecDeque::from([src]);
    while let Some(u) = q.pop_front() {
        for &v in &adj[u as usize] {
            if dist[v as usize] == u32::MAX {
                dist[v as usize] = dist[u as usize] + 1;
                q.push_back(v);
            }
        }
    }
    dist
}

// Swap host labels so that host 1 sits on a switch of maximum eccentricity and
// every host at maximum distance from it carries a label >= 112, with 112
// among them. `host_switch[i]` is the switch of host i+1.
fn relabel_far_hosts(host_switch: &mut [u32], edges: &[(u32, u32)], n_sw: u32) {
    let ecc = |s: u32| switch_distances(edges, n_sw, s)[1..].iter().copied().max().unwrap_or(0);
    let diameter = (1..=n_sw).map(ecc).max().unwrap_or(0);
    let anchor = (1..=n_sw).find(|s| ecc(*s) == diameter).expect("non-empty mesh");
    let idx = |h: u32| (h - 1) as usize;

    if host_switch[idx(FAR_HOST_A)] != anchor {
        let donor = (1..=host_switch.len() as u32)
            .find(|h| host_switch[idx(*h)] == anchor)
            .expect("anchor switch has hosts");
        host_switch.swap(idx(FAR_HOST_A), idx(donor));
    }
    let dist = switch_distances(edges, n_sw, anchor);
    let is_far = |s: u32| dist[s as usize] == diameter;

    let high: Vec<u32> = (FAR_HOST_B..=host_switch.len() as u32).collect();
    if !is_far(host_switch[idx(FAR_HOST_B)]) {
        let far = (1..=host_switch.len() as u32)
            .filter(|h| is_far(host_switch[idx(*h)]))
            .min()
            .expect("far switch has hosts");
        host_switch.swap(idx(FAR_HOST_B), idx(far));
    }
    let mut free: Vec<u32> = high.iter().copied().filter(|h| !is_far(host_switch[idx(*h)])).collect();
    free.reverse();
    let low_far: Vec<u32> =
        (2..FAR_HOST_B).filter(|h| is_far(host_switch[idx(*h)])).collect();
    for h in low_far {
        let hi = free.pop().expect("enough high labels for the far switches");
        host_switch.swap(idx(h), idx(hi));
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyDoc {
    propagation_speed_km_s: Option<f64>,
    #[serde(default)]
    nodes: Vec<NodeDoc>,
    #[serde(default)]
    links: Vec<LinkDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: u32,
    kind: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkDoc {
    a: String,
    b: String,
    bandwidth_bps: Option<f64>,
    length_km: Option<f64>,
    prop_delay_us: Option<f64>,
}

/// Parses a topology document (TOML).
///
/// ```toml
/// propagation_speed_km_s = 200000.0
/// nodes = [{ id = 1, kind = "host" }, { id = 1, kind = "switch" }, { id = 2, kind = "host" }]
/// links = [
///   { a = "h1", b = "s1", bandwidth_bps = 20e9, length_km = 40.6614 },
///   { a = "s1", b = "h2", bandwidth_bps = 20e9, prop_delay_us = 203.307 },
/// ]
/// ```
pub fn load_topology(document: &str) -> Result<Topology, TopologyError> {
    let doc: TopologyDoc = toml::from_str(document).map_err(|e| TopologyError::Parse(e.message().to_string()))?;
    let speed = doc.propagation_speed_km_s.unwrap_or(DEFAULT_PROPAGATION_SPEED_KM_S);
    if !(speed > 0.0) {
        return Err(TopologyError::InvalidSpeed(speed));
    }
    let mut nodes = Vec::with_capacity(doc.nodes.len());
    let mut seen = std::collections::HashSet::new();
    for n in &doc.nodes {
        let kind = match n.kind.as_str() {
            "host" => NodeKind::Host,
            "switch" => NodeKind::Switch,
            "controller" => NodeKind::Controller,
            other => return Err(TopologyError::UnknownKind(other.to_string())),
        };
        if n.id == 0 {
            return Err(TopologyError::Parse(format!("node id must be positive ({} 0)", n.kind)));
        }
        let id = NodeId { kind, index: n.id };
        if !seen.insert(id) {
            return Err(TopologyError::DuplicateNode(id));
        }
        nodes.push(id);
    }
    let mut links = Vec::with_capacity(doc.links.len());
    for (i, l) in doc.links.iter().enumerate() {
        let resolve = |s: &str| -> Result<NodeId, TopologyError> {
            match s.parse::<NodeId>() {
                Ok(id) if seen.contains(&id) => Ok(id),
                _ => Err(TopologyError::UnknownNode { link: i, node: s.to_string() }),
            }
        };
        let a = resolve(&l.a)?;
        let b = resolve(&l.b)?;
        let names = || (l.a.clone(), l.b.clone());
        let bandwidth_bps = l.bandwidth_bps.ok_or_else(|| {
            let (a, b) = names();
            TopologyError::MissingBandwidth { link: i, a, b }
        })?;
        if !(bandwidth_bps > 0.0) {
            let (a, b) = names();
            return Err(TopologyError::NonPositiveBandwidth { link: i, a, b });
        }
        let (length_km, prop_delay_us) = match (l.length_km, l.prop_delay_us) {
            (Some(len), None) if len >= 0.0 => {
                (len, propagation_delay(len, speed).map_err(|e| TopologyError::Parse(e.to_string()))?)
            }
            (None, Some(pd)) if pd >= 0.0 => (length_for_delay(pd, speed), pd),
            (Some(_), None) | (None, Some(_)) => {
                let (a, b) = names();
                return Err(TopologyError::NegativeDelay { link: i, a, b });
            }
            _ => {
                let (a, b) = names();
                return Err(TopologyError::DelaySpec { link: i, a, b });
            }
        };
        links.push(Link { a, b, bandwidth_bps, prop_delay_us, length_km });
    }
    Topology::new(nodes, links, speed)
}
