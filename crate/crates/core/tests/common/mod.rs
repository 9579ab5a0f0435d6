//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeSet;

use num_bigint::BigInt;
use num_traits::{Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sdgrid::topology::NodeId;

/// Fixed-point reals scaled by 10^40.
pub struct Fixed;

impl Fixed {
    pub fn scale() -> BigInt {
        BigInt::from(10u32).pow(40)
    }

    /// `exp(-x)` for fixed-point `x >= 0`: halve until small, Taylor, square back.
    pub fn exp_neg(x: &BigInt) -> BigInt {
        let s = Self::scale();
        let mut y = x.clone();
        let mut halvings = 0;
        while y > &s / 16 {
            y /= 2;
            halvings += 1;
        }
        let mut sum = s.clone();
        let mut term = s.clone();
        for n in 1u32..200 {
            term = -(&term * &y) / (&s * n);
            if term.is_zero() {
                break;
            }
            sum += &term;
        }
        for _ in 0..halvings {
            sum = &sum * &sum / &s;
        }
        sum
    }
}

/// The exact value of a finite `f64`, as a fixed-point integer.
pub fn fixed(v: f64) -> BigInt {
    if v == 0.0 {
        return BigInt::zero();
    }
    let bits = v.to_bits();
    let neg = bits >> 63 == 1;
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    let (mant, e) = if exp == 0 { (frac, -1074) } else { (frac | (1u64 << 52), exp - 1075) };
    let mut r = BigInt::from(mant) * Fixed::scale();
    if e >= 0 {
        r <<= e as usize;
    } else {
        r >>= (-e) as usize;
    }
    if neg {
        -r
    } else {
        r
    }
}

/// `|got - want| <= 1e-9 * |want|`.
pub fn rel_err_ok(got: f64, want: &BigInt) -> bool {
    if want.is_zero() {
        return got == 0.0;
    }
    let diff = (fixed(got) - want).abs();
    diff * BigInt::from(1_000_000_000u64) <= want.abs()
}

/// A small random network with its document form.
pub struct Graph {
    pub toml: String,
    pub hosts: Vec<NodeId>,
    pub edges: BTreeSet<(NodeId, NodeId)>,
}

impl Graph {
    pub fn adjacent(&self, a: NodeId, b: NodeId) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    fn neighbors(&self, n: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.edges.iter().filter_map(move |&(a, b)| if a == n { Some(b) } else if b == n { Some(a) } else { None })
    }
}

/// Random connected graph of at most `max_nodes` nodes, each host on one switch.
pub fn random_graph(seed: u64, max_nodes: usize) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let switches = rng.random_range(2..=12u32);
    let hosts = rng.random_range(2..=((max_nodes as u32 - switches).min(6)));
    let p = rng.random_range(0.12..0.45);
    let mut edges = BTreeSet::new();
    for b in 2..=switches {
        let a = rng.random_range(1..b);
        edges.insert((NodeId::switch(a), NodeId::switch(b)));
    }
    for a in 1..=switches {
        for b in a + 1..=switches {
            if rng.random_bool(p) {
                edges.insert((NodeId::switch(a), NodeId::switch(b)));
            }
        }
    }
    for h in 1..=hosts {
        let s = rng.random_range(1..=switches);
        let (a, b) = (NodeId::host(h), NodeId::switch(s));
        edges.insert((a.min(b), a.max(b)));
    }
    let mut toml = String::from("nodes = [\n");
    for h in 1..=hosts {
        toml.push_str(&format!("  {{ id = {h}, kind = \"host\" }},\n"));
    }
    for s in 1..=switches {
        toml.push_str(&format!("  {{ id = {s}, kind = \"switch\" }},\n"));
    }
    toml.push_str("]\nlinks = [\n");
    for (a, b) in &edges {
        let km = rng.random_range(1.0..80.0);
        toml.push_str(&format!("  {{ a = \"{a}\", b = \"{b}\", bandwidth_bps = 1e9, length_km = {km} }},\n"));
    }
    toml.push_str("]\n");
    Graph { toml, hosts: (1..=hosts).map(NodeId::host).collect(), edges }
}

/// Fewest hops from `a` to `b` over every simple path whose interior nodes
/// are switches.
pub fn brute_hops(g: &Graph, a: NodeId, b: NodeId) -> Option<usize> {
    fn walk(g: &Graph, cur: NodeId, b: NodeId, seen: &mut Vec<NodeId>, best: &mut Option<usize>) {
        for n in g.neighbors(cur) {
            if n == b {
                let len = seen.len();
                if best.is_none_or(|x| len < x) {
                    *best = Some(len);
                }
            } else if n.is_switch() && !seen.contains(&n) && best.is_none_or(|x| seen.len() + 1 < x) {
                seen.push(n);
                walk(g, n, b, seen, best);
                seen.pop();
            }
        }
    }
    let mut best = None;
    walk(g, a, b, &mut vec![a], &mut best);
    best
}
