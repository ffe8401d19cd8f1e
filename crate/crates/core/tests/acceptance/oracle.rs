//! Independent synchronous oracle for small instances.
//!
//! Reimplements the stable-state outcome (provider tree -> allocation ->
//! benefits) from first principles, sharing no code with the engine's
//! event loop, and checks best-response fixed-point conditions under
//! unilateral deviations.

use std::collections::{BTreeMap, BTreeSet};

use stockcascade_core::engine::SimulationReport;
use stockcascade_core::topology::{
    MarginMode, NetworkGraph, NodeId, NodeParams, Scenario, ScenarioConfig, TrafficMatrix,
};
use stockcascade_core::AvailabilityWindow;

/// Fixed parameter scheme for the enumeration: small transit caps so the
/// market is non-trivial but every buyer's total spend is depth-invariant,
/// making the learned state deviation-proof.
const DEST_CAP: u64 = 100;
const NODE_CAP: u64 = 2;
const DEMAND: u64 = 1;
const UTILITY: u64 = 10;

/// All connected labeled graphs on nodes 0..n, as edge lists.
pub fn connected_graphs(n: u32) -> Vec<Vec<(u32, u32)>> {
    let pairs: Vec<(u32, u32)> = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .collect();
    let mut out = Vec::new();
    for mask in 0u32..1 << pairs.len() {
        let edges: Vec<(u32, u32)> = pairs
            .iter()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(_, &e)| e)
            .collect();
        if is_connected(n, &edges) {
            out.push(edges);
        }
    }
    out
}

fn is_connected(n: u32, edges: &[(u32, u32)]) -> bool {
    let mut seen = BTreeSet::from([0u32]);
    let mut frontier = vec![0u32];
    while let Some(v) = frontier.pop() {
        for &(a, b) in edges {
            let other = if a == v { b } else if b == v { a } else { continue };
            if seen.insert(other) {
                frontier.push(other);
            }
        }
    }
    seen.len() == n as usize
}

/// Build the scheme scenario: destination is node n-1 with ample stock,
/// every other node wants one unit, margins fixed at 1.
pub fn scheme_scenario(n: u32, edges: &[(u32, u32)]) -> Scenario {
    let dest = n - 1;
    let mut graph = NetworkGraph::default();
    for id in 0..n {
        graph
            .add_node(NodeParams {
                id,
                cap: if id == dest { DEST_CAP } else { NODE_CAP },
                delay: 1,
                utility: UTILITY,
                max_delay: 10,
                initial_margin: 1,
            })
            .unwrap();
    }
    for &(a, b) in edges {
        graph.add_edge(a, b);
    }
    graph.add_service(dest);
    let mut traffic = TrafficMatrix::default();
    for id in 0..dest {
        traffic.set(id, dest, DEMAND);
    }
    let mut config = ScenarioConfig {
        destinations: [dest].into(),
        margin_mode: MarginMode::Fixed,
        ..ScenarioConfig::default()
    };
    config
        .service_windows
        .insert(dest, AvailabilityWindow { start: 100, blocks: 1 });
    Scenario { graph, traffic, config }
}

/// One node's outcome in the synchronous replay.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Outcome {
    poss: u64,
    cost: u64,
    local: u64,
    sold: u64,
    revenue: u64,
}

impl Outcome {
    fn benefit(&self) -> i64 {
        self.revenue as i64 + (self.local * UTILITY) as i64 - (self.poss * self.cost) as i64
    }
}

/// Independent min-fill: grant minima in (min, num) order rejecting the
/// unfittable, then split the remainder equally and hand out the leftover
/// one unit at a time, all capped at each customer's maximum.
fn min_fill(free: u64, demands: &[(NodeId, u64, u64)]) -> BTreeMap<NodeId, u64> {
    let mut order: Vec<&(NodeId, u64, u64)> = demands.iter().collect();
    order.sort_by_key(|(num, min, _)| (*min, *num));
    let mut grants: BTreeMap<NodeId, u64> = BTreeMap::new();
    let mut remaining = free;
    let mut accepted: Vec<&(NodeId, u64, u64)> = Vec::new();
    for item @ (num, min, _) in order.iter().copied() {
        if *min <= remaining {
            grants.insert(*num, *min);
            remaining -= *min;
            accepted.push(item);
        }
    }
    if accepted.is_empty() {
        return grants;
    }
    let share = remaining / accepted.len() as u64;
    for (num, min, max) in accepted.iter().copied() {
        let extra = share.min(max.saturating_sub(*min));
        *grants.get_mut(num).unwrap() += extra;
        remaining -= extra;
    }
    let mut progress = true;
    while remaining > 0 && progress {
        progress = false;
        for (num, _, max) in accepted.iter().copied() {
            if remaining == 0 {
                break;
            }
            let g = grants.get_mut(num).unwrap();
            if *g < *max {
                *g += 1;
                remaining -= 1;
                progress = true;
            }
        }
    }
    grants.retain(|_, g| *g > 0);
    grants
}

/// Replay one stage synchronously for a fixed provider assignment and
/// cap_min profile.
fn replay(
    n: u32,
    dest: NodeId,
    provider: &BTreeMap<NodeId, NodeId>,
    cap_min: &BTreeMap<NodeId, u64>,
) -> BTreeMap<NodeId, Outcome> {
    let mut out: BTreeMap<NodeId, Outcome> = (0..n).map(|v| (v, Outcome::default())).collect();
    out.insert(
        dest,
        Outcome { poss: DEST_CAP, cost: 0, local: 0, sold: 0, revenue: 0 },
    );
    let mut children: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for (&c, &p) in provider {
        children.entry(p).or_default().push(c);
    }
    let mut queue = std::collections::VecDeque::from([dest]);
    while let Some(p) = queue.pop_front() {
        let parent = out[&p];
        let free = parent.poss - parent.local - parent.sold;
        let price = parent.cost + 1; // unit margin everywhere
        let kids = children.get(&p).cloned().unwrap_or_default();
        let demands: Vec<(NodeId, u64, u64)> = kids
            .iter()
            .map(|&c| {
                let max = NODE_CAP.min(free);
                let min = cap_min.get(&c).copied().unwrap_or(DEMAND).min(max);
                (c, min, max)
            })
            .collect();
        let grants = min_fill(free, &demands);
        for &c in &kids {
            let poss = grants.get(&c).copied().unwrap_or(0);
            if poss == 0 {
                continue;
            }
            let local = if price < UTILITY { DEMAND.min(poss) } else { 0 };
            out.insert(c, Outcome { poss, cost: price, local, sold: 0, revenue: 0 });
            let parent = out.get_mut(&p).unwrap();
            parent.sold += poss;
            parent.revenue += poss * price;
            queue.push_back(c);
        }
    }
    out
}

/// Would assigning `node -> candidate` keep the relation a forest rooted
/// at the destination?
fn acyclic_after(
    provider: &BTreeMap<NodeId, NodeId>,
    node: NodeId,
    candidate: NodeId,
    dest: NodeId,
) -> bool {
    let mut cursor = candidate;
    let mut steps = 0;
    while cursor != dest {
        if cursor == node {
            return false;
        }
        match provider.get(&cursor) {
            Some(&p) => cursor = p,
            None => return false, // candidate itself is disconnected
        }
        steps += 1;
        if steps > provider.len() + 1 {
            return false;
        }
    }
    true
}

/// Full per-instance check: the engine's stable state must match the
/// synchronous replay exactly and admit no profitable unilateral
/// deviation in cap_min (+/-1) or provider choice.
pub fn check_instance(
    n: u32,
    edges: &[(u32, u32)],
    report: &SimulationReport,
) -> Result<(), String> {
    let dest = n - 1;
    let record = report.final_record();

    // Extract the stable tree and cap_min profile.
    let mut provider: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    let mut cap_min: BTreeMap<NodeId, u64> = BTreeMap::new();
    for v in 0..n {
        let entry = &record.entries[&(v, dest)];
        if v != dest {
            if let Some(p) = entry.provider() {
                if !edges.contains(&(v.min(p), v.max(p))) {
                    return Err(format!("provider edge {v}-{p} not in graph"));
                }
                provider.insert(v, p);
            }
            if let Some(min) = entry.cap_min {
                cap_min.insert(v, min);
            }
        }
    }
    for &v in provider.keys() {
        if !acyclic_after(&provider, v, provider[&v], dest) {
            return Err(format!("provider relation not a forest at node {v}"));
        }
    }

    // Equivalence: replaying the stable strategies reproduces the
    // engine's allocation and benefits.
    let base = replay(n, dest, &provider, &cap_min);
    for v in 0..n {
        if v == dest {
            continue;
        }
        let entry = &record.entries[&(v, dest)];
        let o = base[&v];
        if entry.poss() != o.poss
            || entry.local_cap() != o.local
            || entry.sold_total() != o.sold
            || entry.benefit != o.benefit()
        {
            return Err(format!(
                "node {v}: engine (poss={} local={} sold={} benefit={}) vs oracle \
                 (poss={} local={} sold={} benefit={})",
                entry.poss(),
                entry.local_cap(),
                entry.sold_total(),
                entry.benefit,
                o.poss,
                o.local,
                o.sold,
                o.benefit()
            ));
        }
    }

    // Fixed point: no unilateral deviation strictly improves the deviator.
    for v in 0..n {
        if v == dest {
            continue;
        }
        let current = base[&v].benefit();

        // cap_min one step either way.
        let have = cap_min.get(&v).copied().unwrap_or(DEMAND);
        for delta in [-1i64, 1] {
            let Some(tweaked) = have.checked_add_signed(delta) else { continue };
            let mut mins = cap_min.clone();
            mins.insert(v, tweaked);
            let alt = replay(n, dest, &provider, &mins);
            if alt[&v].benefit() > current {
                return Err(format!(
                    "node {v}: cap_min {have} -> {tweaked} raises benefit {current} -> {}",
                    alt[&v].benefit()
                ));
            }
        }

        // Switch to any other adjacent provider that keeps a forest.
        for &(a, b) in edges {
            let candidate = if a == v { b } else if b == v { a } else { continue };
            if provider.get(&v) == Some(&candidate) {
                continue;
            }
            if candidate != dest && !acyclic_after(&provider, v, candidate, dest) {
                continue;
            }
            let mut tree = provider.clone();
            tree.insert(v, candidate);
            let alt = replay(n, dest, &tree, &cap_min);
            if alt[&v].benefit() > current {
                return Err(format!(
                    "node {v}: switching to {candidate} raises benefit {current} -> {}",
                    alt[&v].benefit()
                ));
            }
        }
    }
    Ok(())
}
