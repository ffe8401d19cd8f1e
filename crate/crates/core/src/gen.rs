//! Seeded random scenario generator for sweeps, fuzzing and benchmarks.
//!
//! Every draw comes from a caller-provided seed through ChaCha, so the same
//! seed always produces the same scenario on every platform.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::contracts::AvailabilityWindow;
use crate::topology::{NetworkGraph, NodeParams, Scenario, ScenarioConfig, TrafficMatrix};

/// Tunable ranges for the generator. Defaults give small, convergent
/// markets suitable for tests.
#[derive(Debug, Clone)]
pub struct GenParams {
    pub nodes: std::ops::RangeInclusive<u32>,
    pub extra_edges: std::ops::RangeInclusive<u32>,
    pub cap: std::ops::RangeInclusive<u64>,
    pub delay: std::ops::RangeInclusive<u64>,
    pub demand: std::ops::RangeInclusive<u64>,
    pub utility: u64,
    pub max_delay: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            nodes: 4..=8,
            extra_edges: 0..=4,
            cap: 5..=40,
            delay: 1..=2,
            demand: 1..=4,
            utility: 8,
            max_delay: 20,
        }
    }
}

/// Generate a random connected scenario with one service destination.
///
/// The destination is the last node and receives enough capacity to stock
/// the whole market, so non-convergence comes from strategy dynamics, not
/// from an impossible instance.
pub fn generate(seed: u64, params: &GenParams) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(params.nodes.clone());
    let dest = n - 1;

    let mut graph = NetworkGraph::default();
    for id in 0..n {
        let cap = if id == dest {
            // Upper bound on total demand plus transit slack.
            *params.demand.end() * n as u64 * 2
        } else {
            rng.gen_range(params.cap.clone())
        };
        graph
            .add_node(NodeParams {
                id,
                cap,
                delay: rng.gen_range(params.delay.clone()),
                utility: params.utility,
                max_delay: params.max_delay,
                initial_margin: 1,
            })
            .expect("fresh id");
    }

    // Random spanning tree keeps the graph connected.
    for id in 1..n {
        let other = rng.gen_range(0..id);
        graph.add_edge(id, other);
    }
    for _ in 0..rng.gen_range(params.extra_edges.clone()) {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b {
            graph.add_edge(a, b);
        }
    }
    graph.add_service(dest);

    let mut traffic = TrafficMatrix::default();
    for id in 0..dest {
        let demand = rng.gen_range(params.demand.clone());
        if demand > 0 {
            traffic.set(id, dest, demand);
        }
    }

    let mut config = ScenarioConfig {
        destinations: [dest].into(),
        ..ScenarioConfig::default()
    };
    config
        .service_windows
        .insert(dest, AvailabilityWindow { start: 100, blocks: 1 });

    Scenario {
        graph,
        traffic,
        config,
    }
}
