//! Stage driver: bind strategies, run the cascade, account benefits,
//! detect stability, compute satisfaction and capacity metrics.

use std::collections::BTreeMap;

use crate::contracts::{free_capacity, AvailabilityWindow, CapacityLedger};
use crate::error::EngineError;
use crate::policies::{update_margin, CapMinRule, StageOutcome, StrategyState};
use crate::protocol::{run_cascade, CascadeInput, Message};
use crate::topology::{
    NetworkGraph, NodeId, Scenario, TrafficMatrix, DEFAULT_SERVICE_BLOCKS, DEFAULT_SERVICE_START,
};

/// Snapshot of one (node, destination) pair at the end of a stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeStageEntry {
    pub node: NodeId,
    pub destination: NodeId,
    pub margin: u64,
    pub cap_min: Option<u64>,
    pub cap_max: Option<u64>,
    pub rule: CapMinRule,
    pub asked_provider_max: bool,
    pub ledger: Option<CapacityLedger>,
    pub penalty_paid: u64,
    pub penalty_received: u64,
    pub demand_count: u64,
    pub benefit: i64,
    pub satisfied: Option<bool>,
}

impl NodeStageEntry {
    pub fn provider(&self) -> Option<NodeId> {
        self.ledger.as_ref().map(|l| l.upstream.provider)
    }

    pub fn poss(&self) -> u64 {
        self.ledger.as_ref().map(|l| l.upstream.poss).unwrap_or(0)
    }

    pub fn local_cap(&self) -> u64 {
        self.ledger.as_ref().map(|l| l.local_cap).unwrap_or(0)
    }

    pub fn sold_total(&self) -> u64 {
        self.ledger.as_ref().map(|l| l.sold_total()).unwrap_or(0)
    }

    pub fn free_cap(&self) -> u64 {
        self.ledger.as_ref().map(free_capacity).unwrap_or(0)
    }

    /// The quantities whose per-stage equality defines stability.
    pub fn strategy_key(&self) -> (Option<u64>, u64, Option<NodeId>, u64) {
        (self.cap_min, self.margin, self.provider(), self.poss())
    }
}

/// Everything recorded about one stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageRecord {
    pub stage: usize,
    pub entries: BTreeMap<(NodeId, NodeId), NodeStageEntry>,
    pub log: Vec<Message>,
    pub events_processed: u64,
}

/// Per-node capacity usage categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MetricsSnapshot {
    /// Traffic terminating at this node.
    pub cap_in: u64,
    /// Own traffic this node sends out.
    pub cap_out: u64,
    /// Traffic transiting through this node.
    pub cap_in_out: u64,
    pub slack: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationReport {
    pub records: Vec<StageRecord>,
    pub stable_at: Option<usize>,
    pub satisfaction: f64,
    /// Provider edges (customer -> provider) per destination at the final stage.
    pub route_trees: BTreeMap<NodeId, Vec<(NodeId, NodeId)>>,
}

impl SimulationReport {
    pub fn final_record(&self) -> &StageRecord {
        self.records.last().expect("at least one stage")
    }

    pub fn converged(&self) -> bool {
        self.stable_at.is_some()
    }
}

/// Benefit of one node on one route: sales revenue plus the utility of own
/// traffic carried, minus the purchase cost, with penalty flows applied.
pub fn stage_benefit(ledger: &CapacityLedger, utility: u64) -> i64 {
    let revenue: u64 = ledger
        .sold
        .values()
        .map(|c| c.window.blocks * c.poss * c.cost)
        .sum();
    let own = ledger.upstream.window.blocks * ledger.local_cap * utility;
    let purchase = ledger.upstream.window.blocks * ledger.upstream.poss * ledger.upstream.cost;
    revenue as i64 + own as i64 - purchase as i64
}

/// Fraction of demanding nodes whose own traffic is fully carried within
/// their utility and delay budgets. Destinations count as satisfied for
/// their own service; an empty denominator yields 1.0.
pub fn satisfaction_rate(
    record: &StageRecord,
    traffic: &TrafficMatrix,
    graph: &NetworkGraph,
) -> f64 {
    let mut demanding = 0u64;
    let mut satisfied = 0u64;
    for ((node, dest), entry) in &record.entries {
        if traffic.demand(*node, *dest) == 0 {
            continue;
        }
        demanding += 1;
        if node == dest {
            satisfied += 1;
            continue;
        }
        let _ = graph;
        if entry.satisfied == Some(true) {
            satisfied += 1;
        }
    }
    if demanding == 0 {
        1.0
    } else {
        satisfied as f64 / demanding as f64
    }
}

/// Earliest stage index from which strategies are identical for
/// `window` consecutive recorded stages.
pub fn detect_stable(records: &[StageRecord], window: usize) -> Option<usize> {
    if records.len() < window {
        return None;
    }
    'outer: for start in 0..=records.len() - window {
        let reference = strategy_signature(&records[start]);
        for offset in 1..window {
            if strategy_signature(&records[start + offset]) != reference {
                continue 'outer;
            }
        }
        return Some(records[start].stage);
    }
    None
}

type StrategySignature = BTreeMap<(NodeId, NodeId), (Option<u64>, u64, Option<NodeId>, u64)>;

fn strategy_signature(record: &StageRecord) -> StrategySignature {
    record
        .entries
        .iter()
        .map(|(&k, e)| (k, e.strategy_key()))
        .collect()
}

/// Capacity-category metrics for every node at one stage.
pub fn metrics(record: &StageRecord, graph: &NetworkGraph) -> BTreeMap<NodeId, MetricsSnapshot> {
    let mut out: BTreeMap<NodeId, MetricsSnapshot> = graph
        .nodes()
        .map(|n| (n.id, MetricsSnapshot::default()))
        .collect();
    for ((node, dest), entry) in &record.entries {
        if node == dest {
            continue;
        }
        let m = out.get_mut(node).unwrap();
        m.cap_out += entry.local_cap();
        m.cap_in_out += entry.sold_total();
        out.get_mut(dest).unwrap().cap_in += entry.local_cap();
    }
    for (id, m) in out.iter_mut() {
        let cap = graph.node(*id).map(|n| n.cap).unwrap_or(0);
        m.slack = cap.saturating_sub(m.cap_in + m.cap_out + m.cap_in_out);
    }
    out
}

/// Drives stages for one scenario.
pub struct Engine {
    scenario: Scenario,
    strategies: BTreeMap<(NodeId, NodeId), StrategyState>,
    records: Vec<StageRecord>,
}

impl Engine {
    pub fn new(scenario: Scenario) -> Result<Self, EngineError> {
        if scenario.config.destinations.is_empty() {
            return Err(EngineError::NoDestination);
        }
        for &dest in &scenario.config.destinations {
            if !scenario.graph.is_service(dest) {
                return Err(EngineError::NotAService { id: dest });
            }
        }
        let mut strategies = BTreeMap::new();
        for node in scenario.graph.nodes() {
            for &dest in &scenario.config.destinations {
                strategies.insert((node.id, dest), StrategyState::new(node.initial_margin));
            }
        }
        Ok(Engine {
            scenario,
            strategies,
            records: Vec::new(),
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn records(&self) -> &[StageRecord] {
        &self.records
    }

    fn event_cap(&self) -> u64 {
        self.scenario
            .config
            .event_cap
            .unwrap_or_else(|| 10 * (self.scenario.graph.node_count() as u64).pow(2))
    }

    /// Run one stage: update margins from history, run the cascade per
    /// destination, account benefits and record the snapshot.
    pub fn run_stage(&mut self) -> Result<&StageRecord, EngineError> {
        let stage = self.records.len();
        let config = &self.scenario.config;

        // Bind this stage's margins.
        for strategy in self.strategies.values_mut() {
            strategy.margin = update_margin(strategy, config.margin_mode);
        }

        let mut entries: BTreeMap<(NodeId, NodeId), NodeStageEntry> = BTreeMap::new();
        let mut log: Vec<Message> = Vec::new();
        let mut events_processed = 0;
        let mut reserved: BTreeMap<NodeId, u64> = BTreeMap::new();

        for &dest in &config.destinations {
            let window = config
                .service_windows
                .get(&dest)
                .copied()
                .unwrap_or(AvailabilityWindow {
                    start: DEFAULT_SERVICE_START,
                    blocks: DEFAULT_SERVICE_BLOCKS,
                });
            let margins: BTreeMap<NodeId, u64> = self
                .scenario
                .graph
                .nodes()
                .map(|n| (n.id, self.strategies[&(n.id, dest)].margin))
                .collect();
            let dest_strategies: BTreeMap<NodeId, StrategyState> = self
                .scenario
                .graph
                .nodes()
                .map(|n| (n.id, self.strategies[&(n.id, dest)].clone()))
                .collect();
            let input = CascadeInput {
                graph: &self.scenario.graph,
                traffic: &self.scenario.traffic,
                destination: dest,
                window,
                dest_stock: self.scenario.graph.node(dest).map(|n| n.cap).unwrap_or(0),
                margins: &margins,
                strategies: &dest_strategies,
                reserved: &reserved,
                selection: config.selection_strategy,
                choice: config.choice_model,
                penalty_rate: config.penalty_rate,
                event_cap: self.event_cap(),
            };
            let outcome = run_cascade(&input).map_err(|e| match e {
                EngineError::EventCapExceeded { cap, .. } => {
                    EngineError::EventCapExceeded { stage, cap }
                }
                other => other,
            })?;
            events_processed += outcome.events_processed;
            log.extend(outcome.log);

            for (id, node) in outcome.nodes {
                if let Some(ledger) = &node.ledger {
                    *reserved.entry(id).or_default() += ledger.upstream.poss;
                }
                let params = self.scenario.graph.node(id).unwrap();
                let benefit = node
                    .ledger
                    .as_ref()
                    .map(|l| stage_benefit(l, params.utility))
                    .unwrap_or(0)
                    - node.penalty_paid as i64
                    + node.penalty_received as i64;
                let own = self.scenario.traffic.demand(id, dest);
                let satisfied = if own == 0 {
                    None
                } else if id == dest {
                    Some(true)
                } else {
                    Some(node.ledger.as_ref().is_some_and(|l| {
                        l.local_cap == own
                            && l.upstream.cost < params.utility
                            && l.upstream.delay <= params.max_delay
                    }))
                };
                entries.insert(
                    (id, dest),
                    NodeStageEntry {
                        node: id,
                        destination: dest,
                        margin: margins[&id],
                        cap_min: node.cap_min,
                        cap_max: node.cap_max,
                        rule: node.rule,
                        asked_provider_max: node.asked_provider_max,
                        ledger: node.ledger,
                        penalty_paid: node.penalty_paid,
                        penalty_received: node.penalty_received,
                        demand_count: node.demand_count,
                        benefit,
                        satisfied,
                    },
                );
            }
        }

        // Feed this stage back into the learning state.
        for ((node, dest), entry) in &entries {
            let strategy = self.strategies.get_mut(&(*node, *dest)).unwrap();
            strategy.last = Some(StageOutcome {
                bought: entry.poss(),
                sold: entry.sold_total(),
                benefit: entry.benefit,
                // A node that could not even demand is treated as having hit
                // the provider's maximum, so its next fixation is a reset.
                asked_provider_max: if entry.cap_min.is_some() {
                    entry.asked_provider_max
                } else {
                    true
                },
            });
            if entry.cap_min.is_some() {
                strategy.cap_min = entry.cap_min;
            }
        }

        let record = StageRecord {
            stage,
            entries,
            log,
            events_processed,
        };
        debug_assert!(
            check_stage_invariants(&self.scenario.graph, &record, false).is_empty(),
            "stage invariants violated: {:?}",
            check_stage_invariants(&self.scenario.graph, &record, false)
        );
        self.records.push(record);
        Ok(self.records.last().unwrap())
    }

    /// Iterate stages until stability or the stage budget runs out.
    pub fn run(mut self) -> Result<SimulationReport, EngineError> {
        let window = self.scenario.config.stability_window;
        for _ in 0..self.scenario.config.max_stages {
            self.run_stage()?;
            let n = self.records.len();
            if n >= window && detect_stable(&self.records[n - window..], window).is_some() {
                break;
            }
        }
        Ok(self.into_report())
    }

    pub fn into_report(self) -> SimulationReport {
        let stable_at = detect_stable(&self.records, self.scenario.config.stability_window);
        let last = self.records.last();
        let satisfaction = last
            .map(|r| satisfaction_rate(r, &self.scenario.traffic, &self.scenario.graph))
            .unwrap_or(1.0);
        let mut route_trees: BTreeMap<NodeId, Vec<(NodeId, NodeId)>> = BTreeMap::new();
        if let Some(record) = last {
            for ((node, dest), entry) in &record.entries {
                if node == dest {
                    continue;
                }
                if let Some(provider) = entry.provider() {
                    route_trees.entry(*dest).or_default().push((*node, provider));
                }
            }
        }
        SimulationReport {
            records: self.records,
            stable_at,
            satisfaction,
            route_trees,
        }
    }
}

/// Convenience: build an engine and run it to completion.
pub fn run(scenario: Scenario) -> Result<SimulationReport, EngineError> {
    Engine::new(scenario)?.run()
}

/// Check the cross-cutting stage invariants; returns human-readable
/// violations, empty when everything holds. With `expect_unit_margins`
/// also checks price telescoping (price == hop count).
pub fn check_stage_invariants(
    graph: &NetworkGraph,
    record: &StageRecord,
    expect_unit_margins: bool,
) -> Vec<String> {
    let mut out = Vec::new();

    // (a) ledger conservation.
    for ((node, dest), entry) in &record.entries {
        if let Some(ledger) = &entry.ledger {
            if !ledger.is_conserved() {
                out.push(format!("node {node} dest {dest}: ledger conservation violated"));
            }
        }
    }

    // (b) window nesting along provider chains.
    for ((node, dest), entry) in &record.entries {
        let (Some(ledger), Some(provider)) = (&entry.ledger, entry.provider()) else {
            continue;
        };
        if *node == *dest {
            continue;
        }
        if let Some(parent) = record
            .entries
            .get(&(provider, *dest))
            .and_then(|e| e.ledger.as_ref())
        {
            if !crate::contracts::check_window_nesting(
                &ledger.upstream.window,
                &parent.upstream.window,
            ) {
                out.push(format!("node {node} dest {dest}: window not nested in provider's"));
            }
        } else {
            out.push(format!("node {node} dest {dest}: provider {provider} has no ledger"));
        }
    }

    // (c) per-node capacity budget over all destinations.
    let mut bought: BTreeMap<NodeId, u64> = BTreeMap::new();
    for ((node, _), entry) in &record.entries {
        *bought.entry(*node).or_default() += entry.poss();
    }
    for (node, total) in bought {
        let cap = graph.node(node).map(|n| n.cap).unwrap_or(0);
        if total > cap {
            out.push(format!("node {node}: bought {total} exceeds cap {cap}"));
        }
    }

    // (d) money conservation: every payment has one payer and one payee.
    let mut revenue: i64 = 0;
    let mut cost: i64 = 0;
    for ((node, dest), entry) in &record.entries {
        if let Some(ledger) = &entry.ledger {
            revenue += ledger
                .sold
                .values()
                .map(|c| (c.window.blocks * c.poss * c.cost) as i64)
                .sum::<i64>();
            if node != dest {
                cost +=
                    (ledger.upstream.window.blocks * ledger.upstream.poss * ledger.upstream.cost)
                        as i64;
            }
        }
        revenue += entry.penalty_received as i64;
        cost += entry.penalty_paid as i64;
    }
    if revenue != cost {
        out.push(format!("money not conserved: revenue {revenue} != cost {cost}"));
    }

    // (e) price telescoping under unit margins.
    if expect_unit_margins {
        for ((node, dest), entry) in &record.entries {
            if node == dest {
                continue;
            }
            let Some(ledger) = &entry.ledger else { continue };
            let mut hops = 0u64;
            let mut cursor = *node;
            while let Some(provider) = record
                .entries
                .get(&(cursor, *dest))
                .and_then(|e| e.provider())
            {
                if provider == cursor {
                    break;
                }
                hops += 1;
                cursor = provider;
                if hops > record.entries.len() as u64 {
                    break;
                }
            }
            if cursor == *dest && ledger.upstream.cost != hops {
                out.push(format!(
                    "node {node} dest {dest}: price {} != hop count {hops}",
                    ledger.upstream.cost
                ));
            }
        }
    }

    // (f) provider relation is a forest rooted at each destination.
    for &dest in record.entries.keys().map(|(_, d)| d).collect::<std::collections::BTreeSet<_>>() {
        for (key, entry) in &record.entries {
            if key.1 != dest || entry.provider().is_none() {
                continue;
            }
            let mut cursor = key.0;
            let mut steps = 0;
            while let Some(provider) = record
                .entries
                .get(&(cursor, dest))
                .and_then(|e| e.provider())
            {
                if provider == cursor {
                    break; // destination self-contract
                }
                cursor = provider;
                steps += 1;
                if steps > record.entries.len() {
                    out.push(format!("node {} dest {dest}: provider chain has a cycle", key.0));
                    break;
                }
            }
        }
    }

    // (g) margins never below 1.
    for ((node, dest), entry) in &record.entries {
        if entry.margin < 1 {
            out.push(format!("node {node} dest {dest}: margin {} below 1", entry.margin));
        }
    }

    // Capacity-category inequality.
    for (id, m) in metrics(record, graph) {
        let cap = graph.node(id).map(|n| n.cap).unwrap_or(0);
        if m.cap_in + m.cap_out + m.cap_in_out > cap {
            out.push(format!("node {id}: capacity categories exceed cap {cap}"));
        }
    }

    out
}

/// CSV export, one row per (stage, node, destination). Column order is
/// fixed; `-` marks absent values.
pub fn csv_report(report: &SimulationReport) -> String {
    let mut out = String::from(
        "stage,node,dest,cap_min,cap_max,poss,local_cap,free_cap,margin,provider,benefit,satisfied\n",
    );
    for record in &report.records {
        for ((node, dest), entry) in &record.entries {
            let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_else(|| "-".into());
            let provider = entry
                .provider()
                .map(|p| p.to_string())
                .unwrap_or_else(|| "-".into());
            let satisfied = match entry.satisfied {
                Some(true) => "true",
                Some(false) => "false",
                None => "-",
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                record.stage,
                node,
                dest,
                opt(entry.cap_min),
                opt(entry.cap_max),
                entry.poss(),
                entry.local_cap(),
                entry.free_cap(),
                entry.margin,
                provider,
                entry.benefit,
                satisfied,
            ));
        }
    }
    out
}

/// Event log export: one section per stage, one line per message.
pub fn events_report(report: &SimulationReport) -> String {
    let mut out = String::new();
    for record in &report.records {
        out.push_str(&format!("# stage {}\n", record.stage));
        for message in &record.log {
            out.push_str(&format!("{message}\n"));
        }
    }
    out
}
