//! Network topology, traffic matrix and scenario configuration.
//!
//! Scenario files are line based. Recognized directives:
//!
//! ```text
//! node <id> cap=<int> delay=<int> utility=<int> max_delay=<int> [margin=<int>]
//! edge <id> <id>
//! service <id> [blocks=<int>] [start=<int>]
//! traffic <src> <dst> <int>
//! ```
//!
//! `#` starts a comment; blank lines are ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::contracts::AvailabilityWindow;
use crate::error::ScenarioError;

pub type NodeId = u32;

/// Per-node parameters of an autonomous system.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeParams {
    pub id: NodeId,
    /// Total capacity that can transit through the node.
    pub cap: u64,
    /// Per-hop send delay.
    pub delay: u64,
    /// Per-unit per-block value of carrying the node's own traffic.
    pub utility: u64,
    /// Maximum acceptable end-to-end delay for the node's own traffic.
    pub max_delay: u64,
    /// Starting margin per capacity unit, at least 1.
    pub initial_margin: u64,
}

/// Undirected simple graph of autonomous systems.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NetworkGraph {
    nodes: BTreeMap<NodeId, NodeParams>,
    edges: BTreeSet<(NodeId, NodeId)>,
    services: BTreeSet<NodeId>,
    adjacency: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

impl NetworkGraph {
    pub fn node(&self, id: NodeId) -> Option<&NodeParams> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeParams> {
        self.nodes.values()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.edges.iter().copied()
    }

    pub fn services(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.services.iter().copied()
    }

    pub fn is_service(&self, id: NodeId) -> bool {
        self.services.contains(&id)
    }

    pub fn neighbors(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.adjacency.get(&id).into_iter().flatten().copied()
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.edges.contains(&normalize_edge(a, b))
    }

    pub fn add_node(&mut self, params: NodeParams) -> Result<(), ScenarioError> {
        if self.nodes.contains_key(&params.id) {
            return Err(ScenarioError::DuplicateNode { line: 0, id: params.id });
        }
        self.adjacency.entry(params.id).or_default();
        self.nodes.insert(params.id, params);
        Ok(())
    }

    pub fn add_edge(&mut self, a: NodeId, b: NodeId) {
        self.edges.insert(normalize_edge(a, b));
        self.adjacency.entry(a).or_default().insert(b);
        self.adjacency.entry(b).or_default().insert(a);
    }

    pub fn add_service(&mut self, id: NodeId) {
        self.services.insert(id);
    }
}

fn normalize_edge(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Own-traffic demands, keyed by (source, destination).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TrafficMatrix {
    demands: BTreeMap<(NodeId, NodeId), u64>,
}

impl TrafficMatrix {
    pub fn set(&mut self, src: NodeId, dst: NodeId, amount: u64) {
        if amount == 0 {
            self.demands.remove(&(src, dst));
        } else {
            self.demands.insert((src, dst), amount);
        }
    }

    pub fn demand(&self, src: NodeId, dst: NodeId) -> u64 {
        self.demands.get(&(src, dst)).copied().unwrap_or(0)
    }

    /// Total own traffic originating at `src`, all destinations.
    pub fn total_from(&self, src: NodeId) -> u64 {
        self.demands
            .range((src, NodeId::MIN)..=(src, NodeId::MAX))
            .map(|(_, v)| v)
            .sum()
    }

    pub fn entries(&self) -> impl Iterator<Item = ((NodeId, NodeId), u64)> + '_ {
        self.demands.iter().map(|(&k, &v)| (k, v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MarginMode {
    #[default]
    Fixed,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectionStrategy {
    #[default]
    MinFill,
    BenefitRank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChoiceModel {
    #[default]
    Open,
    Blocked,
    Penalty,
}

/// Run-level configuration; file defaults overridable from the CLI.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioConfig {
    pub destinations: Vec<NodeId>,
    pub max_stages: usize,
    /// Consecutive identical-strategy stages required for stability.
    pub stability_window: usize,
    pub margin_mode: MarginMode,
    pub selection_strategy: SelectionStrategy,
    pub choice_model: ChoiceModel,
    pub penalty_rate: u64,
    /// Hard cap on events per stage; `None` means `10 * |V|^2`.
    pub event_cap: Option<u64>,
    /// Availability window each service announces for its route.
    pub service_windows: BTreeMap<NodeId, AvailabilityWindow>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            destinations: Vec::new(),
            max_stages: 100,
            stability_window: 2,
            margin_mode: MarginMode::default(),
            selection_strategy: SelectionStrategy::default(),
            choice_model: ChoiceModel::default(),
            penalty_rate: 0,
            event_cap: None,
            service_windows: BTreeMap::new(),
        }
    }
}

pub const DEFAULT_SERVICE_BLOCKS: u64 = 1;
pub const DEFAULT_SERVICE_START: u64 = 0;

/// A fully parsed scenario.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Scenario {
    pub graph: NetworkGraph,
    pub traffic: TrafficMatrix,
    pub config: ScenarioConfig,
}

/// Parse a scenario file. Rejects unknown directives and references to
/// undeclared nodes; errors report the offending line number.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut graph = NetworkGraph::default();
    let mut traffic = TrafficMatrix::default();
    let mut config = ScenarioConfig::default();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        match tokens[0] {
            "node" => {
                let id = parse_id(tokens.get(1), line_no)?;
                let mut cap = None;
                let mut delay = None;
                let mut utility = None;
                let mut max_delay = None;
                let mut margin = 1u64;
                for tok in &tokens[2..] {
                    let (key, value) = parse_kv(tok, line_no)?;
                    match key {
                        "cap" => cap = Some(value),
                        "delay" => delay = Some(value),
                        "utility" => utility = Some(value),
                        "max_delay" => max_delay = Some(value),
                        "margin" => margin = value,
                        other => {
                            return Err(ScenarioError::Syntax {
                                line: line_no,
                                message: format!("unknown node attribute `{other}`"),
                            })
                        }
                    }
                }
                let params = NodeParams {
                    id,
                    cap: require(cap, "cap", line_no)?,
                    delay: require(delay, "delay", line_no)?,
                    utility: require(utility, "utility", line_no)?,
                    max_delay: require(max_delay, "max_delay", line_no)?,
                    initial_margin: margin,
                };
                if margin < 1 {
                    return Err(ScenarioError::Syntax {
                        line: line_no,
                        message: "margin must be at least 1".into(),
                    });
                }
                graph.add_node(params).map_err(|e| match e {
                    ScenarioError::DuplicateNode { id, .. } => {
                        ScenarioError::DuplicateNode { line: line_no, id }
                    }
                    other => other,
                })?;
            }
            "edge" => {
                let a = parse_id(tokens.get(1), line_no)?;
                let b = parse_id(tokens.get(2), line_no)?;
                check_declared(&graph, a, line_no)?;
                check_declared(&graph, b, line_no)?;
                if a == b {
                    return Err(ScenarioError::Syntax {
                        line: line_no,
                        message: format!("self-loop edge on node {a}"),
                    });
                }
                if tokens.len() > 3 {
                    return Err(trailing(line_no));
                }
                graph.add_edge(a, b);
            }
            "service" => {
                let id = parse_id(tokens.get(1), line_no)?;
                check_declared(&graph, id, line_no)?;
                let mut blocks = DEFAULT_SERVICE_BLOCKS;
                let mut start = DEFAULT_SERVICE_START;
                for tok in &tokens[2..] {
                    let (key, value) = parse_kv(tok, line_no)?;
                    match key {
                        "blocks" => blocks = value,
                        "start" => start = value,
                        other => {
                            return Err(ScenarioError::Syntax {
                                line: line_no,
                                message: format!("unknown service attribute `{other}`"),
                            })
                        }
                    }
                }
                graph.add_service(id);
                if !config.destinations.contains(&id) {
                    config.destinations.push(id);
                }
                config
                    .service_windows
                    .insert(id, AvailabilityWindow { start, blocks });
            }
            "traffic" => {
                let src = parse_id(tokens.get(1), line_no)?;
                let dst = parse_id(tokens.get(2), line_no)?;
                let amount = parse_int(tokens.get(3), line_no)?;
                check_declared(&graph, src, line_no)?;
                check_declared(&graph, dst, line_no)?;
                if tokens.len() > 4 {
                    return Err(trailing(line_no));
                }
                traffic.set(src, dst, amount);
            }
            other => {
                return Err(ScenarioError::Syntax {
                    line: line_no,
                    message: format!("unknown directive `{other}`"),
                })
            }
        }
    }

    Ok(Scenario { graph, traffic, config })
}

/// Render a scenario back to the file format; `parse_scenario` inverts this.
pub fn render_scenario(scenario: &Scenario) -> String {
    let mut out = String::new();
    for n in scenario.graph.nodes() {
        let _ = writeln!(
            out,
            "node {} cap={} delay={} utility={} max_delay={} margin={}",
            n.id, n.cap, n.delay, n.utility, n.max_delay, n.initial_margin
        );
    }
    for (a, b) in scenario.graph.edges() {
        let _ = writeln!(out, "edge {a} {b}");
    }
    for id in &scenario.config.destinations {
        let window = scenario
            .config
            .service_windows
            .get(id)
            .copied()
            .unwrap_or(AvailabilityWindow {
                start: DEFAULT_SERVICE_START,
                blocks: DEFAULT_SERVICE_BLOCKS,
            });
        let _ = writeln!(out, "service {id} blocks={} start={}", window.blocks, window.start);
    }
    for ((src, dst), amount) in scenario.traffic.entries() {
        let _ = writeln!(out, "traffic {src} {dst} {amount}");
    }
    out
}

/// A single rule violation found by `validate_topology`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub subject: String,
    pub rule: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.subject, self.rule)
    }
}

/// Check structural invariants. Violations are data, not failures.
pub fn validate_topology(graph: &NetworkGraph, traffic: &TrafficMatrix) -> Vec<Violation> {
    let mut out = Vec::new();
    for n in graph.nodes() {
        if n.initial_margin < 1 {
            out.push(Violation {
                subject: format!("node {}", n.id),
                rule: "margin below 1".into(),
            });
        }
        let own = traffic.total_from(n.id);
        if own > n.cap {
            out.push(Violation {
                subject: format!("node {}", n.id),
                rule: "own traffic exceeds cap".into(),
            });
        }
    }
    for (a, b) in graph.edges() {
        if a == b {
            out.push(Violation {
                subject: format!("edge ({a},{b})"),
                rule: "self-loop".into(),
            });
        }
        for end in [a, b] {
            if graph.node(end).is_none() {
                out.push(Violation {
                    subject: format!("edge ({a},{b})"),
                    rule: format!("endpoint {end} not declared"),
                });
            }
        }
    }
    for id in graph.services() {
        if graph.node(id).is_none() {
            out.push(Violation {
                subject: format!("service {id}"),
                rule: "service node not declared".into(),
            });
        }
    }
    for ((src, dst), _) in traffic.entries() {
        for end in [src, dst] {
            if graph.node(end).is_none() {
                out.push(Violation {
                    subject: format!("traffic {src}->{dst}"),
                    rule: format!("endpoint {end} not declared"),
                });
            }
        }
    }
    out
}

fn parse_id(token: Option<&&str>, line: usize) -> Result<NodeId, ScenarioError> {
    let tok = token.ok_or_else(|| ScenarioError::Syntax {
        line,
        message: "missing node id".into(),
    })?;
    tok.parse().map_err(|_| ScenarioError::Syntax {
        line,
        message: format!("invalid node id `{tok}`"),
    })
}

fn parse_int(token: Option<&&str>, line: usize) -> Result<u64, ScenarioError> {
    let tok = token.ok_or_else(|| ScenarioError::Syntax {
        line,
        message: "missing integer value".into(),
    })?;
    tok.parse().map_err(|_| ScenarioError::Syntax {
        line,
        message: format!("invalid integer `{tok}`"),
    })
}

fn parse_kv(token: &str, line: usize) -> Result<(&str, u64), ScenarioError> {
    let (key, value) = token.split_once('=').ok_or_else(|| ScenarioError::Syntax {
        line,
        message: format!("expected key=value, got `{token}`"),
    })?;
    let value = value.parse().map_err(|_| ScenarioError::Syntax {
        line,
        message: format!("invalid integer in `{token}`"),
    })?;
    Ok((key, value))
}

fn require(value: Option<u64>, name: &str, line: usize) -> Result<u64, ScenarioError> {
    value.ok_or_else(|| ScenarioError::Syntax {
        line,
        message: format!("missing required attribute `{name}`"),
    })
}

fn check_declared(graph: &NetworkGraph, id: NodeId, line: usize) -> Result<(), ScenarioError> {
    if graph.node(id).is_none() {
        return Err(ScenarioError::UndeclaredNode { line, id });
    }
    Ok(())
}

fn trailing(line: usize) -> ScenarioError {
    ScenarioError::Syntax {
        line,
        message: "trailing tokens".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_node_service() {
        let s = parse_scenario("node 6 cap=30 delay=1 utility=5 max_delay=10\nservice 6").unwrap();
        assert_eq!(s.graph.node_count(), 1);
        let n = s.graph.node(6).unwrap();
        assert_eq!(n.utility, 5);
        assert_eq!(n.max_delay, 10);
        assert!(s.graph.is_service(6));
        assert_eq!(s.config.destinations, vec![6]);
    }

    #[test]
    fn one_node_no_edges_is_valid() {
        let s = parse_scenario("node 0 cap=1 delay=1 utility=1 max_delay=1").unwrap();
        assert_eq!(s.graph.edges().count(), 0);
        assert!(validate_topology(&s.graph, &s.traffic).is_empty());
    }

    #[test]
    fn traffic_rows() {
        let mut text = String::from("node 6 cap=60 delay=1 utility=5 max_delay=10\n");
        for v in 0..6 {
            text.push_str(&format!("node {v} cap=10 delay=1 utility=5 max_delay=10\n"));
        }
        for v in 0..6 {
            text.push_str(&format!("traffic {v} 6 3\n"));
        }
        let s = parse_scenario(&text).unwrap();
        for v in 0..6 {
            assert_eq!(s.traffic.demand(v, 6), 3);
        }
        assert_eq!(s.traffic.demand(6, 6), 0);
    }

    #[test]
    fn rejects_unknown_directive() {
        let err = parse_scenario("frobnicate 1 2").unwrap_err();
        assert!(matches!(err, ScenarioError::Syntax { line: 1, .. }));
    }

    #[test]
    fn rejects_undeclared_edge_endpoint() {
        let err =
            parse_scenario("node 0 cap=1 delay=1 utility=1 max_delay=1\nedge 0 7").unwrap_err();
        assert!(matches!(err, ScenarioError::UndeclaredNode { line: 2, id: 7 }));
    }

    #[test]
    fn rejects_duplicate_node() {
        let text = "node 0 cap=1 delay=1 utility=1 max_delay=1\n\
                    node 0 cap=2 delay=1 utility=1 max_delay=1";
        let err = parse_scenario(text).unwrap_err();
        assert!(matches!(err, ScenarioError::DuplicateNode { line: 2, id: 0 }));
    }

    #[test]
    fn rejects_self_loop_edge() {
        let err =
            parse_scenario("node 4 cap=1 delay=1 utility=1 max_delay=1\nedge 4 4").unwrap_err();
        assert!(matches!(err, ScenarioError::Syntax { line: 2, .. }));
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let s = parse_scenario("# header\n\nnode 1 cap=2 delay=1 utility=1 max_delay=1 # tail\n")
            .unwrap();
        assert_eq!(s.graph.node_count(), 1);
    }

    #[test]
    fn violation_own_traffic_exceeds_cap() {
        let text = "node 0 cap=2 delay=1 utility=5 max_delay=9\n\
                    node 1 cap=9 delay=1 utility=5 max_delay=9\n\
                    traffic 0 1 3";
        let s = parse_scenario(text).unwrap();
        let violations = validate_topology(&s.graph, &s.traffic);
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].rule, "own traffic exceeds cap");
    }

    #[test]
    fn seven_node_scenario_validates_clean() {
        let s = parse_scenario(crate::scenarios::SEVEN_NODE).unwrap();
        assert_eq!(s.graph.node_count(), 7);
        assert!(validate_topology(&s.graph, &s.traffic).is_empty());
    }

    #[test]
    fn render_parse_round_trip() {
        let s = parse_scenario(crate::scenarios::SEVEN_NODE).unwrap();
        let rendered = render_scenario(&s);
        let reparsed = parse_scenario(&rendered).unwrap();
        assert_eq!(s, reparsed);
    }

    #[test]
    fn service_window_attributes() {
        let s = parse_scenario("node 2 cap=5 delay=1 utility=5 max_delay=9\nservice 2 blocks=4 start=7")
            .unwrap();
        let w = s.config.service_windows.get(&2).unwrap();
        assert_eq!((w.blocks, w.start), (4, 7));
    }
}
