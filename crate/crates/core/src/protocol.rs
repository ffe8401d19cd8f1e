//! The four-step offer / demand / selection / choice exchange and the
//! reverse-cascade scheduling of those exchanges within one stage.
//!
//! The cascade is a single-threaded discrete-event loop. Every message sent
//! by node `v` at time `t` is delivered at `t + max(d(v), 1)`. Simultaneous
//! events are totally ordered by (time, kind rank, sender, receiver), with
//! kind ranks Offer < Demand < Select < Confirm, so each seller answers all
//! demands of one round in a single selection batch.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use crate::contracts::{
    check_window_nesting, free_capacity, AvailabilityWindow, CapacityLedger, Contract,
};
use crate::error::EngineError;
use crate::policies::{
    allocate_by_benefit, allocate_min_fill, fix_cap_max, fix_cap_min, CapMinRule, DemandItem,
    StrategyState,
};
use crate::topology::{ChoiceModel, NetworkGraph, NodeId, SelectionStrategy, TrafficMatrix};

/// A provider's announcement of resaleable capacity on a route.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteOffer {
    pub seller: NodeId,
    pub destination: NodeId,
    pub free_cap: u64,
    pub delay: u64,
    pub price: u64,
    pub window: AvailabilityWindow,
}

/// A customer's request for capacity inside an interval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemandQuery {
    pub buyer: NodeId,
    pub destination: NodeId,
    pub cap_min: u64,
    pub cap_max: u64,
    pub window: AvailabilityWindow,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MessageKind {
    Offer(RouteOffer),
    Demand(DemandQuery),
    SelectOk { poss: u64, window: AvailabilityWindow },
    SelectNo,
    ConfirmOk { poss: u64 },
    ConfirmNo,
}

impl MessageKind {
    pub fn rank(&self) -> u8 {
        match self {
            MessageKind::Offer(_) => 0,
            MessageKind::Demand(_) => 2,
            MessageKind::SelectOk { .. } | MessageKind::SelectNo => 4,
            MessageKind::ConfirmOk { .. } | MessageKind::ConfirmNo => 5,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MessageKind::Offer(_) => "offer",
            MessageKind::Demand(_) => "demand",
            MessageKind::SelectOk { .. } => "select_ok",
            MessageKind::SelectNo => "select_no",
            MessageKind::ConfirmOk { .. } => "confirm_ok",
            MessageKind::ConfirmNo => "confirm_no",
        }
    }
}

/// One logged protocol message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub time: u64,
    pub sender: NodeId,
    pub receiver: NodeId,
    pub destination: NodeId,
    pub kind: MessageKind,
}

impl std::fmt::Display for Message {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "t={} {} {}->{} dest={}",
            self.time,
            self.kind.name(),
            self.sender,
            self.receiver,
            self.destination
        )?;
        match &self.kind {
            MessageKind::Offer(o) => write!(
                f,
                " free={} delay={} price={} blocks={} start={}",
                o.free_cap, o.delay, o.price, o.window.blocks, o.window.start
            ),
            MessageKind::Demand(d) => write!(
                f,
                " min={} max={} blocks={} start={}",
                d.cap_min, d.cap_max, d.window.blocks, d.window.start
            ),
            MessageKind::SelectOk { poss, window } => {
                write!(f, " poss={poss} blocks={} start={}", window.blocks, window.start)
            }
            MessageKind::ConfirmOk { poss } => write!(f, " poss={poss}"),
            MessageKind::SelectNo | MessageKind::ConfirmNo => Ok(()),
        }
    }
}

/// Preference order over offers: cheapest first, then lowest delay, then
/// most capacity, then lowest node number.
pub fn offer_sort_key(offer: &RouteOffer) -> (u64, u64, Reverse<u64>, NodeId) {
    (offer.price, offer.delay, Reverse(offer.free_cap), offer.seller)
}

/// True iff the offer is strictly more interesting than the held contract,
/// compared on (price, delay).
pub fn offer_beats_contract(offer: &RouteOffer, contract: &Contract) -> bool {
    (offer.price, offer.delay) < (contract.cost, contract.delay)
}

/// The offer a node derives from its ledger: upstream window and stock,
/// one hop of delay and one margin on top.
pub fn build_offer(ledger: &CapacityLedger, margin: u64, hop_delay: u64) -> Option<RouteOffer> {
    let free = free_capacity(ledger);
    if free == 0 {
        return None;
    }
    Some(RouteOffer {
        seller: ledger.upstream.customer,
        destination: ledger.upstream.destination,
        free_cap: free,
        delay: ledger.upstream.delay + hop_delay,
        price: ledger.upstream.cost + margin,
        window: ledger.upstream.window,
    })
}

/// A demand built against the preferred offer, plus the bookkeeping the
/// learning policies need next stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuiltDemand {
    pub seller: NodeId,
    pub query: DemandQuery,
    pub rule: CapMinRule,
    pub asked_provider_max: bool,
}

/// Choose one seller among the offers and quote the demand interval.
/// Returns `None` when nothing can be bought (no offer, or cap_max = 0).
pub fn build_demand(
    buyer: NodeId,
    offers: &[&RouteOffer],
    strategy: &StrategyState,
    cap_budget: u64,
    own_demand: u64,
    utility: u64,
) -> Option<BuiltDemand> {
    let offer = offers.iter().min_by_key(|o| offer_sort_key(o))?;
    let cap_max = fix_cap_max(cap_budget, offer.free_cap);
    if cap_max == 0 {
        return None;
    }
    let (cap_min, rule) = fix_cap_min(strategy, own_demand, offer.price, utility);
    let cap_min = cap_min.min(cap_max);
    Some(BuiltDemand {
        seller: offer.seller,
        query: DemandQuery {
            buyer,
            destination: offer.destination,
            cap_min,
            cap_max,
            // Requested window equals the chosen offer's window.
            window: offer.window,
        },
        rule,
        asked_provider_max: cap_max == offer.free_cap,
    })
}

/// Answer one round of demands: grants inside each [cap_min, cap_max],
/// total within free capacity, windows nested in the provider's window.
/// Returns per-demand grants aligned with the input (`None` = SelectNo).
pub fn select_customers(
    demands: &[DemandQuery],
    parent: &AvailabilityWindow,
    free: u64,
    margin: u64,
    strategy: SelectionStrategy,
) -> Vec<Option<u64>> {
    let mut grants = vec![None; demands.len()];
    let eligible: Vec<usize> = (0..demands.len())
        .filter(|&i| check_window_nesting(&demands[i].window, parent))
        .collect();
    let items: Vec<DemandItem> = eligible
        .iter()
        .map(|&i| DemandItem {
            num: demands[i].buyer,
            cap_min: demands[i].cap_min,
            cap_max: demands[i].cap_max,
            window: demands[i].window,
        })
        .collect();
    let inner = match strategy {
        SelectionStrategy::MinFill => allocate_min_fill(free, &items),
        SelectionStrategy::BenefitRank => allocate_by_benefit(free, margin, &items),
    };
    for (slot, grant) in eligible.into_iter().zip(inner) {
        grants[slot] = grant;
    }
    grants
}

/// The customer's answer to a positive selection: accept a first contract
/// unconditionally; under the open and penalty models also accept any
/// strictly more interesting route. Under the blocked model a contracted
/// node never demanded again, so a second selection cannot occur.
pub fn apply_choice(current: Option<&Contract>, offer: &RouteOffer, model: ChoiceModel) -> bool {
    match current {
        None => true,
        Some(contract) => match model {
            ChoiceModel::Open | ChoiceModel::Penalty => offer_beats_contract(offer, contract),
            ChoiceModel::Blocked => {
                debug_assert!(false, "blocked node with a contract never demands");
                false
            }
        },
    }
}

/// Everything one stage's cascade needs, with strategies already bound.
pub struct CascadeInput<'a> {
    pub graph: &'a NetworkGraph,
    pub traffic: &'a TrafficMatrix,
    pub destination: NodeId,
    pub window: AvailabilityWindow,
    /// The destination's declared stock for its own service.
    pub dest_stock: u64,
    /// Stage-bound margin per node for this destination.
    pub margins: &'a BTreeMap<NodeId, u64>,
    /// Learning state per node for this destination.
    pub strategies: &'a BTreeMap<NodeId, StrategyState>,
    /// Capacity already reserved per node by other destinations this stage.
    pub reserved: &'a BTreeMap<NodeId, u64>,
    pub selection: SelectionStrategy,
    pub choice: ChoiceModel,
    pub penalty_rate: u64,
    pub event_cap: u64,
}

/// Per-node result of one stage's cascade.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NodeOutcome {
    pub ledger: Option<CapacityLedger>,
    pub cap_min: Option<u64>,
    pub cap_max: Option<u64>,
    pub rule: CapMinRule,
    pub asked_provider_max: bool,
    pub penalty_paid: u64,
    pub penalty_received: u64,
    pub demand_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CascadeOutcome {
    pub destination: NodeId,
    pub nodes: BTreeMap<NodeId, NodeOutcome>,
    pub log: Vec<Message>,
    pub events_processed: u64,
}

#[derive(Debug, Clone)]
enum EventPayload {
    Deliver(MessageKind),
    DecideDemand,
    SelectBatch,
}

#[derive(Debug, Clone)]
struct Event {
    time: u64,
    rank: u8,
    sender: NodeId,
    receiver: NodeId,
    seq: u64,
    payload: EventPayload,
}

impl Event {
    fn key(&self) -> (u64, u8, NodeId, NodeId, u64) {
        (self.time, self.rank, self.sender, self.receiver, self.seq)
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

const RANK_OFFER: u8 = 0;
const RANK_DECIDE: u8 = 1;
const RANK_BATCH: u8 = 3;

#[derive(Debug, Clone)]
struct PendingDemand {
    cap_min: u64,
    cap_max: u64,
    rule: CapMinRule,
    asked_provider_max: bool,
}

#[derive(Debug, Default)]
struct NodeState {
    offers: BTreeMap<NodeId, RouteOffer>,
    rejected: BTreeSet<NodeId>,
    pending: Option<PendingDemand>,
    contract: Option<Contract>,
    local_cap: u64,
    sold: BTreeMap<NodeId, Contract>,
    cap_min: Option<u64>,
    cap_max: Option<u64>,
    rule: CapMinRule,
    asked_provider_max: bool,
    last_offer_sent: BTreeMap<NodeId, (u64, u64, u64)>,
    buffered: Vec<DemandQuery>,
    scheduled_decide: Option<u64>,
    scheduled_batch: Option<u64>,
    penalty_paid: u64,
    penalty_received: u64,
    demand_count: u64,
}

struct Cascade<'a> {
    input: &'a CascadeInput<'a>,
    states: BTreeMap<NodeId, NodeState>,
    queue: BinaryHeap<Reverse<Event>>,
    log: Vec<Message>,
    seq: u64,
    processed: u64,
}

/// Run one stage's negotiation wave for a single destination.
pub fn run_cascade(input: &CascadeInput) -> Result<CascadeOutcome, EngineError> {
    let mut cascade = Cascade {
        input,
        states: input
            .graph
            .nodes()
            .map(|n| (n.id, NodeState::default()))
            .collect(),
        queue: BinaryHeap::new(),
        log: Vec::new(),
        seq: 0,
        processed: 0,
    };
    cascade.init();
    cascade.run()?;
    Ok(cascade.finish())
}

impl<'a> Cascade<'a> {
    fn latency(&self, node: NodeId) -> u64 {
        self.input
            .graph
            .node(node)
            .map(|n| n.delay.max(1))
            .unwrap_or(1)
    }

    fn margin(&self, node: NodeId) -> u64 {
        self.input.margins.get(&node).copied().unwrap_or(1)
    }

    fn free_cap(&self, node: NodeId) -> u64 {
        let state = &self.states[&node];
        match &state.contract {
            Some(contract) => contract
                .poss
                .saturating_sub(state.local_cap + state.sold.values().map(|c| c.poss).sum::<u64>()),
            None => 0,
        }
    }

    fn push(&mut self, event: Event) {
        self.queue.push(Reverse(event));
    }

    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    fn init(&mut self) {
        let dest = self.input.destination;
        let contract = Contract::self_rooted(dest, self.input.dest_stock, self.input.window);
        self.states.get_mut(&dest).unwrap().contract = Some(contract);
        let t = self.latency(dest);
        self.emit_offers(dest, t);
    }

    fn emit_offers(&mut self, seller: NodeId, at: u64) {
        let state = &self.states[&seller];
        let contract = match &state.contract {
            Some(c) => c,
            None => return,
        };
        let provider = contract.provider;
        let is_dest = seller == self.input.destination;
        let free = self.free_cap(seller);
        if free == 0 {
            return;
        }
        let offer = RouteOffer {
            seller,
            destination: self.input.destination,
            free_cap: free,
            delay: contract.delay + self.input.graph.node(seller).map(|n| n.delay).unwrap_or(0),
            price: contract.cost + self.margin(seller),
            window: contract.window,
        };
        let neighbors: Vec<NodeId> = self
            .input
            .graph
            .neighbors(seller)
            .filter(|&w| is_dest || w != provider)
            .collect();
        for w in neighbors {
            let content = (offer.free_cap, offer.price, offer.delay);
            let state = self.states.get_mut(&seller).unwrap();
            if state.last_offer_sent.get(&w) == Some(&content) {
                continue;
            }
            state.last_offer_sent.insert(w, content);
            let seq = self.next_seq();
            self.push(Event {
                time: at,
                rank: RANK_OFFER,
                sender: seller,
                receiver: w,
                seq,
                payload: EventPayload::Deliver(MessageKind::Offer(offer.clone())),
            });
        }
    }

    fn schedule_decide(&mut self, node: NodeId, at: u64) {
        let state = self.states.get_mut(&node).unwrap();
        if state.scheduled_decide == Some(at) {
            return;
        }
        state.scheduled_decide = Some(at);
        let seq = self.next_seq();
        self.push(Event {
            time: at,
            rank: RANK_DECIDE,
            sender: node,
            receiver: node,
            seq,
            payload: EventPayload::DecideDemand,
        });
    }

    fn schedule_batch(&mut self, node: NodeId, at: u64) {
        let state = self.states.get_mut(&node).unwrap();
        if state.scheduled_batch == Some(at) {
            return;
        }
        state.scheduled_batch = Some(at);
        let seq = self.next_seq();
        self.push(Event {
            time: at,
            rank: RANK_BATCH,
            sender: node,
            receiver: node,
            seq,
            payload: EventPayload::SelectBatch,
        });
    }

    fn send(&mut self, time: u64, sender: NodeId, receiver: NodeId, kind: MessageKind) {
        let seq = self.next_seq();
        self.push(Event {
            time,
            rank: kind.rank(),
            sender,
            receiver,
            seq,
            payload: EventPayload::Deliver(kind),
        });
    }

    fn run(&mut self) -> Result<(), EngineError> {
        while let Some(Reverse(event)) = self.queue.pop() {
            self.processed += 1;
            if self.processed > self.input.event_cap {
                return Err(EngineError::EventCapExceeded {
                    stage: 0,
                    cap: self.input.event_cap,
                });
            }
            match event.payload.clone() {
                EventPayload::Deliver(kind) => {
                    self.log.push(Message {
                        time: event.time,
                        sender: event.sender,
                        receiver: event.receiver,
                        destination: self.input.destination,
                        kind: kind.clone(),
                    });
                    self.deliver(event.time, event.sender, event.receiver, kind);
                }
                EventPayload::DecideDemand => self.decide_demand(event.time, event.receiver),
                EventPayload::SelectBatch => self.select_batch(event.time, event.receiver),
            }
        }
        Ok(())
    }

    fn deliver(&mut self, time: u64, sender: NodeId, receiver: NodeId, kind: MessageKind) {
        match kind {
            MessageKind::Offer(offer) => {
                let state = self.states.get_mut(&receiver).unwrap();
                state.offers.insert(sender, offer);
                state.rejected.remove(&sender);
                self.schedule_decide(receiver, time);
            }
            MessageKind::Demand(query) => {
                self.states.get_mut(&receiver).unwrap().buffered.push(query);
                self.schedule_batch(receiver, time);
            }
            MessageKind::SelectOk { poss, window } => {
                self.on_select_ok(time, sender, receiver, poss, window);
            }
            MessageKind::SelectNo => {
                let state = self.states.get_mut(&receiver).unwrap();
                state.pending = None;
                state.rejected.insert(sender);
                self.schedule_decide(receiver, time);
            }
            MessageKind::ConfirmOk { poss } => {
                self.on_confirm_ok(time, sender, receiver, poss);
            }
            MessageKind::ConfirmNo => {}
        }
    }

    fn decide_demand(&mut self, time: u64, node: NodeId) {
        if node == self.input.destination {
            return;
        }
        let state = &self.states[&node];
        if state.pending.is_some() {
            return;
        }
        // A node that has resold capacity keeps its route: switching would
        // strand the capacity it sold downstream.
        if !state.sold.is_empty() {
            return;
        }
        if state.contract.is_some() && self.input.choice == ChoiceModel::Blocked {
            return;
        }
        let current_provider = state.contract.as_ref().map(|c| c.provider);
        let candidates: Vec<&RouteOffer> = state
            .offers
            .values()
            .filter(|o| Some(o.seller) != current_provider)
            .filter(|o| !state.rejected.contains(&o.seller))
            .filter(|o| match &state.contract {
                Some(contract) => offer_beats_contract(o, contract),
                None => true,
            })
            .collect();
        let params = self.input.graph.node(node).unwrap();
        let reserved = self.input.reserved.get(&node).copied().unwrap_or(0);
        let cap_budget = params.cap.saturating_sub(reserved);
        let own = self.input.traffic.demand(node, self.input.destination);
        let strategy = self
            .input
            .strategies
            .get(&node)
            .cloned()
            .unwrap_or_else(|| StrategyState::new(params.initial_margin));
        let built = build_demand(node, &candidates, &strategy, cap_budget, own, params.utility);
        let built = match built {
            Some(b) => b,
            None => return,
        };
        let lat = self.latency(node);
        let state = self.states.get_mut(&node).unwrap();
        state.pending = Some(PendingDemand {
            cap_min: built.query.cap_min,
            cap_max: built.query.cap_max,
            rule: built.rule,
            asked_provider_max: built.asked_provider_max,
        });
        state.cap_min = Some(built.query.cap_min);
        state.cap_max = Some(built.query.cap_max);
        state.rule = built.rule;
        state.asked_provider_max = built.asked_provider_max;
        state.demand_count += 1;
        self.send(
            time + lat,
            node,
            built.seller,
            MessageKind::Demand(built.query),
        );
    }

    fn select_batch(&mut self, time: u64, node: NodeId) {
        let state = self.states.get_mut(&node).unwrap();
        let demands = std::mem::take(&mut state.buffered);
        if demands.is_empty() {
            return;
        }
        let parent = match &state.contract {
            Some(c) => c.window,
            // A seller that lost its route meanwhile refuses everything.
            None => {
                let lat = self.latency(node);
                for d in demands {
                    self.send(time + lat, node, d.buyer, MessageKind::SelectNo);
                }
                return;
            }
        };
        let free = self.free_cap(node);
        let margin = self.margin(node);
        let grants = select_customers(&demands, &parent, free, margin, self.input.selection);
        let lat = self.latency(node);
        for (demand, grant) in demands.into_iter().zip(grants) {
            let kind = match grant {
                Some(poss) => MessageKind::SelectOk {
                    poss,
                    window: demand.window,
                },
                None => MessageKind::SelectNo,
            };
            self.send(time + lat, node, demand.buyer, kind);
        }
    }

    fn on_select_ok(
        &mut self,
        time: u64,
        seller: NodeId,
        buyer: NodeId,
        poss: u64,
        _window: AvailabilityWindow,
    ) {
        let state = &self.states[&buyer];
        let offer = match state.offers.get(&seller) {
            Some(o) => o.clone(),
            None => return,
        };
        let accept = apply_choice(state.contract.as_ref(), &offer, self.input.choice);
        // Stale selection: the seller's stock shrank since the grant.
        let stale = self.free_cap(seller) < poss;
        let lat = self.latency(buyer);
        if accept && !stale {
            self.send(time + lat, buyer, seller, MessageKind::ConfirmOk { poss });
        } else {
            let state = self.states.get_mut(&buyer).unwrap();
            state.pending = None;
            state.rejected.insert(seller);
            self.send(time + lat, buyer, seller, MessageKind::ConfirmNo);
            self.schedule_decide(buyer, time);
        }
    }

    fn on_confirm_ok(&mut self, time: u64, buyer: NodeId, seller: NodeId, poss: u64) {
        // Re-check at establishment: another confirmation may have consumed
        // the stock between selection and now.
        if self.free_cap(seller) < poss || self.states[&seller].contract.is_none() {
            let state = self.states.get_mut(&buyer).unwrap();
            state.pending = None;
            state.rejected.insert(seller);
            self.schedule_decide(buyer, time);
            return;
        }
        // Release a previous route before taking the new one.
        if let Some(old) = self.states.get_mut(&buyer).unwrap().contract.take() {
            let old_provider = old.provider;
            self.states.get_mut(&old_provider).unwrap().sold.remove(&buyer);
            if self.input.choice == ChoiceModel::Penalty {
                let penalty = self.input.penalty_rate * old.poss * old.window.blocks;
                self.states.get_mut(&buyer).unwrap().penalty_paid += penalty;
                self.states.get_mut(&old_provider).unwrap().penalty_received += penalty;
            }
            let at = time + self.latency(old_provider);
            self.emit_offers(old_provider, at);
        }

        let upstream = self.states[&seller].contract.clone().unwrap();
        let seller_params = self.input.graph.node(seller).unwrap();
        let contract = Contract {
            customer: buyer,
            provider: seller,
            destination: self.input.destination,
            poss,
            delay: upstream.delay + seller_params.delay,
            cost: upstream.cost + self.margin(seller),
            window: upstream.window,
        };
        self.states
            .get_mut(&seller)
            .unwrap()
            .sold
            .insert(buyer, contract.clone());

        let buyer_params = self.input.graph.node(buyer).unwrap();
        let own = self.input.traffic.demand(buyer, self.input.destination);
        let local = if contract.delay <= buyer_params.max_delay {
            crate::contracts::derive_local_capacity(own, contract.cost, buyer_params.utility)
                .min(poss)
        } else {
            0
        };
        let state = self.states.get_mut(&buyer).unwrap();
        state.contract = Some(contract);
        state.local_cap = local;
        if let Some(pending) = state.pending.take() {
            state.cap_min = Some(pending.cap_min);
            state.cap_max = Some(pending.cap_max);
            state.rule = pending.rule;
            state.asked_provider_max = pending.asked_provider_max;
        }
        let at = time + self.latency(buyer);
        self.emit_offers(buyer, at);
    }

    fn finish(self) -> CascadeOutcome {
        let dest = self.input.destination;
        let mut nodes = BTreeMap::new();
        for (id, state) in self.states {
            let ledger = state.contract.map(|upstream| CapacityLedger {
                upstream,
                local_cap: state.local_cap,
                sold: state.sold,
            });
            nodes.insert(
                id,
                NodeOutcome {
                    ledger,
                    cap_min: state.cap_min,
                    cap_max: state.cap_max,
                    rule: state.rule,
                    asked_provider_max: state.asked_provider_max,
                    penalty_paid: state.penalty_paid,
                    penalty_received: state.penalty_received,
                    demand_count: state.demand_count,
                },
            );
        }
        CascadeOutcome {
            destination: dest,
            nodes,
            log: self.log,
            events_processed: self.processed,
        }
    }
}
