//! Bilateral contracts and per-node capacity ledgers.

use std::collections::BTreeMap;

use crate::error::AmendError;
use crate::topology::NodeId;

/// Availability period of a route: `blocks` time blocks starting at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AvailabilityWindow {
    pub start: u64,
    pub blocks: u64,
}

impl AvailabilityWindow {
    pub fn end(&self) -> u64 {
        self.start + self.blocks
    }
}

/// One bilateral SLA for a route toward `destination`.
///
/// The destination's own stock is a self-rooted contract with
/// `customer == provider == destination`, zero cost and zero delay.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contract {
    pub customer: NodeId,
    pub provider: NodeId,
    pub destination: NodeId,
    /// Purchased capacity, units per block.
    pub poss: u64,
    /// End-to-end delay from the customer to the destination.
    pub delay: u64,
    /// Unit price per capacity unit per block.
    pub cost: u64,
    pub window: AvailabilityWindow,
}

impl Contract {
    pub fn self_rooted(destination: NodeId, poss: u64, window: AvailabilityWindow) -> Self {
        Contract {
            customer: destination,
            provider: destination,
            destination,
            poss,
            delay: 0,
            cost: 0,
            window,
        }
    }
}

/// Capacity accounting for one (node, destination, stage).
///
/// All unsold, unkept capacity is offerable: `free_cap` is defined by the
/// equality `upstream.poss == local_cap + sold + free_cap`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapacityLedger {
    pub upstream: Contract,
    pub local_cap: u64,
    pub sold: BTreeMap<NodeId, Contract>,
}

impl CapacityLedger {
    pub fn new(upstream: Contract) -> Self {
        CapacityLedger {
            upstream,
            local_cap: 0,
            sold: BTreeMap::new(),
        }
    }

    pub fn sold_total(&self) -> u64 {
        self.sold.values().map(|c| c.poss).sum()
    }

    /// Conservation check: local + sold + free == poss, free >= 0.
    pub fn is_conserved(&self) -> bool {
        self.local_cap + self.sold_total() <= self.upstream.poss
    }
}

/// Capacity a node keeps for its own traffic: the full demand when the
/// route is cheaper than its utility, nothing otherwise.
pub fn derive_local_capacity(own_demand: u64, cost: u64, utility: u64) -> u64 {
    if cost < utility {
        own_demand
    } else {
        0
    }
}

/// Remaining offerable capacity on the route.
pub fn free_capacity(ledger: &CapacityLedger) -> u64 {
    ledger
        .upstream
        .poss
        .saturating_sub(ledger.local_cap + ledger.sold_total())
}

/// True iff `child` nests inside `parent`: it starts no earlier, is no
/// longer, and ends no later.
pub fn check_window_nesting(child: &AvailabilityWindow, parent: &AvailabilityWindow) -> bool {
    child.blocks <= parent.blocks && child.start >= parent.start && child.end() <= parent.end()
}

/// Outcome of a contract amendment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Amendment {
    pub contract: Contract,
    /// Penalty owed to the provider; zero when amending before start time.
    pub penalty: u64,
    /// Capacity returned to the provider's free pool.
    pub returned: u64,
}

/// Renegotiate the purchased capacity of an existing contract.
///
/// The new capacity must stay inside the originally demanded interval.
/// Decreases after the window has started incur a penalty of
/// `penalty_rate * returned * blocks`. Increases must fit the provider's
/// free capacity, checked by the caller via `provider_free`.
pub fn amend_contract(
    contract: &Contract,
    new_poss: u64,
    now: u64,
    bounds: (u64, u64),
    penalty_rate: u64,
    provider_free: u64,
) -> Result<Amendment, AmendError> {
    let (cap_min, cap_max) = bounds;
    if new_poss < cap_min || new_poss > cap_max {
        return Err(AmendError::OutOfInterval {
            requested: new_poss,
            cap_min,
            cap_max,
        });
    }
    if new_poss > contract.poss {
        let increase = new_poss - contract.poss;
        if increase > provider_free {
            return Err(AmendError::InsufficientProviderCapacity {
                requested: increase,
                free: provider_free,
            });
        }
    }
    let returned = contract.poss.saturating_sub(new_poss);
    let penalty = if returned > 0 && now >= contract.window.start {
        penalty_rate * returned * contract.window.blocks
    } else {
        0
    };
    let mut amended = contract.clone();
    amended.poss = new_poss;
    Ok(Amendment {
        contract: amended,
        penalty,
        returned,
    })
}
