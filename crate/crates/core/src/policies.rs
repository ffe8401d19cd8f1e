//! Per-stage learning and decision policies.
//!
//! All of these are pure functions from last-stage history to this stage's
//! strategy, so replaying a run reproduces identical choices.

use crate::contracts::AvailabilityWindow;
use crate::topology::{MarginMode, NodeId};

/// What a node remembers about its last stage on one route.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageOutcome {
    pub bought: u64,
    pub sold: u64,
    pub benefit: i64,
    /// Whether the confirmed demand asked for everything the provider offered.
    pub asked_provider_max: bool,
}

/// Learned quantities per (node, destination).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrategyState {
    pub margin: u64,
    /// Last resolved minimal demand; `None` before the first demand.
    pub cap_min: Option<u64>,
    pub last: Option<StageOutcome>,
}

impl StrategyState {
    pub fn new(initial_margin: u64) -> Self {
        StrategyState {
            margin: initial_margin,
            cap_min: None,
            last: None,
        }
    }
}

/// Which branch of the minimal-capacity rule fired this stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CapMinRule {
    /// No demand was made this stage.
    #[default]
    None,
    /// First-stage fixation from own demand.
    Initial,
    /// Sold with positive benefit: same minimum as last stage.
    Keep,
    /// Failed to sell, room left at the provider: one unit more.
    Increment,
    /// Failed to sell at the provider's maximum: back to own demand or zero.
    Reset,
}

/// Next-stage margin.
///
/// Fixed mode never moves the margin. Adaptive mode starts at 1, adds one
/// unit after a profitable sale, and drops one unit (never below 1) after a
/// stage without any sale.
pub fn update_margin(prev: &StrategyState, mode: MarginMode) -> u64 {
    match mode {
        MarginMode::Fixed => prev.margin,
        MarginMode::Adaptive => match prev.last {
            None => 1,
            Some(outcome) => {
                if outcome.sold > 0 && outcome.benefit > 0 {
                    prev.margin + 1
                } else if outcome.sold == 0 && prev.margin > 1 {
                    prev.margin - 1
                } else {
                    prev.margin
                }
            }
        },
    }
}

/// Minimal capacity to demand, resolved against the candidate offer's price.
/// Returns the value and the rule branch that produced it.
pub fn fix_cap_min(
    prev: &StrategyState,
    own_demand: u64,
    cost: u64,
    utility: u64,
) -> (u64, CapMinRule) {
    let initial = || if cost < utility { own_demand } else { 0 };
    let reset = || if utility > cost { own_demand } else { 0 };
    match (prev.cap_min, prev.last) {
        (None, _) | (_, None) => (initial(), CapMinRule::Initial),
        (Some(cap_min), Some(outcome)) => {
            if outcome.sold == 0 {
                if outcome.asked_provider_max {
                    (reset(), CapMinRule::Reset)
                } else {
                    (cap_min + 1, CapMinRule::Increment)
                }
            } else if outcome.benefit > 0 {
                (cap_min, CapMinRule::Keep)
            } else {
                // Partial sale at a loss: neither branch applies, hold.
                (cap_min, CapMinRule::Keep)
            }
        }
    }
}

/// Maximal capacity to demand: everything the node can transit, bounded by
/// what the provider offers.
pub fn fix_cap_max(node_cap: u64, provider_free: u64) -> u64 {
    node_cap.min(provider_free)
}

/// Benefit a granted customer brings to its provider.
pub fn customer_benefit(window: &AvailabilityWindow, poss: u64, margin: u64) -> u64 {
    window.blocks * poss * margin
}

/// One demand as seen by the selecting provider.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DemandItem {
    pub num: NodeId,
    pub cap_min: u64,
    pub cap_max: u64,
    pub window: AvailabilityWindow,
}

/// Grant minimal capacities in ascending (cap_min, num) order, then spread
/// the remainder: an equal integer share per granted customer capped at its
/// interval width, then leftover units one at a time in the same order.
/// Returns grants aligned with the input; `None` marks a rejection.
pub fn allocate_min_fill(free: u64, demands: &[DemandItem]) -> Vec<Option<u64>> {
    let mut order: Vec<usize> = (0..demands.len()).collect();
    order.sort_by_key(|&i| (demands[i].cap_min, demands[i].num));

    let mut grants: Vec<Option<u64>> = vec![None; demands.len()];
    let mut remaining = free;
    let mut granted: Vec<usize> = Vec::new();
    for &i in &order {
        if demands[i].cap_min <= remaining {
            grants[i] = Some(demands[i].cap_min);
            remaining -= demands[i].cap_min;
            granted.push(i);
        }
    }
    if granted.is_empty() {
        return grants;
    }
    let share = remaining / granted.len() as u64;
    for &i in &granted {
        let grant = grants[i].as_mut().unwrap();
        let extra = share.min(demands[i].cap_max - *grant);
        *grant += extra;
        remaining -= extra;
    }
    // Leftover units, one per customer per pass until exhausted or all capped.
    loop {
        let mut progressed = false;
        for &i in &granted {
            if remaining == 0 {
                break;
            }
            let grant = grants[i].as_mut().unwrap();
            if *grant < demands[i].cap_max {
                *grant += 1;
                remaining -= 1;
                progressed = true;
            }
        }
        if remaining == 0 || !progressed {
            break;
        }
    }
    grants
}

/// Rank demands by descending provider benefit at the maximal grantable
/// capacity, ties by ascending num, then grant greedily.
pub fn allocate_by_benefit(free: u64, margin: u64, demands: &[DemandItem]) -> Vec<Option<u64>> {
    let mut order: Vec<usize> = (0..demands.len()).collect();
    order.sort_by_key(|&i| {
        let d = &demands[i];
        let best = d.cap_max.min(free);
        (std::cmp::Reverse(customer_benefit(&d.window, best, margin)), d.num)
    });
    let mut grants: Vec<Option<u64>> = vec![None; demands.len()];
    let mut remaining = free;
    for &i in &order {
        let d = &demands[i];
        let grant = d.cap_max.min(remaining);
        if grant >= d.cap_min {
            grants[i] = Some(grant);
            remaining -= grant;
        }
    }
    grants
}

/// Descending-benefit order with ascending-num tie break; exposed for the
/// selection step and its tests.
pub fn rank_by_benefit(free: u64, margin: u64, demands: &[DemandItem]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..demands.len()).collect();
    order.sort_by_key(|&i| {
        let d = &demands[i];
        let best = d.cap_max.min(free);
        (std::cmp::Reverse(customer_benefit(&d.window, best, margin)), d.num)
    });
    order
}
