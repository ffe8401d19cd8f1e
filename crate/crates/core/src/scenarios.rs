//! Bundled example scenarios.

/// Seven nodes, one destination, two competing transit providers.
pub const SEVEN_NODE: &str = include_str!("../scenarios/seven_node.scn");

/// Four-node diamond with two transit routes of different price and speed.
pub const DIAMOND: &str = include_str!("../scenarios/diamond.scn");
