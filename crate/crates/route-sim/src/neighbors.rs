//! Candidate next-hop selection at the frontier.
//!
//! The agent does not consider every unvisited node: a selection strategy
//! ranks the candidates and keeps the best `n_e`, which defines both the
//! state layout (one feature block per kept slot) and the action space (one
//! Q-value per slot). Three strategies are provided — geometric distance,
//! average channel gain, and interference-aware average link rate.

use serde::{Deserialize, Serialize};

use crate::channel::CommResource;
use crate::netmodel::{link_rate, Topology};
use crate::routing::RouteState;
use crate::NodeId;

/// Which ranking metric picks the candidate next hops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborStrategy {
    /// Nearest to the frontier (Euclidean), ascending.
    Distance,
    /// Highest mean amplitude gain across technologies, descending.
    Channel,
    /// Highest mean link rate across technologies, interference included,
    /// descending.
    Rate,
}

/// The ranked candidate next hops for one decision.
///
/// Holds at most `num_slots` node ids in the strategy's preference order.
/// When fewer candidates exist than slots, the trailing slots are padded:
/// they carry no node, their features are zeroed and their Q-values masked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborSet {
    nodes: Vec<NodeId>,
    strategy: NeighborStrategy,
    num_slots: usize,
}

impl NeighborSet {
    fn new(mut ranked: Vec<NodeId>, strategy: NeighborStrategy, n_e: usize) -> Self {
        ranked.truncate(n_e);
        NeighborSet {
            nodes: ranked,
            strategy,
            num_slots: n_e,
        }
    }

    /// Selected nodes in preference order (no padding entries).
    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn strategy(&self) -> NeighborStrategy {
        self.strategy
    }

    /// Total slot count `n_e`, padded slots included.
    pub fn num_slots(&self) -> usize {
        self.num_slots
    }

    /// Node in slot `i`, or `None` for a padded slot.
    pub fn slot(&self, i: usize) -> Option<NodeId> {
        self.nodes.get(i).copied()
    }

    /// Whether slot `i` is padding (no candidate behind it).
    pub fn is_padded(&self, i: usize) -> bool {
        i >= self.nodes.len()
    }

    /// Number of real (non-padded) entries.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Ranks `candidates` by a metric and keeps the top `n_e`.
///
/// `descending` picks whether larger metric is better; ties always break
/// toward the lower node id.
fn rank_by<F: Fn(NodeId) -> f64>(
    candidates: &[NodeId],
    metric: F,
    descending: bool,
) -> Vec<NodeId> {
    let mut scored: Vec<(f64, NodeId)> = candidates.iter().map(|&n| (metric(n), n)).collect();
    scored.sort_by(|(ma, a), (mb, b)| {
        let ord = ma.total_cmp(mb);
        let ord = if descending { ord.reverse() } else { ord };
        ord.then(a.cmp(b))
    });
    scored.into_iter().map(|(_, n)| n).collect()
}

/// Picks the `n_e` candidates nearest to the frontier.
///
/// `candidates` must be the active unvisited nodes; an empty slice yields an
/// empty set (the episode then has no legal action).
pub fn select_distance(
    frontier: NodeId,
    candidates: &[NodeId],
    topo: &Topology,
    n_e: usize,
) -> NeighborSet {
    let ranked = rank_by(candidates, |n| topo.distance(frontier, n), false);
    NeighborSet::new(ranked, NeighborStrategy::Distance, n_e)
}

/// Mean amplitude gain between `frontier` and `node` across technologies.
///
/// Uses each technology's first subband; gains are flat across subbands so
/// the choice carries no information, but it pins the definition.
pub(crate) fn mean_amplitude_gain(frontier: NodeId, node: NodeId, topo: &Topology) -> f64 {
    let m = topo.technologies().len();
    let sum: f64 = (0..m)
        .map(|tech| topo.channels().gain(tech, frontier, node).sqrt())
        .sum();
    sum / m as f64
}

/// Picks the `n_e` candidates with the highest mean amplitude gain from the
/// frontier, averaged over technologies.
pub fn select_channel(
    frontier: NodeId,
    candidates: &[NodeId],
    topo: &Topology,
    n_e: usize,
) -> NeighborSet {
    let ranked = rank_by(
        candidates,
        |n| mean_amplitude_gain(frontier, n, topo),
        true,
    );
    NeighborSet::new(ranked, NeighborStrategy::Channel, n_e)
}

/// Picks the `n_e` candidates with the highest mean achievable link rate
/// from the frontier, averaged over technologies.
///
/// Unlike the channel strategy this accounts for bandwidth and for
/// interference from the transmitters the route has already established:
/// each technology is scored on its first subband with that subband's
/// established transmitters as interferers.
pub fn select_rate(
    frontier: NodeId,
    candidates: &[NodeId],
    state: &RouteState,
    n_e: usize,
) -> NeighborSet {
    let topo = state.topology();
    let m = topo.technologies().len();
    let ranked = rank_by(
        candidates,
        |n| {
            let sum: f64 = (0..m)
                .map(|tech| {
                    let resource = CommResource {
                        technology: tech,
                        subband: 0,
                    };
                    link_rate(frontier, n, resource, state.established_tx(resource), topo)
                        .expect("frontier and unvisited candidate form a valid link")
                })
                .sum();
            sum / m as f64
        },
        true,
    );
    NeighborSet::new(ranked, NeighborStrategy::Rate, n_e)
}

/// Runs the configured strategy on the episode's current frontier and
/// unvisited candidates.
pub fn select_for_state(
    strategy: NeighborStrategy,
    state: &RouteState,
    n_e: usize,
) -> NeighborSet {
    let frontier = state.frontier();
    let candidates = state.unvisited_candidates();
    let topo = state.topology();
    match strategy {
        NeighborStrategy::Distance => select_distance(frontier, &candidates, topo, n_e),
        NeighborStrategy::Channel => select_channel(frontier, &candidates, topo, n_e),
        NeighborStrategy::Rate => select_rate(frontier, &candidates, state, n_e),
    }
}
