//! Hop-by-hop route construction.
//!
//! An episode starts at the source and repeatedly asks a policy for a
//! [`Decision`] — the next node and the resource to transmit on. The state
//! machine enforces the routing constraints (loop-freedom, adjacent hops on
//! different resources, hop budget); a policy that violates them is a bug and
//! gets a hard error rather than a silent fix-up.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::channel::CommResource;
use crate::netmodel::{end_to_end_rate, NetModelError, Route, Topology};
use crate::NodeId;

/// Errors raised while driving an episode.
#[derive(Debug, Error)]
pub enum RoutingError {
    #[error("episode is not building (already delivered or failed)")]
    NotBuilding,
    #[error("decision targets inactive node {node}")]
    InactiveNode { node: NodeId },
    #[error("decision revisits node {node}: routes must be loop-free")]
    RevisitedNode { node: NodeId },
    #[error(
        "decision reuses resource (tech {technology}, subband {subband}) of the previous hop"
    )]
    AdjacentResourceRepeat { technology: usize, subband: usize },
    #[error("decision uses unknown resource: technology {technology}, subband {subband}")]
    UnknownResource { technology: usize, subband: usize },
    #[error("policy violation at hop {hop}: {source}")]
    AtHop {
        hop: usize,
        #[source]
        source: Box<RoutingError>,
    },
    #[error("rate evaluation of delivered route failed: {0}")]
    Rate(#[from] NetModelError),
}

/// Where an episode currently stands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeStatus {
    /// The flow has not reached the destination yet; decisions are accepted.
    Building,
    /// The destination was reached; the route is complete.
    Delivered,
    /// No legal continuation existed or the hop budget ran out.
    Failed,
}

/// One policy decision: extend the route to `next_node`, transmitting on
/// `resource`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub next_node: NodeId,
    pub resource: CommResource,
}

/// Mutable state of one route-construction episode.
///
/// Holds the partial route (visited nodes in order plus the resource of each
/// recorded hop), the per-resource transmitter sets of those hops, and the
/// hop budget. The frontier — the node currently deciding — is the last
/// visited node.
#[derive(Debug, Clone)]
pub struct RouteState<'a> {
    topo: &'a Topology,
    visited: Vec<NodeId>,
    visited_mask: Vec<bool>,
    resources_used: Vec<CommResource>,
    established: BTreeMap<CommResource, Vec<NodeId>>,
    status: EpisodeStatus,
    max_hops: usize,
}

const NO_TRANSMITTERS: &[NodeId] = &[];

impl<'a> RouteState<'a> {
    /// Fresh episode at the topology's source with the given hop budget.
    pub fn new(topo: &'a Topology, max_hops: usize) -> Self {
        let mut visited_mask = vec![false; topo.num_pool_nodes()];
        visited_mask[topo.source()] = true;
        RouteState {
            topo,
            visited: vec![topo.source()],
            visited_mask,
            resources_used: Vec::new(),
            established: BTreeMap::new(),
            // A zero budget cannot admit any hop, so such an episode is
            // failed from the start.
            status: if max_hops == 0 {
                EpisodeStatus::Failed
            } else {
                EpisodeStatus::Building
            },
            max_hops,
        }
    }

    pub fn topology(&self) -> &'a Topology {
        self.topo
    }

    /// The node currently holding the flow (last visited).
    pub fn frontier(&self) -> NodeId {
        *self.visited.last().unwrap()
    }

    /// Visited nodes in route order, starting with the source.
    pub fn visited(&self) -> &[NodeId] {
        &self.visited
    }

    pub fn is_visited(&self, node: NodeId) -> bool {
        self.visited_mask.get(node).copied().unwrap_or(false)
    }

    /// Resources of the recorded hops, in hop order.
    pub fn resources_used(&self) -> &[CommResource] {
        &self.resources_used
    }

    /// Resource of the immediately preceding hop, if any.
    pub fn last_resource(&self) -> Option<CommResource> {
        self.resources_used.last().copied()
    }

    /// Nodes that have transmitted on `resource` so far.
    pub fn established_tx(&self, resource: CommResource) -> &[NodeId] {
        self.established
            .get(&resource)
            .map_or(NO_TRANSMITTERS, Vec::as_slice)
    }

    /// All (resource → transmitters) entries of the hops recorded so far.
    pub fn established(&self) -> &BTreeMap<CommResource, Vec<NodeId>> {
        &self.established
    }

    pub fn status(&self) -> EpisodeStatus {
        self.status
    }

    /// Number of hops recorded so far.
    pub fn hops(&self) -> usize {
        self.resources_used.len()
    }

    pub fn max_hops(&self) -> usize {
        self.max_hops
    }

    /// Active nodes not yet visited, ascending. These are the legal
    /// next-hop candidates (the destination among them).
    pub fn unvisited_candidates(&self) -> Vec<NodeId> {
        self.topo
            .active()
            .iter()
            .copied()
            .filter(|&n| !self.visited_mask[n])
            .collect()
    }

    /// The completed route, if the episode delivered.
    pub fn route(&self) -> Option<Route> {
        (self.status == EpisodeStatus::Delivered).then(|| Route {
            nodes: self.visited.clone(),
            resources: self.resources_used.clone(),
        })
    }
}

/// Resources usable for the next hop: everything except the previous hop's
/// resource (all of them at the source), in canonical order.
pub fn legal_resources(state: &RouteState) -> Vec<CommResource> {
    let last = state.last_resource();
    state
        .topo
        .resources()
        .iter()
        .copied()
        .filter(|r| Some(*r) != last)
        .collect()
}

/// Applies one decision to the episode state.
///
/// On success the route is extended and the status updated: reaching the
/// destination delivers, exhausting the hop budget fails. Illegal decisions
/// (revisit, adjacent resource reuse, inactive node, unknown resource) are
/// policy bugs and return an error without modifying the state.
pub fn apply_decision(state: &mut RouteState, decision: &Decision) -> Result<(), RoutingError> {
    if state.status != EpisodeStatus::Building {
        return Err(RoutingError::NotBuilding);
    }
    let next = decision.next_node;
    if !state.topo.is_active(next) {
        return Err(RoutingError::InactiveNode { node: next });
    }
    if state.visited_mask[next] {
        return Err(RoutingError::RevisitedNode { node: next });
    }
    let resource = decision.resource;
    if state.topo.resolve(resource).is_err() {
        return Err(RoutingError::UnknownResource {
            technology: resource.technology,
            subband: resource.subband,
        });
    }
    if state.last_resource() == Some(resource) {
        return Err(RoutingError::AdjacentResourceRepeat {
            technology: resource.technology,
            subband: resource.subband,
        });
    }

    let frontier = state.frontier();
    state.established.entry(resource).or_default().push(frontier);
    state.resources_used.push(resource);
    state.visited.push(next);
    state.visited_mask[next] = true;

    if next == state.topo.destination() {
        state.status = EpisodeStatus::Delivered;
    } else if state.hops() >= state.max_hops {
        state.status = EpisodeStatus::Failed;
    }
    Ok(())
}

/// A route-construction policy: given the episode state, produce the next
/// decision, or `None` to signal that no action is taken (failing the
/// episode).
pub trait RoutePolicy {
    fn decide(&mut self, state: &RouteState) -> Option<Decision>;
}

impl<F: FnMut(&RouteState) -> Option<Decision>> RoutePolicy for F {
    fn decide(&mut self, state: &RouteState) -> Option<Decision> {
        self(state)
    }
}

/// One recorded step of an episode: who decided, and what.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HopRecord {
    pub frontier: NodeId,
    pub decision: Decision,
}

/// Result of one episode.
#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub delivered: bool,
    /// The complete route when delivered.
    pub route: Option<Route>,
    /// End-to-end bottleneck rate of the delivered route, bits/s; zero on
    /// failure.
    pub rate_bps: f64,
    /// Hops actually taken (delivered or not).
    pub hops: usize,
    /// Per-hop trace of the decisions taken.
    pub trace: Vec<HopRecord>,
}

/// Runs one episode of `policy` on `topo`.
///
/// `max_hops` defaults to the number of active nodes — a loop-free route
/// cannot be longer. The policy returning `None` fails the episode; an
/// illegal decision propagates as an error tagged with the hop index.
pub fn run_episode(
    topo: &Topology,
    policy: &mut dyn RoutePolicy,
    max_hops: Option<usize>,
) -> Result<EpisodeOutcome, RoutingError> {
    let budget = max_hops.unwrap_or_else(|| topo.active().len());
    let mut state = RouteState::new(topo, budget);
    let mut trace = Vec::new();
    while state.status() == EpisodeStatus::Building {
        match policy.decide(&state) {
            Some(decision) => {
                let frontier = state.frontier();
                apply_decision(&mut state, &decision).map_err(|e| RoutingError::AtHop {
                    hop: state.hops(),
                    source: Box::new(e),
                })?;
                trace.push(HopRecord { frontier, decision });
            }
            None => {
                state.status = EpisodeStatus::Failed;
            }
        }
    }
    let route = state.route();
    let rate_bps = match &route {
        Some(r) => end_to_end_rate(r, topo)?,
        None => 0.0,
    };
    Ok(EpisodeOutcome {
        delivered: route.is_some(),
        route,
        rate_bps,
        hops: state.hops(),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ChannelTable, Technology};
    use crate::netmodel::RadioParams;
    use proptest::prelude::*;

    fn world(n: usize, techs: Vec<Technology>) -> Topology {
        let table = ChannelTable::from_fn(n, techs.len(), |t, a, b| {
            1e-6 * (1.0 + t as f64) / (1.0 + (a + b) as f64)
        })
        .unwrap();
        Topology::new(
            (0..n).map(|i| [i as f64 * 10.0, 0.0, 0.0]).collect(),
            (0..n).collect(),
            0,
            n - 1,
            techs,
            table,
            RadioParams {
                transmit_power_w: 1.0,
                noise_density_w_per_hz: 1e-12,
                interference_enabled: true,
            },
        )
        .unwrap()
    }

    fn tech(id: usize, subbands: usize) -> Technology {
        Technology::with_bandwidth(id, 1e9, 1e6 * subbands as f64, subbands).unwrap()
    }

    const R: fn(usize, usize) -> CommResource = |technology, subband| CommResource {
        technology,
        subband,
    };

    #[test]
    fn legal_resources_excludes_only_previous_hop() {
        let topo = world(4, vec![tech(0, 5), tech(1, 5), tech(2, 5)]);
        let mut state = RouteState::new(&topo, 4);
        assert_eq!(legal_resources(&state).len(), 15);

        apply_decision(
            &mut state,
            &Decision {
                next_node: 1,
                resource: R(1, 0),
            },
        )
        .unwrap();
        let legal = legal_resources(&state);
        assert_eq!(legal.len(), 14);
        assert!(!legal.contains(&R(1, 0)));
        assert!(legal.contains(&R(1, 1)));
    }

    #[test]
    fn single_resource_world_dead_ends_after_one_hop() {
        let topo = world(4, vec![tech(0, 1)]);
        let mut state = RouteState::new(&topo, 4);
        apply_decision(
            &mut state,
            &Decision {
                next_node: 1,
                resource: R(0, 0),
            },
        )
        .unwrap();
        assert!(legal_resources(&state).is_empty());
    }

    #[test]
    fn reaching_destination_delivers() {
        let topo = world(3, vec![tech(0, 2)]);
        let mut state = RouteState::new(&topo, 3);
        apply_decision(
            &mut state,
            &Decision {
                next_node: 2,
                resource: R(0, 1),
            },
        )
        .unwrap();
        assert_eq!(state.status(), EpisodeStatus::Delivered);
        let route = state.route().unwrap();
        assert_eq!(route.nodes, vec![0, 2]);
        assert_eq!(route.resources, vec![R(0, 1)]);
        // Terminal states accept no further decisions.
        assert!(matches!(
            apply_decision(
                &mut state,
                &Decision {
                    next_node: 1,
                    resource: R(0, 0)
                }
            ),
            Err(RoutingError::NotBuilding)
        ));
    }

    #[test]
    fn illegal_decisions_are_rejected_without_state_change() {
        let topo = world(4, vec![tech(0, 2)]);
        let mut state = RouteState::new(&topo, 4);
        apply_decision(
            &mut state,
            &Decision {
                next_node: 1,
                resource: R(0, 0),
            },
        )
        .unwrap();

        let snapshot_visited = state.visited().to_vec();
        assert!(matches!(
            apply_decision(
                &mut state,
                &Decision {
                    next_node: 0,
                    resource: R(0, 1)
                }
            ),
            Err(RoutingError::RevisitedNode { node: 0 })
        ));
        assert!(matches!(
            apply_decision(
                &mut state,
                &Decision {
                    next_node: 2,
                    resource: R(0, 0)
                }
            ),
            Err(RoutingError::AdjacentResourceRepeat { .. })
        ));
        assert!(matches!(
            apply_decision(
                &mut state,
                &Decision {
                    next_node: 2,
                    resource: R(0, 9)
                }
            ),
            Err(RoutingError::UnknownResource { .. })
        ));
        assert_eq!(state.visited(), snapshot_visited.as_slice());
        assert_eq!(state.status(), EpisodeStatus::Building);

        // Inactive target.
        let table = ChannelTable::from_fn(4, 1, |_, _, _| 1e-6).unwrap();
        let partial = Topology::new(
            (0..4).map(|i| [i as f64, 0.0, 0.0]).collect(),
            vec![0, 1, 3],
            0,
            3,
            vec![tech(0, 2)],
            table,
            RadioParams::default(),
        )
        .unwrap();
        let mut state = RouteState::new(&partial, 3);
        assert!(matches!(
            apply_decision(
                &mut state,
                &Decision {
                    next_node: 2,
                    resource: R(0, 0)
                }
            ),
            Err(RoutingError::InactiveNode { node: 2 })
        ));
    }

    #[test]
    fn budget_exhaustion_fails_episode() {
        let topo = world(5, vec![tech(0, 3)]);
        let mut state = RouteState::new(&topo, 2);
        for (next, sub) in [(1, 0), (2, 1)] {
            apply_decision(
                &mut state,
                &Decision {
                    next_node: next,
                    resource: R(0, sub),
                },
            )
            .unwrap();
        }
        assert_eq!(state.status(), EpisodeStatus::Failed);
        assert_eq!(state.hops(), 2);
        assert!(state.route().is_none());

        // Delivery on the last allowed hop still counts.
        let mut state = RouteState::new(&topo, 1);
        apply_decision(
            &mut state,
            &Decision {
                next_node: 4,
                resource: R(0, 0),
            },
        )
        .unwrap();
        assert_eq!(state.status(), EpisodeStatus::Delivered);

        // A zero budget fails immediately.
        let state = RouteState::new(&topo, 0);
        assert_eq!(state.status(), EpisodeStatus::Failed);
    }

    #[test]
    fn run_episode_direct_policy_delivers_in_one_hop() {
        let topo = world(5, vec![tech(0, 2)]);
        let mut direct = |state: &RouteState| {
            Some(Decision {
                next_node: state.topology().destination(),
                resource: legal_resources(state)[0],
            })
        };
        let outcome = run_episode(&topo, &mut direct, None).unwrap();
        assert!(outcome.delivered);
        assert_eq!(outcome.hops, 1);
        assert_eq!(outcome.trace.len(), 1);
        assert_eq!(outcome.trace[0].frontier, 0);
        let route = outcome.route.unwrap();
        assert_eq!(route.nodes, vec![0, 4]);
        // Reported rate equals the independent end-to-end evaluation.
        assert_eq!(outcome.rate_bps, end_to_end_rate(&route, &topo).unwrap());
    }

    #[test]
    fn run_episode_avoiding_destination_fails_at_budget() {
        let topo = world(6, vec![tech(0, 3)]);
        // Always walk to the lowest unvisited non-destination node.
        let mut avoider = |state: &RouteState| {
            let next = state
                .unvisited_candidates()
                .into_iter()
                .find(|&n| n != state.topology().destination())?;
            Some(Decision {
                next_node: next,
                resource: legal_resources(state)[0],
            })
        };
        let outcome = run_episode(&topo, &mut avoider, Some(3)).unwrap();
        assert!(!outcome.delivered);
        assert_eq!(outcome.hops, 3);
        assert_eq!(outcome.rate_bps, 0.0);
        assert!(outcome.route.is_none());

        // With no budget cap it runs out of non-destination nodes instead.
        let outcome = run_episode(&topo, &mut avoider, None).unwrap();
        assert!(!outcome.delivered);
        assert_eq!(outcome.hops, 4, "all relays visited, then no action");
    }

    #[test]
    fn run_episode_attaches_hop_index_to_policy_violations() {
        let topo = world(4, vec![tech(0, 2)]);
        // Second decision revisits the source.
        let mut bad = |state: &RouteState| {
            let next = if state.hops() == 0 { 1 } else { 0 };
            Some(Decision {
                next_node: next,
                resource: legal_resources(state)[0],
            })
        };
        let err = run_episode(&topo, &mut bad, None).unwrap_err();
        match err {
            RoutingError::AtHop { hop, source } => {
                assert_eq!(hop, 1);
                assert!(matches!(*source, RoutingError::RevisitedNode { node: 0 }));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn no_action_policy_fails_cleanly() {
        let topo = world(3, vec![tech(0, 2)]);
        let mut noop = |_: &RouteState| None;
        let outcome = run_episode(&topo, &mut noop, None).unwrap();
        assert!(!outcome.delivered);
        assert_eq!(outcome.hops, 0);
        assert!(outcome.trace.is_empty());
    }

    #[test]
    fn established_transmitters_match_route_reconstruction() {
        let topo = world(6, vec![tech(0, 2), tech(1, 1)]);
        let mut state = RouteState::new(&topo, 6);
        let plan = [
            (1, R(0, 0)),
            (2, R(1, 0)),
            (3, R(0, 0)),
            (5, R(0, 1)),
        ];
        for (next, resource) in plan {
            apply_decision(
                &mut state,
                &Decision {
                    next_node: next,
                    resource,
                },
            )
            .unwrap();
        }
        assert_eq!(state.status(), EpisodeStatus::Delivered);
        let route = state.route().unwrap();

        let mut expected: BTreeMap<CommResource, Vec<NodeId>> = BTreeMap::new();
        for (i, r) in route.resources.iter().enumerate() {
            expected.entry(*r).or_default().push(route.nodes[i]);
        }
        assert_eq!(state.established(), &expected);
        assert_eq!(state.established_tx(R(0, 0)), &[0, 2]);
        assert_eq!(state.established_tx(R(1, 1)), &[] as &[NodeId]);
    }

    proptest! {
        /// Any sequence of legal picks yields a terminating episode whose
        /// delivered routes satisfy every route invariant.
        #[test]
        fn random_legal_policies_produce_valid_episodes(
            picks in prop::collection::vec((0usize..64, 0usize..64), 1..40),
            n in 3usize..8,
            subbands in 1usize..4,
        ) {
            let topo = world(n, vec![tech(0, subbands), tech(1, subbands)]);
            let mut step = 0usize;
            let mut policy = |state: &RouteState| {
                let candidates = state.unvisited_candidates();
                let resources = legal_resources(state);
                if candidates.is_empty() || resources.is_empty() {
                    return None;
                }
                let (a, b) = picks[step % picks.len()];
                step += 1;
                Some(Decision {
                    next_node: candidates[a % candidates.len()],
                    resource: resources[b % resources.len()],
                })
            };
            let outcome = run_episode(&topo, &mut policy, None).unwrap();
            prop_assert!(outcome.hops <= topo.active().len());
            prop_assert_eq!(outcome.trace.len(), outcome.hops);
            if let Some(route) = &outcome.route {
                prop_assert!(route.validate(&topo).is_ok());
                prop_assert!(outcome.rate_bps > 0.0);
            } else {
                prop_assert_eq!(outcome.rate_bps, 0.0);
            }
        }
    }
}
