//! Benchmark routing policies.
//!
//! Six greedy one-step rules plus a widest-path lookahead policy, all
//! pluggable into [`crate::routing::run_episode`]. Unlike the learned agent
//! they consider every unvisited active node, which makes them the stronger
//! comparator. The widest-path policy rebuilds its link graph every hop with
//! the interference of the hops already committed, takes the bottleneck-
//! optimal path's first hop, and discards the rest.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::CommResource;
use crate::neighbors::mean_amplitude_gain;
use crate::netmodel::{bearing_angle, link_rate};
use crate::routing::{legal_resources, Decision, RoutePolicy, RouteState};
use crate::NodeId;

/// Errors from link-graph construction and widest-path search.
#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("invalid link graph: {0}")]
    InvalidWeights(String),
    #[error("node {node} is not in the link graph")]
    UnknownNode { node: NodeId },
    #[error("no positive-weight path from {src} to {dst}")]
    Unreachable { src: NodeId, dst: NodeId },
}

/// The benchmark policies, keyed as they appear in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineKind {
    /// Neighbor with the strongest mean amplitude gain from the frontier.
    #[serde(rename = "strongest")]
    StrongestNeighbor,
    /// Neighbor whose bearing is closest to the destination's bearing.
    #[serde(rename = "direction")]
    BestDirection,
    /// Neighbor geometrically closest to the destination.
    #[serde(rename = "closest")]
    ClosestToDestination,
    /// (Neighbor, resource) pair receiving the least interference power.
    #[serde(rename = "least_interf")]
    LeastInterfered,
    /// (Neighbor, resource) pair with the highest achievable link rate.
    #[serde(rename = "max_rate")]
    LargestDataRate,
    /// Always hop straight to the destination.
    #[serde(rename = "direct")]
    DestinationDirectly,
    /// First hop of the bottleneck-optimal path, recomputed every hop.
    #[serde(rename = "widest")]
    WidestPath,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 7] = [
        BaselineKind::StrongestNeighbor,
        BaselineKind::BestDirection,
        BaselineKind::ClosestToDestination,
        BaselineKind::LeastInterfered,
        BaselineKind::LargestDataRate,
        BaselineKind::DestinationDirectly,
        BaselineKind::WidestPath,
    ];

    /// The six one-step greedy rules (everything but the widest-path
    /// lookahead).
    pub const GREEDY: [BaselineKind; 6] = [
        BaselineKind::StrongestNeighbor,
        BaselineKind::BestDirection,
        BaselineKind::ClosestToDestination,
        BaselineKind::LeastInterfered,
        BaselineKind::LargestDataRate,
        BaselineKind::DestinationDirectly,
    ];

    /// The configuration key naming this policy.
    pub fn key(&self) -> &'static str {
        match self {
            BaselineKind::StrongestNeighbor => "strongest",
            BaselineKind::BestDirection => "direction",
            BaselineKind::ClosestToDestination => "closest",
            BaselineKind::LeastInterfered => "least_interf",
            BaselineKind::LargestDataRate => "max_rate",
            BaselineKind::DestinationDirectly => "direct",
            BaselineKind::WidestPath => "widest",
        }
    }
}

/// Total interference power received at `node` on `resource` from the
/// route's established transmitters; 0 when the world models none.
fn interference_at(state: &RouteState, node: NodeId, resource: CommResource) -> f64 {
    let topo = state.topology();
    let radio = topo.radio();
    if !radio.interference_enabled {
        return 0.0;
    }
    state
        .established_tx(resource)
        .iter()
        .map(|&tx| radio.transmit_power_w * topo.channels().gain(resource.technology, tx, node))
        .sum()
}

/// Achievable rate of the frontier→`next` link on `resource`, with the
/// established transmitters on that resource as interferers.
fn frontier_link_rate(state: &RouteState, next: NodeId, resource: CommResource) -> f64 {
    link_rate(
        state.frontier(),
        next,
        resource,
        state.established_tx(resource),
        state.topology(),
    )
    .expect("frontier and unvisited candidate form a valid link")
}

/// Best legal resource toward `next` by interference-aware rate; canonical
/// resource order breaks ties. `None` when no resource is legal.
fn best_resource_toward(state: &RouteState, next: NodeId) -> Option<CommResource> {
    let mut best: Option<(f64, CommResource)> = None;
    for resource in legal_resources(state) {
        let rate = frontier_link_rate(state, next, resource);
        if best.is_none_or(|(b, _)| rate > b) {
            best = Some((rate, resource));
        }
    }
    best.map(|(_, r)| r)
}

/// Joint argmin/argmax over (candidate, legal resource) pairs; candidates
/// ascending, resources canonical, strict improvement — so ties resolve to
/// the lowest (node id, resource) pair.
fn best_pair(
    state: &RouteState,
    metric: impl Fn(NodeId, CommResource) -> f64,
    maximize: bool,
) -> Option<Decision> {
    let resources = legal_resources(state);
    let mut best: Option<(f64, Decision)> = None;
    for next in state.unvisited_candidates() {
        for &resource in &resources {
            let value = metric(next, resource);
            let better = match best {
                None => true,
                Some((b, _)) => {
                    if maximize {
                        value > b
                    } else {
                        value < b
                    }
                }
            };
            if better {
                best = Some((
                    value,
                    Decision {
                        next_node: next,
                        resource,
                    },
                ));
            }
        }
    }
    best.map(|(_, d)| d)
}

/// One decision of the given baseline, or `None` when no legal action
/// exists.
pub fn baseline_decision(state: &RouteState, kind: BaselineKind) -> Option<Decision> {
    let topo = state.topology();
    let frontier = state.frontier();
    let dest = topo.destination();

    // Scalar per-candidate rules: pick the candidate, then the legal
    // resource with the highest interference-aware rate toward it.
    let scalar = |metric: &dyn Fn(NodeId) -> f64, maximize: bool| -> Option<Decision> {
        let best = state
            .unvisited_candidates()
            .into_iter()
            .min_by(|&a, &b| {
                let (ma, mb) = (metric(a), metric(b));
                let ord = ma.total_cmp(&mb);
                if maximize { ord.reverse() } else { ord }.then(a.cmp(&b))
            })?;
        let resource = best_resource_toward(state, best)?;
        Some(Decision {
            next_node: best,
            resource,
        })
    };

    match kind {
        BaselineKind::StrongestNeighbor => {
            scalar(&|n| mean_amplitude_gain(frontier, n, topo), true)
        }
        BaselineKind::BestDirection => scalar(
            &|n| {
                bearing_angle(
                    topo.position(frontier),
                    topo.position(dest),
                    topo.position(n),
                )
            },
            false,
        ),
        BaselineKind::ClosestToDestination => scalar(&|n| topo.distance(n, dest), false),
        BaselineKind::DestinationDirectly => {
            let resource = best_resource_toward(state, dest)?;
            Some(Decision {
                next_node: dest,
                resource,
            })
        }
        BaselineKind::LeastInterfered => {
            best_pair(state, |n, r| interference_at(state, n, r), false)
        }
        BaselineKind::LargestDataRate => {
            best_pair(state, |n, r| frontier_link_rate(state, n, r), true)
        }
        BaselineKind::WidestPath => widest_path_decision(state),
    }
}

/// A baseline as a pluggable route policy.
#[derive(Debug, Clone, Copy)]
pub struct BaselinePolicy {
    pub kind: BaselineKind,
}

impl BaselinePolicy {
    pub fn new(kind: BaselineKind) -> Self {
        BaselinePolicy { kind }
    }
}

impl RoutePolicy for BaselinePolicy {
    fn decide(&mut self, state: &RouteState) -> Option<Decision> {
        baseline_decision(state, self.kind)
    }
}

/// Directed graph whose edge weight is the best achievable rate of that
/// link, used by the widest-path search.
///
/// Absent edges have weight 0; a path must use strictly positive edges.
#[derive(Debug, Clone)]
pub struct LinkGraph {
    num_nodes: usize,
    nodes: Vec<NodeId>,
    member: Vec<bool>,
    weights: Vec<f64>,
    best_resource: Vec<Option<CommResource>>,
}

impl LinkGraph {
    /// Graph over nodes `0..num_nodes` from an explicit row-major weight
    /// matrix. Weights must be finite and non-negative with a zero diagonal.
    pub fn from_weights(num_nodes: usize, weights: Vec<f64>) -> Result<Self, BaselineError> {
        if weights.len() != num_nodes * num_nodes {
            return Err(BaselineError::InvalidWeights(format!(
                "{} weights for {num_nodes} nodes",
                weights.len()
            )));
        }
        for (idx, &w) in weights.iter().enumerate() {
            let (a, b) = (idx / num_nodes, idx % num_nodes);
            if !w.is_finite() || w < 0.0 {
                return Err(BaselineError::InvalidWeights(format!(
                    "weight {w} on edge {a}→{b}"
                )));
            }
            if a == b && w != 0.0 {
                return Err(BaselineError::InvalidWeights(format!(
                    "self-edge {a}→{a} has weight {w}"
                )));
            }
        }
        Ok(LinkGraph {
            num_nodes,
            nodes: (0..num_nodes).collect(),
            member: vec![true; num_nodes],
            weights,
            best_resource: vec![None; num_nodes * num_nodes],
        })
    }

    /// Graph for one widest-path iteration: nodes are the frontier plus all
    /// unvisited active nodes; each edge weight is the maximum over
    /// resources of the link's rate under interference from the route's
    /// established transmitters. Edges leaving the frontier skip the
    /// previous hop's resource — only that first hop is actually executed.
    pub fn for_route_state(state: &RouteState) -> Self {
        let topo = state.topology();
        let n = topo.num_pool_nodes();
        let frontier = state.frontier();
        let mut nodes = state.unvisited_candidates();
        nodes.push(frontier);
        nodes.sort_unstable();
        let mut member = vec![false; n];
        for &v in &nodes {
            member[v] = true;
        }

        let mut weights = vec![0.0; n * n];
        let mut best_resource = vec![None; n * n];
        for &a in &nodes {
            for &b in &nodes {
                if a == b {
                    continue;
                }
                let mut best: Option<(f64, CommResource)> = None;
                for &resource in topo.resources() {
                    if a == frontier && Some(resource) == state.last_resource() {
                        continue;
                    }
                    let rate = link_rate(a, b, resource, state.established_tx(resource), topo)
                        .expect("graph nodes are active and distinct");
                    if best.is_none_or(|(w, _)| rate > w) {
                        best = Some((rate, resource));
                    }
                }
                if let Some((w, r)) = best {
                    weights[a * n + b] = w;
                    best_resource[a * n + b] = Some(r);
                }
            }
        }
        LinkGraph {
            num_nodes: n,
            nodes,
            member,
            weights,
            best_resource,
        }
    }

    /// Nodes present in the graph, ascending.
    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn weight(&self, a: NodeId, b: NodeId) -> f64 {
        self.weights[a * self.num_nodes + b]
    }

    /// The resource achieving `weight(a, b)`, when the graph was built from
    /// a route state.
    pub fn best_resource(&self, a: NodeId, b: NodeId) -> Option<CommResource> {
        self.best_resource[a * self.num_nodes + b]
    }
}

/// A widest path and its bottleneck weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WidePath {
    pub nodes: Vec<NodeId>,
    /// Minimum edge weight along the path; infinite for the trivial
    /// single-node path.
    pub bottleneck: f64,
}

/// Path from `src` to `dst` maximizing the minimum edge weight; ties go to
/// the fewest hops and then the lexicographically smallest node sequence.
///
/// Two phases, because the tie-broken objective is not prefix-monotone for
/// a single-label Dijkstra (a high-bottleneck long prefix would wrongly
/// dominate a low-bottleneck short one when a later edge caps both to the
/// same final bottleneck). Phase one is a scalar widest-path Dijkstra for
/// the optimal bottleneck B*; the max-bottleneck paths are then exactly the
/// paths using edges of weight ≥ B*, over which phase two runs a
/// breadth-first search keeping the lexicographically smallest path per
/// level — exact for hops-then-lex since every shortest path's prefix is a
/// shortest path.
pub fn widest_path(graph: &LinkGraph, src: NodeId, dst: NodeId) -> Result<WidePath, BaselineError> {
    for node in [src, dst] {
        if node >= graph.num_nodes || !graph.member[node] {
            return Err(BaselineError::UnknownNode { node });
        }
    }

    // Phase 1: best achievable bottleneck per node.
    let mut bottleneck = vec![f64::NEG_INFINITY; graph.num_nodes];
    let mut settled = vec![false; graph.num_nodes];
    bottleneck[src] = f64::INFINITY;
    loop {
        let mut current: Option<NodeId> = None;
        for &v in &graph.nodes {
            if settled[v] || bottleneck[v] == f64::NEG_INFINITY {
                continue;
            }
            if current.is_none_or(|c| bottleneck[v] > bottleneck[c]) {
                current = Some(v);
            }
        }
        let Some(u) = current else { break };
        settled[u] = true;
        if u == dst {
            break;
        }
        for &v in &graph.nodes {
            if settled[v] || v == u {
                continue;
            }
            let w = graph.weight(u, v);
            if w > 0.0 && bottleneck[u].min(w) > bottleneck[v] {
                bottleneck[v] = bottleneck[u].min(w);
            }
        }
    }
    let b_star = bottleneck[dst];
    if b_star == f64::NEG_INFINITY {
        return Err(BaselineError::Unreachable { src, dst });
    }

    // Phase 2: fewest hops, then lexicographically smallest, over the
    // subgraph of edges carrying at least B*.
    let mut best: Vec<Option<Vec<NodeId>>> = vec![None; graph.num_nodes];
    best[src] = Some(vec![src]);
    let mut frontier = vec![src];
    while best[dst].is_none() && !frontier.is_empty() {
        let mut candidates: Vec<Option<Vec<NodeId>>> = vec![None; graph.num_nodes];
        for &u in &frontier {
            for &v in &graph.nodes {
                if best[v].is_some() || v == u {
                    continue;
                }
                let w = graph.weight(u, v);
                if w <= 0.0 || w < b_star {
                    continue;
                }
                let mut path = best[u].clone().unwrap();
                path.push(v);
                if candidates[v].as_ref().is_none_or(|cur| &path < cur) {
                    candidates[v] = Some(path);
                }
            }
        }
        frontier.clear();
        for &v in &graph.nodes {
            if best[v].is_none() && candidates[v].is_some() {
                best[v] = candidates[v].take();
                frontier.push(v);
            }
        }
    }
    let nodes = best[dst]
        .take()
        .expect("phase 1 produced a witness path, so dst is reachable over edges ≥ B*");
    Ok(WidePath {
        nodes,
        bottleneck: b_star,
    })
}

/// First hop of the current widest path, with that edge's best resource.
fn widest_path_decision(state: &RouteState) -> Option<Decision> {
    let graph = LinkGraph::for_route_state(state);
    let path = widest_path(&graph, state.frontier(), state.topology().destination()).ok()?;
    let next = path.nodes[1];
    let resource = graph
        .best_resource(state.frontier(), next)
        .expect("a traversed edge has a best resource");
    Some(Decision {
        next_node: next,
        resource,
    })
}
