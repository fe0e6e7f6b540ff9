//! Exhaustive route search.
//!
//! Enumerates every loop-free route from source to destination together with
//! every legal per-hop resource assignment, scoring each completed route by
//! its end-to-end bottleneck rate. The result is the exact optimum — the
//! yardstick learned policies and heuristic baselines are measured against
//! on small instances.
//!
//! Candidates are tried in ascending node order and resources in canonical
//! order, and only a strict improvement replaces the incumbent, so the
//! reported route is unique and deterministic. A branch is cut as soon as
//! its partial bottleneck fails to beat the incumbent; extending a route
//! adds hops to the minimum and adds interference to hops already carried
//! on the reused resource, so the partial bottleneck can only fall and the
//! cut is exact. The route space still grows factorially with the active
//! set, so instances beyond a configurable node budget are refused.

use thiserror::Error;

use crate::channel::CommResource;
use crate::netmodel::{link_rate, NetModelError, Route, Topology};
use crate::NodeId;

/// Largest active set [`exhaustive_optimum`] accepts by default.
pub const DEFAULT_MAX_ACTIVE_NODES: usize = 9;

/// Errors from the exhaustive search.
#[derive(Debug, Error)]
pub enum OracleError {
    /// The instance is too large to enumerate.
    #[error(
        "{active} active nodes exceed the exhaustive-search budget of {limit} \
         (the route space grows factorially with the active set)"
    )]
    TooManyNodes { active: usize, limit: usize },
    /// Rate evaluation failed; only an inconsistent topology can cause this.
    #[error(transparent)]
    Net(#[from] NetModelError),
}

/// Search limits.
#[derive(Debug, Clone, Copy)]
pub struct OracleOptions {
    /// Refuse instances with more active nodes than this.
    pub max_active_nodes: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            max_active_nodes: DEFAULT_MAX_ACTIVE_NODES,
        }
    }
}

/// The exact optimum for one instance.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    /// The best route; first in search order among rate ties.
    pub route: Route,
    /// Its end-to-end bottleneck rate, bits/s.
    pub rate_bps: f64,
    /// Complete routes actually scored. Cut branches never complete, so this
    /// is an audit figure, not the size of the route space.
    pub routes_enumerated: u64,
}

/// Finds the routing optimum by exhaustive search.
///
/// Every topology admits at least the direct source→destination hop, so a
/// best route always exists (its rate may be arbitrarily low). Instances
/// with more active nodes than `options.max_active_nodes` are refused with
/// [`OracleError::TooManyNodes`] rather than searched for hours.
pub fn exhaustive_optimum(
    topo: &Topology,
    options: OracleOptions,
) -> Result<OracleSolution, OracleError> {
    let active = topo.active().len();
    if active > options.max_active_nodes {
        return Err(OracleError::TooManyNodes {
            active,
            limit: options.max_active_nodes,
        });
    }

    let mut search = Search {
        topo,
        visited: vec![false; topo.num_pool_nodes()],
        nodes: vec![topo.source()],
        hop_resources: Vec::new(),
        rates: Vec::new(),
        undo: Vec::new(),
        interferers: Vec::new(),
        best: None,
        best_rate: f64::NEG_INFINITY,
        completions: 0,
    };
    search.visited[topo.source()] = true;
    search.dfs()?;

    let (nodes, resources) = search.best.expect("the direct hop always completes");
    let route = Route { nodes, resources };
    debug_assert!(route.validate(topo).is_ok());
    Ok(OracleSolution {
        route,
        rate_bps: search.best_rate,
        routes_enumerated: search.completions,
    })
}

/// Depth-first search state: the partial route, its per-hop rates under the
/// transmitters established so far, and the incumbent.
struct Search<'a> {
    topo: &'a Topology,
    visited: Vec<bool>,
    nodes: Vec<NodeId>,
    hop_resources: Vec<CommResource>,
    /// `rates[i]` is hop `i`'s rate given every same-resource transmitter
    /// currently on the route; the partial bottleneck is their minimum.
    rates: Vec<f64>,
    /// Saved `(hop, rate)` pairs so a pop can rewind `rates` exactly.
    undo: Vec<(usize, f64)>,
    /// Scratch interferer list, reused across rate evaluations.
    interferers: Vec<NodeId>,
    best: Option<(Vec<NodeId>, Vec<CommResource>)>,
    best_rate: f64,
    completions: u64,
}

impl Search<'_> {
    fn dfs(&mut self) -> Result<(), NetModelError> {
        let last_resource = self.hop_resources.last().copied();
        for ci in 0..self.topo.active().len() {
            let next = self.topo.active()[ci];
            if self.visited[next] {
                continue;
            }
            for ri in 0..self.topo.resources().len() {
                let resource = self.topo.resources()[ri];
                if Some(resource) == last_resource {
                    continue;
                }
                let undo_mark = self.undo.len();
                let bottleneck = self.push_hop(next, resource)?;
                if next == self.topo.destination() {
                    self.completions += 1;
                    if bottleneck > self.best_rate {
                        self.best_rate = bottleneck;
                        self.best = Some((self.nodes.clone(), self.hop_resources.clone()));
                    }
                } else if bottleneck > self.best_rate {
                    self.dfs()?;
                }
                self.pop_hop(undo_mark);
            }
        }
        Ok(())
    }

    /// Appends the hop frontier → `next` on `resource`, refreshing the rate
    /// of every hop that shares the resource (each gains an interferer), and
    /// returns the new partial bottleneck.
    fn push_hop(&mut self, next: NodeId, resource: CommResource) -> Result<f64, NetModelError> {
        self.visited[next] = true;
        self.nodes.push(next);
        self.hop_resources.push(resource);
        for i in 0..self.hop_resources.len() {
            if self.hop_resources[i] != resource {
                continue;
            }
            self.interferers.clear();
            for j in 0..self.hop_resources.len() {
                if j != i && self.hop_resources[j] == resource {
                    let tx = self.nodes[j];
                    self.interferers.push(tx);
                }
            }
            let rate = link_rate(
                self.nodes[i],
                self.nodes[i + 1],
                resource,
                &self.interferers,
                self.topo,
            )?;
            if i < self.rates.len() {
                self.undo.push((i, self.rates[i]));
                self.rates[i] = rate;
            } else {
                self.rates.push(rate);
            }
        }
        Ok(self.rates.iter().copied().fold(f64::INFINITY, f64::min))
    }

    /// Reverses the matching [`push_hop`](Self::push_hop).
    fn pop_hop(&mut self, undo_mark: usize) {
        let last = self.nodes.pop().unwrap();
        self.visited[last] = false;
        self.hop_resources.pop();
        self.rates.pop();
        while self.undo.len() > undo_mark {
            let (i, rate) = self.undo.pop().unwrap();
            self.rates[i] = rate;
        }
    }
}
