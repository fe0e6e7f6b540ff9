//! Helpers shared by the integration suites: a fast experiment config and
//! independent reference implementations that the optimized code is checked
//! against.
#![allow(dead_code)]

use route_sim::channel::CommResource;
use route_sim::harness::{ExperimentConfig, TechnologyConfig};
use route_sim::netmodel::{end_to_end_rate, Route, Topology};
use route_sim::NodeId;

/// A small, fast experiment: 7-node pool, 5 active per topology, two
/// technologies with two subbands each.
pub fn tiny_config() -> ExperimentConfig {
    ExperimentConfig {
        num_relays: 5,
        relay_subset_size: 3,
        source_id: 5,
        destination_id: 6,
        technologies: vec![
            TechnologyConfig {
                center_frequency_hz: 400e6,
                num_subbands: 2,
                total_bandwidth_hz: None,
            },
            TechnologyConfig {
                center_frequency_hz: 2.4e9,
                num_subbands: 2,
                total_bandwidth_hz: None,
            },
        ],
        num_neighbors: 3,
        train_episodes: 40,
        eval_topologies: 6,
        replay_capacity: 256,
        batch_size: 16,
        ..ExperimentConfig::default()
    }
}

/// Exhaustive reference optimum: every loop-free route and legal resource
/// assignment, scored from scratch, no pruning. Candidates ascend, resources
/// follow canonical order, and only a strict improvement replaces the best,
/// mirroring the search order the optimized implementation documents.
pub fn unpruned_best(topo: &Topology) -> (Route, f64) {
    fn recurse(
        topo: &Topology,
        nodes: &mut Vec<NodeId>,
        resources: &mut Vec<CommResource>,
        visited: &mut [bool],
        best: &mut Option<(Route, f64)>,
    ) {
        let last_resource = resources.last().copied();
        for &next in topo.active() {
            if visited[next] {
                continue;
            }
            for &r in topo.resources() {
                if Some(r) == last_resource {
                    continue;
                }
                nodes.push(next);
                resources.push(r);
                visited[next] = true;
                if next == topo.destination() {
                    let route = Route {
                        nodes: nodes.clone(),
                        resources: resources.clone(),
                    };
                    let rate = end_to_end_rate(&route, topo).unwrap();
                    if best.as_ref().is_none_or(|(_, b)| rate > *b) {
                        *best = Some((route, rate));
                    }
                } else {
                    recurse(topo, nodes, resources, visited, best);
                }
                visited[next] = false;
                resources.pop();
                nodes.pop();
            }
        }
    }

    let mut nodes = vec![topo.source()];
    let mut resources = Vec::new();
    let mut visited = vec![false; topo.num_pool_nodes()];
    visited[topo.source()] = true;
    let mut best = None;
    recurse(topo, &mut nodes, &mut resources, &mut visited, &mut best);
    best.expect("the direct hop always completes")
}

/// Reference widest path by brute force: enumerate every simple path from
/// `src` to `dst` over strictly positive edges of the row-major `weights`
/// matrix and keep the best by (bottleneck desc, hops asc, lexicographic).
pub fn brute_force_widest(
    n: usize,
    weights: &[f64],
    src: NodeId,
    dst: NodeId,
) -> Option<(Vec<NodeId>, f64)> {
    fn better(bottleneck: f64, path: &[NodeId], cur: &Option<(Vec<NodeId>, f64)>) -> bool {
        match cur {
            None => true,
            Some((best_path, best_b)) => match bottleneck.total_cmp(best_b) {
                std::cmp::Ordering::Greater => true,
                std::cmp::Ordering::Less => false,
                std::cmp::Ordering::Equal => match path.len().cmp(&best_path.len()) {
                    std::cmp::Ordering::Less => true,
                    std::cmp::Ordering::Greater => false,
                    std::cmp::Ordering::Equal => path < &best_path[..],
                },
            },
        }
    }

    fn recurse(
        n: usize,
        weights: &[f64],
        dst: NodeId,
        path: &mut Vec<NodeId>,
        visited: &mut [bool],
        bottleneck: f64,
        best: &mut Option<(Vec<NodeId>, f64)>,
    ) {
        let u = *path.last().unwrap();
        if u == dst {
            if better(bottleneck, path, best) {
                *best = Some((path.clone(), bottleneck));
            }
            return;
        }
        for v in 0..n {
            if visited[v] {
                continue;
            }
            let w = weights[u * n + v];
            if w <= 0.0 {
                continue;
            }
            visited[v] = true;
            path.push(v);
            recurse(n, weights, dst, path, visited, bottleneck.min(w), best);
            path.pop();
            visited[v] = false;
        }
    }

    let mut path = vec![src];
    let mut visited = vec![false; n];
    visited[src] = true;
    let mut best = None;
    recurse(
        n,
        weights,
        dst,
        &mut path,
        &mut visited,
        f64::INFINITY,
        &mut best,
    );
    best
}
