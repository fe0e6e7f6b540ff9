//! SINR, single-hop rate and end-to-end bottleneck rate for a route.
//!
//! Every hop transmits with the same power on one communication resource.
//! Hops of the same flow that share a resource interfere with each other
//! (intra-flow interference); hops on different resources do not. The
//! end-to-end rate of a route is the minimum hop rate, evaluated with the
//! complete route's transmitter set — including hops established after the
//! one under evaluation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{enumerate_resources, ChannelTable, CommResource, Technology};
use crate::NodeId;

/// Radio-level constants shared by all nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadioParams {
    /// Transmit power of every node, watts.
    pub transmit_power_w: f64,
    /// Noise spectral density N₀, watts/Hz.
    pub noise_density_w_per_hz: f64,
    /// Analysis switch: when false, SINR denominators contain thermal noise
    /// only and all interference terms are dropped.
    pub interference_enabled: bool,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams {
            transmit_power_w: 1.0,
            noise_density_w_per_hz: 1e-17,
            interference_enabled: true,
        }
    }
}

/// Errors from rate computations and topology construction.
#[derive(Debug, Error)]
pub enum NetModelError {
    #[error("invalid topology: {reason}")]
    InvalidTopology { reason: String },
    #[error("transmitter and receiver are the same node {node}")]
    SelfLink { node: NodeId },
    #[error("node {node} is not active in this topology")]
    InactiveNode { node: NodeId },
    #[error("interferer {node} coincides with the transmitter or receiver")]
    InterfererConflict { node: NodeId },
    #[error("unknown resource: technology {technology}, subband {subband}")]
    UnknownResource { technology: usize, subband: usize },
    #[error(transparent)]
    Route(#[from] RouteViolation),
}

/// A broken route constraint; the message names the violated rule.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum RouteViolation {
    #[error("route has fewer than two nodes (no hops)")]
    TooShort,
    #[error("route has {nodes} nodes but {resources} resources; expected one resource per hop")]
    LengthMismatch { nodes: usize, resources: usize },
    #[error("route starts at {got}, not the source {expected}")]
    WrongSource { got: NodeId, expected: NodeId },
    #[error("route ends at {got}, not the destination {expected}")]
    WrongDestination { got: NodeId, expected: NodeId },
    #[error("node {node} appears twice: routes must be loop-free")]
    RepeatedNode { node: NodeId },
    #[error("hops {} and {hop} use the same resource: adjacent hops must differ", hop - 1)]
    AdjacentResourceRepeat { hop: usize },
    #[error("node {node} is not active in this topology")]
    InactiveNode { node: NodeId },
    #[error("unknown resource: technology {technology}, subband {subband}")]
    UnknownResource { technology: usize, subband: usize },
}

/// An established source→destination route: the node sequence and the
/// resource of each hop (`resources[i]` carries hop `nodes[i] → nodes[i+1]`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    pub nodes: Vec<NodeId>,
    pub resources: Vec<CommResource>,
}

impl Route {
    /// Number of hops.
    pub fn hops(&self) -> usize {
        self.resources.len()
    }

    /// Checks every route constraint against a topology: well-formed lengths,
    /// correct endpoints, loop-freedom, adjacent-hop resource distinctness,
    /// active membership and resource validity.
    pub fn validate(&self, topo: &Topology) -> Result<(), RouteViolation> {
        if self.nodes.len() < 2 {
            return Err(RouteViolation::TooShort);
        }
        if self.resources.len() + 1 != self.nodes.len() {
            return Err(RouteViolation::LengthMismatch {
                nodes: self.nodes.len(),
                resources: self.resources.len(),
            });
        }
        let first = self.nodes[0];
        if first != topo.source() {
            return Err(RouteViolation::WrongSource {
                got: first,
                expected: topo.source(),
            });
        }
        let last = *self.nodes.last().unwrap();
        if last != topo.destination() {
            return Err(RouteViolation::WrongDestination {
                got: last,
                expected: topo.destination(),
            });
        }
        let mut seen = vec![false; topo.num_pool_nodes()];
        for &n in &self.nodes {
            if !topo.is_active(n) {
                return Err(RouteViolation::InactiveNode { node: n });
            }
            if seen[n] {
                return Err(RouteViolation::RepeatedNode { node: n });
            }
            seen[n] = true;
        }
        for (hop, r) in self.resources.iter().enumerate() {
            if topo.resolve(*r).is_err() {
                return Err(RouteViolation::UnknownResource {
                    technology: r.technology,
                    subband: r.subband,
                });
            }
            if hop > 0 && *r == self.resources[hop - 1] {
                return Err(RouteViolation::AdjacentResourceRepeat { hop });
            }
        }
        Ok(())
    }
}

/// An immutable network instance: node pool geometry, the active subset, the
/// flow endpoints, the technology list and the gain table.
///
/// Node ids index the pool; only active nodes may appear in routes. The
/// technology list is canonical: `technologies[i].id == i`, and resource
/// indices refer to positions in this list.
#[derive(Debug, Clone)]
pub struct Topology {
    positions: Vec<[f64; 3]>,
    active: Vec<NodeId>,
    active_mask: Vec<bool>,
    source: NodeId,
    destination: NodeId,
    technologies: Vec<Technology>,
    resources: Vec<CommResource>,
    channels: ChannelTable,
    radio: RadioParams,
}

impl Topology {
    pub fn new(
        positions: Vec<[f64; 3]>,
        active: Vec<NodeId>,
        source: NodeId,
        destination: NodeId,
        technologies: Vec<Technology>,
        channels: ChannelTable,
        radio: RadioParams,
    ) -> Result<Self, NetModelError> {
        let fail = |reason: String| Err(NetModelError::InvalidTopology { reason });
        if positions.is_empty() {
            return fail("node pool is empty".into());
        }
        if positions.iter().flatten().any(|c| !c.is_finite()) {
            return fail("node positions must be finite".into());
        }
        if technologies.is_empty() {
            return fail("at least one technology is required".into());
        }
        for (i, t) in technologies.iter().enumerate() {
            if t.id != i {
                return fail(format!(
                    "technology ids must equal their list position: id {} at position {i}",
                    t.id
                ));
            }
            if t.num_subbands == 0
                || !t.center_frequency_hz.is_finite()
                || t.center_frequency_hz <= 0.0
                || !t.total_bandwidth_hz.is_finite()
                || t.total_bandwidth_hz <= 0.0
            {
                return fail(format!("technology {i} has invalid parameters"));
            }
        }
        if let Err(e) = channels.check_dimensions(positions.len(), technologies.len()) {
            return fail(e.to_string());
        }
        if !(radio.transmit_power_w.is_finite() && radio.transmit_power_w > 0.0) {
            return fail("transmit power must be positive".into());
        }
        if !(radio.noise_density_w_per_hz.is_finite() && radio.noise_density_w_per_hz > 0.0) {
            return fail("noise density must be positive".into());
        }

        let mut active = active;
        active.sort_unstable();
        active.dedup();
        if let Some(&bad) = active.iter().find(|&&n| n >= positions.len()) {
            return fail(format!("active node {bad} is outside the pool"));
        }
        if source == destination {
            return fail(format!("source and destination are both node {source}"));
        }
        let mut active_mask = vec![false; positions.len()];
        for &n in &active {
            active_mask[n] = true;
        }
        if !active_mask.get(source).copied().unwrap_or(false) {
            return fail(format!("source {source} is not in the active set"));
        }
        if !active_mask.get(destination).copied().unwrap_or(false) {
            return fail(format!("destination {destination} is not in the active set"));
        }
        // Bearings and distances between flow participants must be well
        // defined, so active nodes may not share positions.
        for (i, &a) in active.iter().enumerate() {
            for &b in &active[i + 1..] {
                if positions[a] == positions[b] {
                    return fail(format!("active nodes {a} and {b} share a position"));
                }
            }
        }

        let resources = enumerate_resources(&technologies);
        Ok(Topology {
            positions,
            active,
            active_mask,
            source,
            destination,
            technologies,
            resources,
            channels,
            radio,
        })
    }

    /// Total pool size (active and inactive nodes).
    pub fn num_pool_nodes(&self) -> usize {
        self.positions.len()
    }

    /// Position of a pool node, meters.
    pub fn position(&self, node: NodeId) -> [f64; 3] {
        self.positions[node]
    }

    /// Active node ids, ascending.
    pub fn active(&self) -> &[NodeId] {
        &self.active
    }

    pub fn is_active(&self, node: NodeId) -> bool {
        self.active_mask.get(node).copied().unwrap_or(false)
    }

    pub fn source(&self) -> NodeId {
        self.source
    }

    pub fn destination(&self) -> NodeId {
        self.destination
    }

    pub fn technologies(&self) -> &[Technology] {
        &self.technologies
    }

    /// All communication resources in canonical (technology-major) order.
    pub fn resources(&self) -> &[CommResource] {
        &self.resources
    }

    pub fn channels(&self) -> &ChannelTable {
        &self.channels
    }

    pub fn radio(&self) -> &RadioParams {
        &self.radio
    }

    /// Euclidean distance between two pool nodes, meters.
    pub fn distance(&self, a: NodeId, b: NodeId) -> f64 {
        let pa = self.positions[a];
        let pb = self.positions[b];
        let dx = pa[0] - pb[0];
        let dy = pa[1] - pb[1];
        let dz = pa[2] - pb[2];
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    /// Resolves a resource to its technology, rejecting out-of-range indices.
    pub fn resolve(&self, resource: CommResource) -> Result<&Technology, NetModelError> {
        let tech = self.technologies.get(resource.technology).ok_or({
            NetModelError::UnknownResource {
                technology: resource.technology,
                subband: resource.subband,
            }
        })?;
        if resource.subband >= tech.num_subbands {
            return Err(NetModelError::UnknownResource {
                technology: resource.technology,
                subband: resource.subband,
            });
        }
        Ok(tech)
    }
}

/// Angle in [0, π] between the `from → toward_a` and `from → toward_b`
/// directions; 0 when either direction degenerates to a point.
pub fn bearing_angle(from: [f64; 3], toward_a: [f64; 3], toward_b: [f64; 3]) -> f64 {
    let u = [
        toward_a[0] - from[0],
        toward_a[1] - from[1],
        toward_a[2] - from[2],
    ];
    let v = [
        toward_b[0] - from[0],
        toward_b[1] - from[1],
        toward_b[2] - from[2],
    ];
    let dot = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    let nu = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    let nv = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (dot / (nu * nv)).clamp(-1.0, 1.0).acos()
}

/// Thermal noise power in one subband of a technology: subband bandwidth
/// times the noise spectral density.
pub fn noise_power(tech: &Technology, radio: &RadioParams) -> f64 {
    tech.subband_bandwidth_hz() * radio.noise_density_w_per_hz
}

/// Shannon rate of one subband: `bandwidth · log₂(1 + sinr)`, bits/s.
pub fn spectral_rate(subband_bandwidth_hz: f64, sinr: f64) -> f64 {
    subband_bandwidth_hz * (1.0 + sinr).log2()
}

/// Signal-to-interference-plus-noise ratio at `receiver` for a transmission
/// from `signal_tx` on `resource`, with `interferers` transmitting
/// concurrently on the same resource.
pub fn sinr(
    receiver: NodeId,
    signal_tx: NodeId,
    resource: CommResource,
    interferers: &[NodeId],
    topo: &Topology,
) -> Result<f64, NetModelError> {
    if receiver == signal_tx {
        return Err(NetModelError::SelfLink { node: receiver });
    }
    for &n in [receiver, signal_tx].iter().chain(interferers) {
        if !topo.is_active(n) {
            return Err(NetModelError::InactiveNode { node: n });
        }
    }
    for &k in interferers {
        if k == signal_tx || k == receiver {
            return Err(NetModelError::InterfererConflict { node: k });
        }
    }
    let tech = topo.resolve(resource)?;
    let p = topo.radio().transmit_power_w;
    let signal = p * topo.channels().gain(resource.technology, signal_tx, receiver);
    let mut denom = noise_power(tech, topo.radio());
    if topo.radio().interference_enabled {
        for &k in interferers {
            denom += p * topo.channels().gain(resource.technology, k, receiver);
        }
    }
    Ok(signal / denom)
}

/// Achievable rate of the single hop `tx → rx` on `resource`, bits/s.
pub fn link_rate(
    tx: NodeId,
    rx: NodeId,
    resource: CommResource,
    interferers: &[NodeId],
    topo: &Topology,
) -> Result<f64, NetModelError> {
    let s = sinr(rx, tx, resource, interferers, topo)?;
    let tech = topo.resolve(resource)?;
    Ok(spectral_rate(tech.subband_bandwidth_hz(), s))
}

/// End-to-end bottleneck rate of a complete route: the minimum hop rate,
/// where each hop is interfered by every *other* route transmitter that uses
/// the same resource — regardless of hop order.
pub fn end_to_end_rate(route: &Route, topo: &Topology) -> Result<f64, NetModelError> {
    route.validate(topo)?;
    let mut bottleneck = f64::INFINITY;
    let mut interferers = Vec::new();
    for i in 0..route.hops() {
        interferers.clear();
        for j in 0..route.hops() {
            if j != i && route.resources[j] == route.resources[i] {
                interferers.push(route.nodes[j]);
            }
        }
        let rate = link_rate(
            route.nodes[i],
            route.nodes[i + 1],
            route.resources[i],
            &interferers,
            topo,
        )?;
        bottleneck = bottleneck.min(rate);
    }
    Ok(bottleneck)
}
