//! Simulator for joint next-hop and communication-resource selection in
//! multi-hop heterogeneous wireless networks.
//!
//! A flow must travel from a source to a destination over relay nodes, where
//! every hop picks both the next node and the radio resource (a technology /
//! subband pair) it transmits on. Reusing a resource inside the flow causes
//! intra-flow interference; the objective is the end-to-end bottleneck rate,
//! i.e. the minimum single-hop rate along the route.
//!
//! The crate is layered bottom-up:
//!
//! * [`channel`] — per-technology link gains (synthetic log-distance model or
//!   an ingested gain grid).
//! * [`netmodel`] — SINR, single-hop rate and end-to-end bottleneck rate.
//! * [`routing`] — the hop-by-hop route construction state machine that any
//!   decision policy plugs into.
//! * [`neighbors`] — candidate next-hop selection strategies (distance /
//!   channel / rate based).
//! * [`nn`] — a small dense network with a dueling value/advantage head,
//!   analytic backpropagation and Adam.
//! * [`agent`] — the DQN routing policy: featurization, ε-greedy action
//!   selection over (resource, neighbor) pairs, replay training loop.
//! * [`baselines`] — greedy one-step policies and the widest-path policy.
//! * [`oracle`] — exhaustive search for the true optimum on small instances.
//! * [`harness`] — experiment configuration, topology sampling, train / eval /
//!   bench / oracle orchestration behind the `route-sim` CLI.

pub mod agent;
pub mod baselines;
pub mod channel;
pub mod harness;
pub mod neighbors;
pub mod netmodel;
pub mod nn;
pub mod oracle;
pub mod routing;
pub mod seeds;

/// Node identifier: an index into the position table of the node pool.
pub type NodeId = usize;
