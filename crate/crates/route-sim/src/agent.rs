//! The learned routing policy.
//!
//! At each hop the agent ranks candidate next hops (see [`crate::neighbors`]),
//! featurizes them once per legal resource, runs the shared Q-network on each
//! feature vector, and takes the globally best (resource, candidate) pair.
//! Training is episodic with experience replay: the route's terminal
//! bottleneck rate is the reward for every decision along it, and the network
//! regresses Q-values directly onto those terminal rewards.

use ndarray::Array2;
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::CommResource;
use crate::neighbors::{select_for_state, NeighborSet, NeighborStrategy};
use crate::netmodel::{bearing_angle, Topology};
use crate::nn::{AdamParams, NnError, OptimizerState, QNetwork, FEATURES_PER_SLOT};
use crate::routing::{
    legal_resources, run_episode, Decision, RoutePolicy, RouteState, RoutingError,
};
use crate::seeds;

/// Errors from policy execution and training.
#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error("training diverged at episode {episode}: loss {loss}")]
    NonFiniteLoss { episode: usize, loss: f64 },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
}

/// Normalization constants mapping raw physical quantities into the ≈[0,1]
/// ranges the network consumes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    /// Distances are divided by this (the arena diagonal).
    pub arena_diagonal_m: f64,
    /// Gains and interference powers are converted to dB and mapped affinely
    /// from [floor, ceil] onto [0, 1], clamped outside.
    pub gain_db_floor: f64,
    pub gain_db_ceil: f64,
}

impl FeatureScaling {
    /// Scaling for a rectangular arena with the default −150…−30 dB dynamic
    /// range.
    pub fn for_arena(dims: [f64; 3]) -> Self {
        FeatureScaling {
            arena_diagonal_m: (dims[0] * dims[0] + dims[1] * dims[1] + dims[2] * dims[2]).sqrt(),
            gain_db_floor: -150.0,
            gain_db_ceil: -30.0,
        }
    }

    /// Affine dB squash of a linear power quantity; exact 0.0 for zero power
    /// (nothing transmitting) rather than the dB of nothing.
    fn squash_power(&self, linear: f64) -> f64 {
        if linear <= 0.0 {
            return 0.0;
        }
        let db = 10.0 * linear.log10();
        ((db - self.gain_db_floor) / (self.gain_db_ceil - self.gain_db_floor)).clamp(0.0, 1.0)
    }
}

/// Everything `choose_action` needs besides the network itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    /// Candidate slots per decision (the network's action axis).
    pub n_e: usize,
    pub strategy: NeighborStrategy,
    pub scaling: FeatureScaling,
}

/// Builds the state vector for one (neighbor set, resource) pair.
///
/// Four features per slot: (a) neighbor→destination distance over the arena
/// diagonal, (b) bearing difference toward destination vs. neighbor over π,
/// (c) frontier→neighbor gain on the resource's technology, dB-squashed, and
/// (d) total interference power received at the neighbor from the route's
/// established transmitters on this resource, dB-squashed — exactly 0.0 when
/// nothing transmits there (or the world models no interference). Padded
/// slots are all-zero. Length is always `4·num_slots`.
pub fn featurize(
    state: &RouteState,
    neighbors: &NeighborSet,
    resource: CommResource,
    scaling: &FeatureScaling,
) -> Vec<f64> {
    let topo = state.topology();
    let frontier = state.frontier();
    let dest = topo.destination();
    let tech = resource.technology;
    let radio = topo.radio();
    let mut features = vec![0.0; FEATURES_PER_SLOT * neighbors.num_slots()];
    for (i, &neighbor) in neighbors.nodes().iter().enumerate() {
        let base = i * FEATURES_PER_SLOT;
        features[base] = topo.distance(neighbor, dest) / scaling.arena_diagonal_m;
        features[base + 1] = bearing_angle(
            topo.position(frontier),
            topo.position(dest),
            topo.position(neighbor),
        ) / std::f64::consts::PI;
        features[base + 2] = scaling.squash_power(topo.channels().gain(tech, frontier, neighbor));
        let interference: f64 = if radio.interference_enabled {
            state
                .established_tx(resource)
                .iter()
                .map(|&tx| radio.transmit_power_w * topo.channels().gain(tech, tx, neighbor))
                .sum()
        } else {
            0.0
        };
        features[base + 3] = scaling.squash_power(interference);
    }
    features
}

/// A committed action: the routing decision plus what the learner must
/// remember about it.
#[derive(Debug, Clone)]
pub struct ActionChoice {
    pub decision: Decision,
    /// Index of the chosen candidate slot (the network's action index).
    pub slot: usize,
    /// Feature vector under which the choice was made (for the chosen
    /// resource).
    pub features: Vec<f64>,
}

/// ε-greedy action selection over every legal (resource, candidate) pair.
///
/// With probability ε a uniformly random legal pair is taken; otherwise each
/// legal resource is featurized, the network scores all its slots in one
/// batch, and the globally highest Q wins. Ties break toward the lowest
/// (resource index, slot index). Returns `None` when no legal action exists,
/// which fails the episode.
pub fn choose_action(
    state: &RouteState,
    net: &QNetwork,
    cfg: &PolicyConfig,
    epsilon: f64,
    rng: &mut impl Rng,
) -> Option<ActionChoice> {
    let resources = legal_resources(state);
    if resources.is_empty() {
        return None;
    }
    let neighbors = select_for_state(cfg.strategy, state, cfg.n_e);
    if neighbors.is_empty() {
        return None;
    }

    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        let pair = rng.random_range(0..resources.len() * neighbors.len());
        let resource = resources[pair / neighbors.len()];
        let slot = pair % neighbors.len();
        let features = featurize(state, &neighbors, resource, &cfg.scaling);
        return Some(ActionChoice {
            decision: Decision {
                next_node: neighbors.slot(slot).unwrap(),
                resource,
            },
            slot,
            features,
        });
    }

    let width = FEATURES_PER_SLOT * neighbors.num_slots();
    let mut rows = Vec::with_capacity(resources.len() * width);
    for &resource in &resources {
        rows.extend(featurize(state, &neighbors, resource, &cfg.scaling));
    }
    let states = Array2::from_shape_vec((resources.len(), width), rows).unwrap();
    let q = net
        .forward_batch(states.view())
        .expect("feature width matches the network");

    let mut best: Option<(f64, usize, usize)> = None;
    for r in 0..resources.len() {
        for slot in 0..neighbors.len() {
            let value = q[[r, slot]];
            if best.is_none_or(|(bv, _, _)| value > bv) {
                best = Some((value, r, slot));
            }
        }
    }
    let (_, r, slot) = best.unwrap();
    Some(ActionChoice {
        decision: Decision {
            next_node: neighbors.slot(slot).unwrap(),
            resource: resources[r],
        },
        slot,
        features: states.row(r).to_vec(),
    })
}

/// One replay entry: the state under which an action was taken, the action,
/// and the terminal reward of its episode.
#[derive(Debug, Clone)]
pub struct Experience {
    pub state: Vec<f64>,
    pub resource: CommResource,
    /// Candidate slot index; never a padded slot.
    pub action: usize,
    /// Episode reward, normalized; identical for every entry of one episode.
    pub reward: f64,
}

/// Fixed-capacity ring buffer with uniform with-replacement sampling.
#[derive(Debug)]
pub struct ReplayBuffer {
    entries: Vec<Experience>,
    capacity: usize,
    write: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer needs capacity");
        ReplayBuffer {
            entries: Vec::with_capacity(capacity.min(1 << 20)),
            capacity,
            write: 0,
        }
    }

    pub fn push(&mut self, exp: Experience) {
        if self.entries.len() < self.capacity {
            self.entries.push(exp);
        } else {
            self.entries[self.write] = exp;
        }
        self.write = (self.write + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Experience] {
        &self.entries
    }

    /// `batch` entries drawn uniformly with replacement.
    pub fn sample<'a>(&'a self, batch: usize, rng: &mut impl Rng) -> Vec<&'a Experience> {
        (0..batch)
            .map(|_| &self.entries[rng.random_range(0..self.entries.len())])
            .collect()
    }
}

/// Linear ε decay with a zero tail.
///
/// ε falls linearly from `start` to `end` over the first
/// `1 − zero_tail_fraction` of episodes, then is exactly 0 for the rest, so
/// the final stretch of training is fully greedy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub zero_tail_fraction: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            start: 1.0,
            end: 0.05,
            zero_tail_fraction: 0.2,
        }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, episode: usize, total_episodes: usize) -> f64 {
        let decay_len =
            ((1.0 - self.zero_tail_fraction) * total_episodes as f64).round() as usize;
        if episode >= decay_len {
            return 0.0;
        }
        let span = decay_len.saturating_sub(1).max(1) as f64;
        self.start + (self.end - self.start) * episode as f64 / span
    }
}

/// Training-loop configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub episodes: usize,
    pub policy: PolicyConfig,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Gradient steps per episode once the buffer holds a full batch.
    pub grad_steps_per_episode: usize,
    pub adam: AdamParams,
    pub epsilon: EpsilonSchedule,
    /// Discount factor. Kept for completeness; the reward is terminal-only
    /// (the route's bottleneck rate with no bootstrapped continuation), so
    /// the default pipeline never multiplies by it.
    pub gamma: f64,
    /// Rewards are bits/s divided by this, keeping regression targets O(1).
    pub reward_reference_bps: f64,
    /// Hop budget per episode; `None` means the number of active nodes.
    pub max_hops: Option<usize>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let mut problems = Vec::new();
        if self.episodes == 0 {
            problems.push("episodes must be positive".to_string());
        }
        if self.policy.n_e == 0 {
            problems.push("n_e must be positive".to_string());
        }
        if self.replay_capacity < self.batch_size {
            problems.push(format!(
                "replay capacity {} below batch size {}",
                self.replay_capacity, self.batch_size
            ));
        }
        if self.batch_size == 0 {
            problems.push("batch size must be positive".to_string());
        }
        if !self.reward_reference_bps.is_finite() || self.reward_reference_bps <= 0.0 {
            problems.push("reward reference rate must be positive".to_string());
        }
        if !(0.0..=1.0).contains(&self.epsilon.zero_tail_fraction) {
            problems.push("epsilon zero tail must be in [0, 1]".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(AgentError::InvalidConfig(problems.join("; ")))
        }
    }
}

/// The Q-network wrapped as a [`RoutePolicy`], recording each decision's
/// (features, resource, slot) for replay.
pub struct DqnRoutePolicy<'a, R: Rng> {
    net: &'a QNetwork,
    cfg: &'a PolicyConfig,
    epsilon: f64,
    rng: &'a mut R,
    trajectory: Vec<(Vec<f64>, CommResource, usize)>,
}

impl<'a, R: Rng> DqnRoutePolicy<'a, R> {
    pub fn new(net: &'a QNetwork, cfg: &'a PolicyConfig, epsilon: f64, rng: &'a mut R) -> Self {
        DqnRoutePolicy {
            net,
            cfg,
            epsilon,
            rng,
            trajectory: Vec::new(),
        }
    }

    pub fn into_trajectory(self) -> Vec<(Vec<f64>, CommResource, usize)> {
        self.trajectory
    }
}

impl<R: Rng> RoutePolicy for DqnRoutePolicy<'_, R> {
    fn decide(&mut self, state: &RouteState) -> Option<Decision> {
        let choice = choose_action(state, self.net, self.cfg, self.epsilon, self.rng)?;
        self.trajectory
            .push((choice.features, choice.decision.resource, choice.slot));
        Some(choice.decision)
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Serialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub epsilon: f64,
    /// Normalized episode reward (0.0 when the episode failed).
    pub reward: f64,
    /// Loss of the last gradient step this episode, if any ran.
    pub loss: Option<f64>,
    pub hops: usize,
    pub delivered: bool,
}

/// Result of [`train`].
pub struct TrainOutput {
    pub net: QNetwork,
    pub log: Vec<EpisodeLog>,
    pub buffer: ReplayBuffer,
}

/// Runs the episodic training loop.
///
/// `sample_topology` supplies the world for each episode index (typically a
/// fresh random node subset). Per episode: run one ε-greedy episode, assign
/// its terminal reward — the normalized end-to-end bottleneck rate, zero on
/// failure — to every decision along the route, push those experiences, then
/// take the configured number of gradient steps on uniform minibatches.
///
/// All randomness derives from `seed` through fixed per-purpose streams
/// (initialization, exploration, replay sampling), so a run is reproducible
/// regardless of how the caller seeds its topology sampling.
pub fn train(
    cfg: &TrainConfig,
    mut sample_topology: impl FnMut(usize) -> Topology,
    seed: u64,
) -> Result<TrainOutput, AgentError> {
    cfg.validate()?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, seeds::stream::INIT));
    let mut policy_rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, seeds::stream::POLICY));
    let mut replay_rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, seeds::stream::REPLAY));

    let mut net = QNetwork::new(cfg.policy.n_e, &mut init_rng);
    let mut opt = OptimizerState::new(&net, cfg.adam);
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity);
    let mut log = Vec::with_capacity(cfg.episodes);

    for episode in 0..cfg.episodes {
        let topo = sample_topology(episode);
        let epsilon = cfg.epsilon.value(episode, cfg.episodes);

        let mut policy = DqnRoutePolicy::new(&net, &cfg.policy, epsilon, &mut policy_rng);
        let outcome = run_episode(&topo, &mut policy, cfg.max_hops)?;
        let trajectory = policy.into_trajectory();

        let reward = outcome.rate_bps / cfg.reward_reference_bps;
        for (state, resource, action) in trajectory {
            buffer.push(Experience {
                state,
                resource,
                action,
                reward,
            });
        }

        let mut last_loss = None;
        if buffer.len() >= cfg.batch_size {
            for _ in 0..cfg.grad_steps_per_episode {
                let batch = buffer.sample(cfg.batch_size, &mut replay_rng);
                let width = net.input_width();
                let mut rows = Vec::with_capacity(cfg.batch_size * width);
                let mut actions = Vec::with_capacity(cfg.batch_size);
                let mut targets = Vec::with_capacity(cfg.batch_size);
                for exp in batch {
                    rows.extend(&exp.state);
                    actions.push(exp.action);
                    targets.push(exp.reward);
                }
                let states = Array2::from_shape_vec((cfg.batch_size, width), rows)
                    .expect("experiences share the configured feature width");
                let (loss, grads) = net.loss_and_gradients(states.view(), &actions, &targets)?;
                if !loss.is_finite() {
                    return Err(AgentError::NonFiniteLoss { episode, loss });
                }
                opt.step(&mut net, &grads)?;
                last_loss = Some(loss);
            }
        }

        log.push(EpisodeLog {
            episode,
            epsilon,
            reward,
            loss: last_loss,
            hops: outcome.hops,
            delivered: outcome.delivered,
        });
    }

    Ok(TrainOutput { net, log, buffer })
}

/// Per-topology outcome of a greedy evaluation.
#[derive(Debug, Clone, Serialize)]
pub struct EvalResult {
    pub delivered: bool,
    /// End-to-end rate, bits/s; 0.0 on failure.
    pub rate_bps: f64,
    pub hops: usize,
}

/// Aggregate evaluation statistics. Failed episodes count as rate 0 in the
/// mean and percentiles, so policies are compared on what they actually
/// deliver.
#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub results: Vec<EvalResult>,
    pub mean_rate_bps: f64,
    pub delivery_ratio: f64,
    /// Mean over delivered episodes only; 0.0 when nothing was delivered.
    pub mean_delivered_rate_bps: f64,
    pub p10_rate_bps: f64,
    pub p50_rate_bps: f64,
    pub p90_rate_bps: f64,
}

/// Summarizes per-topology results; shared by every policy's evaluation.
pub fn summarize(results: Vec<EvalResult>) -> EvalSummary {
    let n = results.len().max(1) as f64;
    let mean_rate_bps = results.iter().map(|r| r.rate_bps).sum::<f64>() / n;
    let delivered: Vec<f64> = results
        .iter()
        .filter(|r| r.delivered)
        .map(|r| r.rate_bps)
        .collect();
    let delivery_ratio = delivered.len() as f64 / n;
    let mean_delivered_rate_bps = if delivered.is_empty() {
        0.0
    } else {
        delivered.iter().sum::<f64>() / delivered.len() as f64
    };
    let mut sorted: Vec<f64> = results.iter().map(|r| r.rate_bps).collect();
    sorted.sort_by(f64::total_cmp);
    // Nearest-rank percentile; 0.0 for an empty set.
    let pct = |p: f64| -> f64 {
        if sorted.is_empty() {
            return 0.0;
        }
        let rank = (p * sorted.len() as f64).ceil() as usize;
        sorted[rank.clamp(1, sorted.len()) - 1]
    };
    EvalSummary {
        p10_rate_bps: pct(0.10),
        p50_rate_bps: pct(0.50),
        p90_rate_bps: pct(0.90),
        results,
        mean_rate_bps,
        delivery_ratio,
        mean_delivered_rate_bps,
    }
}

/// Greedy (ε = 0) evaluation of a trained network over a topology list.
/// Purely deterministic: same network and topologies, same summary.
pub fn evaluate(net: &QNetwork, topologies: &[Topology], cfg: &PolicyConfig) -> EvalSummary {
    let results = topologies
        .iter()
        .map(|topo| {
            // ε = 0 never touches the RNG; this satisfies the signature.
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut policy = DqnRoutePolicy::new(net, cfg, 0.0, &mut rng);
            let outcome = run_episode(topo, &mut policy, None)
                .expect("greedy policy only emits legal decisions");
            EvalResult {
                delivered: outcome.delivered,
                rate_bps: outcome.rate_bps,
                hops: outcome.hops,
            }
        })
        .collect();
    summarize(results)
}
