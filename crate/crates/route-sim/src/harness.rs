//! Experiment configuration, topology sampling and run orchestration.
//!
//! Everything an experiment needs lives in one JSON [`ExperimentConfig`]:
//! geometry, technologies, radio constants, the channel source, training
//! hyperparameters, seeds and output locations. A run dispatches on
//! [`RunMode`] — train, eval, bench or oracle — and leaves four artifacts in
//! the output directory: `config.snapshot.json` (the resolved config),
//! `episodes.csv` (one row per episode or topology), `summary.json`
//! (aggregates, rates in Mbit/s) and, after training, `checkpoint.bin`.
//!
//! Reproducibility is strict: all randomness descends from the master seed
//! through fixed per-purpose streams, training and evaluation draw their
//! topologies from disjoint streams, evaluation results are independent of
//! the worker count, and rerunning a config produces byte-identical
//! `summary.json` and `episodes.csv` (no timestamps, no machine state).

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    self, AgentError, EvalResult, EvalSummary, FeatureScaling, PolicyConfig, TrainConfig,
};
use crate::baselines::{BaselineError, BaselineKind, BaselinePolicy};
use crate::channel::{ChannelError, ChannelTable, SyntheticChannelParams, Technology};
use crate::neighbors::NeighborStrategy;
use crate::netmodel::{NetModelError, RadioParams, Topology};
use crate::nn::{NnError, QNetwork};
use crate::oracle::{exhaustive_optimum, OracleError, OracleOptions};
use crate::routing::run_episode;
use crate::seeds;
use crate::NodeId;

/// Errors from configuration handling and run orchestration.
#[derive(Debug, Error)]
pub enum HarnessError {
    /// Config validation failed; every problem found is listed.
    #[error("invalid configuration:\n  - {}", problems.join("\n  - "))]
    InvalidConfig { problems: Vec<String> },
    #[error("reading config {path}: {source}")]
    ConfigRead {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing config {path}: {source}")]
    ConfigParse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error(
        "policy '{policy}' needs a trained checkpoint; none at {path} \
         (train first, or set checkpoint_path)"
    )]
    MissingCheckpoint { policy: String, path: PathBuf },
    #[error("writing {path}: {source}")]
    Output {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Net(#[from] NetModelError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One technology as configured: center frequency, subband count and an
/// optional explicit bandwidth (default: the 1%-of-carrier rule).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TechnologyConfig {
    pub center_frequency_hz: f64,
    pub num_subbands: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_bandwidth_hz: Option<f64>,
}

impl TechnologyConfig {
    fn build(&self, id: usize) -> Result<Technology, ChannelError> {
        match self.total_bandwidth_hz {
            Some(bw) => Technology::with_bandwidth(id, self.center_frequency_hz, bw, self.num_subbands),
            None => Technology::from_center_frequency(id, self.center_frequency_hz, self.num_subbands),
        }
    }
}

/// Where link gains come from: the synthetic log-distance model, or a gain
/// grid ingested from a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ChannelSource {
    Synthetic {
        #[serde(default)]
        params: SyntheticChannelParams,
    },
    Grid { path: PathBuf },
}

impl Default for ChannelSource {
    fn default() -> Self {
        ChannelSource::Synthetic {
            params: SyntheticChannelParams::default(),
        }
    }
}

/// The decision policy a run evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyKind {
    /// The trained Q-network (requires a checkpoint outside of training).
    #[serde(rename = "dqn")]
    Dqn,
    /// One of the non-learning reference policies.
    #[serde(untagged)]
    Baseline(BaselineKind),
}

impl PolicyKind {
    /// Stable lowercase name, as used in config files and CSV rows.
    pub fn key(self) -> &'static str {
        match self {
            PolicyKind::Dqn => "dqn",
            PolicyKind::Baseline(b) => b.key(),
        }
    }

    /// Every policy the bench mode compares, learned policy first.
    pub fn all() -> Vec<PolicyKind> {
        let mut out = vec![PolicyKind::Dqn];
        out.extend(BaselineKind::ALL.iter().map(|&b| PolicyKind::Baseline(b)));
        out
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Complete experiment description; the one JSON document a run needs.
///
/// Defaults are the desk-scale experiment: a 17-node pool (15 relays plus
/// the two endpoints) in a 250×250×9.5 m arena, two technologies with three
/// subbands each, five neighbor slots, 50k training episodes. Every field
/// can be overridden from the config file; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Arena dimensions, meters.
    pub arena_m: [f64; 3],
    /// Number of relay nodes in the pool (everything except the endpoints).
    pub num_relays: usize,
    /// Relays drawn (uniformly, without replacement) into each topology.
    pub relay_subset_size: usize,
    /// Node id of the flow source. Defaults to `num_relays`.
    pub source_id: NodeId,
    /// Node id of the flow destination. Defaults to `num_relays + 1`.
    pub destination_id: NodeId,
    pub technologies: Vec<TechnologyConfig>,
    /// Neighbor slots per resource (the action space is `num_neighbors`
    /// wide per network evaluation).
    pub num_neighbors: usize,
    pub neighbor_strategy: NeighborStrategy,
    /// Policy run by eval mode (bench always compares all of them).
    pub policy: PolicyKind,
    pub radio: RadioParams,
    pub channel: ChannelSource,
    pub train_episodes: usize,
    /// Held-out topologies per evaluation (eval, bench, oracle, and the
    /// post-training check).
    pub eval_topologies: usize,
    pub epsilon: agent::EpsilonSchedule,
    pub adam: crate::nn::AdamParams,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub grad_steps_per_episode: usize,
    /// Discount factor, recorded but unused by the terminal-reward pipeline.
    pub gamma: f64,
    /// Rewards are bits/s divided by this.
    pub reward_reference_bps: f64,
    /// Hop budget per episode; `None` means the active-node count.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_hops: Option<usize>,
    /// Master seed; every stream in the run derives from it.
    pub seed: u64,
    /// Worker threads for evaluation and benching. Never affects results.
    pub workers: usize,
    pub output_dir: PathBuf,
    /// Trained network for eval/bench. `None` falls back to
    /// `output_dir/checkpoint.bin` when that file exists.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_path: Option<PathBuf>,
    /// Active-node budget above which oracle mode refuses an instance.
    pub oracle_max_active_nodes: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            arena_m: [250.0, 250.0, 9.5],
            num_relays: 15,
            relay_subset_size: 6,
            source_id: 15,
            destination_id: 16,
            technologies: vec![
                TechnologyConfig {
                    center_frequency_hz: 400e6,
                    num_subbands: 3,
                    total_bandwidth_hz: None,
                },
                TechnologyConfig {
                    center_frequency_hz: 2.4e9,
                    num_subbands: 3,
                    total_bandwidth_hz: None,
                },
            ],
            num_neighbors: 5,
            neighbor_strategy: NeighborStrategy::Rate,
            policy: PolicyKind::Dqn,
            radio: RadioParams::default(),
            channel: ChannelSource::default(),
            train_episodes: 50_000,
            eval_topologies: 200,
            epsilon: agent::EpsilonSchedule::default(),
            adam: crate::nn::AdamParams::default(),
            replay_capacity: 100_000,
            batch_size: 256,
            grad_steps_per_episode: 1,
            gamma: 0.99,
            reward_reference_bps: 1e7,
            max_hops: None,
            seed: 17,
            workers: 1,
            output_dir: PathBuf::from("runs/desk"),
            checkpoint_path: None,
            oracle_max_active_nodes: 9,
        }
    }
}

impl ExperimentConfig {
    /// Loads a config from a JSON file.
    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|source| HarnessError::ConfigRead {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| HarnessError::ConfigParse {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Total pool size: relays plus the two endpoints.
    pub fn pool_size(&self) -> usize {
        self.num_relays + 2
    }

    /// Checks every config rule and reports all violations at once.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let mut problems = Vec::new();
        if self.arena_m.iter().any(|&d| !d.is_finite() || d <= 0.0) {
            problems.push(format!("arena dimensions must be positive, got {:?}", self.arena_m));
        }
        if self.num_relays == 0 {
            problems.push("num_relays must be positive".into());
        }
        if self.relay_subset_size > self.num_relays {
            problems.push(format!(
                "relay_subset_size {} exceeds the relay pool of {}",
                self.relay_subset_size, self.num_relays
            ));
        }
        let pool = self.pool_size();
        if self.source_id >= pool || self.destination_id >= pool {
            problems.push(format!(
                "endpoint ids must be inside the pool of {pool} nodes, got source {} and destination {}",
                self.source_id, self.destination_id
            ));
        }
        if self.source_id == self.destination_id {
            problems.push(format!(
                "source and destination are both node {}",
                self.source_id
            ));
        }
        if self.technologies.is_empty() {
            problems.push("at least one technology is required".into());
        }
        for (i, t) in self.technologies.iter().enumerate() {
            if let Err(e) = t.build(i) {
                problems.push(format!("technology {i}: {e}"));
            }
        }
        if self.num_neighbors == 0 {
            problems.push("num_neighbors must be at least 1".into());
        }
        if !(self.radio.transmit_power_w.is_finite() && self.radio.transmit_power_w > 0.0) {
            problems.push("transmit power must be positive".into());
        }
        if !(self.radio.noise_density_w_per_hz.is_finite()
            && self.radio.noise_density_w_per_hz > 0.0)
        {
            problems.push("noise density must be positive".into());
        }
        if let ChannelSource::Grid { path } = &self.channel {
            if !path.is_file() {
                problems.push(format!("channel grid file not found: {}", path.display()));
            }
        }
        if let Some(path) = &self.checkpoint_path {
            if !path.is_file() {
                problems.push(format!("checkpoint file not found: {}", path.display()));
            }
        }
        if self.train_episodes == 0 {
            problems.push("train_episodes must be positive".into());
        }
        if self.eval_topologies == 0 {
            problems.push("eval_topologies must be positive".into());
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be positive".into());
        }
        if self.replay_capacity < self.batch_size {
            problems.push(format!(
                "replay_capacity {} below batch_size {}",
                self.replay_capacity, self.batch_size
            ));
        }
        if !(self.reward_reference_bps.is_finite() && self.reward_reference_bps > 0.0) {
            problems.push("reward_reference_bps must be positive".into());
        }
        for (name, v) in [("start", self.epsilon.start), ("end", self.epsilon.end)] {
            if !(0.0..=1.0).contains(&v) {
                problems.push(format!("epsilon {name} must be in [0, 1], got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.epsilon.zero_tail_fraction) {
            problems.push(format!(
                "epsilon zero_tail_fraction must be in [0, 1], got {}",
                self.epsilon.zero_tail_fraction
            ));
        }
        if self.workers == 0 {
            problems.push("workers must be at least 1".into());
        }
        if self.oracle_max_active_nodes < 2 {
            problems.push("oracle_max_active_nodes must be at least 2".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::InvalidConfig { problems })
        }
    }

    /// The technology list in canonical (id = index) order.
    pub fn build_technologies(&self) -> Result<Vec<Technology>, ChannelError> {
        self.technologies
            .iter()
            .enumerate()
            .map(|(i, t)| t.build(i))
            .collect()
    }

    /// Feature normalization derived from the arena geometry.
    pub fn feature_scaling(&self) -> FeatureScaling {
        FeatureScaling::for_arena(self.arena_m)
    }

    /// The per-decision policy configuration.
    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig {
            n_e: self.num_neighbors,
            strategy: self.neighbor_strategy,
            scaling: self.feature_scaling(),
        }
    }

    /// The training-loop configuration.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            episodes: self.train_episodes,
            policy: self.policy_config(),
            replay_capacity: self.replay_capacity,
            batch_size: self.batch_size,
            grad_steps_per_episode: self.grad_steps_per_episode,
            adam: self.adam,
            epsilon: self.epsilon,
            gamma: self.gamma,
            reward_reference_bps: self.reward_reference_bps,
            max_hops: self.max_hops,
        }
    }
}

/// Seed for training episode `index`'s topology.
pub fn train_episode_seed(master: u64, index: usize) -> u64 {
    seeds::derive(seeds::derive(master, seeds::stream::TRAIN), index as u64)
}

/// Seed for held-out evaluation topology `index`. The stream is disjoint
/// from the training stream, so evaluation never sees a training world.
pub fn eval_episode_seed(master: u64, index: usize) -> u64 {
    seeds::derive(seeds::derive(master, seeds::stream::EVAL), index as u64)
}

/// Gain data backing a sampler: evaluated per topology (synthetic) or
/// loaded once (grid).
#[derive(Debug, Clone)]
enum ChannelData {
    Synthetic(SyntheticChannelParams),
    Grid(ChannelTable),
}

/// Draws random topologies for one experiment.
///
/// Node positions are fixed for the whole experiment, drawn once from the
/// master seed's position stream: relays land uniformly in the arena, while
/// the endpoints are anchored near opposite arena faces (x at 5% and 95% of
/// the span, y centered, z uniform) so the flow always has ground to cover.
/// Each topology then activates a fresh uniform relay subset and, in
/// synthetic mode, a fresh shadowing realization.
#[derive(Debug, Clone)]
pub struct TopologySampler {
    positions: Vec<[f64; 3]>,
    relay_ids: Vec<NodeId>,
    subset_size: usize,
    source: NodeId,
    destination: NodeId,
    technologies: Vec<Technology>,
    radio: RadioParams,
    channel: ChannelData,
}

impl TopologySampler {
    /// Builds the sampler: positions drawn, grid loaded and checked.
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let technologies = cfg.build_technologies()?;
        let pool = cfg.pool_size();
        let mut rng =
            ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, seeds::stream::POSITIONS));
        let [ax, ay, az] = cfg.arena_m;
        let mut positions = Vec::with_capacity(pool);
        for id in 0..pool {
            let pos = if id == cfg.source_id {
                [0.05 * ax, 0.5 * ay, rng.random_range(0.0..az)]
            } else if id == cfg.destination_id {
                [0.95 * ax, 0.5 * ay, rng.random_range(0.0..az)]
            } else {
                [
                    rng.random_range(0.0..ax),
                    rng.random_range(0.0..ay),
                    rng.random_range(0.0..az),
                ]
            };
            positions.push(pos);
        }
        let relay_ids: Vec<NodeId> = (0..pool)
            .filter(|&id| id != cfg.source_id && id != cfg.destination_id)
            .collect();
        let channel = match &cfg.channel {
            ChannelSource::Synthetic { params } => ChannelData::Synthetic(*params),
            ChannelSource::Grid { path } => {
                let table = crate::channel::load_gain_grid(path)?;
                table.check_dimensions(pool, technologies.len())?;
                ChannelData::Grid(table)
            }
        };
        Ok(TopologySampler {
            positions,
            relay_ids,
            subset_size: cfg.relay_subset_size,
            source: cfg.source_id,
            destination: cfg.destination_id,
            technologies,
            radio: cfg.radio,
            channel,
        })
    }

    /// The fixed pool positions.
    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    /// Active nodes per topology: the relay subset plus both endpoints.
    pub fn active_size(&self) -> usize {
        self.subset_size + 2
    }

    /// Draws the topology for `episode_seed`: a sorted uniform relay subset
    /// and (synthetic mode) a per-topology shadowing realization. The same
    /// seed always yields the same topology.
    pub fn sample(&self, episode_seed: u64) -> Result<Topology, HarnessError> {
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
        // Partial Fisher–Yates: the first `subset_size` slots end up a
        // uniform draw without replacement.
        let mut pool = self.relay_ids.clone();
        for i in 0..self.subset_size {
            let j = rng.random_range(i..pool.len());
            pool.swap(i, j);
        }
        pool.truncate(self.subset_size);
        pool.sort_unstable();
        let mut active = pool;
        active.push(self.source);
        active.push(self.destination);

        let table = match &self.channel {
            ChannelData::Synthetic(params) => {
                let fading_seed = rng.random::<u64>();
                ChannelTable::from_synthetic(
                    &self.positions,
                    &self.technologies,
                    params,
                    fading_seed,
                )?
            }
            ChannelData::Grid(table) => table.clone(),
        };
        Ok(Topology::new(
            self.positions.clone(),
            active,
            self.source,
            self.destination,
            self.technologies.clone(),
            table,
            self.radio,
        )?)
    }
}

/// What a run executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Train,
    Eval,
    Bench,
    Oracle,
}

impl RunMode {
    pub fn name(self) -> &'static str {
        match self {
            RunMode::Train => "train",
            RunMode::Eval => "eval",
            RunMode::Bench => "bench",
            RunMode::Oracle => "oracle",
        }
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Content-derived run identifier: a hash over the mode and every
/// result-determining config field. Execution details — worker count and
/// output paths — are excluded, so the same experiment keeps the same id
/// wherever and however it runs.
pub fn run_id(cfg: &ExperimentConfig, mode: RunMode) -> String {
    let mut canonical = cfg.clone();
    canonical.workers = 1;
    canonical.output_dir = PathBuf::new();
    let text = serde_json::to_string(&canonical).expect("config serializes");
    // FNV-1a over two offsets gives a stable 128-bit hex id.
    let fnv = |offset: u64| -> u64 {
        let mut h = offset;
        for b in mode.name().bytes().chain(text.bytes()) {
            h ^= b as u64;
            h = h.wrapping_mul(0x100_0000_01b3);
        }
        h
    };
    format!("{:016x}{:016x}", fnv(0xcbf2_9ce4_8422_2325), fnv(0x6c62_272e_07bb_0142))
}

/// Aggregates for one policy over the held-out topology set, Mbit/s.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: String,
    pub topologies: usize,
    pub delivery_ratio: f64,
    pub mean_rate_mbps: f64,
    pub mean_delivered_rate_mbps: f64,
    pub p10_rate_mbps: f64,
    pub p50_rate_mbps: f64,
    pub p90_rate_mbps: f64,
}

impl PolicySummary {
    fn from_eval(policy: &str, summary: &EvalSummary) -> Self {
        PolicySummary {
            policy: policy.to_string(),
            topologies: summary.results.len(),
            delivery_ratio: summary.delivery_ratio,
            mean_rate_mbps: mbps(summary.mean_rate_bps),
            mean_delivered_rate_mbps: mbps(summary.mean_delivered_rate_bps),
            p10_rate_mbps: mbps(summary.p10_rate_bps),
            p50_rate_mbps: mbps(summary.p50_rate_bps),
            p90_rate_mbps: mbps(summary.p90_rate_bps),
        }
    }
}

/// Training-loop aggregates over the final window of episodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub episodes: usize,
    pub final_epsilon: f64,
    /// Number of trailing episodes the aggregates below cover.
    pub window: usize,
    pub mean_reward_last_window: f64,
    pub delivery_ratio_last_window: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<f64>,
}

/// Oracle-mode aggregates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleSummary {
    pub topologies: usize,
    /// Instances small enough to search exhaustively.
    pub feasible: usize,
    /// Mean optimum over the feasible instances, Mbit/s.
    pub mean_rate_mbps: f64,
    pub mean_hops: f64,
    pub total_routes_enumerated: u64,
}

/// The `summary.json` document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub mode: String,
    pub seed: u64,
    /// One row per evaluated policy (bench compares them all).
    pub policies: Vec<PolicySummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSummary>,
}

/// Where a run left its artifacts.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub run_id: String,
    pub dir: PathBuf,
    pub summary: RunSummary,
}

/// One `episodes.csv` row of an eval or bench run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRow {
    pub index: usize,
    pub policy: String,
    pub delivered: bool,
    pub hops: usize,
    pub rate_mbps: f64,
}

/// One `episodes.csv` row of an oracle run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleRow {
    pub index: usize,
    /// False when the instance exceeded the search budget and was skipped.
    pub feasible: bool,
    pub rate_mbps: Option<f64>,
    pub hops: Option<usize>,
    pub routes_enumerated: Option<u64>,
}

fn mbps(bps: f64) -> f64 {
    bps / 1e6
}

/// Evaluates one policy over the held-out topology stream.
///
/// Topologies are processed in parallel, but results are collected in index
/// order and every topology derives its own seed, so the outcome does not
/// depend on the worker count.
pub fn evaluate_policy(
    policy: PolicyKind,
    net: Option<&QNetwork>,
    sampler: &TopologySampler,
    policy_cfg: &PolicyConfig,
    master_seed: u64,
    topologies: usize,
) -> Result<Vec<EvalResult>, HarnessError> {
    (0..topologies)
        .into_par_iter()
        .map(|i| {
            let topo = sampler.sample(eval_episode_seed(master_seed, i))?;
            let outcome = match policy {
                PolicyKind::Dqn => {
                    let net = net.expect("caller resolves the checkpoint for dqn");
                    // ε = 0 is fully greedy; the RNG is never consulted.
                    let mut rng = ChaCha8Rng::seed_from_u64(0);
                    let mut p = agent::DqnRoutePolicy::new(net, policy_cfg, 0.0, &mut rng);
                    run_episode(&topo, &mut p, None)
                }
                PolicyKind::Baseline(kind) => {
                    let mut p = BaselinePolicy::new(kind);
                    run_episode(&topo, &mut p, None)
                }
            }
            .map_err(AgentError::from)?;
            Ok(EvalResult {
                delivered: outcome.delivered,
                rate_bps: outcome.rate_bps,
                hops: outcome.hops,
            })
        })
        .collect()
}

/// Executes one run and writes its artifacts.
///
/// Artifacts land directly in `cfg.output_dir`: `config.snapshot.json`,
/// `episodes.csv`, `summary.json`, and `checkpoint.bin` after training.
/// Rerunning the same config and mode reproduces `summary.json` and
/// `episodes.csv` byte for byte.
pub fn run(cfg: &ExperimentConfig, mode: RunMode) -> Result<RunArtifacts, HarnessError> {
    cfg.validate()?;
    let sampler = TopologySampler::new(cfg)?;
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|source| HarnessError::Output {
        path: dir.clone(),
        source,
    })?;
    let id = run_id(cfg, mode);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .expect("thread pool construction");

    let summary = pool.install(|| match mode {
        RunMode::Train => run_train(cfg, &sampler, &dir, &id),
        RunMode::Eval => run_eval(cfg, &sampler, &dir, &id),
        RunMode::Bench => run_bench(cfg, &sampler, &dir, &id),
        RunMode::Oracle => run_oracle(cfg, &sampler, &dir, &id),
    })?;

    write_json(&dir.join("config.snapshot.json"), cfg)?;
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(RunArtifacts {
        run_id: id,
        dir,
        summary,
    })
}

fn run_train(
    cfg: &ExperimentConfig,
    sampler: &TopologySampler,
    dir: &Path,
    id: &str,
) -> Result<RunSummary, HarnessError> {
    let train_cfg = cfg.train_config();
    let output = agent::train(
        &train_cfg,
        |episode| {
            sampler
                .sample(train_episode_seed(cfg.seed, episode))
                .expect("a validated config samples topologies")
        },
        cfg.seed,
    )?;

    output.net.save(&dir.join("checkpoint.bin"))?;
    write_csv(&dir.join("episodes.csv"), &output.log)?;

    let window = output.log.len().min(1000);
    let tail = &output.log[output.log.len() - window..];
    let training = TrainingSummary {
        episodes: output.log.len(),
        final_epsilon: output.log.last().map_or(0.0, |l| l.epsilon),
        window,
        mean_reward_last_window: tail.iter().map(|l| l.reward).sum::<f64>() / window as f64,
        delivery_ratio_last_window: tail.iter().filter(|l| l.delivered).count() as f64
            / window as f64,
        final_loss: output.log.iter().rev().find_map(|l| l.loss),
    };

    // Held-out check of what training produced, on the evaluation stream.
    let policy_cfg = cfg.policy_config();
    let results = evaluate_policy(
        PolicyKind::Dqn,
        Some(&output.net),
        sampler,
        &policy_cfg,
        cfg.seed,
        cfg.eval_topologies,
    )?;
    let eval = agent::summarize(results);
    Ok(RunSummary {
        run_id: id.to_string(),
        mode: RunMode::Train.name().to_string(),
        seed: cfg.seed,
        policies: vec![PolicySummary::from_eval(PolicyKind::Dqn.key(), &eval)],
        training: Some(training),
        oracle: None,
    })
}

/// Finds the trained network an eval/bench run should use.
fn resolve_checkpoint(cfg: &ExperimentConfig) -> Option<PathBuf> {
    match &cfg.checkpoint_path {
        Some(path) => Some(path.clone()),
        None => {
            let fallback = cfg.output_dir.join("checkpoint.bin");
            fallback.is_file().then_some(fallback)
        }
    }
}

fn run_eval(
    cfg: &ExperimentConfig,
    sampler: &TopologySampler,
    dir: &Path,
    id: &str,
) -> Result<RunSummary, HarnessError> {
    let net = match cfg.policy {
        PolicyKind::Dqn => {
            let path = resolve_checkpoint(cfg).ok_or_else(|| HarnessError::MissingCheckpoint {
                policy: cfg.policy.key().to_string(),
                path: cfg.output_dir.join("checkpoint.bin"),
            })?;
            Some(QNetwork::load(&path)?)
        }
        PolicyKind::Baseline(_) => None,
    };
    let policy_cfg = cfg.policy_config();
    let results = evaluate_policy(
        cfg.policy,
        net.as_ref(),
        sampler,
        &policy_cfg,
        cfg.seed,
        cfg.eval_topologies,
    )?;
    let rows: Vec<EvalRow> = results
        .iter()
        .enumerate()
        .map(|(index, r)| EvalRow {
            index,
            policy: cfg.policy.key().to_string(),
            delivered: r.delivered,
            hops: r.hops,
            rate_mbps: mbps(r.rate_bps),
        })
        .collect();
    write_csv(&dir.join("episodes.csv"), &rows)?;
    let eval = agent::summarize(results);
    Ok(RunSummary {
        run_id: id.to_string(),
        mode: RunMode::Eval.name().to_string(),
        seed: cfg.seed,
        policies: vec![PolicySummary::from_eval(cfg.policy.key(), &eval)],
        training: None,
        oracle: None,
    })
}

fn run_bench(
    cfg: &ExperimentConfig,
    sampler: &TopologySampler,
    dir: &Path,
    id: &str,
) -> Result<RunSummary, HarnessError> {
    // The learned policy joins the comparison only when a checkpoint exists;
    // the baselines never need one.
    let net = match resolve_checkpoint(cfg) {
        Some(path) => Some(QNetwork::load(&path)?),
        None => None,
    };
    let policy_cfg = cfg.policy_config();
    let mut rows = Vec::new();
    let mut policies = Vec::new();
    for policy in PolicyKind::all() {
        if policy == PolicyKind::Dqn && net.is_none() {
            continue;
        }
        let results = evaluate_policy(
            policy,
            net.as_ref(),
            sampler,
            &policy_cfg,
            cfg.seed,
            cfg.eval_topologies,
        )?;
        rows.extend(results.iter().enumerate().map(|(index, r)| EvalRow {
            index,
            policy: policy.key().to_string(),
            delivered: r.delivered,
            hops: r.hops,
            rate_mbps: mbps(r.rate_bps),
        }));
        policies.push(PolicySummary::from_eval(
            policy.key(),
            &agent::summarize(results),
        ));
    }
    write_csv(&dir.join("episodes.csv"), &rows)?;
    Ok(RunSummary {
        run_id: id.to_string(),
        mode: RunMode::Bench.name().to_string(),
        seed: cfg.seed,
        policies,
        training: None,
        oracle: None,
    })
}

fn run_oracle(
    cfg: &ExperimentConfig,
    sampler: &TopologySampler,
    dir: &Path,
    id: &str,
) -> Result<RunSummary, HarnessError> {
    let options = OracleOptions {
        max_active_nodes: cfg.oracle_max_active_nodes,
    };
    let rows: Vec<OracleRow> = (0..cfg.eval_topologies)
        .into_par_iter()
        .map(|index| {
            let topo = sampler.sample(eval_episode_seed(cfg.seed, index))?;
            match exhaustive_optimum(&topo, options) {
                Ok(sol) => Ok(OracleRow {
                    index,
                    feasible: true,
                    rate_mbps: Some(mbps(sol.rate_bps)),
                    hops: Some(sol.route.hops()),
                    routes_enumerated: Some(sol.routes_enumerated),
                }),
                Err(OracleError::TooManyNodes { .. }) => Ok(OracleRow {
                    index,
                    feasible: false,
                    rate_mbps: None,
                    hops: None,
                    routes_enumerated: None,
                }),
                Err(e) => Err(HarnessError::from(e)),
            }
        })
        .collect::<Result<_, HarnessError>>()?;
    write_csv(&dir.join("episodes.csv"), &rows)?;

    let feasible: Vec<&OracleRow> = rows.iter().filter(|r| r.feasible).collect();
    let n = feasible.len().max(1) as f64;
    let oracle = OracleSummary {
        topologies: rows.len(),
        feasible: feasible.len(),
        mean_rate_mbps: feasible.iter().filter_map(|r| r.rate_mbps).sum::<f64>() / n,
        mean_hops: feasible.iter().filter_map(|r| r.hops).sum::<usize>() as f64 / n,
        total_routes_enumerated: feasible.iter().filter_map(|r| r.routes_enumerated).sum(),
    };
    Ok(RunSummary {
        run_id: id.to_string(),
        mode: RunMode::Oracle.name().to_string(),
        seed: cfg.seed,
        policies: Vec::new(),
        training: None,
        oracle: Some(oracle),
    })
}

/// Serializes `value` as pretty JSON with a trailing newline.
fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let wrap = |source: std::io::Error| HarnessError::Output {
        path: path.to_path_buf(),
        source,
    };
    let mut file = fs::File::create(path).map_err(wrap)?;
    let text = serde_json::to_string_pretty(value).expect("artifact serializes");
    file.write_all(text.as_bytes()).map_err(wrap)?;
    file.write_all(b"\n").map_err(wrap)?;
    Ok(())
}

/// Writes one serializable row per record with a header line.
fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut writer = csv::Writer::from_path(path).map_err(HarnessError::from)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush().map_err(|source| HarnessError::Output {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}
