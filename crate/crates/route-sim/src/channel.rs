//! Radio technologies, communication resources and link gain tables.
//!
//! Gains are linear power gains (|h|², dimensionless) between node pairs,
//! stored per technology: subbands of one technology span 1% of the carrier,
//! so the channel is treated as flat across them. Tables either come from the
//! built-in log-distance model with deterministic lognormal shadowing, or are
//! ingested from a CSV grid produced by an external tool (e.g. a ray tracer).

use std::collections::HashMap;
use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeds;
use crate::NodeId;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Errors from gain synthesis, grid ingestion and table validation.
#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("coincident nodes: zero distance between transmitter and receiver")]
    ZeroDistance,
    #[error("coincident nodes: {a} and {b} share a position")]
    CoincidentNodes { a: NodeId, b: NodeId },
    #[error("invalid technology: {0}")]
    InvalidTechnology(String),
    #[error("invalid table dimensions: {nodes} nodes, {techs} technologies")]
    InvalidDimensions { nodes: usize, techs: usize },
    #[error("invalid gain {value:e} for tech {tech} pair ({tx},{rx}): gains must be positive and finite")]
    InvalidGain {
        tech: usize,
        tx: NodeId,
        rx: NodeId,
        value: f64,
    },
    #[error("gain grid i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("non-positive gain {value:e} at line {line} (tech {tech}, pair ({tx},{rx}))")]
    NonPositiveGain {
        line: u64,
        tech: usize,
        tx: NodeId,
        rx: NodeId,
        value: f64,
    },
    #[error("duplicate entry at line {line}: tech {tech} pair ({tx},{rx}) already defined")]
    DuplicateEntry {
        line: u64,
        tech: usize,
        tx: NodeId,
        rx: NodeId,
    },
    #[error("incomplete matrix: no gain for tech {tech} pair ({tx},{rx})")]
    IncompleteMatrix { tech: usize, tx: NodeId, rx: NodeId },
    #[error("asymmetric gain for tech {tech} pair ({a},{b}): {forward:e} vs {reverse:e}")]
    AsymmetricGain {
        tech: usize,
        a: NodeId,
        b: NodeId,
        forward: f64,
        reverse: f64,
    },
    #[error("gain grid contains no data rows")]
    EmptyGrid,
    #[error("node-count mismatch: table covers {actual} nodes, expected {expected}")]
    NodeCountMismatch { expected: usize, actual: usize },
    #[error("technology-count mismatch: table covers {actual} technologies, expected {expected}")]
    TechnologyCountMismatch { expected: usize, actual: usize },
}

/// One wireless technology: a carrier frequency and a band split into equal
/// subbands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Technology {
    /// Stable identifier; equals the technology's index within a topology.
    pub id: usize,
    /// Carrier (center) frequency, Hz.
    pub center_frequency_hz: f64,
    /// Total bandwidth of the technology, Hz.
    pub total_bandwidth_hz: f64,
    /// Number of equal subbands the band is divided into.
    pub num_subbands: usize,
}

impl Technology {
    /// Builds a technology whose total bandwidth follows the 1%-of-carrier
    /// rule.
    pub fn from_center_frequency(
        id: usize,
        center_frequency_hz: f64,
        num_subbands: usize,
    ) -> Result<Self, ChannelError> {
        Self::with_bandwidth(id, center_frequency_hz, 0.01 * center_frequency_hz, num_subbands)
    }

    /// Builds a technology with an explicit total bandwidth, overriding the
    /// 1% rule.
    pub fn with_bandwidth(
        id: usize,
        center_frequency_hz: f64,
        total_bandwidth_hz: f64,
        num_subbands: usize,
    ) -> Result<Self, ChannelError> {
        if !center_frequency_hz.is_finite() || center_frequency_hz <= 0.0 {
            return Err(ChannelError::InvalidTechnology(format!(
                "center frequency must be positive, got {center_frequency_hz:e} Hz"
            )));
        }
        if !total_bandwidth_hz.is_finite() || total_bandwidth_hz <= 0.0 {
            return Err(ChannelError::InvalidTechnology(format!(
                "total bandwidth must be positive, got {total_bandwidth_hz:e} Hz"
            )));
        }
        if num_subbands == 0 {
            return Err(ChannelError::InvalidTechnology(
                "technology needs at least one subband".into(),
            ));
        }
        Ok(Technology {
            id,
            center_frequency_hz,
            total_bandwidth_hz,
            num_subbands,
        })
    }

    /// Bandwidth of one subband, Hz (total bandwidth split evenly).
    pub fn subband_bandwidth_hz(&self) -> f64 {
        self.total_bandwidth_hz / self.num_subbands as f64
    }
}

/// One communication resource: a (technology, subband) pair — the spectrum
/// unit a single hop transmits on.
///
/// The derived ordering (technology-major, then subband) is the canonical
/// resource order used for deterministic tie-breaking throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CommResource {
    /// Index of the technology within the topology's technology list.
    pub technology: usize,
    /// Subband index, 0-based, less than the technology's `num_subbands`.
    pub subband: usize,
}

/// Lists every (technology, subband) pair in canonical order.
pub fn enumerate_resources(technologies: &[Technology]) -> Vec<CommResource> {
    let mut out = Vec::with_capacity(technologies.iter().map(|t| t.num_subbands).sum());
    for (technology, tech) in technologies.iter().enumerate() {
        for subband in 0..tech.num_subbands {
            out.push(CommResource {
                technology,
                subband,
            });
        }
    }
    out
}

/// Parameters of the synthetic log-distance gain model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticChannelParams {
    /// Reference distance d₀ for the free-space term, meters.
    pub reference_distance_m: f64,
    /// Path-loss exponent at the pivot frequency.
    pub exponent_intercept: f64,
    /// Exponent increase per decade of frequency above the pivot.
    pub exponent_slope: f64,
    /// Frequency at which the exponent equals the intercept, Hz.
    pub exponent_pivot_hz: f64,
    /// Lognormal shadowing standard deviation, dB. Zero disables fading.
    pub shadowing_sigma_db: f64,
}

impl Default for SyntheticChannelParams {
    fn default() -> Self {
        SyntheticChannelParams {
            reference_distance_m: 1.0,
            exponent_intercept: 3.0,
            exponent_slope: 0.5,
            exponent_pivot_hz: 400e6,
            shadowing_sigma_db: 6.0,
        }
    }
}

impl SyntheticChannelParams {
    /// Path-loss exponent at the given carrier: higher carriers attenuate
    /// faster with distance.
    pub fn path_exponent(&self, center_frequency_hz: f64) -> f64 {
        self.exponent_intercept
            + self.exponent_slope * (center_frequency_hz / self.exponent_pivot_hz).log10()
    }
}

fn euclidean(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Hash a node pair into a fading seed, invariant under swapping the
/// endpoints so that both link directions draw the same shadowing value.
fn pair_fading_seed(a: [f64; 3], b: [f64; 3], tech_id: usize, fading_seed: u64) -> u64 {
    let a_bits = [a[0].to_bits(), a[1].to_bits(), a[2].to_bits()];
    let b_bits = [b[0].to_bits(), b[1].to_bits(), b[2].to_bits()];
    let (lo, hi) = if a_bits <= b_bits {
        (a_bits, b_bits)
    } else {
        (b_bits, a_bits)
    };
    seeds::fold(&[
        lo[0],
        lo[1],
        lo[2],
        hi[0],
        hi[1],
        hi[2],
        tech_id as u64,
        fading_seed,
    ])
}

/// Synthesizes the linear power gain between two positions for one
/// technology.
///
/// The model is free-space attenuation at the reference distance, a
/// frequency-dependent log-distance rolloff beyond it, and deterministic
/// lognormal shadowing:
///
/// ```text
/// gain = (c / (4π · f_c · d₀))² · (d₀ / d)^α(f_c) · X
/// ```
///
/// where `α(f_c)` comes from [`SyntheticChannelParams::path_exponent`] and
/// `X = 10^(σ·z/10)` with `z` a standard normal drawn from a hash of the two
/// endpoints, the technology id and `fading_seed`. The hash is symmetric in
/// the endpoints, so the gain is reciprocal by construction, and the same
/// inputs always reproduce the same gain bit-for-bit.
pub fn synthetic_gain(
    tx_pos: [f64; 3],
    rx_pos: [f64; 3],
    tech: &Technology,
    params: &SyntheticChannelParams,
    fading_seed: u64,
) -> Result<f64, ChannelError> {
    let d = euclidean(tx_pos, rx_pos);
    if d <= 0.0 {
        return Err(ChannelError::ZeroDistance);
    }
    let d0 = params.reference_distance_m;
    let f_c = tech.center_frequency_hz;
    let free_space = (SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI * f_c * d0)).powi(2);
    let alpha = params.path_exponent(f_c);
    let mut gain = free_space * (d0 / d).powf(alpha);
    if params.shadowing_sigma_db > 0.0 {
        let mut rng =
            ChaCha8Rng::seed_from_u64(pair_fading_seed(tx_pos, rx_pos, tech.id, fading_seed));
        let z: f64 = rng.sample(StandardNormal);
        gain *= 10f64.powf(params.shadowing_sigma_db * z / 10.0);
    }
    Ok(gain)
}

/// Immutable per-technology matrix of linear power gains between all node
/// pairs of a pool.
///
/// Indexed by global node ids. Diagonal entries are never meaningful (a node
/// does not transmit to itself) and are stored as zero. Reciprocity
/// (`gain(a,b) = gain(b,a)`) and positivity are enforced at construction, so
/// lookups are infallible.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTable {
    num_nodes: usize,
    num_techs: usize,
    gains: Vec<f64>,
}

impl ChannelTable {
    /// Builds a table by evaluating `gain_fn(tech, a, b)` for every pair
    /// `a < b`, mirroring the value to enforce reciprocity.
    pub fn from_fn(
        num_nodes: usize,
        num_techs: usize,
        mut gain_fn: impl FnMut(usize, NodeId, NodeId) -> f64,
    ) -> Result<Self, ChannelError> {
        if num_nodes == 0 || num_techs == 0 {
            return Err(ChannelError::InvalidDimensions {
                nodes: num_nodes,
                techs: num_techs,
            });
        }
        let mut gains = vec![0.0; num_techs * num_nodes * num_nodes];
        for tech in 0..num_techs {
            for a in 0..num_nodes {
                for b in (a + 1)..num_nodes {
                    let g = gain_fn(tech, a, b);
                    if !g.is_finite() || g <= 0.0 {
                        return Err(ChannelError::InvalidGain {
                            tech,
                            tx: a,
                            rx: b,
                            value: g,
                        });
                    }
                    gains[Self::index_of(num_nodes, tech, a, b)] = g;
                    gains[Self::index_of(num_nodes, tech, b, a)] = g;
                }
            }
        }
        Ok(ChannelTable {
            num_nodes,
            num_techs,
            gains,
        })
    }

    /// Synthesizes the full table for a node pool from the log-distance
    /// model. Errors if any two nodes share a position.
    pub fn from_synthetic(
        positions: &[[f64; 3]],
        technologies: &[Technology],
        params: &SyntheticChannelParams,
        fading_seed: u64,
    ) -> Result<Self, ChannelError> {
        for a in 0..positions.len() {
            for b in (a + 1)..positions.len() {
                if euclidean(positions[a], positions[b]) <= 0.0 {
                    return Err(ChannelError::CoincidentNodes { a, b });
                }
            }
        }
        let mut failure = None;
        let table = Self::from_fn(positions.len(), technologies.len(), |tech, a, b| {
            match synthetic_gain(
                positions[a],
                positions[b],
                &technologies[tech],
                params,
                fading_seed,
            ) {
                Ok(g) => g,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        });
        match failure {
            Some(e) => Err(e),
            None => table,
        }
    }

    fn index_of(num_nodes: usize, tech: usize, tx: NodeId, rx: NodeId) -> usize {
        (tech * num_nodes + tx) * num_nodes + rx
    }

    /// Linear power gain between two distinct nodes on one technology.
    ///
    /// Panics on out-of-range indices; ranges are fixed at construction.
    pub fn gain(&self, tech: usize, tx: NodeId, rx: NodeId) -> f64 {
        assert!(
            tech < self.num_techs && tx < self.num_nodes && rx < self.num_nodes,
            "gain lookup out of range: tech {tech}, pair ({tx},{rx})"
        );
        self.gains[Self::index_of(self.num_nodes, tech, tx, rx)]
    }

    /// Number of nodes the table covers.
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of technologies the table covers.
    pub fn num_techs(&self) -> usize {
        self.num_techs
    }

    /// Checks the table against an expected pool size and technology count.
    pub fn check_dimensions(
        &self,
        expected_nodes: usize,
        expected_techs: usize,
    ) -> Result<(), ChannelError> {
        if self.num_nodes != expected_nodes {
            return Err(ChannelError::NodeCountMismatch {
                expected: expected_nodes,
                actual: self.num_nodes,
            });
        }
        if self.num_techs != expected_techs {
            return Err(ChannelError::TechnologyCountMismatch {
                expected: expected_techs,
                actual: self.num_techs,
            });
        }
        Ok(())
    }
}

/// Header required on the first line of a gain grid file.
const GRID_HEADER: [&str; 4] = ["tech_id", "tx", "rx", "gain_linear"];

/// Relative tolerance when checking reciprocity of loaded grids, to absorb
/// decimal rounding by external producers.
const GRID_SYMMETRY_RTOL: f64 = 1e-9;

/// Loads a gain table from a CSV grid `tech_id,tx,rx,gain_linear`.
///
/// Node and technology counts are inferred from the largest indices present;
/// every ordered pair `(tx, rx)` with `tx ≠ rx` must appear exactly once per
/// technology, gains must be positive, and the two directions of each link
/// must agree (reciprocity).
pub fn load_gain_grid(path: &Path) -> Result<ChannelTable, ChannelError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => {
                ChannelError::Io(std::io::Error::other(format!("{}: {e}", path.display())))
            }
            _ => ChannelError::MalformedRow {
                line: 1,
                reason: e.to_string(),
            },
        })?;

    let headers = reader.headers().map_err(|e| ChannelError::MalformedRow {
        line: 1,
        reason: e.to_string(),
    })?;
    let got: Vec<&str> = headers.iter().collect();
    if got != GRID_HEADER {
        return Err(ChannelError::MalformedRow {
            line: 1,
            reason: format!(
                "expected header {}, got {}",
                GRID_HEADER.join(","),
                got.join(",")
            ),
        });
    }

    let mut entries: HashMap<(usize, NodeId, NodeId), f64> = HashMap::new();
    let mut max_node = 0usize;
    let mut max_tech = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            ChannelError::MalformedRow {
                line,
                reason: e.to_string(),
            }
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 4 {
            return Err(ChannelError::MalformedRow {
                line,
                reason: format!("expected 4 fields, got {}", record.len()),
            });
        }
        let parse_index = |field: usize, name: &str| -> Result<usize, ChannelError> {
            record[field]
                .parse::<usize>()
                .map_err(|e| ChannelError::MalformedRow {
                    line,
                    reason: format!("{name} {:?}: {e}", &record[field]),
                })
        };
        let tech = parse_index(0, "tech_id")?;
        let tx = parse_index(1, "tx")?;
        let rx = parse_index(2, "rx")?;
        let gain = record[3]
            .parse::<f64>()
            .map_err(|e| ChannelError::MalformedRow {
                line,
                reason: format!("gain_linear {:?}: {e}", &record[3]),
            })?;
        if tx == rx {
            return Err(ChannelError::MalformedRow {
                line,
                reason: format!("self-link gain for node {tx} is not meaningful"),
            });
        }
        if !gain.is_finite() {
            return Err(ChannelError::MalformedRow {
                line,
                reason: format!("gain {gain:e} is not finite"),
            });
        }
        if gain <= 0.0 {
            return Err(ChannelError::NonPositiveGain {
                line,
                tech,
                tx,
                rx,
                value: gain,
            });
        }
        if entries.insert((tech, tx, rx), gain).is_some() {
            return Err(ChannelError::DuplicateEntry { line, tech, tx, rx });
        }
        max_node = max_node.max(tx).max(rx);
        max_tech = max_tech.max(tech);
    }
    if entries.is_empty() {
        return Err(ChannelError::EmptyGrid);
    }

    let num_nodes = max_node + 1;
    let num_techs = max_tech + 1;
    for tech in 0..num_techs {
        for tx in 0..num_nodes {
            for rx in 0..num_nodes {
                if tx != rx && !entries.contains_key(&(tech, tx, rx)) {
                    return Err(ChannelError::IncompleteMatrix { tech, tx, rx });
                }
            }
        }
    }
    for tech in 0..num_techs {
        for a in 0..num_nodes {
            for b in (a + 1)..num_nodes {
                let forward = entries[&(tech, a, b)];
                let reverse = entries[&(tech, b, a)];
                if (forward - reverse).abs() > GRID_SYMMETRY_RTOL * forward.abs().max(reverse.abs())
                {
                    return Err(ChannelError::AsymmetricGain {
                        tech,
                        a,
                        b,
                        forward,
                        reverse,
                    });
                }
            }
        }
    }

    // Store the (a < b) direction for both, making reciprocity exact even
    // when the file carried rounded mirror values.
    ChannelTable::from_fn(num_nodes, num_techs, |tech, a, b| entries[&(tech, a, b)])
}
