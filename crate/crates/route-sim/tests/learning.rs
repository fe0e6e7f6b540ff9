//! Learning-dynamics checks at a size where ground truth is computable:
//! the training loop must be able to overfit a single world to near-optimal
//! routing, and must be exactly reproducible from its seed.

mod common;

use route_sim::agent::{self, train, TrainConfig};
use route_sim::harness::{self, TopologySampler};
use route_sim::netmodel::Topology;
use route_sim::oracle::{exhaustive_optimum, OracleOptions};

/// One fixed 5-active-node world drawn from the tiny config's eval stream,
/// plus the matching training configuration.
fn fixed_world() -> (Topology, TrainConfig) {
    let cfg = common::tiny_config();
    let sampler = TopologySampler::new(&cfg).unwrap();
    let topo = sampler
        .sample(harness::eval_episode_seed(cfg.seed, 5))
        .unwrap();
    let mut train_cfg = cfg.train_config();
    // Overfit-friendly settings: a short recency-biased buffer (so targets
    // track the current policy's returns rather than the random era's), a
    // fast learning rate, and several gradient steps per episode.
    train_cfg.episodes = 800;
    train_cfg.batch_size = 64;
    train_cfg.replay_capacity = 256;
    train_cfg.grad_steps_per_episode = 4;
    train_cfg.adam.alpha = 1e-3;
    (topo, train_cfg)
}

#[test]
fn overfits_a_single_world_to_near_optimal_routing() {
    let (topo, train_cfg) = fixed_world();
    let optimum = exhaustive_optimum(&topo, OracleOptions::default()).unwrap();
    assert!(optimum.rate_bps > 0.0);

    let out = train(&train_cfg, |_| topo.clone(), 99).unwrap();
    let eval = agent::evaluate(&out.net, &[topo], &train_cfg.policy);

    assert_eq!(eval.delivery_ratio, 1.0, "greedy route must reach the destination");
    assert!(
        eval.mean_rate_bps >= 0.9 * optimum.rate_bps,
        "trained rate {:.0} bit/s below 90% of optimum {:.0} bit/s",
        eval.mean_rate_bps,
        optimum.rate_bps
    );
}

#[test]
fn training_is_reproducible_from_the_seed() {
    let (topo, mut train_cfg) = fixed_world();
    train_cfg.episodes = 50;

    let a = train(&train_cfg, |_| topo.clone(), 7).unwrap();
    let b = train(&train_cfg, |_| topo.clone(), 7).unwrap();
    let c = train(&train_cfg, |_| topo.clone(), 8).unwrap();

    let (wa, wb, wc) = (
        a.net.flatten_params(),
        b.net.flatten_params(),
        c.net.flatten_params(),
    );
    assert_eq!(
        wa.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        wb.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        "same seed must yield bit-identical weights"
    );
    assert_ne!(wa, wc, "different seeds must explore differently");

    for (la, lb) in a.log.iter().zip(&b.log) {
        assert_eq!(la.reward.to_bits(), lb.reward.to_bits());
        assert_eq!(la.hops, lb.hops);
        assert_eq!(la.delivered, lb.delivered);
    }
}
