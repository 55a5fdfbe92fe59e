//! Random scenario generation shared by the integration suites.
#![allow(dead_code)]

use std::sync::Arc;

use edgesplit::catalog::{synthetic_catalog, LayerProfile, ModelProfile};
use edgesplit::cost::{
    BandwidthPricing, Bounds, ChannelParams, DeviceProfile, ServerProfile, UserContext, Weights,
};
use edgesplit::topology::ServerId;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

pub fn random_model(rng: &mut impl Rng, max_layers: usize) -> ModelProfile {
    let m = rng.gen_range(1..=max_layers);
    let layers = (0..m)
        .map(|_| LayerProfile {
            conv_count: 1,
            pool_count: 0,
            relu_count: 0,
            flops: log_uniform(rng, 5.0e7, 1.0e9),
            out_size_bits: log_uniform(rng, 1.0e4, 3.0e6),
        })
        .collect();
    ModelProfile::new(
        "random",
        layers,
        log_uniform(rng, 5.0e5, 3.0e6),
        log_uniform(rng, 1.0e3, 5.0e4),
    )
    .unwrap()
}

pub fn random_weights(rng: &mut impl Rng) -> Weights {
    let a: f64 = rng.gen_range(0.05..1.0);
    let b: f64 = rng.gen_range(0.05..1.0);
    let c: f64 = rng.gen_range(0.05..1.0);
    let s = a + b + c;
    let (delay, cost) = (a / s, b / s);
    Weights::new(delay, cost, 1.0 - delay - cost)
}

pub fn random_server(rng: &mut impl Rng) -> ServerProfile {
    let r_min = rng.gen_range(0.5..2.0);
    ServerProfile {
        id: ServerId(rng.gen_range(0..4)),
        unit_capability: log_uniform(rng, 2.0e9, 1.0e10),
        unit_price: log_uniform(rng, 0.01, 0.2),
        compute_bounds: Bounds::new(r_min, r_min * rng.gen_range(3.0..10.0)),
        speedup_beta: rng.gen_range(0.0..2.0),
        bandwidth_price: BandwidthPricing::linear(log_uniform(rng, 1.0e-9, 3.0e-8)),
    }
}

pub fn random_ctx_with_model(rng: &mut impl Rng, model: ModelProfile) -> UserContext {
    let b_min = log_uniform(rng, 2.0e6, 8.0e6);
    UserContext {
        device: DeviceProfile {
            compute_capability: log_uniform(rng, 5.0e8, 4.0e9),
            switched_capacitance: log_uniform(rng, 5.0e-29, 2.0e-28),
            cycles_per_bit: rng.gen_range(0.1..1.0),
            tx_power: rng.gen_range(0.1..1.0),
        },
        channel: ChannelParams {
            large_scale_fading: log_uniform(rng, 1.0e-10, 1.0e-8),
            small_scale_fading: rng.gen_range(0.5..2.0),
            noise_density: 1.0e-17,
            bandwidth_bounds: Bounds::new(b_min, b_min * rng.gen_range(2.0..5.0)),
        },
        server: random_server(rng),
        model: Arc::new(model),
        hops: rng.gen_range(0..=5),
        backhaul_bandwidth: log_uniform(rng, 2.0e7, 1.0e8),
        rounds: rng.gen_range(1..=20),
        strategy_calc_delay: rng.gen_range(0.0..0.05),
        weights: random_weights(rng),
    }
}

/// A user on a random chain model (at most `max_layers` layers) or on the
/// built-in NiN profile.
pub fn random_ctx(rng: &mut impl Rng, max_layers: usize) -> UserContext {
    let model = if max_layers >= 9 && rng.gen_bool(0.25) {
        synthetic_catalog("NiN").unwrap()
    } else {
        random_model(rng, max_layers)
    };
    random_ctx_with_model(rng, model)
}

/// A scenario is 1..=4 independent users.
pub fn random_scenario(rng: &mut impl Rng, max_layers: usize) -> Vec<UserContext> {
    let users = rng.gen_range(1..=4);
    (0..users).map(|_| random_ctx(rng, max_layers)).collect()
}
