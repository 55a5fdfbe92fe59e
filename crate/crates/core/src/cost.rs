//! Closed-form delay, energy and renting-cost models, the weighted utility,
//! and its partial derivatives in the bandwidth `B` and compute units `r`.
//!
//! Conventions:
//! - `s = M` keeps every layer on the device: nothing is transmitted and
//!   nothing is rented, so transmission delay/energy and rent cost are zero
//!   and the utility does not depend on `B` or `r`.
//! - The transmission energy numerator is `w_s + m` (intermediate data plus
//!   returned result), matching the transmission delay.
//! - Rent cost per round is `(r * rho + g(B)) / k` with `g(B) = gamma * B^delta`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::catalog::ModelProfile;
use crate::error::{Error, Result};
use crate::topology::ServerId;

/// Closed interval `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: f64,
    pub max: f64,
}

impl Bounds {
    pub fn new(min: f64, max: f64) -> Self {
        Bounds { min, max }
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.min + self.max)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.min, self.max)
    }

    /// `n >= 2` evenly spaced points, endpoints exact.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        assert!(n >= 2, "grid needs at least two points");
        let step = self.width() / (n - 1) as f64;
        (0..n)
            .map(|i| {
                if i == n - 1 {
                    self.max
                } else {
                    self.min + i as f64 * step
                }
            })
            .collect()
    }

    fn check(&self, name: &'static str, value: f64) -> Result<()> {
        if self.contains(value) {
            Ok(())
        } else {
            Err(Error::OutOfBounds {
                name,
                value,
                min: self.min,
                max: self.max,
            })
        }
    }

    fn validate_positive(&self, name: &'static str) -> Result<()> {
        if !(self.min > 0.0 && self.min.is_finite() && self.max.is_finite()) {
            return Err(Error::Domain {
                name,
                value: self.min,
                reason: "lower bound must be positive and finite",
            });
        }
        if self.max < self.min {
            return Err(Error::Domain {
                name,
                value: self.max,
                reason: "upper bound below lower bound",
            });
        }
        Ok(())
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            name,
            value: v,
            reason: "must be positive and finite",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    /// FLOP/s.
    pub compute_capability: f64,
    pub switched_capacitance: f64,
    pub cycles_per_bit: f64,
    /// Watts.
    pub tx_power: f64,
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<()> {
        positive("compute_capability", self.compute_capability)?;
        positive("switched_capacitance", self.switched_capacitance)?;
        positive("cycles_per_bit", self.cycles_per_bit)?;
        positive("tx_power", self.tx_power)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    pub large_scale_fading: f64,
    pub small_scale_fading: f64,
    /// W/Hz.
    pub noise_density: f64,
    /// Hz.
    pub bandwidth_bounds: Bounds,
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        positive("large_scale_fading", self.large_scale_fading)?;
        positive("small_scale_fading", self.small_scale_fading)?;
        positive("noise_density", self.noise_density)?;
        self.bandwidth_bounds.validate_positive("bandwidth_bounds")
    }

    /// Received SNR times bandwidth, `p * alpha * g / N0`, in Hz.
    fn snr_bandwidth(&self, tx_power: f64) -> f64 {
        tx_power * self.large_scale_fading * self.small_scale_fading / self.noise_density
    }
}

/// Bandwidth rental price `g(B) = gamma * B^exponent`, `exponent >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandwidthPricing {
    pub gamma: f64,
    #[serde(default = "one")]
    pub exponent: f64,
}

fn one() -> f64 {
    1.0
}

impl BandwidthPricing {
    pub fn linear(gamma: f64) -> Self {
        BandwidthPricing {
            gamma,
            exponent: 1.0,
        }
    }

    pub fn price(&self, b: f64) -> f64 {
        if self.exponent == 1.0 {
            self.gamma * b
        } else {
            self.gamma * b.powf(self.exponent)
        }
    }

    pub fn marginal(&self, b: f64) -> f64 {
        if self.exponent == 1.0 {
            self.gamma
        } else {
            self.gamma * self.exponent * b.powf(self.exponent - 1.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerProfile {
    pub id: ServerId,
    /// FLOP/s of one rented compute unit.
    pub unit_capability: f64,
    /// Price of one compute unit.
    pub unit_price: f64,
    pub compute_bounds: Bounds,
    /// Multicore speedup knob; zero means single-core scaling `lambda(r) = r`.
    #[serde(default)]
    pub speedup_beta: f64,
    pub bandwidth_price: BandwidthPricing,
}

impl ServerProfile {
    pub fn validate(&self) -> Result<()> {
        positive("unit_capability", self.unit_capability)?;
        positive("unit_price", self.unit_price)?;
        self.compute_bounds.validate_positive("compute_bounds")?;
        if !(self.speedup_beta >= 0.0 && self.speedup_beta.is_finite()) {
            return Err(Error::Domain {
                name: "speedup_beta",
                value: self.speedup_beta,
                reason: "must be nonnegative",
            });
        }
        positive("bandwidth_price.gamma", self.bandwidth_price.gamma)?;
        if !(self.bandwidth_price.exponent >= 1.0 && self.bandwidth_price.exponent.is_finite()) {
            return Err(Error::Domain {
                name: "bandwidth_price.exponent",
                value: self.bandwidth_price.exponent,
                reason: "must be >= 1 to keep the price convex",
            });
        }
        Ok(())
    }
}

/// Weights of delay, renting cost and energy in the utility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    pub delay: f64,
    pub cost: f64,
    pub energy: f64,
}

impl Weights {
    pub fn new(delay: f64, cost: f64, energy: f64) -> Self {
        Weights {
            delay,
            cost,
            energy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("weights.delay", self.delay),
            ("weights.cost", self.cost),
            ("weights.energy", self.energy),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Domain {
                    name,
                    value: w,
                    reason: "weights must be nonnegative",
                });
            }
        }
        let sum = self.delay + self.cost + self.energy;
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Domain {
                name: "weights",
                value: sum,
                reason: "weights must sum to 1",
            });
        }
        Ok(())
    }
}

/// Everything the cost model needs to evaluate one user's strategy.
#[derive(Debug, Clone)]
pub struct UserContext {
    pub device: DeviceProfile,
    pub channel: ChannelParams,
    pub server: ServerProfile,
    pub model: Arc<ModelProfile>,
    /// Relay hops between the user's AP and its server.
    pub hops: u32,
    /// Inter-AP bandwidth, bits/s.
    pub backhaul_bandwidth: f64,
    /// Inference rounds the rental and the strategy computation are spread over.
    pub rounds: u32,
    /// Seconds spent computing the strategy.
    pub strategy_calc_delay: f64,
    pub weights: Weights,
}

impl UserContext {
    pub fn validate(&self) -> Result<()> {
        self.device.validate()?;
        self.channel.validate()?;
        self.server.validate()?;
        self.weights.validate()?;
        positive("backhaul_bandwidth", self.backhaul_bandwidth)?;
        if self.rounds == 0 {
            return Err(Error::Domain {
                name: "rounds",
                value: 0.0,
                reason: "at least one round",
            });
        }
        if !(self.strategy_calc_delay >= 0.0 && self.strategy_calc_delay.is_finite()) {
            return Err(Error::Domain {
                name: "strategy_calc_delay",
                value: self.strategy_calc_delay,
                reason: "must be nonnegative",
            });
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.model.num_layers()
    }

    pub fn bandwidth_bounds(&self) -> Bounds {
        self.channel.bandwidth_bounds
    }

    pub fn compute_bounds(&self) -> Bounds {
        self.server.compute_bounds
    }

    fn rounds_f(&self) -> f64 {
        f64::from(self.rounds)
    }

    fn offloads(&self, split: usize) -> bool {
        split < self.model.num_layers()
    }

    /// Bits sent over the first hop at `split`: intermediate data plus the
    /// returned result, or nothing when fully local.
    pub fn transmitted_bits(&self, split: usize) -> Result<f64> {
        if !self.offloads(split) {
            self.model.check_split(split)?;
            return Ok(0.0);
        }
        Ok(self.model.intermediate_bits(split)? + self.model.final_result_bits())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityBreakdown {
    pub delay_s: f64,
    pub energy_j: f64,
    pub cost_cbr: f64,
    pub utility: f64,
}

impl UtilityBreakdown {
    pub fn new(delay_s: f64, energy_j: f64, cost_cbr: f64, weights: Weights) -> Self {
        UtilityBreakdown {
            delay_s,
            energy_j,
            cost_cbr,
            utility: weights.delay * delay_s + weights.cost * cost_cbr + weights.energy * energy_j,
        }
    }
}

/// Effective speedup of `r` rented units: `r + beta * ln(1 + r)`.
pub fn compensation_lambda(r: f64, speedup_beta: f64) -> Result<f64> {
    if r.is_nan() || r <= 0.0 {
        return Err(Error::Domain {
            name: "r",
            value: r,
            reason: "compute units must be positive",
        });
    }
    Ok(r + speedup_beta * r.ln_1p())
}

fn lambda_prime(r: f64, speedup_beta: f64) -> f64 {
    1.0 + speedup_beta / (1.0 + r)
}

pub fn device_delay(model: &ModelProfile, split: usize, device: &DeviceProfile) -> Result<f64> {
    Ok(model.on_device_flops(split)? / device.compute_capability)
}

pub fn server_delay(
    model: &ModelProfile,
    split: usize,
    r: f64,
    server: &ServerProfile,
) -> Result<f64> {
    server.compute_bounds.check("r", r)?;
    let remaining = model.on_server_flops(split)?;
    if remaining == 0.0 {
        return Ok(0.0);
    }
    Ok(remaining / (compensation_lambda(r, server.speedup_beta)? * server.unit_capability))
}

/// Shannon rate `B * log2(1 + p*alpha*g / (B*N0))`.
pub fn transmission_rate(b: f64, channel: &ChannelParams, tx_power: f64) -> Result<f64> {
    if b.is_nan() || b <= 0.0 {
        return Err(Error::Domain {
            name: "B",
            value: b,
            reason: "bandwidth must be positive",
        });
    }
    Ok(b * (channel.snr_bandwidth(tx_power) / b).ln_1p() / std::f64::consts::LN_2)
}

/// First hop over the user's bandwidth plus `hops` relay hops over the
/// backhaul, carrying intermediate data out and the result back.
pub fn transmission_delay(
    model: &ModelProfile,
    split: usize,
    b: f64,
    hops: u32,
    backhaul_bandwidth: f64,
) -> Result<f64> {
    model.check_split(split)?;
    if split == model.num_layers() {
        return Ok(0.0);
    }
    if b.is_nan() || b <= 0.0 {
        return Err(Error::Domain {
            name: "B",
            value: b,
            reason: "bandwidth must be positive",
        });
    }
    let w = model.intermediate_bits(split)?;
    let m = model.final_result_bits();
    Ok((w + m) / b + f64::from(hops) * (w / backhaul_bandwidth + m / backhaul_bandwidth))
}

pub fn total_delay(ctx: &UserContext, split: usize, b: f64, r: f64) -> Result<f64> {
    ctx.channel.bandwidth_bounds.check("B", b)?;
    Ok(device_delay(&ctx.model, split, &ctx.device)?
        + server_delay(&ctx.model, split, r, &ctx.server)?
        + transmission_delay(&ctx.model, split, b, ctx.hops, ctx.backhaul_bandwidth)?
        + ctx.strategy_calc_delay / ctx.rounds_f())
}

/// On-device computation energy of the first `split` layers.
pub fn compute_energy(ctx: &UserContext, split: usize) -> Result<f64> {
    let d = &ctx.device;
    Ok(d.switched_capacitance
        * d.compute_capability
        * d.compute_capability
        * d.cycles_per_bit
        * ctx.model.on_device_flops(split)?)
}

/// Radio energy spent sending `bits` at bandwidth `b`.
pub fn transmit_energy(ctx: &UserContext, bits: f64, b: f64) -> Result<f64> {
    if bits == 0.0 {
        return Ok(0.0);
    }
    let rate = transmission_rate(b, &ctx.channel, ctx.device.tx_power)?;
    Ok(ctx.device.tx_power * bits / rate)
}

pub fn energy(ctx: &UserContext, split: usize, b: f64) -> Result<f64> {
    ctx.channel.bandwidth_bounds.check("B", b)?;
    let bits = ctx.transmitted_bits(split)?;
    Ok(compute_energy(ctx, split)? + transmit_energy(ctx, bits, b)?)
}

/// Rental cost per round of `r` compute units and bandwidth `b`.
pub fn rent_cost_cbr(ctx: &UserContext, b: f64, r: f64) -> Result<f64> {
    ctx.channel.bandwidth_bounds.check("B", b)?;
    ctx.server.compute_bounds.check("r", r)?;
    Ok((r * ctx.server.unit_price + ctx.server.bandwidth_price.price(b)) / ctx.rounds_f())
}

pub fn utility(ctx: &UserContext, split: usize, b: f64, r: f64) -> Result<UtilityBreakdown> {
    let delay = total_delay(ctx, split, b, r)?;
    let energy = energy(ctx, split, b)?;
    let cost = if ctx.offloads(split) {
        rent_cost_cbr(ctx, b, r)?
    } else {
        0.0
    };
    Ok(UtilityBreakdown::new(delay, energy, cost, ctx.weights))
}

/// Partial derivative of the utility in `B`.
pub fn grad_b(ctx: &UserContext, split: usize, b: f64, _r: f64) -> Result<f64> {
    if b.is_nan() || b <= 0.0 {
        return Err(Error::Domain {
            name: "B",
            value: b,
            reason: "bandwidth must be positive",
        });
    }
    let bits = ctx.transmitted_bits(split)?;
    if bits == 0.0 {
        return Ok(0.0);
    }
    Ok(bandwidth_terms_grad(ctx, bits, b))
}

/// d/dB of `w_T * bits/B + w_E * p*bits/tau(B) + w_C * g(B)/k`.
pub(crate) fn bandwidth_terms_grad(ctx: &UserContext, bits: f64, b: f64) -> f64 {
    let w = ctx.weights;
    let p = ctx.device.tx_power;
    let snr = ctx.channel.snr_bandwidth(p) / b;
    let log_term = snr.ln_1p() / std::f64::consts::LN_2;
    let rate = b * log_term;
    // d tau / dB
    let rate_prime = log_term - snr / ((1.0 + snr) * std::f64::consts::LN_2);
    -w.delay * bits / (b * b) - w.energy * p * bits * rate_prime / (rate * rate)
        + w.cost * ctx.server.bandwidth_price.marginal(b) / ctx.rounds_f()
}

/// Partial derivative of the utility in `r`.
pub fn grad_r(ctx: &UserContext, split: usize, _b: f64, r: f64) -> Result<f64> {
    if r.is_nan() || r <= 0.0 {
        return Err(Error::Domain {
            name: "r",
            value: r,
            reason: "compute units must be positive",
        });
    }
    if !ctx.offloads(split) {
        ctx.model.check_split(split)?;
        return Ok(0.0);
    }
    let beta = ctx.server.speedup_beta;
    let lambda = compensation_lambda(r, beta)?;
    let remaining = ctx.model.on_server_flops(split)?;
    Ok(-ctx.weights.delay * remaining * lambda_prime(r, beta)
        / (ctx.server.unit_capability * lambda * lambda)
        + ctx.weights.cost * ctx.server.unit_price / ctx.rounds_f())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::catalog::{synthetic_catalog, LayerProfile};
    use proptest::prelude::*;

    fn layers(flops: &[f64], out: &[f64]) -> Vec<LayerProfile> {
        flops
            .iter()
            .zip(out)
            .map(|(&f, &o)| LayerProfile {
                conv_count: 1,
                pool_count: 0,
                relu_count: 0,
                flops: f,
                out_size_bits: o,
            })
            .collect()
    }

    pub(crate) fn sample_ctx() -> UserContext {
        UserContext {
            device: DeviceProfile {
                compute_capability: 2.0e9,
                switched_capacitance: 1.0e-28,
                cycles_per_bit: 0.5,
                tx_power: 0.5,
            },
            channel: ChannelParams {
                large_scale_fading: 1.0e-9,
                small_scale_fading: 1.0,
                noise_density: 1.0e-17,
                bandwidth_bounds: Bounds::new(5.0e6, 2.0e7),
            },
            server: ServerProfile {
                id: ServerId(1),
                unit_capability: 5.0e9,
                unit_price: 0.05,
                compute_bounds: Bounds::new(1.0, 8.0),
                speedup_beta: 0.5,
                bandwidth_price: BandwidthPricing::linear(1.0e-8),
            },
            model: Arc::new(synthetic_catalog("NiN").unwrap()),
            hops: 2,
            backhaul_bandwidth: 5.0e7,
            rounds: 4,
            strategy_calc_delay: 0.01,
            weights: Weights::new(0.5, 0.25, 0.25),
        }
    }

    #[test]
    fn lambda_single_core_degenerates() {
        assert_eq!(compensation_lambda(4.0, 0.0).unwrap(), 4.0);
    }

    #[test]
    fn lambda_direct_value() {
        let v = compensation_lambda(1.0, 1.0).unwrap();
        assert!((v - (1.0 + 2f64.ln())).abs() < 1e-15);
        assert!((v - 1.6931).abs() < 1e-4);
    }

    #[test]
    fn lambda_rejects_nonpositive() {
        assert!(compensation_lambda(0.0, 1.0).is_err());
        assert!(compensation_lambda(-1.0, 0.0).is_err());
    }

    #[test]
    fn lambda_strictly_increasing_on_grid() {
        for beta in [0.0, 0.5, 3.0] {
            let vals: Vec<f64> = (1..=64)
                .map(|r| compensation_lambda(r as f64, beta).unwrap())
                .collect();
            assert!(vals.windows(2).all(|w| w[1] > w[0]));
            assert!((1..=64).all(|r| vals[r - 1] >= r as f64));
        }
    }

    fn toy_model() -> ModelProfile {
        ModelProfile::new(
            "toy",
            layers(&[10.0, 20.0, 30.0], &[6.0, 8.0, 1.0]),
            40.0,
            2.0,
        )
        .unwrap()
    }

    #[test]
    fn device_delay_examples() {
        let m = toy_model();
        let d = DeviceProfile {
            compute_capability: 10.0,
            switched_capacitance: 1.0,
            cycles_per_bit: 1.0,
            tx_power: 1.0,
        };
        assert_eq!(device_delay(&m, 0, &d).unwrap(), 0.0);
        assert_eq!(device_delay(&m, 2, &d).unwrap(), 3.0);
        assert_eq!(device_delay(&m, 3, &d).unwrap(), 6.0);
        assert!(device_delay(&m, 4, &d).is_err());
    }

    fn toy_server(beta: f64) -> ServerProfile {
        ServerProfile {
            id: ServerId(0),
            unit_capability: 2.0,
            unit_price: 2.0,
            compute_bounds: Bounds::new(1.0, 10.0),
            speedup_beta: beta,
            bandwidth_price: BandwidthPricing::linear(1.0),
        }
    }

    #[test]
    fn server_delay_examples() {
        let m = toy_model();
        let s = toy_server(0.0);
        assert_eq!(server_delay(&m, 3, 5.0, &s).unwrap(), 0.0);
        // remaining after split 1 is 50 FLOP; lambda(5) = 5; c_min = 2
        assert_eq!(server_delay(&m, 1, 5.0, &s).unwrap(), 5.0);
        assert!(server_delay(&m, 1, 0.5, &s).is_err());
        assert!(server_delay(&m, 1, 11.0, &s).is_err());
    }

    #[test]
    fn rate_at_unit_snr_equals_bandwidth() {
        let ch = ChannelParams {
            large_scale_fading: 1.0,
            small_scale_fading: 1.0,
            noise_density: 1.0,
            bandwidth_bounds: Bounds::new(1.0, 100.0),
        };
        // p*alpha*g / (B*N0) = 10 / 10 = 1
        let rate = transmission_rate(10.0, &ch, 10.0).unwrap();
        assert!((rate - 10.0).abs() < 1e-12);
        assert!(transmission_rate(0.0, &ch, 1.0).is_err());
    }

    #[test]
    fn rate_zero_signal() {
        let ch = ChannelParams {
            large_scale_fading: 0.0,
            small_scale_fading: 1.0,
            noise_density: 1.0,
            bandwidth_bounds: Bounds::new(1.0, 100.0),
        };
        assert_eq!(transmission_rate(10.0, &ch, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn rate_increasing_in_bandwidth() {
        let ctx = sample_ctx();
        let rates: Vec<f64> = ctx
            .bandwidth_bounds()
            .grid(200)
            .into_iter()
            .map(|b| transmission_rate(b, &ctx.channel, ctx.device.tx_power).unwrap())
            .collect();
        assert!(rates.windows(2).all(|w| w[1] > w[0]));
    }

    fn tx_model(w: f64, m: f64) -> ModelProfile {
        ModelProfile::new("tx", layers(&[1.0, 1.0], &[w, 1.0]), 100.0, m).unwrap()
    }

    #[test]
    fn transmission_delay_examples() {
        let model = tx_model(8.0, 2.0);
        assert_eq!(transmission_delay(&model, 1, 10.0, 0, 5.0).unwrap(), 1.0);
        assert_eq!(transmission_delay(&model, 1, 10.0, 3, 5.0).unwrap(), 7.0);
        let relay = |h| transmission_delay(&model, 1, 10.0, h, 5.0).unwrap() - 1.0;
        assert!((relay(6) - 2.0 * relay(3)).abs() < 1e-12);
        assert_eq!(transmission_delay(&model, 2, 10.0, 3, 5.0).unwrap(), 0.0);
    }

    #[test]
    fn cbr_term_from_calc_delay() {
        let mut ctx = sample_ctx();
        ctx.strategy_calc_delay = 10.0;
        ctx.rounds = 4;
        let m = ctx.num_layers();
        let (b, r) = (1.0e7, 4.0);
        let with = total_delay(&ctx, m, b, r).unwrap();
        ctx.strategy_calc_delay = 0.0;
        let without = total_delay(&ctx, m, b, r).unwrap();
        assert!((with - without - 2.5).abs() < 1e-12);
    }

    #[test]
    fn total_delay_composes() {
        let ctx = sample_ctx();
        let (s, b, r) = (4, 1.2e7, 3.0);
        let expected = device_delay(&ctx.model, s, &ctx.device).unwrap()
            + server_delay(&ctx.model, s, r, &ctx.server).unwrap()
            + transmission_delay(&ctx.model, s, b, ctx.hops, ctx.backhaul_bandwidth).unwrap()
            + ctx.strategy_calc_delay / ctx.rounds as f64;
        assert_eq!(total_delay(&ctx, s, b, r).unwrap(), expected);
    }

    #[test]
    fn energy_endpoints() {
        let ctx = sample_ctx();
        let b = 1.0e7;
        let e0 = energy(&ctx, 0, b).unwrap();
        let rate = transmission_rate(b, &ctx.channel, ctx.device.tx_power).unwrap();
        let bits = ctx.model.raw_input_bits() + ctx.model.final_result_bits();
        assert!((e0 - ctx.device.tx_power * bits / rate).abs() < 1e-15);

        let m = ctx.num_layers();
        let d = ctx.device;
        let em = energy(&ctx, m, b).unwrap();
        let expected = d.switched_capacitance
            * d.compute_capability.powi(2)
            * d.cycles_per_bit
            * ctx.model.total_flops();
        assert!((em - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn rent_cost_examples() {
        let mut ctx = sample_ctx();
        ctx.server.unit_price = 2.0;
        ctx.server.compute_bounds = Bounds::new(1.0, 10.0);
        ctx.server.bandwidth_price = BandwidthPricing::linear(4.0 / 1.0e7);
        ctx.rounds = 2;
        let c = rent_cost_cbr(&ctx, 1.0e7, 3.0).unwrap();
        assert!((c - 5.0).abs() < 1e-12);
        ctx.rounds = 4;
        assert!((rent_cost_cbr(&ctx, 1.0e7, 3.0).unwrap() - 2.5).abs() < 1e-12);
        // nothing rented at the all-local split
        let u = utility(&ctx, ctx.num_layers(), 1.0e7, 3.0).unwrap();
        assert_eq!(u.cost_cbr, 0.0);
    }

    #[test]
    fn grad_b_delay_only() {
        let mut ctx = sample_ctx();
        ctx.weights = Weights::new(1.0, 0.0, 0.0);
        let (s, b) = (3, 9.0e6);
        let bits = ctx.transmitted_bits(s).unwrap();
        let g = grad_b(&ctx, s, b, 2.0).unwrap();
        assert!((g - (-bits / (b * b))).abs() <= 1e-15 * g.abs());
    }

    #[test]
    fn grad_r_all_local_and_single_core() {
        let mut ctx = sample_ctx();
        let m = ctx.num_layers();
        assert_eq!(grad_r(&ctx, m, 1e7, 3.0).unwrap(), 0.0);

        ctx.server.speedup_beta = 0.0;
        let (s, r) = (2, 3.0);
        let fe = ctx.model.on_server_flops(s).unwrap();
        let expected = -ctx.weights.delay * fe / (ctx.server.unit_capability * r * r)
            + ctx.weights.cost * ctx.server.unit_price / ctx.rounds as f64;
        let g = grad_r(&ctx, s, 1e7, r).unwrap();
        assert!((g - expected).abs() <= 1e-14 * expected.abs());
        assert!(grad_r(&ctx, s, 1e7, 0.0).is_err());
        assert!(grad_b(&ctx, s, 0.0, 1.0).is_err());
    }

    #[test]
    fn grad_b_negative_for_small_bandwidth_when_delay_dominates() {
        let mut ctx = sample_ctx();
        ctx.weights = Weights::new(0.9, 0.05, 0.05);
        for s in 0..ctx.num_layers() {
            let g = grad_b(&ctx, s, ctx.bandwidth_bounds().min, 1.0).unwrap();
            assert!(g < 0.0, "split {s}: {g}");
        }
    }

    #[test]
    fn breakdown_identity() {
        let ctx = sample_ctx();
        for s in 0..=ctx.num_layers() {
            let u = utility(&ctx, s, 1.3e7, 2.5).unwrap();
            let w = ctx.weights;
            let recomposed = w.delay * u.delay_s + w.cost * u.cost_cbr + w.energy * u.energy_j;
            assert!((u.utility - recomposed).abs() <= 1e-9 * u.utility.abs());
        }
    }

    #[test]
    fn out_of_bounds_bandwidth_rejected() {
        let ctx = sample_ctx();
        assert!(matches!(
            utility(&ctx, 0, 1.0, 2.0),
            Err(Error::OutOfBounds { name: "B", .. })
        ));
    }

    proptest! {
        #[test]
        fn more_rounds_never_increase_cbr(k in 1u32..64, s in 0usize..=9) {
            let mut ctx = sample_ctx();
            ctx.rounds = k;
            let a = utility(&ctx, s, 1.1e7, 3.0).unwrap();
            ctx.rounds = k + 1;
            let b = utility(&ctx, s, 1.1e7, 3.0).unwrap();
            prop_assert!(b.cost_cbr <= a.cost_cbr);
            prop_assert!(b.utility <= a.utility);
            if s < 9 {
                prop_assert!(b.utility < a.utility);
            }
        }

        #[test]
        fn utility_convex_in_bandwidth(
            s in 0usize..9,
            x1 in 0.0f64..1.0,
            x2 in 0.0f64..1.0,
            r in 1.0f64..8.0,
        ) {
            let ctx = sample_ctx();
            let bb = ctx.bandwidth_bounds();
            let b1 = bb.min + x1 * bb.width();
            let b2 = bb.min + x2 * bb.width();
            let mid = 0.5 * (b1 + b2);
            let f = |b| utility(&ctx, s, b, r).unwrap().utility;
            prop_assert!(f(mid) <= 0.5 * (f(b1) + f(b2)) + 1e-12 * f(mid).abs());
        }
    }
}
