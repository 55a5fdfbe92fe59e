//! Handover-aware solver: after a user moves to a new AP, choose between
//! recomputing the split and allocation at the new server (`R = 0`) and
//! keeping the original split, relaying intermediate data back to the
//! original server (`R = 1`).
//!
//! The utility `(1 - R) * U1 + R * U2` is linear in `R`, so the relaxed
//! `R in [0, 1]` always lands on a box boundary and rounding it by comparing
//! the two optimised branch utilities loses nothing.

use serde::{Deserialize, Serialize};

use crate::cost::{self, Bounds, UserContext, UtilityBreakdown};
use crate::error::{Error, Result};
use crate::ligd::{
    self, argmin_layer, from_unit, projected_descent, sampled_lipschitz, step_from_lipschitz,
    to_unit, unit_jacobian, LayerSolution, SolverConfig,
};

/// Utility contributions of the original strategy that the handover does
/// not touch: everything on the device, and the compute rented at the
/// original server.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrozenTerms {
    pub device_side: f64,
    pub server_side: f64,
    /// Unweighted delay, energy and CBR behind the two weighted sides.
    pub delay_s: f64,
    pub energy_j: f64,
    pub cost_cbr: f64,
}

impl FrozenTerms {
    pub fn total(&self) -> f64 {
        self.device_side + self.server_side
    }

    /// Weighted device-side and server-side parts of `strategy` evaluated
    /// against the context it was computed for.
    pub fn of(original: &UserContext, strategy: &LayerSolution) -> Result<Self> {
        let s = strategy.split;
        let w = original.weights;
        let device_delay = cost::device_delay(&original.model, s, &original.device)?
            + original.strategy_calc_delay / f64::from(original.rounds);
        let energy_j = cost::compute_energy(original, s)?;
        let (server_delay, cost_cbr) = if s < original.num_layers() {
            let server = &original.server;
            (
                cost::server_delay(&original.model, s, strategy.compute, server)?,
                strategy.compute * server.unit_price / f64::from(original.rounds),
            )
        } else {
            (0.0, 0.0)
        };
        Ok(FrozenTerms {
            device_side: w.delay * device_delay + w.energy * energy_j,
            server_side: w.delay * server_delay + w.cost * cost_cbr,
            delay_s: device_delay + server_delay,
            energy_j,
            cost_cbr,
        })
    }
}

#[derive(Debug, Clone)]
pub struct MobilityContext {
    /// The user at its new AP, served by the new AP's nearest server.
    pub base: UserContext,
    pub original_strategy: LayerSolution,
    /// Hops from the new AP to the original server.
    pub back_hops: u32,
    pub back_bandwidth_bounds: Bounds,
    pub frozen: FrozenTerms,
}

impl MobilityContext {
    /// Snapshot at handover time. `original` is the context the strategy was
    /// solved in; `base` is the same user seen from the new AP.
    pub fn at_handover(
        original: &UserContext,
        original_strategy: LayerSolution,
        base: UserContext,
        back_hops: u32,
    ) -> Result<Self> {
        original.validate()?;
        base.validate()?;
        original.model.check_split(original_strategy.split)?;
        if original_strategy.split < original.num_layers()
            && !original
                .compute_bounds()
                .contains(original_strategy.compute)
        {
            return Err(Error::OutOfBounds {
                name: "original r",
                value: original_strategy.compute,
                min: original.compute_bounds().min,
                max: original.compute_bounds().max,
            });
        }
        let frozen = FrozenTerms::of(original, &original_strategy)?;
        let back_bandwidth_bounds = base.bandwidth_bounds();
        Ok(MobilityContext {
            base,
            original_strategy,
            back_hops,
            back_bandwidth_bounds,
            frozen,
        })
    }

    fn back_bits(&self) -> Result<f64> {
        self.base.transmitted_bits(self.original_strategy.split)
    }
}

/// Utility of relaying the original split's data back to the original
/// server with first-hop bandwidth `back_bandwidth` at the new AP.
pub fn back_transfer_utility(mctx: &MobilityContext, back_bandwidth: f64) -> Result<f64> {
    let bits = mctx.back_bits()?;
    if bits == 0.0 {
        check_back_bandwidth(mctx, back_bandwidth)?;
        return Ok(mctx.frozen.total());
    }
    let ctx = &mctx.base;
    let w = ctx.weights;
    let (delay, radio, rent) = back_link_terms(mctx, bits, back_bandwidth)?;
    Ok(mctx.frozen.total() + w.delay * delay + w.cost * rent + w.energy * radio)
}

/// Unweighted components of [`back_transfer_utility`]. Its `utility` equals
/// that function up to rounding.
pub fn back_transfer_breakdown(
    mctx: &MobilityContext,
    back_bandwidth: f64,
) -> Result<UtilityBreakdown> {
    let bits = mctx.back_bits()?;
    let (delay, radio, rent) = if bits == 0.0 {
        check_back_bandwidth(mctx, back_bandwidth)?;
        (0.0, 0.0, 0.0)
    } else {
        back_link_terms(mctx, bits, back_bandwidth)?
    };
    let f = &mctx.frozen;
    Ok(UtilityBreakdown::new(
        f.delay_s + delay,
        f.energy_j + radio,
        f.cost_cbr + rent,
        mctx.base.weights,
    ))
}

fn check_back_bandwidth(mctx: &MobilityContext, back_bandwidth: f64) -> Result<()> {
    let bb = mctx.back_bandwidth_bounds;
    if !bb.contains(back_bandwidth) {
        return Err(Error::OutOfBounds {
            name: "B_back",
            value: back_bandwidth,
            min: bb.min,
            max: bb.max,
        });
    }
    Ok(())
}

/// Delay, radio energy and bandwidth CBR of relaying `bits` back.
fn back_link_terms(
    mctx: &MobilityContext,
    bits: f64,
    back_bandwidth: f64,
) -> Result<(f64, f64, f64)> {
    check_back_bandwidth(mctx, back_bandwidth)?;
    let ctx = &mctx.base;
    let delay = bits / back_bandwidth + f64::from(mctx.back_hops) * bits / ctx.backhaul_bandwidth;
    let rent = ctx.server.bandwidth_price.price(back_bandwidth) / f64::from(ctx.rounds);
    let radio = cost::transmit_energy(ctx, bits, back_bandwidth)?;
    Ok((delay, radio, rent))
}

pub fn back_transfer_grad(mctx: &MobilityContext, back_bandwidth: f64) -> Result<f64> {
    let bits = mctx.back_bits()?;
    if bits == 0.0 {
        return Ok(0.0);
    }
    Ok(cost::bandwidth_terms_grad(&mctx.base, bits, back_bandwidth))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    /// `R = 0`: re-solve split and allocation at the new server.
    Recompute = 0,
    /// `R = 1`: keep the original split and send data back.
    TransmitBack = 1,
}

impl Decision {
    pub fn as_r(self) -> u8 {
        self as u8
    }
}

/// Round the relaxed decision. Ties keep the recompute branch.
pub fn round_r(relaxed_r: f64, recompute_utility: f64, back_utility: f64) -> Decision {
    debug_assert!((0.0..=1.0).contains(&relaxed_r));
    if back_utility < recompute_utility {
        Decision::TransmitBack
    } else {
        Decision::Recompute
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MobilitySolution {
    pub decision: Decision,
    /// Relaxed `R` reached by descent at the recompute branch's best split.
    pub relaxed_r: f64,
    pub recompute: LayerSolution,
    pub back_bandwidth: f64,
    pub back_utility: f64,
    /// Utility at the rounded decision.
    pub utility: f64,
    pub total_iterations: usize,
}

pub fn mli_gd(mctx: &MobilityContext, config: &SolverConfig) -> Result<MobilitySolution> {
    config.validate()?;
    let base = &mctx.base;
    let bb = mctx.back_bandwidth_bounds;
    let eps = config.accuracy_eps;

    let back_eval = |x: &[f64; 1]| -> Result<(f64, [f64; 1])> {
        let b = from_unit(bb, x[0]);
        Ok((
            back_transfer_utility(mctx, b)?,
            [back_transfer_grad(mctx, b)? * unit_jacobian(bb, b)],
        ))
    };
    let back_fail = |term, x: &[f64; 1]| Error::Numerical {
        term,
        split: mctx.original_strategy.split,
        bandwidth: from_unit(bb, x[0]),
        compute: mctx.original_strategy.compute,
    };
    let back_eta = match config.step_size {
        Some(eta) => [eta],
        None => step_from_lipschitz(sampled_lipschitz(
            |x: &[f64; 1]| Ok(back_eval(x)?.1),
            config.lipschitz_samples,
            config.seed,
        )?),
    };

    let cold = config.cold_point(base);
    let cold_back = [to_unit(bb, bb.clamp(cold.0))];
    let cold_r = [0.5];

    let mut start = cold;
    let mut back_x = cold_back;
    let mut relaxed = cold_r;
    let mut back_utility = f64::INFINITY;
    let mut per_layer = Vec::with_capacity(base.num_layers() + 1);
    let mut relaxed_per_layer = Vec::with_capacity(base.num_layers() + 1);
    let mut total_iterations = 0;

    for split in 0..=base.num_layers() {
        let (from, from_back, from_r) = if config.warm_start {
            (start, back_x, relaxed)
        } else {
            (cold, cold_back, cold_r)
        };
        let recompute = ligd::inner_gd(base, split, from.0, from.1, config)?;

        let back = projected_descent(
            back_eval,
            back_fail,
            from_back,
            back_eta,
            eps,
            config.max_inner_iters,
            |_, _| {},
        )?;

        // U is linear in R with constant slope U2 - U1.
        let u1 = recompute.utility;
        let u2 = back.value;
        let r_descent = projected_descent(
            |x: &[f64; 1]| Ok(((1.0 - x[0]) * u1 + x[0] * u2, [u2 - u1])),
            |term, _| Error::Numerical {
                term,
                split,
                bandwidth: recompute.bandwidth,
                compute: recompute.compute,
            },
            from_r,
            [1.0],
            eps,
            config.max_inner_iters,
            |_, _| {},
        )?;

        total_iterations += recompute.iterations + back.iterations + r_descent.iterations;
        start = (recompute.bandwidth, recompute.compute);
        back_x = back.x;
        relaxed = r_descent.x;
        back_utility = back.value;
        relaxed_per_layer.push(relaxed[0]);
        per_layer.push(recompute);
    }

    let recompute = argmin_layer(&per_layer).clone();
    let relaxed_r = relaxed_per_layer[recompute.split];
    let decision = round_r(relaxed_r, recompute.utility, back_utility);
    let utility = match decision {
        Decision::Recompute => recompute.utility,
        Decision::TransmitBack => back_utility,
    };
    Ok(MobilitySolution {
        decision,
        relaxed_r,
        recompute,
        back_bandwidth: from_unit(bb, back_x[0]),
        back_utility,
        utility,
        total_iterations,
    })
}
