//! Exhaustive grid oracle and the comparison strategies: all-on-device,
//! all-on-edge, delay-only split selection, and delay-only split selection
//! with capped compute.

use serde::{Deserialize, Serialize};

use crate::cost::{self, UserContext, UtilityBreakdown};
use crate::error::{Error, Result};
use crate::mligd::{back_transfer_utility, Decision, MobilityContext};

/// A fully specified strategy and its evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyPoint {
    pub split: usize,
    pub bandwidth: f64,
    pub compute: f64,
    pub breakdown: UtilityBreakdown,
}

impl StrategyPoint {
    pub fn utility(&self) -> f64 {
        self.breakdown.utility
    }

    fn evaluate(ctx: &UserContext, split: usize, bandwidth: f64, compute: f64) -> Result<Self> {
        Ok(StrategyPoint {
            split,
            bandwidth,
            compute,
            breakdown: cost::utility(ctx, split, bandwidth, compute)?,
        })
    }
}

fn check_grid(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Config(format!(
            "oracle grid needs >= 2 points, got {n}"
        )));
    }
    Ok(())
}

/// Exhaustive minimum over one split. Ties keep the smallest `(B, r)`.
pub fn brute_force_split(
    ctx: &UserContext,
    split: usize,
    grid_b: usize,
    grid_r: usize,
) -> Result<StrategyPoint> {
    check_grid(grid_b)?;
    check_grid(grid_r)?;
    let bs = ctx.bandwidth_bounds().grid(grid_b);
    let rs = ctx.compute_bounds().grid(grid_r);
    let mut best: Option<StrategyPoint> = None;
    for &b in &bs {
        for &r in &rs {
            let p = StrategyPoint::evaluate(ctx, split, b, r)?;
            if best.is_none_or(|cur| p.utility() < cur.utility()) {
                best = Some(p);
            }
        }
    }
    Ok(best.expect("nonempty grid"))
}

/// Exhaustive minimum over every split and a uniform `(B, r)` grid. Ties
/// keep the lexicographically smallest `(s, B, r)`.
pub fn brute_force(ctx: &UserContext, grid_b: usize, grid_r: usize) -> Result<StrategyPoint> {
    let mut best: Option<StrategyPoint> = None;
    for split in 0..=ctx.num_layers() {
        let p = brute_force_split(ctx, split, grid_b, grid_r)?;
        if best.is_none_or(|cur| p.utility() < cur.utility()) {
            best = Some(p);
        }
    }
    Ok(best.expect("at least one split"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilityOraclePoint {
    pub decision: Decision,
    pub recompute: StrategyPoint,
    pub back_bandwidth: f64,
    pub back_utility: f64,
    pub utility: f64,
}

/// Exhaustive minimum over both handover branches.
pub fn brute_force_mobility(
    mctx: &MobilityContext,
    grid_b: usize,
    grid_r: usize,
    grid_back: usize,
) -> Result<MobilityOraclePoint> {
    check_grid(grid_back)?;
    let recompute = brute_force(&mctx.base, grid_b, grid_r)?;
    let mut back = (f64::NAN, f64::INFINITY);
    for b in mctx.back_bandwidth_bounds.grid(grid_back) {
        let u = back_transfer_utility(mctx, b)?;
        if u < back.1 {
            back = (b, u);
        }
    }
    let decision = if back.1 < recompute.utility() {
        Decision::TransmitBack
    } else {
        Decision::Recompute
    };
    let utility = match decision {
        Decision::Recompute => recompute.utility(),
        Decision::TransmitBack => back.1,
    };
    Ok(MobilityOraclePoint {
        decision,
        recompute,
        back_bandwidth: back.0,
        back_utility: back.1,
        utility,
    })
}

/// Every layer on the device; nothing transmitted or rented.
pub fn device_only(ctx: &UserContext) -> Result<StrategyPoint> {
    StrategyPoint::evaluate(
        ctx,
        ctx.num_layers(),
        ctx.bandwidth_bounds().min,
        ctx.compute_bounds().min,
    )
}

/// Every layer on the server with maximal bandwidth and compute rented.
pub fn edge_only(ctx: &UserContext) -> Result<StrategyPoint> {
    StrategyPoint::evaluate(ctx, 0, ctx.bandwidth_bounds().max, ctx.compute_bounds().max)
}

fn min_delay_split(ctx: &UserContext, compute: f64) -> Result<StrategyPoint> {
    let b = ctx.bandwidth_bounds().max;
    let mut best: Option<(usize, f64)> = None;
    for split in 0..=ctx.num_layers() {
        let d = cost::total_delay(ctx, split, b, compute)?;
        if best.is_none_or(|(_, cur)| d < cur) {
            best = Some((split, d));
        }
    }
    let (split, _) = best.expect("at least one split");
    StrategyPoint::evaluate(ctx, split, b, compute)
}

/// Split minimising delay alone at maximal bandwidth and compute.
pub fn latency_only_split(ctx: &UserContext) -> Result<StrategyPoint> {
    min_delay_split(ctx, ctx.compute_bounds().max)
}

/// As [`latency_only_split`] with compute fixed at `r_cap`.
pub fn capped_latency_split(ctx: &UserContext, r_cap: f64) -> Result<StrategyPoint> {
    let rb = ctx.compute_bounds();
    if !rb.contains(r_cap) {
        return Err(Error::OutOfBounds {
            name: "r_cap",
            value: r_cap,
            min: rb.min,
            max: rb.max,
        });
    }
    min_delay_split(ctx, r_cap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{LayerProfile, ModelProfile};
    use crate::cost::tests::sample_ctx;
    use std::sync::Arc;

    fn one_layer_ctx() -> UserContext {
        let mut ctx = sample_ctx();
        ctx.model = Arc::new(
            ModelProfile::new(
                "one",
                vec![LayerProfile {
                    conv_count: 1,
                    pool_count: 0,
                    relu_count: 0,
                    flops: 4.0e8,
                    out_size_bits: 2.0e4,
                }],
                1.0e6,
                1.0e3,
            )
            .unwrap(),
        );
        ctx
    }

    #[test]
    fn two_by_two_grid_is_min_of_eight() {
        let ctx = one_layer_ctx();
        let bb = ctx.bandwidth_bounds();
        let rb = ctx.compute_bounds();
        let mut evals = Vec::new();
        for s in 0..=1 {
            for b in [bb.min, bb.max] {
                for r in [rb.min, rb.max] {
                    evals.push(cost::utility(&ctx, s, b, r).unwrap().utility);
                }
            }
        }
        assert_eq!(evals.len(), 8);
        let min = evals.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(brute_force(&ctx, 2, 2).unwrap().utility(), min);
    }

    #[test]
    fn refining_grid_never_worse() {
        let ctx = sample_ctx();
        // 9 points contain the 5 point grid
        let coarse = brute_force(&ctx, 5, 5).unwrap().utility();
        let fine = brute_force(&ctx, 9, 9).unwrap().utility();
        assert!(fine <= coarse);
    }

    #[test]
    fn split_slice_matches_full_search() {
        let ctx = sample_ctx();
        let full = brute_force(&ctx, 20, 20).unwrap();
        let slice = brute_force_split(&ctx, full.split, 20, 20).unwrap();
        assert_eq!(full, slice);
        for s in 0..=ctx.num_layers() {
            assert!(brute_force_split(&ctx, s, 20, 20).unwrap().utility() >= full.utility());
        }
    }

    #[test]
    fn small_grid_rejected() {
        assert!(brute_force(&sample_ctx(), 1, 5).is_err());
    }

    #[test]
    fn device_only_values() {
        let mut ctx = sample_ctx();
        ctx.strategy_calc_delay = 0.0;
        let p = device_only(&ctx).unwrap();
        let total = ctx.model.total_flops();
        assert_eq!(p.breakdown.delay_s, total / ctx.device.compute_capability);
        assert_eq!(p.breakdown.cost_cbr, 0.0);
        let d = ctx.device;
        let e = d.switched_capacitance * d.compute_capability.powi(2) * d.cycles_per_bit * total;
        assert!((p.breakdown.energy_j - e).abs() <= 1e-12 * e);
        ctx.hops = 9;
        assert_eq!(device_only(&ctx).unwrap().breakdown, p.breakdown);
    }

    #[test]
    fn edge_only_values() {
        let ctx = sample_ctx();
        let p = edge_only(&ctx).unwrap();
        assert_eq!(p.split, 0);
        // no device compute energy: all energy is radio
        let radio =
            cost::transmit_energy(&ctx, ctx.transmitted_bits(0).unwrap(), p.bandwidth).unwrap();
        assert_eq!(p.breakdown.energy_j, radio);
        // maximal rent among strategies with the same rounds
        for s in 0..ctx.num_layers() {
            for b in ctx.bandwidth_bounds().grid(5) {
                for r in ctx.compute_bounds().grid(5) {
                    let u = cost::utility(&ctx, s, b, r).unwrap();
                    assert!(u.cost_cbr <= p.breakdown.cost_cbr);
                }
            }
        }
    }

    #[test]
    fn latency_only_beats_extremes_on_delay() {
        let ctx = sample_ctx();
        let lat = latency_only_split(&ctx).unwrap();
        assert!(lat.breakdown.delay_s <= device_only(&ctx).unwrap().breakdown.delay_s);
        assert!(lat.breakdown.delay_s <= edge_only(&ctx).unwrap().breakdown.delay_s);
        let mut other = ctx.clone();
        other.weights = cost::Weights::new(0.0, 0.0, 1.0);
        assert_eq!(latency_only_split(&other).unwrap().split, lat.split);
    }

    #[test]
    fn capped_split_properties() {
        let ctx = sample_ctx();
        let lat = latency_only_split(&ctx).unwrap();
        assert_eq!(
            capped_latency_split(&ctx, ctx.compute_bounds().max).unwrap(),
            lat
        );
        let capped = capped_latency_split(&ctx, 2.0).unwrap();
        assert!(capped.breakdown.delay_s >= lat.breakdown.delay_s);
        // same split: smaller r rents less at the same B
        let same = StrategyPoint::evaluate(&ctx, lat.split, lat.bandwidth, 2.0).unwrap();
        assert!(same.breakdown.cost_cbr <= lat.breakdown.cost_cbr);
        assert!(capped_latency_split(&ctx, 100.0).is_err());
    }
}
