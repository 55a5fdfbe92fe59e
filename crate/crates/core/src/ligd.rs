//! Layer-by-layer projected gradient descent over bandwidth and compute.
//!
//! For each split `s = 0..=M` the continuous problem in `(B, r)` is solved by
//! projected gradient descent, starting from the previous split's optimum.
//! The best split is the argmin of the per-split optima.
//!
//! Descent runs on the unit box: `B` and `r` are mapped affinely onto
//! `[0, 1]`, so a single step size and the accuracy threshold apply to both
//! coordinates on the same scale. Reported strategies are in physical units.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{self, Bounds, UserContext, UtilityBreakdown};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartPoint {
    pub bandwidth: f64,
    pub compute: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub accuracy_eps: f64,
    /// Fixed step in unit-box coordinates. `None` uses `1 / L` with `L`
    /// estimated per split from sampled gradient differences.
    pub step_size: Option<f64>,
    pub max_inner_iters: usize,
    /// Start of the first split. `None` is the midpoint of both boxes.
    pub cold_start: Option<StartPoint>,
    /// Start each split from the previous split's optimum.
    pub warm_start: bool,
    pub lipschitz_samples: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            accuracy_eps: 1e-4,
            step_size: None,
            max_inner_iters: 200_000,
            cold_start: None,
            warm_start: true,
            lipschitz_samples: 100,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.accuracy_eps > 0.0 && self.accuracy_eps.is_finite()) {
            return Err(Error::Config(format!(
                "accuracy_eps must be positive, got {}",
                self.accuracy_eps
            )));
        }
        if let Some(eta) = self.step_size {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::Config(format!(
                    "step_size must be positive, got {eta}"
                )));
            }
        }
        if self.max_inner_iters == 0 {
            return Err(Error::Config("max_inner_iters must be at least 1".into()));
        }
        Ok(())
    }

    pub(crate) fn cold_point(&self, ctx: &UserContext) -> (f64, f64) {
        match self.cold_start {
            Some(p) => (
                ctx.bandwidth_bounds().clamp(p.bandwidth),
                ctx.compute_bounds().clamp(p.compute),
            ),
            None => (
                ctx.bandwidth_bounds().midpoint(),
                ctx.compute_bounds().midpoint(),
            ),
        }
    }
}

/// Optimum of the continuous variables at one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSolution {
    pub split: usize,
    pub bandwidth: f64,
    pub compute: f64,
    pub utility: f64,
    pub breakdown: UtilityBreakdown,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub best: LayerSolution,
    /// One entry per split `0..=M`.
    pub per_layer: Vec<LayerSolution>,
    pub total_iterations: usize,
}

impl SolverReport {
    pub fn converged(&self) -> Vec<bool> {
        self.per_layer.iter().map(|l| l.converged).collect()
    }
}

/// Log-scaled map between a physical box and `[0, 1]^2`. Both resources enter
/// the utility through reciprocals, so log coordinates keep the curvature
/// comparable across the box.
#[derive(Debug, Clone, Copy)]
pub struct UnitBox {
    pub bandwidth: Bounds,
    pub compute: Bounds,
}

fn log_span(bounds: Bounds) -> f64 {
    (bounds.max / bounds.min).ln()
}

pub(crate) fn to_unit(bounds: Bounds, v: f64) -> f64 {
    let span = log_span(bounds);
    if span > 0.0 {
        ((v / bounds.min).ln() / span).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

pub(crate) fn from_unit(bounds: Bounds, x: f64) -> f64 {
    if x >= 1.0 {
        bounds.max
    } else if x <= 0.0 {
        bounds.min
    } else {
        (bounds.min * (x * log_span(bounds)).exp()).clamp(bounds.min, bounds.max)
    }
}

/// `dv/dx` of the map at physical value `v`.
pub(crate) fn unit_jacobian(bounds: Bounds, v: f64) -> f64 {
    v * log_span(bounds)
}

impl UnitBox {
    pub fn of(ctx: &UserContext) -> Self {
        UnitBox {
            bandwidth: ctx.bandwidth_bounds(),
            compute: ctx.compute_bounds(),
        }
    }

    pub fn to_unit(&self, bandwidth: f64, compute: f64) -> [f64; 2] {
        [
            to_unit(self.bandwidth, bandwidth),
            to_unit(self.compute, compute),
        ]
    }

    pub fn from_unit(&self, x: [f64; 2]) -> (f64, f64) {
        (
            from_unit(self.bandwidth, x[0]),
            from_unit(self.compute, x[1]),
        )
    }
}

/// One point visited by the descent, in physical units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Iterate {
    pub bandwidth: f64,
    pub compute: f64,
    pub utility: f64,
}

/// Result of a projected descent on `[0, 1]^N`.
#[derive(Debug, Clone)]
pub(crate) struct Descent<const N: usize> {
    pub x: [f64; N],
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn norm<const N: usize>(v: &[f64; N]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Projected gradient descent on the unit box with a step per coordinate and
/// the three stopping rules:
/// projected-gradient norm below `eps`, objective change below `eps`, or
/// every coordinate moving less than `eps`.
///
/// `eval` returns the objective and its gradient at a point; `fail` builds
/// the error for a non-finite term.
pub(crate) fn projected_descent<const N: usize>(
    eval: impl Fn(&[f64; N]) -> Result<(f64, [f64; N])>,
    fail: impl Fn(&'static str, &[f64; N]) -> Error,
    start: [f64; N],
    eta: [f64; N],
    eps: f64,
    max_iters: usize,
    mut visit: impl FnMut(&[f64; N], f64),
) -> Result<Descent<N>> {
    let mut x = start.map(|v| v.clamp(0.0, 1.0));
    let (mut value, mut grad) = eval(&x)?;
    if !value.is_finite() {
        return Err(fail("utility", &x));
    }
    visit(&x, value);
    for k in 0..max_iters {
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(fail("gradient", &x));
        }
        let mut next = x;
        for i in 0..N {
            next[i] = (x[i] - eta[i] * grad[i]).clamp(0.0, 1.0);
        }
        let mut mapping = [0.0; N];
        for i in 0..N {
            mapping[i] = (x[i] - next[i]) / eta[i];
        }
        if norm(&mapping) < eps {
            return Ok(Descent {
                x,
                value,
                iterations: k,
                converged: true,
            });
        }
        let (next_value, next_grad) = eval(&next)?;
        if !next_value.is_finite() {
            return Err(fail("utility", &next));
        }
        visit(&next, next_value);
        let moved = (0..N).map(|i| (next[i] - x[i]).abs()).fold(0.0, f64::max);
        let change = (next_value - value).abs();
        x = next;
        value = next_value;
        grad = next_grad;
        if change < eps || moved < eps {
            return Ok(Descent {
                x,
                value,
                iterations: k + 1,
                converged: true,
            });
        }
    }
    Ok(Descent {
        x,
        value,
        iterations: max_iters,
        converged: false,
    })
}

/// Per-coordinate smoothness constants: the largest
/// `|g_i(x) - g_i(y)| / |x_i - y_i|` over sampled pairs in the unit box. This
/// bounds the curvature of objectives that separate by coordinate, which the
/// utility does for a fixed split. The pair hugging the origin corner is
/// always included since the delay terms curve hardest there.
pub(crate) fn sampled_lipschitz<const N: usize>(
    grad: impl Fn(&[f64; N]) -> Result<[f64; N]>,
    samples: usize,
    seed: u64,
) -> Result<[f64; N]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs: Vec<([f64; N], [f64; N])> = Vec::with_capacity(samples + 1);
    pairs.push(([0.0; N], [1e-3; N]));
    for _ in 0..samples {
        let a: [f64; N] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
        let b: [f64; N] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
        pairs.push((a, b));
    }
    let mut lip = [0.0f64; N];
    for (a, b) in pairs {
        let ga = grad(&a)?;
        let gb = grad(&b)?;
        for i in 0..N {
            let dist = (a[i] - b[i]).abs();
            if dist > 0.0 {
                lip[i] = lip[i].max((ga[i] - gb[i]).abs() / dist);
            }
        }
    }
    Ok(lip)
}

pub(crate) fn step_from_lipschitz<const N: usize>(lip: [f64; N]) -> [f64; N] {
    lip.map(|l| {
        if l > 0.0 && l.is_finite() {
            1.0 / l
        } else {
            1.0
        }
    })
}

/// Utility and its gradient in unit-box coordinates.
fn unit_eval(
    ctx: &UserContext,
    split: usize,
    ub: &UnitBox,
    x: &[f64; 2],
) -> Result<(f64, [f64; 2])> {
    let (b, r) = ub.from_unit(*x);
    let u = cost::utility(ctx, split, b, r)?.utility;
    Ok((u, unit_grad(ctx, split, ub, x)?))
}

fn unit_grad(ctx: &UserContext, split: usize, ub: &UnitBox, x: &[f64; 2]) -> Result<[f64; 2]> {
    let (b, r) = ub.from_unit(*x);
    Ok([
        cost::grad_b(ctx, split, b, r)? * unit_jacobian(ub.bandwidth, b),
        cost::grad_r(ctx, split, b, r)? * unit_jacobian(ub.compute, r),
    ])
}

/// Sampled smoothness constants `[L_B, L_r]` of the utility at `split`, in
/// unit-box coordinates.
pub fn estimate_lipschitz(
    ctx: &UserContext,
    split: usize,
    config: &SolverConfig,
) -> Result<[f64; 2]> {
    let ub = UnitBox::of(ctx);
    sampled_lipschitz(
        |x: &[f64; 2]| unit_grad(ctx, split, &ub, x),
        config.lipschitz_samples,
        config.seed ^ (split as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
    )
}

/// Steps `[eta_B, eta_r]` used at `split`: the configured one on both
/// coordinates, or `1 / L_i`.
pub fn step_size_for(ctx: &UserContext, split: usize, config: &SolverConfig) -> Result<[f64; 2]> {
    match config.step_size {
        Some(eta) => Ok([eta; 2]),
        None => Ok(step_from_lipschitz(estimate_lipschitz(ctx, split, config)?)),
    }
}

pub fn inner_gd(
    ctx: &UserContext,
    split: usize,
    start_bandwidth: f64,
    start_compute: f64,
    config: &SolverConfig,
) -> Result<LayerSolution> {
    inner_gd_with(ctx, split, start_bandwidth, start_compute, config, |_| {})
}

/// [`inner_gd`] that also returns every visited iterate, start included.
pub fn inner_gd_traced(
    ctx: &UserContext,
    split: usize,
    start_bandwidth: f64,
    start_compute: f64,
    config: &SolverConfig,
) -> Result<(LayerSolution, Vec<Iterate>)> {
    let mut trace = Vec::new();
    let sol = inner_gd_with(ctx, split, start_bandwidth, start_compute, config, |it| {
        trace.push(it)
    })?;
    Ok((sol, trace))
}

fn inner_gd_with(
    ctx: &UserContext,
    split: usize,
    start_bandwidth: f64,
    start_compute: f64,
    config: &SolverConfig,
    mut visit: impl FnMut(Iterate),
) -> Result<LayerSolution> {
    ctx.model.check_split(split)?;
    let ub = UnitBox::of(ctx);
    if !ub.bandwidth.contains(start_bandwidth) {
        return Err(Error::OutOfBounds {
            name: "start B",
            value: start_bandwidth,
            min: ub.bandwidth.min,
            max: ub.bandwidth.max,
        });
    }
    if !ub.compute.contains(start_compute) {
        return Err(Error::OutOfBounds {
            name: "start r",
            value: start_compute,
            min: ub.compute.min,
            max: ub.compute.max,
        });
    }

    if split == ctx.num_layers() {
        // Nothing is offloaded: the utility is flat in (B, r) and the
        // strategy rents the minimum.
        let (b, r) = (ub.bandwidth.min, ub.compute.min);
        let breakdown = cost::utility(ctx, split, b, r)?;
        visit(Iterate {
            bandwidth: b,
            compute: r,
            utility: breakdown.utility,
        });
        return Ok(LayerSolution {
            split,
            bandwidth: b,
            compute: r,
            utility: breakdown.utility,
            breakdown,
            iterations: 0,
            converged: true,
        });
    }

    let eta = step_size_for(ctx, split, config)?;
    let descent = projected_descent(
        |x| unit_eval(ctx, split, &ub, x),
        |term, x| {
            let (b, r) = ub.from_unit(*x);
            Error::Numerical {
                term,
                split,
                bandwidth: b,
                compute: r,
            }
        },
        ub.to_unit(start_bandwidth, start_compute),
        eta,
        config.accuracy_eps,
        config.max_inner_iters,
        |x, u| {
            let (b, r) = ub.from_unit(*x);
            visit(Iterate {
                bandwidth: b,
                compute: r,
                utility: u,
            })
        },
    )?;
    let (b, r) = ub.from_unit(descent.x);
    let breakdown = cost::utility(ctx, split, b, r)?;
    log::trace!(
        "split {split}: B={b:.4e} r={r:.4} U={:.6e} after {} iterations",
        breakdown.utility,
        descent.iterations
    );
    Ok(LayerSolution {
        split,
        bandwidth: b,
        compute: r,
        utility: breakdown.utility,
        breakdown,
        iterations: descent.iterations,
        converged: descent.converged,
    })
}

/// First layer with the smallest utility.
pub(crate) fn argmin_layer(per_layer: &[LayerSolution]) -> &LayerSolution {
    per_layer
        .iter()
        .reduce(|best, l| if l.utility < best.utility { l } else { best })
        .expect("at least one split")
}

pub fn li_gd(ctx: &UserContext, config: &SolverConfig) -> Result<SolverReport> {
    ctx.validate()?;
    config.validate()?;
    let cold = config.cold_point(ctx);
    let mut start = cold;
    let mut per_layer = Vec::with_capacity(ctx.num_layers() + 1);
    for split in 0..=ctx.num_layers() {
        let from = if config.warm_start { start } else { cold };
        let sol = inner_gd(ctx, split, from.0, from.1, config)?;
        start = (sol.bandwidth, sol.compute);
        per_layer.push(sol);
    }
    let best = argmin_layer(&per_layer).clone();
    let total_iterations = per_layer.iter().map(|l| l.iterations).sum();
    Ok(SolverReport {
        best,
        per_layer,
        total_iterations,
    })
}

/// Iteration bound `sum_i (x0_i - x*_i)^2 / eta_i / (2 * eps)` for gradient
/// descent on a convex separable objective with `eta_i <= 1/L_i`. With equal
/// steps this is `|x0 - x*|^2 / (2 * eta * eps)`. Points are in unit-box
/// coordinates.
pub fn convergence_bound(start: [f64; 2], optimum: [f64; 2], eta: [f64; 2], eps: f64) -> f64 {
    let d2: f64 = (0..2)
        .map(|i| (start[i] - optimum[i]).powi(2) / eta[i])
        .sum();
    d2 / (2.0 * eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::tests::sample_ctx;
    use crate::cost::Weights;

    #[test]
    fn bound_examples() {
        assert_eq!(
            convergence_bound([0.3, 0.4], [0.3, 0.4], [1.0; 2], 0.1),
            0.0
        );
        // |x0 - x*|^2 = 8
        assert!((convergence_bound([2.0, 2.0], [0.0, 0.0], [1.0; 2], 0.1) - 40.0).abs() < 1e-12);
    }

    #[test]
    fn all_local_split_rents_minimum() {
        let ctx = sample_ctx();
        let m = ctx.num_layers();
        for (b, r) in [(5.0e6, 1.0), (2.0e7, 8.0), (1.1e7, 3.3)] {
            let sol = inner_gd(&ctx, m, b, r, &SolverConfig::default()).unwrap();
            assert_eq!(sol.compute, ctx.compute_bounds().min);
            assert_eq!(sol.bandwidth, ctx.bandwidth_bounds().min);
            assert_eq!(sol.iterations, 0);
        }
    }

    #[test]
    fn stationary_start_takes_no_steps() {
        let ctx = sample_ctx();
        let cfg = SolverConfig {
            accuracy_eps: 1e-9,
            ..SolverConfig::default()
        };
        let first = inner_gd(&ctx, 3, 1.0e7, 4.0, &cfg).unwrap();
        let again = inner_gd(
            &ctx,
            3,
            first.bandwidth,
            first.compute,
            &SolverConfig::default(),
        )
        .unwrap();
        assert_eq!(again.iterations, 0);
        assert_eq!(again.bandwidth, first.bandwidth);
        assert_eq!(again.compute, first.compute);
    }

    #[test]
    fn start_out_of_bounds_rejected() {
        let ctx = sample_ctx();
        assert!(inner_gd(&ctx, 1, 1.0, 2.0, &SolverConfig::default()).is_err());
        assert!(inner_gd(&ctx, 1, 1.0e7, 100.0, &SolverConfig::default()).is_err());
    }

    #[test]
    fn non_finite_utility_reported() {
        let mut ctx = sample_ctx();
        ctx.device.tx_power = f64::INFINITY;
        let err = inner_gd(&ctx, 0, 1.0e7, 2.0, &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Numerical { .. }), "{err}");
    }

    #[test]
    fn single_layer_model_reports_both_splits() {
        use crate::catalog::{LayerProfile, ModelProfile};
        let mut ctx = sample_ctx();
        ctx.model = std::sync::Arc::new(
            ModelProfile::new(
                "one",
                vec![LayerProfile {
                    conv_count: 1,
                    pool_count: 0,
                    relu_count: 0,
                    flops: 1e9,
                    out_size_bits: 1e4,
                }],
                1e6,
                1e3,
            )
            .unwrap(),
        );
        let rep = li_gd(&ctx, &SolverConfig::default()).unwrap();
        assert_eq!(rep.per_layer.len(), 2);
        let min = rep.per_layer[0].utility.min(rep.per_layer[1].utility);
        assert_eq!(rep.best.utility, min);
    }

    #[test]
    fn report_best_is_first_minimum() {
        let ctx = sample_ctx();
        let rep = li_gd(&ctx, &SolverConfig::default()).unwrap();
        let min = rep
            .per_layer
            .iter()
            .map(|l| l.utility)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(rep.best.utility, min);
        let first = rep.per_layer.iter().position(|l| l.utility == min).unwrap();
        assert_eq!(rep.best.split, first);
        assert_eq!(
            rep.total_iterations,
            rep.per_layer.iter().map(|l| l.iterations).sum::<usize>()
        );
    }

    #[test]
    fn deterministic() {
        let ctx = sample_ctx();
        let a = li_gd(&ctx, &SolverConfig::default()).unwrap();
        let b = li_gd(&ctx, &SolverConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn iterates_stay_in_box_and_descend() {
        let mut ctx = sample_ctx();
        ctx.weights = Weights::new(0.3, 0.3, 0.4);
        let cfg = SolverConfig::default();
        for s in 0..ctx.num_layers() {
            let (_, trace) = inner_gd_traced(&ctx, s, 5.0e6, 8.0, &cfg).unwrap();
            for it in &trace {
                assert!(ctx.bandwidth_bounds().contains(it.bandwidth));
                assert!(ctx.compute_bounds().contains(it.compute));
            }
            for w in trace.windows(2) {
                assert!(w[1].utility <= w[0].utility + 1e-12, "split {s}");
            }
        }
    }
}
