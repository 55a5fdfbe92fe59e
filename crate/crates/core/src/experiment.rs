//! Experiment runs over a resolved [`Scenario`]: static comparison, trace
//! replay, hop and load sweeps and an oracle cross-check. Every run returns
//! [`ResultRow`]s in a fixed order, and [`emit`] writes them as CSV.
//!
//! CSV columns, in order: `scenario, sweep, user, strategy, split,
//! bandwidth_hz, compute_units, decision, delay_s, energy_j, cost, utility,
//! speedup, energy_reduction, cost_ratio, iterations`. The three ratio
//! columns are `baseline / strategy` within one `(scenario, sweep, user)`
//! group, so the baseline row reads exactly 1.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{self, StrategyPoint};
use crate::cost::{Bounds, UserContext, UtilityBreakdown};
use crate::error::{Error, Result};
use crate::ligd::{li_gd, LayerSolution};
use crate::mligd::{back_transfer_breakdown, mli_gd, Decision, MobilityContext};
use crate::scenario::{BaselineKind, Scenario};
use crate::topology::{Attachment, HandoverEvent, MobilityState, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Mcsa,
    DeviceOnly,
    EdgeOnly,
    LatencyOnly,
    Capped,
    Oracle,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Mcsa => "mcsa",
            Strategy::DeviceOnly => "device_only",
            Strategy::EdgeOnly => "edge_only",
            Strategy::LatencyOnly => "latency_only",
            Strategy::Capped => "capped",
            Strategy::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl From<BaselineKind> for Strategy {
    fn from(kind: BaselineKind) -> Self {
        match kind {
            BaselineKind::DeviceOnly => Strategy::DeviceOnly,
            BaselineKind::LatencyOnly => Strategy::LatencyOnly,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    /// `static`, `event=N`, `hops=H`, `rounds=K` or `oracle`.
    pub sweep: String,
    pub user: UserId,
    pub strategy: Strategy,
    pub split: usize,
    pub bandwidth_hz: f64,
    pub compute_units: f64,
    /// `R` of a handover decision; empty outside mobility runs.
    pub decision: Option<u8>,
    pub delay_s: f64,
    pub energy_j: f64,
    pub cost: f64,
    pub utility: f64,
    pub speedup: f64,
    pub energy_reduction: f64,
    pub cost_ratio: f64,
    pub iterations: usize,
}

/// One evaluated strategy before it is labelled and normalised.
#[derive(Debug, Clone)]
struct Outcome {
    strategy: Strategy,
    split: usize,
    bandwidth: f64,
    compute: f64,
    decision: Option<Decision>,
    breakdown: UtilityBreakdown,
    iterations: usize,
}

impl Outcome {
    fn point(strategy: Strategy, p: StrategyPoint) -> Self {
        Outcome {
            strategy,
            split: p.split,
            bandwidth: p.bandwidth,
            compute: p.compute,
            decision: None,
            breakdown: p.breakdown,
            iterations: 0,
        }
    }

    fn solved(sol: &LayerSolution, iterations: usize) -> Self {
        Outcome {
            strategy: Strategy::Mcsa,
            split: sol.split,
            bandwidth: sol.bandwidth,
            compute: sol.compute,
            decision: None,
            breakdown: sol.breakdown,
            iterations,
        }
    }
}

fn ratio(baseline: f64, value: f64) -> f64 {
    if baseline == value {
        1.0
    } else {
        baseline / value
    }
}

/// Label and normalise one `(sweep, user)` group. The baseline outcome must
/// be present.
fn group_rows(
    scenario: &Scenario,
    sweep: &str,
    user: UserId,
    outcomes: Vec<Outcome>,
) -> Result<Vec<ResultRow>> {
    let baseline = Strategy::from(scenario.experiment.baseline);
    let base = outcomes
        .iter()
        .find(|o| o.strategy == baseline)
        .map(|o| o.breakdown)
        .ok_or_else(|| Error::Config(format!("no {baseline} row to normalise against")))?;
    Ok(outcomes
        .into_iter()
        .map(|o| ResultRow {
            scenario: scenario.id.clone(),
            sweep: sweep.to_string(),
            user,
            strategy: o.strategy,
            split: o.split,
            bandwidth_hz: o.bandwidth,
            compute_units: o.compute,
            decision: o.decision.map(Decision::as_r),
            delay_s: o.breakdown.delay_s,
            energy_j: o.breakdown.energy_j,
            cost: o.breakdown.cost_cbr,
            utility: o.breakdown.utility,
            speedup: ratio(base.delay_s, o.breakdown.delay_s),
            energy_reduction: ratio(base.energy_j, o.breakdown.energy_j),
            cost_ratio: ratio(base.cost_cbr, o.breakdown.cost_cbr),
            iterations: o.iterations,
        })
        .collect())
}

/// The four comparison strategies evaluated in `ctx`.
fn baseline_outcomes(scenario: &Scenario, ctx: &UserContext) -> Result<Vec<Outcome>> {
    Ok(vec![
        Outcome::point(Strategy::DeviceOnly, baselines::device_only(ctx)?),
        Outcome::point(Strategy::EdgeOnly, baselines::edge_only(ctx)?),
        Outcome::point(Strategy::LatencyOnly, baselines::latency_only_split(ctx)?),
        Outcome::point(
            Strategy::Capped,
            baselines::capped_latency_split(ctx, scenario.experiment.r_cap)?,
        ),
    ])
}

fn solve_all(scenario: &Scenario, ctx: &UserContext) -> Result<(LayerSolution, Vec<Outcome>)> {
    let report = li_gd(ctx, &scenario.solver)?;
    let mut outcomes = vec![Outcome::solved(&report.best, report.total_iterations)];
    outcomes.extend(baseline_outcomes(scenario, ctx)?);
    Ok((report.best, outcomes))
}

/// One row per user and strategy with every user at its starting AP.
pub fn run_static(scenario: &Scenario) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for u in &scenario.users {
        let (_, outcomes) = solve_all(scenario, &u.ctx)?;
        rows.extend(group_rows(scenario, "static", u.spec.id, outcomes)?);
    }
    Ok(rows)
}

/// [`run_static`] followed by one `event=N` group per handover, replayed in
/// time order. At each handover MCSA decides between recomputing at the new
/// AP's server and relaying back to the server holding the user's layers;
/// the baselines are re-evaluated at the new AP.
pub fn run_mobility(scenario: &Scenario, trace: &[HandoverEvent]) -> Result<Vec<ResultRow>> {
    let mut events = trace.to_vec();
    events.sort_by_key(|e| e.time_index);
    for e in &events {
        scenario.user(e.user)?;
        e.validate(&scenario.graph)?;
    }

    let mut rows = Vec::new();
    let mut state = MobilityState::new();
    for u in &scenario.users {
        let (best, outcomes) = solve_all(scenario, &u.ctx)?;
        rows.extend(group_rows(scenario, "static", u.spec.id, outcomes)?);
        state.attach(
            u.spec.id,
            Attachment {
                ap: u.spec.ap,
                server: u.server,
                strategy: Some(best),
            },
        );
    }

    for (n, event) in events.iter().enumerate() {
        let record = state.apply_handover(&scenario.graph, event)?;
        let spec = &scenario.user(event.user)?.spec;
        let strategy = record
            .original_strategy
            .clone()
            .ok_or_else(|| Error::Config(format!("user {} has no strategy", event.user)))?;
        // Frozen terms never depend on the hop count, so the original
        // server seen from the new AP is a faithful original context.
        let original = scenario.context(spec, record.new_ap, record.original_server)?;
        let base = scenario.context(spec, record.new_ap, record.new_server)?;
        let mctx =
            MobilityContext::at_handover(&original, strategy.clone(), base, record.back_hops)?;
        let sol = mli_gd(&mctx, &scenario.solver)?;

        let mcsa = match sol.decision {
            Decision::Recompute => {
                state.commit(event.user, record.new_server, sol.recompute.clone());
                Outcome {
                    decision: Some(Decision::Recompute),
                    ..Outcome::solved(&sol.recompute, sol.total_iterations)
                }
            }
            Decision::TransmitBack => Outcome {
                strategy: Strategy::Mcsa,
                split: strategy.split,
                bandwidth: sol.back_bandwidth,
                compute: strategy.compute,
                decision: Some(Decision::TransmitBack),
                breakdown: back_transfer_breakdown(&mctx, sol.back_bandwidth)?,
                iterations: sol.total_iterations,
            },
        };
        log::debug!(
            "event {} ({} {} -> {}): R = {}",
            n + 1,
            event.user,
            event.from_ap,
            event.to_ap,
            sol.decision.as_r()
        );
        let mut outcomes = vec![mcsa];
        outcomes.extend(baseline_outcomes(scenario, &mctx.base)?);
        rows.extend(group_rows(
            scenario,
            &format!("event={}", n + 1),
            event.user,
            outcomes,
        )?);
    }
    Ok(rows)
}

/// Every user re-solved at each hop distance in `hop_values`.
pub fn run_hop_sweep(scenario: &Scenario, hop_values: &[u32]) -> Result<Vec<ResultRow>> {
    if hop_values.is_empty() {
        return Err(Error::Config("hop_values must not be empty".into()));
    }
    let mut rows = Vec::new();
    for &h in hop_values {
        for u in &scenario.users {
            let mut ctx = u.ctx.clone();
            ctx.hops = h;
            let (_, outcomes) = solve_all(scenario, &ctx)?;
            rows.extend(group_rows(
                scenario,
                &format!("hops={h}"),
                u.spec.id,
                outcomes,
            )?);
        }
    }
    Ok(rows)
}

/// Effective bandwidth box under load `rounds`: `B_max` shrinks by
/// `1 + rounds * coeff` but never below `B_min`.
pub fn contended_bounds(bounds: Bounds, rounds: u32, coeff: f64) -> Bounds {
    let max = (bounds.max / (1.0 + f64::from(rounds) * coeff)).max(bounds.min);
    Bounds::new(bounds.min, max)
}

/// Every user re-solved at each round count, with bandwidth contention
/// growing with the load.
pub fn run_load_sweep(scenario: &Scenario, round_counts: &[u32]) -> Result<Vec<ResultRow>> {
    if round_counts.is_empty() || round_counts.contains(&0) {
        return Err(Error::Config(
            "round_counts must be nonempty and positive".into(),
        ));
    }
    let coeff = scenario.experiment.contention_coeff;
    let mut rows = Vec::new();
    for &k in round_counts {
        for u in &scenario.users {
            let mut ctx = u.ctx.clone();
            ctx.rounds = k;
            ctx.channel.bandwidth_bounds = contended_bounds(ctx.channel.bandwidth_bounds, k, coeff);
            let (_, outcomes) = solve_all(scenario, &ctx)?;
            rows.extend(group_rows(
                scenario,
                &format!("rounds={k}"),
                u.spec.id,
                outcomes,
            )?);
        }
    }
    Ok(rows)
}

/// Li-GD against the grid oracle for every user. Rows are returned when all
/// gaps are within `max(eps, 1% of |oracle|)`; otherwise the worst gap is
/// reported as an error.
pub fn oracle_check(scenario: &Scenario, grid_b: usize, grid_r: usize) -> Result<Vec<ResultRow>> {
    let eps = scenario.solver.accuracy_eps;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for u in &scenario.users {
        let report = li_gd(&u.ctx, &scenario.solver)?;
        let oracle = baselines::brute_force(&u.ctx, grid_b, grid_r)?;
        let gap = report.best.utility - oracle.utility();
        let tol = eps.max(0.01 * oracle.utility().abs());
        if gap > tol {
            failures.push(format!("{}: gap {gap:.3e} > {tol:.3e}", u.spec.id));
        }
        let baseline = Strategy::from(scenario.experiment.baseline);
        let base_point = match scenario.experiment.baseline {
            BaselineKind::DeviceOnly => baselines::device_only(&u.ctx)?,
            BaselineKind::LatencyOnly => baselines::latency_only_split(&u.ctx)?,
        };
        let outcomes = vec![
            Outcome::solved(&report.best, report.total_iterations),
            Outcome::point(baseline, base_point),
            Outcome::point(Strategy::Oracle, oracle),
        ];
        rows.extend(group_rows(scenario, "oracle", u.spec.id, outcomes)?);
    }
    if failures.is_empty() {
        Ok(rows)
    } else {
        Err(Error::OracleGap(failures.join("; ")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum OutputFormat {
    /// One row per strategy in the documented column order.
    #[default]
    Csv,
    /// Long form `figure, series, x, y`, grouped by figure.
    Plot,
}

#[derive(Debug, Serialize)]
struct PlotRow<'a> {
    figure: &'static str,
    series: String,
    x: &'a str,
    y: f64,
}

type Metric = (&'static str, fn(&ResultRow) -> f64);

const PLOT_METRICS: [Metric; 5] = [
    ("speedup", |r| r.speedup),
    ("energy_reduction", |r| r.energy_reduction),
    ("cost_ratio", |r| r.cost_ratio),
    ("delay_s", |r| r.delay_s),
    ("utility", |r| r.utility),
];

pub fn write_rows<W: Write>(rows: &[ResultRow], out: W, format: OutputFormat) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Config("no rows to emit".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    match format {
        OutputFormat::Csv => {
            for row in rows {
                w.serialize(row)?;
            }
        }
        OutputFormat::Plot => {
            for (figure, metric) in PLOT_METRICS {
                for row in rows {
                    w.serialize(PlotRow {
                        figure,
                        series: format!("{}/{}", row.user, row.strategy),
                        x: &row.sweep,
                        y: metric(row),
                    })?;
                }
            }
        }
    }
    w.flush()
        .map_err(|e| Error::Config(format!("flushing output: {e}")))?;
    Ok(())
}

pub fn emit(rows: &[ResultRow], path: &Path, format: OutputFormat) -> Result<()> {
    let mut buf = Vec::new();
    write_rows(rows, &mut buf, format)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_rows<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

pub fn parse_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_rows(file)
}
