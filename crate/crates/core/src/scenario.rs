//! Scenario files: users, servers, the AP graph, models, solver settings and
//! experiment sweeps in one JSON document.
//!
//! Everything a run needs is resolved up front by [`Scenario::resolve`], so a
//! dangling id or an invalid parameter is reported before any solve starts.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::catalog::{synthetic_catalog, ModelFile, ModelProfile, CATALOG_NAMES};
use crate::cost::{ChannelParams, DeviceProfile, ServerProfile, UserContext, Weights};
use crate::error::{Error, Result};
use crate::ligd::{li_gd, SolverConfig};
use crate::topology::{ApGraph, ApId, GraphSpec, ServerId, UserId};

/// `T_Ag` as a fixed number of seconds, or `"measured"` to use the wall time
/// of the user's own solve. Measured runs are not reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CalcDelay {
    Seconds(f64),
    Mode(CalcMode),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalcMode {
    Measured,
}

impl Default for CalcDelay {
    fn default() -> Self {
        CalcDelay::Seconds(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSpec {
    pub id: UserId,
    pub ap: ApId,
    /// Catalog name or the name of an inline model.
    pub model: String,
    pub device: DeviceProfile,
    pub channel: ChannelParams,
    pub rounds: u32,
    #[serde(default)]
    pub strategy_calc_delay: CalcDelay,
    pub weights: Weights,
}

/// Strategy the normalised columns are measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    #[default]
    DeviceOnly,
    LatencyOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub baseline: BaselineKind,
    /// Compute units granted to the capped latency-only baseline.
    pub r_cap: f64,
    #[serde(default = "default_hops")]
    pub hop_values: Vec<u32>,
    #[serde(default = "default_rounds")]
    pub round_counts: Vec<u32>,
    /// Effective `B_max` at load `k` is `B_max / (1 + k * contention_coeff)`.
    #[serde(default)]
    pub contention_coeff: f64,
}

fn default_hops() -> Vec<u32> {
    (2..=10).collect()
}

fn default_rounds() -> Vec<u32> {
    vec![1, 2, 4, 8, 16]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub id: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub models: Vec<ModelFile>,
    pub graph: GraphSpec,
    pub servers: Vec<ServerProfile>,
    pub users: Vec<UserSpec>,
    #[serde(default)]
    pub solver: SolverConfig,
    pub experiment: ExperimentSpec,
}

impl ScenarioFile {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

/// A user ready to solve: the spec plus its resolved context at its
/// starting AP.
#[derive(Debug, Clone)]
pub struct ResolvedUser {
    pub spec: UserSpec,
    pub server: ServerId,
    pub ctx: UserContext,
}

/// A validated scenario with every reference resolved.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub seed: u64,
    pub graph: ApGraph,
    pub servers: BTreeMap<ServerId, ServerProfile>,
    pub models: BTreeMap<String, Arc<ModelProfile>>,
    pub users: Vec<ResolvedUser>,
    pub solver: SolverConfig,
    pub experiment: ExperimentSpec,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        Self::resolve(ScenarioFile::from_file(path)?)
    }

    pub fn resolve(file: ScenarioFile) -> Result<Self> {
        let graph = ApGraph::from_spec(&file.graph)?;

        let mut servers = BTreeMap::new();
        for s in file.servers {
            s.validate()?;
            if graph.server_ap(s.id).is_none() {
                return Err(Error::Config(format!(
                    "server {} is not placed in the graph",
                    s.id
                )));
            }
            let id = s.id;
            if servers.insert(id, s).is_some() {
                return Err(Error::Config(format!("duplicate server {id}")));
            }
        }
        for (id, _) in graph.servers() {
            if !servers.contains_key(&id) {
                return Err(Error::Config(format!(
                    "graph places server {id} without a profile"
                )));
            }
        }

        let mut models = BTreeMap::new();
        for m in &file.models {
            if models
                .insert(m.name.clone(), Arc::new(m.build()?))
                .is_some()
            {
                return Err(Error::Config(format!("duplicate model {:?}", m.name)));
            }
        }

        let mut solver = file.solver;
        solver.seed = file.seed;
        solver.validate()?;

        let exp = &file.experiment;
        for (id, s) in &servers {
            if !s.compute_bounds.contains(exp.r_cap) {
                return Err(Error::Config(format!(
                    "r_cap {} is outside the compute bounds of server {id}",
                    exp.r_cap
                )));
            }
        }
        if exp.hop_values.is_empty() {
            return Err(Error::Config("hop_values must not be empty".into()));
        }
        if exp.round_counts.is_empty() || exp.round_counts.contains(&0) {
            return Err(Error::Config(
                "round_counts must be nonempty and positive".into(),
            ));
        }
        if !(exp.contention_coeff >= 0.0 && exp.contention_coeff.is_finite()) {
            return Err(Error::Config(format!(
                "contention_coeff must be a nonnegative number, got {}",
                exp.contention_coeff
            )));
        }

        let mut scenario = Scenario {
            id: file.id,
            seed: file.seed,
            graph,
            servers,
            models,
            users: Vec::with_capacity(file.users.len()),
            solver,
            experiment: file.experiment,
        };
        let mut seen = BTreeSet::new();
        for spec in file.users {
            if !seen.insert(spec.id) {
                return Err(Error::Config(format!("duplicate user {}", spec.id)));
            }
            scenario.resolve_model(&spec.model)?;
            let server = scenario.graph.serving_server(spec.ap)?;
            let ctx = scenario.context(&spec, spec.ap, server)?;
            scenario.users.push(ResolvedUser { spec, server, ctx });
        }
        if scenario.users.is_empty() {
            return Err(Error::Config("scenario has no users".into()));
        }
        scenario.users.sort_by_key(|u| u.spec.id);
        Ok(scenario)
    }

    fn resolve_model(&mut self, name: &str) -> Result<Arc<ModelProfile>> {
        if let Some(m) = self.models.get(name) {
            return Ok(Arc::clone(m));
        }
        if !CATALOG_NAMES.contains(&name) {
            return Err(Error::UnknownModel(name.to_string()));
        }
        let m = Arc::new(synthetic_catalog(name)?);
        self.models.insert(name.to_string(), Arc::clone(&m));
        Ok(m)
    }

    pub fn server(&self, id: ServerId) -> Result<&ServerProfile> {
        self.servers
            .get(&id)
            .ok_or_else(|| Error::Config(format!("unknown server {id}")))
    }

    /// Context of `spec` attached at `ap` and offloading to `server`.
    pub fn context(&self, spec: &UserSpec, ap: ApId, server: ServerId) -> Result<UserContext> {
        let model = self
            .models
            .get(&spec.model)
            .cloned()
            .ok_or_else(|| Error::UnknownModel(spec.model.clone()))?;
        let mut ctx = UserContext {
            device: spec.device,
            channel: spec.channel,
            server: *self.server(server)?,
            model,
            hops: self.graph.hop_count(ap, server)?,
            backhaul_bandwidth: self.graph.backhaul_bandwidth(),
            rounds: spec.rounds,
            strategy_calc_delay: 0.0,
            weights: spec.weights,
        };
        ctx.strategy_calc_delay = match spec.strategy_calc_delay {
            CalcDelay::Seconds(t) => t,
            CalcDelay::Mode(CalcMode::Measured) => {
                ctx.validate()?;
                let started = Instant::now();
                li_gd(&ctx, &self.solver)?;
                started.elapsed().as_secs_f64()
            }
        };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn user(&self, id: UserId) -> Result<&ResolvedUser> {
        self.users
            .iter()
            .find(|u| u.spec.id == id)
            .ok_or_else(|| Error::Config(format!("unknown user {id}")))
    }
}
