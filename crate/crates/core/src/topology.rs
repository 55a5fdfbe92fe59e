//! Access-point graph, server placement and user attachment.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ligd::LayerSolution;

macro_rules! id_type {
    ($name:ident, $prefix:literal) => {
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(ApId, "ap");
id_type!(ServerId, "s");
id_type!(UserId, "u");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub a: ApId,
    pub b: ApId,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSite {
    pub server: ServerId,
    pub ap: ApId,
}

/// Serialized form of an [`ApGraph`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub aps: Vec<ApId>,
    pub edges: Vec<EdgeSpec>,
    pub servers: Vec<ServerSite>,
    /// Inter-AP bandwidth shared by every relay hop, bits/s.
    pub backhaul_bandwidth: f64,
}

/// Undirected weighted AP graph with edge servers hosted at some APs.
#[derive(Debug, Clone)]
pub struct ApGraph {
    adjacency: BTreeMap<ApId, Vec<(ApId, f64)>>,
    servers: BTreeMap<ServerId, ApId>,
    backhaul_bandwidth: f64,
}

/// Distance label used by the shortest-path search: total weight first,
/// then hop count so equal-weight paths resolve to the shorter one.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Label {
    weight: f64,
    hops: u32,
}

impl Label {
    fn cmp_key(&self, other: &Self) -> Ordering {
        self.weight
            .total_cmp(&other.weight)
            .then(self.hops.cmp(&other.hops))
    }
}

#[derive(PartialEq)]
struct QueueItem(Label, ApId);

impl Eq for QueueItem {}

impl PartialOrd for QueueItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QueueItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap
        other.0.cmp_key(&self.0).then(other.1.cmp(&self.1))
    }
}

impl ApGraph {
    pub fn from_spec(spec: &GraphSpec) -> Result<Self> {
        let mut adjacency: BTreeMap<ApId, Vec<(ApId, f64)>> = BTreeMap::new();
        for &ap in &spec.aps {
            if adjacency.insert(ap, Vec::new()).is_some() {
                return Err(Error::Graph(format!("duplicate AP {ap}")));
            }
        }
        if adjacency.is_empty() {
            return Err(Error::Graph("no APs".into()));
        }
        for e in &spec.edges {
            if !(e.weight > 0.0 && e.weight.is_finite()) {
                return Err(Error::Graph(format!(
                    "edge {}-{} has non-positive weight {}",
                    e.a, e.b, e.weight
                )));
            }
            if e.a == e.b {
                return Err(Error::Graph(format!("self-loop at {}", e.a)));
            }
            for (from, to) in [(e.a, e.b), (e.b, e.a)] {
                adjacency
                    .get_mut(&from)
                    .ok_or_else(|| Error::Graph(format!("edge references unknown AP {from}")))?
                    .push((to, e.weight));
            }
        }
        let mut servers = BTreeMap::new();
        for site in &spec.servers {
            if !adjacency.contains_key(&site.ap) {
                return Err(Error::Graph(format!(
                    "server {} placed at unknown AP {}",
                    site.server, site.ap
                )));
            }
            if servers.insert(site.server, site.ap).is_some() {
                return Err(Error::Graph(format!("server {} placed twice", site.server)));
            }
        }
        if servers.is_empty() {
            return Err(Error::Graph("no edge servers".into()));
        }
        if servers.len() > adjacency.len() {
            return Err(Error::Graph(format!(
                "{} servers but only {} APs",
                servers.len(),
                adjacency.len()
            )));
        }
        if !(spec.backhaul_bandwidth > 0.0 && spec.backhaul_bandwidth.is_finite()) {
            return Err(Error::Graph(format!(
                "backhaul bandwidth must be positive, got {}",
                spec.backhaul_bandwidth
            )));
        }
        let graph = ApGraph {
            adjacency,
            servers,
            backhaul_bandwidth: spec.backhaul_bandwidth,
        };
        let start = *graph.adjacency.keys().next().expect("nonempty");
        let reached = graph.shortest_paths(start).len();
        if reached != graph.adjacency.len() {
            return Err(Error::Graph(format!(
                "graph is disconnected: {reached} of {} APs reachable from {start}",
                graph.adjacency.len()
            )));
        }
        Ok(graph)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: GraphSpec = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Self::from_spec(&spec)
    }

    pub fn aps(&self) -> impl Iterator<Item = ApId> + '_ {
        self.adjacency.keys().copied()
    }

    pub fn contains_ap(&self, ap: ApId) -> bool {
        self.adjacency.contains_key(&ap)
    }

    pub fn servers(&self) -> impl Iterator<Item = (ServerId, ApId)> + '_ {
        self.servers.iter().map(|(s, a)| (*s, *a))
    }

    pub fn server_ap(&self, server: ServerId) -> Option<ApId> {
        self.servers.get(&server).copied()
    }

    pub fn backhaul_bandwidth(&self) -> f64 {
        self.backhaul_bandwidth
    }

    /// Dijkstra from `source`; returns (weight, hops) of the minimum-weight
    /// path to every reachable AP.
    fn shortest_paths(&self, source: ApId) -> BTreeMap<ApId, Label> {
        let mut best: BTreeMap<ApId, Label> = BTreeMap::new();
        let mut settled = BTreeSet::new();
        let mut heap = BinaryHeap::new();
        let origin = Label {
            weight: 0.0,
            hops: 0,
        };
        best.insert(source, origin);
        heap.push(QueueItem(origin, source));
        while let Some(QueueItem(label, ap)) = heap.pop() {
            if !settled.insert(ap) {
                continue;
            }
            for &(next, w) in &self.adjacency[&ap] {
                let cand = Label {
                    weight: label.weight + w,
                    hops: label.hops + 1,
                };
                let better = match best.get(&next) {
                    Some(cur) => cand.cmp_key(cur) == Ordering::Less,
                    None => true,
                };
                if better {
                    best.insert(next, cand);
                    heap.push(QueueItem(cand, next));
                }
            }
        }
        best
    }

    /// Hops on a minimum-weight path between two APs.
    pub fn ap_hops(&self, from: ApId, to: ApId) -> Result<u32> {
        if !self.contains_ap(from) {
            return Err(Error::Graph(format!("unknown AP {from}")));
        }
        if !self.contains_ap(to) {
            return Err(Error::Graph(format!("unknown AP {to}")));
        }
        self.shortest_paths(from)
            .get(&to)
            .map(|l| l.hops)
            .ok_or_else(|| Error::Graph(format!("{to} unreachable from {from}")))
    }

    /// Hops from `ap` to the AP hosting `server`; zero when co-located.
    pub fn hop_count(&self, ap: ApId, server: ServerId) -> Result<u32> {
        let host = self
            .server_ap(server)
            .ok_or_else(|| Error::Graph(format!("unknown server {server}")))?;
        if !self.contains_ap(ap) {
            return Err(Error::Graph(format!("unknown AP {ap}")));
        }
        self.shortest_paths(ap)
            .get(&host)
            .map(|l| l.hops)
            .ok_or(Error::Unreachable {
                ap: ap.0,
                server: server.0,
            })
    }

    /// Nearest server by hop count, ties to the smallest server id.
    pub fn serving_server(&self, ap: ApId) -> Result<ServerId> {
        if !self.contains_ap(ap) {
            return Err(Error::Graph(format!("unknown AP {ap}")));
        }
        let dist = self.shortest_paths(ap);
        self.servers
            .iter()
            .filter_map(|(&s, host)| dist.get(host).map(|l| (l.hops, s)))
            .min()
            .map(|(_, s)| s)
            .ok_or_else(|| Error::Graph(format!("no server reachable from {ap}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandoverEvent {
    pub user: UserId,
    pub from_ap: ApId,
    pub to_ap: ApId,
    #[serde(default)]
    pub time_index: u64,
}

impl HandoverEvent {
    pub fn validate(&self, graph: &ApGraph) -> Result<()> {
        if self.from_ap == self.to_ap {
            return Err(Error::Config(format!(
                "handover of {} from {} to itself",
                self.user, self.from_ap
            )));
        }
        for ap in [self.from_ap, self.to_ap] {
            if !graph.contains_ap(ap) {
                return Err(Error::Config(format!(
                    "handover of {} references unknown {}",
                    self.user, ap
                )));
            }
        }
        Ok(())
    }
}

/// Events ordered by `time_index`; equal times keep file order.
pub fn load_trace(path: &std::path::Path) -> Result<Vec<HandoverEvent>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut events: Vec<HandoverEvent> =
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    events.sort_by_key(|e| e.time_index);
    Ok(events)
}

/// Where a user is attached and where its offloaded layers currently live.
#[derive(Debug, Clone, PartialEq)]
pub struct Attachment {
    pub ap: ApId,
    pub server: ServerId,
    pub strategy: Option<LayerSolution>,
}

/// What a handover leaves behind for the mobility solver.
#[derive(Debug, Clone, PartialEq)]
pub struct HandoverRecord {
    pub user: UserId,
    pub new_ap: ApId,
    pub original_server: ServerId,
    pub original_strategy: Option<LayerSolution>,
    /// Hops from the new AP back to the original server.
    pub back_hops: u32,
    /// Server the new AP would pick on its own.
    pub new_server: ServerId,
}

#[derive(Debug, Clone, Default)]
pub struct MobilityState {
    attachments: BTreeMap<UserId, Attachment>,
}

impl MobilityState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn attach(&mut self, user: UserId, attachment: Attachment) {
        self.attachments.insert(user, attachment);
    }

    pub fn attachment(&self, user: UserId) -> Option<&Attachment> {
        self.attachments.get(&user)
    }

    /// Record where the user's model runs after the handover decision.
    pub fn commit(&mut self, user: UserId, server: ServerId, strategy: LayerSolution) {
        if let Some(a) = self.attachments.get_mut(&user) {
            a.server = server;
            a.strategy = Some(strategy);
        }
    }

    pub fn apply_handover(
        &mut self,
        graph: &ApGraph,
        event: &HandoverEvent,
    ) -> Result<HandoverRecord> {
        event.validate(graph)?;
        let att = self
            .attachments
            .get_mut(&event.user)
            .ok_or_else(|| Error::Config(format!("handover for unknown user {}", event.user)))?;
        if att.ap != event.from_ap {
            return Err(Error::StaleEvent {
                user: event.user.0,
                expected: event.from_ap.0,
                actual: att.ap.0,
            });
        }
        let back_hops = graph.hop_count(event.to_ap, att.server)?;
        let new_server = graph.serving_server(event.to_ap)?;
        att.ap = event.to_ap;
        Ok(HandoverRecord {
            user: event.user,
            new_ap: event.to_ap,
            original_server: att.server,
            original_strategy: att.strategy.clone(),
            back_hops,
            new_server,
        })
    }
}
