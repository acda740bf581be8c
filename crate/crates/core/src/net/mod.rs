//! Physical substrate, embedded service chains and backup resource bookkeeping.
//!
//! Resource usage is tracked as a ledger of reservations per node and per link
//! rather than as running sums, so that releasing a reservation restores the
//! previous state bit for bit.

mod embed;
mod state;
mod topology;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::embed_sfcs_random;
pub use state::{BackupPlacement, NetworkState};
pub use topology::build_network;

/// Tolerance for capacity comparisons, relative to capacity.
pub(crate) const CAPACITY_EPS: f64 = 1e-9;

/// VNF `pos` of service chain `sfc`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VnfId {
    pub sfc: usize,
    pub pos: usize,
}

impl VnfId {
    pub fn new(sfc: usize, pos: usize) -> Self {
        Self { sfc, pos }
    }
}

impl fmt::Display for VnfId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "vnf({},{})", self.sfc, self.pos)
    }
}

/// Amounts of each of the P resource types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResourceVector(pub Vec<f64>);

impl ResourceVector {
    pub fn zeros(p: usize) -> Self {
        Self(vec![0.0; p])
    }

    pub fn splat(p: usize, v: f64) -> Self {
        Self(vec![v; p])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    fn add_assign(&mut self, other: &ResourceVector) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }
}

/// Who holds a node reservation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "role", content = "vnf", rename_all = "snake_case")]
pub enum Holder {
    Active(VnfId),
    Backup(VnfId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalNode {
    pub id: usize,
    pub is_nfv: bool,
    pub capacity: ResourceVector,
    #[serde(with = "pairs")]
    reservations: BTreeMap<Holder, ResourceVector>,
}

impl PhysicalNode {
    pub fn new(id: usize, is_nfv: bool, capacity: ResourceVector) -> Self {
        Self {
            id,
            is_nfv,
            capacity,
            reservations: BTreeMap::new(),
        }
    }

    pub fn allocated(&self) -> ResourceVector {
        let mut sum = ResourceVector::zeros(self.capacity.dim());
        for r in self.reservations.values() {
            sum.add_assign(r);
        }
        sum
    }

    pub fn residual(&self) -> ResourceVector {
        let alloc = self.allocated();
        ResourceVector(
            self.capacity
                .0
                .iter()
                .zip(&alloc.0)
                .map(|(c, a)| c - a)
                .collect(),
        )
    }

    /// W_n^p: fraction of each resource still available.
    pub fn available_ratio(&self) -> Vec<f64> {
        let alloc = self.allocated();
        self.capacity
            .0
            .iter()
            .zip(&alloc.0)
            .map(|(c, a)| ((c - a) / c).clamp(0.0, 1.0))
            .collect()
    }

    pub fn reservations(&self) -> impl Iterator<Item = (&Holder, &ResourceVector)> {
        self.reservations.iter()
    }

    pub(crate) fn fits(&self, demand: &ResourceVector) -> Option<(usize, f64)> {
        let residual = self.residual();
        for (p, (d, r)) in demand.0.iter().zip(&residual.0).enumerate() {
            if *d > r + CAPACITY_EPS * self.capacity.0[p] {
                return Some((p, *r));
            }
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalLink {
    pub endpoints: (usize, usize),
    pub bandwidth_capacity: f64,
    #[serde(with = "pairs")]
    reservations: BTreeMap<VnfId, f64>,
}

impl PhysicalLink {
    pub fn new(a: usize, b: usize, bandwidth_capacity: f64) -> Self {
        Self {
            endpoints: (a.min(b), a.max(b)),
            bandwidth_capacity,
            reservations: BTreeMap::new(),
        }
    }

    pub fn reserved(&self) -> f64 {
        self.reservations.values().sum()
    }

    pub fn residual(&self) -> f64 {
        self.bandwidth_capacity - self.reserved()
    }

    pub fn available_ratio(&self) -> f64 {
        (self.residual() / self.bandwidth_capacity).clamp(0.0, 1.0)
    }

    pub fn other(&self, node: usize) -> usize {
        if self.endpoints.0 == node {
            self.endpoints.1
        } else {
            self.endpoints.0
        }
    }
}

/// Nodes and links of the substrate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalNetwork {
    pub resource_types: usize,
    pub nodes: Vec<PhysicalNode>,
    pub links: Vec<PhysicalLink>,
}

impl PhysicalNetwork {
    pub fn nfv_nodes(&self) -> impl Iterator<Item = &PhysicalNode> {
        self.nodes.iter().filter(|n| n.is_nfv)
    }

    pub(crate) fn reserve_node(&mut self, node: usize, holder: Holder, demand: ResourceVector) {
        self.nodes[node].reservations.insert(holder, demand);
    }

    pub(crate) fn unreserve_node(&mut self, node: usize, holder: &Holder) -> Option<ResourceVector> {
        self.nodes[node].reservations.remove(holder)
    }

    /// Flattened W_n^p in node-major order.
    pub fn availability_vector(&self) -> Vec<f64> {
        self.nodes.iter().flat_map(|n| n.available_ratio()).collect()
    }
}

/// Demands and costs of one VNF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VnfSpec {
    pub id: VnfId,
    /// Per-resource demand φ^p, shared by the active instance and its backup.
    pub demand: ResourceVector,
    /// Baseline sync-link bandwidth φ^BW in Mb/s.
    pub sync_bandwidth: f64,
    /// Backup cost U.
    pub backup_cost: f64,
}

/// An embedded service chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfcInstance {
    pub id: usize,
    pub vnfs: Vec<VnfSpec>,
    /// Maximum tolerable downtime Δ_k in seconds.
    pub max_downtime: f64,
    /// Traffic rate σ_k in packets/s.
    pub traffic_rate: f64,
    /// Hosting NFV node of each VNF, by position.
    pub embedding: Vec<usize>,
}

/// Which placement constraint a rejected operation violated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    NodeCapacity,
    LinkBandwidth,
    AntiAffinity,
    SingleBackup,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Constraint::NodeCapacity => "node capacity constraint",
            Constraint::LinkBandwidth => "link bandwidth constraint",
            Constraint::AntiAffinity => "anti-affinity constraint",
            Constraint::SingleBackup => "single-backup constraint",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackupError {
    #[error("{vnf} backup on node {node}: resource {resource} demand {demand} exceeds residual {residual} ({})", Constraint::NodeCapacity)]
    CapacityExceeded {
        vnf: VnfId,
        node: usize,
        resource: usize,
        demand: f64,
        residual: f64,
    },
    #[error("{vnf} sync link over link {link}: bandwidth {demand} exceeds residual {residual} ({})", Constraint::LinkBandwidth)]
    BandwidthExceeded {
        vnf: VnfId,
        link: usize,
        demand: f64,
        residual: f64,
    },
    #[error("{vnf} backup on node {node} would share the active instance's node ({})", Constraint::AntiAffinity)]
    AntiAffinityViolation { vnf: VnfId, node: usize },
    #[error("{vnf} already has a backup on node {existing} ({})", Constraint::SingleBackup)]
    DuplicateBackup { vnf: VnfId, existing: usize },
    #[error("{vnf} has no backup to release")]
    NoBackupPresent { vnf: VnfId },
    #[error("node {node} is a forwarding-only node and cannot host backups")]
    ForwardingNode { node: usize },
    #[error("no path between node {from} and node {to}")]
    NoRoute { from: usize, to: usize },
    #[error("unknown {vnf}")]
    UnknownVnf { vnf: VnfId },
    #[error("unknown node {node}")]
    UnknownNode { node: usize },
}

impl BackupError {
    pub fn constraint(&self) -> Option<Constraint> {
        match self {
            BackupError::CapacityExceeded { .. } => Some(Constraint::NodeCapacity),
            BackupError::BandwidthExceeded { .. } => Some(Constraint::LinkBandwidth),
            BackupError::AntiAffinityViolation { .. } => Some(Constraint::AntiAffinity),
            BackupError::DuplicateBackup { .. } => Some(Constraint::SingleBackup),
            _ => None,
        }
    }
}

/// Serializes ordered maps with non-string keys as lists of `[key, value]` pairs.
pub(crate) mod pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<K, V, S>(map: &BTreeMap<K, V>, s: S) -> Result<S::Ok, S::Error>
    where
        K: Serialize,
        V: Serialize,
        S: Serializer,
    {
        s.collect_seq(map.iter())
    }

    pub fn deserialize<'de, K, V, D>(d: D) -> Result<BTreeMap<K, V>, D::Error>
    where
        K: Deserialize<'de> + Ord,
        V: Deserialize<'de>,
        D: Deserializer<'de>,
    {
        let v: Vec<(K, V)> = Vec::deserialize(d)?;
        Ok(v.into_iter().collect())
    }
}

pub(crate) use pairs as serde_pairs;
