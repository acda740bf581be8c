use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    serde_pairs, BackupError, Holder, PhysicalNetwork, SfcInstance, VnfId, VnfSpec, CAPACITY_EPS,
};

/// A placed backup instance and its logical sync link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackupPlacement {
    pub node: usize,
    /// Link indices from the active node to the backup node.
    pub route: Vec<usize>,
    /// Current sync-link bandwidth b in Mb/s.
    pub bandwidth: f64,
}

/// Substrate plus embedded chains plus backup placement (y' variables).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub network: PhysicalNetwork,
    pub sfcs: Vec<SfcInstance>,
    #[serde(with = "serde_pairs")]
    backups: BTreeMap<VnfId, BackupPlacement>,
}

type BackupResult<T> = std::result::Result<T, BackupError>;

impl NetworkState {
    pub fn new(network: PhysicalNetwork, sfcs: Vec<SfcInstance>) -> Self {
        Self {
            network,
            sfcs,
            backups: BTreeMap::new(),
        }
    }

    pub fn vnf(&self, id: VnfId) -> BackupResult<&VnfSpec> {
        self.sfcs
            .get(id.sfc)
            .and_then(|s| s.vnfs.get(id.pos))
            .ok_or(BackupError::UnknownVnf { vnf: id })
    }

    pub fn active_node(&self, id: VnfId) -> BackupResult<usize> {
        self.vnf(id)?;
        Ok(self.sfcs[id.sfc].embedding[id.pos])
    }

    pub fn vnf_ids(&self) -> impl Iterator<Item = VnfId> + '_ {
        self.sfcs
            .iter()
            .flat_map(|s| (0..s.vnfs.len()).map(move |h| VnfId::new(s.id, h)))
    }

    pub fn backup(&self, id: VnfId) -> Option<&BackupPlacement> {
        self.backups.get(&id)
    }

    pub fn has_backup(&self, id: VnfId) -> bool {
        self.backups.contains_key(&id)
    }

    pub fn backups(&self) -> impl Iterator<Item = (&VnfId, &BackupPlacement)> {
        self.backups.iter()
    }

    /// Checks every placement constraint for a backup of `id` on `node` and
    /// returns the sync route on success.
    pub fn check_backup(&self, id: VnfId, node: usize) -> BackupResult<Vec<usize>> {
        let spec = self.vnf(id)?;
        let active = self.sfcs[id.sfc].embedding[id.pos];
        if let Some(existing) = self.backups.get(&id) {
            return Err(BackupError::DuplicateBackup {
                vnf: id,
                existing: existing.node,
            });
        }
        let target = self
            .network
            .nodes
            .get(node)
            .ok_or(BackupError::UnknownNode { node })?;
        if node == active {
            return Err(BackupError::AntiAffinityViolation { vnf: id, node });
        }
        if !target.is_nfv {
            return Err(BackupError::ForwardingNode { node });
        }
        if let Some((resource, residual)) = target.fits(&spec.demand) {
            return Err(BackupError::CapacityExceeded {
                vnf: id,
                node,
                resource,
                demand: spec.demand.0[resource],
                residual,
            });
        }
        let route = self
            .network
            .shortest_path(active, node)
            .ok_or(BackupError::NoRoute {
                from: active,
                to: node,
            })?;
        for &link in &route {
            let l = &self.network.links[link];
            if spec.sync_bandwidth > l.residual() + CAPACITY_EPS * l.bandwidth_capacity {
                return Err(BackupError::BandwidthExceeded {
                    vnf: id,
                    link,
                    demand: spec.sync_bandwidth,
                    residual: l.residual(),
                });
            }
        }
        Ok(route)
    }

    /// Places a backup of `id` on `node` and reserves its sync link at the
    /// baseline bandwidth along the shortest route.
    pub fn allocate_backup(&mut self, id: VnfId, node: usize) -> BackupResult<()> {
        let route = self.check_backup(id, node)?;
        let spec = self.vnf(id)?.clone();
        self.network
            .reserve_node(node, Holder::Backup(id), spec.demand.clone());
        for &link in &route {
            self.network.links[link]
                .reservations
                .insert(id, spec.sync_bandwidth);
        }
        self.backups.insert(
            id,
            BackupPlacement {
                node,
                route,
                bandwidth: spec.sync_bandwidth,
            },
        );
        Ok(())
    }

    /// Removes the backup of `id` and returns every resource it held.
    pub fn release_backup(&mut self, id: VnfId) -> BackupResult<BackupPlacement> {
        self.vnf(id)?;
        let placement = self
            .backups
            .remove(&id)
            .ok_or(BackupError::NoBackupPresent { vnf: id })?;
        self.network
            .unreserve_node(placement.node, &Holder::Backup(id));
        for &link in &placement.route {
            self.network.links[link].reservations.remove(&id);
        }
        Ok(placement)
    }

    /// Feasible NFV node with the largest aggregate residual capacity; ties go
    /// to the lowest node id.
    pub fn select_backup_node(&self, id: VnfId) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for node in self.network.nfv_nodes() {
            if self.check_backup(id, node.id).is_err() {
                continue;
            }
            let residual = node.residual().total();
            if best.is_none_or(|(_, r)| residual > r) {
                best = Some((node.id, residual));
            }
        }
        best.map(|(n, _)| n)
    }

    /// Raises (or lowers) the sync-link bandwidth of `id` toward `requested`,
    /// bounded by every link on the route and never below the baseline.
    /// Returns the granted bandwidth.
    pub fn set_sync_bandwidth(&mut self, id: VnfId, requested: f64) -> BackupResult<f64> {
        let baseline = self.vnf(id)?.sync_bandwidth;
        let placement = self
            .backups
            .get(&id)
            .ok_or(BackupError::NoBackupPresent { vnf: id })?;
        let mut granted = requested.max(baseline);
        for &link in &placement.route {
            let l = &self.network.links[link];
            let own = l.reservations.get(&id).copied().unwrap_or(0.0);
            let room = l.bandwidth_capacity - (l.reserved() - own);
            granted = granted.min(room);
        }
        let granted = granted.max(baseline);
        let route = placement.route.clone();
        for link in route {
            self.network.links[link].reservations.insert(id, granted);
        }
        if let Some(p) = self.backups.get_mut(&id) {
            p.bandwidth = granted;
        }
        Ok(granted)
    }

    /// Switches the active instance of `id` over to its backup: the old host is
    /// released, the backup reservation becomes the active one and the sync
    /// link is torn down. Returns the new host.
    pub fn promote_backup(&mut self, id: VnfId) -> BackupResult<usize> {
        let old = self.active_node(id)?;
        let placement = self.release_backup(id)?;
        let demand = self
            .network
            .unreserve_node(old, &Holder::Active(id))
            .unwrap_or_else(|| self.sfcs[id.sfc].vnfs[id.pos].demand.clone());
        self.network
            .reserve_node(placement.node, Holder::Active(id), demand);
        self.sfcs[id.sfc].embedding[id.pos] = placement.node;
        Ok(placement.node)
    }

    /// Scans the whole state for bookkeeping violations: node capacity, link
    /// bandwidth, anti-affinity, single backup, and ledger consistency.
    pub fn audit(&self) -> Vec<String> {
        let mut out = Vec::new();
        for node in &self.network.nodes {
            if !node.is_nfv && node.reservations().next().is_some() {
                out.push(format!("forwarding node {} hosts instances", node.id));
            }
            let alloc = node.allocated();
            for (p, (a, c)) in alloc.0.iter().zip(&node.capacity.0).enumerate() {
                if *a < 0.0 || *a > c + CAPACITY_EPS * c.max(1.0) {
                    out.push(format!("node {} resource {p}: allocated {a} of {c}", node.id));
                }
            }
            for w in node.available_ratio() {
                if !(0.0..=1.0).contains(&w) {
                    out.push(format!("node {} availability ratio {w}", node.id));
                }
            }
        }
        for (i, link) in self.network.links.iter().enumerate() {
            let r = link.reserved();
            if r < 0.0 || r > link.bandwidth_capacity * (1.0 + CAPACITY_EPS) {
                out.push(format!("link {i}: reserved {r} of {}", link.bandwidth_capacity));
            }
        }
        for id in self.vnf_ids() {
            let active = self.sfcs[id.sfc].embedding[id.pos];
            let hosts: Vec<usize> = self
                .network
                .nodes
                .iter()
                .filter(|n| n.reservations.contains_key(&Holder::Backup(id)))
                .map(|n| n.id)
                .collect();
            if hosts.len() > 1 {
                out.push(format!("{id} has {} backups", hosts.len()));
            }
            if hosts.contains(&active) {
                out.push(format!("{id} backup co-located with active on node {active}"));
            }
            match self.backups.get(&id) {
                Some(p) if hosts != [p.node] => {
                    out.push(format!("{id} placement map disagrees with node ledger"))
                }
                None if !hosts.is_empty() => out.push(format!("{id} has an untracked backup")),
                _ => {}
            }
            if !self.network.nodes[active]
                .reservations
                .contains_key(&Holder::Active(id))
            {
                out.push(format!("{id} active instance not reserved on node {active}"));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{SfcConfig, SubstrateConfig};
    use crate::net::{build_network, embed_sfcs_random, Constraint, ResourceVector};
    use crate::rng::seeded;

    fn state(seed: u64) -> NetworkState {
        let mut net = build_network(&SubstrateConfig::default()).unwrap();
        let sfcs = embed_sfcs_random(&mut net, &SfcConfig::default(), &mut seeded(seed)).unwrap();
        NetworkState::new(net, sfcs)
    }

    /// Two NFV nodes, one VNF with demand 30 on node 0.
    fn tiny(capacity: f64) -> NetworkState {
        let sub = SubstrateConfig {
            node_count: 2,
            nfv_count: 2,
            resource_types: 1,
            node_capacity: capacity,
            link_bandwidth: 100.0,
        };
        let mut net = build_network(&sub).unwrap();
        let id = VnfId::new(0, 0);
        net.reserve_node(0, Holder::Active(id), ResourceVector(vec![30.0]));
        let sfc = SfcInstance {
            id: 0,
            vnfs: vec![VnfSpec {
                id,
                demand: ResourceVector(vec![30.0]),
                sync_bandwidth: 10.0,
                backup_cost: 1.0,
            }],
            max_downtime: 0.5,
            traffic_rate: 100.0,
            embedding: vec![0],
        };
        NetworkState::new(net, vec![sfc])
    }

    #[test]
    fn co_located_backup_rejected() {
        let mut s = state(1);
        let id = VnfId::new(0, 0);
        let active = s.active_node(id).unwrap();
        let err = s.allocate_backup(id, active).unwrap_err();
        assert_eq!(err.constraint(), Some(Constraint::AntiAffinity));
    }

    #[test]
    fn second_backup_rejected() {
        let mut s = state(1);
        let id = VnfId::new(1, 2);
        let node = s.select_backup_node(id).unwrap();
        s.allocate_backup(id, node).unwrap();
        let other = s.select_backup_node(VnfId::new(0, 0)).unwrap();
        let err = s.allocate_backup(id, other).unwrap_err();
        assert_eq!(err.constraint(), Some(Constraint::SingleBackup));
        assert!(err.to_string().contains("single-backup"));
    }

    #[test]
    fn exact_residual_fits_and_empties_node() {
        let mut s = tiny(30.0);
        let id = VnfId::new(0, 0);
        s.allocate_backup(id, 1).unwrap();
        assert_eq!(s.network.nodes[1].residual().0, vec![0.0]);
        assert_eq!(s.network.nodes[1].available_ratio(), vec![0.0]);
        assert!(s.audit().is_empty());
    }

    #[test]
    fn over_capacity_rejected() {
        let mut s = tiny(29.0);
        let err = s.allocate_backup(VnfId::new(0, 0), 1).unwrap_err();
        assert_eq!(err.constraint(), Some(Constraint::NodeCapacity));
    }

    #[test]
    fn allocate_then_release_is_identity() {
        let mut s = state(5);
        let before = s.clone();
        let id = VnfId::new(2, 1);
        let node = s.select_backup_node(id).unwrap();
        s.allocate_backup(id, node).unwrap();
        assert_ne!(s, before);
        s.release_backup(id).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn release_without_backup() {
        let mut s = state(5);
        assert_eq!(
            s.release_backup(VnfId::new(0, 1)).unwrap_err(),
            BackupError::NoBackupPresent {
                vnf: VnfId::new(0, 1)
            }
        );
    }

    #[test]
    fn sync_route_reserves_bandwidth() {
        let mut s = state(2);
        let id = VnfId::new(0, 0);
        let node = s.select_backup_node(id).unwrap();
        s.allocate_backup(id, node).unwrap();
        let p = s.backup(id).unwrap().clone();
        assert_eq!(p.route.len(), 1);
        assert_eq!(s.network.links[p.route[0]].reserved(), 10.0);
        let granted = s.set_sync_bandwidth(id, 250.0).unwrap();
        assert_eq!(granted, 250.0);
        assert_eq!(s.network.links[p.route[0]].reserved(), 250.0);
        // Capped by link capacity.
        let granted = s.set_sync_bandwidth(id, 5000.0).unwrap();
        assert_eq!(granted, 1000.0);
        assert!(s.audit().is_empty());
    }

    #[test]
    fn promotion_moves_active_instance() {
        let mut s = state(3);
        let id = VnfId::new(1, 0);
        let old = s.active_node(id).unwrap();
        let node = s.select_backup_node(id).unwrap();
        s.allocate_backup(id, node).unwrap();
        let new = s.promote_backup(id).unwrap();
        assert_eq!(new, node);
        assert_ne!(new, old);
        assert!(!s.has_backup(id));
        assert!(s.audit().is_empty());
        assert!(s.network.links.iter().all(|l| l.reserved() == 0.0));
    }

    #[test]
    fn selection_prefers_most_residual_capacity() {
        let s = state(9);
        let id = VnfId::new(0, 0);
        let chosen = s.select_backup_node(id).unwrap();
        let best = s
            .network
            .nfv_nodes()
            .filter(|n| n.id != s.active_node(id).unwrap())
            .map(|n| n.residual().total())
            .fold(f64::MIN, f64::max);
        assert_eq!(s.network.nodes[chosen].residual().total(), best);
    }

    #[test]
    fn json_round_trip() {
        let mut s = state(4);
        let id = VnfId::new(0, 2);
        let node = s.select_backup_node(id).unwrap();
        s.allocate_backup(id, node).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        let back: NetworkState = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }
}
