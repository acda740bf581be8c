use std::collections::VecDeque;

use super::{PhysicalLink, PhysicalNetwork, PhysicalNode, ResourceVector};
use crate::config::SubstrateConfig;
use crate::error::{Error, Result};

/// Builds the substrate: NFV nodes `0..nfv_count` form a full mesh, and every
/// forwarding-only node is attached to each NFV node.
pub fn build_network(cfg: &SubstrateConfig) -> Result<PhysicalNetwork> {
    if cfg.nfv_count < 2 {
        return Err(Error::Config(format!(
            "substrate.nfv_count: {} NFV node(s) cannot satisfy backup anti-affinity, need >= 2",
            cfg.nfv_count
        )));
    }
    if cfg.node_count < cfg.nfv_count {
        return Err(Error::Config(format!(
            "substrate.node_count: {} is smaller than nfv_count {}",
            cfg.node_count, cfg.nfv_count
        )));
    }
    if cfg.resource_types == 0 {
        return Err(Error::Config("substrate.resource_types: must be >= 1".into()));
    }

    let p = cfg.resource_types;
    let nodes = (0..cfg.node_count)
        .map(|id| {
            let is_nfv = id < cfg.nfv_count;
            let cap = if is_nfv { cfg.node_capacity } else { 0.0 };
            PhysicalNode::new(id, is_nfv, ResourceVector::splat(p, cap))
        })
        .collect();

    let mut links = Vec::new();
    for a in 0..cfg.nfv_count {
        for b in a + 1..cfg.nfv_count {
            links.push(PhysicalLink::new(a, b, cfg.link_bandwidth));
        }
    }
    for f in cfg.nfv_count..cfg.node_count {
        for n in 0..cfg.nfv_count {
            links.push(PhysicalLink::new(n, f, cfg.link_bandwidth));
        }
    }

    Ok(PhysicalNetwork {
        resource_types: p,
        nodes,
        links,
    })
}

impl PhysicalNetwork {
    /// Hop-count shortest path as a list of link indices. Neighbours are visited
    /// in ascending node id, so ties resolve toward lower ids.
    pub fn shortest_path(&self, from: usize, to: usize) -> Option<Vec<usize>> {
        let n = self.nodes.len();
        if from >= n || to >= n {
            return None;
        }
        if from == to {
            return Some(Vec::new());
        }
        let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (idx, link) in self.links.iter().enumerate() {
            let (a, b) = link.endpoints;
            adjacency[a].push((b, idx));
            adjacency[b].push((a, idx));
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }

        let mut parent: Vec<Option<(usize, usize)>> = vec![None; n];
        let mut seen = vec![false; n];
        seen[from] = true;
        let mut queue = VecDeque::from([from]);
        while let Some(u) = queue.pop_front() {
            if u == to {
                break;
            }
            for &(v, link) in &adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    parent[v] = Some((u, link));
                    queue.push_back(v);
                }
            }
        }
        if !seen[to] {
            return None;
        }
        let mut path = Vec::new();
        let mut cur = to;
        while let Some((prev, link)) = parent[cur] {
            path.push(link);
            cur = prev;
        }
        path.reverse();
        Some(path)
    }
}
