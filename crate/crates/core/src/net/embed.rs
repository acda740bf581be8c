use rand::Rng;

use super::{Holder, PhysicalNetwork, ResourceVector, SfcInstance, VnfId, VnfSpec};
use crate::config::SfcConfig;
use crate::error::{Error, Result};
use crate::rng::uniform;

/// Randomly embeds `sfc_count` chains of `vnfs_per_sfc` VNFs onto NFV nodes with
/// enough residual capacity, reserving the active instances' resources.
///
/// A VNF with no feasible node restarts the whole embedding with fresh draws;
/// after `embed_retries` failed attempts the substrate is left untouched and an
/// error is returned.
pub fn embed_sfcs_random<R: Rng + ?Sized>(
    net: &mut PhysicalNetwork,
    cfg: &SfcConfig,
    rng: &mut R,
) -> Result<Vec<SfcInstance>> {
    let mut last_reason = String::new();
    for _ in 0..cfg.embed_retries {
        let mut trial = net.clone();
        match try_embed(&mut trial, cfg, rng) {
            Ok(sfcs) => {
                *net = trial;
                return Ok(sfcs);
            }
            Err(reason) => last_reason = reason,
        }
    }
    Err(Error::EmbeddingInfeasible {
        attempts: cfg.embed_retries,
        reason: last_reason,
    })
}

fn try_embed<R: Rng + ?Sized>(
    net: &mut PhysicalNetwork,
    cfg: &SfcConfig,
    rng: &mut R,
) -> std::result::Result<Vec<SfcInstance>, String> {
    let p = net.resource_types;
    let mut sfcs = Vec::with_capacity(cfg.sfc_count);
    for k in 0..cfg.sfc_count {
        let traffic_rate = uniform(rng, cfg.traffic_range);
        let max_downtime = uniform(rng, cfg.downtime_range);
        let mut vnfs = Vec::with_capacity(cfg.vnfs_per_sfc);
        let mut embedding = Vec::with_capacity(cfg.vnfs_per_sfc);
        for h in 0..cfg.vnfs_per_sfc {
            let id = VnfId::new(k, h);
            let demand = ResourceVector((0..p).map(|_| uniform(rng, cfg.demand_range)).collect());
            let feasible: Vec<usize> = net
                .nfv_nodes()
                .filter(|n| n.fits(&demand).is_none())
                .map(|n| n.id)
                .collect();
            if feasible.is_empty() {
                return Err(format!("no NFV node can host {id}"));
            }
            let node = feasible[rng.random_range(0..feasible.len())];
            net.reserve_node(node, Holder::Active(id), demand.clone());
            embedding.push(node);
            vnfs.push(VnfSpec {
                id,
                demand,
                sync_bandwidth: cfg.sync_bandwidth,
                backup_cost: cfg.backup_cost,
            });
        }
        sfcs.push(SfcInstance {
            id: k,
            vnfs,
            max_downtime,
            traffic_rate,
            embedding,
        });
    }
    Ok(sfcs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SubstrateConfig;
    use crate::net::build_network;
    use crate::rng::seeded;

    #[test]
    fn default_embedding_places_nine_vnfs() {
        let mut net = build_network(&SubstrateConfig::default()).unwrap();
        let sfcs = embed_sfcs_random(&mut net, &SfcConfig::default(), &mut seeded(1)).unwrap();
        assert_eq!(sfcs.len(), 3);
        assert_eq!(sfcs.iter().map(|s| s.vnfs.len()).sum::<usize>(), 9);
        let active: usize = net.nodes.iter().map(|n| n.reservations().count()).sum();
        assert_eq!(active, 9);
        assert!(net.availability_vector().iter().any(|&w| w < 1.0));
        for s in &sfcs {
            assert!(s.embedding.iter().all(|&n| net.nodes[n].is_nfv));
        }
    }

    #[test]
    fn single_vnf_on_minimal_substrate() {
        let sub = SubstrateConfig {
            node_count: 2,
            nfv_count: 2,
            ..SubstrateConfig::default()
        };
        let mut net = build_network(&sub).unwrap();
        let cfg = SfcConfig {
            sfc_count: 1,
            vnfs_per_sfc: 1,
            ..SfcConfig::default()
        };
        let sfcs = embed_sfcs_random(&mut net, &cfg, &mut seeded(3)).unwrap();
        assert_eq!(sfcs.len(), 1);
        assert_eq!(sfcs[0].embedding.len(), 1);
    }

    #[test]
    fn embedding_is_deterministic_per_seed() {
        let base = build_network(&SubstrateConfig::default()).unwrap();
        let mut a = base.clone();
        let mut b = base.clone();
        let ea = embed_sfcs_random(&mut a, &SfcConfig::default(), &mut seeded(42)).unwrap();
        let eb = embed_sfcs_random(&mut b, &SfcConfig::default(), &mut seeded(42)).unwrap();
        assert_eq!(ea, eb);
        assert_eq!(a, b);
    }

    #[test]
    fn infeasible_demand_reports_error_and_leaves_substrate() {
        let mut net = build_network(&SubstrateConfig::default()).unwrap();
        let before = net.clone();
        let cfg = SfcConfig {
            demand_range: [150.0, 200.0],
            embed_retries: 3,
            ..SfcConfig::default()
        };
        let err = embed_sfcs_random(&mut net, &cfg, &mut seeded(0)).unwrap_err();
        assert!(matches!(err, Error::EmbeddingInfeasible { attempts: 3, .. }));
        assert_eq!(net, before);
    }
}
