//! Planted-community synthetic data: two bipartite graphs over a shared pool
//! of mutual users plus graph-exclusive users, with link probabilities that
//! depend on whether a user and an object share their planted community.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{build_cross_dataset, CrossGraphDataset, GraphBuilder};

use super::PlantConfig;

/// Deterministically generates a cross-graph dataset with planted
/// communities, returning the dataset and the user ground-truth map. Users
/// and objects take communities round-robin; every link is an independent
/// Bernoulli draw with probability `p_in` when the endpoints share a
/// community and `p_out` otherwise. A mutual user keeps one community across
/// both graphs by construction.
pub fn plant_synthetic_dataset(
    cfg: &PlantConfig,
) -> Result<(CrossGraphDataset, BTreeMap<String, usize>)> {
    cfg.validate()?;
    let c = cfg.num_communities;

    let mutual: Vec<String> = (0..cfg.mutual_users).map(|i| format!("mu{i:04}")).collect();
    let main_only: Vec<String> = (0..cfg.main_only_users)
        .map(|i| format!("mo{i:04}"))
        .collect();
    let sparse_only: Vec<String> = (0..cfg.sparse_only_users)
        .map(|i| format!("so{i:04}"))
        .collect();

    let mut truth: BTreeMap<String, usize> = BTreeMap::new();
    let mut comm_of = |ids: &[String]| {
        for (idx, id) in ids.iter().enumerate() {
            truth.insert(id.clone(), idx % c);
        }
    };
    comm_of(&mutual);
    comm_of(&main_only);
    comm_of(&sparse_only);

    let main_objects: Vec<(String, usize)> = (0..c * cfg.main_objects_per_community)
        .map(|i| (format!("ma{i:04}"), i % c))
        .collect();
    let sparse_objects: Vec<(String, usize)> = (0..c * cfg.sparse_objects_per_community)
        .map(|i| (format!("sp{i:04}"), i % c))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let build = |tag: &str,
                     users: &[&Vec<String>],
                     objects: &[(String, usize)],
                     rng: &mut ChaCha8Rng|
     -> Result<_> {
        let mut b = GraphBuilder::new(tag);
        for group in users {
            for id in group.iter() {
                b.add_user(id);
            }
        }
        for (id, _) in objects {
            b.add_object(id);
        }
        for group in users {
            for user in group.iter() {
                let uc = truth[user];
                for (obj, oc) in objects {
                    let p = if uc == *oc { cfg.p_in } else { cfg.p_out };
                    if rng.random::<f64>() < p {
                        b.add_link(user, obj, 1.0)?;
                    }
                }
            }
        }
        Ok(b.finish())
    };

    let main = build("main", &[&mutual, &main_only], &main_objects, &mut rng)?;
    let sparse = build("sparse", &[&mutual, &sparse_only], &sparse_objects, &mut rng)?;
    if main.links().is_empty() {
        return Err(Error::Infeasible(
            "planted main graph has no links; increase sizes or probabilities".to_string(),
        ));
    }
    if sparse.links().is_empty() {
        return Err(Error::Infeasible(
            "planted sparse graph has no links; increase sizes or probabilities".to_string(),
        ));
    }
    let dataset = build_cross_dataset(main, sparse)?;
    Ok((dataset, truth))
}
