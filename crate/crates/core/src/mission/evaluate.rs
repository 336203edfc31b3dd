//! Inventory accuracy against the simulator's ground truth.

use serde::{Deserialize, Serialize};

use crate::analysis::ForestInventory;
use crate::sim::GroundTruthTree;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeMatch {
    pub tree: u32,
    pub truth: u32,
    pub distance: f64,
    pub dbh: Option<f64>,
    pub true_dbh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InventoryEvaluation {
    pub truth_trees: usize,
    pub reported_trees: usize,
    /// Ground-truth trees matched by a reported tree.
    pub detected: usize,
    pub false_positives: usize,
    pub reconstructed: usize,
    pub dbh_tolerance: f64,
    pub dbh_within_tolerance: usize,
    /// Share of reconstructed DBH values within tolerance; unmatched trees count as misses.
    pub dbh_fraction: Option<f64>,
    pub dbh_mean_abs_error: Option<f64>,
    pub matches: Vec<TreeMatch>,
}

/// One-to-one matching by ascending base distance within `match_radius`.
pub fn evaluate_inventory(
    inventory: &ForestInventory,
    truth: &[GroundTruthTree],
    match_radius: f64,
    dbh_tolerance: f64,
) -> InventoryEvaluation {
    let mut pairs = Vec::new();
    for t in inventory.trees.values() {
        let c = t.center();
        for g in truth {
            let d = (g.base[0] - c[0]).hypot(g.base[1] - c[1]);
            if d <= match_radius {
                pairs.push((d, t.id, g.id));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_t = std::collections::BTreeSet::new();
    let mut used_g = std::collections::BTreeSet::new();
    let mut matches = Vec::new();
    for (d, tid, gid) in pairs {
        if used_t.contains(&tid) || used_g.contains(&gid) {
            continue;
        }
        used_t.insert(tid);
        used_g.insert(gid);
        let g = truth.iter().find(|g| g.id == gid).expect("id from truth");
        matches.push(TreeMatch {
            tree: tid,
            truth: gid,
            distance: d,
            dbh: inventory.trees[&tid].traits.dbh,
            true_dbh: g.dbh(),
        });
    }
    matches.sort_by_key(|m| m.tree);
    let reconstructed = inventory.reconstructed().count();
    let errors: Vec<f64> = matches
        .iter()
        .filter_map(|m| m.dbh.map(|d| (d - m.true_dbh).abs()))
        .collect();
    let within = errors.iter().filter(|e| **e <= dbh_tolerance).count();
    InventoryEvaluation {
        truth_trees: truth.len(),
        reported_trees: inventory.len(),
        detected: matches.len(),
        false_positives: inventory.len() - matches.len(),
        reconstructed,
        dbh_tolerance,
        dbh_within_tolerance: within,
        dbh_fraction: (reconstructed > 0).then(|| within as f64 / reconstructed as f64),
        dbh_mean_abs_error: (!errors.is_empty())
            .then(|| errors.iter().sum::<f64>() / errors.len() as f64),
        matches,
    }
}
