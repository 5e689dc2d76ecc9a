//! Signaling-overhead ledger, utility normalisation, USR and reward.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::ScenarioConfig;
use crate::topology::{Grouping, ServicePartition};

/// Local-phase overhead of one cell: `(CSI reports to the host AP, federated requests to the CPU)`.
pub fn phase1_overhead(cfg: &ScenarioConfig, partition: &ServicePartition, cell: usize) -> (u64, u64) {
    let a = cfg.aps_per_cell as u64;
    let n = cfg.n_tx as u64;
    let o1 = (a - 1) * cfg.users_per_cell as u64 * n;
    let fu = partition.federated_users(cfg, cell).len() as u64;
    let fq = partition.federated_targets(cfg, cell).len() as u64;
    (o1, o2_from_counts(fu, fq, a, n))
}

fn o2_from_counts(fed_users: u64, fed_targets: u64, a: u64, n: u64) -> u64 {
    fed_users * a * n + 20 * fed_targets
}

/// CSI exchange overhead of federated cluster `r`.
pub fn federated_overhead(cfg: &ScenarioConfig, grouping: &Grouping, partition: &ServicePartition, cluster: usize) -> u64 {
    let cells = &grouping.clusters[cluster];
    let counts: Vec<u64> = cells
        .iter()
        .map(|&m| partition.federated_users(cfg, m).len() as u64)
        .collect();
    federated_overhead_from_counts(&counts, cfg.aps_per_cell as u64, cfg.n_tx as u64)
}

/// Cluster overhead from the federated user count of each member cell.
pub fn federated_overhead_from_counts(counts: &[u64], a: u64, n: u64) -> u64 {
    let total: u64 = counts.iter().sum();
    let size = counts.len() as u64;
    counts
        .iter()
        .map(|&c| (total * size - c) * ((a - 1) * n + a * n))
        .sum()
}

fn clip01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

pub fn normalize_comm(u: f64, u_min: f64, u_max: f64) -> f64 {
    clip01((u - u_min) / (u_max - u_min))
}

/// Log-scale sensing utility: the worse of the position and velocity scores.
pub fn normalize_sense(pos_err: f64, vel_err: f64, cfg: &ScenarioConfig) -> Result<f64> {
    if !(pos_err > 0.0 && vel_err > 0.0) {
        return Err(Error::Numeric(format!(
            "sensing errors must be positive, got ({pos_err}, {vel_err})"
        )));
    }
    let score = |err: f64, lo: f64, hi: f64| (hi.log10() - err.log10()) / (hi.log10() - lo.log10());
    let rp = score(pos_err, cfg.u_q_rp_min, cfg.u_q_rp_max);
    let rv = score(vel_err, cfg.u_q_rv_min, cfg.u_q_rv_max);
    Ok(clip01(rp.min(rv)))
}

/// Overhead and utility totals of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLedger {
    pub o1: Vec<u64>,
    pub o2: Vec<u64>,
    pub o_fed: Vec<u64>,
    pub comm_utility: f64,
    pub sense_utility: f64,
    pub utility: f64,
    pub overhead: f64,
    pub usr: f64,
    pub reward: f64,
}

pub fn normalized_overhead(o1: &[u64], o2: &[u64], o_fed: &[u64], cfg: &ScenarioConfig) -> f64 {
    let base = cfg.base_overhead();
    let local: f64 = o1.iter().zip(o2).map(|(&a, &b)| base + (a + b) as f64).sum();
    let fed: u64 = o_fed.iter().sum();
    (local + fed as f64) / cfg.overhead_normalizer()
}

pub fn reward(utility: f64, overhead: f64, floor: f64) -> f64 {
    utility.max(floor).ln() - overhead.ln()
}

pub fn frame_totals(
    comm_utility: f64,
    sense_utility: f64,
    o1: Vec<u64>,
    o2: Vec<u64>,
    o_fed: Vec<u64>,
    cfg: &ScenarioConfig,
) -> FrameLedger {
    let utility = comm_utility + sense_utility;
    let overhead = normalized_overhead(&o1, &o2, &o_fed, cfg);
    FrameLedger {
        o1,
        o2,
        o_fed,
        comm_utility,
        sense_utility,
        utility,
        overhead,
        usr: utility / overhead,
        reward: reward(utility, overhead, cfg.reward_floor),
    }
}
