//! Regime contexts, effective slot counts, downlink SINR and effective rate.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelBook;
use crate::error::{Error, Result};
use crate::scenario::ScenarioConfig;
use crate::topology::{BeamPowerPlan, Grouping, ResourceSplit, ServicePartition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    Local,
    Federated,
}

/// Node and resource sets served together: one cell in the local regime,
/// one cluster of cells in the federated regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeContext {
    pub regime: Regime,
    /// Cell index (local) or cluster index (federated).
    pub index: usize,
    pub aps: Vec<usize>,
    pub users: Vec<usize>,
    pub targets: Vec<usize>,
    pub subbands: Vec<usize>,
    /// Subcarrier count per entry of `subbands`.
    pub bandwidth: Vec<usize>,
    /// Effective transmission slots, shared by every subband of the context.
    pub slots: usize,
    /// Power budget per entry of `aps`.
    pub ap_budget: Vec<f64>,
}

impl RegimeContext {
    pub fn local(
        cfg: &ScenarioConfig,
        partition: &ServicePartition,
        split: &ResourceSplit,
        cell: usize,
    ) -> Result<Self> {
        let aps: Vec<usize> = cfg.aps(cell).collect();
        Ok(Self {
            regime: Regime::Local,
            index: cell,
            ap_budget: aps.iter().map(|&a| split.p_local[a]).collect(),
            aps,
            users: partition.local_users(cfg, cell),
            targets: partition.local_targets(cfg, cell),
            subbands: vec![cell],
            bandwidth: vec![split.b_local[cell]],
            slots: effective_slots(Regime::Local, cfg, &[])?,
        })
    }

    pub fn federated(
        cfg: &ScenarioConfig,
        partition: &ServicePartition,
        split: &ResourceSplit,
        grouping: &Grouping,
        cluster: usize,
    ) -> Result<Self> {
        let cells = &grouping.clusters[cluster];
        let aps: Vec<usize> = cells.iter().flat_map(|&m| cfg.aps(m)).collect();
        let counts: Vec<usize> = cells
            .iter()
            .map(|&m| partition.federated_users(cfg, m).len())
            .collect();
        Ok(Self {
            regime: Regime::Federated,
            index: cluster,
            ap_budget: aps.iter().map(|&a| split.p_fed[a]).collect(),
            aps,
            users: cells.iter().flat_map(|&m| partition.federated_users(cfg, m)).collect(),
            targets: cells.iter().flat_map(|&m| partition.federated_targets(cfg, m)).collect(),
            subbands: cells.clone(),
            bandwidth: cells.iter().map(|&m| split.b_fed[m]).collect(),
            slots: effective_slots(Regime::Federated, cfg, &counts)?,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.subbands.is_empty()
    }

    pub fn total_bandwidth(&self) -> usize {
        self.bandwidth.iter().sum()
    }

    pub fn user_slot(&self, k: usize) -> Option<usize> {
        self.users.iter().position(|&u| u == k)
    }

    pub fn target_slot(&self, q: usize) -> Option<usize> {
        self.targets.iter().position(|&t| t == q)
    }

    pub fn subband_slot(&self, i: usize) -> Option<usize> {
        self.subbands.iter().position(|&s| s == i)
    }
}

/// Slots left for data after channel estimation.
///
/// `federated_user_counts` holds the federated user count of each cell of
/// the cluster and is ignored in the local regime.
pub fn effective_slots(regime: Regime, cfg: &ScenarioConfig, federated_user_counts: &[usize]) -> Result<usize> {
    let used = match regime {
        Regime::Local => cfg.d_ce * cfg.users_per_cell,
        Regime::Federated => {
            let total: usize = federated_user_counts.iter().sum();
            let worst = federated_user_counts.iter().map(|&c| total - c).max().unwrap_or(0);
            cfg.d_ce * (worst + cfg.users_per_cell)
        }
    };
    cfg.slots.checked_sub(used).ok_or_else(|| {
        Error::InfeasibleFrame(format!(
            "{regime:?} estimation needs {used} slots but the frame has {}",
            cfg.slots
        ))
    })
}

/// Downlink SINR of user `k` on subband `i` within `ctx`.
pub fn comm_sinr(
    k: usize,
    i: usize,
    ctx: &RegimeContext,
    plan: &BeamPowerPlan,
    book: &ChannelBook,
    sigma_k: f64,
) -> Result<f64> {
    let zk = ctx.user_slot(k).ok_or_else(|| {
        Error::Logic(format!("user {k} not served by {:?} context {}", ctx.regime, ctx.index))
    })?;
    let si = ctx.subband_slot(i).ok_or_else(|| {
        Error::Logic(format!("subband {i} not used by {:?} context {}", ctx.regime, ctx.index))
    })?;
    let mut signal = 0.0;
    let mut interference = 0.0;
    let mut noise = sigma_k;
    let n_ent = ctx.users.len() + ctx.targets.len();
    for zu in 0..ctx.users.len() {
        let mut coherent = Complex64::new(0.0, 0.0);
        for (ai, &a) in ctx.aps.iter().enumerate() {
            let p = plan.power(ai, zu);
            if p == 0.0 {
                continue;
            }
            let h = book.h_hat_checked(a, k, i)?;
            coherent += h.dotc(plan.beam(ai, zu, si)) * p.sqrt();
        }
        if zu == zk {
            signal = coherent.norm_sqr();
        } else {
            interference += coherent.norm_sqr();
        }
    }
    for (ai, &a) in ctx.aps.iter().enumerate() {
        let total: f64 = (0..n_ent).map(|z| plan.power(ai, z)).sum();
        noise += book.delta(a, k, i) * total;
    }
    Ok(signal / (interference + noise))
}

/// Effective rate (nats/s/Hz) from per-subband SINRs aligned with `ctx.subbands`.
pub fn effective_rate(ctx: &RegimeContext, sinrs: &[f64], cfg: &ScenarioConfig) -> f64 {
    let denom = (cfg.cells * cfg.subcarriers * cfg.slots) as f64;
    ctx.bandwidth
        .iter()
        .zip(sinrs)
        .map(|(&b, &g)| (b * ctx.slots) as f64 / denom * g.ln_1p())
        .sum()
}

/// Rates of every user in `ctx`, in `ctx.users` order.
pub fn context_rates(
    ctx: &RegimeContext,
    plan: &BeamPowerPlan,
    book: &ChannelBook,
    user_noise: &[f64],
    cfg: &ScenarioConfig,
) -> Result<Vec<f64>> {
    ctx.users
        .iter()
        .map(|&k| {
            let sinrs = ctx
                .subbands
                .iter()
                .zip(&ctx.bandwidth)
                .map(|(&i, &b)| {
                    if b == 0 {
                        Ok(0.0)
                    } else {
                        comm_sinr(k, i, ctx, plan, book, user_noise[k])
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(effective_rate(ctx, &sinrs, cfg))
        })
        .collect()
}
