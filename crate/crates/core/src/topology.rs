//! Decoding raw agent actions into feasible topology and resource
//! decisions, and checking those decisions against every constraint.
//!
//! Raw action layouts (all values real; angles in radians):
//!
//! * cell-partition agent of cell `m`: `[K user bits, Q target bits,
//!   A local powers, local subcarrier count]`; a bit `>= 0.5` federates
//!   the service.
//! * local power/beam agent of cell `m`: for each AP of the cell,
//!   `[K+Q powers, K+Q angles]` over the cell's users then targets.
//! * grouping agent: one cluster label in `1..=R` per cell.
//! * federated power/beam agent: for every AP of the network,
//!   `[M*K user powers, M*Q target powers, M*K user angles, M*Q target angles]`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelBook;
use crate::comm_metrics::{Regime, RegimeContext};
use crate::error::{Error, Result};
use crate::kinematics::{steering, CVector};
use crate::scenario::ScenarioConfig;

/// Absolute tolerance on power sums (W).
pub const POWER_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServicePartition {
    /// Per global user index: served in the federated regime.
    pub user_federated: Vec<bool>,
    /// Per global target index: served in the federated regime.
    pub target_federated: Vec<bool>,
}

impl ServicePartition {
    pub fn all_local(cfg: &ScenarioConfig) -> Self {
        Self {
            user_federated: vec![false; cfg.total_users()],
            target_federated: vec![false; cfg.total_targets()],
        }
    }

    pub fn all_federated(cfg: &ScenarioConfig) -> Self {
        Self {
            user_federated: vec![true; cfg.total_users()],
            target_federated: vec![true; cfg.total_targets()],
        }
    }

    pub fn local_users(&self, cfg: &ScenarioConfig, cell: usize) -> Vec<usize> {
        cfg.users(cell).filter(|&k| !self.user_federated[k]).collect()
    }

    pub fn federated_users(&self, cfg: &ScenarioConfig, cell: usize) -> Vec<usize> {
        cfg.users(cell).filter(|&k| self.user_federated[k]).collect()
    }

    pub fn local_targets(&self, cfg: &ScenarioConfig, cell: usize) -> Vec<usize> {
        cfg.targets(cell).filter(|&q| !self.target_federated[q]).collect()
    }

    pub fn federated_targets(&self, cfg: &ScenarioConfig, cell: usize) -> Vec<usize> {
        cfg.targets(cell).filter(|&q| self.target_federated[q]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceSplit {
    /// Local subcarriers per cell.
    pub b_local: Vec<usize>,
    /// Federated subcarriers per cell (subband).
    pub b_fed: Vec<usize>,
    /// Local power budget per AP (W).
    pub p_local: Vec<f64>,
    /// Federated power budget per AP (W).
    pub p_fed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grouping {
    /// Sorted cell indices of each cluster; clusters may be empty.
    pub clusters: Vec<Vec<usize>>,
}

impl Grouping {
    pub fn cluster_of(&self, cell: usize) -> Option<usize> {
        self.clusters.iter().position(|c| c.contains(&cell))
    }

    /// Cluster label (0-based) of every cell.
    pub fn labels(&self, cells: usize) -> Vec<usize> {
        (0..cells).map(|m| self.cluster_of(m).unwrap_or(usize::MAX)).collect()
    }
}

/// Decoded action of one cell-partition agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LcpDecision {
    pub user_federated: Vec<bool>,
    pub target_federated: Vec<bool>,
    pub p_local: Vec<f64>,
    pub b_local: usize,
}

fn finite_or_zero(x: f64) -> f64 {
    if x.is_finite() {
        x
    } else {
        0.0
    }
}

fn check_len(what: &str, raw: &[f64], expect: usize) -> Result<()> {
    if raw.len() != expect {
        return Err(Error::Interface(format!(
            "{what} action has length {}, expected {expect}",
            raw.len()
        )));
    }
    Ok(())
}

pub fn lcp_action_len(cfg: &ScenarioConfig) -> usize {
    cfg.users_per_cell + cfg.targets_per_cell + cfg.aps_per_cell + 1
}

pub fn lpb_action_len(cfg: &ScenarioConfig) -> usize {
    cfg.aps_per_cell * 2 * (cfg.users_per_cell + cfg.targets_per_cell)
}

pub fn fg_action_len(cfg: &ScenarioConfig) -> usize {
    cfg.cells
}

pub fn fpb_action_len(cfg: &ScenarioConfig) -> usize {
    cfg.total_aps() * 2 * (cfg.total_users() + cfg.total_targets())
}

pub fn decode_lcp(raw: &[f64], cfg: &ScenarioConfig) -> Result<LcpDecision> {
    check_len("cell-partition", raw, lcp_action_len(cfg))?;
    let (k, q, a) = (cfg.users_per_cell, cfg.targets_per_cell, cfg.aps_per_cell);
    let bit = |x: f64| finite_or_zero(x) >= 0.5;
    let b = finite_or_zero(raw[k + q + a]).clamp(0.0, cfg.subcarriers as f64);
    Ok(LcpDecision {
        user_federated: raw[..k].iter().map(|&x| bit(x)).collect(),
        target_federated: raw[k..k + q].iter().map(|&x| bit(x)).collect(),
        p_local: raw[k + q..k + q + a]
            .iter()
            .map(|&x| finite_or_zero(x).clamp(0.0, cfg.p_max))
            .collect(),
        b_local: (b.ceil() as usize).min(cfg.subcarriers),
    })
}

/// Assemble per-cell decisions into the network-wide partition and split.
pub fn combine_lcp(decisions: &[LcpDecision], cfg: &ScenarioConfig) -> Result<(ServicePartition, ResourceSplit)> {
    if decisions.len() != cfg.cells {
        return Err(Error::Interface(format!(
            "{} cell-partition decisions for {} cells",
            decisions.len(),
            cfg.cells
        )));
    }
    let mut partition = ServicePartition { user_federated: vec![], target_federated: vec![] };
    let mut split = ResourceSplit { b_local: vec![], b_fed: vec![], p_local: vec![], p_fed: vec![] };
    for d in decisions {
        partition.user_federated.extend(&d.user_federated);
        partition.target_federated.extend(&d.target_federated);
        split.b_local.push(d.b_local);
        split.b_fed.push(cfg.subcarriers - d.b_local);
        split.p_local.extend(&d.p_local);
        split.p_fed.extend(d.p_local.iter().map(|p| cfg.p_max - p));
    }
    Ok((partition, split))
}

/// Cluster cells by label and repair clusters larger than `m_max`.
///
/// Labels are rounded and clamped to `1..=clusters`. While some cluster
/// exceeds `m_max`, its highest-index cell moves to the least-loaded
/// cluster (lowest index on ties).
pub fn decode_fg(raw: &[f64], clusters: usize, m_max: usize) -> Result<Grouping> {
    let cells = raw.len();
    if clusters == 0 || clusters * m_max < cells {
        return Err(Error::Config(format!(
            "{clusters} clusters of at most {m_max} cells cannot hold {cells} cells"
        )));
    }
    let mut groups = vec![Vec::new(); clusters];
    for (m, &x) in raw.iter().enumerate() {
        let label = finite_or_zero(x).round().clamp(1.0, clusters as f64) as usize;
        groups[label - 1].push(m);
    }
    while let Some(over) = groups.iter().position(|g| g.len() > m_max) {
        let cell = groups[over].pop().expect("overflowing cluster is non-empty");
        let target = (0..clusters)
            .min_by_key(|&r| (groups[r].len(), r))
            .expect("at least one cluster");
        groups[target].push(cell);
        groups[target].sort_unstable();
    }
    Ok(Grouping { clusters: groups })
}

/// Angle of grid level `level` in `1..=delta_theta`.
pub fn beam_angle(level: usize, delta_theta: usize) -> f64 {
    (-0.5 + level as f64 / delta_theta as f64) * PI
}

/// Nearest grid level to `theta`.
pub fn snap_angle(theta: f64, delta_theta: usize) -> usize {
    let x = (finite_or_zero(theta) / PI + 0.5) * delta_theta as f64;
    (x.round().max(1.0) as usize).min(delta_theta)
}

/// Multiplicative rescaling onto `{p >= 0 : sum(w * p) <= budget}`.
pub fn project_power_simplex(raw: &[f64], weights: &[f64], budget: f64) -> Vec<f64> {
    let p: Vec<f64> = raw.iter().map(|&x| finite_or_zero(x).max(0.0)).collect();
    let used: f64 = p.iter().zip(weights).map(|(p, w)| p * w).sum();
    if used <= budget {
        return p;
    }
    let scale = budget.max(0.0) / used;
    p.iter().map(|x| x * scale).collect()
}

/// Powers, beam levels and beam vectors of one regime context.
///
/// Entities are the context's users followed by its targets; powers are
/// per subcarrier and shared by every subband of the context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamPowerPlan {
    pub n_aps: usize,
    pub n_entities: usize,
    pub n_subbands: usize,
    /// `[ap][entity]`
    pub power: Vec<f64>,
    /// `[ap][entity]`, grid level in `1..=delta_theta`.
    pub level: Vec<usize>,
    /// `[ap][entity][subband]`
    pub beams: Vec<CVector>,
}

impl BeamPowerPlan {
    pub fn power(&self, ap: usize, entity: usize) -> f64 {
        self.power[ap * self.n_entities + entity]
    }

    pub fn level(&self, ap: usize, entity: usize) -> usize {
        self.level[ap * self.n_entities + entity]
    }

    pub fn beam(&self, ap: usize, entity: usize, subband: usize) -> &CVector {
        &self.beams[(ap * self.n_entities + entity) * self.n_subbands + subband]
    }

    /// Plan with explicit beams; `beams` is laid out `[ap][entity][subband]`.
    pub fn from_beams(ctx: &RegimeContext, power: Vec<f64>, level: Vec<usize>, beams: Vec<CVector>) -> Self {
        let n_entities = ctx.users.len() + ctx.targets.len();
        Self {
            n_aps: ctx.aps.len(),
            n_entities,
            n_subbands: ctx.subbands.len(),
            power,
            level,
            beams,
        }
    }

    /// Build beams from grid levels: steering vectors, with communication
    /// beams phase-rotated so each AP's effective channel gain is real.
    pub fn from_levels(
        ctx: &RegimeContext,
        power: Vec<f64>,
        level: Vec<usize>,
        book: &ChannelBook,
        cfg: &ScenarioConfig,
    ) -> Result<Self> {
        let n_entities = ctx.users.len() + ctx.targets.len();
        let mut beams = Vec::with_capacity(ctx.aps.len() * n_entities * ctx.subbands.len());
        for (ai, &a) in ctx.aps.iter().enumerate() {
            for z in 0..n_entities {
                let v = steering(beam_angle(level[ai * n_entities + z], cfg.delta_theta), cfg.n_tx);
                for &i in &ctx.subbands {
                    if z < ctx.users.len() {
                        let h = book.h_hat_checked(a, ctx.users[z], i)?;
                        let phi = h.dotc(&v).arg();
                        beams.push(&v * Complex64::from_polar(1.0, -phi));
                    } else {
                        beams.push(v.clone());
                    }
                }
            }
        }
        Ok(Self::from_beams(ctx, power, level, beams))
    }
}

/// Decode a local or federated power/beam action for `ctx`.
pub fn decode_beam_power(
    raw: &[f64],
    ctx: &RegimeContext,
    book: &ChannelBook,
    cfg: &ScenarioConfig,
) -> Result<BeamPowerPlan> {
    // Entities per AP block in the raw layout.
    let block = match ctx.regime {
        Regime::Local => {
            check_len("local power/beam", raw, lpb_action_len(cfg))?;
            cfg.users_per_cell + cfg.targets_per_cell
        }
        Regime::Federated => {
            check_len("federated power/beam", raw, fpb_action_len(cfg))?;
            cfg.total_users() + cfg.total_targets()
        }
    };
    let n_entities = ctx.users.len() + ctx.targets.len();
    let weight = ctx.total_bandwidth() as f64;
    let mut power = Vec::with_capacity(ctx.aps.len() * n_entities);
    let mut level = Vec::with_capacity(ctx.aps.len() * n_entities);
    for (ai, &a) in ctx.aps.iter().enumerate() {
        let budget = ctx.ap_budget[ai].max(0.0);
        let ap_row = match ctx.regime {
            Regime::Local => ai,
            Regime::Federated => a,
        };
        let base = ap_row * 2 * block;
        let mut row = Vec::with_capacity(n_entities);
        for z in 0..n_entities {
            let slot = raw_entity_slot(ctx, cfg, z);
            row.push(finite_or_zero(raw[base + slot]).clamp(0.0, budget));
            level.push(snap_angle(raw[base + block + slot], cfg.delta_theta));
        }
        if weight == 0.0 {
            row.iter_mut().for_each(|p| *p = 0.0);
        } else {
            row = project_power_simplex(&row, &vec![weight; n_entities], budget);
        }
        power.extend(row);
    }
    BeamPowerPlan::from_levels(ctx, power, level, book, cfg)
}

/// Position of context entity `z` within its raw action block.
fn raw_entity_slot(ctx: &RegimeContext, cfg: &ScenarioConfig, z: usize) -> usize {
    let n_users = ctx.users.len();
    match ctx.regime {
        Regime::Local => {
            let m = ctx.index;
            if z < n_users {
                ctx.users[z] - m * cfg.users_per_cell
            } else {
                cfg.users_per_cell + ctx.targets[z - n_users] - m * cfg.targets_per_cell
            }
        }
        Regime::Federated => {
            if z < n_users {
                ctx.users[z]
            } else {
                cfg.total_users() + ctx.targets[z - n_users]
            }
        }
    }
}

/// A decoded frame: partition, split, grouping and all power/beam plans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyDecision {
    pub partition: ServicePartition,
    pub split: ResourceSplit,
    pub grouping: Grouping,
    pub local: Vec<(RegimeContext, BeamPowerPlan)>,
    pub federated: Vec<(RegimeContext, BeamPowerPlan)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub constraint: &'static str,
    pub detail: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.constraint, self.detail)
    }
}

fn violation(constraint: &'static str, detail: String) -> std::result::Result<(), Violation> {
    Err(Violation { constraint, detail })
}

/// Check a decision against every constraint; returns the first violation.
pub fn validate_topology(d: &TopologyDecision, cfg: &ScenarioConfig) -> std::result::Result<(), Violation> {
    let p = &d.partition;
    if p.user_federated.len() != cfg.total_users() || p.target_federated.len() != cfg.total_targets() {
        return violation("service partition", "partition does not cover every service".into());
    }
    let s = &d.split;
    if s.b_local.len() != cfg.cells || s.b_fed.len() != cfg.cells {
        return violation("bandwidth split", "split does not cover every cell".into());
    }
    for m in 0..cfg.cells {
        if s.b_local[m] + s.b_fed[m] != cfg.subcarriers {
            return violation(
                "bandwidth split",
                format!("cell {m}: {} + {} != {}", s.b_local[m], s.b_fed[m], cfg.subcarriers),
            );
        }
    }
    if s.p_local.len() != cfg.total_aps() || s.p_fed.len() != cfg.total_aps() {
        return violation("power split", "split does not cover every AP".into());
    }
    for a in 0..cfg.total_aps() {
        let (pl, pf) = (s.p_local[a], s.p_fed[a]);
        if pl < 0.0 || pf < 0.0 || (pl + pf - cfg.p_max).abs() > POWER_TOL {
            return violation("power split", format!("AP {a}: {pl} + {pf} != {}", cfg.p_max));
        }
    }

    let mut seen = vec![0usize; cfg.cells];
    if d.grouping.clusters.len() != cfg.clusters {
        return violation(
            "CFN count",
            format!("{} clusters, expected {}", d.grouping.clusters.len(), cfg.clusters),
        );
    }
    for (r, c) in d.grouping.clusters.iter().enumerate() {
        if c.len() > cfg.m_max {
            return violation("CFN size", format!("cluster {r} has {} cells > {}", c.len(), cfg.m_max));
        }
        for &m in c {
            if m >= cfg.cells {
                return violation("CFN coverage", format!("cluster {r} names unknown cell {m}"));
            }
            seen[m] += 1;
        }
    }
    if let Some(m) = seen.iter().position(|&n| n > 1) {
        return violation("CFN disjointness", format!("cell {m} belongs to {} clusters", seen[m]));
    }
    if let Some(m) = seen.iter().position(|&n| n == 0) {
        return violation("CFN coverage", format!("cell {m} belongs to no cluster"));
    }

    for (ctx, plan) in &d.local {
        let m = ctx.index;
        let expect = RegimeContext {
            slots: ctx.slots,
            ..RegimeContext::local(cfg, p, s, m).map_err(|e| Violation {
                constraint: "local context",
                detail: e.to_string(),
            })?
        };
        if *ctx != expect {
            return violation("local context", format!("cell {m} context disagrees with the partition"));
        }
        check_plan(ctx, plan, cfg, "per-AP local power")?;
    }
    for (ctx, plan) in &d.federated {
        let r = ctx.index;
        let expect = RegimeContext {
            slots: ctx.slots,
            ..RegimeContext::federated(cfg, p, s, &d.grouping, r).map_err(|e| Violation {
                constraint: "federated context",
                detail: e.to_string(),
            })?
        };
        if *ctx != expect {
            return violation(
                "federated context",
                format!("cluster {r} context disagrees with the partition or grouping"),
            );
        }
        check_plan(ctx, plan, cfg, "per-AP federated power")?;
    }
    Ok(())
}

fn check_plan(
    ctx: &RegimeContext,
    plan: &BeamPowerPlan,
    cfg: &ScenarioConfig,
    total_label: &'static str,
) -> std::result::Result<(), Violation> {
    let n_entities = ctx.users.len() + ctx.targets.len();
    if plan.n_aps != ctx.aps.len()
        || plan.n_entities != n_entities
        || plan.n_subbands != ctx.subbands.len()
        || plan.power.len() != plan.n_aps * n_entities
        || plan.level.len() != plan.power.len()
        || plan.beams.len() != plan.power.len() * plan.n_subbands
    {
        return violation("plan shape", format!("{:?} context {} plan shape mismatch", ctx.regime, ctx.index));
    }
    let weight = ctx.total_bandwidth() as f64;
    for (ai, &a) in ctx.aps.iter().enumerate() {
        let budget = ctx.ap_budget[ai];
        let mut total = 0.0;
        for z in 0..n_entities {
            let p = plan.power(ai, z);
            if !(p >= 0.0) || !p.is_finite() {
                return violation("power nonnegativity", format!("AP {a}, entity {z}: {p}"));
            }
            if weight * p > budget + POWER_TOL {
                return violation("individual power", format!("AP {a}, entity {z}: {} > {budget}", weight * p));
            }
            let l = plan.level(ai, z);
            if l == 0 || l > cfg.delta_theta {
                return violation("beam grid", format!("AP {a}, entity {z}: level {l}"));
            }
            for si in 0..plan.n_subbands {
                let n = plan.beam(ai, z, si).norm();
                if (n - 1.0).abs() > 1e-9 {
                    return violation("beam norm", format!("AP {a}, entity {z}: norm {n}"));
                }
            }
            total += weight * p;
        }
        if total > budget + POWER_TOL {
            return violation(total_label, format!("AP {a}: {total} > {budget}"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lcp_corners() {
        let cfg = ScenarioConfig::reference();
        let mut raw = vec![0.0; lcp_action_len(&cfg)];
        raw[8..11].copy_from_slice(&[4.0, 20.0, -1.0]);
        raw[11] = 7.2;
        let d = decode_lcp(&raw, &cfg).unwrap();
        assert!(d.user_federated.iter().chain(&d.target_federated).all(|&b| !b));
        assert_eq!(d.b_local, 8);
        assert_eq!(d.p_local, vec![4.0, 10.0, 0.0]);
        raw[..8].iter_mut().for_each(|x| *x = 1.0);
        raw[11] = 99.0;
        let d = decode_lcp(&raw, &cfg).unwrap();
        assert!(d.user_federated.iter().chain(&d.target_federated).all(|&b| b));
        assert_eq!(d.b_local, 16);
        assert!(decode_lcp(&raw[1..], &cfg).is_err());
    }

    #[test]
    fn fg_examples() {
        let g = decode_fg(&[1.0, 1.0, 2.0, 2.0], 2, 2).unwrap();
        assert_eq!(g.clusters, vec![vec![0, 1], vec![2, 3]]);
        let g = decode_fg(&[1.0, 1.0, 1.0, 1.0], 2, 2).unwrap();
        assert_eq!(g.clusters, vec![vec![0, 1], vec![2, 3]]);
        let g = decode_fg(&[1.0, 1.0, 1.0, 1.0], 2, 4).unwrap();
        assert_eq!(g.clusters, vec![vec![0, 1, 2, 3], vec![]]);
        let g = decode_fg(&[0.2, 7.0, 1.6, f64::NAN], 3, 2).unwrap();
        assert_eq!(g.clusters, vec![vec![0, 3], vec![2], vec![1]]);
    }

    #[test]
    fn grid_and_snap() {
        assert_eq!(beam_angle(4, 8), 0.0);
        assert_eq!(beam_angle(8, 8), PI / 2.0);
        for l in 1..=8 {
            assert_eq!(snap_angle(beam_angle(l, 8), 8), l);
        }
        assert_eq!(snap_angle(-PI / 2.0, 8), 1);
        assert_eq!(snap_angle(10.0, 8), 8);
    }

    #[test]
    fn simplex_examples() {
        assert_eq!(project_power_simplex(&[0.5, 1.0], &[16.0, 16.0], 32.0), vec![0.5, 1.0]);
        let p = project_power_simplex(&[2.0, 2.0], &[16.0, 16.0], 32.0);
        assert_eq!(p, vec![1.0, 1.0]);
        assert_eq!(p.iter().map(|x| 16.0 * x).sum::<f64>(), 32.0);
        assert_eq!(project_power_simplex(&[3.0, 1.0], &[1.0, 1.0], 0.0), vec![0.0, 0.0]);
    }
}
