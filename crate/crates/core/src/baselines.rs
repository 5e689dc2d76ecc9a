//! Fixed comparison policies and the forced actions of the single-regime schemes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{Environment, JointAction, Role};
use crate::error::{Error, Result};
use crate::kinematics::{relative_angle, steering};
use crate::scenario::{Position, ScenarioConfig};
use crate::topology::{beam_angle, combine_lcp, decode_fg, decode_lcp, snap_angle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaselineKind {
    CcnOnly,
    CfnOnly,
    RandomMrt,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::CcnOnly => "ccn",
            BaselineKind::CfnOnly => "cfn",
            BaselineKind::RandomMrt => "random",
        }
    }

    /// Agent roles trained under this scheme.
    pub fn trained_roles(self) -> &'static [Role] {
        match self {
            BaselineKind::CcnOnly => &[Role::Lpb],
            BaselineKind::CfnOnly => &[Role::Fg, Role::Fpb],
            BaselineKind::RandomMrt => &[],
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ccn" | "ccn_only" => Ok(BaselineKind::CcnOnly),
            "cfn" | "cfn_only" => Ok(BaselineKind::CfnOnly),
            "random" | "random_mrt" => Ok(BaselineKind::RandomMrt),
            other => Err(Error::Config(format!("unknown baseline {other:?}"))),
        }
    }
}

/// Every service local, all subcarriers and power local.
pub fn ccn_lcp_action(cfg: &ScenarioConfig) -> Vec<f64> {
    let mut raw = vec![0.0; cfg.users_per_cell + cfg.targets_per_cell];
    raw.extend(std::iter::repeat_n(cfg.p_max, cfg.aps_per_cell));
    raw.push(cfg.subcarriers as f64);
    raw
}

/// Every service federated, all subcarriers and power federated.
pub fn cfn_lcp_action(cfg: &ScenarioConfig) -> Vec<f64> {
    let mut raw = vec![1.0; cfg.users_per_cell + cfg.targets_per_cell];
    raw.extend(std::iter::repeat_n(0.0, cfg.aps_per_cell));
    raw.push(0.0);
    raw
}

/// A placeholder action for a role whose decisions have no effect.
pub fn inert_action(role: Role, cfg: &ScenarioConfig) -> Vec<f64> {
    match role {
        Role::Fg => (0..cfg.cells).map(|m| (m % cfg.clusters + 1) as f64).collect(),
        _ => vec![0.0; role.action_len(cfg)],
    }
}

/// Grid level whose steering vector best matches the given channels.
fn mrt_level(env: &Environment, a: usize, k: usize, subbands: &[usize]) -> usize {
    let cfg = env.config();
    let book = env.book();
    let estimates: Vec<_> = subbands.iter().filter_map(|&i| book.h_hat(a, k, i)).collect();
    if estimates.is_empty() {
        let ap = &env.scenario().ap_positions[a];
        let ue = &env.scenario().user_positions[k];
        return relative_angle(ap, ue).map(|t| snap_angle(t, cfg.delta_theta)).unwrap_or(cfg.delta_theta / 2 + 1);
    }
    (1..=cfg.delta_theta)
        .map(|l| {
            let v = steering(beam_angle(l, cfg.delta_theta), cfg.n_tx);
            let gain: f64 = estimates.iter().map(|h| h.dotc(&v).norm_sqr()).sum();
            (l, gain)
        })
        .fold((1, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
        .0
}

fn radar_level(env: &Environment, a: usize, q: usize) -> usize {
    let cfg = env.config();
    let x = env.beliefs()[q].x_pred;
    let ap = &env.scenario().ap_positions[a];
    relative_angle(ap, &Position::new(x[0], x[1]))
        .map(|t| snap_angle(t, cfg.delta_theta))
        .unwrap_or(cfg.delta_theta / 2 + 1)
}

/// Random service classification, even resource splits, equal power and
/// grid-quantised maximum-ratio beams.
pub fn random_mrt_policy<R: Rng + ?Sized>(env: &Environment, rng: &mut R) -> Result<JointAction> {
    let cfg = env.config().clone();
    let (k, q, a_n) = (cfg.users_per_cell, cfg.targets_per_cell, cfg.aps_per_cell);
    let lcp: Vec<Vec<f64>> = (0..cfg.cells)
        .map(|_| {
            let mut raw: Vec<f64> = (0..k + q).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
            raw.extend(std::iter::repeat_n(cfg.p_max / 2.0, a_n));
            raw.push(cfg.subcarriers as f64 / 2.0);
            raw
        })
        .collect();
    let fg: Vec<f64> = (0..cfg.cells).map(|_| rng.random_range(1..=cfg.clusters) as f64).collect();

    let decisions = lcp.iter().map(|r| decode_lcp(r, &cfg)).collect::<Result<Vec<_>>>()?;
    let (partition, split) = combine_lcp(&decisions, &cfg)?;
    let grouping = decode_fg(&fg, cfg.clusters, cfg.m_max)?;

    let per_cell = k + q;
    let mut lpb = Vec::with_capacity(cfg.cells);
    for m in 0..cfg.cells {
        let mut raw = vec![0.0; Role::Lpb.action_len(&cfg)];
        let users = partition.local_users(&cfg, m);
        let targets = partition.local_targets(&cfg, m);
        let served = users.len() + targets.len();
        let width = split.b_local[m];
        for (j, a) in cfg.aps(m).enumerate() {
            let base = j * 2 * per_cell;
            let p = if served > 0 && width > 0 { split.p_local[a] / (width * served) as f64 } else { 0.0 };
            for &u in &users {
                let slot = u - m * k;
                raw[base + slot] = p;
                raw[base + per_cell + slot] = beam_angle(mrt_level(env, a, u, &[m]), cfg.delta_theta);
            }
            for &t in &targets {
                let slot = k + t - m * q;
                raw[base + slot] = p;
                raw[base + per_cell + slot] = beam_angle(radar_level(env, a, t), cfg.delta_theta);
            }
        }
        lpb.push(raw);
    }

    let block = cfg.total_users() + cfg.total_targets();
    let mut fpb = Vec::with_capacity(cfg.clusters);
    for cells in &grouping.clusters {
        let mut raw = vec![0.0; Role::Fpb.action_len(&cfg)];
        let users: Vec<usize> = cells.iter().flat_map(|&m| partition.federated_users(&cfg, m)).collect();
        let targets: Vec<usize> = cells.iter().flat_map(|&m| partition.federated_targets(&cfg, m)).collect();
        let served = users.len() + targets.len();
        let width: usize = cells.iter().map(|&m| split.b_fed[m]).sum();
        for a in cells.iter().flat_map(|&m| cfg.aps(m)) {
            let base = a * 2 * block;
            let p = if served > 0 && width > 0 { split.p_fed[a] / (width * served) as f64 } else { 0.0 };
            for &u in &users {
                raw[base + u] = p;
                raw[base + block + u] = beam_angle(mrt_level(env, a, u, cells), cfg.delta_theta);
            }
            for &t in &targets {
                let slot = cfg.total_users() + t;
                raw[base + slot] = p;
                raw[base + block + slot] = beam_angle(radar_level(env, a, t), cfg.delta_theta);
            }
        }
        fpb.push(raw);
    }
    Ok(JointAction { lcp, lpb, fg, fpb })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};
    use crate::scenario::build_scenario;
    use crate::topology::validate_topology;

    #[test]
    fn forced_actions_decode_to_corners() {
        let cfg = ScenarioConfig::reference();
        let d = decode_lcp(&ccn_lcp_action(&cfg), &cfg).unwrap();
        assert_eq!(d.b_local, 16);
        assert!(d.p_local.iter().all(|&p| p == cfg.p_max));
        assert!(d.user_federated.iter().all(|&b| !b));
        let d = decode_lcp(&cfn_lcp_action(&cfg), &cfg).unwrap();
        assert_eq!(d.b_local, 0);
        assert!(d.user_federated.iter().chain(&d.target_federated).all(|&b| b));
    }

    #[test]
    fn random_mrt_bits_fair_and_feasible() {
        let s = build_scenario(ScenarioConfig::desk(), 4).unwrap();
        let mut env = Environment::new(s, 4).unwrap();
        let mut rng = substream(4, Stream::Baseline);
        let mut ones = 0usize;
        let mut total = 0usize;
        for _ in 0..2500 {
            let act = random_mrt_policy(&env, &mut rng).unwrap();
            for row in &act.lcp {
                for &b in &row[..4] {
                    ones += (b == 1.0) as usize;
                    total += 1;
                }
            }
        }
        let frac = ones as f64 / total as f64;
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
        for _ in 0..20 {
            let act = random_mrt_policy(&env, &mut rng).unwrap();
            env.step(&act).unwrap();
            validate_topology(env.last_decision().unwrap(), env.config()).unwrap();
        }
    }
}
