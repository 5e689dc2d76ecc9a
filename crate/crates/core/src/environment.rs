//! The two-phase multi-agent environment.
//!
//! A frame starts with local channel estimation in every cell. Agents then
//! act in protocol order: cell-partition agents (one per cell), local
//! power/beam agents (one per cell), the grouping agent, and federated
//! power/beam agents (one per cluster). [`Environment::observation`]
//! enforces that order; [`Environment::step`] consumes all actions of the
//! frame and returns the shared reward.
//!
//! Observation layouts (all flat `f64`):
//!
//! * cell-partition agent of cell `m`: user positions `2K`, AP positions
//!   `2A`, then for each AP and each user of the cell the channel estimate
//!   on subband `m` as `N` (re, im) pairs followed by its error variance
//!   (`A*K*(2N+1)`), then for each target the predicted state (4) and the
//!   previous information matrix (16, row-major).
//! * local power/beam agent: the decoded cell-partition action
//!   (`K+Q` bits, `A` powers over `P_max`, local subcarriers over `B`)
//!   followed by the cell-partition observation.
//! * grouping agent: one report slot per cell. A slot holds, per user,
//!   a presence flag and the `A*(2N+1)` channel features; per target, a
//!   presence flag, the predicted state and the information matrix; per
//!   AP, the federated power budget over `P_max`. Absent services are zero.
//! * federated power/beam agent of cluster `r`: per cell, a membership
//!   flag and the cell's report slot (zeros for non-members), then the
//!   `M*R` one-hot cluster assignment.
//!
//! Scaling: channel estimates are divided by the square root of their
//! large-scale attenuation and error variances by the attenuation;
//! positions by the area side; velocities by the top speed; information
//! entries pass through `sign(x) * log10(1 + |x|)`.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::accounting::{federated_overhead, frame_totals, normalize_comm, normalize_sense, phase1_overhead, FrameLedger};
use crate::channel::{estimation_error_variance, pilot_count, ChannelBook};
use crate::comm_metrics::{context_rates, RegimeContext};
use crate::error::{Error, Result};
use crate::kinematics::{advance_target, process_noise, transition_matrix, TargetState};
use crate::rng::{substream, SimRng, Stream};
use crate::scenario::{perturb_positions, Scenario, ScenarioConfig};
use crate::sensing_metrics::{
    bfim_update, draw_initial_estimate, draw_posterior, fim_total, predict_state, sensing_errors, SensingBelief,
};
use crate::topology::{
    combine_lcp, decode_beam_power, decode_fg, decode_lcp, fg_action_len, fpb_action_len, lcp_action_len,
    lpb_action_len, LcpDecision, ResourceSplit, ServicePartition, TopologyDecision,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Lcp,
    Lpb,
    Fg,
    Fpb,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Lcp, Role::Lpb, Role::Fg, Role::Fpb];

    pub fn name(self) -> &'static str {
        match self {
            Role::Lcp => "lcp",
            Role::Lpb => "lpb",
            Role::Fg => "fg",
            Role::Fpb => "fpb",
        }
    }

    pub fn agent_count(self, cfg: &ScenarioConfig) -> usize {
        match self {
            Role::Lcp | Role::Lpb => cfg.cells,
            Role::Fg => 1,
            Role::Fpb => cfg.clusters,
        }
    }

    pub fn action_len(self, cfg: &ScenarioConfig) -> usize {
        match self {
            Role::Lcp => lcp_action_len(cfg),
            Role::Lpb => lpb_action_len(cfg),
            Role::Fg => fg_action_len(cfg),
            Role::Fpb => fpb_action_len(cfg),
        }
    }

    pub fn observation_len(self, cfg: &ScenarioConfig) -> usize {
        let (k, q, a, n) = (cfg.users_per_cell, cfg.targets_per_cell, cfg.aps_per_cell, cfg.n_tx);
        let lcp = 2 * k + 2 * a + a * k * (2 * n + 1) + 20 * q;
        match self {
            Role::Lcp => lcp,
            Role::Lpb => lcp_action_len(cfg) + lcp,
            Role::Fg => cfg.cells * report_slot_len(cfg),
            Role::Fpb => cfg.cells * (1 + report_slot_len(cfg)) + cfg.cells * cfg.clusters,
        }
    }
}

fn report_slot_len(cfg: &ScenarioConfig) -> usize {
    let (k, q, a, n) = (cfg.users_per_cell, cfg.targets_per_cell, cfg.aps_per_cell, cfg.n_tx);
    k * (1 + a * (2 * n + 1)) + q * 21 + a
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentId {
    pub role: Role,
    pub index: usize,
}

/// Actions already taken this frame, for building later-stage observations.
#[derive(Debug, Clone, Copy, Default)]
pub struct Decided<'a> {
    pub lcp: Option<&'a [Vec<f64>]>,
    pub fg: Option<&'a [f64]>,
}

/// Raw actions of every agent for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointAction {
    pub lcp: Vec<Vec<f64>>,
    pub lpb: Vec<Vec<f64>>,
    pub fg: Vec<f64>,
    pub fpb: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDiagnostics {
    pub frame: usize,
    pub ledger: FrameLedger,
    pub user_rates: Vec<f64>,
    pub user_federated: Vec<bool>,
    pub target_federated: Vec<bool>,
    pub target_pos_err: Vec<f64>,
    pub target_vel_err: Vec<f64>,
    pub clusters: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    /// Cell-partition observations of the next frame.
    pub observations: Vec<Vec<f64>>,
    pub reward: f64,
    pub diagnostics: FrameDiagnostics,
    pub done: bool,
}

fn signed_log(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p() / std::f64::consts::LN_10
}

pub struct Environment {
    base: Scenario,
    scenario: Scenario,
    book: ChannelBook,
    targets: Vec<TargetState>,
    beliefs: Vec<SensingBelief>,
    frame: usize,
    done: bool,
    g: Matrix4<f64>,
    e: Matrix4<f64>,
    rng_channel: SimRng,
    rng_estimation: SimRng,
    rng_fed_estimation: SimRng,
    rng_target: SimRng,
    rng_posterior: SimRng,
    last_decision: Option<TopologyDecision>,
}

impl Environment {
    /// Environment over `base`, reset with `seed`.
    pub fn new(base: Scenario, seed: u64) -> Result<Self> {
        base.config.validate()?;
        let t_bar = base.config.t_bar();
        let scenario = base.clone();
        let mut rng_channel = substream(seed, Stream::Channel);
        let book = ChannelBook::new(&scenario, &mut rng_channel)?;
        let mut env = Self {
            g: transition_matrix(t_bar),
            e: process_noise(base.config.delta_q, t_bar),
            targets: vec![],
            beliefs: vec![],
            frame: 1,
            done: false,
            rng_channel,
            rng_estimation: substream(seed, Stream::Estimation),
            rng_fed_estimation: substream(seed, Stream::FederatedEstimation),
            rng_target: substream(seed, Stream::Target),
            rng_posterior: substream(seed, Stream::Posterior),
            last_decision: None,
            book,
            scenario,
            base,
        };
        env.reset(seed)?;
        Ok(env)
    }

    /// Start a new episode; returns the cell-partition observations.
    pub fn reset(&mut self, seed: u64) -> Result<Vec<Vec<f64>>> {
        let mut rng_pert = substream(seed, Stream::Perturbation);
        self.scenario = perturb_positions(&self.base, &mut rng_pert);
        self.rng_channel = substream(seed, Stream::Channel);
        self.rng_estimation = substream(seed, Stream::Estimation);
        self.rng_fed_estimation = substream(seed, Stream::FederatedEstimation);
        self.rng_target = substream(seed, Stream::Target);
        self.rng_posterior = substream(seed, Stream::Posterior);
        self.book = ChannelBook::new(&self.scenario, &mut self.rng_channel)?;
        let cfg = &self.scenario.config;
        self.targets = self.scenario.target_states.iter().map(|s| TargetState { frame: 1, ..*s }).collect();
        let g_inv = transition_matrix(-cfg.t_bar());
        let mut rng_init = substream(seed, Stream::Init);
        self.beliefs = self
            .targets
            .iter()
            .map(|t| SensingBelief::initial(draw_initial_estimate(&(g_inv * t.to_vector()), cfg, &mut rng_init), cfg))
            .collect();
        self.frame = 1;
        self.done = false;
        self.last_decision = None;
        self.local_estimation();
        Ok(self.lcp_observations())
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.scenario.config
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn book(&self) -> &ChannelBook {
        &self.book
    }

    pub fn beliefs(&self) -> &[SensingBelief] {
        &self.beliefs
    }

    pub fn targets(&self) -> &[TargetState] {
        &self.targets
    }

    /// Current 1-based frame index.
    pub fn frame(&self) -> usize {
        self.frame
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Decisions of the most recent step.
    pub fn last_decision(&self) -> Option<&TopologyDecision> {
        self.last_decision.as_ref()
    }

    fn channel_rho(&self) -> f64 {
        // No earlier estimate exists in the first frame, so the full
        // attenuation serves as the prior variance.
        if self.frame == 1 {
            0.0
        } else {
            self.scenario.config.rho_ak
        }
    }

    fn local_estimation(&mut self) {
        let cfg = &self.scenario.config;
        let rho = self.channel_rho();
        for m in 0..cfg.cells {
            let pilots = pilot_count(m, m, &[], cfg.subcarriers, 0, cfg.d_ce).expect("own subband");
            for a in cfg.aps(m) {
                for k in cfg.users(m) {
                    let delta = estimation_error_variance(
                        self.book.lambda(a, k),
                        rho,
                        cfg.p_ce,
                        pilots,
                        self.scenario.ap_noise[a],
                    );
                    self.book.estimate(a, k, m, delta, &mut self.rng_estimation);
                }
            }
        }
    }

    fn federated_estimation(&mut self, partition: &ServicePartition, split: &ResourceSplit, cells: &[usize]) -> Result<()> {
        let cfg = self.scenario.config.clone();
        let rho = self.channel_rho();
        for &home in cells {
            for k in partition.federated_users(&cfg, home) {
                for &i in cells {
                    let pilots = pilot_count(home, i, cells, cfg.subcarriers, split.b_fed[i], cfg.d_ce)?;
                    for a in cells.iter().flat_map(|&m| cfg.aps(m)) {
                        if self.book.is_estimated(a, k, i) {
                            continue;
                        }
                        let delta = estimation_error_variance(
                            self.book.lambda(a, k),
                            rho,
                            cfg.p_ce,
                            pilots,
                            self.scenario.ap_noise[a],
                        );
                        self.book.estimate(a, k, i, delta, &mut self.rng_fed_estimation);
                    }
                }
            }
        }
        Ok(())
    }

    fn channel_features(&self, out: &mut Vec<f64>, cell: usize, k: usize) {
        let cfg = &self.scenario.config;
        for a in cfg.aps(cell) {
            let lambda = self.book.lambda(a, k);
            let scale = 1.0 / lambda.sqrt();
            match self.book.h_hat(a, k, cell) {
                Some(h) => {
                    for z in h.iter() {
                        out.push(z.re * scale);
                        out.push(z.im * scale);
                    }
                }
                None => out.extend(std::iter::repeat_n(0.0, 2 * cfg.n_tx)),
            }
            out.push(self.book.delta(a, k, cell) / lambda);
        }
    }

    fn target_features(&self, out: &mut Vec<f64>, q: usize) {
        let cfg = &self.scenario.config;
        let vmax = if cfg.v_range.1 > 0.0 { cfg.v_range.1 } else { 1.0 };
        let b = &self.beliefs[q];
        out.push(b.x_pred[0] / cfg.area);
        out.push(b.x_pred[1] / cfg.area);
        out.push(b.x_pred[2] / vmax);
        out.push(b.x_pred[3] / vmax);
        for i in 0..4 {
            for j in 0..4 {
                out.push(signed_log(b.j_prev[(i, j)]));
            }
        }
    }

    pub fn lcp_observation(&self, cell: usize) -> Vec<f64> {
        let cfg = &self.scenario.config;
        let mut out = Vec::with_capacity(Role::Lcp.observation_len(cfg));
        for k in cfg.users(cell) {
            let p = self.scenario.user_positions[k] / cfg.area;
            out.extend([p.x, p.y]);
        }
        for a in cfg.aps(cell) {
            let p = self.scenario.ap_positions[a] / cfg.area;
            out.extend([p.x, p.y]);
        }
        for a in cfg.aps(cell) {
            for k in cfg.users(cell) {
                let lambda = self.book.lambda(a, k);
                let scale = 1.0 / lambda.sqrt();
                let h = self.book.h_hat(a, k, cell).expect("local estimates exist at frame start");
                for z in h.iter() {
                    out.push(z.re * scale);
                    out.push(z.im * scale);
                }
                out.push(self.book.delta(a, k, cell) / lambda);
            }
        }
        for q in cfg.targets(cell) {
            self.target_features(&mut out, q);
        }
        out
    }

    pub fn lcp_observations(&self) -> Vec<Vec<f64>> {
        (0..self.scenario.config.cells).map(|m| self.lcp_observation(m)).collect()
    }

    /// Frame-start information of the whole network (every cell-partition observation).
    pub fn global_state(&self) -> Vec<f64> {
        self.lcp_observations().concat()
    }

    fn report_slot(&self, out: &mut Vec<f64>, cell: usize, partition: &ServicePartition, split: &ResourceSplit) {
        let cfg = &self.scenario.config;
        let user_len = cfg.aps_per_cell * (2 * cfg.n_tx + 1);
        for k in cfg.users(cell) {
            if partition.user_federated[k] {
                out.push(1.0);
                self.channel_features(out, cell, k);
            } else {
                out.extend(std::iter::repeat_n(0.0, 1 + user_len));
            }
        }
        for q in cfg.targets(cell) {
            if partition.target_federated[q] {
                out.push(1.0);
                self.target_features(out, q);
            } else {
                out.extend(std::iter::repeat_n(0.0, 21));
            }
        }
        for a in cfg.aps(cell) {
            out.push(split.p_fed[a] / cfg.p_max);
        }
    }

    fn decode_lcp_all(&self, lcp: &[Vec<f64>]) -> Result<(Vec<LcpDecision>, ServicePartition, ResourceSplit)> {
        let cfg = &self.scenario.config;
        if lcp.len() != cfg.cells {
            return Err(Error::Interface(format!("{} cell-partition actions for {} cells", lcp.len(), cfg.cells)));
        }
        let decisions = lcp.iter().map(|raw| decode_lcp(raw, cfg)).collect::<Result<Vec<_>>>()?;
        let (partition, split) = combine_lcp(&decisions, cfg)?;
        Ok((decisions, partition, split))
    }

    /// Observation of `agent` given the actions already taken this frame.
    pub fn observation(&self, agent: AgentId, decided: Decided<'_>) -> Result<Vec<f64>> {
        let cfg = &self.scenario.config;
        if agent.index >= agent.role.agent_count(cfg) {
            return Err(Error::Interface(format!(
                "no {} agent with index {}",
                agent.role.name(),
                agent.index
            )));
        }
        let need_lcp = || {
            decided.lcp.ok_or_else(|| {
                Error::Causality(format!("{} observation requires the cell-partition actions", agent.role.name()))
            })
        };
        match agent.role {
            Role::Lcp => Ok(self.lcp_observation(agent.index)),
            Role::Lpb => {
                let lcp = need_lcp()?;
                let raw = lcp.get(agent.index).ok_or_else(|| Error::Interface("missing cell-partition action".into()))?;
                let d = decode_lcp(raw, cfg)?;
                let mut out = Vec::with_capacity(Role::Lpb.observation_len(cfg));
                out.extend(d.user_federated.iter().chain(&d.target_federated).map(|&b| b as u8 as f64));
                out.extend(d.p_local.iter().map(|p| p / cfg.p_max));
                out.push(d.b_local as f64 / cfg.subcarriers as f64);
                out.extend(self.lcp_observation(agent.index));
                Ok(out)
            }
            Role::Fg => {
                let (_, partition, split) = self.decode_lcp_all(need_lcp()?)?;
                let mut out = Vec::with_capacity(Role::Fg.observation_len(cfg));
                for m in 0..cfg.cells {
                    self.report_slot(&mut out, m, &partition, &split);
                }
                Ok(out)
            }
            Role::Fpb => {
                let (_, partition, split) = self.decode_lcp_all(need_lcp()?)?;
                let fg = decided.fg.ok_or_else(|| {
                    Error::Causality("federated power/beam observation requires the grouping action".into())
                })?;
                if fg.len() != fg_action_len(cfg) {
                    return Err(Error::Interface(format!("grouping action has length {}", fg.len())));
                }
                let grouping = decode_fg(fg, cfg.clusters, cfg.m_max)?;
                let members = &grouping.clusters[agent.index];
                let slot = report_slot_len(cfg);
                let mut out = Vec::with_capacity(Role::Fpb.observation_len(cfg));
                for m in 0..cfg.cells {
                    if members.contains(&m) {
                        out.push(1.0);
                        self.report_slot(&mut out, m, &partition, &split);
                    } else {
                        out.extend(std::iter::repeat_n(0.0, 1 + slot));
                    }
                }
                for label in grouping.labels(cfg.cells) {
                    out.extend((0..cfg.clusters).map(|r| (r == label) as u8 as f64));
                }
                Ok(out)
            }
        }
    }

    fn check_shapes(&self, action: &JointAction) -> Result<()> {
        let cfg = &self.scenario.config;
        let check = |role: Role, rows: &[Vec<f64>]| -> Result<()> {
            if rows.len() != role.agent_count(cfg) {
                return Err(Error::Interface(format!(
                    "{} {} actions, expected {}",
                    rows.len(),
                    role.name(),
                    role.agent_count(cfg)
                )));
            }
            for (i, r) in rows.iter().enumerate() {
                if r.len() != role.action_len(cfg) {
                    return Err(Error::Interface(format!(
                        "{} action {i} has length {}, expected {}",
                        role.name(),
                        r.len(),
                        role.action_len(cfg)
                    )));
                }
            }
            Ok(())
        };
        check(Role::Lcp, &action.lcp)?;
        check(Role::Lpb, &action.lpb)?;
        check(Role::Fg, std::slice::from_ref(&action.fg))?;
        check(Role::Fpb, &action.fpb)
    }

    /// Execute one frame.
    pub fn step(&mut self, action: &JointAction) -> Result<StepResult> {
        if self.done {
            return Err(Error::Logic("step called on a finished episode; call reset".into()));
        }
        self.check_shapes(action)?;
        let cfg = self.scenario.config.clone();

        let (_, partition, split) = self.decode_lcp_all(&action.lcp)?;

        let mut user_rates = vec![0.0; cfg.total_users()];
        let mut fims: Vec<Matrix4<f64>> = vec![Matrix4::zeros(); cfg.total_targets()];

        let mut local = Vec::with_capacity(cfg.cells);
        for m in 0..cfg.cells {
            let ctx = RegimeContext::local(&cfg, &partition, &split, m)?;
            let plan = decode_beam_power(&action.lpb[m], &ctx, &self.book, &cfg)?;
            let rates = context_rates(&ctx, &plan, &self.book, &self.scenario.user_noise, &cfg)?;
            for (&k, r) in ctx.users.iter().zip(rates) {
                user_rates[k] = r;
            }
            for &q in &ctx.targets {
                fims[q] = fim_total(q, &self.targets[q], &ctx, &plan, &self.scenario)?;
            }
            local.push((ctx, plan));
        }

        let grouping = decode_fg(&action.fg, cfg.clusters, cfg.m_max)?;
        let mut federated = Vec::with_capacity(cfg.clusters);
        for r in 0..cfg.clusters {
            let cells = grouping.clusters[r].clone();
            if cells.is_empty() {
                continue;
            }
            self.federated_estimation(&partition, &split, &cells)?;
            let ctx = RegimeContext::federated(&cfg, &partition, &split, &grouping, r)?;
            let plan = decode_beam_power(&action.fpb[r], &ctx, &self.book, &cfg)?;
            let rates = context_rates(&ctx, &plan, &self.book, &self.scenario.user_noise, &cfg)?;
            for (&k, r) in ctx.users.iter().zip(rates) {
                user_rates[k] = r;
            }
            for &q in &ctx.targets {
                fims[q] = fim_total(q, &self.targets[q], &ctx, &plan, &self.scenario)?;
            }
            federated.push((ctx, plan));
        }

        let mut pos_err = Vec::with_capacity(cfg.total_targets());
        let mut vel_err = Vec::with_capacity(cfg.total_targets());
        for q in 0..cfg.total_targets() {
            let j = bfim_update(&self.beliefs[q].j_prev, &fims[q], &self.g, &self.e)?;
            let (p, v) = sensing_errors(&j)?;
            let x_hat = draw_posterior(&self.targets[q].to_vector(), &j, &mut self.rng_posterior)?;
            self.beliefs[q] = SensingBelief { x_pred: predict_state(&x_hat, cfg.t_bar()), j_prev: j, x_est: x_hat };
            pos_err.push(p);
            vel_err.push(v);
        }

        let comm: f64 = user_rates.iter().map(|&r| normalize_comm(r, cfg.u_k_c_min, cfg.u_k_c_max)).sum();
        let sense = pos_err
            .iter()
            .zip(&vel_err)
            .map(|(&p, &v)| normalize_sense(p, v, &cfg))
            .sum::<Result<f64>>()?;
        let (o1, o2): (Vec<u64>, Vec<u64>) = (0..cfg.cells).map(|m| phase1_overhead(&cfg, &partition, m)).unzip();
        let o_fed: Vec<u64> = (0..cfg.clusters)
            .map(|r| federated_overhead(&cfg, &grouping, &partition, r))
            .collect();
        let ledger = frame_totals(comm, sense, o1, o2, o_fed, &cfg);

        let diagnostics = FrameDiagnostics {
            frame: self.frame,
            user_rates,
            user_federated: partition.user_federated.clone(),
            target_federated: partition.target_federated.clone(),
            target_pos_err: pos_err,
            target_vel_err: vel_err,
            clusters: grouping.clusters.clone(),
            ledger,
        };
        self.last_decision = Some(TopologyDecision { partition, split, grouping, local, federated });

        self.book.evolve(cfg.rho_ak, &mut self.rng_channel);
        for t in self.targets.iter_mut() {
            *t = advance_target(t, cfg.delta_q, cfg.t_bar(), &mut self.rng_target);
        }
        self.frame += 1;
        self.done = self.frame > cfg.frames;
        self.local_estimation();

        Ok(StepResult {
            observations: self.lcp_observations(),
            reward: diagnostics.ledger.reward,
            done: self.done,
            diagnostics,
        })
    }

    /// Posterior estimate of every target after the latest step.
    pub fn estimates(&self) -> Vec<Vector4<f64>> {
        self.beliefs.iter().map(|b| b.x_est).collect()
    }
}
