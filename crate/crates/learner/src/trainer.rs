//! Per-agent actors, role-shared critics, episode collection and the
//! clipped policy-gradient update.
//!
//! Each critic reads `[global state, the agent's own observation, one-hot
//! agent index]`, where the global state is the concatenation of every
//! cell-partition observation at frame start.

use rand::Rng;
use serde::{Deserialize, Serialize};

use entsim_core::baselines::{ccn_lcp_action, cfn_lcp_action, inert_action, random_mrt_policy, BaselineKind};
use entsim_core::environment::{AgentId, Decided, Environment, FrameDiagnostics, JointAction, Role};
use entsim_core::rng::{episode_seed, substream, SimRng, Stream};
use entsim_core::scenario::{build_scenario, ScenarioConfig};
use entsim_core::topology::beam_angle;

use crate::error::{LearnerError, Result};
use crate::gae::{compute_gae, standardize};
use crate::heads::{Component, Head, HeadGrad};
use crate::mlp::{Mlp, MlpCache};
use crate::ppo::{clipped_surrogate, linear_anneal, smooth_l1, smooth_l1_grad, Adam};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    /// Clip range at the first and last update.
    pub clip: (f64, f64),
    /// Entropy coefficient at the first and last update.
    pub entropy: (f64, f64),
    pub value_coef: f64,
    pub lr: f64,
    /// Full-batch passes per update.
    pub epochs: usize,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    /// Initial log standard deviation of every continuous component.
    pub init_log_std: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            gae_lambda: 0.96,
            clip: (0.3, 0.15),
            entropy: (1e-3, 1e-4),
            value_coef: 0.5,
            lr: 5e-5,
            epochs: 4,
            actor_hidden: vec![256, 256, 256, 256],
            critic_hidden: vec![512, 512, 512],
            init_log_std: 0.0,
        }
    }
}

impl LearnerConfig {
    /// Narrower networks for small scenarios.
    pub fn desk() -> Self {
        Self { lr: 1e-3, actor_hidden: vec![64, 64], critic_hidden: vec![128, 128], ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.gamma)
            && (0.0..=1.0).contains(&self.gae_lambda)
            && self.clip.0 > 0.0
            && self.clip.1 > 0.0
            && self.entropy.0 >= 0.0
            && self.entropy.1 >= 0.0
            && self.value_coef > 0.0
            && self.lr > 0.0
            && self.epochs > 0
            && self.init_log_std.is_finite()
            && !self.actor_hidden.contains(&0)
            && !self.critic_hidden.contains(&0);
        if ok {
            Ok(())
        } else {
            Err(LearnerError::Shape(format!("invalid learner configuration {self:?}")))
        }
    }
}

/// Which agents learn and which actions are fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    Proposed,
    Baseline(BaselineKind),
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::Baseline(b) => b.name(),
        }
    }

    pub fn learns(self, role: Role) -> bool {
        match self {
            Scheme::Proposed => true,
            Scheme::Baseline(b) => b.trained_roles().contains(&role),
        }
    }
}

/// Action components of each role in the environment's raw layout.
pub fn role_head(role: Role, cfg: &ScenarioConfig) -> Head {
    let power = Component::Bounded { lo: 0.0, hi: cfg.p_max };
    let angle = Component::Categorical((1..=cfg.delta_theta).map(|l| beam_angle(l, cfg.delta_theta)).collect());
    let beams = |aps: usize, block: usize| {
        let mut c = Vec::with_capacity(aps * 2 * block);
        for _ in 0..aps {
            c.extend(std::iter::repeat_n(power.clone(), block));
            c.extend(std::iter::repeat_n(angle.clone(), block));
        }
        c
    };
    let components = match role {
        Role::Lcp => {
            let mut c = vec![Component::Binary; cfg.users_per_cell + cfg.targets_per_cell];
            c.extend(std::iter::repeat_n(power.clone(), cfg.aps_per_cell));
            c.push(Component::Categorical((0..=cfg.subcarriers).map(|b| b as f64).collect()));
            c
        }
        Role::Lpb => beams(cfg.aps_per_cell, cfg.users_per_cell + cfg.targets_per_cell),
        Role::Fg => vec![Component::Categorical((1..=cfg.clusters).map(|r| r as f64).collect()); cfg.cells],
        Role::Fpb => beams(cfg.total_aps(), cfg.total_users() + cfg.total_targets()),
    };
    Head::new(components)
}

pub fn critic_input_len(role: Role, cfg: &ScenarioConfig) -> usize {
    cfg.cells * Role::Lcp.observation_len(cfg) + role.observation_len(cfg) + role.agent_count(cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub net: Mlp,
    pub log_std: Vec<f64>,
    pub head: Head,
}

impl Actor {
    pub fn new<R: Rng + ?Sized>(obs_len: usize, hidden: &[usize], head: Head, init_log_std: f64, rng: &mut R) -> Result<Self> {
        let mut sizes = vec![obs_len];
        sizes.extend(hidden);
        sizes.push(head.output_len());
        Ok(Self { net: Mlp::new(&sizes, 0.01, rng)?, log_std: vec![init_log_std; head.std_len()], head })
    }
}

/// Every actor and critic of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySet {
    /// Indexed by role position in [`Role::ALL`], then agent index.
    pub actors: Vec<Vec<Actor>>,
    /// One critic per role.
    pub critics: Vec<Mlp>,
}

fn role_slot(role: Role) -> usize {
    Role::ALL.iter().position(|&r| r == role).unwrap()
}

impl PolicySet {
    pub fn new(cfg: &ScenarioConfig, lc: &LearnerConfig, seed: u64) -> Result<Self> {
        let mut rng = substream(seed, Stream::Init);
        let mut actors = Vec::with_capacity(4);
        let mut critics = Vec::with_capacity(4);
        for role in Role::ALL {
            let head = role_head(role, cfg);
            debug_assert_eq!(head.action_len(), role.action_len(cfg));
            actors.push(
                (0..role.agent_count(cfg))
                    .map(|_| Actor::new(role.observation_len(cfg), &lc.actor_hidden, head.clone(), lc.init_log_std, &mut rng))
                    .collect::<Result<Vec<_>>>()?,
            );
            let mut sizes = vec![critic_input_len(role, cfg)];
            sizes.extend(&lc.critic_hidden);
            sizes.push(1);
            critics.push(Mlp::new(&sizes, 1.0, &mut rng)?);
        }
        Ok(Self { actors, critics })
    }

    pub fn actor(&self, role: Role, index: usize) -> &Actor {
        &self.actors[role_slot(role)][index]
    }

    pub fn critic(&self, role: Role) -> &Mlp {
        &self.critics[role_slot(role)]
    }
}

/// One agent's decision in one frame.
#[derive(Debug, Clone)]
struct Record {
    obs: Vec<f64>,
    critic_in: Vec<f64>,
    stored: Vec<f64>,
    logp: f64,
    value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub mean_ratio: f64,
    pub explained_variance: f64,
    /// Parameter blocks whose step was skipped for non-finite gradients.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStats {
    pub episode: usize,
    pub seed: u64,
    /// Frame means of the ledger quantities.
    pub usr: f64,
    pub total_utility: f64,
    pub comm_utility: f64,
    pub sense_utility: f64,
    pub overhead: f64,
    pub reward_mean: f64,
    pub update: UpdateStats,
    pub frames: Vec<FrameDiagnostics>,
}

struct Optimizers {
    actors: Vec<Vec<(Adam, Adam)>>,
    critics: Vec<Adam>,
}

/// Runs episodes of one scheme and trains its learning agents.
pub struct Trainer {
    pub scheme: Scheme,
    pub learner: LearnerConfig,
    pub policies: PolicySet,
    env: Environment,
    run_seed: u64,
    rng_policy: SimRng,
    rng_baseline: SimRng,
    optim: Optimizers,
    updates: usize,
    total_updates: usize,
    episodes: usize,
}

fn one_hot(i: usize, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |j| (i == j) as u8 as f64)
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

impl Trainer {
    /// `total_updates` sets the length of the coefficient schedules.
    pub fn new(cfg: ScenarioConfig, learner: LearnerConfig, scheme: Scheme, run_seed: u64, total_updates: usize) -> Result<Self> {
        learner.validate()?;
        let scenario = build_scenario(cfg.clone(), run_seed)?;
        let env = Environment::new(scenario, episode_seed(run_seed, 0))?;
        let policies = PolicySet::new(&cfg, &learner, run_seed)?;
        let optim = Optimizers {
            actors: policies
                .actors
                .iter()
                .map(|v| v.iter().map(|a| (Adam::new(a.net.params.len(), learner.lr), Adam::new(a.log_std.len(), learner.lr))).collect())
                .collect(),
            critics: policies.critics.iter().map(|c| Adam::new(c.params.len(), learner.lr)).collect(),
        };
        Ok(Self {
            scheme,
            policies,
            env,
            run_seed,
            rng_policy: substream(run_seed, Stream::Policy),
            rng_baseline: substream(run_seed, Stream::Baseline),
            optim,
            updates: 0,
            total_updates,
            episodes: 0,
            learner,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        self.env.config()
    }

    pub fn episodes_run(&self) -> usize {
        self.episodes
    }

    pub fn is_learning(&self) -> bool {
        Role::ALL.iter().any(|&r| self.scheme.learns(r))
    }

    /// Current clip range and entropy coefficient.
    pub fn coefficients(&self) -> (f64, f64) {
        let (c, e) = (self.learner.clip, self.learner.entropy);
        (
            linear_anneal(c.0, c.1, self.updates, self.total_updates),
            linear_anneal(e.0, e.1, self.updates, self.total_updates),
        )
    }

    fn forced(&self, role: Role) -> Vec<f64> {
        let cfg = self.env.config();
        match (self.scheme, role) {
            (Scheme::Baseline(BaselineKind::CcnOnly), Role::Lcp) => ccn_lcp_action(cfg),
            (Scheme::Baseline(BaselineKind::CfnOnly), Role::Lcp) => cfn_lcp_action(cfg),
            _ => inert_action(role, cfg),
        }
    }

    /// Decide one role's actions; learned roles also return their records.
    fn decide(
        &mut self,
        role: Role,
        decided: Decided<'_>,
        global: &[f64],
        greedy: bool,
        records: &mut [Vec<Vec<Record>>],
    ) -> Result<Vec<Vec<f64>>> {
        let cfg = self.env.config().clone();
        let n = role.agent_count(&cfg);
        if !self.scheme.learns(role) {
            return Ok(vec![self.forced(role); n]);
        }
        let slot = role_slot(role);
        let mut raws = Vec::with_capacity(n);
        for i in 0..n {
            let obs = self.env.observation(AgentId { role, index: i }, decided)?;
            let actor = &self.policies.actors[slot][i];
            let out = actor.net.forward(&obs)?;
            let stored = if greedy {
                actor.head.mode(&out, &actor.log_std)?
            } else {
                actor.head.sample(&out, &actor.log_std, &mut self.rng_policy)?
            };
            raws.push(actor.head.to_raw(&stored));
            if !greedy {
                let (logp, _) = actor.head.evaluate(&out, &actor.log_std, &stored)?;
                let critic_in: Vec<f64> = global.iter().chain(&obs).copied().chain(one_hot(i, n)).collect();
                let value = self.policies.critics[slot].forward(&critic_in)?[0];
                records[slot][i].push(Record { obs, critic_in, stored, logp, value });
            }
        }
        Ok(raws)
    }

    fn joint_action(&mut self, greedy: bool, records: &mut [Vec<Vec<Record>>]) -> Result<JointAction> {
        if self.scheme == Scheme::Baseline(BaselineKind::RandomMrt) {
            return Ok(random_mrt_policy(&self.env, &mut self.rng_baseline)?);
        }
        let global = self.env.global_state();
        let lcp = self.decide(Role::Lcp, Decided::default(), &global, greedy, records)?;
        let lpb = self.decide(Role::Lpb, Decided { lcp: Some(&lcp), fg: None }, &global, greedy, records)?;
        let fg = self.decide(Role::Fg, Decided { lcp: Some(&lcp), fg: None }, &global, greedy, records)?.remove(0);
        let fpb = self.decide(Role::Fpb, Decided { lcp: Some(&lcp), fg: Some(&fg) }, &global, greedy, records)?;
        Ok(JointAction { lcp, lpb, fg, fpb })
    }

    fn rollout(&mut self, seed: u64, greedy: bool) -> Result<(Vec<f64>, Vec<FrameDiagnostics>, Vec<Vec<Vec<Record>>>)> {
        self.env.reset(seed)?;
        let cfg = self.env.config().clone();
        let mut records: Vec<Vec<Vec<Record>>> =
            Role::ALL.iter().map(|r| vec![Vec::with_capacity(cfg.frames); r.agent_count(&cfg)]).collect();
        let mut rewards = Vec::with_capacity(cfg.frames);
        let mut frames = Vec::with_capacity(cfg.frames);
        while !self.env.is_done() {
            let action = self.joint_action(greedy, &mut records)?;
            let step = self.env.step(&action)?;
            rewards.push(step.reward);
            frames.push(step.diagnostics);
        }
        Ok((rewards, frames, records))
    }

    fn summarize(episode: usize, seed: u64, rewards: &[f64], frames: Vec<FrameDiagnostics>, update: UpdateStats) -> EpisodeStats {
        let n = frames.len().max(1) as f64;
        let mean = |f: &dyn Fn(&FrameDiagnostics) -> f64| frames.iter().map(f).sum::<f64>() / n;
        EpisodeStats {
            episode,
            seed,
            usr: mean(&|d| d.ledger.usr),
            total_utility: mean(&|d| d.ledger.utility),
            comm_utility: mean(&|d| d.ledger.comm_utility),
            sense_utility: mean(&|d| d.ledger.sense_utility),
            overhead: mean(&|d| d.ledger.overhead),
            reward_mean: rewards.iter().sum::<f64>() / n,
            update,
            frames,
        }
    }

    /// Collect one stochastic episode and update the learning agents.
    pub fn train_episode(&mut self) -> Result<EpisodeStats> {
        let episode = self.episodes;
        let seed = episode_seed(self.run_seed, episode as u64);
        let greedy = !self.is_learning();
        let (rewards, frames, records) = self.rollout(seed, greedy)?;
        let update = if self.is_learning() { self.update(&rewards, &records)? } else { UpdateStats::default() };
        self.episodes += 1;
        Ok(Self::summarize(episode, seed, &rewards, frames, update))
    }

    /// Run one episode with mode actions and no learning.
    pub fn evaluate_episode(&mut self, episode: usize) -> Result<EpisodeStats> {
        let seed = episode_seed(self.run_seed ^ 0x5e_ed0f_e7a1, episode as u64);
        let (rewards, frames, _) = self.rollout(seed, true)?;
        Ok(Self::summarize(episode, seed, &rewards, frames, UpdateStats::default()))
    }

    fn update(&mut self, rewards: &[f64], records: &[Vec<Vec<Record>>]) -> Result<UpdateStats> {
        let (eps, eta) = self.coefficients();
        let lc = self.learner.clone();
        let mut stats = UpdateStats::default();
        let mut counted = 0usize;
        let mut returns_all = Vec::new();
        let mut values_all = Vec::new();

        let mut batches = Vec::new();
        for role in Role::ALL {
            if !self.scheme.learns(role) {
                continue;
            }
            let slot = role_slot(role);
            let gaes: Vec<_> = records[slot]
                .iter()
                .map(|recs| compute_gae(rewards, &recs.iter().map(|r| r.value).collect::<Vec<_>>(), lc.gamma, lc.gae_lambda))
                .collect();
            let adv = standardize(&gaes.iter().map(|g| g.advantages.clone()).collect::<Vec<_>>());
            let returns: Vec<Vec<f64>> = gaes.into_iter().map(|g| g.returns).collect();
            for (recs, ret) in records[slot].iter().zip(&returns) {
                values_all.extend(recs.iter().map(|r| r.value));
                returns_all.extend(ret);
            }
            batches.push((role, adv, returns));
        }

        for _ in 0..lc.epochs {
            for (role, adv, returns) in &batches {
                let slot = role_slot(*role);
                for (i, recs) in records[slot].iter().enumerate() {
                    let (loss, ent, ratio, skipped) = self.actor_step(slot, i, recs, &adv[i], eps, eta)?;
                    stats.actor_loss += loss;
                    stats.entropy += ent;
                    stats.mean_ratio += ratio;
                    stats.skipped += skipped as usize;
                    counted += 1;
                }
                let (closs, skipped) = self.critic_step(slot, &records[slot], returns)?;
                stats.critic_loss += closs;
                stats.skipped += skipped as usize;
            }
        }
        let passes = (lc.epochs * batches.len()).max(1) as f64;
        let counted = counted.max(1) as f64;
        stats.actor_loss /= counted;
        stats.entropy /= counted;
        stats.mean_ratio /= counted;
        stats.critic_loss /= passes;
        stats.explained_variance = explained_variance(&values_all, &returns_all);
        self.updates += 1;
        Ok(stats)
    }

    /// One full-batch step of actor `(slot, i)`; returns `(loss, mean entropy, mean ratio, skipped)`.
    fn actor_step(&mut self, slot: usize, i: usize, recs: &[Record], adv: &[f64], eps: f64, eta: f64) -> Result<(f64, f64, f64, bool)> {
        let batch: Vec<ActorSample<'_>> = recs
            .iter()
            .zip(adv)
            .map(|(r, &a)| ActorSample { obs: &r.obs, stored: &r.stored, logp_old: r.logp, advantage: a })
            .collect();
        let out = actor_loss(&self.policies.actors[slot][i], &batch, eps, eta)?;
        let skipped = !(all_finite(&out.grad_net) && all_finite(&out.grad_log_std));
        if skipped {
            log::warn!("non-finite actor gradient for {} agent {i}; update skipped", Role::ALL[slot].name());
        } else {
            let actor = &mut self.policies.actors[slot][i];
            let (opt_net, opt_std) = &mut self.optim.actors[slot][i];
            opt_net.step(&mut actor.net.params, &out.grad_net);
            opt_std.step(&mut actor.log_std, &out.grad_log_std);
        }
        Ok((out.loss, out.entropy, out.ratio, skipped))
    }

    fn critic_step(&mut self, slot: usize, records: &[Vec<Record>], returns: &[Vec<f64>]) -> Result<(f64, bool)> {
        let inputs: Vec<&[f64]> = records.iter().flatten().map(|r| r.critic_in.as_slice()).collect();
        let targets: Vec<f64> = returns.iter().flatten().copied().collect();
        let (loss, grad) = critic_loss(&self.policies.critics[slot], &inputs, &targets, self.learner.value_coef)?;
        let skipped = !all_finite(&grad);
        if skipped {
            log::warn!("non-finite critic gradient for {}; update skipped", Role::ALL[slot].name());
        } else {
            self.optim.critics[slot].step(&mut self.policies.critics[slot].params, &grad);
        }
        Ok((loss, skipped))
    }
}

/// One decision in an actor's training batch.
#[derive(Debug, Clone, Copy)]
pub struct ActorSample<'a> {
    pub obs: &'a [f64],
    pub stored: &'a [f64],
    pub logp_old: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorLoss {
    pub loss: f64,
    pub grad_net: Vec<f64>,
    pub grad_log_std: Vec<f64>,
    /// Batch means.
    pub entropy: f64,
    pub ratio: f64,
}

/// `-mean(min(r A, clip(r) A) + eta H)` over the batch, with its gradient.
pub fn actor_loss(actor: &Actor, batch: &[ActorSample<'_>], eps: f64, eta: f64) -> Result<ActorLoss> {
    let n = batch.len().max(1) as f64;
    let mut grad_net = vec![0.0; actor.net.params.len()];
    let mut grad_log_std = vec![0.0; actor.log_std.len()];
    let (mut loss, mut ent_sum, mut ratio_sum) = (0.0, 0.0, 0.0);
    for s in batch {
        let (out, cache): (Vec<f64>, MlpCache) = actor.net.forward_cached(s.obs)?;
        let (logp, _) = actor.head.evaluate(&out, &actor.log_std, s.stored)?;
        let (surr, ratio, d_surr) = clipped_surrogate(logp, s.logp_old, s.advantage, eps);
        let mut d_out = vec![0.0; out.len()];
        let (_, ent) = actor.head.evaluate_grad(
            &out,
            &actor.log_std,
            s.stored,
            -d_surr / n,
            -eta / n,
            HeadGrad { d_out: &mut d_out, d_log_std: &mut grad_log_std },
        )?;
        loss -= (surr + eta * ent) / n;
        ent_sum += ent;
        ratio_sum += ratio;
        actor.net.backward(&cache, &d_out, &mut grad_net);
    }
    Ok(ActorLoss { loss, grad_net, grad_log_std, entropy: ent_sum / n, ratio: ratio_sum / n })
}

/// Mean smooth-L1 value loss and the gradient of `c_v` times it.
pub fn critic_loss(critic: &Mlp, inputs: &[&[f64]], targets: &[f64], c_v: f64) -> Result<(f64, Vec<f64>)> {
    if inputs.len() != targets.len() {
        return Err(LearnerError::Shape(format!("{} critic inputs for {} targets", inputs.len(), targets.len())));
    }
    let n = inputs.len().max(1) as f64;
    let mut grad = vec![0.0; critic.params.len()];
    let mut loss = 0.0;
    for (x, &target) in inputs.iter().zip(targets) {
        let (out, cache) = critic.forward_cached(x)?;
        let resid = out[0] - target;
        loss += smooth_l1(resid) / n;
        critic.backward(&cache, &[c_v * smooth_l1_grad(resid) / n], &mut grad);
    }
    Ok((loss, grad))
}

/// `1 - Var(returns - values) / Var(returns)`; zero when returns are constant.
pub fn explained_variance(values: &[f64], returns: &[f64]) -> f64 {
    let n = returns.len();
    if n == 0 {
        return 0.0;
    }
    let var = |x: &dyn Fn(usize) -> f64| {
        let m = (0..n).map(x).sum::<f64>() / n as f64;
        (0..n).map(|i| (x(i) - m).powi(2)).sum::<f64>() / n as f64
    };
    let vr = var(&|i| returns[i]);
    if vr == 0.0 {
        return 0.0;
    }
    1.0 - var(&|i| returns[i] - values[i]) / vr
}
