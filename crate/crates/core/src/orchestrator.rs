//! The closed perceive / estimate / decide / plan / act / learn loop.

use std::collections::VecDeque;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::agent::{act, DqnAgent, DqnSettings, EpsilonSchedule, QNet, TransitionRecord};
use crate::autoencoder::{
    advance_latent, forward_step, sys_gradient_with, sys_update, NetParams, NetShape, RnnState, SysBatch, TrajectoryBuffer,
    TrajectoryRecord,
};
use crate::config::{PolicyKind, RunConfig, ScheduleConfig, WildfirePreset};
use crate::environment::{Environment, ObservationMap, Position, StateMap};
use crate::error::{Error, Result};
use crate::filter::{bayes_correct, BeliefGrid};
use crate::nn::Adam;
use crate::par::Execution;
use crate::planner::{plan_with, random_walk, Action, PlanSpec, RobotPath};
use crate::rng::{self, Stream, StreamRng};

/// Polynomial step sizes `eps_n = eta / (1 + n)^delta` for both learners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub eta_sys: f64,
    pub eta_dqn: f64,
    pub delta_sys: f64,
    pub delta_dqn: f64,
}

impl ScheduleParams {
    pub fn new(eta_sys: f64, eta_dqn: f64, delta_sys: f64, delta_dqn: f64) -> Result<Self> {
        for (name, v) in [("eta_sys", eta_sys), ("eta_dqn", eta_dqn)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be a finite non-negative rate")));
            }
        }
        if !(delta_dqn > 0.5 && delta_sys > delta_dqn && delta_sys <= 1.0) {
            return Err(Error::config(format!(
                "need 1 >= delta_sys > delta_dqn > 0.5, got delta_sys = {delta_sys}, delta_dqn = {delta_dqn}"
            )));
        }
        Ok(ScheduleParams {
            eta_sys,
            eta_dqn,
            delta_sys,
            delta_dqn,
        })
    }

    pub fn from_config(c: &ScheduleConfig) -> Result<Self> {
        Self::new(c.eta_sys, c.eta_dqn, c.delta_sys, c.delta_dqn)
    }
}

/// `(eps_sys_n, eps_dqn_n)`.
pub fn ttur_rates(s: &ScheduleParams, n: u64) -> (f64, f64) {
    let base = 1.0 + n as f64;
    (s.eta_sys / base.powf(s.delta_sys), s.eta_dqn / base.powf(s.delta_dqn))
}

/// One metrics row per iteration. Losses are `NaN` while a learner is in
/// warmup (or absent); `action` is `None` for the random walk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub n: u64,
    pub reward: u32,
    pub sys_loss: f64,
    pub dqn_loss: f64,
    pub action: Option<u8>,
    pub eps_sys: f64,
    pub eps_dqn: f64,
    pub wall_ms: u64,
}

impl MetricsRow {
    /// Field-wise equality that treats two `NaN`s as equal.
    pub fn same_as(&self, other: &MetricsRow) -> bool {
        let f = |a: f64, b: f64| a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan());
        self.n == other.n
            && self.reward == other.reward
            && f(self.sys_loss, other.sys_loss)
            && f(self.dqn_loss, other.dqn_loss)
            && self.action == other.action
            && f(self.eps_sys, other.eps_sys)
            && f(self.eps_dqn, other.eps_dqn)
            && self.wall_ms == other.wall_ms
    }
}

pub type RunMetrics = Vec<MetricsRow>;

/// Stages of one iteration, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    RnnUpdate,
    Decode,
    BayesCorrect,
    Policy,
    Plan,
    Observe,
    Reward,
    EnvStep,
    RecordTransition,
    RecordTrajectory,
    DqnUpdate,
    SysUpdate,
    AdvanceSchedule,
}

impl Stage {
    pub const ORDER: [Stage; 13] = [
        Stage::RnnUpdate,
        Stage::Decode,
        Stage::BayesCorrect,
        Stage::Policy,
        Stage::Plan,
        Stage::Observe,
        Stage::Reward,
        Stage::EnvStep,
        Stage::RecordTransition,
        Stage::RecordTrajectory,
        Stage::DqnUpdate,
        Stage::SysUpdate,
        Stage::AdvanceSchedule,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Stage::RnnUpdate => "rnn_update",
            Stage::Decode => "decode",
            Stage::BayesCorrect => "bayes_correct",
            Stage::Policy => "policy",
            Stage::Plan => "plan",
            Stage::Observe => "observe",
            Stage::Reward => "reward",
            Stage::EnvStep => "env_step",
            Stage::RecordTransition => "record_transition",
            Stage::RecordTrajectory => "record_trajectory",
            Stage::DqnUpdate => "dqn_update",
            Stage::SysUpdate => "sys_update",
            Stage::AdvanceSchedule => "advance_schedule",
        }
    }
}

/// Every random stream the loop draws from besides the environment's own.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoopRngs {
    pub planner: StreamRng,
    pub exploration: StreamRng,
    pub trajectory_replay: StreamRng,
    pub transition_replay: StreamRng,
    pub training_h0: StreamRng,
    pub random_walk: StreamRng,
}

impl LoopRngs {
    pub fn new(seed: u64) -> Self {
        LoopRngs {
            planner: rng::stream(seed, Stream::Planner),
            exploration: rng::stream(seed, Stream::Exploration),
            trajectory_replay: rng::stream(seed, Stream::TrajectoryReplay),
            transition_replay: rng::stream(seed, Stream::TransitionReplay),
            training_h0: rng::stream(seed, Stream::TrainingH0),
            random_walk: rng::stream(seed, Stream::RandomWalk),
        }
    }
}

/// Everything mutable apart from the two networks' weights, in a form that
/// serialises exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoopState {
    pub n: u64,
    pub env: Environment,
    pub rngs: LoopRngs,
    pub h: RnnState,
    pub y_last: ObservationMap,
    pub position: Position,
    /// Most recent observations (oldest first), `K + 1` long.
    pub window: VecDeque<(ObservationMap, u8)>,
    pub trajectories: TrajectoryBuffer,
    pub sys_optimizer: Adam,
    pub transitions: crate::replay::RingBuffer<TransitionRecord>,
    pub dqn_optimizer: Adam,
    pub dqn_updates: u64,
}

/// The orchestrated system for one policy and one seed.
#[derive(Debug, Clone)]
pub struct Workbench {
    config: RunConfig,
    policy: PolicyKind,
    seed: u64,
    schedule: ScheduleParams,
    epsilon: EpsilonSchedule,
    pub exec: Execution,
    net: NetParams,
    agent: DqnAgent,
    state: LoopState,
    belief: Option<BeliefGrid>,
    last_path: Option<RobotPath>,
    trace: Option<Vec<(u64, Stage)>>,
    /// Forces both step sizes to zero while keeping the logged schedule.
    frozen: bool,
}

fn net_shape(c: &RunConfig) -> NetShape {
    NetShape {
        height: c.grid.height,
        width: c.grid.width,
        states: c.grid.states,
        observations: c.grid.observations,
        latent: c.autoencoder.latent,
        conv1: c.autoencoder.conv1_channels,
        conv2: c.autoencoder.conv2_channels,
    }
}

impl Workbench {
    pub fn new(config: &RunConfig, policy: PolicyKind, seed: u64) -> Result<Self> {
        config.validate()?;
        let (h, w) = (config.grid.height, config.grid.width);
        let params = WildfirePreset::default().build(h, w)?;
        let mut env = Environment::new(params, StateMap::uniform(h, w, WildfirePreset::NORMAL), seed);
        for _ in 0..config.environment.burn_in {
            env.step()?;
        }
        let mut init_rng = rng::stream(seed, Stream::NetInit);
        let net = NetParams::init(net_shape(config), &mut init_rng)?;
        let a = &config.agent;
        let qnet = QNet::new(config.autoencoder.latent, a.hidden, a.actions, &mut init_rng)?;
        let settings = DqnSettings {
            gamma: a.gamma,
            batch: a.batch,
            sync_interval: a.sync_interval,
        };
        let agent = DqnAgent::new(qnet, a.capacity, settings)?;
        let k = config.autoencoder.trajectory_len;
        let blank = ObservationMap::unobserved(h, w);
        let state = LoopState {
            n: 0,
            rngs: LoopRngs::new(seed),
            h: RnnState::sample(config.autoencoder.latent, &mut rng::stream(seed, Stream::DeploymentH0)),
            y_last: blank.clone(),
            position: Position::new(h / 2, w / 2),
            window: (0..=k).map(|_| (blank.clone(), 0)).collect(),
            trajectories: TrajectoryBuffer::new(config.autoencoder.capacity)?,
            sys_optimizer: Adam::new(net.len()),
            transitions: agent.buffer.clone(),
            dqn_optimizer: agent.optimizer.clone(),
            dqn_updates: 0,
            env,
        };
        let decay = (config.run.iterations as f64 * a.eps_decay_fraction).round() as u64;
        Ok(Workbench {
            schedule: ScheduleParams::from_config(&config.schedule)?,
            epsilon: EpsilonSchedule {
                start: a.eps_start,
                end: a.eps_end,
                decay_iters: decay,
            },
            config: config.clone(),
            policy,
            seed,
            exec: Execution::default(),
            net,
            agent,
            state,
            belief: None,
            last_path: None,
            trace: None,
            frozen: false,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn policy(&self) -> PolicyKind {
        self.policy
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn iteration(&self) -> u64 {
        self.state.n
    }

    pub fn net(&self) -> &NetParams {
        &self.net
    }

    pub fn qnet(&self) -> &QNet {
        &self.agent.qnet
    }

    pub fn environment(&self) -> &Environment {
        &self.state.env
    }

    pub fn last_observation(&self) -> &ObservationMap {
        &self.state.y_last
    }

    /// State estimate used by the most recent plan.
    pub fn belief(&self) -> Option<&BeliefGrid> {
        self.belief.as_ref()
    }

    pub fn last_path(&self) -> Option<&RobotPath> {
        self.last_path.as_ref()
    }

    pub fn trajectory_count(&self) -> usize {
        self.state.trajectories.len()
    }

    pub fn transition_count(&self) -> usize {
        self.agent.buffer.len()
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn trace(&self) -> &[(u64, Stage)] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn freeze_learners(&mut self) {
        self.frozen = true;
    }

    fn mark(&mut self, stage: Stage) {
        let n = self.state.n;
        if let Some(t) = self.trace.as_mut() {
            t.push((n, stage));
        }
    }

    /// Runs one iteration of the loop and returns its metrics row.
    pub fn run_iteration(&mut self) -> Result<MetricsRow> {
        let started = Instant::now();
        let n = self.state.n;
        let obs = self.state.env.params().obs_matrix.clone();
        let (h_cfg, w_cfg) = (self.config.grid.height, self.config.grid.width);
        let horizon = self.config.planner.horizon;
        let wrap = |stage: Stage| move |e: Error| e.at_stage(stage.tag(), n);

        // perceive
        self.mark(Stage::RnnUpdate);
        let (h_next, u_hat, _) =
            forward_step(&self.state.h, &self.state.y_last, &self.net, &obs).map_err(wrap(Stage::RnnUpdate))?;
        self.mark(Stage::Decode);
        self.mark(Stage::BayesCorrect);
        let p_hat = bayes_correct(&u_hat, &self.state.y_last, &obs).map_err(wrap(Stage::BayesCorrect))?;

        // decide
        self.mark(Stage::Policy);
        let action = match self.policy {
            PolicyKind::Learned => {
                let eps = self.epsilon.at(n);
                Some(act(&h_next.h, &self.agent.qnet, eps, &mut self.state.rngs.exploration))
            }
            PolicyKind::Exploitation => Some(self.config.environment.target_state),
            PolicyKind::Exploratory => Some(self.config.grid.states as u8),
            PolicyKind::RandomWalk => None,
        };

        // plan
        self.mark(Stage::Plan);
        let path = match action {
            Some(a) => {
                let spec = PlanSpec {
                    action: Action(a),
                    horizon,
                    samples: self.config.planner.samples,
                };
                plan_with(self.exec, self.state.position, &p_hat, &spec, &mut self.state.rngs.planner)
                    .map_err(wrap(Stage::Plan))?
                    .path
            }
            None => random_walk(self.state.position, horizon, h_cfg, w_cfg, &mut self.state.rngs.random_walk),
        };

        // act
        self.mark(Stage::Observe);
        let y = self.state.env.observe(path.positions()).map_err(wrap(Stage::Observe))?;
        self.mark(Stage::Reward);
        let reward = self.state.env.reward(&path, self.config.environment.target_state);
        self.mark(Stage::EnvStep);
        self.state.env.step().map_err(wrap(Stage::EnvStep))?;

        // record
        self.mark(Stage::RecordTransition);
        if let (PolicyKind::Learned, Some(a)) = (self.policy, action) {
            let successor = advance_latent(&h_next.h, &y, &self.net);
            self.agent.buffer.push(TransitionRecord {
                h: h_next.h.clone(),
                action: a,
                reward: reward as f64 / (horizon + 1) as f64,
                next: successor,
            });
        }
        self.mark(Stage::RecordTrajectory);
        self.state.window.pop_front();
        self.state.window.push_back((y.clone(), action.unwrap_or(0)));
        let (frames, actions): (Vec<_>, Vec<_>) = self.state.window.iter().cloned().unzip();
        self.state.trajectories.push(TrajectoryRecord::new(frames, actions)?);

        // learn
        let (eps_sys, eps_dqn) = ttur_rates(&self.schedule, n);
        let (lr_sys, lr_dqn) = if self.frozen { (0.0, 0.0) } else { (eps_sys, eps_dqn) };
        self.mark(Stage::DqnUpdate);
        let dqn_loss = if self.policy == PolicyKind::Learned {
            self.agent
                .update(lr_dqn, &mut self.state.rngs.transition_replay)
                .map_err(wrap(Stage::DqnUpdate))?
                .unwrap_or(f64::NAN)
        } else {
            f64::NAN
        };
        self.mark(Stage::SysUpdate);
        let sys_loss = if self.state.trajectories.len() >= self.config.autoencoder.batch {
            let batch = SysBatch::sample(
                &self.state.trajectories,
                self.config.autoencoder.batch,
                self.net.latent(),
                &mut self.state.rngs.trajectory_replay,
                &mut self.state.rngs.training_h0,
            )?;
            let (loss, grad) = sys_gradient_with(self.exec, &batch, &self.net, &obs)
                .map_err(wrap(Stage::SysUpdate))?;
            sys_update(&mut self.net, &mut self.state.sys_optimizer, &grad, lr_sys).map_err(wrap(Stage::SysUpdate))?;
            loss
        } else {
            f64::NAN
        };

        self.mark(Stage::AdvanceSchedule);
        self.state.h = h_next;
        self.state.y_last = y;
        self.state.position = path.end();
        self.state.n += 1;
        self.belief = Some(p_hat);
        self.last_path = Some(path);

        let wall_ms = if self.config.run.wall_clock {
            started.elapsed().as_millis() as u64
        } else {
            0
        };
        Ok(MetricsRow {
            n,
            reward,
            sys_loss,
            dqn_loss,
            action,
            eps_sys,
            eps_dqn,
            wall_ms,
        })
    }

    /// Runs until `iterations` rows have been produced in total.
    pub fn run_to(&mut self, iterations: u64, mut on_row: impl FnMut(&Workbench, &MetricsRow) -> Result<()>) -> Result<()> {
        while self.state.n < iterations {
            let row = self.run_iteration()?;
            on_row(self, &row)?;
        }
        Ok(())
    }

    /// Mutable loop state for checkpointing; DQN pieces are copied in.
    pub fn snapshot(&self) -> LoopState {
        let mut s = self.state.clone();
        s.transitions = self.agent.buffer.clone();
        s.dqn_optimizer = self.agent.optimizer.clone();
        s.dqn_updates = self.agent.updates;
        s
    }

    /// Rebuilds a workbench from a snapshot and the saved weights.
    pub fn restore(
        config: &RunConfig,
        policy: PolicyKind,
        seed: u64,
        state: LoopState,
        sys_values: Vec<f64>,
        q_online: Vec<f64>,
        q_target: Vec<f64>,
    ) -> Result<Self> {
        let mut wb = Workbench::new(config, policy, seed)?;
        if sys_values.len() != wb.net.len() || q_online.len() != wb.agent.qnet.len() || q_target.len() != q_online.len() {
            return Err(Error::Checkpoint("parameter counts do not match the configuration".into()));
        }
        wb.net.values = sys_values;
        wb.agent.qnet.online = q_online;
        wb.agent.qnet.target = q_target;
        wb.agent.buffer = state.transitions.clone();
        wb.agent.optimizer = state.dqn_optimizer.clone();
        wb.agent.updates = state.dqn_updates;
        wb.state = state;
        Ok(wb)
    }
}

/// Runs a fixed (non-learned) policy for the configured number of iterations.
pub fn run_baseline(kind: PolicyKind, config: &RunConfig, seed: u64) -> Result<RunMetrics> {
    if kind == PolicyKind::Learned {
        return Err(Error::config("run_baseline takes a fixed policy"));
    }
    let mut wb = Workbench::new(config, kind, seed)?;
    let mut rows = Vec::with_capacity(config.run.iterations as usize);
    wb.run_to(config.run.iterations, |_, r| {
        rows.push(r.clone());
        Ok(())
    })?;
    Ok(rows)
}

/// Runs any policy for the configured number of iterations.
pub fn run_policy(kind: PolicyKind, config: &RunConfig, seed: u64) -> Result<RunMetrics> {
    let mut wb = Workbench::new(config, kind, seed)?;
    let mut rows = Vec::with_capacity(config.run.iterations as usize);
    wb.run_to(config.run.iterations, |_, r| {
        rows.push(r.clone());
        Ok(())
    })?;
    Ok(rows)
}

/// Mean reward over the last `fraction` of rows (at least one row).
pub fn tail_mean_reward(rows: &[MetricsRow], fraction: f64) -> f64 {
    if rows.is_empty() {
        return f64::NAN;
    }
    let take = ((rows.len() as f64 * fraction).ceil() as usize).clamp(1, rows.len());
    let tail = &rows[rows.len() - take..];
    tail.iter().map(|r| r.reward as f64).sum::<f64>() / take as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(iterations: u64) -> RunConfig {
        let mut c = RunConfig::desk_scale();
        c.grid.height = 8;
        c.grid.width = 8;
        c.planner.horizon = 6;
        c.planner.samples = 32;
        c.autoencoder.latent = 8;
        c.autoencoder.conv1_channels = 2;
        c.autoencoder.conv2_channels = 4;
        c.autoencoder.trajectory_len = 3;
        c.autoencoder.capacity = 16;
        c.agent.hidden = 16;
        c.agent.batch = 4;
        c.agent.capacity = 20;
        c.agent.sync_interval = 7;
        c.environment.burn_in = 20;
        c.run.iterations = iterations;
        c
    }

    #[test]
    fn ttur_closed_form() {
        let s = ScheduleParams::new(1.0, 1.0, 0.75, 0.55).unwrap();
        let (a, b) = ttur_rates(&s, 0);
        assert_eq!(a / b, 1.0);
        let (a, b) = ttur_rates(&s, 1_000_000);
        assert!((a / b - 0.063).abs() < 5e-4);
        for n in [1u64, 10, 999] {
            let (a, _) = ttur_rates(&s, n);
            assert!((a - (1.0 + n as f64).powf(-0.75)).abs() < 1e-15);
        }
        let mut prev = f64::INFINITY;
        for n in (0..100_000).step_by(997) {
            let (a, b) = ttur_rates(&s, n);
            assert!(a / b < prev);
            prev = a / b;
        }
        assert!(ScheduleParams::new(1.0, 1.0, 0.55, 0.75).is_err());
        assert!(ScheduleParams::new(1.0, 1.0, 0.7, 0.5).is_err());
        assert!(ScheduleParams::new(-1.0, 1.0, 0.8, 0.6).is_err());
    }

    #[test]
    fn trace_follows_loop_order() {
        let mut wb = Workbench::new(&small_config(3), PolicyKind::Learned, 4).unwrap();
        wb.enable_trace();
        for _ in 0..3 {
            wb.run_iteration().unwrap();
        }
        let expected: Vec<(u64, Stage)> = (0..3).flat_map(|n| Stage::ORDER.iter().map(move |&s| (n, s))).collect();
        assert_eq!(wb.trace(), expected.as_slice());
    }

    #[test]
    fn buffers_grow_to_capacity() {
        let c = small_config(30);
        let mut wb = Workbench::new(&c, PolicyKind::Learned, 5).unwrap();
        for n in 1..=30usize {
            wb.run_iteration().unwrap();
            assert_eq!(wb.trajectory_count(), n.min(c.autoencoder.capacity));
            assert_eq!(wb.transition_count(), n.min(c.agent.capacity));
        }
    }

    #[test]
    fn frozen_learners_keep_parameters() {
        let mut c = small_config(100);
        c.grid.height = 16;
        c.grid.width = 16;
        c.environment.burn_in = 100;
        let mut wb = Workbench::new(&c, PolicyKind::Learned, 6).unwrap();
        wb.freeze_learners();
        let net = wb.net().values.clone();
        let q = wb.qnet().clone();
        let mut total = 0;
        for _ in 0..100 {
            let row = wb.run_iteration().unwrap();
            total += row.reward;
            assert!(row.eps_sys > 0.0);
        }
        assert_eq!(wb.net().values, net);
        assert_eq!(wb.qnet().online, q.online);
        assert_eq!(wb.qnet().target, q.target);
        assert!(total > 0, "fire should be hit at least once");
    }

    #[test]
    fn fixed_seed_gives_identical_metrics() {
        let c = small_config(40);
        let a = run_policy(PolicyKind::Learned, &c, 7).unwrap();
        let b = run_policy(PolicyKind::Learned, &c, 7).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.same_as(y)));
        let d = run_policy(PolicyKind::Learned, &c, 8).unwrap();
        assert!(!a.iter().zip(&d).all(|(x, y)| x.same_as(y)));
    }

    #[test]
    fn warmup_reports_nan_losses() {
        let c = small_config(6);
        let rows = run_policy(PolicyKind::Learned, &c, 9).unwrap();
        for r in &rows {
            assert_eq!(r.sys_loss.is_nan(), (r.n as usize + 1) < c.autoencoder.batch);
            assert_eq!(r.dqn_loss.is_nan(), (r.n as usize + 1) < c.agent.batch);
        }
    }

    #[test]
    fn fixed_policies_emit_constant_actions() {
        let c = small_config(15);
        assert!(run_baseline(PolicyKind::Exploitation, &c, 1).unwrap().iter().all(|r| r.action == Some(2)));
        assert!(run_baseline(PolicyKind::Exploratory, &c, 1).unwrap().iter().all(|r| r.action == Some(3)));
        assert!(run_baseline(PolicyKind::RandomWalk, &c, 1).unwrap().iter().all(|r| r.action.is_none()));
        assert!(run_baseline(PolicyKind::Learned, &c, 1).is_err());
    }

    #[test]
    fn random_walk_velocities_are_uniform() {
        let c = small_config(200);
        let mut wb = Workbench::new(&c, PolicyKind::RandomWalk, 2).unwrap();
        let mut counts = [0usize; 4];
        for _ in 0..200 {
            wb.run_iteration().unwrap();
            for v in wb.last_path().unwrap().velocities() {
                counts[v.index()] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        let p = 0.25;
        let sd = (total as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - total as f64 * p).abs() < 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn hidden_state_sequence_is_shared_across_policies() {
        let c = small_config(12);
        let mut a = Workbench::new(&c, PolicyKind::Exploitation, 3).unwrap();
        let mut b = Workbench::new(&c, PolicyKind::RandomWalk, 3).unwrap();
        for _ in 0..12 {
            a.run_iteration().unwrap();
            b.run_iteration().unwrap();
            assert_eq!(a.environment().state(), b.environment().state());
        }
    }

    #[test]
    fn snapshot_restore_continues_identically() {
        let c = small_config(30);
        let mut full = Workbench::new(&c, PolicyKind::Learned, 11).unwrap();
        let mut rows = Vec::new();
        for _ in 0..15 {
            full.run_iteration().unwrap();
        }
        let snap = full.snapshot();
        let mut resumed = Workbench::restore(
            &c,
            PolicyKind::Learned,
            11,
            snap,
            full.net().values.clone(),
            full.qnet().online.clone(),
            full.qnet().target.clone(),
        )
        .unwrap();
        for _ in 0..15 {
            rows.push((full.run_iteration().unwrap(), resumed.run_iteration().unwrap()));
        }
        assert!(rows.iter().all(|(a, b)| a.same_as(b)));
        assert_eq!(full.net().values, resumed.net().values);
    }

    #[test]
    fn tail_mean_uses_last_fraction() {
        let rows: Vec<MetricsRow> = (0..20)
            .map(|n| MetricsRow {
                n,
                reward: n as u32,
                sys_loss: 0.0,
                dqn_loss: 0.0,
                action: None,
                eps_sys: 0.0,
                eps_dqn: 0.0,
                wall_ms: 0,
            })
            .collect();
        assert_eq!(tail_mean_reward(&rows, 0.1), 18.5);
        assert_eq!(tail_mean_reward(&rows[..1], 0.1), 0.0);
    }
}
