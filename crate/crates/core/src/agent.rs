//! High-level DQN agent choosing the planner's cost mode from the latent `h_k`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Adam, Dense, ParamLayout};
use crate::replay::RingBuffer;

/// Multilayer perceptron `h -> hidden -> hidden -> actions` (ReLU) holding
/// both the online parameters and the target copy.
#[derive(Debug, Clone, PartialEq)]
pub struct QNet {
    l1: Dense,
    l2: Dense,
    l3: Dense,
    pub online: Vec<f64>,
    pub target: Vec<f64>,
}

struct QCache {
    z1: Vec<f64>,
    z2: Vec<f64>,
}

impl QNet {
    pub fn new(inputs: usize, hidden: usize, actions: usize, rng: &mut impl Rng) -> Result<Self> {
        if inputs == 0 || hidden == 0 || actions == 0 {
            return Err(Error::config("Q-network dimensions must be positive"));
        }
        let mut layout = ParamLayout::default();
        let l1 = Dense::new(&mut layout, "qnet", "hidden1", inputs, hidden);
        let l2 = Dense::new(&mut layout, "qnet", "hidden2", hidden, hidden);
        let l3 = Dense::new(&mut layout, "qnet", "out", hidden, actions);
        let mut online = vec![0.0; layout.len()];
        for l in [&l1, &l2, &l3] {
            l.init(&mut online, rng);
        }
        let target = online.clone();
        Ok(QNet { l1, l2, l3, online, target })
    }

    pub fn inputs(&self) -> usize {
        self.l1.inputs
    }

    pub fn actions(&self) -> usize {
        self.l3.outputs
    }

    pub fn len(&self) -> usize {
        self.online.len()
    }

    pub fn is_empty(&self) -> bool {
        self.online.is_empty()
    }

    fn forward(&self, p: &[f64], h: &[f64]) -> (Vec<f64>, QCache) {
        let mut z1 = vec![0.0; self.l1.outputs];
        self.l1.forward(p, h, &mut z1);
        z1.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut z2 = vec![0.0; self.l2.outputs];
        self.l2.forward(p, &z1, &mut z2);
        z2.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut q = vec![0.0; self.l3.outputs];
        self.l3.forward(p, &z2, &mut q);
        (q, QCache { z1, z2 })
    }

    fn backward(&self, p: &[f64], h: &[f64], cache: &QCache, dq: &[f64], g: &mut [f64]) {
        let mut dz2 = vec![0.0; cache.z2.len()];
        self.l3.backward(p, &cache.z2, dq, g, Some(&mut dz2));
        for (d, &z) in dz2.iter_mut().zip(&cache.z2) {
            if z <= 0.0 {
                *d = 0.0;
            }
        }
        let mut dz1 = vec![0.0; cache.z1.len()];
        self.l2.backward(p, &cache.z1, &dz2, g, Some(&mut dz1));
        for (d, &z) in dz1.iter_mut().zip(&cache.z1) {
            if z <= 0.0 {
                *d = 0.0;
            }
        }
        self.l1.backward(p, h, &dz1, g, None);
    }

    pub fn q_online(&self, h: &[f64]) -> Vec<f64> {
        self.forward(&self.online, h).0
    }

    pub fn q_target(&self, h: &[f64]) -> Vec<f64> {
        self.forward(&self.target, h).0
    }

    /// `theta^- <- theta`.
    pub fn sync_target(&mut self) {
        self.target.copy_from_slice(&self.online);
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn greedy(q: &[f64]) -> usize {
    let mut best = 0;
    for (a, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = a;
        }
    }
    best
}

/// Epsilon-greedy action: uniform with probability `eps`, greedy otherwise.
pub fn act(h: &[f64], qnet: &QNet, eps: f64, rng: &mut impl Rng) -> u8 {
    let explore = rng.random::<f64>() < eps;
    if explore {
        rng.random_range(0..qnet.actions()) as u8
    } else {
        greedy(&qnet.q_online(h)) as u8
    }
}

/// Replay row `(h, a, r, h')`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub h: Vec<f64>,
    pub action: u8,
    pub reward: f64,
    pub next: Vec<f64>,
}

fn td_target(t: &TransitionRecord, qnet: &QNet, gamma: f64) -> f64 {
    if gamma == 0.0 {
        return t.reward;
    }
    let next = qnet.q_target(&t.next);
    t.reward + gamma * next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn check_batch(batch: &[&TransitionRecord], qnet: &QNet, gamma: f64) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::config("empty transition batch"));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::config(format!("discount {gamma} outside [0, 1)")));
    }
    for t in batch {
        if t.h.len() != qnet.inputs() || t.next.len() != qnet.inputs() || t.action as usize >= qnet.actions() {
            return Err(Error::config("transition does not match the Q-network"));
        }
    }
    Ok(())
}

/// Mean squared TD error with the target network in the bootstrap term.
pub fn dqn_loss(batch: &[&TransitionRecord], qnet: &QNet, gamma: f64) -> Result<f64> {
    check_batch(batch, qnet, gamma)?;
    let total: f64 = batch
        .iter()
        .map(|t| {
            let q = qnet.q_online(&t.h)[t.action as usize];
            (td_target(t, qnet, gamma) - q).powi(2)
        })
        .sum();
    Ok(total / batch.len() as f64)
}

/// Loss and its gradient with respect to the online parameters only.
pub fn dqn_gradient(batch: &[&TransitionRecord], qnet: &QNet, gamma: f64) -> Result<(f64, Vec<f64>)> {
    check_batch(batch, qnet, gamma)?;
    let m = batch.len() as f64;
    let mut grad = vec![0.0; qnet.len()];
    let mut loss = 0.0;
    for t in batch {
        let y = td_target(t, qnet, gamma);
        let (q, cache) = qnet.forward(&qnet.online, &t.h);
        let err = q[t.action as usize] - y;
        loss += err * err;
        let mut dq = vec![0.0; q.len()];
        dq[t.action as usize] = 2.0 * err / m;
        qnet.backward(&qnet.online, &t.h, &cache, &dq, &mut grad);
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence("non-finite DQN gradient".into()));
    }
    Ok((loss / m, grad))
}

/// Linear decay from `start` to `end` over `decay_iters`, then flat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_iters: u64,
}

impl EpsilonSchedule {
    pub fn at(&self, n: u64) -> f64 {
        if self.decay_iters == 0 || n >= self.decay_iters {
            return self.end;
        }
        let frac = n as f64 / self.decay_iters as f64;
        self.start + (self.end - self.start) * frac
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DqnSettings {
    pub gamma: f64,
    pub batch: usize,
    pub sync_interval: u64,
}

/// Q-network, its optimiser, the transition memory and the update counter
/// driving target synchronisation.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub qnet: QNet,
    pub optimizer: Adam,
    pub buffer: RingBuffer<TransitionRecord>,
    pub settings: DqnSettings,
    pub updates: u64,
}

impl DqnAgent {
    pub fn new(qnet: QNet, capacity: usize, settings: DqnSettings) -> Result<Self> {
        if settings.batch == 0 || settings.sync_interval == 0 {
            return Err(Error::config("DQN batch and sync interval must be positive"));
        }
        let optimizer = Adam::new(qnet.len());
        Ok(DqnAgent {
            qnet,
            optimizer,
            buffer: RingBuffer::new(capacity)?,
            settings,
            updates: 0,
        })
    }

    pub fn ready(&self) -> bool {
        self.buffer.len() >= self.settings.batch
    }

    /// One minibatch step at rate `lr`. Returns the batch loss, or `None`
    /// while the buffer holds fewer than one batch.
    pub fn update(&mut self, lr: f64, rng: &mut impl Rng) -> Result<Option<f64>> {
        if !self.ready() {
            return Ok(None);
        }
        let batch = self.buffer.sample(self.settings.batch, rng)?;
        let (loss, grad) = dqn_gradient(&batch, &self.qnet, self.settings.gamma)?;
        self.optimizer.step(&mut self.qnet.online, &grad, lr)?;
        self.updates += 1;
        if self.updates % self.settings.sync_interval == 0 {
            self.qnet.sync_target();
        }
        Ok(Some(loss))
    }
}
