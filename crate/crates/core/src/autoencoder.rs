//! Dynamic autoencoder: a learned stand-in for the transition operator.
//!
//! ```text
//! y_k --Enc--> e_k --GRU(h_{k-1})--> h_k --Dec--> u_hat (softmax per cell) --O^T--> y_hat
//! ```
//!
//! Encoder: two 3x3 stride-2 convolutions (ReLU) and a dense map to the
//! latent width (tanh). Decoder: dense map (ReLU), a fractionally-strided
//! convolution (ReLU) and a second one to `|S|` channels, then a softmax over
//! channels at every cell. The observation matrix is a fixed linear layer.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::environment::{ObsMatrix, ObservationMap};
use crate::error::{Error, Result};
use crate::filter::{bayes_correct, BeliefGrid};
use crate::nn::{Adam, Conv2d, ConvTranspose2d, Dense, Gru, GruCache, ParamLayout};
use crate::par::{self, Execution};
use crate::replay::RingBuffer;
use crate::tensor::Grid3;

/// Lower/upper clamp for predicted probabilities inside the cross-entropy.
pub const PROB_CLAMP: f64 = 1e-7;

/// Shape of the network; the parameter values live in [`NetParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetShape {
    pub height: usize,
    pub width: usize,
    pub states: usize,
    pub observations: usize,
    pub latent: usize,
    pub conv1: usize,
    pub conv2: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layers {
    enc1: Conv2d,
    enc2: Conv2d,
    enc_dense: Dense,
    gru: Gru,
    dec_dense: Dense,
    dec1: ConvTranspose2d,
    dec2: ConvTranspose2d,
}

impl Layers {
    fn build(shape: &NetShape) -> (Self, ParamLayout) {
        let NetShape {
            height: h,
            width: w,
            states,
            observations,
            latent,
            conv1,
            conv2,
        } = *shape;
        let mut layout = ParamLayout::default();
        let enc1 = Conv2d::new(&mut layout, "encoder", "conv1", observations, conv1, h, w);
        let enc2 = Conv2d::new(&mut layout, "encoder", "conv2", conv1, conv2, enc1.out_h, enc1.out_w);
        let flat = enc2.output_len();
        let enc_dense = Dense::new(&mut layout, "encoder", "dense", flat, latent);
        let gru = Gru::new(&mut layout, latent, latent);
        let dec_dense = Dense::new(&mut layout, "decoder", "dense", latent, flat);
        let dec1 = ConvTranspose2d::new(
            &mut layout,
            "decoder",
            "deconv1",
            conv2,
            conv1,
            (enc2.out_h, enc2.out_w),
            (enc1.out_h, enc1.out_w),
        );
        let dec2 = ConvTranspose2d::new(&mut layout, "decoder", "deconv2", conv1, states, (enc1.out_h, enc1.out_w), (h, w));
        (
            Layers {
                enc1,
                enc2,
                enc_dense,
                gru,
                dec_dense,
                dec1,
                dec2,
            },
            layout,
        )
    }
}

/// Network parameters as one flat vector plus the layer bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    shape: NetShape,
    layers: Layers,
    layout: ParamLayout,
    pub values: Vec<f64>,
}

impl NetParams {
    /// Zero-initialised network.
    pub fn zeros(shape: NetShape) -> Result<Self> {
        if shape.height == 0 || shape.width == 0 || shape.latent == 0 || shape.conv1 == 0 || shape.conv2 == 0 {
            return Err(Error::config("network dimensions must be positive"));
        }
        if shape.states < 2 || shape.observations < 2 {
            return Err(Error::config("need at least two states and two observations"));
        }
        let (layers, layout) = Layers::build(&shape);
        let values = vec![0.0; layout.len()];
        Ok(NetParams {
            shape,
            layers,
            layout,
            values,
        })
    }

    /// Glorot-uniform weights and zero biases.
    pub fn init(shape: NetShape, rng: &mut impl Rng) -> Result<Self> {
        let mut p = Self::zeros(shape)?;
        let l = &p.layers;
        l.enc1.init(&mut p.values, rng);
        l.enc2.init(&mut p.values, rng);
        l.enc_dense.init(&mut p.values, rng);
        l.gru.init(&mut p.values, rng);
        l.dec_dense.init(&mut p.values, rng);
        l.dec1.init(&mut p.values, rng);
        l.dec2.init(&mut p.values, rng);
        Ok(p)
    }

    pub fn shape(&self) -> &NetShape {
        &self.shape
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn latent(&self) -> usize {
        self.shape.latent
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Zero every decoder weight and bias so `u_hat` is uniform for any input.
    pub fn force_uniform_decoder(&mut self) {
        let r = self.layers.dec2.weight_range();
        self.values[r].fill(0.0);
        let r = self.layers.dec2.bias_range();
        self.values[r].fill(0.0);
    }

    fn check_obs(&self, y: &ObservationMap, obs: &ObsMatrix) -> Result<()> {
        let s = &self.shape;
        if y.height() != s.height || y.width() != s.width {
            return Err(Error::config(format!(
                "observation map is {}x{}, network expects {}x{}",
                y.height(),
                y.width(),
                s.height,
                s.width
            )));
        }
        if obs.states() != s.states || obs.observations() != s.observations {
            return Err(Error::config("observation matrix does not match network state/observation counts"));
        }
        Ok(())
    }
}

/// Recurrent latent state `h_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnState {
    pub h: Vec<f64>,
    pub timestamp: u64,
}

impl RnnState {
    pub fn zeros(latent: usize) -> Self {
        RnnState {
            h: vec![0.0; latent],
            timestamp: 0,
        }
    }

    /// `h_0 ~ N(0, I)`.
    pub fn sample(latent: usize, rng: &mut impl Rng) -> Self {
        RnnState {
            h: sample_h0(latent, rng),
            timestamp: 0,
        }
    }
}

pub fn sample_h0(latent: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..latent).map(|_| rng.sample(StandardNormal)).collect()
}

struct StepCache {
    x: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    e: Vec<f64>,
    gru: GruCache,
    d0: Vec<f64>,
    d1: Vec<f64>,
    u_hat: Vec<f64>,
    y_hat: Vec<f64>,
}

fn relu(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

fn relu_back(post: &[f64], d: &mut [f64]) {
    for (g, &a) in d.iter_mut().zip(post) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

fn softmax_channels(logits: &mut [f64], channels: usize, plane: usize) {
    for cell in 0..plane {
        let max = (0..channels).map(|c| logits[c * plane + cell]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for c in 0..channels {
            let e = (logits[c * plane + cell] - max).exp();
            logits[c * plane + cell] = e;
            total += e;
        }
        for c in 0..channels {
            logits[c * plane + cell] /= total;
        }
    }
}

/// `y_hat[l, cell] = sum_m O[m, l] u_hat[m, cell]`.
fn emit(u_hat: &[f64], obs: &ObsMatrix, plane: usize) -> Vec<f64> {
    let (s, o) = (obs.states(), obs.observations());
    let mut y = vec![0.0; o * plane];
    for l in 0..o {
        for m in 0..s {
            let w = obs.get(m, l);
            let (dst, src) = (&mut y[l * plane..(l + 1) * plane], &u_hat[m * plane..(m + 1) * plane]);
            for (d, &u) in dst.iter_mut().zip(src) {
                *d += w * u;
            }
        }
    }
    y
}

fn step_forward(net: &NetParams, h: &[f64], x: Vec<f64>, obs: &ObsMatrix) -> (Vec<f64>, StepCache) {
    let l = &net.layers;
    let p = &net.values;
    let plane = net.shape.height * net.shape.width;

    let mut a1 = vec![0.0; l.enc1.output_len()];
    l.enc1.forward(p, &x, &mut a1);
    relu(&mut a1);
    let mut a2 = vec![0.0; l.enc2.output_len()];
    l.enc2.forward(p, &a1, &mut a2);
    relu(&mut a2);
    let mut e = vec![0.0; net.shape.latent];
    l.enc_dense.forward(p, &a2, &mut e);
    e.iter_mut().for_each(|v| *v = v.tanh());

    let (h_next, gru) = l.gru.forward(p, &e, h);

    let mut d0 = vec![0.0; l.dec_dense.outputs];
    l.dec_dense.forward(p, &h_next, &mut d0);
    relu(&mut d0);
    let mut d1 = vec![0.0; l.dec1.out_channels * l.dec1.out_h * l.dec1.out_w];
    l.dec1.forward(p, &d0, &mut d1);
    relu(&mut d1);
    let mut u_hat = vec![0.0; net.shape.states * plane];
    l.dec2.forward(p, &d1, &mut u_hat);
    softmax_channels(&mut u_hat, net.shape.states, plane);
    let y_hat = emit(&u_hat, obs, plane);

    (
        h_next,
        StepCache {
            x,
            a1,
            a2,
            e,
            gru,
            d0,
            d1,
            u_hat,
            y_hat,
        },
    )
}

/// One recurrent step: `h' = GRU(h, Enc(y))`, `u_hat = Dec(h')`, `y_hat = O^T u_hat`.
pub fn forward_step(
    h: &RnnState,
    y: &ObservationMap,
    net: &NetParams,
    obs: &ObsMatrix,
) -> Result<(RnnState, BeliefGrid, Grid3)> {
    net.check_obs(y, obs)?;
    if h.h.len() != net.shape.latent {
        return Err(Error::config("latent state width does not match network"));
    }
    let x = y.one_hot(net.shape.observations).into_data();
    let (h_next, cache) = step_forward(net, &h.h, x, obs);
    let s = &net.shape;
    let u = Grid3::from_vec(s.states, s.height, s.width, cache.u_hat)?;
    let yh = Grid3::from_vec(s.observations, s.height, s.width, cache.y_hat)?;
    Ok((
        RnnState {
            h: h_next,
            timestamp: h.timestamp + 1,
        },
        BeliefGrid {
            probs: u,
            timestamp: h.timestamp + 1,
        },
        yh,
    ))
}

/// Only the latent update `h' = GRU(h, Enc(y))`, skipping the decoder.
pub fn advance_latent(h: &[f64], y: &ObservationMap, net: &NetParams) -> Vec<f64> {
    let l = &net.layers;
    let p = &net.values;
    let x = y.one_hot(net.shape.observations).into_data();
    let mut a1 = vec![0.0; l.enc1.output_len()];
    l.enc1.forward(p, &x, &mut a1);
    relu(&mut a1);
    let mut a2 = vec![0.0; l.enc2.output_len()];
    l.enc2.forward(p, &a1, &mut a2);
    relu(&mut a2);
    let mut e = vec![0.0; net.shape.latent];
    l.enc_dense.forward(p, &a2, &mut e);
    e.iter_mut().for_each(|v| *v = v.tanh());
    l.gru.forward(p, &e, h).0
}

/// `forward_step` followed by the mask-gated Bayes correction of `u_hat` with `y`.
pub fn estimate_with_learned_model(
    h: &RnnState,
    y: &ObservationMap,
    net: &NetParams,
    obs: &ObsMatrix,
) -> Result<(RnnState, BeliefGrid)> {
    let (h_next, u_hat, _) = forward_step(h, y, net, obs)?;
    let p_hat = bayes_correct(&u_hat, y, obs)?;
    Ok((h_next, p_hat))
}

/// A window of consecutive observation maps `y_0..y_K` with the actions
/// taken alongside them. The network sees `y_0..y_{K-1}` and is scored on
/// predicting `y_1..y_K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub frames: Vec<ObservationMap>,
    /// Stored for provenance; the predictor does not consume actions.
    pub actions: Vec<u8>,
}

impl TrajectoryRecord {
    pub fn new(frames: Vec<ObservationMap>, actions: Vec<u8>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::config("a trajectory needs at least two frames"));
        }
        if actions.len() != frames.len() {
            return Err(Error::config("one action per frame is required"));
        }
        let (h, w) = (frames[0].height(), frames[0].width());
        if frames.iter().any(|f| f.height() != h || f.width() != w) {
            return Err(Error::config("trajectory frames differ in size"));
        }
        Ok(TrajectoryRecord { frames, actions })
    }

    /// Number of prediction steps `K`.
    pub fn steps(&self) -> usize {
        self.frames.len() - 1
    }
}

pub type TrajectoryBuffer = RingBuffer<TrajectoryRecord>;

/// A training batch: trajectories paired with the `h_0` each is unrolled from.
#[derive(Debug, Clone, PartialEq)]
pub struct SysBatch {
    pub trajectories: Vec<TrajectoryRecord>,
    pub h0: Vec<Vec<f64>>,
}

impl SysBatch {
    pub fn new(trajectories: Vec<TrajectoryRecord>, h0: Vec<Vec<f64>>) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::config("empty trajectory batch"));
        }
        if trajectories.len() != h0.len() {
            return Err(Error::config("one initial latent per trajectory is required"));
        }
        let k = trajectories[0].steps();
        if trajectories.iter().any(|t| t.steps() != k) {
            return Err(Error::config("trajectories in a batch must share K"));
        }
        Ok(SysBatch { trajectories, h0 })
    }

    /// Uniform draw of `size` records with a fresh `h_0 ~ N(0, I)` for each.
    pub fn sample(
        buffer: &TrajectoryBuffer,
        size: usize,
        latent: usize,
        replay_rng: &mut impl Rng,
        h0_rng: &mut impl Rng,
    ) -> Result<Self> {
        let trajectories: Vec<TrajectoryRecord> = buffer.sample(size, replay_rng)?.into_iter().cloned().collect();
        let h0 = (0..trajectories.len()).map(|_| sample_h0(latent, h0_rng)).collect();
        Self::new(trajectories, h0)
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

/// Binary cross-entropy of one cell summed over channels, with its gradient
/// with respect to `y_hat` written into `grad` when given.
fn cell_bce(target: Option<u8>, y_hat: &[f64], plane: usize, cell: usize, channels: usize, mut grad: Option<&mut [f64]>) -> f64 {
    let Some(obs) = target else { return 0.0 };
    let mut loss = 0.0;
    for l in 0..channels {
        let raw = y_hat[l * plane + cell];
        let q = raw.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let clamped = q != raw;
        let hit = l == obs as usize;
        loss -= if hit { q.ln() } else { (1.0 - q).ln() };
        if let Some(g) = grad.as_deref_mut() {
            g[l * plane + cell] = if clamped {
                0.0
            } else if hit {
                -1.0 / q
            } else {
                1.0 / (1.0 - q)
            };
        }
    }
    loss
}

fn frame_loss(y: &ObservationMap, y_hat: &[f64], channels: usize, grad: Option<&mut [f64]>) -> f64 {
    let (h, w) = (y.height(), y.width());
    let plane = h * w;
    let mut total = 0.0;
    match grad {
        Some(g) => {
            g.fill(0.0);
            for cell in 0..plane {
                total += cell_bce(y.get(cell / w, cell % w), y_hat, plane, cell, channels, Some(g));
            }
        }
        None => {
            for cell in 0..plane {
                total += cell_bce(y.get(cell / w, cell % w), y_hat, plane, cell, channels, None);
            }
        }
    }
    total
}

/// Unnormalised loss of one trajectory and, optionally, its gradient.
fn trajectory_pass(
    traj: &TrajectoryRecord,
    h0: &[f64],
    net: &NetParams,
    obs: &ObsMatrix,
    want_grad: bool,
) -> (f64, Option<Vec<f64>>) {
    let s = &net.shape;
    let plane = s.height * s.width;
    let k = traj.steps();
    let mut h = h0.to_vec();
    let mut caches = Vec::with_capacity(if want_grad { k } else { 0 });
    let mut dy_hats = Vec::with_capacity(if want_grad { k } else { 0 });
    let mut loss = 0.0;
    for t in 0..k {
        let x = traj.frames[t].one_hot(s.observations).into_data();
        let (h_next, cache) = step_forward(net, &h, x, obs);
        if want_grad {
            let mut g = vec![0.0; s.observations * plane];
            loss += frame_loss(&traj.frames[t + 1], &cache.y_hat, s.observations, Some(&mut g));
            dy_hats.push(g);
            caches.push(cache);
        } else {
            loss += frame_loss(&traj.frames[t + 1], &cache.y_hat, s.observations, None);
        }
        h = h_next;
    }
    if !want_grad {
        return (loss, None);
    }

    let l = &net.layers;
    let p = &net.values;
    let mut g = vec![0.0; net.values.len()];
    let mut dh_carry = vec![0.0; s.latent];
    for t in (0..k).rev() {
        let c = &caches[t];
        let dy = &dy_hats[t];
        let mut dh = dh_carry.clone();
        if dy.iter().any(|&v| v != 0.0) {
            // y_hat = O^T u_hat
            let mut du = vec![0.0; s.states * plane];
            for m in 0..s.states {
                for lo in 0..s.observations {
                    let w = obs.get(m, lo);
                    for cell in 0..plane {
                        du[m * plane + cell] += w * dy[lo * plane + cell];
                    }
                }
            }
            // channel softmax
            let mut dlogit = vec![0.0; s.states * plane];
            for cell in 0..plane {
                let dot: f64 = (0..s.states).map(|m| c.u_hat[m * plane + cell] * du[m * plane + cell]).sum();
                for m in 0..s.states {
                    let i = m * plane + cell;
                    dlogit[i] = c.u_hat[i] * (du[i] - dot);
                }
            }
            let mut dd1 = vec![0.0; c.d1.len()];
            l.dec2.backward(p, &c.d1, &dlogit, &mut g, Some(&mut dd1));
            relu_back(&c.d1, &mut dd1);
            let mut dd0 = vec![0.0; c.d0.len()];
            l.dec1.backward(p, &c.d0, &dd1, &mut g, Some(&mut dd0));
            relu_back(&c.d0, &mut dd0);
            let h_t: Vec<f64> = (0..s.latent)
                .map(|q| (1.0 - c.gru.z[q]) * c.gru.h[q] + c.gru.z[q] * c.gru.n[q])
                .collect();
            l.dec_dense.backward(p, &h_t, &dd0, &mut g, Some(&mut dh));
        }
        let (mut de, dh_prev) = l.gru.backward(p, &c.gru, &dh, &mut g);
        for (d, &e) in de.iter_mut().zip(&c.e) {
            *d *= 1.0 - e * e;
        }
        let mut da2 = vec![0.0; c.a2.len()];
        l.enc_dense.backward(p, &c.a2, &de, &mut g, Some(&mut da2));
        relu_back(&c.a2, &mut da2);
        let mut da1 = vec![0.0; c.a1.len()];
        l.enc2.backward(p, &c.a1, &da2, &mut g, Some(&mut da1));
        relu_back(&c.a1, &mut da1);
        l.enc1.backward(p, &c.x, &da1, &mut g, None);
        dh_carry = dh_prev;
    }
    (loss, Some(g))
}

fn check_batch(batch: &SysBatch, net: &NetParams, obs: &ObsMatrix) -> Result<()> {
    for (t, h0) in batch.trajectories.iter().zip(&batch.h0) {
        net.check_obs(&t.frames[0], obs)?;
        if h0.len() != net.shape.latent {
            return Err(Error::config("initial latent width does not match network"));
        }
    }
    Ok(())
}

/// `(1 / LK) sum_l sum_k BCE(y ⊙ m, y_hat ⊙ m)`.
pub fn masked_loss(batch: &SysBatch, net: &NetParams, obs: &ObsMatrix) -> Result<f64> {
    masked_loss_with(Execution::default(), batch, net, obs)
}

pub fn masked_loss_with(exec: Execution, batch: &SysBatch, net: &NetParams, obs: &ObsMatrix) -> Result<f64> {
    check_batch(batch, net, obs)?;
    let idx: Vec<usize> = (0..batch.len()).collect();
    let parts = par::map_slice(exec, &idx, |&i| trajectory_pass(&batch.trajectories[i], &batch.h0[i], net, obs, false).0);
    let norm = (batch.len() * batch.trajectories[0].steps()) as f64;
    Ok(parts.iter().sum::<f64>() / norm)
}

/// Loss and its exact gradient by backpropagation through all `K` steps.
pub fn sys_gradient(batch: &SysBatch, net: &NetParams, obs: &ObsMatrix) -> Result<(f64, Vec<f64>)> {
    sys_gradient_with(Execution::default(), batch, net, obs)
}

pub fn sys_gradient_with(exec: Execution, batch: &SysBatch, net: &NetParams, obs: &ObsMatrix) -> Result<(f64, Vec<f64>)> {
    check_batch(batch, net, obs)?;
    let idx: Vec<usize> = (0..batch.len()).collect();
    let parts = par::map_slice(exec, &idx, |&i| trajectory_pass(&batch.trajectories[i], &batch.h0[i], net, obs, true));
    let norm = (batch.len() * batch.trajectories[0].steps()) as f64;
    let mut grad = vec![0.0; net.len()];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g.expect("gradient requested")) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|v| *v /= norm);
    Ok((loss / norm, grad))
}

/// Adam step on the network parameters with the scheduled step size.
pub fn sys_update(net: &mut NetParams, optimizer: &mut Adam, grad: &[f64], step: f64) -> Result<()> {
    optimizer.step(&mut net.values, grad, step)
}

/// Masked cross-entropy of the fixed predictor `y_hat = O^T uniform(S)`,
/// normalised like [`masked_loss`].
pub fn uniform_predictor_loss(batch: &SysBatch, obs: &ObsMatrix) -> f64 {
    let (s, o) = (obs.states(), obs.observations());
    let first = &batch.trajectories[0].frames[0];
    let plane = first.height() * first.width();
    let mut y_hat = vec![0.0; o * plane];
    for l in 0..o {
        let v = (0..s).map(|m| obs.get(m, l)).sum::<f64>() / s as f64;
        y_hat[l * plane..(l + 1) * plane].fill(v);
    }
    let mut total = 0.0;
    for t in &batch.trajectories {
        for f in &t.frames[1..] {
            total += frame_loss(f, &y_hat, o, None);
        }
    }
    total / (batch.len() * batch.trajectories[0].steps()) as f64
}
