//! Ground-truth spatiotemporal HMM simulator.
//!
//! Hidden cell states evolve through the normalised cross-correlation
//! operator, cells are observed through a row-stochastic observation matrix,
//! and only cells on the robot's path are observed at all.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::WildfirePreset;
use crate::error::{Error, Result};
use crate::filter::BeliefGrid;
use crate::planner::RobotPath;
use crate::rng::{self, Stream, StreamRng};
use crate::tensor::{cross_correlate, normalize_channels, Grid3, Kernel4};

/// Sentinel stored in [`ObservationMap`] cells the robot did not visit.
pub const UNOBSERVED: u8 = u8::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Position {
    pub row: usize,
    pub col: usize,
}

impl Position {
    pub const fn new(row: usize, col: usize) -> Self {
        Position { row, col }
    }
}

/// Hidden state id of every cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateMap {
    height: usize,
    width: usize,
    cells: Vec<u8>,
}

impl StateMap {
    pub fn new(height: usize, width: usize, cells: Vec<u8>, states: usize) -> Result<Self> {
        if cells.len() != height * width {
            return Err(Error::config("state map size does not match dims"));
        }
        if let Some(bad) = cells.iter().find(|&&c| c as usize >= states) {
            return Err(Error::domain(format!("state {bad} out of range for {states} states")));
        }
        Ok(StateMap {
            height,
            width,
            cells,
        })
    }

    pub fn uniform(height: usize, width: usize, state: u8) -> Self {
        StateMap {
            height,
            width,
            cells: vec![state; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        debug_assert!(row < self.height && col < self.width);
        self.cells[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, state: u8) {
        debug_assert!(row < self.height && col < self.width);
        self.cells[row * self.width + col] = state;
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn count(&self, state: u8) -> usize {
        self.cells.iter().filter(|&&c| c == state).count()
    }

    pub fn one_hot(&self, states: usize) -> BeliefGrid {
        let mut probs = Grid3::zeros(states, self.height, self.width);
        for i in 0..self.height {
            for j in 0..self.width {
                probs.set(self.get(i, j) as usize, i, j, 1.0);
            }
        }
        BeliefGrid { probs, timestamp: 0 }
    }
}

/// Observed symbol per cell plus the 0/1 coverage mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationMap {
    height: usize,
    width: usize,
    cells: Vec<u8>,
    mask: Vec<u8>,
}

impl ObservationMap {
    pub fn new(height: usize, width: usize, cells: Vec<u8>, mask: Vec<u8>) -> Result<Self> {
        if cells.len() != height * width || mask.len() != height * width {
            return Err(Error::config("observation map size does not match dims"));
        }
        for (&c, &m) in cells.iter().zip(&mask) {
            match m {
                0 if c != UNOBSERVED => {
                    return Err(Error::domain("unmasked cell carries an observation"))
                }
                1 if c == UNOBSERVED => {
                    return Err(Error::domain("masked cell has no observation"))
                }
                0 | 1 => {}
                _ => return Err(Error::domain("mask values must be 0 or 1")),
            }
        }
        Ok(ObservationMap {
            height,
            width,
            cells,
            mask,
        })
    }

    pub fn unobserved(height: usize, width: usize) -> Self {
        ObservationMap {
            height,
            width,
            cells: vec![UNOBSERVED; height * width],
            mask: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// The observed symbol, or `None` where the mask is zero.
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Option<u8> {
        debug_assert!(row < self.height && col < self.width);
        match self.cells[row * self.width + col] {
            UNOBSERVED => None,
            y => Some(y),
        }
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn mask(&self) -> &[u8] {
        &self.mask
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }

    /// `|O|`-channel one-hot stack; unobserved cells are all-zero columns.
    pub fn one_hot(&self, observations: usize) -> Grid3 {
        let mut g = Grid3::zeros(observations, self.height, self.width);
        for i in 0..self.height {
            for j in 0..self.width {
                if let Some(y) = self.get(i, j) {
                    g.set(y as usize, i, j, 1.0);
                }
            }
        }
        g
    }
}

/// Row-stochastic `|S| x |O|` matrix of observation probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsMatrix {
    states: usize,
    observations: usize,
    rows: Vec<f64>,
}

impl ObsMatrix {
    pub fn new(states: usize, observations: usize, rows: Vec<f64>) -> Result<Self> {
        if states == 0 || observations == 0 || rows.len() != states * observations {
            return Err(Error::config("observation matrix dims do not match its data"));
        }
        for m in 0..states {
            let row = &rows[m * observations..(m + 1) * observations];
            if row.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(Error::domain(format!(
                    "observation matrix row {m} must be strictly positive"
                )));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::domain(format!(
                    "observation matrix row {m} sums to {total}"
                )));
            }
        }
        Ok(ObsMatrix {
            states,
            observations,
            rows,
        })
    }

    /// Identity with `eps` mass moved onto every off-diagonal symbol.
    pub fn smoothed_identity(states: usize, eps: f64) -> Result<Self> {
        let mut rows = vec![eps; states * states];
        for m in 0..states {
            rows[m * states + m] = 1.0 - eps * (states - 1) as f64;
        }
        Self::new(states, states, rows)
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn observations(&self) -> usize {
        self.observations
    }

    #[inline]
    pub fn get(&self, state: usize, observation: usize) -> f64 {
        self.rows[state * self.observations + observation]
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.rows[state * self.observations..(state + 1) * self.observations]
    }
}

/// Everything that defines the hidden Markov model of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub height: usize,
    pub width: usize,
    pub kernel: Kernel4,
    pub obs_matrix: ObsMatrix,
}

impl ModelParams {
    pub fn new(height: usize, width: usize, kernel: Kernel4, obs_matrix: ObsMatrix) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::config("grid dims must be positive"));
        }
        if kernel.states() != obs_matrix.states() {
            return Err(Error::config("kernel and observation matrix disagree on |S|"));
        }
        Ok(ModelParams {
            height,
            width,
            kernel,
            obs_matrix,
        })
    }

    pub fn states(&self) -> usize {
        self.kernel.states()
    }

    pub fn observations(&self) -> usize {
        self.obs_matrix.observations()
    }
}

/// `Phi(p) = normalize(w * p + b)`.
pub fn transition_operator(belief: &BeliefGrid, params: &ModelParams) -> Result<BeliefGrid> {
    let phi = cross_correlate(&belief.probs, &params.kernel)?;
    Ok(BeliefGrid {
        probs: normalize_channels(&phi)?,
        timestamp: belief.timestamp,
    })
}

/// Draws one category from `probs` with a single uniform variate.
fn sample_categorical(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (idx, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return idx;
        }
    }
    // Rounding left `u` above the cumulative sum: take the last state with mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Samples every cell's next state independently from `Phi(one_hot(state))`.
pub fn step_state(state: &StateMap, params: &ModelParams, rng: &mut impl Rng) -> Result<StateMap> {
    let next = transition_operator(&state.one_hot(params.states()), params)?;
    let mut out = state.clone();
    for i in 0..state.height() {
        for j in 0..state.width() {
            let col = next.probs.column(i, j);
            out.set(i, j, sample_categorical(&col, rng) as u8);
        }
    }
    Ok(out)
}

/// Samples an observation at every visited cell, in row-major order.
pub fn observe(
    state: &StateMap,
    visited: &[Position],
    params: &ModelParams,
    rng: &mut impl Rng,
) -> Result<ObservationMap> {
    let (h, w) = (state.height(), state.width());
    let mut mask = vec![0u8; h * w];
    for p in visited {
        if p.row >= h || p.col >= w {
            return Err(Error::domain(format!("position {p:?} outside {h}x{w} grid")));
        }
        mask[p.row * w + p.col] = 1;
    }
    let mut cells = vec![UNOBSERVED; h * w];
    for idx in 0..h * w {
        if mask[idx] == 1 {
            let x = state.cells()[idx] as usize;
            cells[idx] = sample_categorical(params.obs_matrix.row(x), rng) as u8;
        }
    }
    Ok(ObservationMap {
        height: h,
        width: w,
        cells,
        mask,
    })
}

/// Number of path time steps spent on a cell in `target_state`; revisits count.
pub fn reward(state: &StateMap, path: &RobotPath, target_state: u8) -> u32 {
    path.positions()
        .iter()
        .filter(|p| state.get(p.row, p.col) == target_state)
        .count() as u32
}

/// The three-state wildfire model built from [`WildfirePreset::default`].
pub fn wildfire_preset(height: usize, width: usize) -> Result<ModelParams> {
    WildfirePreset::default().build(height, width)
}

/// Single-owner simulator state: the hidden map and its two random streams.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Environment {
    params: ModelParams,
    state: StateMap,
    transition_rng: StreamRng,
    observation_rng: StreamRng,
    step_count: u64,
}

impl Environment {
    pub fn new(params: ModelParams, initial: StateMap, seed: u64) -> Self {
        Environment {
            params,
            state: initial,
            transition_rng: rng::stream(seed, Stream::EnvTransition),
            observation_rng: rng::stream(seed, Stream::EnvObservation),
            step_count: 0,
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn state(&self) -> &StateMap {
        &self.state
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Advances the hidden map one slow-time step.
    pub fn step(&mut self) -> Result<()> {
        self.state = step_state(&self.state, &self.params, &mut self.transition_rng)?;
        self.step_count += 1;
        Ok(())
    }

    pub fn observe(&mut self, visited: &[Position]) -> Result<ObservationMap> {
        observe(&self.state, visited, &self.params, &mut self.observation_rng)
    }

    /// Observes the whole map.
    pub fn observe_all(&mut self) -> ObservationMap {
        let all: Vec<Position> = (0..self.state.height())
            .flat_map(|i| (0..self.state.width()).map(move |j| Position::new(i, j)))
            .collect();
        self.observe(&all).expect("all positions are in bounds")
    }

    pub fn reward(&self, path: &RobotPath, target_state: u8) -> u32 {
        reward(&self.state, path, target_state)
    }
}
