//! Random-shooting path planner over a frozen belief grid.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::Position;
use crate::error::{Error, Result};
use crate::filter::BeliefGrid;
use crate::par::{self, Execution};
use crate::tensor::shannon_entropy;

/// One step of the single-integrator robot, as a `(d_row, d_col)` move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Velocity {
    Down,
    Up,
    Right,
    Left,
}

impl Velocity {
    /// The velocity set, in the order `(1,0), (-1,0), (0,1), (0,-1)`.
    pub const ALL: [Velocity; 4] = [Velocity::Down, Velocity::Up, Velocity::Right, Velocity::Left];

    pub fn delta(self) -> (isize, isize) {
        match self {
            Velocity::Down => (1, 0),
            Velocity::Up => (-1, 0),
            Velocity::Right => (0, 1),
            Velocity::Left => (0, -1),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// `z + v`, saturated at the grid edges.
    pub fn apply(self, z: Position, height: usize, width: usize) -> Position {
        let (dr, dc) = self.delta();
        let row = (z.row as isize + dr).clamp(0, height as isize - 1) as usize;
        let col = (z.col as isize + dc).clamp(0, width as isize - 1) as usize;
        Position { row, col }
    }
}

/// Positions `z_0..z_T` and the velocities `v_0..v_{T-1}` that produced them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobotPath {
    positions: Vec<Position>,
    velocities: Vec<Velocity>,
}

impl RobotPath {
    pub fn from_velocities(start: Position, velocities: &[Velocity], height: usize, width: usize) -> Self {
        let mut positions = Vec::with_capacity(velocities.len() + 1);
        positions.push(start);
        let mut z = start;
        for v in velocities {
            z = v.apply(z, height, width);
            positions.push(z);
        }
        RobotPath {
            positions,
            velocities: velocities.to_vec(),
        }
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn velocities(&self) -> &[Velocity] {
        &self.velocities
    }

    pub fn start(&self) -> Position {
        self.positions[0]
    }

    pub fn end(&self) -> Position {
        *self.positions.last().expect("paths hold at least the start")
    }

    /// Number of positions, `T + 1`.
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn horizon(&self) -> usize {
        self.velocities.len()
    }
}

/// High-level decision: seek state `a` for `a < |S|`, or seek uncertainty for `a = |S|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Action(pub u8);

impl Action {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Exploration weight: 1 for the uncertainty-seeking action, 0 otherwise.
    pub fn omega(self, states: usize) -> f64 {
        if self.index() == states {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanSpec {
    pub action: Action,
    pub horizon: usize,
    pub samples: usize,
}

impl PlanSpec {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.samples == 0 {
            return Err(Error::config("planner needs horizon >= 1 and samples >= 1"));
        }
        Ok(())
    }
}

/// `c1 + omega(a) * c2` at cell `z`: `c1 = -p[a, z]` when `a` names a
/// state, `c2` is the negative entropy of the belief column.
pub fn running_cost(z: Position, belief: &BeliefGrid, action: Action) -> Result<f64> {
    let states = belief.states();
    let a = action.index();
    if a > states {
        return Err(Error::domain(format!(
            "action {a} invalid for {states} states (max {states})"
        )));
    }
    if z.row >= belief.height() || z.col >= belief.width() {
        return Err(Error::domain(format!("position {z:?} outside belief grid")));
    }
    if a < states {
        Ok(-belief.probs.get(a, z.row, z.col))
    } else {
        Ok(-action.omega(states) * shannon_entropy(&belief.column(z.row, z.col))?)
    }
}

/// Running cost at every cell, row-major.
pub fn cost_field(belief: &BeliefGrid, action: Action) -> Result<Vec<f64>> {
    let (h, w) = (belief.height(), belief.width());
    let mut field = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            field.push(running_cost(Position::new(i, j), belief, action)?);
        }
    }
    Ok(field)
}

/// Mean running cost over the `T + 1` positions of `path`.
pub fn rollout_cost(path: &RobotPath, belief: &BeliefGrid, action: Action) -> Result<f64> {
    let mut total = 0.0;
    for &z in path.positions() {
        total += running_cost(z, belief, action)?;
    }
    Ok(total / path.len() as f64)
}

fn field_cost(start: Position, velocities: &[Velocity], field: &[f64], h: usize, w: usize) -> f64 {
    let mut z = start;
    let mut total = field[z.row * w + z.col];
    for v in velocities {
        z = v.apply(z, h, w);
        total += field[z.row * w + z.col];
    }
    total / (velocities.len() + 1) as f64
}

/// Candidate velocity sequences: all `4^T` of them in base-4 order when the
/// sample budget covers the whole space, otherwise `N` uniform draws.
pub fn candidate_sequences(spec: &PlanSpec, rng: &mut impl Rng) -> Vec<Vec<Velocity>> {
    let space = 4usize.checked_pow(spec.horizon as u32);
    match space {
        Some(space) if spec.samples >= space => (0..space)
            .map(|mut code| {
                let mut seq = vec![Velocity::Down; spec.horizon];
                for slot in seq.iter_mut().rev() {
                    *slot = Velocity::ALL[code % 4];
                    code /= 4;
                }
                seq
            })
            .collect(),
        _ => (0..spec.samples)
            .map(|_| {
                (0..spec.horizon)
                    .map(|_| Velocity::ALL[rng.random_range(0..4)])
                    .collect()
            })
            .collect(),
    }
}

/// The plan together with the cost of every candidate considered.
#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub path: RobotPath,
    pub cost: f64,
    pub candidate_costs: Vec<f64>,
}

/// Lowest-cost candidate; ties go to the lowest sample index.
pub fn plan(start: Position, belief: &BeliefGrid, spec: &PlanSpec, rng: &mut impl Rng) -> Result<RobotPath> {
    plan_with(Execution::default(), start, belief, spec, rng).map(|o| o.path)
}

pub fn plan_with(
    exec: Execution,
    start: Position,
    belief: &BeliefGrid,
    spec: &PlanSpec,
    rng: &mut impl Rng,
) -> Result<PlanOutcome> {
    spec.validate()?;
    let (h, w) = (belief.height(), belief.width());
    if start.row >= h || start.col >= w {
        return Err(Error::domain(format!("start {start:?} outside {h}x{w} grid")));
    }
    let field = cost_field(belief, spec.action)?;
    let candidates = candidate_sequences(spec, rng);
    let costs = par::map_slice(exec, &candidates, |seq| field_cost(start, seq, &field, h, w));

    let mut best = 0;
    for (idx, &c) in costs.iter().enumerate() {
        if c < costs[best] {
            best = idx;
        }
    }
    Ok(PlanOutcome {
        path: RobotPath::from_velocities(start, &candidates[best], h, w),
        cost: costs[best],
        candidate_costs: costs,
    })
}

/// Uniformly random velocities, no belief involved.
pub fn random_walk(start: Position, horizon: usize, height: usize, width: usize, rng: &mut impl Rng) -> RobotPath {
    let velocities: Vec<Velocity> = (0..horizon)
        .map(|_| Velocity::ALL[rng.random_range(0..4)])
        .collect();
    RobotPath::from_velocities(start, &velocities, height, width)
}
