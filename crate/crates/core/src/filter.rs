//! Factored recursive Bayesian estimation of the grid state with a known model.
//!
//! The filter alternates a per-cell Bayes correction with the observation
//! likelihood and a prediction through the transition operator. Cells the
//! robot did not observe keep their predicted column.

use serde::{Deserialize, Serialize};

use crate::environment::{transition_operator, ModelParams, ObsMatrix, ObservationMap};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::tensor::{Grid3, SIMPLEX_TOLERANCE};

/// Per-cell categorical distributions over hidden states, stamped with the
/// slow-time index they refer to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefGrid {
    pub probs: Grid3,
    pub timestamp: u64,
}

impl BeliefGrid {
    pub fn new(probs: Grid3, timestamp: u64) -> Result<Self> {
        let b = BeliefGrid { probs, timestamp };
        b.validate()?;
        Ok(b)
    }

    pub fn uniform(states: usize, height: usize, width: usize) -> Self {
        BeliefGrid {
            probs: Grid3::filled(states, height, width, 1.0 / states as f64),
            timestamp: 0,
        }
    }

    pub fn states(&self) -> usize {
        self.probs.channels()
    }

    pub fn height(&self) -> usize {
        self.probs.height()
    }

    pub fn width(&self) -> usize {
        self.probs.width()
    }

    pub fn column(&self, row: usize, col: usize) -> Vec<f64> {
        self.probs.column(row, col)
    }

    pub fn validate(&self) -> Result<()> {
        let (s, h, w) = self.probs.dims();
        for i in 0..h {
            for j in 0..w {
                let mut total = 0.0;
                for c in 0..s {
                    let v = self.probs.get(c, i, j);
                    if !(v >= 0.0) || !v.is_finite() {
                        return Err(Error::domain(format!(
                            "belief value {v} at ({c}, {i}, {j}) is not a probability"
                        )));
                    }
                    total += v;
                }
                if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
                    return Err(Error::domain(format!(
                        "belief column at ({i}, {j}) sums to {total}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// `[O]_{m, y}` for every state `m`: how likely observation `y` is under each state.
pub fn likelihood_vector(observation: usize, obs_matrix: &ObsMatrix) -> Result<Vec<f64>> {
    if observation >= obs_matrix.observations() {
        return Err(Error::domain(format!(
            "observation {observation} out of range for {} symbols",
            obs_matrix.observations()
        )));
    }
    Ok((0..obs_matrix.states())
        .map(|m| obs_matrix.get(m, observation))
        .collect())
}

/// Evidence below which a posterior is considered undefined.
pub const MIN_EVIDENCE: f64 = 1e-300;

/// Per-cell Bayes rule, applied only where the mask marks an observation.
pub fn bayes_correct(
    predictor: &BeliefGrid,
    obs: &ObservationMap,
    obs_matrix: &ObsMatrix,
) -> Result<BeliefGrid> {
    bayes_correct_with(Execution::default(), predictor, obs, obs_matrix)
}

pub fn bayes_correct_with(
    exec: Execution,
    predictor: &BeliefGrid,
    obs: &ObservationMap,
    obs_matrix: &ObsMatrix,
) -> Result<BeliefGrid> {
    let (s, h, w) = predictor.probs.dims();
    if obs.height() != h || obs.width() != w {
        return Err(Error::config(format!(
            "observation map {}x{} does not match belief {h}x{w}",
            obs.height(),
            obs.width()
        )));
    }
    if obs_matrix.states() != s {
        return Err(Error::config("observation matrix rows must equal belief states"));
    }

    // Columns are independent: compute each row of cells separately, then
    // scatter back in order.
    let rows: Vec<Result<Vec<Vec<f64>>>> = par::map_range(exec, h, |i| {
        let mut out = Vec::with_capacity(w);
        for j in 0..w {
            let prior = predictor.probs.column(i, j);
            let Some(y) = obs.get(i, j) else {
                out.push(prior);
                continue;
            };
            let likelihood = likelihood_vector(y as usize, obs_matrix)?;
            let mut post: Vec<f64> = prior.iter().zip(&likelihood).map(|(p, l)| p * l).collect();
            let evidence: f64 = post.iter().sum();
            if !(evidence > MIN_EVIDENCE) {
                return Err(Error::DegenerateBelief {
                    row: i,
                    col: j,
                    evidence,
                });
            }
            post.iter_mut().for_each(|v| *v /= evidence);
            // Absorb rounding so the column sums to one.
            let total: f64 = post.iter().sum();
            post.iter_mut().for_each(|v| *v /= total);
            out.push(post);
        }
        Ok(out)
    });

    let mut probs = predictor.probs.clone();
    for (i, row) in rows.into_iter().enumerate() {
        for (j, col) in row?.into_iter().enumerate() {
            probs.set_column(i, j, &col);
        }
    }
    Ok(BeliefGrid {
        probs,
        timestamp: predictor.timestamp,
    })
}

/// `u_{k+1} = Phi(p_k)`.
pub fn predict(estimate: &BeliefGrid, params: &ModelParams) -> Result<BeliefGrid> {
    let mut next = transition_operator(estimate, params)?;
    next.timestamp = estimate.timestamp + 1;
    Ok(next)
}

/// Runs correction then prediction for each observation, starting from the
/// predictor `initial`. Returns the corrected estimate for every step.
pub fn filter_run<'a, I>(
    observations: I,
    params: &ModelParams,
    initial: &BeliefGrid,
) -> Result<Vec<BeliefGrid>>
where
    I: IntoIterator<Item = &'a ObservationMap>,
{
    let mut predictor = initial.clone();
    let mut estimates = Vec::new();
    for obs in observations {
        let estimate = bayes_correct(&predictor, obs, &params.obs_matrix)?;
        predictor = predict(&estimate, params)?;
        estimates.push(estimate);
    }
    Ok(estimates)
}

/// Mean over cells of `-ln p[true state]`, with probabilities floored at 1e-12.
pub fn mean_cross_entropy(belief: &BeliefGrid, truth: &crate::environment::StateMap) -> f64 {
    let (_, h, w) = belief.probs.dims();
    let mut total = 0.0;
    for i in 0..h {
        for j in 0..w {
            let p = belief.probs.get(truth.get(i, j) as usize, i, j);
            total -= p.max(1e-12).ln();
        }
    }
    total / (h * w) as f64
}
