//! Goal selection and exploration-noise regulation.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::monitor::TrendReport;
use crate::world::MotorCommand;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GoalParams {
    pub min_hold: usize,
    /// Switch when the current goal's `|slope|` falls below this.
    pub switch_threshold: f64,
    pub greedy_goal_prob: f64,
}

impl Default for GoalParams {
    fn default() -> Self {
        GoalParams {
            min_hold: 50,
            switch_threshold: 1e-4,
            greedy_goal_prob: 0.01,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalSelectionState {
    pub current_goal: usize,
    pub iterations_on_goal: usize,
    pub params: GoalParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchDecision {
    Keep,
    /// Random goal drawn by the greedy goal-selection event.
    Greedy,
    /// Current goal stopped improving; pick the steepest descending one.
    Trend,
}

impl SwitchDecision {
    pub fn is_switch(self) -> bool {
        self != SwitchDecision::Keep
    }
}

impl GoalSelectionState {
    pub fn new(initial_goal: usize, params: GoalParams) -> Self {
        GoalSelectionState {
            current_goal: initial_goal,
            iterations_on_goal: 0,
            params,
        }
    }

    /// The greedy draw happens on every call so that the random stream does
    /// not depend on the trend.
    pub fn should_switch<R: Rng + ?Sized>(
        &self,
        trend: &TrendReport,
        rng: &mut R,
    ) -> SwitchDecision {
        if rng.random::<f64>() < self.params.greedy_goal_prob {
            return SwitchDecision::Greedy;
        }
        if self.iterations_on_goal < self.params.min_hold {
            return SwitchDecision::Keep;
        }
        match trend.slope() {
            Some(s) if s > 0.0 || s.abs() < self.params.switch_threshold => SwitchDecision::Trend,
            _ => SwitchDecision::Keep,
        }
    }

    pub fn set_goal(&mut self, goal: usize) {
        self.current_goal = goal;
        self.iterations_on_goal = 0;
    }
}

/// Goal with the most negative slope (undefined trends count as 0); ties
/// are broken uniformly at random.
pub fn select_goal<R: Rng + ?Sized>(trends: &[TrendReport], rng: &mut R) -> Result<usize> {
    if trends.is_empty() {
        return Err(Error::Empty("goal trends"));
    }
    let best = trends
        .iter()
        .map(TrendReport::effective_slope)
        .fold(f64::INFINITY, f64::min);
    let ties: Vec<usize> = trends
        .iter()
        .enumerate()
        .filter(|(_, t)| t.effective_slope() == best)
        .map(|(i, _)| i)
        .collect();
    Ok(ties[rng.random_range(0..ties.len())])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    Fixed,
    Adaptive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoisePolicy {
    pub mode: NoiseMode,
    pub sigma_fixed: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub gain: f64,
    /// MSE slope (per MSE update) that moves sigma across half its range
    /// when `gain` is 1.
    pub slope_ref: f64,
}

impl Default for NoisePolicy {
    fn default() -> Self {
        NoisePolicy {
            mode: NoiseMode::Adaptive,
            sigma_fixed: 0.05,
            sigma_min: 0.01,
            sigma_max: 0.30,
            gain: 1.0,
            slope_ref: 0.005,
        }
    }
}

impl NoisePolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.sigma_min
            && self.sigma_min <= self.sigma_fixed
            && self.sigma_fixed <= self.sigma_max)
        {
            return Err(Error::invalid(
                "noise levels must satisfy 0 < sigma_min <= sigma_fixed <= sigma_max",
            ));
        }
        if !(self.gain > 0.0) || !(self.slope_ref > 0.0) {
            return Err(Error::invalid("noise gain and slope_ref must be positive"));
        }
        Ok(())
    }

    /// Standard deviation of the exploration noise for the current general
    /// MSE slope; an undefined slope counts as flat.
    pub fn exploration_sigma(&self, mse_slope: Option<f64>) -> f64 {
        match self.mode {
            NoiseMode::Fixed => self.sigma_fixed,
            NoiseMode::Adaptive => {
                let s = mse_slope.unwrap_or(0.0);
                let frac = (0.5 + self.gain * s / self.slope_ref).clamp(0.0, 1.0);
                (self.sigma_min + (self.sigma_max - self.sigma_min) * frac)
                    .clamp(self.sigma_min, self.sigma_max)
            }
        }
    }
}

/// Executed command: a uniform random position with probability
/// `greedy_move_prob`, otherwise `cmd` plus clamped Gaussian noise.
/// The flag reports a greedy movement.
pub fn apply_noise<R: Rng + ?Sized>(
    cmd: MotorCommand,
    sigma: f64,
    greedy_move_prob: f64,
    rng: &mut R,
) -> (MotorCommand, bool) {
    if greedy_move_prob > 0.0 && rng.random::<f64>() < greedy_move_prob {
        return (MotorCommand::new(rng.random(), rng.random()), true);
    }
    if sigma <= 0.0 {
        return (cmd, false);
    }
    let normal = Normal::new(0.0, sigma).expect("positive finite sigma");
    let noisy = MotorCommand::new(cmd.x + normal.sample(rng), cmd.y + normal.sample(rng));
    (noisy.clamped(), false)
}
