//! Multi-level monitoring of prediction-error dynamics.
//!
//! At the goal level every goal owns a FIFO of the prediction errors observed
//! while pursuing it. At the general level a FIFO of forward-model test MSEs
//! is kept; the sign of its least-squares slope grows or shrinks the capacity
//! shared by all goal buffers, one step per MSE update.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::{check_dim, Error, Result};

/// OLS slope of `values` against the abscissae `0, 1, ..., n-1`.
pub fn regression_slope(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "regression needs at least 2 values, got {n}"
        )));
    }
    let x_mean = (n - 1) as f64 / 2.0;
    let v_mean = values.iter().sum::<f64>() / n as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, v) in values.iter().enumerate() {
        let dx = i as f64 - x_mean;
        num += dx * (v - v_mean);
        den += dx * dx;
    }
    Ok(num / den)
}

/// Euclidean distance between a goal and a predicted sensory state.
pub fn prediction_error(goal: &[f64], predicted: &[f64]) -> Result<f64> {
    check_dim(goal.len(), predicted.len())?;
    Ok(goal
        .iter()
        .zip(predicted)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub slope: f64,
    pub defined: bool,
}

impl TrendReport {
    pub const UNDEFINED: TrendReport = TrendReport {
        slope: 0.0,
        defined: false,
    };

    pub fn slope(&self) -> Option<f64> {
        self.defined.then_some(self.slope)
    }

    /// Slope with undefined trends counting as flat.
    pub fn effective_slope(&self) -> f64 {
        if self.defined {
            self.slope
        } else {
            0.0
        }
    }
}

/// Bounded FIFO; pushing past capacity evicts the oldest value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBuffer {
    values: VecDeque<f64>,
    capacity: usize,
}

impl ErrorBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "buffer capacity must be positive");
        ErrorBuffer {
            values: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn values(&self) -> Vec<f64> {
        self.values.iter().copied().collect()
    }

    /// Appends a prediction error; rejects negative or non-finite values.
    pub fn push(&mut self, pe: f64) -> Result<()> {
        if !pe.is_finite() || pe < 0.0 {
            return Err(Error::invalid(format!(
                "prediction error {pe} must be finite and >= 0"
            )));
        }
        self.push_unchecked(pe);
        Ok(())
    }

    fn push_unchecked(&mut self, v: f64) {
        self.values.push_back(v);
        while self.values.len() > self.capacity {
            self.values.pop_front();
        }
    }

    /// Oldest entries are evicted immediately when shrinking below length.
    pub fn set_capacity(&mut self, capacity: usize) {
        assert!(capacity >= 1, "buffer capacity must be positive");
        self.capacity = capacity;
        while self.values.len() > capacity {
            self.values.pop_front();
        }
    }

    /// Regression trend, defined once at least `min_len` values are stored.
    pub fn trend(&self, min_len: usize) -> TrendReport {
        if self.values.len() < min_len.max(2) {
            return TrendReport::UNDEFINED;
        }
        let (a, b) = self.values.as_slices();
        let slope = if b.is_empty() {
            regression_slope(a)
        } else {
            regression_slope(&self.values())
        };
        TrendReport {
            slope: slope.expect("length checked"),
            defined: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonitorParams {
    pub goal_capacity_init: usize,
    pub goal_capacity_min: usize,
    pub goal_capacity_max: usize,
    /// Goal trends need strictly more than four errors.
    pub goal_regression_min: usize,
    pub mse_capacity: usize,
    pub mse_regression_min: usize,
}

impl Default for MonitorParams {
    fn default() -> Self {
        MonitorParams {
            goal_capacity_init: 10,
            goal_capacity_min: 10,
            goal_capacity_max: 50,
            goal_regression_min: 5,
            mse_capacity: 10,
            mse_regression_min: 2,
        }
    }
}

impl MonitorParams {
    pub fn validate(&self) -> Result<()> {
        if self.goal_capacity_min == 0
            || self.goal_capacity_min > self.goal_capacity_max
            || !(self.goal_capacity_min..=self.goal_capacity_max).contains(&self.goal_capacity_init)
        {
            return Err(Error::invalid(
                "goal buffer capacities must satisfy 1 <= min <= init <= max",
            ));
        }
        if self.mse_capacity < 2 || self.mse_regression_min < 2 || self.goal_regression_min < 2 {
            return Err(Error::invalid(
                "regressions need buffers of at least 2 values",
            ));
        }
        Ok(())
    }
}

/// Moves every goal buffer's capacity one step in the direction of the
/// general-error slope, within `[min, max]`. A zero slope changes nothing.
pub fn adjust_capacity(buffers: &mut [ErrorBuffer], mse_slope: f64, min: usize, max: usize) {
    for buf in buffers {
        let cap = buf.capacity();
        let next = if mse_slope > 0.0 {
            (cap + 1).min(max)
        } else if mse_slope < 0.0 {
            cap.saturating_sub(1).max(min)
        } else {
            cap
        };
        if next != cap {
            buf.set_capacity(next);
        }
    }
}

/// Goal buffers plus the general MSE buffer of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monitor {
    params: MonitorParams,
    goals: Vec<ErrorBuffer>,
    mse: ErrorBuffer,
}

impl Monitor {
    pub fn new(n_goals: usize, params: MonitorParams) -> Result<Self> {
        params.validate()?;
        if n_goals == 0 {
            return Err(Error::invalid("monitor needs at least one goal"));
        }
        Ok(Monitor {
            params,
            goals: vec![ErrorBuffer::new(params.goal_capacity_init); n_goals],
            mse: ErrorBuffer::new(params.mse_capacity),
        })
    }

    pub fn params(&self) -> &MonitorParams {
        &self.params
    }

    pub fn goal_buffer(&self, goal: usize) -> &ErrorBuffer {
        &self.goals[goal]
    }

    pub fn mse_buffer(&self) -> &ErrorBuffer {
        &self.mse
    }

    /// Capacity shared by all goal buffers.
    pub fn goal_capacity(&self) -> usize {
        self.goals[0].capacity()
    }

    pub fn push_goal_error(&mut self, goal: usize, pe: f64) -> Result<()> {
        self.goals
            .get_mut(goal)
            .ok_or_else(|| Error::invalid(format!("no goal {goal}")))?
            .push(pe)
    }

    pub fn goal_trend(&self, goal: usize) -> TrendReport {
        self.goals[goal].trend(self.params.goal_regression_min)
    }

    pub fn goal_trends(&self) -> Vec<TrendReport> {
        (0..self.goals.len()).map(|g| self.goal_trend(g)).collect()
    }

    pub fn mse_trend(&self) -> TrendReport {
        self.mse.trend(self.params.mse_regression_min)
    }

    pub fn apply_mse_slope(&mut self, slope: f64) {
        adjust_capacity(
            &mut self.goals,
            slope,
            self.params.goal_capacity_min,
            self.params.goal_capacity_max,
        );
    }

    /// Appends a test MSE, recomputes the general trend and adjusts the goal
    /// buffer capacity once. Returns the new trend.
    pub fn record_mse(&mut self, mse: f64) -> Result<TrendReport> {
        if !mse.is_finite() || mse < 0.0 {
            return Err(Error::invalid(format!("MSE {mse} must be finite and >= 0")));
        }
        self.mse.push_unchecked(mse);
        let trend = self.mse_trend();
        self.apply_mse_slope(trend.effective_slope());
        Ok(trend)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_examples() {
        assert_eq!(regression_slope(&[1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert!((regression_slope(&[0.0, 1.0, 2.0, 3.0, 4.0]).unwrap() - 1.0).abs() < 1e-15);
        // sum (i - 1.5)(v - 2.525) / 5 with v = [3.0, 2.5, 2.6, 2.0]
        let s = regression_slope(&[3.0, 2.5, 2.6, 2.0]).unwrap();
        assert!((s + 0.29).abs() < 1e-12, "{s}");
        assert!(regression_slope(&[1.0]).is_err());
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ErrorBuffer::new(3);
        for v in [1.0, 2.0, 3.0, 4.0] {
            b.push(v).unwrap();
        }
        assert_eq!(b.values(), vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn push_validation() {
        let mut b = ErrorBuffer::new(3);
        b.push(0.0).unwrap();
        assert_eq!(b.len(), 1);
        assert!(b.push(-0.1).is_err());
        assert!(b.push(f64::NAN).is_err());
        assert!(b.push(f64::INFINITY).is_err());
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn capacity_steps() {
        let mut bufs = vec![ErrorBuffer::new(10)];
        adjust_capacity(&mut bufs, 0.01, 10, 50);
        assert_eq!(bufs[0].capacity(), 11);
        let mut bufs = vec![ErrorBuffer::new(50)];
        adjust_capacity(&mut bufs, 0.01, 10, 50);
        assert_eq!(bufs[0].capacity(), 50);
        let mut bufs = vec![ErrorBuffer::new(10)];
        adjust_capacity(&mut bufs, -0.01, 10, 50);
        assert_eq!(bufs[0].capacity(), 10);
        adjust_capacity(&mut bufs, 0.0, 10, 50);
        assert_eq!(bufs[0].capacity(), 10);
    }

    #[test]
    fn shrinking_evicts_oldest() {
        let mut b = ErrorBuffer::new(12);
        for v in 0..12 {
            b.push(v as f64).unwrap();
        }
        let mut bufs = vec![b];
        adjust_capacity(&mut bufs, -1.0, 10, 50);
        assert_eq!(bufs[0].len(), 11);
        assert_eq!(bufs[0].values()[0], 1.0);
    }

    #[test]
    fn prediction_error_examples() {
        assert_eq!(prediction_error(&[0.3, 0.1], &[0.3, 0.1]).unwrap(), 0.0);
        assert_eq!(
            prediction_error(&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap(),
            1.0
        );
        assert!((prediction_error(&[0.2, 0.4], &[0.5, 0.8]).unwrap() - 0.5).abs() < 1e-15);
        assert!(prediction_error(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn goal_trend_needs_five() {
        let mut b = ErrorBuffer::new(10);
        for v in [5.0, 4.0, 3.0, 2.0] {
            b.push(v).unwrap();
        }
        assert!(!b.trend(5).defined);
        b.push(1.0).unwrap();
        let t = b.trend(5);
        assert!(t.defined);
        assert!((t.slope + 1.0).abs() < 1e-15);
    }

    #[test]
    fn trend_after_wraparound_matches_contents() {
        let mut b = ErrorBuffer::new(5);
        for v in 0..13 {
            b.push((v * v) as f64).unwrap();
        }
        let t = b.trend(5);
        assert_eq!(t.slope, regression_slope(&b.values()).unwrap());
    }

    #[test]
    fn monitor_shares_capacity() {
        let mut m = Monitor::new(9, MonitorParams::default()).unwrap();
        m.record_mse(0.1).unwrap();
        assert_eq!(m.goal_capacity(), 10);
        let t = m.record_mse(0.2).unwrap();
        assert!(t.defined && t.slope > 0.0);
        for g in 0..9 {
            assert_eq!(m.goal_buffer(g).capacity(), 11);
        }
        assert!(m.record_mse(f64::NAN).is_err());
        assert!(m.push_goal_error(9, 0.1).is_err());
    }

    #[test]
    fn mse_buffer_bounded() {
        let mut m = Monitor::new(1, MonitorParams::default()).unwrap();
        for i in 0..25 {
            m.record_mse(i as f64).unwrap();
            assert!(m.mse_buffer().len() <= 10);
        }
    }
}
