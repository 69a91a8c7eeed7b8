//! Inverse model (goal to motor), forward model (motor to sensory) and the
//! episodic memory replayed alongside every training batch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nnet::{mse_loss, Activation, AdaDeltaParams, LayerSpec, Network};
use crate::world::{MotorCommand, TestSet, VisuoMotorSample};
use crate::{check_dim, Error, Result, SensoryState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    pub inverse_hidden: Vec<usize>,
    pub forward_hidden: Vec<usize>,
    /// Dropout after each hidden layer of the inverse model.
    pub dropout: f64,
    pub memory_capacity: usize,
    pub memory_insert_prob: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            inverse_hidden: vec![64, 32],
            forward_hidden: vec![32, 64],
            dropout: 0.1,
            memory_capacity: 1000,
            memory_insert_prob: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InverseModel {
    pub net: Network,
}

impl InverseModel {
    pub fn new(sensory_dim: usize, hidden: &[usize], dropout: f64, seed: u64) -> Result<Self> {
        let mut specs: Vec<LayerSpec> = hidden
            .iter()
            .map(|&w| LayerSpec::new(w, Activation::Relu).with_dropout(dropout))
            .collect();
        specs.push(LayerSpec::new(2, Activation::Linear));
        Ok(InverseModel {
            net: Network::new(&specs, sensory_dim, seed)?,
        })
    }

    /// Best known command for reaching `goal`, clamped into the workspace.
    pub fn infer_command(&self, goal: &[f64]) -> Result<MotorCommand> {
        let out = self.net.predict(goal)?;
        Ok(MotorCommand::new(out[0], out[1]).clamped())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardModel {
    pub net: Network,
}

impl ForwardModel {
    pub fn new(sensory_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut specs: Vec<LayerSpec> = hidden
            .iter()
            .map(|&w| LayerSpec::new(w, Activation::Relu))
            .collect();
        specs.push(LayerSpec::new(sensory_dim, Activation::Sigmoid));
        Ok(ForwardModel {
            net: Network::new(&specs, 2, seed)?,
        })
    }

    pub fn predict_sensory(&self, cmd: MotorCommand) -> Result<SensoryState> {
        self.net.predict(&[cmd.x, cmd.y])
    }
}

/// Bounded store of past samples; each offer is accepted with a fixed
/// probability and, once full, replaces a uniformly chosen slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodicMemory {
    store: Vec<VisuoMotorSample>,
    capacity: usize,
    insert_prob: f64,
    #[serde(skip, default = "detached_rng")]
    rng: ChaCha8Rng,
}

fn detached_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

impl EpisodicMemory {
    pub fn new(capacity: usize, insert_prob: f64, seed: u64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("memory capacity must be positive"));
        }
        if !(0.0..=1.0).contains(&insert_prob) {
            return Err(Error::invalid(format!(
                "insert probability {insert_prob} outside [0, 1]"
            )));
        }
        Ok(EpisodicMemory {
            store: Vec::with_capacity(capacity),
            capacity,
            insert_prob,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn samples(&self) -> &[VisuoMotorSample] {
        &self.store
    }

    /// Returns the slot written, if any.
    pub fn offer(&mut self, sample: VisuoMotorSample) -> Option<usize> {
        if self.rng.random::<f64>() >= self.insert_prob {
            return None;
        }
        if self.store.len() < self.capacity {
            self.store.push(sample);
            Some(self.store.len() - 1)
        } else {
            let slot = self.rng.random_range(0..self.capacity);
            self.store[slot] = sample;
            Some(slot)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateLosses {
    pub forward: f64,
    pub inverse: f64,
    pub training_samples: usize,
}

/// One online update: the batch plus a snapshot of the memory form the
/// training set of a single AdaDelta step for each model; the batch is then
/// offered to the memory.
pub fn update_models<R: Rng + ?Sized>(
    inverse: &mut InverseModel,
    forward: &mut ForwardModel,
    batch: &[VisuoMotorSample],
    memory: &mut EpisodicMemory,
    params: &AdaDeltaParams,
    rng: &mut R,
) -> Result<UpdateLosses> {
    if batch.is_empty() {
        return Err(Error::Empty("update batch"));
    }
    let n = batch.len() + memory.len();
    let mut motors = Vec::with_capacity(n);
    let mut sensories = Vec::with_capacity(n);
    for s in batch.iter().chain(memory.samples()) {
        motors.push([s.motor.x, s.motor.y]);
        sensories.push(s.sensory.as_slice());
    }
    let fwd = forward.net.train_batch(&motors, &sensories, params, rng)?;
    let inv = inverse.net.train_batch(&sensories, &motors, params, rng)?;
    for s in batch {
        memory.offer(s.clone());
    }
    Ok(UpdateLosses {
        forward: fwd,
        inverse: inv,
        training_samples: n,
    })
}

/// Mean over the test set of the forward model's per-sample MSE.
pub fn forward_test_mse(forward: &ForwardModel, test: &TestSet) -> Result<f64> {
    test_mse(test, |s| {
        let pred = forward.predict_sensory(s.motor)?;
        mse_loss(&pred, &s.sensory)
    })
}

/// Mean over the test set of the inverse model's per-sample MSE.
pub fn inverse_test_mse(inverse: &InverseModel, test: &TestSet) -> Result<f64> {
    test_mse(test, |s| {
        check_dim(inverse.net.input_dim(), s.sensory.len())?;
        let cmd = inverse.infer_command(&s.sensory)?;
        mse_loss(&[cmd.x, cmd.y], &[s.motor.x, s.motor.y])
    })
}

fn test_mse(test: &TestSet, mut err: impl FnMut(&VisuoMotorSample) -> Result<f64>) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let mut total = 0.0;
    for s in &test.samples {
        total += err(s)?;
    }
    Ok(total / test.len() as f64)
}
