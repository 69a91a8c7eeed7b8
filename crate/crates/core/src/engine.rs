//! Experiment orchestration.
//!
//! One iteration of [`Agent::step`] processes information in this order:
//!
//! 1. goal switch check and, if needed, goal selection;
//! 2. inverse model proposes a command for the goal position;
//! 3. exploration noise (or a greedy random movement) is applied;
//! 4. the camera follows the trajectory; every waypoint is observed;
//! 5. the prediction error for the executed command goes to the goal buffer;
//! 6. every full batch of samples updates the models (and the goal map);
//! 7. every `mse_log_period` iterations the test MSEs are computed and the
//!    general trend re-regulates buffer capacity and noise;
//! 8. the iteration is logged.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{self, AutoencoderArch, Encoder, FeatureEncoder, PretrainOptions};
use crate::models::{self, EpisodicMemory, ForwardModel, InverseModel, ModelParams};
use crate::monitor::{prediction_error, Monitor, MonitorParams};
use crate::nnet::AdaDeltaParams;
use crate::policy::{
    apply_noise, select_goal, GoalParams, GoalSelectionState, NoiseMode, NoisePolicy,
    SwitchDecision,
};
use crate::som::{Som, SomParams};
use crate::world::{
    self, Image, MotorCommand, RobotState, Scene, TestSet, ViewParams, VisuoMotorSample,
};
use crate::{Error, Result, SensoryState};

pub const CONFIG_FORMAT: &str = "pedyn-config/1";
pub const ENCODER_FORMAT: &str = "pedyn-encoder/1";
pub const CHECKPOINT_FORMAT: &str = "pedyn-checkpoint/1";

/// Rows of the design of experiments: `(id, fixed_goal_som,
/// fixed_expl_noise, greedy_move_prob)`.
pub const DESIGN_OF_EXPERIMENTS: [(u8, bool, bool, f64); 8] = [
    (0, false, false, 0.0),
    (1, true, false, 0.0),
    (2, false, true, 0.0),
    (3, true, true, 0.0),
    (4, false, false, 0.03),
    (5, true, false, 0.03),
    (6, false, true, 0.03),
    (7, true, true, 0.03),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeCommand {
    /// Forward model is queried with the noisy command actually executed.
    Executed,
    /// Forward model is queried with the inverse model's clean command.
    Clean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SomUpdate {
    /// One goal-map step per sample of each training batch.
    PerSample,
    /// One goal-map step per training batch, on the batch mean.
    PerBatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Autoencoder,
    Features,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldParams {
    pub blobs: usize,
    #[serde(flatten)]
    pub view: ViewParams,
    pub trajectory_step: f64,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            blobs: 6,
            view: ViewParams::default(),
            trajectory_step: 0.02,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderParams {
    pub kind: EncoderKind,
    pub sensory_dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Pretraining images are rendered on a `corpus_grid x corpus_grid` grid.
    pub corpus_grid: usize,
    /// Random positions held out to evaluate reconstruction.
    pub heldout: usize,
}

impl Default for EncoderParams {
    fn default() -> Self {
        EncoderParams {
            kind: EncoderKind::Autoencoder,
            sensory_dim: 8,
            hidden: 64,
            epochs: 40,
            batch_size: 16,
            corpus_grid: 45,
            heldout: 200,
        }
    }
}

/// One experiment: a row of the design of experiments plus every
/// hyperparameter of the architecture and the RNG seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub format: String,
    pub experiment_id: Option<u8>,
    pub fixed_goal_som: bool,
    pub fixed_expl_noise: bool,
    pub greedy_move_prob: f64,
    pub iterations: usize,
    pub runs: usize,
    pub seed: u64,
    pub mse_log_period: usize,
    pub batch_size: usize,
    pub test_set_size: usize,
    pub pe_command: PeCommand,
    pub som_update: SomUpdate,
    /// Sensory states used to pre-train a fixed goal map.
    pub som_pretrain_samples: usize,
    pub world: WorldParams,
    pub encoder: EncoderParams,
    pub som: SomParams,
    pub models: ModelParams,
    pub adadelta: AdaDeltaParams,
    pub monitor: MonitorParams,
    pub goals: GoalParams,
    /// `mode` is taken from `fixed_expl_noise`.
    pub noise: NoisePolicy,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            format: CONFIG_FORMAT.to_string(),
            experiment_id: None,
            fixed_goal_som: false,
            fixed_expl_noise: false,
            greedy_move_prob: 0.03,
            iterations: 2000,
            runs: 5,
            seed: 1,
            mse_log_period: 40,
            batch_size: 16,
            test_set_size: 200,
            pe_command: PeCommand::Executed,
            som_update: SomUpdate::PerSample,
            som_pretrain_samples: 2000,
            world: WorldParams::default(),
            encoder: EncoderParams::default(),
            // A run feeds roughly 16k samples to the goal map; decaying over
            // 2000 would freeze a "moving" map within the first few hundred
            // iterations.
            som: SomParams {
                tau: 20_000.0,
                ..SomParams::default()
            },
            models: ModelParams::default(),
            adadelta: AdaDeltaParams::default(),
            monitor: MonitorParams::default(),
            goals: GoalParams::default(),
            noise: NoisePolicy::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CONFIG_FORMAT {
            return Err(Error::Schema(format!(
                "unsupported config format {:?}",
                self.format
            )));
        }
        if !(0.0..=1.0).contains(&self.greedy_move_prob) {
            return Err(Error::invalid("greedy_move_prob outside [0, 1]"));
        }
        if self.mse_log_period == 0
            || self.batch_size == 0
            || self.test_set_size == 0
            || self.runs == 0
        {
            return Err(Error::invalid(
                "mse_log_period, batch_size, test_set_size and runs must be positive",
            ));
        }
        if !(self.world.trajectory_step > 0.0) || !(self.world.view.window > 0.0) {
            return Err(Error::invalid(
                "trajectory step and camera window must be positive",
            ));
        }
        if self.world.view.image_width == 0 || self.world.view.image_height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if self.encoder.sensory_dim == 0 || self.encoder.sensory_dim > self.world.view.pixel_count()
        {
            return Err(Error::invalid("sensory_dim must be in [1, pixel count]"));
        }
        if !(0.0..=1.0).contains(&self.goals.greedy_goal_prob)
            || !(self.goals.switch_threshold >= 0.0)
        {
            return Err(Error::invalid("invalid goal-selection parameters"));
        }
        if let Some(id) = self.experiment_id {
            let row = DESIGN_OF_EXPERIMENTS
                .get(id as usize)
                .ok_or_else(|| Error::invalid(format!("no experiment {id}")))?;
            if (row.1, row.2, row.3)
                != (
                    self.fixed_goal_som,
                    self.fixed_expl_noise,
                    self.greedy_move_prob,
                )
            {
                return Err(Error::invalid(format!(
                    "flags do not match experiment {id}"
                )));
            }
        }
        self.som.validate()?;
        self.adadelta.validate()?;
        self.monitor.validate()?;
        self.noise_policy().validate()?;
        Ok(())
    }

    /// This configuration with the flags of one design-of-experiments row.
    pub fn for_experiment(&self, id: u8) -> Result<Self> {
        let (id, fixed_som, fixed_noise, greedy) = *DESIGN_OF_EXPERIMENTS
            .get(id as usize)
            .ok_or_else(|| Error::invalid(format!("no experiment {id}")))?;
        Ok(ExperimentConfig {
            experiment_id: Some(id),
            fixed_goal_som: fixed_som,
            fixed_expl_noise: fixed_noise,
            greedy_move_prob: greedy,
            ..self.clone()
        })
    }

    pub fn noise_policy(&self) -> NoisePolicy {
        NoisePolicy {
            mode: if self.fixed_expl_noise {
                NoiseMode::Fixed
            } else {
                NoiseMode::Adaptive
            },
            ..self.noise
        }
    }

    pub fn run_seeds(&self) -> Vec<u64> {
        (0..self.runs as u64)
            .map(|r| self.seed.wrapping_add(r))
            .collect()
    }
}

/// SplitMix64 of `base ^ tag`, used to give each shared input its own seed.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z =
        (base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TAG_SCENE: u64 = 1;
const TAG_ENCODER: u64 = 2;
const TAG_HELDOUT: u64 = 3;
const TAG_TEST_SET: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub kind: EncoderKind,
    pub trained: bool,
    pub corpus_size: usize,
    pub heldout_size: usize,
    pub epochs: usize,
    pub epoch_losses: Vec<f64>,
    pub train_mse: Option<f64>,
    pub heldout_mse: Option<f64>,
    /// Held-out MSE of predicting the per-pixel corpus mean.
    pub baseline_mse: f64,
    pub below_baseline: Option<bool>,
}

/// Pretrained encoder together with the scene it was trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderArtifact {
    pub format: String,
    pub scene: Scene,
    pub view: ViewParams,
    pub encoder: Encoder,
    pub report: PretrainReport,
}

fn heldout_images(scene: &Scene, view: &ViewParams, n: usize, seed: u64) -> Result<Vec<Image>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| world::render(scene, view, MotorCommand::new(rng.random(), rng.random())))
        .collect()
}

fn baseline_mse(mean: &[f64], images: &[Image]) -> Result<f64> {
    let mut total = 0.0;
    for img in images {
        total += crate::nnet::mse_loss(mean, &img.pixels)?;
    }
    Ok(total / images.len().max(1) as f64)
}

/// Renders the corpus, trains (or builds) the encoder and evaluates it on
/// held-out random views.
pub fn pretrain_encoder(cfg: &ExperimentConfig) -> Result<EncoderArtifact> {
    let scene = Scene::generate(cfg.world.blobs, derive_seed(cfg.seed, TAG_SCENE));
    let view = cfg.world.view;
    let corpus: Vec<Image> = encoder::grid_corpus(&scene, &view, cfg.encoder.corpus_grid)?
        .into_iter()
        .map(|(_, img)| img)
        .collect();
    let heldout = heldout_images(
        &scene,
        &view,
        cfg.encoder.heldout.max(1),
        derive_seed(cfg.seed, TAG_HELDOUT),
    )?;
    let mean = encoder::mean_image(&corpus)?;
    let baseline = baseline_mse(&mean, &heldout)?;
    let (encoder, report) = match cfg.encoder.kind {
        EncoderKind::Features => (
            Encoder::Features(FeatureEncoder::new(
                view.pixel_count(),
                cfg.encoder.sensory_dim,
            )?),
            PretrainReport {
                kind: EncoderKind::Features,
                trained: false,
                corpus_size: corpus.len(),
                heldout_size: heldout.len(),
                epochs: 0,
                epoch_losses: Vec::new(),
                train_mse: None,
                heldout_mse: None,
                baseline_mse: baseline,
                below_baseline: None,
            },
        ),
        EncoderKind::Autoencoder => {
            let arch = AutoencoderArch {
                hidden: cfg.encoder.hidden,
                latent: cfg.encoder.sensory_dim,
            };
            let opts = PretrainOptions {
                epochs: cfg.encoder.epochs,
                batch_size: cfg.encoder.batch_size,
                adadelta: cfg.adadelta,
                seed: derive_seed(cfg.seed, TAG_ENCODER),
            };
            let (model, losses) = encoder::pretrain(&corpus, arch, &opts)?;
            let train_mse = model.reconstruction_mse(&corpus)?;
            let heldout_mse = model.reconstruction_mse(&heldout)?;
            let report = PretrainReport {
                kind: EncoderKind::Autoencoder,
                trained: cfg.encoder.epochs > 0,
                corpus_size: corpus.len(),
                heldout_size: heldout.len(),
                epochs: cfg.encoder.epochs,
                epoch_losses: losses,
                train_mse: Some(train_mse),
                heldout_mse: Some(heldout_mse),
                baseline_mse: baseline,
                below_baseline: Some(heldout_mse < baseline),
            };
            (Encoder::Autoencoder(model), report)
        }
    };
    Ok(EncoderArtifact {
        format: ENCODER_FORMAT.to_string(),
        scene,
        view,
        encoder,
        report,
    })
}

/// Immutable inputs shared by every run of an experiment series.
#[derive(Clone, Debug, PartialEq)]
pub struct SharedInputs {
    pub scene: Scene,
    pub view: ViewParams,
    pub encoder: Encoder,
    pub test_set: TestSet,
}

impl SharedInputs {
    pub fn from_artifact(artifact: &EncoderArtifact, cfg: &ExperimentConfig) -> Result<Self> {
        if artifact.format != ENCODER_FORMAT {
            return Err(Error::Schema(format!(
                "unsupported encoder format {:?}",
                artifact.format
            )));
        }
        let test_set = world::build_test_set(
            &artifact.scene,
            &artifact.view,
            &artifact.encoder,
            cfg.test_set_size,
            derive_seed(cfg.seed, TAG_TEST_SET),
        )?;
        Ok(SharedInputs {
            scene: artifact.scene.clone(),
            view: artifact.view,
            encoder: artifact.encoder.clone(),
            test_set,
        })
    }

    pub fn prepare(cfg: &ExperimentConfig) -> Result<Self> {
        Self::from_artifact(&pretrain_encoder(cfg)?, cfg)
    }

    pub fn sensory_dim(&self) -> usize {
        self.encoder.sensory_dim()
    }

    pub fn observe(&self, pos: MotorCommand) -> Result<VisuoMotorSample> {
        world::observe(&self.scene, &self.view, &self.encoder, pos)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MseRecord {
    pub iteration: usize,
    pub forward: f64,
    pub inverse: f64,
    pub slope: Option<f64>,
    pub buffer_len: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub goal_id: usize,
    pub switch: Option<SwitchDecision>,
    pub cmd: MotorCommand,
    pub executed: MotorCommand,
    pub greedy_move: bool,
    pub sigma: f64,
    pub pe: f64,
    pub goal_slope: Option<f64>,
    pub buf_capacity: usize,
    pub move_amplitude: f64,
    pub mse: Option<MseRecord>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub experiment_id: Option<u8>,
    pub seed: u64,
    pub iterations: Vec<IterationRecord>,
    pub mse: Vec<MseRecord>,
    pub model_updates: usize,
    pub samples_observed: usize,
    /// Samples left over in an incomplete batch when the run ended.
    pub discarded_samples: usize,
}

impl RunLog {
    pub fn final_forward_mse(&self) -> Option<f64> {
        self.mse.last().map(|m| m.forward)
    }

    pub fn final_inverse_mse(&self) -> Option<f64> {
        self.mse.last().map(|m| m.inverse)
    }
}

#[derive(Debug)]
pub struct RunFailure {
    pub log: RunLog,
    pub error: Error,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "run aborted after {} iterations: {}",
            self.log.iterations.len(),
            self.error
        )
    }
}

impl std::error::Error for RunFailure {}

/// Complete mutable state of a run, serializable for inspection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub iteration: usize,
    pub robot: RobotState,
    pub som: Som,
    pub inverse: InverseModel,
    pub forward: ForwardModel,
    pub memory: Vec<VisuoMotorSample>,
    pub monitor: Monitor,
    pub goal_state: GoalSelectionState,
    pub sigma: f64,
    pub mse_slope: Option<f64>,
    pub pending_samples: usize,
}

pub struct Agent<'a> {
    cfg: &'a ExperimentConfig,
    shared: &'a SharedInputs,
    seed: u64,
    noise: NoisePolicy,
    som: Som,
    inverse: InverseModel,
    forward: ForwardModel,
    memory: EpisodicMemory,
    monitor: Monitor,
    goal_state: GoalSelectionState,
    robot: RobotState,
    pending: Vec<VisuoMotorSample>,
    sigma: f64,
    mse_slope: Option<f64>,
    goal_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    train_rng: ChaCha8Rng,
    iteration: usize,
    log: RunLog,
}

impl<'a> Agent<'a> {
    /// Fresh models, memory and buffers. A fixed goal map is pre-trained on
    /// views of random positions and then frozen.
    pub fn new(cfg: &'a ExperimentConfig, shared: &'a SharedInputs, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let d = shared.sensory_dim();
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        let mut next = || master.random::<u64>();
        let inverse = InverseModel::new(d, &cfg.models.inverse_hidden, cfg.models.dropout, next())?;
        let forward = ForwardModel::new(d, &cfg.models.forward_hidden, next())?;
        let mut som = Som::new(cfg.som, d, next())?;
        let memory = EpisodicMemory::new(
            cfg.models.memory_capacity,
            cfg.models.memory_insert_prob,
            next(),
        )?;
        let mut goal_rng = ChaCha8Rng::seed_from_u64(next());
        let noise_rng = ChaCha8Rng::seed_from_u64(next());
        let train_rng = ChaCha8Rng::seed_from_u64(next());
        let mut world_rng = ChaCha8Rng::seed_from_u64(next());

        if cfg.fixed_goal_som {
            for _ in 0..cfg.som_pretrain_samples {
                let pos = MotorCommand::new(world_rng.random(), world_rng.random());
                som.train_step(&shared.observe(pos)?.sensory)?;
            }
        }
        let start = MotorCommand::new(world_rng.random(), world_rng.random());
        let monitor = Monitor::new(som.len(), cfg.monitor)?;
        let initial_goal = goal_rng.random_range(0..som.len());
        let noise = cfg.noise_policy();
        Ok(Agent {
            cfg,
            shared,
            seed,
            noise,
            som,
            inverse,
            forward,
            memory,
            monitor,
            goal_state: GoalSelectionState::new(initial_goal, cfg.goals),
            robot: RobotState::new(start),
            pending: Vec::with_capacity(2 * cfg.batch_size),
            sigma: noise.exploration_sigma(None),
            mse_slope: None,
            goal_rng,
            noise_rng,
            train_rng,
            iteration: 0,
            log: RunLog {
                experiment_id: cfg.experiment_id,
                seed,
                ..RunLog::default()
            },
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn som(&self) -> &Som {
        &self.som
    }

    pub fn monitor(&self) -> &Monitor {
        &self.monitor
    }

    pub fn memory(&self) -> &EpisodicMemory {
        &self.memory
    }

    pub fn forward_model(&self) -> &ForwardModel {
        &self.forward
    }

    pub fn inverse_model(&self) -> &InverseModel {
        &self.inverse
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn goal_state(&self) -> &GoalSelectionState {
        &self.goal_state
    }

    fn choose_goal(&mut self) -> Result<Option<SwitchDecision>> {
        if self.iteration == 0 {
            let goal = select_goal(&self.monitor.goal_trends(), &mut self.goal_rng)?;
            self.goal_state.set_goal(goal);
            return Ok(None);
        }
        let trend = self.monitor.goal_trend(self.goal_state.current_goal);
        let decision = self.goal_state.should_switch(&trend, &mut self.goal_rng);
        match decision {
            SwitchDecision::Keep => {}
            SwitchDecision::Greedy => {
                let goal = self.goal_rng.random_range(0..self.som.len());
                self.goal_state.set_goal(goal);
            }
            SwitchDecision::Trend => {
                let goal = select_goal(&self.monitor.goal_trends(), &mut self.goal_rng)?;
                self.goal_state.set_goal(goal);
            }
        }
        Ok(Some(decision))
    }

    fn train_on_pending(&mut self) -> Result<()> {
        let bs = self.cfg.batch_size;
        while self.pending.len() >= bs {
            let batch: Vec<VisuoMotorSample> = self.pending.drain(..bs).collect();
            models::update_models(
                &mut self.inverse,
                &mut self.forward,
                &batch,
                &mut self.memory,
                &self.cfg.adadelta,
                &mut self.train_rng,
            )?;
            self.log.model_updates += 1;
            if !self.cfg.fixed_goal_som {
                match self.cfg.som_update {
                    SomUpdate::PerSample => {
                        for s in &batch {
                            self.som.train_step(&s.sensory)?;
                        }
                    }
                    SomUpdate::PerBatch => {
                        let d = self.som.dim();
                        let mut mean: SensoryState = vec![0.0; d];
                        for s in &batch {
                            for (m, v) in mean.iter_mut().zip(&s.sensory) {
                                *m += v / batch.len() as f64;
                            }
                        }
                        self.som.train_step(&mean)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Executes one iteration of the loop.
    pub fn step(&mut self) -> Result<&IterationRecord> {
        let switch = self.choose_goal()?;
        let goal = self.goal_state.current_goal;
        let goal_pos = self.som.position(goal).to_vec();

        let cmd = self.inverse.infer_command(&goal_pos)?;
        let sigma = self.sigma;
        let (executed, greedy_move) =
            apply_noise(cmd, sigma, self.cfg.greedy_move_prob, &mut self.noise_rng);

        let start = self.robot.position;
        let waypoints = self
            .robot
            .trajectory(executed, self.cfg.world.trajectory_step);
        for wp in waypoints {
            self.pending.push(self.shared.observe(wp)?);
            self.log.samples_observed += 1;
        }

        let probe = match self.cfg.pe_command {
            PeCommand::Executed => executed,
            PeCommand::Clean => cmd,
        };
        let predicted = self.forward.predict_sensory(probe)?;
        let pe = prediction_error(&goal_pos, &predicted)?;
        self.monitor.push_goal_error(goal, pe)?;
        let goal_slope = self.monitor.goal_trend(goal).slope();

        self.train_on_pending()?;

        let mut mse = None;
        if self.iteration.is_multiple_of(self.cfg.mse_log_period) {
            let forward = models::forward_test_mse(&self.forward, &self.shared.test_set)?;
            let inverse = models::inverse_test_mse(&self.inverse, &self.shared.test_set)?;
            if !forward.is_finite() || !inverse.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite test MSE at iteration {}",
                    self.iteration
                )));
            }
            let trend = self.monitor.record_mse(forward)?;
            self.mse_slope = trend.slope();
            self.sigma = self.noise.exploration_sigma(self.mse_slope);
            let rec = MseRecord {
                iteration: self.iteration,
                forward,
                inverse,
                slope: self.mse_slope,
                buffer_len: self.monitor.mse_buffer().len(),
            };
            self.log.mse.push(rec);
            mse = Some(rec);
        }

        self.log.iterations.push(IterationRecord {
            iteration: self.iteration,
            goal_id: goal,
            switch,
            cmd,
            executed,
            greedy_move,
            sigma,
            pe,
            goal_slope,
            buf_capacity: self.monitor.goal_capacity(),
            move_amplitude: start.distance(&executed),
            mse,
        });
        self.goal_state.iterations_on_goal += 1;
        self.iteration += 1;
        Ok(self.log.iterations.last().expect("just pushed"))
    }

    /// Runs the remaining iterations; on error the partial log is returned
    /// with the failure.
    pub fn run(mut self) -> std::result::Result<RunLog, RunFailure> {
        while self.iteration < self.cfg.iterations {
            if let Err(error) = self.step() {
                self.log.discarded_samples = self.pending.len();
                return Err(RunFailure {
                    log: self.log,
                    error,
                });
            }
        }
        self.log.discarded_samples = self.pending.len();
        Ok(self.log)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            config: self.cfg.clone(),
            seed: self.seed,
            iteration: self.iteration,
            robot: self.robot,
            som: self.som.clone(),
            inverse: self.inverse.clone(),
            forward: self.forward.clone(),
            memory: self.memory.samples().to_vec(),
            monitor: self.monitor.clone(),
            goal_state: self.goal_state,
            sigma: self.sigma,
            mse_slope: self.mse_slope,
            pending_samples: self.pending.len(),
        }
    }
}

pub fn run_experiment(
    cfg: &ExperimentConfig,
    shared: &SharedInputs,
    seed: u64,
) -> std::result::Result<RunLog, RunFailure> {
    match Agent::new(cfg, shared, seed) {
        Ok(agent) => agent.run(),
        Err(error) => Err(RunFailure {
            log: RunLog {
                experiment_id: cfg.experiment_id,
                seed,
                ..RunLog::default()
            },
            error,
        }),
    }
}

#[derive(Debug)]
pub struct DoeRun {
    pub experiment_id: u8,
    pub seed: u64,
    pub log: RunLog,
    pub error: Option<String>,
    /// Single-threaded wall time of this run.
    pub elapsed_secs: f64,
}

/// All eight experiments times `base.runs` seeds. Run `r` of every
/// experiment uses seed `base.seed + r`. Runs execute on a pool of `jobs`
/// threads; the result order is fixed (experiment-major, then seed).
pub fn run_doe(base: &ExperimentConfig, shared: &SharedInputs, jobs: usize) -> Result<Vec<DoeRun>> {
    let configs = DESIGN_OF_EXPERIMENTS
        .iter()
        .map(|row| base.for_experiment(row.0))
        .collect::<Result<Vec<_>>>()?;
    let tasks: Vec<(&ExperimentConfig, u64)> = configs
        .iter()
        .flat_map(|c| base.run_seeds().into_iter().map(move |s| (c, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let runs = pool.install(|| {
        tasks
            .par_iter()
            .map(|(cfg, seed)| {
                let t0 = Instant::now();
                let (log, error) = match run_experiment(cfg, shared, *seed) {
                    Ok(log) => (log, None),
                    Err(f) => (f.log, Some(f.error.to_string())),
                };
                DoeRun {
                    experiment_id: cfg.experiment_id.expect("canonical config"),
                    seed: *seed,
                    log,
                    error,
                    elapsed_secs: t0.elapsed().as_secs_f64(),
                }
            })
            .collect()
    });
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            iterations: 120,
            test_set_size: 20,
            encoder: EncoderParams {
                kind: EncoderKind::Features,
                ..EncoderParams::default()
            },
            models: ModelParams {
                inverse_hidden: vec![16],
                forward_hidden: vec![16],
                ..ModelParams::default()
            },
            som_pretrain_samples: 50,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn table_rows_match_design() {
        let base = ExperimentConfig::default();
        let c3 = base.for_experiment(3).unwrap();
        assert!(c3.fixed_goal_som && c3.fixed_expl_noise && c3.greedy_move_prob == 0.0);
        let c4 = base.for_experiment(4).unwrap();
        assert!(!c4.fixed_goal_som && !c4.fixed_expl_noise && c4.greedy_move_prob == 0.03);
        assert!(base.for_experiment(8).is_err());
    }

    #[test]
    fn config_json_defaults_fill_in() {
        let cfg = ExperimentConfig::from_json(r#"{"iterations": 10, "som": {"rows": 2}}"#).unwrap();
        assert_eq!(cfg.iterations, 10);
        assert_eq!(cfg.som.rows, 2);
        assert_eq!(cfg.som.cols, 3);
        assert_eq!(cfg.mse_log_period, 40);
        assert!(ExperimentConfig::from_json(r#"{"format": "x"}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"greedy_move_prob": 2.0}"#).is_err());
    }

    #[test]
    fn run_is_deterministic_and_logs_cadence() {
        let cfg = small_config().for_experiment(4).unwrap();
        let shared = SharedInputs::prepare(&cfg).unwrap();
        let a = run_experiment(&cfg, &shared, 5).unwrap();
        let b = run_experiment(&cfg, &shared, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iterations.len(), 120);
        assert_eq!(a.mse.len(), 3);
        assert!(a.mse.iter().all(|m| m.iteration % 40 == 0));
        assert_eq!(a.iterations[0].switch, None);
        assert!(a.model_updates > 0);
        assert_eq!(
            a.samples_observed,
            a.model_updates * cfg.batch_size + a.discarded_samples
        );
    }

    #[test]
    fn fixed_noise_logs_constant_sigma() {
        let cfg = small_config().for_experiment(3).unwrap();
        let shared = SharedInputs::prepare(&cfg).unwrap();
        let log = run_experiment(&cfg, &shared, 1).unwrap();
        assert!(log
            .iterations
            .iter()
            .all(|r| r.sigma == cfg.noise.sigma_fixed));
    }

    #[test]
    fn fixed_som_never_moves() {
        let cfg = small_config().for_experiment(1).unwrap();
        let shared = SharedInputs::prepare(&cfg).unwrap();
        let mut agent = Agent::new(&cfg, &shared, 2).unwrap();
        let before = agent.som().goal_positions();
        for _ in 0..60 {
            agent.step().unwrap();
        }
        assert_eq!(before, agent.som().goal_positions());
    }

    #[test]
    fn zero_iterations_gives_empty_log() {
        let cfg = ExperimentConfig {
            iterations: 0,
            ..small_config()
        };
        let shared = SharedInputs::prepare(&cfg).unwrap();
        let agent = Agent::new(&cfg, &shared, 1).unwrap();
        let ck = agent.checkpoint();
        assert_eq!(ck.iteration, 0);
        let log = agent.run().unwrap();
        assert!(log.iterations.is_empty() && log.mse.is_empty());
    }

    #[test]
    fn one_pe_per_iteration_to_current_goal() {
        let cfg = small_config();
        let shared = SharedInputs::prepare(&cfg).unwrap();
        let mut agent = Agent::new(&cfg, &shared, 3).unwrap();
        for _ in 0..30 {
            let lens: Vec<usize> = (0..9)
                .map(|g| agent.monitor().goal_buffer(g).len())
                .collect();
            let rec = *agent.step().unwrap();
            for (g, &before) in lens.iter().enumerate() {
                let now = agent.monitor().goal_buffer(g).len();
                if g == rec.goal_id {
                    assert!(now == before + 1 || now == agent.monitor().goal_capacity());
                } else {
                    assert!(now <= before);
                }
            }
        }
    }

    #[test]
    fn derive_seed_separates_tags() {
        assert_ne!(derive_seed(1, TAG_SCENE), derive_seed(1, TAG_TEST_SET));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }
}
