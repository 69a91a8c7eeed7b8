//! Compression of rendered images into sensory states.
//!
//! The autoencoder is trained once before any experiment and then frozen.
//! Its latent layer is sigmoidal so that codes lie in `[0, 1]^d`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nnet::{Activation, AdaDeltaParams, LayerSpec, Network};
use crate::world::{render, Image, MotorCommand, Scene, ViewParams};
use crate::{check_dim, Error, Result, SensoryState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoencoderArch {
    pub hidden: usize,
    pub latent: usize,
}

impl Default for AutoencoderArch {
    fn default() -> Self {
        AutoencoderArch {
            hidden: 64,
            latent: 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub adadelta: AdaDeltaParams,
    pub seed: u64,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        PretrainOptions {
            epochs: 40,
            batch_size: 16,
            adadelta: AdaDeltaParams::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderModel {
    pub encoder_net: Network,
    pub decoder_net: Network,
}

impl AutoencoderModel {
    pub fn new(image_dim: usize, arch: AutoencoderArch, seed: u64) -> Result<Self> {
        let specs = [
            LayerSpec::new(arch.hidden, Activation::Relu),
            LayerSpec::new(arch.latent, Activation::Sigmoid),
            LayerSpec::new(arch.hidden, Activation::Relu),
            LayerSpec::new(image_dim, Activation::Sigmoid),
        ];
        let (encoder_net, decoder_net) = Network::new(&specs, image_dim, seed)?.split_at(2)?;
        Ok(AutoencoderModel {
            encoder_net,
            decoder_net,
        })
    }

    pub fn image_dim(&self) -> usize {
        self.encoder_net.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder_net.output_dim()
    }

    pub fn encode(&self, img: &Image) -> Result<SensoryState> {
        check_dim(self.image_dim(), img.pixels.len())?;
        self.encoder_net.predict(&img.pixels)
    }

    pub fn decode(&self, code: &[f64]) -> Result<Vec<f64>> {
        self.decoder_net.predict(code)
    }

    pub fn reconstruct(&self, img: &Image) -> Result<Vec<f64>> {
        self.decode(&self.encode(img)?)
    }

    /// Mean over images of the per-pixel reconstruction MSE.
    pub fn reconstruction_mse(&self, images: &[Image]) -> Result<f64> {
        if images.is_empty() {
            return Err(Error::Empty("images"));
        }
        let mut total = 0.0;
        for img in images {
            total += crate::nnet::mse_loss(&self.reconstruct(img)?, &img.pixels)?;
        }
        Ok(total / images.len() as f64)
    }
}

/// Trains encoder and decoder jointly on reconstruction MSE with shuffled
/// mini-batches. Returns the model and the mean training loss per epoch.
pub fn pretrain(
    images: &[Image],
    arch: AutoencoderArch,
    opts: &PretrainOptions,
) -> Result<(AutoencoderModel, Vec<f64>)> {
    if images.is_empty() {
        return Err(Error::Empty("pretraining corpus"));
    }
    if opts.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    opts.adadelta.validate()?;
    let dim = images[0].pixels.len();
    for img in images {
        check_dim(dim, img.pixels.len())?;
    }
    let init = AutoencoderModel::new(dim, arch, opts.seed)?;
    if opts.epochs == 0 {
        return Ok((init, Vec::new()));
    }
    let mut net = init.encoder_net.concat(init.decoder_net)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed_0fae);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut epoch_losses = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(opts.batch_size) {
            let batch: Vec<&[f64]> = chunk.iter().map(|&i| images[i].pixels.as_slice()).collect();
            let loss = net
                .train_batch(&batch, &batch, &opts.adadelta, &mut rng)
                .map_err(|e| match e {
                    Error::Divergence(m) => {
                        Error::Divergence(format!("autoencoder epoch {epoch}: {m}"))
                    }
                    other => other,
                })?;
            sum += loss;
            batches += 1;
        }
        epoch_losses.push(sum / batches as f64);
    }
    let (encoder_net, decoder_net) = net.split_at(2)?;
    Ok((
        AutoencoderModel {
            encoder_net,
            decoder_net,
        },
        epoch_losses,
    ))
}

/// Training-free encoder: mean intensity over `dim` contiguous row-major
/// pixel ranges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub image_dim: usize,
    pub dim: usize,
}

impl FeatureEncoder {
    pub fn new(image_dim: usize, dim: usize) -> Result<Self> {
        if dim == 0 || dim > image_dim {
            return Err(Error::invalid(format!(
                "cannot pool {image_dim} pixels into {dim} features"
            )));
        }
        Ok(FeatureEncoder { image_dim, dim })
    }

    pub fn encode(&self, img: &Image) -> Result<SensoryState> {
        check_dim(self.image_dim, img.pixels.len())?;
        Ok((0..self.dim)
            .map(|k| {
                let lo = k * self.image_dim / self.dim;
                let hi = (k + 1) * self.image_dim / self.dim;
                img.pixels[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Encoder {
    Autoencoder(AutoencoderModel),
    Features(FeatureEncoder),
}

impl Encoder {
    pub fn encode(&self, img: &Image) -> Result<SensoryState> {
        match self {
            Encoder::Autoencoder(m) => m.encode(img),
            Encoder::Features(f) => f.encode(img),
        }
    }

    pub fn sensory_dim(&self) -> usize {
        match self {
            Encoder::Autoencoder(m) => m.latent_dim(),
            Encoder::Features(f) => f.dim,
        }
    }

    pub fn image_dim(&self) -> usize {
        match self {
            Encoder::Autoencoder(m) => m.image_dim(),
            Encoder::Features(f) => f.image_dim,
        }
    }
}

/// Images rendered on a `per_side x per_side` grid of motor positions
/// spanning the whole workspace.
pub fn grid_corpus(
    scene: &Scene,
    view: &ViewParams,
    per_side: usize,
) -> Result<Vec<(MotorCommand, Image)>> {
    if per_side < 2 {
        return Err(Error::invalid(
            "corpus grid needs at least 2 points per side",
        ));
    }
    let step = 1.0 / (per_side - 1) as f64;
    let mut out = Vec::with_capacity(per_side * per_side);
    for i in 0..per_side {
        for j in 0..per_side {
            let pos = MotorCommand::new(j as f64 * step, i as f64 * step);
            out.push((pos, render(scene, view, pos)?));
        }
    }
    Ok(out)
}

/// Per-pixel mean of a corpus.
pub fn mean_image(images: &[Image]) -> Result<Vec<f64>> {
    let first = images.first().ok_or(Error::Empty("images"))?;
    let mut mean = vec![0.0; first.pixels.len()];
    for img in images {
        check_dim(mean.len(), img.pixels.len())?;
        for (m, p) in mean.iter_mut().zip(&img.pixels) {
            *m += p;
        }
    }
    let n = images.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_corpus() -> Vec<Image> {
        let scene = Scene::generate(6, 2);
        let view = ViewParams {
            image_width: 6,
            image_height: 6,
            window: 0.3,
        };
        grid_corpus(&scene, &view, 8)
            .unwrap()
            .into_iter()
            .map(|(_, img)| img)
            .collect()
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let imgs = tiny_corpus();
        let arch = AutoencoderArch {
            hidden: 8,
            latent: 3,
        };
        let opts = PretrainOptions {
            epochs: 0,
            seed: 4,
            ..Default::default()
        };
        let (model, losses) = pretrain(&imgs, arch, &opts).unwrap();
        assert!(losses.is_empty());
        assert_eq!(model, AutoencoderModel::new(36, arch, 4).unwrap());
    }

    #[test]
    fn pretraining_is_deterministic_and_reduces_loss() {
        let imgs = tiny_corpus();
        let arch = AutoencoderArch {
            hidden: 8,
            latent: 3,
        };
        let opts = PretrainOptions {
            epochs: 5,
            seed: 1,
            ..Default::default()
        };
        let (a, la) = pretrain(&imgs, arch, &opts).unwrap();
        let (b, lb) = pretrain(&imgs, arch, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert!(la.last().unwrap() < la.first().unwrap());
    }

    #[test]
    fn codes_in_unit_cube() {
        let imgs = tiny_corpus();
        let model = AutoencoderModel::new(
            36,
            AutoencoderArch {
                hidden: 8,
                latent: 3,
            },
            0,
        )
        .unwrap();
        for img in &imgs {
            let c = model.encode(img).unwrap();
            assert_eq!(c.len(), 3);
            assert!(c.iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(c, model.encode(img).unwrap());
        }
        let wrong = Image::new(2, 2, vec![0.0; 4]).unwrap();
        assert!(model.encode(&wrong).is_err());
    }

    #[test]
    fn pretrain_rejects_empty_corpus() {
        assert!(pretrain(&[], AutoencoderArch::default(), &PretrainOptions::default()).is_err());
    }

    #[test]
    fn feature_encoder_pools_bands() {
        let f = FeatureEncoder::new(4, 2).unwrap();
        let img = Image::new(2, 2, vec![0.0, 1.0, 0.5, 0.5]).unwrap();
        assert_eq!(f.encode(&img).unwrap(), vec![0.5, 0.5]);
        assert!(FeatureEncoder::new(4, 5).is_err());
    }

    #[test]
    fn mean_image_of_two() {
        let a = Image::new(1, 2, vec![0.0, 1.0]).unwrap();
        let b = Image::new(1, 2, vec![1.0, 1.0]).unwrap();
        assert_eq!(mean_image(&[a, b]).unwrap(), vec![0.5, 1.0]);
    }
}
