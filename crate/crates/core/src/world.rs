//! Procedural 2-DoF camera world.
//!
//! A top-down camera moves over a unit-square workspace covered by Gaussian
//! blobs. The camera sees a square window of side `window` centered at its
//! motor position; pixel centers are sampled on a regular grid inside that
//! window.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::Encoder;
use crate::{Error, Result, SensoryState};

/// Absolute motor position in the normalized workspace `[0, 1]^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotorCommand {
    pub x: f64,
    pub y: f64,
}

impl MotorCommand {
    pub fn new(x: f64, y: f64) -> Self {
        MotorCommand { x, y }
    }

    pub fn clamped(self) -> Self {
        MotorCommand {
            x: self.x.clamp(0.0, 1.0),
            y: self.y.clamp(0.0, 1.0),
        }
    }

    pub fn in_bounds(&self) -> bool {
        (0.0..=1.0).contains(&self.x) && (0.0..=1.0).contains(&self.y)
    }

    pub fn distance(&self, other: &MotorCommand) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.x, self.y]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major grayscale intensities in `[0, 1]`.
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        crate::check_dim(width * height, pixels.len())?;
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("pixel intensity outside [0, 1]"));
        }
        Ok(Image {
            width,
            height,
            pixels,
        })
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub center: [f64; 2],
    pub amplitude: f64,
    pub radius: f64,
}

impl Blob {
    #[inline]
    pub fn intensity(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        self.amplitude * (-(dx * dx + dy * dy) / (2.0 * self.radius * self.radius)).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub blobs: Vec<Blob>,
    pub seed: u64,
}

impl Scene {
    /// Blobs with centers uniform in the workspace, amplitude in
    /// `[0.3, 1]` and radius in `[0.05, 0.2]`.
    pub fn generate(n_blobs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blobs = (0..n_blobs)
            .map(|_| Blob {
                center: [rng.random::<f64>(), rng.random::<f64>()],
                amplitude: rng.random_range(0.3..=1.0),
                radius: rng.random_range(0.05..=0.2),
            })
            .collect();
        Scene { blobs, seed }
    }

    pub fn empty() -> Self {
        Scene {
            blobs: Vec::new(),
            seed: 0,
        }
    }

    pub fn intensity(&self, x: f64, y: f64) -> f64 {
        self.blobs
            .iter()
            .map(|b| b.intensity(x, y))
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }
}

/// Camera geometry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewParams {
    pub image_width: usize,
    pub image_height: usize,
    /// Side of the viewed window in workspace units.
    pub window: f64,
}

impl Default for ViewParams {
    fn default() -> Self {
        ViewParams {
            image_width: 16,
            image_height: 16,
            window: 0.3,
        }
    }
}

impl ViewParams {
    pub fn pixel_count(&self) -> usize {
        self.image_width * self.image_height
    }

    /// World coordinates of pixel `(row, col)` when the camera is at `pos`.
    pub fn pixel_world(&self, pos: MotorCommand, row: usize, col: usize) -> (f64, f64) {
        let half = self.window / 2.0;
        let x = pos.x - half + (col as f64 + 0.5) * self.window / self.image_width as f64;
        let y = pos.y - half + (row as f64 + 0.5) * self.window / self.image_height as f64;
        (x, y)
    }
}

pub fn render(scene: &Scene, view: &ViewParams, pos: MotorCommand) -> Result<Image> {
    if !pos.in_bounds() {
        return Err(Error::invalid(format!(
            "camera position ({}, {}) outside workspace",
            pos.x, pos.y
        )));
    }
    let mut pixels = Vec::with_capacity(view.pixel_count());
    for r in 0..view.image_height {
        for c in 0..view.image_width {
            let (x, y) = view.pixel_world(pos, r, c);
            pixels.push(scene.intensity(x, y));
        }
    }
    Ok(Image {
        width: view.image_width,
        height: view.image_height,
        pixels,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub position: MotorCommand,
}

impl RobotState {
    pub fn new(position: MotorCommand) -> Self {
        RobotState { position }
    }

    /// Waypoints from the current position to `target`, spaced `step`
    /// apart, ending exactly at `target`. The robot ends at `target`.
    pub fn trajectory(&mut self, target: MotorCommand, step: f64) -> Vec<MotorCommand> {
        let start = self.position;
        let waypoints = straight_line(start, target, step);
        self.position = target;
        waypoints
    }
}

pub(crate) fn straight_line(
    start: MotorCommand,
    target: MotorCommand,
    step: f64,
) -> Vec<MotorCommand> {
    let dist = start.distance(&target);
    // tolerance so that exact multiples of `step` do not gain a waypoint
    let count = ((dist / step) - 1e-9).ceil().max(1.0) as usize;
    let mut out = Vec::with_capacity(count);
    for k in 1..count {
        let s = k as f64 * step / dist;
        out.push(MotorCommand {
            x: start.x + s * (target.x - start.x),
            y: start.y + s * (target.y - start.y),
        });
    }
    out.push(target);
    out
}

/// A motor position paired with the encoded image seen there.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisuoMotorSample {
    pub motor: MotorCommand,
    pub sensory: SensoryState,
}

pub fn observe(
    scene: &Scene,
    view: &ViewParams,
    encoder: &Encoder,
    pos: MotorCommand,
) -> Result<VisuoMotorSample> {
    let img = render(scene, view, pos)?;
    Ok(VisuoMotorSample {
        motor: pos,
        sensory: encoder.encode(&img)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestSet {
    pub samples: Vec<VisuoMotorSample>,
}

impl TestSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// `n` uniformly random motor positions with their encoded views.
pub fn build_test_set(
    scene: &Scene,
    view: &ViewParams,
    encoder: &Encoder,
    n: usize,
    seed: u64,
) -> Result<TestSet> {
    if n == 0 {
        return Err(Error::Empty("test set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|_| {
            let pos = MotorCommand::new(rng.random(), rng.random());
            observe(scene, view, encoder, pos)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TestSet { samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64) -> MotorCommand {
        MotorCommand::new(x, y)
    }

    #[test]
    fn empty_scene_renders_black() {
        let img = render(&Scene::empty(), &ViewParams::default(), p(0.5, 0.5)).unwrap();
        assert_eq!(img.len(), 256);
        assert!(img.pixels.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn render_is_pure() {
        let scene = Scene::generate(6, 3);
        let v = ViewParams::default();
        assert_eq!(
            render(&scene, &v, p(0.2, 0.7)).unwrap(),
            render(&scene, &v, p(0.2, 0.7)).unwrap()
        );
    }

    #[test]
    fn render_rejects_out_of_bounds() {
        let v = ViewParams::default();
        assert!(render(&Scene::empty(), &v, p(1.1, 0.5)).is_err());
        assert!(render(&Scene::empty(), &v, p(0.5, -0.01)).is_err());
    }

    #[test]
    fn centered_blob_peaks_in_the_middle() {
        let blob = Blob {
            center: [0.4, 0.6],
            amplitude: 1.0,
            radius: 0.1,
        };
        let scene = Scene {
            blobs: vec![blob],
            seed: 0,
        };
        let v = ViewParams::default();
        let img = render(&scene, &v, p(0.4, 0.6)).unwrap();
        let max = img.pixels.iter().cloned().fold(f64::MIN, f64::max);
        // the four central pixels sit half a pixel from the window center
        let half_px = v.window / 16.0 / 2.0;
        let closed = (-(2.0 * half_px * half_px) / (2.0 * 0.01)).exp();
        assert!((max - closed).abs() < 1e-12);
        for (r, c) in [(7, 7), (7, 8), (8, 7), (8, 8)] {
            assert!((img.pixels[r * 16 + c] - closed).abs() < 1e-12);
        }
    }

    #[test]
    fn trajectory_to_self_is_single_point() {
        let mut s = RobotState::new(p(0.3, 0.3));
        assert_eq!(s.trajectory(p(0.3, 0.3), 0.02), vec![p(0.3, 0.3)]);
    }

    #[test]
    fn trajectory_quarter_steps() {
        let mut s = RobotState::new(p(0.0, 0.0));
        let w = s.trajectory(p(0.0, 1.0), 0.25);
        assert_eq!(
            w,
            vec![p(0.0, 0.25), p(0.0, 0.5), p(0.0, 0.75), p(0.0, 1.0)]
        );
        assert_eq!(s.position, p(0.0, 1.0));
    }

    #[test]
    fn scene_generation_is_seeded() {
        assert_eq!(Scene::generate(6, 9), Scene::generate(6, 9));
        assert_ne!(Scene::generate(6, 9), Scene::generate(6, 10));
        let s = Scene::generate(6, 9);
        for b in &s.blobs {
            assert!(b.amplitude > 0.0 && b.amplitude <= 1.0);
            assert!(b.radius > 0.0 && b.radius <= 0.5);
            assert!(b.center.iter().all(|c| (0.0..=1.0).contains(c)));
        }
    }

    #[test]
    fn far_positions_differ() {
        let scene = Scene::generate(6, 21);
        let v = ViewParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut checked = 0;
        while checked < 100 {
            let a = p(rng.random(), rng.random());
            let b = p(rng.random(), rng.random());
            if a.distance(&b) <= v.window {
                continue;
            }
            assert_ne!(
                render(&scene, &v, a).unwrap(),
                render(&scene, &v, b).unwrap()
            );
            checked += 1;
        }
    }

    #[test]
    fn image_validation() {
        assert!(Image::new(2, 2, vec![0.0; 4]).is_ok());
        assert!(Image::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Image::new(1, 1, vec![1.5]).is_err());
    }
}
