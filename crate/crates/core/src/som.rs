//! Kohonen self-organizing map whose neuron positions are the agent's goals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{check_dim, Error, Result, SensoryState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SomParams {
    pub rows: usize,
    pub cols: usize,
    /// Initial learning rate, in `(0, 1]`.
    pub lr0: f64,
    /// Initial neighborhood radius in grid units.
    pub sigma0: f64,
    /// Decay constant (in updates) shared by learning rate and radius.
    pub tau: f64,
}

impl Default for SomParams {
    fn default() -> Self {
        SomParams {
            rows: 3,
            cols: 3,
            lr0: 0.5,
            sigma0: 1.0,
            tau: 2000.0,
        }
    }
}

impl SomParams {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::invalid("SOM grid must have at least one neuron"));
        }
        if !(self.lr0 >= 0.0 && self.lr0 <= 1.0) {
            return Err(Error::invalid(format!(
                "SOM lr0 {} outside [0, 1]",
                self.lr0
            )));
        }
        if !(self.sigma0 > 0.0) || !(self.tau > 0.0) {
            return Err(Error::invalid("SOM sigma0 and tau must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Som {
    params: SomParams,
    codebook: Vec<Vec<f64>>,
    t: u64,
}

impl Som {
    /// Codebook drawn uniformly from `[0, 1]^dim`.
    pub fn new(params: SomParams, dim: usize, seed: u64) -> Result<Self> {
        params.validate()?;
        if dim == 0 {
            return Err(Error::invalid("SOM input dimension must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let codebook = (0..params.rows * params.cols)
            .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
            .collect();
        Ok(Som {
            params,
            codebook,
            t: 0,
        })
    }

    pub fn from_codebook(params: SomParams, codebook: Vec<Vec<f64>>) -> Result<Self> {
        params.validate()?;
        check_dim(params.rows * params.cols, codebook.len())?;
        let dim = codebook[0].len();
        if dim == 0 {
            return Err(Error::invalid("SOM input dimension must be positive"));
        }
        for w in &codebook {
            check_dim(dim, w.len())?;
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("non-finite codebook entry"));
            }
        }
        Ok(Som {
            params,
            codebook,
            t: 0,
        })
    }

    pub fn params(&self) -> &SomParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.codebook.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codebook.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.codebook[0].len()
    }

    pub fn updates(&self) -> u64 {
        self.t
    }

    pub fn position(&self, neuron: usize) -> &[f64] {
        &self.codebook[neuron]
    }

    pub fn learning_rate(&self) -> f64 {
        self.params.lr0 * (-(self.t as f64) / self.params.tau).exp()
    }

    pub fn radius(&self) -> f64 {
        self.params.sigma0 * (-(self.t as f64) / self.params.tau).exp()
    }

    /// Nearest neuron by Euclidean distance; ties go to the lowest index.
    pub fn bmu(&self, x: &[f64]) -> Result<usize> {
        check_dim(self.dim(), x.len())?;
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, w) in self.codebook.iter().enumerate() {
            let d = sq_dist(w, x);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        Ok(best)
    }

    fn grid_coords(&self, neuron: usize) -> (f64, f64) {
        (
            (neuron / self.params.cols) as f64,
            (neuron % self.params.cols) as f64,
        )
    }

    /// One Kohonen update with a Gaussian neighborhood around the BMU.
    pub fn train_step(&mut self, x: &[f64]) -> Result<()> {
        let winner = self.bmu(x)?;
        let lr = self.learning_rate();
        let sigma = self.radius();
        let (wr, wc) = self.grid_coords(winner);
        for i in 0..self.codebook.len() {
            let (r, c) = self.grid_coords(i);
            let g2 = (r - wr).powi(2) + (c - wc).powi(2);
            let h = (-g2 / (2.0 * sigma * sigma)).exp();
            let rate = lr * h;
            if rate == 0.0 {
                continue;
            }
            for (w, xi) in self.codebook[i].iter_mut().zip(x) {
                *w += rate * (xi - *w);
            }
        }
        self.t += 1;
        Ok(())
    }

    /// Snapshot of all neuron positions in row-major order.
    pub fn goal_positions(&self) -> Vec<SensoryState> {
        self.codebook.clone()
    }

    /// Mean distance between each datum and its BMU.
    pub fn quantization_error(&self, data: &[SensoryState]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Empty("quantization data"));
        }
        let mut total = 0.0;
        for x in data {
            let b = self.bmu(x)?;
            total += sq_dist(&self.codebook[b], x).sqrt();
        }
        Ok(total / data.len() as f64)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}
