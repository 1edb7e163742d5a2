use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::PartitionedLinearModel;

/// Zero-mean Gaussian process and measurement noise drawn from ChaCha8 streams.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoiseSpec {
    pub process_std: f64,
    pub measurement_std: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn noise_free() -> Self {
        Self { process_std: 0.0, measurement_std: 0.0, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("process_std", self.process_std), ("measurement_std", self.measurement_std)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config("noise", key, "must be a finite non-negative number"));
            }
        }
        Ok(())
    }

    /// Independent samplers for disturbances (stream 0) and measurement noise (stream 1).
    pub(crate) fn samplers(&self) -> Result<(NoiseStream, NoiseStream)> {
        self.validate()?;
        Ok((NoiseStream::new(self.seed, 0, self.process_std), NoiseStream::new(self.seed, 1, self.measurement_std)))
    }
}

pub(crate) struct NoiseStream {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl NoiseStream {
    fn new(seed: u64, stream: u64, std: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, normal: Normal::new(0.0, std).expect("std validated") }
    }

    pub fn draw(&mut self, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| self.normal.sample(&mut self.rng))
    }
}

/// Simulated truth: `states[k]` and `outputs[k]` for `k = 0..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
}

/// `x_{k+1} = A x_k + w_k`, `y_k = C x_k + v_k` for `T` instants.
pub fn simulate_linear(model: &PartitionedLinearModel, x0: &DVector<f64>, steps: usize, noise: &NoiseSpec) -> Result<Trajectory> {
    let p = model.partition();
    if x0.len() != p.nx() {
        return Err(Error::dim(format!("x0 has length {}, expected {}", x0.len(), p.nx())));
    }
    let (mut w, mut v) = noise.samplers()?;
    let mut states = Vec::with_capacity(steps);
    let mut outputs = Vec::with_capacity(steps);
    let mut x = x0.clone();
    for _ in 0..steps {
        outputs.push(model.c() * &x + v.draw(p.ny()));
        let next = model.a() * &x + w.draw(p.nx());
        states.push(std::mem::replace(&mut x, next));
    }
    Ok(Trajectory { states, outputs })
}
