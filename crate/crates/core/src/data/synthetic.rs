use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ModalityArray, MultimodalDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub modalities: usize,
    pub samples: usize,
    pub classes: usize,
    pub channels: usize,
    pub timesteps: usize,
    /// Amplitude of the class-dependent sinusoid relative to unit noise.
    pub separability: f64,
    pub seed: u64,
}

/// Sample `j` has label `j mod classes`. Modality `m`, channel `c` carries
/// `separability * sin(2π f t / T + c/2) + N(0, 1)` with
/// `f = (label + 1) * (1 + m / M)` cycles per window.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<MultimodalDataset> {
    let SyntheticSpec { modalities, samples, classes, channels, timesteps, separability, seed } = *spec;
    if modalities == 0 || samples == 0 || classes == 0 || channels == 0 || timesteps == 0 {
        return Err(Error::config(format!("synthetic dims must all be positive: {spec:?}")));
    }
    if !(separability >= 0.0) {
        return Err(Error::config(format!("separability {separability} must be non-negative")));
    }
    let labels: Vec<u32> = (0..samples).map(|j| (j % classes) as u32).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arrays = (0..modalities)
        .map(|m| {
            let scale = 1.0 + m as f64 / modalities as f64;
            let mut data = Vec::with_capacity(samples * channels * timesteps);
            for &y in &labels {
                let freq = (y as f64 + 1.0) * scale;
                for c in 0..channels {
                    for t in 0..timesteps {
                        let phase = 2.0 * PI * freq * t as f64 / timesteps as f64 + 0.5 * c as f64;
                        let noise: f64 = rng.sample(StandardNormal);
                        data.push((separability * phase.sin() + noise) as f32);
                    }
                }
            }
            ModalityArray { channels, timesteps, data }
        })
        .collect();
    MultimodalDataset::new(arrays, labels, (0..samples as i64).collect(), classes)
}
