//! Transformer infill: seeded frames and the skeleton in, per-frame pose
//! deviations and foot contact probabilities out.

pub mod loss;
pub mod nn;
pub mod train;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use loss::{total_loss, LossTerms, LossWeights, Target};
pub use nn::{TensorSpec, Weights};
pub use train::{train, Adam, LossRecord, PreparedSample, TrainOutcome};

use crate::error::{Error, Result};
use crate::kinematics::skeleton::NUM_BONES;
use crate::kinematics::{Pose, Skeleton, POSE_DIM};
use crate::sequence::{ExtendedFrame, MotionSequence, Z_DIM};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    /// Number of transitions `T`; sequences hold `T + 1` frames.
    pub horizon: usize,
    pub learning_rate: f64,
    pub loss_weights: LossWeights,
    pub steps: usize,
    pub batch_size: usize,
}

impl GeneratorConfig {
    /// Desk-scale model: 2 layers, width 64, 2 heads.
    pub fn toy() -> Self {
        Self { layers: 2, model_dim: 64, heads: 2, horizon: 30, learning_rate: 1e-4, loss_weights: LossWeights::default(), steps: 5000, batch_size: 8 }
    }

    /// 8 layers, width 512, 4 heads.
    pub fn paper() -> Self {
        Self { layers: 8, model_dim: 512, heads: 4, steps: 100_000, ..Self::toy() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers == 0 || self.model_dim == 0 || self.heads == 0 {
            return bad("layers, model_dim and heads must be positive".into());
        }
        if self.model_dim % self.heads != 0 {
            return bad(format!("model_dim {} is not divisible by {} heads", self.model_dim, self.heads));
        }
        if self.horizon < 2 {
            return bad("horizon must be at least 2".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive".into());
        }
        if self.loss_weights.as_array().iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("loss weights must be finite and non-negative".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        Ok(())
    }

    /// `Z` plus the endpoint flag.
    pub fn input_dim(&self) -> usize {
        Z_DIM + 1
    }

    pub fn bone_dim(&self) -> usize {
        NUM_BONES
    }

    pub fn output_dim(&self) -> usize {
        POSE_DIM
    }

    pub fn ffn_dim(&self) -> usize {
        4 * self.model_dim
    }
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self::toy()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorOutput {
    pub delta: Vec<[f64; POSE_DIM]>,
    pub contact: Vec<[f64; 2]>,
}

#[derive(Clone, Debug)]
pub struct Generated {
    pub output: GeneratorOutput,
    /// Seed plus deviation on every frame, before endpoint clamping and
    /// without re-orthonormalisation.
    pub raw: Vec<Pose>,
    /// Endpoints restored, rotations normalised, contacts attached.
    pub sequence: MotionSequence,
}

/// Network input matrix: one row `[Z_i, m_i]` per seeded frame.
pub fn input_matrix(seeded: &[ExtendedFrame]) -> Result<Array2<f64>> {
    let mut m = Array2::zeros((seeded.len(), Z_DIM + 1));
    for (i, f) in seeded.iter().enumerate() {
        if f.z.len() != Z_DIM {
            return Err(Error::Shape(format!("seeded frame {i} has {} values, expected {Z_DIM}", f.z.len())));
        }
        for (k, v) in f.z.iter().enumerate() {
            m[(i, k)] = *v;
        }
        m[(i, Z_DIM)] = f.flag;
    }
    Ok(m)
}

/// Adds the network's deviations to the seeded poses.
pub(crate) fn residual_poses(seeded: &[ExtendedFrame], delta: &Array2<f64>) -> Vec<Pose> {
    seeded
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let mut p = [0.0; POSE_DIM];
            for k in 0..POSE_DIM {
                p[k] = f.z[k] + delta[(i, k)];
            }
            Pose::from_params(p)
        })
        .collect()
}

pub fn generate(weights: &Weights, seeded: &[ExtendedFrame], skel: &Skeleton, fps: f64) -> Result<Generated> {
    let cfg = &weights.config;
    if seeded.len() != cfg.horizon + 1 {
        return Err(Error::Config(format!("model expects {} frames, got {}", cfg.horizon + 1, seeded.len())));
    }
    let input = input_matrix(seeded)?;
    let (out, _) = nn::forward(weights, input.view(), &skel.bone_vector())?;
    let raw = residual_poses(seeded, &out.delta);
    let mut frames = Vec::with_capacity(raw.len());
    for (p, f) in raw.iter().zip(seeded) {
        frames.push(if f.is_endpoint() { f.pose() } else { p.normalized()? });
    }
    let delta: Vec<[f64; POSE_DIM]> = out.delta.rows().into_iter().map(|r| std::array::from_fn(|k| r[k])).collect();
    let contact: Vec<[f64; 2]> = out.contact.rows().into_iter().map(|r| [r[0], r[1]]).collect();
    let sequence = MotionSequence::new(frames, fps)?.with_contacts(contact.clone())?;
    Ok(Generated { output: GeneratorOutput { delta, contact }, raw, sequence })
}
