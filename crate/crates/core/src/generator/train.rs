//! Minibatch training with Adam.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{total_loss, LossTerms, Target};
use super::nn::{backward, forward, Weights};
use super::{input_matrix, residual_poses, GeneratorConfig};
use crate::error::{Error, Result};
use crate::kinematics::{Skeleton, POSE_DIM};
use crate::par::map_collect;
use crate::sequence::{seed_between, ExtendedFrame, MotionSequence};

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// A ground-truth sequence with its seed and precomputed targets.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub seeded: Vec<ExtendedFrame>,
    pub input: Array2<f64>,
    pub target: Target,
}

impl PreparedSample {
    /// Seeds between the sequence's first and last frame. Missing contact
    /// labels count as no contact.
    pub fn new(skel: &Skeleton, seq: &MotionSequence) -> Result<Self> {
        seq.validate()?;
        let seeded = seed_between(skel, seq.first(), seq.last(), seq.horizon())?;
        let contact = seq.contact_probs.clone().unwrap_or_else(|| vec![[0.0; 2]; seq.len()]);
        Ok(Self { input: input_matrix(&seeded)?, target: Target::new(skel, &seq.frames, &contact)?, seeded })
    }
}

/// Loss and parameter gradient of one sample.
pub fn sample_gradient(w: &Weights, skel: &Skeleton, s: &PreparedSample) -> Result<(LossTerms, Vec<f64>)> {
    let (out, tape) = forward(w, s.input.view(), &skel.bone_vector())?;
    let pred = residual_poses(&s.seeded, &out.delta);
    let pc: Vec<[f64; 2]> = out.contact.rows().into_iter().map(|r| [r[0], r[1]]).collect();
    let lg = total_loss(skel, &pred, &pc, &s.target, &w.config.loss_weights)?;
    let n = pred.len();
    let d_delta = Array2::from_shape_fn((n, POSE_DIM), |(i, k)| lg.pose[i][k]);
    let d_contact = Array2::from_shape_fn((n, 2), |(i, k)| lg.contact[i][k]);
    Ok((lg.terms, backward(w, &tape, &d_delta, &d_contact)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub terms: LossTerms,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub weights: Weights,
    /// Batch-mean losses before each update.
    pub trace: Vec<LossRecord>,
    /// Step at which the loss or the weights stopped being finite.
    pub diverged_at: Option<usize>,
}

/// Trains from a fresh initialisation drawn from `seed`.
pub fn train(config: &GeneratorConfig, corpus: &[MotionSequence], skel: &Skeleton, seed: u64) -> Result<TrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = Weights::init(config, &mut rng)?;
    train_from(weights, corpus, skel, &mut rng, config.steps, |_| {})
}

/// Continues training `weights` for `steps` updates, calling `on_step`
/// after each one. Batches are drawn by shuffling the corpus each epoch.
pub fn train_from(
    mut weights: Weights,
    corpus: &[MotionSequence],
    skel: &Skeleton,
    rng: &mut ChaCha8Rng,
    steps: usize,
    mut on_step: impl FnMut(&LossRecord),
) -> Result<TrainOutcome> {
    let cfg = weights.config.clone();
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::InvalidLength("training corpus is empty".into()));
    }
    let mut samples = Vec::with_capacity(corpus.len());
    for (i, seq) in corpus.iter().enumerate() {
        if seq.len() != cfg.horizon + 1 {
            return Err(Error::Shape(format!("sequence {i} has {} frames, model expects {}", seq.len(), cfg.horizon + 1)));
        }
        samples.push(PreparedSample::new(skel, seq)?);
    }
    let batch = cfg.batch_size.min(samples.len());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut cursor = order.len();
    let mut adam = Adam::new(weights.num_params(), cfg.learning_rate);
    let mut trace = Vec::with_capacity(steps);

    for step in 0..steps {
        let mut picked = Vec::with_capacity(batch);
        while picked.len() < batch {
            if cursor == order.len() {
                order.shuffle(rng);
                cursor = 0;
            }
            picked.push(order[cursor]);
            cursor += 1;
        }
        let results = map_collect(&picked, |&i| sample_gradient(&weights, skel, &samples[i]));
        let mut terms = LossTerms::default();
        let mut grad = vec![0.0; weights.num_params()];
        let mut failed = false;
        for r in results {
            match r {
                Ok((t, g)) => {
                    terms.l1 += t.l1;
                    terms.l2 += t.l2;
                    terms.l3 += t.l3;
                    terms.l4 += t.l4;
                    terms.total += t.total;
                    grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                Err(Error::NonFinite(_)) => failed = true,
                Err(e) => return Err(e),
            }
        }
        let b = batch as f64;
        for v in [&mut terms.l1, &mut terms.l2, &mut terms.l3, &mut terms.l4, &mut terms.total] {
            *v /= b;
        }
        if failed {
            terms.total = f64::NAN;
        }
        let record = LossRecord { step, terms };
        trace.push(record);
        on_step(&record);
        if failed || !terms.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Ok(TrainOutcome { weights, trace, diverged_at: Some(step) });
        }
        grad.iter_mut().for_each(|g| *g /= b);
        adam.step(&mut weights.data, &grad);
        if weights.data.iter().any(|x| !x.is_finite()) {
            return Ok(TrainOutcome { weights, trace, diverged_at: Some(step) });
        }
    }
    Ok(TrainOutcome { weights, trace, diverged_at: None })
}
