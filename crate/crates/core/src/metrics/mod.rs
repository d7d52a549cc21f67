//! Evaluation metrics: end-pose joint error, power-spectrum KL of joint
//! accelerations, hand-object interpenetration volume and foot skating.

pub mod voxel;

use nalgebra::Vector3;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

pub use voxel::{voxelize_capsules, voxelize_solid, VoxelGrid, DEFAULT_VOXEL_STEP};

use crate::error::{Error, Result};
use crate::hand_refine::ObjectCloud;
use crate::kinematics::skeleton::{NUM_BODY_JOINTS, NUM_JOINTS};
use crate::kinematics::{forward_kinematics, joint_positions, HandModel, Pose, Skeleton};
use crate::sequence::MotionSequence;

pub const PSKL_EPS: f64 = 1e-8;

/// Mean joint distance between two poses, in millimetres, over the body
/// joints and over the right-hand joints.
pub fn end_mjd(generated: &Pose, target: &Pose, skel: &Skeleton) -> Result<(f64, f64)> {
    let a = joint_positions(skel, generated)?;
    let b = joint_positions(skel, target)?;
    let mean = |r: std::ops::Range<usize>| {
        let n = r.len() as f64;
        r.map(|j| (a[j] - b[j]).norm()).sum::<f64>() / n * 1000.0
    };
    Ok((mean(0..NUM_BODY_JOINTS), mean(NUM_BODY_JOINTS..NUM_JOINTS)))
}

/// Joint positions of every frame.
pub fn joint_trajectory(skel: &Skeleton, seq: &MotionSequence) -> Result<Vec<Vec<Vector3<f64>>>> {
    seq.frames.iter().map(|p| joint_positions(skel, p)).collect()
}

/// One-sided power spectra (`|DFT|²`, bins `0..=n/2`) of the acceleration
/// of every joint axis, each series zero-padded to `n`.
fn acceleration_spectra(traj: &[Vec<Vector3<f64>>], fps: f64, n: usize, planner: &mut FftPlanner<f64>) -> Vec<Vec<f64>> {
    let joints = traj[0].len();
    let fft = planner.plan_fft_forward(n);
    let mut out = Vec::with_capacity(3 * joints);
    for j in 0..joints {
        for axis in 0..3 {
            let mut buf = vec![Complex::new(0.0, 0.0); n];
            for t in 1..traj.len() - 1 {
                let acc = (traj[t + 1][j][axis] - 2.0 * traj[t][j][axis] + traj[t - 1][j][axis]) * fps * fps;
                buf[t - 1] = Complex::new(acc, 0.0);
            }
            fft.process(&mut buf);
            out.push(buf[..=n / 2].iter().map(|c| c.norm_sqr()).collect());
        }
    }
    out
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| a * (a / b).ln()).sum()
}

/// Power-spectrum KL divergence between the joint accelerations of two
/// corpora of joint trajectories (`[sequence][frame][joint]`). Returns
/// `(KL(a‖b), KL(b‖a))` averaged over joint axes.
pub fn pskl_j(a: &[Vec<Vec<Vector3<f64>>>], b: &[Vec<Vec<Vector3<f64>>>], fps: f64) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::MetricUndefined("PSKL-J needs two non-empty corpora".into()));
    }
    let joints = a[0].first().map_or(0, |f| f.len());
    for s in a.iter().chain(b) {
        if s.len() < 3 {
            return Err(Error::MetricUndefined(format!("PSKL-J needs at least 3 frames per sequence, got {}", s.len())));
        }
        if s.iter().any(|f| f.len() != joints) {
            return Err(Error::Shape("PSKL-J corpora must share one joint count".into()));
        }
    }
    let n = a.iter().chain(b).map(|s| s.len() - 2).max().expect("non-empty");
    let mut planner = FftPlanner::new();
    let mut average = |corpus: &[Vec<Vec<Vector3<f64>>>]| {
        let mut acc = vec![vec![0.0; n / 2 + 1]; 3 * joints];
        for s in corpus {
            for (sum, spec) in acc.iter_mut().zip(acceleration_spectra(s, fps, n, &mut planner)) {
                sum.iter_mut().zip(spec).for_each(|(x, y)| *x += y);
            }
        }
        for spec in &mut acc {
            for x in spec.iter_mut() {
                *x = *x / corpus.len() as f64 + PSKL_EPS;
            }
            let total: f64 = spec.iter().sum();
            spec.iter_mut().for_each(|x| *x /= total);
        }
        acc
    };
    let pa = average(a);
    let pb = average(b);
    let m = pa.len().max(1) as f64;
    let ab = pa.iter().zip(&pb).map(|(p, q)| kl(p, q)).sum::<f64>() / m;
    let ba = pa.iter().zip(&pb).map(|(p, q)| kl(q, p)).sum::<f64>() / m;
    Ok((ab, ba))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SkatingAggregate {
    #[default]
    Mean,
    Sum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    /// Voxel edge for the intersection volume, metres.
    pub voxel_step: f64,
    pub skating: SkatingAggregate,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { voxel_step: DEFAULT_VOXEL_STEP, skating: SkatingAggregate::Mean }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_step.is_finite() && self.voxel_step > 0.0) {
            return Err(Error::Config(format!("voxel_step must be positive, got {}", self.voxel_step)));
        }
        Ok(())
    }
}

/// Foot skating in cm/s: per frame the slower of the two feet, then the
/// mean (or sum) over frames.
pub fn skating(seq: &MotionSequence, skel: &Skeleton, aggregate: SkatingAggregate) -> Result<f64> {
    if seq.len() < 2 {
        return Err(Error::MetricUndefined("skating needs at least 2 frames".into()));
    }
    let roles = skel.roles();
    let feet = [roles.left_leg.foot, roles.right_leg.foot];
    let mut prev = joint_positions(skel, &seq.frames[0])?;
    let mut total = 0.0;
    for p in &seq.frames[1..] {
        let cur = joint_positions(skel, p)?;
        let speed = feet.iter().map(|&j| (cur[j] - prev[j]).norm() * seq.fps).fold(f64::INFINITY, f64::min);
        total += speed * 100.0;
        prev = cur;
    }
    Ok(match aggregate {
        SkatingAggregate::Mean => total / (seq.len() - 1) as f64,
        SkatingAggregate::Sum => total,
    })
}

/// Per-frame hand/object overlap in cm³ on a shared lattice.
pub fn overlap_volumes(skel: &Skeleton, model: &HandModel, frames: &[Pose], object: &ObjectCloud, step: f64) -> Result<Vec<f64>> {
    let solid = voxelize_solid(object.points(), object.normals(), step);
    let mut out = Vec::with_capacity(frames.len());
    for p in frames {
        let state = forward_kinematics(skel, p)?;
        let hand = voxelize_capsules(&model.world_capsules(&state), step);
        out.push(hand.intersection_count(&solid) as f64 * solid.cell_volume_cm3());
    }
    Ok(out)
}

/// Largest per-frame overlap over the last `last_n` frames.
pub fn inter_volume(per_frame: &[f64], last_n: usize) -> f64 {
    let start = per_frame.len().saturating_sub(last_n);
    per_frame[start..].iter().cloned().fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub end_mjd_body: f64,
    pub end_mjd_rhand: f64,
    pub pskl_pred_gt: f64,
    pub pskl_gt_pred: f64,
    pub inter_v1: f64,
    pub inter_v5: f64,
    pub inter_v10: f64,
    pub skating: f64,
    /// Only filled when timing is requested; left out otherwise so reports
    /// stay reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

/// One generated sequence with what it is scored against.
pub struct EvalCase<'a> {
    pub generated: &'a MotionSequence,
    pub reference: &'a MotionSequence,
    pub object: Option<&'a ObjectCloud>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub per_sequence: Vec<MetricsReport>,
    /// Means of the per-sequence values, except PSKL-J which is computed
    /// over the whole corpora.
    pub aggregate: MetricsReport,
}

fn score_case(skel: &Skeleton, model: &HandModel, case: &EvalCase, cfg: &MetricsConfig) -> Result<MetricsReport> {
    let (body, hand) = end_mjd(case.generated.last(), case.reference.last(), skel)?;
    let g = joint_trajectory(skel, case.generated)?;
    let r = joint_trajectory(skel, case.reference)?;
    let (pg, gp) = pskl_j(&[g], &[r], case.generated.fps)?;
    let vols = match case.object {
        Some(o) => overlap_volumes(skel, model, &case.generated.frames, o, cfg.voxel_step)?,
        None => vec![0.0],
    };
    Ok(MetricsReport {
        end_mjd_body: body,
        end_mjd_rhand: hand,
        pskl_pred_gt: pg,
        pskl_gt_pred: gp,
        inter_v1: inter_volume(&vols, 1),
        inter_v5: inter_volume(&vols, 5),
        inter_v10: inter_volume(&vols, 10),
        skating: skating(case.generated, skel, cfg.skating)?,
        wall_time: None,
    })
}

pub fn evaluate(skel: &Skeleton, cases: &[EvalCase], cfg: &MetricsConfig) -> Result<Evaluation> {
    cfg.validate()?;
    if cases.is_empty() {
        return Err(Error::MetricUndefined("nothing to evaluate".into()));
    }
    let model = HandModel::new(skel);
    let per_sequence: Vec<MetricsReport> = crate::par::map_collect(cases, |c| score_case(skel, &model, c, cfg))
        .into_iter()
        .collect::<Result<_>>()?;
    let gen: Vec<_> = cases.iter().map(|c| joint_trajectory(skel, c.generated)).collect::<Result<_>>()?;
    let refs: Vec<_> = cases.iter().map(|c| joint_trajectory(skel, c.reference)).collect::<Result<_>>()?;
    let (pg, gp) = pskl_j(&gen, &refs, cases[0].generated.fps)?;
    let n = per_sequence.len() as f64;
    let mean = |f: fn(&MetricsReport) -> f64| per_sequence.iter().map(f).sum::<f64>() / n;
    let aggregate = MetricsReport {
        end_mjd_body: mean(|r| r.end_mjd_body),
        end_mjd_rhand: mean(|r| r.end_mjd_rhand),
        pskl_pred_gt: pg,
        pskl_gt_pred: gp,
        inter_v1: mean(|r| r.inter_v1),
        inter_v5: mean(|r| r.inter_v5),
        inter_v10: mean(|r| r.inter_v10),
        skating: mean(|r| r.skating),
        wall_time: None,
    };
    Ok(Evaluation { per_sequence, aggregate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::random_pose;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn end_mjd_of_identical_and_shifted_poses() {
        let skel = Skeleton::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_pose(&mut rng, 0.5);
        assert_eq!(end_mjd(&p, &p, &skel).unwrap(), (0.0, 0.0));
        let mut q = p;
        q.set_translation(&(p.translation() + Vector3::new(0.0, 0.005, 0.0)));
        let (b, h) = end_mjd(&q, &p, &skel).unwrap();
        assert!((b - 5.0).abs() < 1e-9 && (h - 5.0).abs() < 1e-9);
    }

    fn sinusoid(freq: f64, frames: usize, fps: f64) -> Vec<Vec<Vector3<f64>>> {
        (0..frames)
            .map(|t| {
                let x = (2.0 * PI * freq * t as f64 / fps).sin() * 0.1;
                vec![Vector3::new(x, 0.5 * x, 0.0); 2]
            })
            .collect()
    }

    /// Direct O(n²) DFT of the same construction.
    fn oracle(a: &[Vec<Vec<Vector3<f64>>>], b: &[Vec<Vec<Vector3<f64>>>], fps: f64) -> (f64, f64) {
        let n = a.iter().chain(b).map(|s| s.len() - 2).max().unwrap();
        let spectrum = |s: &Vec<Vec<Vector3<f64>>>, j: usize, axis: usize| -> Vec<f64> {
            let acc: Vec<f64> = (1..s.len() - 1).map(|t| (s[t + 1][j][axis] - 2.0 * s[t][j][axis] + s[t - 1][j][axis]) * fps * fps).collect();
            (0..=n / 2)
                .map(|k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (t, v) in acc.iter().enumerate() {
                        let w = -2.0 * PI * (k * t) as f64 / n as f64;
                        re += v * w.cos();
                        im += v * w.sin();
                    }
                    re * re + im * im
                })
                .collect()
        };
        let dist = |c: &[Vec<Vec<Vector3<f64>>>], j, axis| {
            let mut avg = vec![0.0; n / 2 + 1];
            for s in c {
                avg.iter_mut().zip(spectrum(s, j, axis)).for_each(|(x, y)| *x += y / c.len() as f64);
            }
            let v: Vec<f64> = avg.iter().map(|x| x + PSKL_EPS).collect();
            let t: f64 = v.iter().sum();
            v.into_iter().map(|x| x / t).collect::<Vec<_>>()
        };
        let (mut ab, mut ba) = (0.0, 0.0);
        let joints = a[0][0].len();
        for j in 0..joints {
            for axis in 0..3 {
                let (p, q) = (dist(a, j, axis), dist(b, j, axis));
                ab += p.iter().zip(&q).map(|(x, y)| x * (x / y).ln()).sum::<f64>();
                ba += q.iter().zip(&p).map(|(x, y)| x * (x / y).ln()).sum::<f64>();
            }
        }
        (ab / (3 * joints) as f64, ba / (3 * joints) as f64)
    }

    #[test]
    fn pskl_identical_corpora_is_zero() {
        let a = vec![sinusoid(2.0, 40, 30.0), sinusoid(3.0, 31, 30.0)];
        assert_eq!(pskl_j(&a, &a, 30.0).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn pskl_constant_velocity_is_zero() {
        let line = |v: f64| (0..20).map(|t| vec![Vector3::new(v * t as f64, 0.0, 1.0)]).collect::<Vec<_>>();
        let (ab, ba) = pskl_j(&[line(0.1)], &[line(-0.3)], 30.0).unwrap();
        assert!(ab.abs() < 1e-15 && ba.abs() < 1e-15);
    }

    #[test]
    fn pskl_matches_direct_dft() {
        let a = vec![sinusoid(2.0, 40, 30.0), sinusoid(2.5, 35, 30.0)];
        let b = vec![sinusoid(6.0, 40, 30.0)];
        let (ab, ba) = pskl_j(&a, &b, 30.0).unwrap();
        let (oab, oba) = oracle(&a, &b, 30.0);
        assert!(ab > 0.0 && ba > 0.0);
        assert!((ab - oab).abs() < 1e-9 && (ba - oba).abs() < 1e-9, "{ab} {oab} {ba} {oba}");
    }

    #[test]
    fn pskl_needs_three_frames() {
        let short = vec![sinusoid(1.0, 2, 30.0)];
        assert!(matches!(pskl_j(&short, &short, 30.0), Err(Error::MetricUndefined(_))));
    }

    fn sliding(skel: &Skeleton, speed: f64, frames: usize) -> MotionSequence {
        let fps = 30.0;
        let poses = (0..frames)
            .map(|i| {
                let mut p = Pose::identity();
                p.set_translation(&Vector3::new(speed * i as f64 / fps, 0.0, 0.9));
                p
            })
            .collect();
        let _ = skel;
        MotionSequence::new(poses, fps).unwrap()
    }

    #[test]
    fn skating_examples() {
        let skel = Skeleton::default();
        assert_eq!(skating(&sliding(&skel, 0.0, 10), &skel, SkatingAggregate::Mean).unwrap(), 0.0);
        let s = skating(&sliding(&skel, 0.02, 10), &skel, SkatingAggregate::Mean).unwrap();
        assert!((s - 2.0).abs() < 1e-9, "{s}");
        let sum = skating(&sliding(&skel, 0.02, 10), &skel, SkatingAggregate::Sum).unwrap();
        assert!((sum - 18.0).abs() < 1e-9);
    }

    #[test]
    fn inter_volume_windows_are_nested() {
        let v = [0.0, 3.0, 1.0, 0.5, 0.0, 0.25, 2.0, 0.0, 0.125, 1.0, 0.0, 0.5];
        let (v1, v5, v10) = (inter_volume(&v, 1), inter_volume(&v, 5), inter_volume(&v, 10));
        assert_eq!((v1, v5, v10), (0.5, 1.0, 2.0));
        assert_eq!(inter_volume(&[], 5), 0.0);
    }
}
