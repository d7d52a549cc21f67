//! Upper-body grasp cleanup: keep the late wrist trajectory inside a cone
//! around the final wrist, follow it with arm IK, then run a short gradient
//! descent on the finger rotations of the last frames against the object.

pub mod chamfer;
pub mod cone;
pub mod energy;
pub mod object;

use serde::{Deserialize, Serialize};

pub use chamfer::{penetration_penalty, signed_chamfer, KdTree, SignedDistances};
pub use cone::{arm_ik_follow, wrist_cone_correct, ConeCorrection};
pub use energy::{EnergyModel, EnergyTerms, Evaluation, CONTACT_FINGERS};
pub use object::{ObjectCloud, OBJECT_POINT_COUNT};

use crate::error::{Error, Result};
use crate::kinematics::rotation::{normalize_rot6d, Rot6};
use crate::kinematics::pose::rot_range;
use crate::kinematics::{forward_kinematics, HandModel, Pose, Skeleton};
use crate::sequence::{mean_filter3, MotionSequence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineConfig {
    /// Object points inside the hand.
    pub alpha1: f64,
    /// Hand points inside the object.
    pub alpha2: f64,
    /// Finger contact.
    pub alpha3: f64,
    /// Finger separation.
    pub alpha4: f64,
    /// Finger joint deviation.
    pub alpha5: f64,
    /// Collision tolerance, metres.
    pub delta: f64,
    /// Minimum mean finger separation, metres.
    pub delta2: f64,
    /// Number of final frames optimised.
    pub window: usize,
    pub iterations: usize,
    pub step_size: f64,
    pub wrist_radius: f64,
    pub cone_half_angle: f64,
    /// Penalise finger joints moving faster than before instead of slower.
    pub flip_deviation: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 1.0,
            alpha3: 50.0,
            alpha4: 100.0,
            alpha5: 10.0,
            delta: 0.004,
            delta2: 0.012,
            window: 15,
            iterations: 40,
            step_size: 1e-2,
            wrist_radius: 0.4,
            cone_half_angle: std::f64::consts::FRAC_PI_4,
            flip_deviation: false,
        }
    }
}

impl RefineConfig {
    pub fn alphas(&self) -> [f64; 5] {
        [self.alpha1, self.alpha2, self.alpha3, self.alpha4, self.alpha5]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.alphas().iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return bad("energy weights must be finite and non-negative");
        }
        if !(self.delta2 > 0.0) || !(self.delta >= 0.0) {
            return bad("tolerances must be positive");
        }
        if self.window == 0 {
            return bad("the optimised window needs at least one frame");
        }
        if !(self.step_size > 0.0) {
            return bad("step size must be positive");
        }
        if !(self.wrist_radius >= 0.0) || !(self.cone_half_angle > 0.0) {
            return bad("wrist radius and cone angle must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct RefineOutcome {
    pub sequence: MotionSequence,
    /// Energy before descent and after every accepted step.
    pub trace: Vec<EnergyTerms>,
    pub cone: ConeCorrection,
}

/// Mean distance from each contact finger's surface points to the object.
pub fn contact_finger_distances(skel: &Skeleton, model: &HandModel, pose: &Pose, object: &ObjectCloud) -> Result<[f64; CONTACT_FINGERS]> {
    let state = forward_kinematics(skel, pose)?;
    let surface = model.surface(&state);
    let tree = KdTree::new(object.points());
    Ok(std::array::from_fn(|f| {
        let pts: Vec<_> = model.finger_points(f).into_iter().map(|k| surface.points[k]).collect();
        chamfer::mean_nearest_distance(&pts, &tree)
    }))
}

fn optimised_joints(skel: &Skeleton) -> Vec<usize> {
    skel.roles().fingers[..CONTACT_FINGERS].iter().flatten().copied().collect()
}

/// Applies a size-3 mean filter along time to `joints`, writing back only
/// frames in `frames`, then re-orthonormalises what was written.
fn filter_joints(seq: &mut MotionSequence, joints: &[usize], frames: std::ops::Range<usize>) -> Result<()> {
    let n = seq.len();
    for &j in joints {
        let series: Vec<Rot6> = seq.frames.iter().map(|p| p.rot6(j).try_into().expect("6D block")).collect();
        let filtered = mean_filter3(&series);
        for f in frames.clone() {
            if f == 0 || f + 1 == n {
                continue;
            }
            seq.frames[f].set_rot6(j, &normalize_rot6d(&filtered[f])?);
        }
    }
    Ok(())
}

/// Full hand refinement. Changes only the right shoulder, elbow and wrist
/// inside the cone-corrected window and the twelve contact-finger
/// rotations inside the last `window` frames.
pub fn refine_hand(
    seq: &MotionSequence,
    object: &ObjectCloud,
    skel: &Skeleton,
    model: &HandModel,
    config: &RefineConfig,
) -> Result<RefineOutcome> {
    config.validate()?;
    seq.validate()?;
    let n = seq.len();
    let arm = skel.roles().right_arm;
    let mut out = seq.clone();

    let mut wrists = Vec::with_capacity(n);
    for p in &seq.frames {
        wrists.push(forward_kinematics(skel, p)?.positions[arm.wrist]);
    }
    let o = wrists[n - 1];
    let cone = wrist_cone_correct(&wrists, &o, config.wrist_radius, config.cone_half_angle);
    if cone.applied {
        for (f, (new, old)) in cone.positions.iter().zip(&wrists).enumerate() {
            if new != old {
                arm_ik_follow(skel, &mut out.frames[f], &arm, new)?;
            }
        }
    }

    let start = n - config.window.min(n);
    let joints = optimised_joints(skel);
    let original = out.frames[start..].to_vec();
    let energy = EnergyModel::new(skel, model, object, config, &original)?;
    let mut x = original;
    let mut cur = energy.evaluate(&x, None)?;
    let mut trace = vec![cur.terms];
    let mut step = config.step_size;
    'descent: for _ in 0..config.iterations {
        let moving = cur.grads.iter().any(|g| joints.iter().any(|&j| g[rot_range(j)].iter().any(|v| *v != 0.0)));
        if !moving {
            break;
        }
        loop {
            let mut cand = x.clone();
            for (pose, g) in cand.iter_mut().zip(&cur.grads) {
                for &j in &joints {
                    let r = rot_range(j);
                    for k in r {
                        pose.params_mut()[k] -= step * g[k];
                    }
                }
            }
            let next = energy.evaluate(&cand, None)?;
            if next.terms.total() <= cur.terms.total() {
                x = cand;
                cur = next;
                trace.push(cur.terms);
                break;
            }
            step *= 0.5;
            if step < config.step_size * 1e-9 {
                break 'descent;
            }
        }
    }
    out.frames[start..].copy_from_slice(&x);

    filter_joints(&mut out, &joints, start..n)?;
    if let (true, Some(s)) = (cone.applied, cone.start) {
        filter_joints(&mut out, &[arm.shoulder, arm.elbow, arm.wrist], s..n)?;
    }
    for p in &mut out.frames[start..] {
        for &j in &joints {
            let v = normalize_rot6d(p.rot6(j))?;
            p.set_rot6(j, &v);
        }
    }
    Ok(RefineOutcome { sequence: out, trace, cone })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::hand_sphere_scene;

    #[test]
    fn refine_is_local_and_monotone() {
        let skel = Skeleton::default();
        let model = HandModel::new(&skel);
        let scene = hand_sphere_scene(&skel, 3, 0.04, 0.01).unwrap();
        let config = RefineConfig { iterations: 10, ..RefineConfig::default() };
        let out = refine_hand(&scene.sequence, &scene.object, &skel, &model, &config).unwrap();

        for w in out.trace.windows(2) {
            assert!(w[1].total() <= w[0].total());
        }

        let n = scene.sequence.len();
        let start = n - config.window;
        let arm = skel.roles().right_arm;
        let fingers = optimised_joints(&skel);
        let cone_start = out.cone.start.filter(|_| out.cone.applied).unwrap_or(n);
        for (f, (a, b)) in out.sequence.frames.iter().zip(&scene.sequence.frames).enumerate() {
            assert_eq!(a.translation(), b.translation());
            for j in 0..skel.num_joints() {
                let movable = (f >= start && fingers.contains(&j)) || (f >= cone_start && [arm.shoulder, arm.elbow, arm.wrist].contains(&j));
                if !movable {
                    assert_eq!(a.rot6(j), b.rot6(j), "frame {f} joint {j}");
                }
            }
        }

        let before = contact_finger_distances(&skel, &model, scene.sequence.last(), &scene.object).unwrap();
        let after = contact_finger_distances(&skel, &model, out.sequence.last(), &scene.object).unwrap();
        assert!(after.iter().sum::<f64>() <= before.iter().sum::<f64>() + 1e-9, "{before:?} -> {after:?}");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            RefineConfig { alpha3: -1.0, ..RefineConfig::default() },
            RefineConfig { window: 0, ..RefineConfig::default() },
            RefineConfig { step_size: f64::NAN, ..RefineConfig::default() },
        ];
        for c in bad {
            assert!(c.validate().unwrap_err().is_validation());
        }
    }
}
