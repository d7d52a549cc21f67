//! Procedural training and test data: a character walks a few steps toward
//! an object while the right arm reaches for it and the fingers open, then
//! close around it. Feet are placed with leg IK, so planted feet really are
//! stationary and the contact labels follow from foot speed.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::foot_refine::retarget_foot;
use crate::hand_refine::{arm_ik_follow, ObjectCloud};
use crate::kinematics::rotation::{axis_angle, rotation_between};
use crate::kinematics::skeleton::LegJoints;
use crate::kinematics::{forward_kinematics, HandModel, Pose, Skeleton};
use crate::sequence::MotionSequence;

/// Foot speed below which a frame is labelled as contact, m/s.
pub const CONTACT_SPEED: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ObjectShape {
    Sphere { center: [f64; 3], radius: f64 },
    Cuboid { center: [f64; 3], half: [f64; 3] },
}

impl ObjectShape {
    /// Signed distance, negative inside.
    pub fn sdf(&self, p: &Vector3<f64>) -> f64 {
        match *self {
            ObjectShape::Sphere { center, radius } => (p - Vector3::from(center)).norm() - radius,
            ObjectShape::Cuboid { center, half } => {
                let q = (p - Vector3::from(center)).abs() - Vector3::from(half);
                q.map(|v| v.max(0.0)).norm() + q.max().min(0.0)
            }
        }
    }

    pub fn cloud(&self) -> ObjectCloud {
        match *self {
            ObjectShape::Sphere { center, radius } => ObjectCloud::sphere(center.into(), radius),
            ObjectShape::Cuboid { center, half } => ObjectCloud::cuboid(center.into(), half.into()),
        }
    }

    fn translated(&self, d: &Vector3<f64>) -> Self {
        match *self {
            ObjectShape::Sphere { center, radius } => ObjectShape::Sphere { center: (Vector3::from(center) + d).into(), radius },
            ObjectShape::Cuboid { center, half } => ObjectShape::Cuboid { center: (Vector3::from(center) + d).into(), half },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthOptions {
    /// Number of transitions; sequences hold `horizon + 1` frames.
    pub horizon: usize,
    pub fps: f64,
    /// How far the finger capsules reach into the object in the final
    /// frame, metres. Zero means touching.
    pub penetration: f64,
    /// Walking distance range, metres.
    pub walk: [f64; 2],
    /// Force a sphere of this radius instead of a random object.
    pub sphere_radius: Option<f64>,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self { horizon: 30, fps: 30.0, penetration: 0.0, walk: [0.2, 0.6], sphere_radius: None }
    }
}

#[derive(Clone, Debug)]
pub struct SynthSample {
    pub sequence: MotionSequence,
    pub shape: ObjectShape,
    pub object: ObjectCloud,
}

fn ease(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

const PELVIS_HEIGHT: f64 = 0.90;

/// Standing pose at the origin: knees slightly bent, right arm hanging
/// down and a little forward, everything else at rest.
pub fn standing_pose(skel: &Skeleton) -> Pose {
    let roles = skel.roles();
    let mut pose = Pose::identity();
    pose.set_translation(&Vector3::new(0.0, 0.0, PELVIS_HEIGHT));
    for leg in [roles.left_leg, roles.right_leg] {
        pose.set_rotation(leg.hip, &axis_angle(&Vector3::x(), 0.15));
        pose.set_rotation(leg.knee, &axis_angle(&Vector3::x(), -0.3));
    }
    let arm = roles.right_arm;
    let down = rotation_between(&skel.rest_offset(arm.elbow), &Vector3::new(0.0, 0.2, -1.0), &Vector3::y());
    pose.set_rotation(arm.shoulder, &down);
    pose.set_rotation(arm.elbow, &axis_angle(&Vector3::z(), -0.3));
    pose
}

/// Sets every finger joint to bend by `curl` radians toward the palm side.
pub fn curl_fingers(skel: &Skeleton, pose: &mut Pose, curl: f64) {
    for chain in skel.roles().fingers {
        for (s, &j) in chain.iter().enumerate() {
            let bone = if s < 2 { skel.rest_dir(chain[s + 1]) } else { skel.rest_dir(j) };
            let axis = bone.cross(&-Vector3::z());
            let r = if axis.norm() < 1e-9 { Matrix3::identity() } else { axis_angle(&axis, curl) };
            pose.set_rotation(j, &r);
        }
    }
}

fn slerp(a: &Matrix3<f64>, b: &Matrix3<f64>, s: f64) -> Matrix3<f64> {
    let qa = UnitQuaternion::from_matrix(a);
    let qb = UnitQuaternion::from_matrix(b);
    qa.slerp(&qb, s).to_rotation_matrix().into_inner()
}

/// Places `shape` relative to the hand of `pose` so that every contact
/// finger reaches about `penetration` into it while the palm stays clear.
/// The thumb curls beside the index finger rather than opposing it, so it
/// is left out of the fit.
fn place_object(skel: &Skeleton, model: &HandModel, pose: &Pose, shape: ObjectShape, penetration: f64) -> Result<ObjectShape> {
    let state = forward_kinematics(skel, pose)?;
    let caps = model.world_capsules(&state);
    let roles = skel.roles();
    let wrist_rot = state.world_rot[roles.right_arm.wrist];
    let forward = wrist_rot * -Vector3::x();
    let down = wrist_rot * -Vector3::z();
    let knuckle = state.positions[roles.fingers[2][0]];
    let origin = match shape {
        ObjectShape::Sphere { center, .. } | ObjectShape::Cuboid { center, .. } => Vector3::from(center),
    };

    let depth = |s: &ObjectShape, cap: &crate::kinematics::hand::WorldCapsule| {
        (0..=8).map(|k| cap.radius - s.sdf(&(cap.a + (cap.b - cap.a) * (k as f64 / 8.0)))).fold(f64::MIN, f64::max)
    };
    let mut best = (f64::INFINITY, shape);
    for a in 0..=40 {
        for d in 0..=50 {
            let c = knuckle + forward * (a as f64 * 0.002) + down * (d as f64 * 0.002);
            let s = shape.translated(&(c - origin));
            let palm = depth(&s, caps.last().expect("palm capsule"));
            if palm > -0.002 {
                continue;
            }
            let mut score = 0.0;
            for f in 1..4 {
                let deepest = model
                    .capsules
                    .iter()
                    .zip(&caps)
                    .filter(|(m, _)| m.finger == Some(f))
                    .map(|(_, w)| depth(&s, w))
                    .fold(f64::MIN, f64::max);
                score += (deepest - penetration).powi(2);
            }
            if score < best.0 {
                best = (score, s);
            }
        }
    }
    Ok(best.1)
}

fn solve_leg(skel: &Skeleton, pose: &mut Pose, leg: &LegJoints, target: &Vector3<f64>) -> Result<()> {
    *pose = retarget_foot(skel, pose, leg, target)?.pose;
    Ok(())
}

/// Contact probabilities from foot speed: 1 when the foot moved less than
/// `CONTACT_SPEED` since the previous frame (the next frame for frame 0).
pub fn contact_labels(skel: &Skeleton, frames: &[Pose], fps: f64) -> Result<Vec<[f64; 2]>> {
    let roles = skel.roles();
    let mut feet = Vec::with_capacity(frames.len());
    for p in frames {
        let fk = forward_kinematics(skel, p)?;
        feet.push([fk.positions[roles.left_leg.foot], fk.positions[roles.right_leg.foot]]);
    }
    Ok((0..frames.len())
        .map(|i| {
            let j = if i == 0 { 1.min(frames.len() - 1) } else { i - 1 };
            std::array::from_fn(|side| {
                let speed = (feet[i][side] - feet[j][side]).norm() * fps;
                if speed < CONTACT_SPEED { 1.0 } else { 0.0 }
            })
        })
        .collect())
}

/// One reach-and-grasp sample, fully determined by `rng`.
pub fn synth_sample(skel: &Skeleton, model: &HandModel, opts: &SynthOptions, rng: &mut impl Rng) -> Result<SynthSample> {
    let roles = skel.roles();
    let t = opts.horizon.max(1);
    let base = standing_pose(skel);

    let walk = if opts.walk[1] > opts.walk[0] { rng.random_range(opts.walk[0]..opts.walk[1]) } else { opts.walk[0] };
    let dir = Vector3::new(rng.random_range(-0.25..0.25), 1.0, 0.0).normalize();
    let steps = if walk > 0.0 { rng.random_range(2..=4usize) } else { 0 };
    let start = base.translation();
    let root = |s: f64| start + dir * (walk * ease(s));

    // final pose: arm reaching to a random point in front of the shoulder
    let mut last = base;
    last.set_translation(&root(1.0));
    let shoulder = forward_kinematics(skel, &last)?.positions[roles.right_arm.shoulder];
    let u = Vector3::new(rng.random_range(-0.5..0.0), 1.0, rng.random_range(-0.7..-0.1)).normalize();
    arm_ik_follow(skel, &mut last, &roles.right_arm, &(shoulder + u * rng.random_range(0.42..0.48)))?;
    let up = Vector3::z() - u * u.z;
    let hand_x = -u;
    let hand_z = up.normalize();
    let desired = Matrix3::from_columns(&[hand_x, hand_z.cross(&hand_x), hand_z]);
    let fk_last = forward_kinematics(skel, &last)?;
    last.set_rotation(roles.right_arm.wrist, &(fk_last.world_rot[roles.right_arm.elbow].transpose() * desired));
    let curl = rng.random_range(0.45..0.75);
    curl_fingers(skel, &mut last, curl);

    let shape = match opts.sphere_radius {
        Some(radius) => ObjectShape::Sphere { center: [0.0; 3], radius },
        None if rng.random_bool(0.5) => ObjectShape::Sphere { center: [0.0; 3], radius: rng.random_range(0.03..0.05) },
        None => ObjectShape::Cuboid {
            center: [0.0; 3],
            half: [rng.random_range(0.025..0.045), rng.random_range(0.025..0.045), rng.random_range(0.03..0.06)],
        },
    };
    let shape = place_object(skel, model, &last, shape, opts.penetration)?;

    // foot plants: the swinging foot alternates, landing ahead of the root
    let feet0 = {
        let fk = forward_kinematics(skel, &base)?;
        [fk.positions[roles.left_leg.foot], fk.positions[roles.right_leg.foot]]
    };
    let lead = if steps > 0 { 0.5 * walk / steps as f64 } else { 0.0 };
    let bounds: Vec<usize> = (0..=steps).map(|s| (s * t).div_ceil(steps.max(1))).collect();
    let mut plants = vec![feet0];
    for s in 0..steps {
        let mut next = plants[s];
        let side = s % 2;
        let shift = root(bounds[s + 1] as f64 / t as f64) - start;
        next[side] = feet0[side] + shift + dir * lead;
        plants.push(next);
    }

    let arm = roles.right_arm;
    let grasp_wrist = forward_kinematics(skel, &last)?.positions[arm.wrist];
    let above = grasp_wrist + desired * Vector3::z() * 0.1;
    let mut pregrasp = last;
    pregrasp.set_translation(&root(0.7));
    arm_ik_follow(skel, &mut pregrasp, &arm, &above)?;
    let arm_joints = [arm.shoulder, arm.elbow, arm.wrist];
    let mut frames = Vec::with_capacity(t + 1);
    for i in 0..=t {
        let s = i as f64 / t as f64;
        let mut pose = base;
        pose.set_translation(&root(s));
        // swing the arm to a pose above the object, then lower the hand
        // onto it along the back-of-hand direction with its orientation fixed
        if s < 0.7 {
            let reach = ease((s - 0.1) / 0.6);
            for &j in &arm_joints {
                pose.set_rotation(j, &slerp(&base.rotation(j)?, &pregrasp.rotation(j)?, reach));
            }
        } else {
            for &j in &arm_joints {
                pose.set_rot6(j, pregrasp.rot6(j).try_into().expect("6D block"));
            }
            let a = ease((s - 0.7) / 0.3);
            arm_ik_follow(skel, &mut pose, &arm, &(above + (grasp_wrist - above) * a))?;
        }
        let c = curl * ease((s - 0.7) / 0.3) - 0.2 * (std::f64::consts::PI * (s / 0.85).min(1.0)).sin().powi(2);
        curl_fingers(skel, &mut pose, c);

        let phase = (0..steps).find(|&k| i >= bounds[k] && i < bounds[k + 1]);
        let mut targets = plants[phase.unwrap_or(steps)];
        if let Some(k) = phase {
            let side = k % 2;
            let w = (i - bounds[k]) as f64 / (bounds[k + 1] - bounds[k]) as f64;
            let (a, b) = (plants[k][side], plants[k + 1][side]);
            targets[side] = a + (b - a) * ease(w) + Vector3::z() * (0.05 * (std::f64::consts::PI * w).sin());
        }
        solve_leg(skel, &mut pose, &roles.left_leg, &targets[0])?;
        solve_leg(skel, &mut pose, &roles.right_leg, &targets[1])?;
        frames.push(pose);
    }
    // the final frame carries the grasp pose exactly
    for j in arm_joints.into_iter().chain(roles.fingers.iter().flatten().copied()) {
        frames[t].set_rot6(j, last.rot6(j).try_into().expect("6D block"));
    }

    let contacts = contact_labels(skel, &frames, opts.fps)?;
    let sequence = MotionSequence::new(frames, opts.fps)?.with_contacts(contacts)?;
    Ok(SynthSample { sequence, shape, object: shape.cloud() })
}

/// `count` samples from one seed; sample `k` only depends on `(seed, k)`.
pub fn synth_corpus(skel: &Skeleton, opts: &SynthOptions, seed: u64, count: usize) -> Result<Vec<SynthSample>> {
    let model = HandModel::new(skel);
    let items: Vec<u64> = (0..count as u64).collect();
    crate::par::map_collect(&items, |&k| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ k.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        synth_sample(skel, &model, opts, &mut rng)
    })
    .into_iter()
    .collect()
}

/// The acceptance scene: a reach that ends with the curled fingers about
/// `penetration` deep inside a sphere of radius `radius`.
pub fn hand_sphere_scene(skel: &Skeleton, seed: u64, radius: f64, penetration: f64) -> Result<SynthSample> {
    let opts = SynthOptions { penetration, sphere_radius: Some(radius), walk: [0.0, 0.0], ..SynthOptions::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    synth_sample(skel, &HandModel::new(skel), &opts, &mut rng)
}

/// Adds a slide of `per_frame` metres per frame to each foot during its
/// labelled contact runs, re-solving leg IK. The slide is centred on each
/// run so the foot passes through its planted position. Contact labels are
/// kept.
pub fn inject_drift(skel: &Skeleton, seq: &MotionSequence, per_frame: f64, direction: &Vector3<f64>) -> Result<MotionSequence> {
    let probs = seq.contact_probs.clone().unwrap_or_else(|| vec![[0.0; 2]; seq.len()]);
    let roles = skel.roles();
    let legs = [roles.left_leg, roles.right_leg];
    let dir = direction.normalize();
    let mut out = seq.clone();
    for (side, leg) in legs.iter().enumerate() {
        let mut i = 0;
        while i < seq.len() {
            if probs[i][side] < 0.5 {
                i += 1;
                continue;
            }
            let a = i;
            while i + 1 < seq.len() && probs[i + 1][side] >= 0.5 {
                i += 1;
            }
            let b = i;
            let mid = 0.5 * (a + b) as f64;
            for f in a..=b {
                let foot = forward_kinematics(skel, &out.frames[f])?.positions[leg.foot];
                let target = foot + dir * (per_frame * (f as f64 - mid));
                solve_leg(skel, &mut out.frames[f], leg, &target)?;
            }
            i += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic() {
        let skel = Skeleton::default();
        let opts = SynthOptions::default();
        let a = synth_corpus(&skel, &opts, 7, 3).unwrap();
        let b = synth_corpus(&skel, &opts, 7, 3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.sequence, y.sequence);
            assert_eq!(x.object, y.object);
        }
        assert_ne!(a[0].sequence, a[1].sequence);
    }

    #[test]
    fn contact_frames_are_planted() {
        let skel = Skeleton::default();
        let roles = skel.roles();
        for s in synth_corpus(&skel, &SynthOptions::default(), 3, 4).unwrap() {
            let seq = &s.sequence;
            let probs = seq.contact_probs.as_ref().unwrap();
            assert!(probs.iter().any(|p| p[0] == 1.0) && probs.iter().any(|p| p[0] == 0.0));
            for i in 1..seq.len() {
                let a = forward_kinematics(&skel, &seq.frames[i - 1]).unwrap();
                let b = forward_kinematics(&skel, &seq.frames[i]).unwrap();
                for (side, leg) in [roles.left_leg, roles.right_leg].iter().enumerate() {
                    if probs[i][side] == 1.0 {
                        assert!((b.positions[leg.foot] - a.positions[leg.foot]).norm() * seq.fps < CONTACT_SPEED);
                    }
                }
            }
        }
    }

    #[test]
    fn object_normals_point_outward() {
        let skel = Skeleton::default();
        for s in synth_corpus(&skel, &SynthOptions::default(), 11, 4).unwrap() {
            let c = s.object.centroid();
            for (p, n) in s.object.points().iter().zip(s.object.normals()) {
                assert!((n.norm() - 1.0).abs() < 1e-9);
                assert!((p - c).dot(n) > 0.0);
            }
        }
    }
}
