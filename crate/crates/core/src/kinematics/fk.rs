//! Forward kinematics and its reverse-mode derivative.
//!
//! Each joint's world frame is its parent's world frame composed with the
//! joint's local rotation. A child sits at the parent position plus the
//! parent's world rotation applied to the child's rest offset, so a joint's
//! own rotation moves its children but not itself.

use nalgebra::{DMatrix, Matrix3, Vector3};

use super::pose::{rot_range, Pose, POSE_DIM};
use super::rotation;
use super::skeleton::Skeleton;
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct FkState {
    pub positions: Vec<Vector3<f64>>,
    pub world_rot: Vec<Matrix3<f64>>,
    pub local_rot: Vec<Matrix3<f64>>,
}

impl FkState {
    /// World position of a point rigidly attached to `joint` at `local`.
    pub fn attached(&self, joint: usize, local: &Vector3<f64>) -> Vector3<f64> {
        self.positions[joint] + self.world_rot[joint] * local
    }
}

pub fn forward_kinematics(skel: &Skeleton, pose: &Pose) -> Result<FkState> {
    let n = skel.num_joints();
    let mut local_rot = Vec::with_capacity(n);
    for j in 0..n {
        local_rot.push(pose.rotation(j)?);
    }
    let mut positions = vec![Vector3::zeros(); n];
    let mut world_rot = vec![Matrix3::identity(); n];
    positions[0] = pose.translation();
    world_rot[0] = local_rot[0];
    for j in 1..n {
        let p = skel.parent(j).expect("non-root joint has a parent");
        positions[j] = positions[p] + world_rot[p] * skel.rest_offset(j);
        world_rot[j] = world_rot[p] * local_rot[j];
    }
    Ok(FkState { positions, world_rot, local_rot })
}

/// Joint positions only.
pub fn joint_positions(skel: &Skeleton, pose: &Pose) -> Result<Vec<Vector3<f64>>> {
    Ok(forward_kinematics(skel, pose)?.positions)
}

/// Upstream gradients on FK outputs.
#[derive(Clone, Debug)]
pub struct FkGrad {
    pub positions: Vec<Vector3<f64>>,
    pub world_rot: Vec<Matrix3<f64>>,
}

impl FkGrad {
    pub fn zeros(n: usize) -> Self {
        Self { positions: vec![Vector3::zeros(); n], world_rot: vec![Matrix3::zeros(); n] }
    }

    /// Adds the gradient `g` of a point attached to `joint` at `local`.
    pub fn add_attached(&mut self, joint: usize, local: &Vector3<f64>, g: &Vector3<f64>) {
        self.positions[joint] += g;
        self.world_rot[joint] += g * local.transpose();
    }
}

/// Vector-Jacobian product: pulls gradients on joint positions and world
/// rotations back onto the 225 pose parameters.
pub fn fk_backward(skel: &Skeleton, pose: &Pose, state: &FkState, grad: FkGrad) -> Result<[f64; POSE_DIM]> {
    let FkGrad { positions: mut gp, world_rot: mut gw } = grad;
    let mut out = [0.0; POSE_DIM];
    for j in (1..skel.num_joints()).rev() {
        let p = skel.parent(j).expect("non-root joint has a parent");
        let gpj = gp[j];
        gp[p] += gpj;
        gw[p] += gpj * skel.rest_offset(j).transpose();
        let gwj = gw[j];
        gw[p] += gwj * state.local_rot[j].transpose();
        let g_local = state.world_rot[p].transpose() * gwj;
        if g_local.iter().any(|x| *x != 0.0) {
            let g6 = rotation::rot6d_backward(pose.rot6(j), &g_local)?;
            out[rot_range(j)].copy_from_slice(&g6);
        }
    }
    out[0..3].copy_from_slice(gp[0].as_slice());
    let g6 = rotation::rot6d_backward(pose.rot6(0), &gw[0])?;
    out[rot_range(0)].copy_from_slice(&g6);
    Ok(out)
}

/// Jacobian of the positions of `joints` (3 rows each, x/y/z) with respect
/// to all 225 pose parameters.
pub fn fk_jacobian(skel: &Skeleton, pose: &Pose, joints: &[usize]) -> Result<DMatrix<f64>> {
    let state = forward_kinematics(skel, pose)?;
    let mut jac = DMatrix::zeros(3 * joints.len(), POSE_DIM);
    for (k, &j) in joints.iter().enumerate() {
        for axis in 0..3 {
            let mut g = FkGrad::zeros(skel.num_joints());
            g.positions[j][axis] = 1.0;
            let row = fk_backward(skel, pose, &state, g)?;
            for (c, v) in row.iter().enumerate() {
                jac[(3 * k + axis, c)] = *v;
            }
        }
    }
    Ok(jac)
}

/// Finger joint positions expressed in the right-wrist frame, finger-major
/// (thumb1, thumb2, thumb3, index1, ...).
pub fn wrist_local_finger_positions(skel: &Skeleton, pose: &Pose) -> Result<Vec<Vector3<f64>>> {
    let state = forward_kinematics(skel, pose)?;
    Ok(wrist_local_from_state(skel, &state))
}

pub(crate) fn wrist_local_from_state(skel: &Skeleton, state: &FkState) -> Vec<Vector3<f64>> {
    let roles = skel.roles();
    let w = roles.right_arm.wrist;
    let inv = state.world_rot[w].transpose();
    roles
        .fingers
        .iter()
        .flatten()
        .map(|&j| inv * (state.positions[j] - state.positions[w]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::rotation::axis_angle;
    use crate::kinematics::skeleton::{SkeletonConfig, NUM_JOINTS};
    use crate::kinematics::random_pose;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rest_positions(skel: &Skeleton) -> Vec<Vector3<f64>> {
        let mut out = vec![Vector3::zeros(); NUM_JOINTS];
        for j in 1..NUM_JOINTS {
            out[j] = out[skel.parent(j).unwrap()] + skel.rest_offset(j);
        }
        out
    }

    #[test]
    fn identity_pose_gives_rest_positions() {
        let skel = Skeleton::default();
        let fk = forward_kinematics(&skel, &Pose::identity()).unwrap();
        let rest = rest_positions(&skel);
        for j in 0..NUM_JOINTS {
            assert!((fk.positions[j] - rest[j]).norm() < 1e-15);
        }
    }

    #[test]
    fn root_translation_is_rigid() {
        let skel = Skeleton::default();
        let mut pose = Pose::identity();
        let t = Vector3::new(1.0, 2.0, 3.0);
        pose.set_translation(&t);
        let fk = forward_kinematics(&skel, &pose).unwrap();
        let rest = rest_positions(&skel);
        for j in 0..NUM_JOINTS {
            assert!((fk.positions[j] - rest[j] - t).norm() < 1e-12);
        }
    }

    #[test]
    fn two_link_leg_with_bent_knee() {
        // straight down thigh and shank of 0.4 each, knee bent 90° about x
        let mut cfg = SkeletonConfig::default();
        let knee = cfg.joint_names.iter().position(|n| n == "l_knee").unwrap();
        let ankle = knee + 1;
        cfg.rest_dirs[knee - 1] = [0.0, 0.0, -1.0];
        cfg.rest_dirs[ankle - 1] = [0.0, 0.0, -1.0];
        cfg.bone_lengths[knee - 1] = 0.4;
        cfg.bone_lengths[ankle - 1] = 0.4;
        let skel = Skeleton::from_config(&cfg).unwrap();
        let mut pose = Pose::identity();
        pose.set_rotation(knee, &axis_angle(&Vector3::x(), std::f64::consts::FRAC_PI_2));
        let fk = forward_kinematics(&skel, &pose).unwrap();
        let hip = fk.positions[knee - 1];
        // explicit composition: knee = hip + (0,0,-0.4); ankle = knee + Rx(90°)(0,0,-0.4) = knee + (0,0.4,0)
        let expected_knee = hip + Vector3::new(0.0, 0.0, -0.4);
        let expected_ankle = expected_knee + Vector3::new(0.0, 0.4, 0.0);
        assert!((fk.positions[knee] - expected_knee).norm() < 1e-12);
        assert!((fk.positions[ankle] - expected_ankle).norm() < 1e-12);
    }

    #[test]
    fn bones_stay_rigid() {
        let skel = Skeleton::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let fk = forward_kinematics(&skel, &random_pose(&mut rng, 1.0)).unwrap();
            for j in 1..NUM_JOINTS {
                let p = skel.parent(j).unwrap();
                let d = (fk.positions[j] - fk.positions[p]).norm();
                assert!((d - skel.bone_length(j)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn root_position_jacobian_wrt_translation_is_identity() {
        let skel = Skeleton::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let jac = fk_jacobian(&skel, &random_pose(&mut rng, 1.0), &[0]).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(jac[(r, c)], if r == c { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn non_ancestor_rotations_have_zero_gradient() {
        let skel = Skeleton::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pose = random_pose(&mut rng, 1.0);
        let joint = skel.roles().fingers[1][2];
        let jac = fk_jacobian(&skel, &pose, &[joint]).unwrap();
        for j in 0..NUM_JOINTS {
            // a joint's own rotation does not move it either
            let moves = skel.is_ancestor(j, joint) && j != joint;
            let block = jac.columns(rot_range(j).start, 6).amax();
            if !moves {
                assert_eq!(block, 0.0, "joint {j}");
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let skel = Skeleton::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let joints: Vec<usize> = (0..NUM_JOINTS).collect();
        for _ in 0..3 {
            let pose = random_pose(&mut rng, 1.0);
            let jac = fk_jacobian(&skel, &pose, &joints).unwrap();
            let h = 1e-5;
            let mut fd = DMatrix::zeros(3 * NUM_JOINTS, POSE_DIM);
            for c in 0..POSE_DIM {
                let mut pp = pose;
                let mut pm = pose;
                pp.params_mut()[c] += h;
                pm.params_mut()[c] -= h;
                let a = joint_positions(&skel, &pp).unwrap();
                let b = joint_positions(&skel, &pm).unwrap();
                for j in 0..NUM_JOINTS {
                    for k in 0..3 {
                        fd[(3 * j + k, c)] = (a[j][k] - b[j][k]) / (2.0 * h);
                    }
                }
            }
            let rel = (&jac - &fd).norm() / fd.norm();
            assert!(rel < 1e-4, "relative error {rel}");
        }
    }

    #[test]
    fn wrist_local_is_invariant_to_global_motion() {
        let skel = Skeleton::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pose = random_pose(&mut rng, 1.0);
        let mut moved = pose;
        moved.set_translation(&Vector3::new(3.0, -1.0, 0.5));
        let spin = axis_angle(&Vector3::new(0.3, 1.0, -0.2), 1.1);
        moved.set_rotation(0, &(spin * pose.rotation(0).unwrap()));
        let a = wrist_local_finger_positions(&skel, &pose).unwrap();
        let b = wrist_local_finger_positions(&skel, &moved).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn wrist_local_matches_explicit_inverse_transform() {
        let skel = Skeleton::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = skel.roles().right_arm.wrist;
        for _ in 0..10 {
            let pose = random_pose(&mut rng, 1.0);
            let fk = forward_kinematics(&skel, &pose).unwrap();
            let local = wrist_local_finger_positions(&skel, &pose).unwrap();
            let inv = fk.world_rot[w].try_inverse().unwrap();
            for (k, &j) in skel.roles().fingers.iter().flatten().enumerate() {
                let expected = inv * (fk.positions[j] - fk.positions[w]);
                assert!((local[k] - expected).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_wrist_local_matches_rest_offsets() {
        let skel = Skeleton::default();
        let local = wrist_local_finger_positions(&skel, &Pose::identity()).unwrap();
        let rest = rest_positions(&skel);
        let w = skel.roles().right_arm.wrist;
        for (k, &j) in skel.roles().fingers.iter().flatten().enumerate() {
            assert!((local[k] - (rest[j] - rest[w])).norm() < 1e-15);
        }
    }
}
