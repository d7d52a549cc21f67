//! Wrist trajectory correction inside a cone around the final wrist, and
//! the arm IK that makes the skeleton follow it.

use nalgebra::Vector3;

use crate::error::Result;
use crate::foot_refine::two_bone_ik;
use crate::kinematics::skeleton::ArmJoints;
use crate::kinematics::{forward_kinematics, Pose, Skeleton};

#[derive(Clone, Debug, PartialEq)]
pub struct ConeCorrection {
    pub positions: Vec<Vector3<f64>>,
    /// First frame of the corrected window (the frame of wrist `A`).
    pub start: Option<usize>,
    /// Largest angle ∠AOB seen in the window, radians.
    pub max_angle: f64,
    pub applied: bool,
}

fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    if a.norm() == 0.0 || b.norm() == 0.0 {
        0.0
    } else {
        a.angle(b)
    }
}

/// Squeezes the wrists from the first one within `radius` of `o` onwards
/// into a cone of half-angle `half_angle` around `OA`. Each wrist `D` keeps
/// its distance to `o` and is rotated in the plane of `OA` and `OD` so that
/// `∠AOD' = ∠AOD / ∠AOB · half_angle`. Nothing changes unless the widest
/// angle `∠AOB` exceeds `half_angle`.
pub fn wrist_cone_correct(wrists: &[Vector3<f64>], o: &Vector3<f64>, radius: f64, half_angle: f64) -> ConeCorrection {
    let mut out = ConeCorrection { positions: wrists.to_vec(), start: None, max_angle: 0.0, applied: false };
    let Some(start) = wrists.iter().position(|w| (w - o).norm() <= radius) else {
        return out;
    };
    out.start = Some(start);
    let oa = wrists[start] - o;
    let angles: Vec<f64> = wrists[start..].iter().map(|w| angle_between(&oa, &(w - o))).collect();
    let max_angle = angles.iter().cloned().fold(0.0, f64::max);
    out.max_angle = max_angle;
    if max_angle <= half_angle || oa.norm() == 0.0 {
        return out;
    }
    out.applied = true;
    let a_hat = oa.normalize();
    for (k, &theta) in angles.iter().enumerate() {
        let i = start + k;
        let od = wrists[i] - o;
        let r = od.norm();
        if r == 0.0 || theta == 0.0 {
            continue;
        }
        let perp = od - a_hat * a_hat.dot(&od);
        let e = perp.try_normalize(1e-12).unwrap_or_else(|| {
            // D opposite A: any direction perpendicular to OA spans the plane
            let t = if a_hat.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
            a_hat.cross(&t).normalize()
        });
        let new_theta = theta / max_angle * half_angle;
        out.positions[i] = o + (a_hat * new_theta.cos() + e * new_theta.sin()) * r;
    }
    out
}

/// Moves the wrist of `arm` onto `target` by rotating the shoulder and
/// elbow in the current shoulder-elbow-wrist plane. The wrist's local
/// rotation is compensated so the hand keeps its world orientation.
/// Returns whether the target was reachable.
pub fn arm_ik_follow(skel: &Skeleton, pose: &mut Pose, arm: &ArmJoints, target: &Vector3<f64>) -> Result<bool> {
    let fk = forward_kinematics(skel, pose)?;
    let (s, e, w) = (fk.positions[arm.shoulder], fk.positions[arm.elbow], fk.positions[arm.wrist]);
    let normal = (e - s).cross(&(w - s));
    let sol = two_bone_ik(&s, &e, &w, target, &normal);

    let w_parent = fk.world_rot[skel.parent(arm.shoulder).expect("shoulder has a parent")];
    let w_shoulder = sol.base_rot * fk.world_rot[arm.shoulder];
    let w_elbow = sol.mid_rot * sol.base_rot * fk.world_rot[arm.elbow];
    let w_wrist = fk.world_rot[arm.wrist];
    pose.set_rotation(arm.shoulder, &(w_parent.transpose() * w_shoulder));
    pose.set_rotation(arm.elbow, &(w_shoulder.transpose() * w_elbow));
    pose.set_rotation(arm.wrist, &(w_elbow.transpose() * w_wrist));
    Ok(sol.reached)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::random_pose;
    use crate::kinematics::rotation::axis_angle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, FRAC_PI_8};

    #[test]
    fn half_of_a_right_angle_maps_to_an_eighth_turn() {
        let o = Vector3::new(0.1, 0.2, 0.3);
        let a = o + Vector3::new(0.3, 0.0, 0.0);
        let d = o + Vector3::new(FRAC_PI_4.cos(), FRAC_PI_4.sin(), 0.0) * 0.2;
        let b = o + Vector3::new(0.0, 0.25, 0.0);
        let c = wrist_cone_correct(&[a, d, b, o], &o, 0.4, FRAC_PI_4);
        assert!(c.applied);
        assert!((c.max_angle - FRAC_PI_2).abs() < 1e-15);
        assert!(((c.positions[1] - o).angle(&(a - o)) - FRAC_PI_8).abs() < 1e-12);
        assert_eq!(c.positions[0], a);
        assert_eq!(c.positions[3], o);
    }

    #[test]
    fn narrow_trajectories_are_untouched() {
        let o = Vector3::zeros();
        let w: Vec<_> = (0..10).map(|i| Vector3::new(0.3, 0.02 * i as f64, 0.0)).collect();
        let c = wrist_cone_correct(&w, &o, 0.4, FRAC_PI_4);
        assert!(!c.applied);
        assert_eq!(c.positions, w);
        // wrists that never come near O are left alone as well
        let far: Vec<_> = (0..5).map(|i| Vector3::new(1.0, i as f64, 0.0)).collect();
        assert_eq!(wrist_cone_correct(&far, &o, 0.4, FRAC_PI_4).start, None);
    }

    #[test]
    fn radii_are_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let o = Vector3::new(0.0, 0.5, 1.0);
        let w: Vec<_> = (0..30)
            .map(|_| o + Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)))
            .collect();
        let c = wrist_cone_correct(&w, &o, 0.4, FRAC_PI_4);
        assert!(c.applied);
        let oa = w[c.start.unwrap()] - o;
        for (a, b) in c.positions.iter().zip(&w) {
            assert!(((a - o).norm() - (b - o).norm()).abs() < 1e-9);
            assert!((a - o).angle(&oa) <= FRAC_PI_4 + 1e-12);
        }
    }

    #[test]
    fn arm_ik_reaches_and_keeps_the_rest() {
        let skel = Skeleton::default();
        let arm = skel.roles().right_arm;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut reached = 0;
        for _ in 0..50 {
            let mut pose = random_pose(&mut rng, 0.3);
            pose.set_rotation(arm.elbow, &axis_angle(&Vector3::z(), rng.random_range(0.3..1.5)));
            let before = forward_kinematics(&skel, &pose).unwrap();
            let offset = Vector3::new(rng.random_range(-0.08..0.08), rng.random_range(-0.08..0.08), rng.random_range(-0.08..0.08));
            let target = before.positions[arm.wrist] + offset;
            let mut out = pose;
            if arm_ik_follow(&skel, &mut out, &arm, &target).unwrap() {
                reached += 1;
                let after = forward_kinematics(&skel, &out).unwrap();
                assert!((after.positions[arm.wrist] - target).norm() < 1e-5);
                assert!((after.world_rot[arm.wrist] - before.world_rot[arm.wrist]).amax() < 1e-9);
            }
            for j in 0..skel.num_joints() {
                if ![arm.shoulder, arm.elbow, arm.wrist].contains(&j) {
                    assert_eq!(out.rot6(j), pose.rot6(j));
                }
            }
            assert_eq!(out.translation(), pose.translation());
        }
        assert!(reached >= 35, "{reached}");
    }

    #[test]
    fn arm_ik_fixed_point() {
        let skel = Skeleton::default();
        let arm = skel.roles().right_arm;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pose = random_pose(&mut rng, 0.5);
        let wrist = forward_kinematics(&skel, &pose).unwrap().positions[arm.wrist];
        let mut out = pose;
        arm_ik_follow(&skel, &mut out, &arm, &wrist).unwrap();
        for (a, b) in out.params().iter().zip(pose.params()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
