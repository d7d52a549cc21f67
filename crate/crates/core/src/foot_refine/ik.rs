//! Analytic two-bone IK and the knee-plane variant used for the legs.

use nalgebra::{Matrix3, Vector3};

use crate::error::Result;
use crate::kinematics::rotation::rotation_between;
use crate::kinematics::skeleton::LegJoints;
use crate::kinematics::{forward_kinematics, Pose, Skeleton};

const EPS: f64 = 1e-12;

/// Result of a two-bone solve. `base_rot` is a world-frame rotation about
/// the base joint applied to the whole chain; `mid_rot` is then applied
/// about the new mid joint to the second bone.
#[derive(Clone, Copy, Debug)]
pub struct TwoBoneSolution {
    pub base_rot: Matrix3<f64>,
    pub mid_rot: Matrix3<f64>,
    pub mid: Vector3<f64>,
    pub end: Vector3<f64>,
    /// False when the target was out of range and the chain was clamped.
    pub reached: bool,
}

/// Places the end of the chain `base → mid → end` on `target`, bending in
/// the plane with normal `plane_normal` and keeping the current bend side.
///
/// Targets outside `[|L1 - L2|, L1 + L2]` clamp to full extension (or full
/// fold) along the target direction. A target on the base keeps the
/// current pose.
pub fn two_bone_ik(
    base: &Vector3<f64>,
    mid: &Vector3<f64>,
    end: &Vector3<f64>,
    target: &Vector3<f64>,
    plane_normal: &Vector3<f64>,
) -> TwoBoneSolution {
    let l1 = (mid - base).norm();
    let l2 = (end - mid).norm();
    let to_target = target - base;
    let d = to_target.norm();
    let unchanged = TwoBoneSolution {
        base_rot: Matrix3::identity(),
        mid_rot: Matrix3::identity(),
        mid: *mid,
        end: *end,
        reached: (end - target).norm() < EPS,
    };
    if d < EPS || l1 < EPS || l2 < EPS {
        return unchanged;
    }
    let dir = to_target / d;

    let mut normal = plane_normal - dir * dir.dot(plane_normal);
    if normal.norm() < 1e-9 {
        normal = (mid - base).cross(&(end - base));
        normal -= dir * dir.dot(&normal);
    }
    if normal.norm() < 1e-9 {
        normal = dir.cross(&Vector3::x());
        if normal.norm() < 1e-9 {
            normal = dir.cross(&Vector3::y());
        }
    }
    let normal = normal.normalize();
    let perp = normal.cross(&dir);

    let (lo, hi) = ((l1 - l2).abs(), l1 + l2);
    let reached = d >= lo - 1e-12 && d <= hi + 1e-12;
    let dc = d.clamp(lo, hi);
    let side = if (mid - base).dot(&perp) < 0.0 { -1.0 } else { 1.0 };
    let cos_a = if dc > EPS { ((l1 * l1 + dc * dc - l2 * l2) / (2.0 * l1 * dc)).clamp(-1.0, 1.0) } else { 0.0 };
    let sin_a = (1.0 - cos_a * cos_a).max(0.0).sqrt();
    let new_mid = base + (dir * cos_a + perp * (side * sin_a)) * l1;
    let new_end = base + dir * dc;

    let base_rot = rotation_between(&(mid - base), &(new_mid - base), &normal);
    let moved_end = base + base_rot * (end - base);
    let mid_rot = rotation_between(&(moved_end - new_mid), &(new_end - new_mid), &normal);
    TwoBoneSolution { base_rot, mid_rot, mid: new_mid, end: new_end, reached }
}

/// Interior angle at the mid joint, in radians.
pub fn interior_angle(base: &Vector3<f64>, mid: &Vector3<f64>, end: &Vector3<f64>) -> f64 {
    (base - mid).angle(&(end - mid))
}

#[derive(Clone, Copy, Debug)]
pub struct LegRetarget {
    pub pose: Pose,
    pub reached: bool,
}

/// Moves the foot joint of `leg` onto `target` by changing only the hip and
/// knee rotations. The knee bends about the normal of the knee-ankle-foot
/// plane, treating knee→foot as one rigid link with the ankle frozen.
///
/// 1. Project the hip into the K-A-F plane.
/// 2. Rotate the target about the hip, in the plane spanned by the plane
///    normal and the hip→target direction, until it lies in the K-A-F
///    plane (`T'`); solve the planar hip-knee-foot chain onto `T'`.
/// 3. Apply the inverse of step 2's rotation to the whole leg so the foot
///    lands on `T`.
pub fn retarget_foot(skel: &Skeleton, pose: &Pose, leg: &LegJoints, target: &Vector3<f64>) -> Result<LegRetarget> {
    let fk = forward_kinematics(skel, pose)?;
    let (h, k, a, f) = (fk.positions[leg.hip], fk.positions[leg.knee], fk.positions[leg.ankle], fk.positions[leg.foot]);

    let mut n = (a - k).cross(&(f - k));
    if n.norm() < 1e-9 * (a - k).norm() * (f - k).norm() {
        n = (k - h).cross(&(f - h));
    }
    if n.norm() < 1e-12 {
        n = fk.world_rot[leg.hip] * Vector3::x();
    }
    let n = n.normalize();

    // signed offset of the hip from the plane; knee and foot sit at -s
    let s = (h - k).dot(&n);
    let hip_proj = h - n * s;

    let ht = target - h;
    let r = ht.norm();
    let in_plane = ht - n * ht.dot(&n);
    let e = match in_plane.try_normalize(1e-12) {
        Some(e) => e,
        None => (f - hip_proj).try_normalize(1e-12).unwrap_or_else(|| n.cross(&Vector3::z())),
    };
    let lift_ok = r >= s.abs();
    let t_prime = h - n * s + e * (r * r - s * s).max(0.0).sqrt();
    let to_plane = rotation_between(&ht, &(t_prime - h), &n.cross(&e));

    let sol = two_bone_ik(&hip_proj, &k, &f, &t_prime, &n);
    let back = to_plane.transpose();

    let w_hip_parent = fk.world_rot[skel.parent(leg.hip).expect("hip has a parent")];
    let w_hip = back * sol.base_rot * fk.world_rot[leg.hip];
    let w_knee = back * sol.mid_rot * sol.base_rot * fk.world_rot[leg.knee];

    let mut out = *pose;
    out.set_rotation(leg.hip, &(w_hip_parent.transpose() * w_hip));
    out.set_rotation(leg.knee, &(w_hip.transpose() * w_knee));
    Ok(LegRetarget { pose: out, reached: sol.reached && lift_ok })
}
