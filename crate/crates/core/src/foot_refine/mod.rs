//! Lower-body cleanup: snap contact frames of each foot onto one position
//! per contact group with leg IK, then carry the correction smoothly
//! through the airborne frames in between. Only hip and knee rotations
//! change.

pub mod ik;

use nalgebra::Vector3;

pub use ik::{retarget_foot, two_bone_ik, LegRetarget, TwoBoneSolution};

use crate::error::{Error, Result};
use crate::kinematics::rotation::{normalize_rot6d, Rot6};
use crate::kinematics::skeleton::LegJoints;
use crate::kinematics::{forward_kinematics, Skeleton};
use crate::sequence::{mean_filter3, MotionSequence};

pub const DEFAULT_CONTACT_THRESHOLD: f64 = 0.5;

/// Per-foot contact flags, `[left, right]`. A probability equal to the
/// threshold counts as contact.
pub fn threshold_contacts(probs: &[[f64; 2]], threshold: f64) -> [Vec<bool>; 2] {
    std::array::from_fn(|side| probs.iter().map(|p| p[side] >= threshold).collect())
}

/// A maximal run of contact frames, `start..=end`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContactGroup {
    pub start: usize,
    pub end: usize,
    pub target: Vector3<f64>,
}

impl ContactGroup {
    pub fn frames(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }
}

/// Maximal runs of `true`, each with its foot target: the first frame's
/// position for the group holding frame 0, the last frame's position for
/// the group holding the final frame, otherwise the mean over the group.
pub fn build_groups(contact: &[bool], foot_positions: &[Vector3<f64>]) -> Vec<ContactGroup> {
    let n = contact.len().min(foot_positions.len());
    let mut groups = Vec::new();
    let mut i = 0;
    while i < n {
        if !contact[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i + 1 < n && contact[i + 1] {
            i += 1;
        }
        let end = i;
        let target = if start == 0 {
            foot_positions[0]
        } else if end == n - 1 {
            foot_positions[n - 1]
        } else {
            foot_positions[start..=end].iter().sum::<Vector3<f64>>() / (end - start + 1) as f64
        };
        groups.push(ContactGroup { start, end, target });
        i += 1;
    }
    groups
}

/// Shifts a joint-angle subsequence so it starts at `first` and then
/// ramps linearly so it ends at `last`:
///
/// `θ'ᵢ = θᵢ + (first - θ₁)`, then `θₙ,ᵢ = θ'ᵢ + (i-1)/(K-1) · (last - θ'ₖ)`.
///
/// The endpoints of the result are exactly `first` and `last`.
pub fn blend_airborne<V>(old: &[V], first: &V, last: &V) -> Vec<V>
where
    V: Clone + AsRef<[f64]> + AsMut<[f64]>,
{
    let k = old.len();
    if k <= 1 {
        return vec![first.clone()];
    }
    let shift: Vec<f64> = first.as_ref().iter().zip(old[0].as_ref()).map(|(a, b)| a - b).collect();
    let mut out: Vec<V> = old
        .iter()
        .map(|v| {
            let mut v = v.clone();
            v.as_mut().iter_mut().zip(&shift).for_each(|(x, s)| *x += s);
            v
        })
        .collect();
    let ramp: Vec<f64> = last.as_ref().iter().zip(out[k - 1].as_ref()).map(|(a, b)| a - b).collect();
    for (i, v) in out.iter_mut().enumerate() {
        let w = i as f64 / (k - 1) as f64;
        v.as_mut().iter_mut().zip(&ramp).for_each(|(x, r)| *x += w * r);
    }
    out[0] = first.clone();
    out[k - 1] = last.clone();
    out
}

/// Refines one leg in place over the whole sequence.
fn refine_leg(skel: &Skeleton, seq: &mut MotionSequence, leg: &LegJoints, contact: &[bool]) -> Result<()> {
    let n = seq.len();
    let mut feet = Vec::with_capacity(n);
    for pose in &seq.frames {
        feet.push(forward_kinematics(skel, pose)?.positions[leg.foot]);
    }
    let groups = build_groups(contact, &feet);
    if groups.is_empty() {
        return Ok(());
    }

    let joints = [leg.hip, leg.knee];
    let old: Vec<[Rot6; 2]> = seq
        .frames
        .iter()
        .map(|p| joints.map(|j| p.rot6(j).try_into().expect("6D block")))
        .collect();
    let mut new = old.clone();

    for g in &groups {
        for i in g.frames() {
            let r = retarget_foot(skel, &seq.frames[i], leg, &g.target)?;
            for (slot, &j) in joints.iter().enumerate() {
                new[i][slot] = r.pose.rot6(j).try_into().expect("6D block");
            }
        }
    }

    // airborne runs between (or before/after) contact groups
    let mut i = 0;
    while i < n {
        if contact[i] {
            i += 1;
            continue;
        }
        let a = i;
        while i + 1 < n && !contact[i + 1] {
            i += 1;
        }
        let b = i;
        i += 1;
        // anchor on the neighbouring contact frames; a run touching the
        // start or end of the sequence anchors on that (unchanged) frame
        let (lo, hi) = (a.saturating_sub(1), (b + 1).min(n - 1));
        if hi - lo < 2 {
            continue;
        }
        for slot in 0..2 {
            let sub: Vec<Rot6> = (lo..=hi).map(|f| old[f][slot]).collect();
            let filtered = mean_filter3(&sub);
            let first = if contact[lo] { new[lo][slot] } else { old[lo][slot] };
            let last = if contact[hi] { new[hi][slot] } else { old[hi][slot] };
            let blended = blend_airborne(&filtered, &first, &last);
            for (f, v) in (lo..=hi).zip(blended) {
                if !contact[f] && f != 0 && f != n - 1 {
                    new[f][slot] = v;
                }
            }
        }
    }

    for (f, pose) in seq.frames.iter_mut().enumerate() {
        for (slot, &j) in joints.iter().enumerate() {
            if new[f][slot] != old[f][slot] {
                pose.set_rot6(j, &normalize_rot6d(&new[f][slot])?);
            }
        }
    }
    Ok(())
}

/// Foot-skate cleanup over both legs. Requires contact probabilities.
/// Parameters other than the hip and knee rotations are left untouched.
pub fn refine_feet(seq: &MotionSequence, skel: &Skeleton, threshold: f64) -> Result<MotionSequence> {
    let probs = seq
        .contact_probs
        .as_ref()
        .ok_or_else(|| Error::Config("foot refinement needs per-frame contact probabilities".into()))?;
    let flags = threshold_contacts(probs, threshold);
    let roles = skel.roles();
    let mut out = seq.clone();
    refine_leg(skel, &mut out, &roles.left_leg, &flags[0])?;
    refine_leg(skel, &mut out, &roles.right_leg, &flags[1])?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn thresholding() {
        let probs: Vec<[f64; 2]> = [0.9, 0.9, 0.2, 0.2, 0.8, 0.8].iter().map(|&p| [p, 0.0]).collect();
        let [left, right] = threshold_contacts(&probs, 0.5);
        assert_eq!(left, [true, true, false, false, true, true]);
        assert!(right.iter().all(|c| !c));
        let [at, _] = threshold_contacts(&[[0.5, 0.5]], 0.5);
        assert_eq!(at, [true]);
    }

    #[test]
    fn boundary_groups_target_their_endpoint() {
        let flags = [true, true, false, false, true, true];
        let pos: Vec<Vector3<f64>> = (0..6).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let g = build_groups(&flags, &pos);
        assert_eq!(g.len(), 2);
        assert_eq!((g[0].start, g[0].end, g[0].target), (0, 1, pos[0]));
        assert_eq!((g[1].start, g[1].end, g[1].target), (4, 5, pos[5]));
    }

    #[test]
    fn middle_group_targets_the_mean() {
        let flags = [false, true, true, false];
        let pos = [Vector3::new(5.0, 0.0, 0.0), Vector3::zeros(), Vector3::new(0.02, 0.0, 0.0), Vector3::zeros()];
        let g = build_groups(&flags, &pos);
        assert_eq!(g.len(), 1);
        assert!((g[0].target - Vector3::new(0.01, 0.0, 0.0)).norm() < 1e-15);
        assert!(build_groups(&[false; 4], &pos).is_empty());
    }

    #[test]
    fn blend_fixed_point() {
        let old = vec![[1.0, 2.0], [1.5, 2.5], [0.5, 3.0], [2.0, 1.0]];
        let out = blend_airborne(&old, &old[0], &old[3]);
        for (a, b) in out.iter().zip(&old) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn blend_single_sample() {
        assert_eq!(blend_airborne(&[[3.0]], &[1.0], &[2.0]), vec![[1.0]]);
    }

    proptest! {
        #[test]
        fn blend_constant_shift_and_endpoints(
            old in prop::collection::vec(-2.0f64..2.0, 2..12),
            c in -1.0f64..1.0,
            e1 in -1.0f64..1.0,
            e2 in -1.0f64..1.0,
        ) {
            let old: Vec<[f64; 1]> = old.into_iter().map(|x| [x]).collect();
            let k = old.len();
            let shifted = blend_airborne(&old, &[old[0][0] + c], &[old[k - 1][0] + c]);
            for (a, b) in shifted.iter().zip(&old) {
                prop_assert!((a[0] - (b[0] + c)).abs() < 1e-12);
            }
            let out = blend_airborne(&old, &[e1], &[e2]);
            prop_assert_eq!(out[0][0], e1);
            prop_assert_eq!(out[k - 1][0], e2);
            // affine in the endpoint corrections
            let mid = blend_airborne(&old, &[0.5 * (e1 + old[0][0])], &[0.5 * (e2 + old[k - 1][0])]);
            for i in 0..k {
                prop_assert!((mid[i][0] - 0.5 * (out[i][0] + old[i][0])).abs() < 1e-12);
            }
        }
    }
}
