//! Procedural right-hand surface: one capsule per finger bone plus a palm
//! capsule, sampled at fixed local offsets so every point moves rigidly with
//! its bone. 15 finger bones × 48 points + 58 palm points = 778 points.

use std::f64::consts::{FRAC_PI_4, PI};

use nalgebra::Vector3;

use super::fk::{forward_kinematics, FkState};
use super::pose::Pose;
use super::skeleton::Skeleton;
use crate::error::Result;

pub const HAND_POINT_COUNT: usize = 778;
pub const POINTS_PER_FINGER_BONE: usize = 48;
pub const PALM_POINTS: usize = 58;
pub const KEYPOINTS_PER_FINGER: usize = 7;

/// A point rigidly attached to a joint frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Attachment {
    pub joint: usize,
    pub local: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Capsule {
    pub joint: usize,
    pub start: Vector3<f64>,
    pub end: Vector3<f64>,
    pub radius: f64,
    /// `None` for the palm.
    pub finger: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfacePoint {
    pub at: Attachment,
    pub normal: Vector3<f64>,
    pub capsule: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HandModel {
    pub capsules: Vec<Capsule>,
    pub points: Vec<SurfacePoint>,
    /// Per finger: the three joints, the three bone midpoints and the tip,
    /// ordered from the knuckle outwards.
    pub keypoints: [[Attachment; KEYPOINTS_PER_FINGER]; 5],
}

/// World-frame hand surface for one pose.
#[derive(Clone, Debug)]
pub struct HandSurface {
    pub points: Vec<Vector3<f64>>,
    pub normals: Vec<Vector3<f64>>,
}

/// World-frame capsule, used for solid voxelization.
#[derive(Clone, Copy, Debug)]
pub struct WorldCapsule {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub radius: f64,
}

impl WorldCapsule {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let ab = self.b - self.a;
        let len2 = ab.norm_squared();
        let s = if len2 > 0.0 { ((p - self.a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
        (p - (self.a + ab * s)).norm_squared() <= self.radius * self.radius
    }
}

fn basis(axis: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let reference = if axis.z.abs() < 0.9 { Vector3::z() } else { Vector3::y() };
    let u = axis.cross(&reference).normalize();
    let v = axis.cross(&u);
    (u, v)
}

fn ring(k: usize, n: usize, stagger: bool) -> f64 {
    2.0 * PI * (k as f64 + if stagger { 0.5 } else { 0.0 }) / n as f64
}

impl HandModel {
    pub fn new(skel: &Skeleton) -> Self {
        let roles = skel.roles();
        let dims = skel.hand();
        let wrist = roles.right_arm.wrist;
        let mut capsules = Vec::with_capacity(16);
        let mut points = Vec::with_capacity(HAND_POINT_COUNT);

        for (f, chain) in roles.fingers.iter().enumerate() {
            for (s, &j) in chain.iter().enumerate() {
                let end = if s < 2 {
                    skel.rest_offset(chain[s + 1])
                } else {
                    skel.rest_dir(j) * dims.tip_lengths[f]
                };
                let cap = Capsule { joint: j, start: Vector3::zeros(), end, radius: dims.finger_radius, finger: Some(f) };
                let idx = capsules.len();
                capsules.push(cap);
                let (rings, cap_latitudes): (usize, &[f64]) = if s < 2 { (6, &[]) } else { (4, &[PI / 6.0, PI / 3.0]) };
                sample_capsule(&cap, idx, rings, 8, cap_latitudes, 0, &mut points);
            }
        }

        // the palm runs from the wrist most of the way to the middle knuckle
        let knuckle = skel.rest_offset(roles.fingers[2][0]);
        let palm = Capsule {
            joint: wrist,
            start: Vector3::zeros(),
            end: knuckle * 0.55,
            radius: dims.palm_radius,
            finger: None,
        };
        let idx = capsules.len();
        capsules.push(palm);
        sample_capsule(&palm, idx, 6, 8, &[FRAC_PI_4], 4, &mut points);
        debug_assert_eq!(points.len(), HAND_POINT_COUNT);

        let keypoints = std::array::from_fn(|f| {
            let chain = roles.fingers[f];
            let tip = skel.rest_dir(chain[2]) * dims.tip_lengths[f];
            let at = |joint, local| Attachment { joint, local };
            [
                at(chain[0], Vector3::zeros()),
                at(chain[0], skel.rest_offset(chain[1]) * 0.5),
                at(chain[1], Vector3::zeros()),
                at(chain[1], skel.rest_offset(chain[2]) * 0.5),
                at(chain[2], Vector3::zeros()),
                at(chain[2], tip * 0.5),
                at(chain[2], tip),
            ]
        });

        Self { capsules, points, keypoints }
    }

    /// Indices of the surface points belonging to `finger`.
    pub fn finger_points(&self, finger: usize) -> Vec<usize> {
        self.points
            .iter()
            .enumerate()
            .filter(|(_, p)| self.capsules[p.capsule].finger == Some(finger))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn surface(&self, state: &FkState) -> HandSurface {
        let points = self.points.iter().map(|p| state.attached(p.at.joint, &p.at.local)).collect();
        let normals = self.points.iter().map(|p| state.world_rot[p.at.joint] * p.normal).collect();
        HandSurface { points, normals }
    }

    pub fn world_capsules(&self, state: &FkState) -> Vec<WorldCapsule> {
        self.capsules
            .iter()
            .map(|c| WorldCapsule {
                a: state.attached(c.joint, &c.start),
                b: state.attached(c.joint, &c.end),
                radius: c.radius,
            })
            .collect()
    }

    pub fn keypoints_world(&self, state: &FkState) -> [[Vector3<f64>; KEYPOINTS_PER_FINGER]; 5] {
        std::array::from_fn(|f| std::array::from_fn(|k| {
            let a = &self.keypoints[f][k];
            state.attached(a.joint, &a.local)
        }))
    }
}

/// Samples `rings × per_ring` points on the cylinder, then for each cap
/// latitude a ring of `per_ring` points on the far hemisphere. With
/// `both_caps > 0` the latitudes are mirrored onto the near cap as well,
/// using `both_caps` points per ring plus one pole point per cap.
fn sample_capsule(
    cap: &Capsule,
    idx: usize,
    rings: usize,
    per_ring: usize,
    cap_latitudes: &[f64],
    both_caps: usize,
    out: &mut Vec<SurfacePoint>,
) {
    let axis_vec = cap.end - cap.start;
    let axis = axis_vec.normalize();
    let (u, v) = basis(&axis);
    let push = |out: &mut Vec<SurfacePoint>, center: Vector3<f64>, normal: Vector3<f64>| {
        out.push(SurfacePoint {
            at: Attachment { joint: cap.joint, local: center + normal * cap.radius },
            normal,
            capsule: idx,
        });
    };
    for r in 0..rings {
        let center = cap.start + axis_vec * ((r as f64 + 0.5) / rings as f64);
        for k in 0..per_ring {
            let phi = ring(k, per_ring, r % 2 == 1);
            push(out, center, u * phi.cos() + v * phi.sin());
        }
    }
    if both_caps == 0 {
        for (i, &lat) in cap_latitudes.iter().enumerate() {
            for k in 0..per_ring {
                let phi = ring(k, per_ring, i % 2 == 0);
                let n = (u * phi.cos() + v * phi.sin()) * lat.cos() + axis * lat.sin();
                push(out, cap.end, n);
            }
        }
    } else {
        for (center, dir) in [(cap.end, axis), (cap.start, -axis)] {
            for &lat in cap_latitudes {
                for k in 0..both_caps {
                    let phi = ring(k, both_caps, false);
                    let n = (u * phi.cos() + v * phi.sin()) * lat.cos() + dir * lat.sin();
                    push(out, center, n);
                }
            }
            push(out, center, dir);
        }
    }
}

/// World-frame hand surface points for `pose`.
pub fn hand_surface_points(skel: &Skeleton, pose: &Pose, model: &HandModel) -> Result<HandSurface> {
    let state = forward_kinematics(skel, pose)?;
    Ok(model.surface(&state))
}
