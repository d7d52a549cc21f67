//! Rotations, skeleton, forward kinematics and the procedural hand.

pub mod fk;
pub mod hand;
pub mod pose;
pub mod rotation;
pub mod skeleton;

use nalgebra::Vector3;
use rand::Rng;

pub use fk::{fk_backward, fk_jacobian, forward_kinematics, joint_positions, wrist_local_finger_positions, FkGrad, FkState};
pub use hand::{hand_surface_points, HandModel, HandSurface};
pub use pose::{Pose, POSE_DIM};
pub use rotation::{matrix_to_rot6d, rot6d_to_matrix, Rot6};
pub use skeleton::{Skeleton, SkeletonConfig, NUM_JOINTS};

/// A pose with every joint rotated about a random axis by up to
/// `max_angle` radians and a random root translation within ±1 m.
pub fn random_pose(rng: &mut impl Rng, max_angle: f64) -> Pose {
    let mut pose = Pose::identity();
    pose.set_translation(&Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ));
    for j in 0..NUM_JOINTS {
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let angle = rng.random_range(-max_angle..=max_angle);
        pose.set_rotation(j, &rotation::axis_angle(&axis, angle));
    }
    pose
}
