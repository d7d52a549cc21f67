//! Whole-body grasping motion for an articulated character.
//!
//! The pipeline seeds a trajectory between an initial and a target pose,
//! refines it with a small transformer encoder, removes foot skating with a
//! plane-constrained two-bone IK pass, and pulls the right hand out of the
//! grasped object with a short gradient descent on the finger joints.
//! [`metrics`] scores each stage.

pub mod error;
pub mod foot_refine;
pub mod generator;
pub mod hand_refine;
pub mod io;
pub mod kinematics;
pub mod metrics;
pub mod sequence;
pub mod synth;

mod par;

pub use error::{Error, Result};
pub use kinematics::{HandModel, Pose, Skeleton};
pub use sequence::MotionSequence;
