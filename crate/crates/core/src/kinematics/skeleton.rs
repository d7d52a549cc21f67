use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 37;
pub const NUM_BODY_JOINTS: usize = 22;
pub const NUM_HAND_JOINTS: usize = 15;
pub const NUM_BONES: usize = NUM_JOINTS - 1;

pub const FINGER_NAMES: [&str; 5] = ["thumb", "index", "middle", "ring", "pinky"];

/// Joint order of the built-in skeleton. Joint 0 is the root, joints 1..22
/// carry the body rotations and 22..37 the right-hand rotations, which is
/// the layout of the pose vector.
pub const DEFAULT_JOINT_NAMES: [&str; NUM_JOINTS] = [
    "pelvis", "spine1", "spine2", "spine3", "neck", "head", //
    "l_hip", "l_knee", "l_ankle", "l_foot", //
    "r_hip", "r_knee", "r_ankle", "r_foot", //
    "l_collar", "l_shoulder", "l_elbow", "l_wrist", //
    "r_collar", "r_shoulder", "r_elbow", "r_wrist", //
    "r_thumb1", "r_thumb2", "r_thumb3", //
    "r_index1", "r_index2", "r_index3", //
    "r_middle1", "r_middle2", "r_middle3", //
    "r_ring1", "r_ring2", "r_ring3", //
    "r_pinky1", "r_pinky2", "r_pinky3",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LegJoints {
    pub hip: usize,
    pub knee: usize,
    pub ankle: usize,
    pub foot: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArmJoints {
    pub collar: usize,
    pub shoulder: usize,
    pub elbow: usize,
    pub wrist: usize,
}

/// Joint indices resolved from names when a skeleton is built.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct JointRoles {
    pub left_leg: LegJoints,
    pub right_leg: LegJoints,
    pub right_arm: ArmJoints,
    /// `[finger][segment]`, fingers ordered thumb, index, middle, ring, pinky.
    pub fingers: [[usize; 3]; 5],
}

/// Capsule dimensions of the procedural hand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandDims {
    pub finger_radius: f64,
    pub palm_radius: f64,
    /// Distal-joint-to-fingertip length per finger.
    pub tip_lengths: [f64; 5],
}

impl Default for HandDims {
    fn default() -> Self {
        Self { finger_radius: 0.008, palm_radius: 0.035, tip_lengths: [0.024, 0.022, 0.023, 0.022, 0.019] }
    }
}

/// On-disk layout of a skeleton.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonConfig {
    pub joint_names: Vec<String>,
    /// Parent index per joint, `null` for the root.
    pub parents: Vec<Option<usize>>,
    /// One unit direction per non-root joint, in joint order.
    pub rest_dirs: Vec<[f64; 3]>,
    /// One length per non-root joint, in joint order.
    pub bone_lengths: Vec<f64>,
    pub hand: HandDims,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    names: Vec<String>,
    parents: Vec<Option<usize>>,
    rest_dirs: Vec<Vector3<f64>>,
    bone_lengths: Vec<f64>,
    hand: HandDims,
    roles: JointRoles,
}

impl Skeleton {
    pub fn from_config(cfg: &SkeletonConfig) -> Result<Self> {
        let n = cfg.joint_names.len();
        if n != NUM_JOINTS {
            return Err(Error::InvalidSkeleton(format!("expected {NUM_JOINTS} joints, got {n}")));
        }
        if cfg.parents.len() != n {
            return Err(Error::InvalidSkeleton(format!("{} parents for {n} joints", cfg.parents.len())));
        }
        if cfg.rest_dirs.len() != n - 1 || cfg.bone_lengths.len() != n - 1 {
            return Err(Error::InvalidSkeleton(format!(
                "need {} rest_dirs and bone_lengths, got {} and {}",
                n - 1,
                cfg.rest_dirs.len(),
                cfg.bone_lengths.len()
            )));
        }
        if cfg.parents[0].is_some() {
            return Err(Error::InvalidSkeleton("joint 0 must be the root".into()));
        }
        for (j, p) in cfg.parents.iter().enumerate().skip(1) {
            match p {
                None => return Err(Error::InvalidSkeleton(format!("second root at joint {j}"))),
                // parents precede children, which also rules out cycles
                Some(p) if *p >= j => {
                    return Err(Error::InvalidSkeleton(format!("joint {j} has parent {p}; parents must precede children")))
                }
                _ => {}
            }
        }
        let mut rest_dirs = vec![Vector3::zeros()];
        for (j, d) in cfg.rest_dirs.iter().enumerate() {
            let v = Vector3::from(*d);
            if !v.iter().all(|x| x.is_finite()) || (v.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidSkeleton(format!("rest_dir of joint {} is not unit length", j + 1)));
            }
            rest_dirs.push(v);
        }
        let mut bone_lengths = vec![0.0];
        for (j, &l) in cfg.bone_lengths.iter().enumerate() {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::InvalidSkeleton(format!("bone length of joint {} must be positive", j + 1)));
            }
            bone_lengths.push(l);
        }
        let h = &cfg.hand;
        if !(h.finger_radius > 0.0 && h.palm_radius > 0.0 && h.tip_lengths.iter().all(|&t| t > 0.0)) {
            return Err(Error::InvalidSkeleton("hand radii and tip lengths must be positive".into()));
        }

        let lookup = |name: &str| -> Result<usize> {
            cfg.joint_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::InvalidSkeleton(format!("missing joint `{name}`")))
        };
        let leg = |side: &str| -> Result<LegJoints> {
            Ok(LegJoints {
                hip: lookup(&format!("{side}_hip"))?,
                knee: lookup(&format!("{side}_knee"))?,
                ankle: lookup(&format!("{side}_ankle"))?,
                foot: lookup(&format!("{side}_foot"))?,
            })
        };
        let right_arm = ArmJoints {
            collar: lookup("r_collar")?,
            shoulder: lookup("r_shoulder")?,
            elbow: lookup("r_elbow")?,
            wrist: lookup("r_wrist")?,
        };
        let mut fingers = [[0; 3]; 5];
        for (f, name) in FINGER_NAMES.iter().enumerate() {
            for s in 0..3 {
                fingers[f][s] = lookup(&format!("r_{name}{}", s + 1))?;
            }
        }
        let roles = JointRoles { left_leg: leg("l")?, right_leg: leg("r")?, right_arm, fingers };

        let parents = &cfg.parents;
        let is_child = |c: usize, p: usize| parents[c] == Some(p);
        for l in [roles.left_leg, roles.right_leg] {
            if !(is_child(l.knee, l.hip) && is_child(l.ankle, l.knee) && is_child(l.foot, l.ankle)) {
                return Err(Error::InvalidSkeleton("leg joints must form a hip-knee-ankle-foot chain".into()));
            }
        }
        let a = roles.right_arm;
        if !(is_child(a.shoulder, a.collar) && is_child(a.elbow, a.shoulder) && is_child(a.wrist, a.elbow)) {
            return Err(Error::InvalidSkeleton("arm joints must form a collar-shoulder-elbow-wrist chain".into()));
        }
        for chain in roles.fingers {
            if !(is_child(chain[0], a.wrist) && is_child(chain[1], chain[0]) && is_child(chain[2], chain[1])) {
                return Err(Error::InvalidSkeleton("each finger must hang off the right wrist as a 3-joint chain".into()));
            }
            if chain.iter().any(|&j| j < NUM_BODY_JOINTS) {
                return Err(Error::InvalidSkeleton("finger joints must occupy the hand block of the joint order".into()));
            }
        }

        Ok(Self {
            names: cfg.joint_names.clone(),
            parents: cfg.parents.clone(),
            rest_dirs,
            bone_lengths,
            hand: cfg.hand.clone(),
            roles,
        })
    }

    pub fn to_config(&self) -> SkeletonConfig {
        SkeletonConfig {
            joint_names: self.names.clone(),
            parents: self.parents.clone(),
            rest_dirs: self.rest_dirs[1..].iter().map(|d| [d.x, d.y, d.z]).collect(),
            bone_lengths: self.bone_lengths[1..].to_vec(),
            hand: self.hand.clone(),
        }
    }

    pub fn num_joints(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn rest_dir(&self, joint: usize) -> Vector3<f64> {
        self.rest_dirs[joint]
    }

    /// Length of the bone ending at `joint` (0 for the root).
    pub fn bone_length(&self, joint: usize) -> f64 {
        self.bone_lengths[joint]
    }

    /// Offset of `joint` from its parent, in the parent's frame.
    pub fn rest_offset(&self, joint: usize) -> Vector3<f64> {
        self.rest_dirs[joint] * self.bone_lengths[joint]
    }

    /// The bone-length vector fed to the generator (non-root joints only).
    pub fn bone_vector(&self) -> Vec<f64> {
        self.bone_lengths[1..].to_vec()
    }

    pub fn hand(&self) -> &HandDims {
        &self.hand
    }

    pub fn roles(&self) -> &JointRoles {
        &self.roles
    }

    pub fn children(&self, joint: usize) -> impl Iterator<Item = usize> + '_ {
        self.parents.iter().enumerate().filter(move |(_, p)| **p == Some(joint)).map(|(c, _)| c)
    }

    /// True if `ancestor` lies on the path from `joint` to the root
    /// (a joint counts as its own ancestor).
    pub fn is_ancestor(&self, ancestor: usize, joint: usize) -> bool {
        let mut j = Some(joint);
        while let Some(k) = j {
            if k == ancestor {
                return true;
            }
            j = self.parents[k];
        }
        false
    }
}

impl Default for Skeleton {
    fn default() -> Self {
        Self::from_config(&SkeletonConfig::default()).expect("built-in skeleton is valid")
    }
}

impl Default for SkeletonConfig {
    /// An adult-sized skeleton in a T-pose: z up, facing +y, arms along ±x,
    /// right palm facing down.
    fn default() -> Self {
        let offsets: [(usize, [f64; 3]); NUM_BONES] = [
            (0, [0.0, -0.01, 0.11]),    // spine1
            (1, [0.0, 0.0, 0.13]),      // spine2
            (2, [0.0, 0.01, 0.06]),     // spine3
            (3, [0.0, -0.01, 0.21]),    // neck
            (4, [0.0, 0.02, 0.09]),     // head
            (0, [0.09, 0.0, -0.08]),    // l_hip
            (6, [0.0, 0.012, -0.40]),   // l_knee
            (7, [0.0, -0.015, -0.42]),  // l_ankle
            (8, [0.0, 0.125, -0.06]),   // l_foot
            (0, [-0.09, 0.0, -0.08]),   // r_hip
            (10, [0.0, 0.012, -0.40]),  // r_knee
            (11, [0.0, -0.015, -0.42]), // r_ankle
            (12, [0.0, 0.125, -0.06]),  // r_foot
            (3, [0.07, 0.0, 0.11]),     // l_collar
            (14, [0.11, 0.0, 0.02]),    // l_shoulder
            (15, [0.27, 0.0, 0.0]),     // l_elbow
            (16, [0.25, 0.0, 0.0]),     // l_wrist
            (3, [-0.07, 0.0, 0.11]),    // r_collar
            (18, [-0.11, 0.0, 0.02]),   // r_shoulder
            (19, [-0.27, 0.0, 0.0]),    // r_elbow
            (20, [-0.25, 0.0, 0.0]),    // r_wrist
            (21, [-0.030, 0.030, -0.012]), // r_thumb1
            (22, [-0.022, 0.026, 0.0]),    // r_thumb2
            (23, [-0.020, 0.019, 0.0]),    // r_thumb3
            (21, [-0.092, 0.030, 0.0]),    // r_index1
            (25, [-0.040, 0.0, 0.0]),      // r_index2
            (26, [-0.024, 0.0, 0.0]),      // r_index3
            (21, [-0.096, 0.008, 0.0]),    // r_middle1
            (28, [-0.044, 0.0, 0.0]),      // r_middle2
            (29, [-0.028, 0.0, 0.0]),      // r_middle3
            (21, [-0.090, -0.014, 0.0]),   // r_ring1
            (31, [-0.040, 0.0, 0.0]),      // r_ring2
            (32, [-0.026, 0.0, 0.0]),      // r_ring3
            (21, [-0.080, -0.035, 0.0]),   // r_pinky1
            (34, [-0.032, 0.0, 0.0]),      // r_pinky2
            (35, [-0.020, 0.0, 0.0]),      // r_pinky3
        ];
        let mut parents = vec![None];
        let mut rest_dirs = Vec::with_capacity(NUM_BONES);
        let mut bone_lengths = Vec::with_capacity(NUM_BONES);
        for (p, o) in offsets {
            let v = Vector3::from(o);
            let l = v.norm();
            let d = v / l;
            parents.push(Some(p));
            rest_dirs.push([d.x, d.y, d.z]);
            bone_lengths.push(l);
        }
        Self {
            joint_names: DEFAULT_JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
            parents,
            rest_dirs,
            bone_lengths,
            hand: HandDims::default(),
        }
    }
}
