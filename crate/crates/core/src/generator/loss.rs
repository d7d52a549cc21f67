//! Training losses on predicted poses and contact probabilities, with their
//! gradients.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::fk::wrist_local_from_state;
use crate::kinematics::pose::{BODY_POSE, GLOBAL_ORIENT, HAND_POSE, TRANSLATION};
use crate::kinematics::{fk_backward, forward_kinematics, FkGrad, FkState, Pose, Skeleton, POSE_DIM};

/// `(ω_t, ω_rg, ω_rb, ω_rh, ω_fc, ω_2, ω_3, ω_4)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub translation: f64,
    pub global_orient: f64,
    pub body: f64,
    pub hand: f64,
    pub contact: f64,
    pub rotation_velocity: f64,
    pub joints: f64,
    pub fingers: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { translation: 1.0, global_orient: 1.0, body: 1.0, hand: 1.0, contact: 1.0, rotation_velocity: 1.0, joints: 5.0, fingers: 20.0 }
    }
}

impl LossWeights {
    /// Weights that keep only loss term `term` (1 to 4) at unit weight.
    pub fn only(term: usize) -> Self {
        let z = Self { translation: 0.0, global_orient: 0.0, body: 0.0, hand: 0.0, contact: 0.0, rotation_velocity: 0.0, joints: 0.0, fingers: 0.0 };
        match term {
            1 => Self { translation: 1.0, global_orient: 1.0, body: 1.0, hand: 1.0, contact: 1.0, ..z },
            2 => Self { rotation_velocity: 1.0, ..z },
            3 => Self { joints: 1.0, ..z },
            _ => Self { fingers: 1.0, ..z },
        }
    }

    pub fn as_array(&self) -> [f64; 8] {
        [self.translation, self.global_orient, self.body, self.hand, self.contact, self.rotation_velocity, self.joints, self.fingers]
    }
}

/// Unweighted-by-`ω_{2,3,4}` values of the four terms and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn is_finite(&self) -> bool {
        [self.l1, self.l2, self.l3, self.l4, self.total].iter().all(|x| x.is_finite())
    }
}

/// Loss value with gradients on every predicted pose parameter and contact
/// probability.
#[derive(Clone, Debug)]
pub struct LossGrad {
    pub terms: LossTerms,
    pub pose: Vec<[f64; POSE_DIM]>,
    pub contact: Vec<[f64; 2]>,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn vsign(v: &Vector3<f64>) -> Vector3<f64> {
    v.map(sign)
}

fn l1_norm(v: &Vector3<f64>) -> f64 {
    v.x.abs() + v.y.abs() + v.z.abs()
}

const BLOCKS: [std::ops::Range<usize>; 4] = [TRANSLATION, GLOBAL_ORIENT, BODY_POSE, HAND_POSE];

/// Per-frame 1-norms of the translation, global orientation, body and hand
/// blocks, plus the 2-norm of the contact error.
pub fn loss_l1(pred: &[Pose], pred_c: &[[f64; 2]], truth: &[Pose], truth_c: &[[f64; 2]], w: &LossWeights, grad: Option<(&mut [[f64; POSE_DIM]], &mut [[f64; 2]])>) -> f64 {
    let ws = [w.translation, w.global_orient, w.body, w.hand];
    let mut value = 0.0;
    let mut grad = grad;
    for i in 0..pred.len() {
        let (p, t) = (pred[i].params(), truth[i].params());
        for (block, &wb) in BLOCKS.iter().zip(&ws) {
            for k in block.clone() {
                let r = p[k] - t[k];
                value += wb * r.abs();
                if let Some((gp, _)) = grad.as_mut() {
                    gp[i][k] += wb * sign(r);
                }
            }
        }
        let e = [pred_c[i][0] - truth_c[i][0], pred_c[i][1] - truth_c[i][1]];
        let n = (e[0] * e[0] + e[1] * e[1]).sqrt();
        value += w.contact * n;
        if let (Some((_, gc)), true) = (grad.as_mut(), n > 0.0) {
            gc[i][0] += w.contact * e[0] / n;
            gc[i][1] += w.contact * e[1] / n;
        }
    }
    value
}

/// 1-norm of the mismatch in frame-to-frame differences of the rotation
/// blocks (global orientation, body, hand).
pub fn loss_l2(pred: &[Pose], truth: &[Pose], grad: Option<&mut [[f64; POSE_DIM]]>) -> f64 {
    let mut value = 0.0;
    let mut grad = grad;
    for i in 1..pred.len() {
        let (p0, p1, t0, t1) = (pred[i - 1].params(), pred[i].params(), truth[i - 1].params(), truth[i].params());
        for k in GLOBAL_ORIENT.start..POSE_DIM {
            let r = (p1[k] - p0[k]) - (t1[k] - t0[k]);
            value += r.abs();
            if let Some(g) = grad.as_mut() {
                g[i][k] += sign(r);
                g[i - 1][k] -= sign(r);
            }
        }
    }
    value
}

/// Joint position, velocity and acceleration mismatch in 1-norm.
/// `states` are the FK states of `pred`; `truth_joints` the ground-truth
/// joint positions per frame.
pub fn loss_l3(states: &[FkState], truth_joints: &[Vec<Vector3<f64>>], grad: Option<&mut [FkGrad]>) -> f64 {
    let n = states.len();
    let nj = truth_joints.first().map_or(0, |f| f.len());
    let r = |i: usize, j: usize| states[i].positions[j] - truth_joints[i][j];
    let mut value = 0.0;
    let mut grad = grad;
    for j in 0..nj {
        for i in 0..n {
            let e = r(i, j);
            value += l1_norm(&e);
            if let Some(g) = grad.as_mut() {
                g[i].positions[j] += vsign(&e);
            }
        }
        for i in 1..n {
            let e = r(i, j) - r(i - 1, j);
            value += l1_norm(&e);
            if let Some(g) = grad.as_mut() {
                let s = vsign(&e);
                g[i].positions[j] += s;
                g[i - 1].positions[j] -= s;
            }
        }
        for i in 2..n {
            let e = r(i, j) - r(i - 1, j) * 2.0 + r(i - 2, j);
            value += l1_norm(&e);
            if let Some(g) = grad.as_mut() {
                let s = vsign(&e);
                g[i].positions[j] += s;
                g[i - 1].positions[j] -= s * 2.0;
                g[i - 2].positions[j] += s;
            }
        }
    }
    value
}

/// 1-norm of the mismatch of finger joint positions in the right-wrist
/// frame.
pub fn loss_l4(skel: &Skeleton, states: &[FkState], truth_local: &[Vec<Vector3<f64>>], grad: Option<&mut [FkGrad]>) -> f64 {
    let roles = skel.roles();
    let wrist = roles.right_arm.wrist;
    let fingers: Vec<usize> = roles.fingers.iter().flatten().copied().collect();
    let mut value = 0.0;
    let mut grad = grad;
    for (i, st) in states.iter().enumerate() {
        let local = wrist_local_from_state(skel, st);
        let rw = st.world_rot[wrist];
        for (k, &j) in fingers.iter().enumerate() {
            let e = local[k] - truth_local[i][k];
            value += l1_norm(&e);
            if let Some(g) = grad.as_mut() {
                // local = Rwᵀ (p_j - p_w)
                let s = vsign(&e);
                let world = rw * s;
                g[i].positions[j] += world;
                g[i].positions[wrist] -= world;
                g[i].world_rot[wrist] += (st.positions[j] - st.positions[wrist]) * s.transpose();
            }
        }
    }
    value
}

/// Precomputed ground truth for one training sequence.
#[derive(Clone, Debug)]
pub struct Target {
    pub poses: Vec<Pose>,
    pub contact: Vec<[f64; 2]>,
    pub joints: Vec<Vec<Vector3<f64>>>,
    pub finger_local: Vec<Vec<Vector3<f64>>>,
}

impl Target {
    pub fn new(skel: &Skeleton, poses: &[Pose], contact: &[[f64; 2]]) -> Result<Self> {
        if poses.len() != contact.len() {
            return Err(Error::Shape(format!("{} poses but {} contact labels", poses.len(), contact.len())));
        }
        let mut joints = Vec::with_capacity(poses.len());
        let mut finger_local = Vec::with_capacity(poses.len());
        for p in poses {
            let st = forward_kinematics(skel, p)?;
            finger_local.push(wrist_local_from_state(skel, &st));
            joints.push(st.positions);
        }
        Ok(Self { poses: poses.to_vec(), contact: contact.to_vec(), joints, finger_local })
    }
}

/// Total loss `L1 + ω2·L2 + ω3·L3 + ω4·L4` of one sequence with gradients.
pub fn total_loss(skel: &Skeleton, pred: &[Pose], pred_c: &[[f64; 2]], target: &Target, w: &LossWeights) -> Result<LossGrad> {
    let n = pred.len();
    if n != target.poses.len() || pred_c.len() != n {
        return Err(Error::Shape(format!("prediction has {n} frames, target {}", target.poses.len())));
    }
    if n < 3 {
        return Err(Error::InvalidLength("losses need at least 3 frames".into()));
    }
    let mut gp = vec![[0.0; POSE_DIM]; n];
    let mut gc = vec![[0.0; 2]; n];
    let l1 = loss_l1(pred, pred_c, &target.poses, &target.contact, w, Some((&mut gp, &mut gc)));

    let mut g2 = vec![[0.0; POSE_DIM]; n];
    let l2 = loss_l2(pred, &target.poses, Some(&mut g2));

    let mut states = Vec::with_capacity(n);
    for p in pred {
        states.push(forward_kinematics(skel, p)?);
    }
    let mut g3 = vec![FkGrad::zeros(skel.num_joints()); n];
    let l3 = loss_l3(&states, &target.joints, Some(&mut g3));
    let mut g4 = vec![FkGrad::zeros(skel.num_joints()); n];
    let l4 = loss_l4(skel, &states, &target.finger_local, Some(&mut g4));

    for i in 0..n {
        let mut fg = FkGrad::zeros(skel.num_joints());
        for j in 0..skel.num_joints() {
            fg.positions[j] = g3[i].positions[j] * w.joints + g4[i].positions[j] * w.fingers;
            fg.world_rot[j] = g4[i].world_rot[j] * w.fingers;
        }
        let back = fk_backward(skel, &pred[i], &states[i], fg)?;
        for k in 0..POSE_DIM {
            gp[i][k] += w.rotation_velocity * g2[i][k] + back[k];
        }
    }
    let total = l1 + w.rotation_velocity * l2 + w.joints * l3 + w.fingers * l4;
    let terms = LossTerms { l1, l2, l3, l4, total };
    if !terms.is_finite() {
        return Err(Error::NonFinite(format!("loss is not finite: {terms:?}")));
    }
    Ok(LossGrad { terms, pose: gp, contact: gc })
}

/// Relative error `|g - g_fd| / max(|g|, |g_fd|)` between the analytic
/// gradient of [`total_loss`] and central differences with step `h` over
/// every pose parameter and contact probability.
pub fn gradient_check(skel: &Skeleton, pred: &[Pose], pred_c: &[[f64; 2]], target: &Target, w: &LossWeights, h: f64) -> Result<f64> {
    let g = total_loss(skel, pred, pred_c, target, w)?;
    let f = |p: &[Pose], c: &[[f64; 2]]| total_loss(skel, p, c, target, w).map(|l| l.terms.total);
    let (mut diff, mut na, mut nf) = (0.0, 0.0, 0.0);
    let mut acc = |a: f64, fd: f64| {
        diff += (fd - a) * (fd - a);
        na += a * a;
        nf += fd * fd;
    };
    let mut p = pred.to_vec();
    let mut c = pred_c.to_vec();
    for i in 0..p.len() {
        for k in 0..POSE_DIM {
            let x = p[i].params()[k];
            p[i].params_mut()[k] = x + h;
            let up = f(&p, &c)?;
            p[i].params_mut()[k] = x - h;
            let down = f(&p, &c)?;
            p[i].params_mut()[k] = x;
            acc(g.pose[i][k], (up - down) / (2.0 * h));
        }
        for k in 0..2 {
            let x = c[i][k];
            c[i][k] = x + h;
            let up = f(&p, &c)?;
            c[i][k] = x - h;
            let down = f(&p, &c)?;
            c[i][k] = x;
            acc(g.contact[i][k], (up - down) / (2.0 * h));
        }
    }
    let scale = na.max(nf).sqrt();
    Ok(if scale == 0.0 { 0.0 } else { diff.sqrt() / scale })
}
