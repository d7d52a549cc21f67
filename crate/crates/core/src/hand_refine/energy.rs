//! The four hand energies and their gradients.
//!
//! Every energy is a sum of piecewise-linear penalties on point distances.
//! Gradients treat nearest-neighbour assignments and the inside/outside
//! sign as constant, then flow into joint rotations through FK.

use nalgebra::Vector3;

use super::chamfer::{penetration_penalty, signed_distance_to, KdTree};
use super::object::ObjectCloud;
use super::RefineConfig;
use crate::error::{Error, Result};
use crate::kinematics::hand::KEYPOINTS_PER_FINGER;
use crate::kinematics::{fk_backward, forward_kinematics, FkGrad, FkState, HandModel, Pose, Skeleton, POSE_DIM};
use crate::par::map_collect;

/// Fingers that take part in the contact energy: thumb, index, middle, ring.
pub const CONTACT_FINGERS: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnergyTerms {
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
    pub e4: f64,
}

impl EnergyTerms {
    pub fn total(&self) -> f64 {
        self.e1 + self.e2 + self.e3 + self.e4
    }

    pub fn is_finite(&self) -> bool {
        [self.e1, self.e2, self.e3, self.e4].iter().all(|x| x.is_finite())
    }
}

impl std::fmt::Display for EnergyTerms {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "E1={:.6e} E2={:.6e} E3={:.6e} E4={:.6e}", self.e1, self.e2, self.e3, self.e4)
    }
}

/// Unit direction from `b` to `a`, zero when they coincide.
fn unit(a: &Vector3<f64>, b: &Vector3<f64>) -> Vector3<f64> {
    (a - b).try_normalize(0.0).unwrap_or_else(Vector3::zeros)
}

/// Nearest-neighbour assignments of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameAssignment {
    pub object_to_hand: Vec<usize>,
    pub hand_to_object: Vec<usize>,
    /// Per finger and keypoint: nearest keypoint `(finger, index)` on
    /// another finger.
    pub keypoints: [[(usize, usize); KEYPOINTS_PER_FINGER]; 5],
}

pub struct CollisionTerm {
    pub value: f64,
    pub hand_grad: Vec<Vector3<f64>>,
    pub object_to_hand: Vec<usize>,
    pub hand_to_object: Vec<usize>,
}

/// Two-way collision penalty of one frame: object points deeper than `δ`
/// inside the hand, weighted by `α1`, plus hand points deeper than `δ`
/// inside the object, weighted by `α2`.
#[allow(clippy::too_many_arguments)]
pub fn collision_energy(
    hand: &[Vector3<f64>],
    hand_normals: &[Vector3<f64>],
    object: &ObjectCloud,
    object_tree: &KdTree,
    alpha1: f64,
    alpha2: f64,
    delta: f64,
    frozen: Option<(&[usize], &[usize])>,
) -> CollisionTerm {
    let mut hand_grad = vec![Vector3::zeros(); hand.len()];
    let (object_to_hand, hand_to_object) = match frozen {
        Some((a, b)) => (a.to_vec(), b.to_vec()),
        None => {
            let hand_tree = KdTree::new(hand);
            (
                object.points().iter().map(|q| hand_tree.nearest(q).expect("hand has points").0).collect(),
                hand.iter().map(|v| object_tree.nearest(v).expect("object has points").0).collect(),
            )
        }
    };
    let mut value = 0.0;
    if alpha1 != 0.0 {
        for (q, &r) in object.points().iter().zip(&object_to_hand) {
            let s = signed_distance_to(q, &hand[r], &hand_normals[r]);
            let pen = penetration_penalty(s, delta);
            if pen > 0.0 {
                value += alpha1 * pen;
                // d pen / d s = -1, d s / d r = -sign · (q - r)/|q - r|
                hand_grad[r] += unit(q, &hand[r]) * (alpha1 * s.signum());
            }
        }
    }
    if alpha2 != 0.0 {
        let (op, on) = (object.points(), object.normals());
        for (k, &o) in hand_to_object.iter().enumerate() {
            let s = signed_distance_to(&hand[k], &op[o], &on[o]);
            let pen = penetration_penalty(s, delta);
            if pen > 0.0 {
                value += alpha2 * pen;
                hand_grad[k] -= unit(&hand[k], &op[o]) * (alpha2 * s.signum());
            }
        }
    }
    CollisionTerm { value, hand_grad, object_to_hand, hand_to_object }
}

/// `α3 · Σ_g` mean distance from finger `g`'s surface points to their
/// nearest object points. `fingers` lists the point indices per finger.
pub fn contact_energy(
    hand: &[Vector3<f64>],
    fingers: &[Vec<usize>],
    object: &[Vector3<f64>],
    hand_to_object: &[usize],
    alpha3: f64,
) -> (f64, Vec<Vector3<f64>>) {
    let mut grad = vec![Vector3::zeros(); hand.len()];
    let mut value = 0.0;
    for idx in fingers {
        if idx.is_empty() {
            continue;
        }
        let w = alpha3 / idx.len() as f64;
        for &k in idx {
            let o = &object[hand_to_object[k]];
            value += w * (hand[k] - o).norm();
            grad[k] += unit(&hand[k], o) * w;
        }
    }
    (value, grad)
}

pub type Keypoints = [[Vector3<f64>; KEYPOINTS_PER_FINGER]; 5];

/// `α4 · Σ_g |min(S_g - δ2, 0)|`, where `S_g` is the mean distance from
/// finger `g`'s keypoints to the nearest keypoint on any other finger.
pub fn separation_energy(
    kp: &Keypoints,
    alpha4: f64,
    delta2: f64,
    frozen: Option<&[[(usize, usize); KEYPOINTS_PER_FINGER]; 5]>,
) -> (f64, Keypoints, [[(usize, usize); KEYPOINTS_PER_FINGER]; 5]) {
    let assign = match frozen {
        Some(a) => *a,
        None => std::array::from_fn(|g| {
            std::array::from_fn(|k| {
                let mut best = ((usize::MAX, usize::MAX), f64::INFINITY);
                for (h, other) in kp.iter().enumerate() {
                    if h == g {
                        continue;
                    }
                    for (m, p) in other.iter().enumerate() {
                        let d = (kp[g][k] - p).norm_squared();
                        if d < best.1 {
                            best = ((h, m), d);
                        }
                    }
                }
                best.0
            })
        }),
    };
    let mut grad = [[Vector3::zeros(); KEYPOINTS_PER_FINGER]; 5];
    let mut value = 0.0;
    let n = KEYPOINTS_PER_FINGER as f64;
    for g in 0..5 {
        let s: f64 = (0..KEYPOINTS_PER_FINGER).map(|k| (kp[g][k] - kp[assign[g][k].0][assign[g][k].1]).norm()).sum::<f64>() / n;
        if s < delta2 {
            value += alpha4 * (delta2 - s);
            for k in 0..KEYPOINTS_PER_FINGER {
                let (h, m) = assign[g][k];
                let u = unit(&kp[g][k], &kp[h][m]) * (alpha4 / n);
                grad[g][k] -= u;
                grad[h][m] += u;
            }
        }
    }
    (value, grad, assign)
}

/// Deviation penalty between consecutive frames for each hand joint:
/// `α5 · Σ_h |min(v_h - v̂_h, 0)|` with `v` the displacement from `prev`
/// to `cur`. With `flip` the sign inside the clamp is reversed, which
/// penalises joints moving faster than the reference instead.
#[allow(clippy::too_many_arguments)]
pub fn deviation_energy(
    prev: &[Vector3<f64>],
    cur: &[Vector3<f64>],
    ref_prev: &[Vector3<f64>],
    ref_cur: &[Vector3<f64>],
    alpha5: f64,
    flip: bool,
) -> (f64, Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    let mut g_prev = vec![Vector3::zeros(); cur.len()];
    let mut g_cur = vec![Vector3::zeros(); cur.len()];
    let mut value = 0.0;
    for h in 0..cur.len() {
        let v = (cur[h] - prev[h]).norm();
        let v_ref = (ref_cur[h] - ref_prev[h]).norm();
        let x = if flip { v_ref - v } else { v - v_ref };
        if x < 0.0 {
            value += alpha5 * -x;
            // d|x|/dv = -1 unflipped, +1 flipped
            let dv = if flip { alpha5 } else { -alpha5 };
            let u = unit(&cur[h], &prev[h]) * dv;
            g_cur[h] += u;
            g_prev[h] -= u;
        }
    }
    (value, g_prev, g_cur)
}

/// Total energy over a window of frames with gradients on every pose
/// parameter of every window frame.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub terms: EnergyTerms,
    pub grads: Vec<[f64; POSE_DIM]>,
    pub assignments: Vec<FrameAssignment>,
}

/// Everything the energies need besides the window poses being optimised.
pub struct EnergyModel<'a> {
    skel: &'a Skeleton,
    model: &'a HandModel,
    object: &'a ObjectCloud,
    object_tree: KdTree,
    config: RefineConfig,
    contact_fingers: Vec<Vec<usize>>,
    hand_joints: Vec<usize>,
    reference: Vec<Vec<Vector3<f64>>>,
}

impl<'a> EnergyModel<'a> {
    /// `original` is the window before optimisation; its hand joint
    /// trajectory is the reference for the deviation energy.
    pub fn new(
        skel: &'a Skeleton,
        model: &'a HandModel,
        object: &'a ObjectCloud,
        config: &RefineConfig,
        original: &[Pose],
    ) -> Result<Self> {
        let hand_joints: Vec<usize> = skel.roles().fingers.iter().flatten().copied().collect();
        let mut reference = Vec::with_capacity(original.len());
        for p in original {
            let fk = forward_kinematics(skel, p)?;
            reference.push(hand_joints.iter().map(|&j| fk.positions[j]).collect());
        }
        Ok(Self {
            skel,
            model,
            object,
            object_tree: KdTree::new(object.points()),
            config: config.clone(),
            contact_fingers: (0..CONTACT_FINGERS).map(|f| model.finger_points(f)).collect(),
            hand_joints,
            reference,
        })
    }

    pub fn evaluate(&self, window: &[Pose], frozen: Option<&[FrameAssignment]>) -> Result<Evaluation> {
        if window.len() != self.reference.len() {
            return Err(Error::Shape(format!("window of {} frames, reference has {}", window.len(), self.reference.len())));
        }
        let c = &self.config;
        let last = window.len() - 1;
        let indexed: Vec<usize> = (0..window.len()).collect();
        let per_frame = map_collect(&indexed, |&i| -> Result<(FkState, FkGrad, EnergyTerms, FrameAssignment)> {
            let state = forward_kinematics(self.skel, &window[i])?;
            let surface = self.model.surface(&state);
            let mut g = FkGrad::zeros(self.skel.num_joints());
            let mut terms = EnergyTerms::default();

            let fz = frozen.map(|f| (&f[i].object_to_hand[..], &f[i].hand_to_object[..]));
            let col = collision_energy(&surface.points, &surface.normals, self.object, &self.object_tree, c.alpha1, c.alpha2, c.delta, fz);
            terms.e1 = col.value;
            let mut point_grad = col.hand_grad;
            if i == last && c.alpha3 != 0.0 {
                let (e2, g2) = contact_energy(&surface.points, &self.contact_fingers, self.object.points(), &col.hand_to_object, c.alpha3);
                terms.e2 = e2;
                point_grad.iter_mut().zip(g2).for_each(|(a, b)| *a += b);
            }
            for (sp, pg) in self.model.points.iter().zip(&point_grad) {
                if pg.iter().any(|x| *x != 0.0) {
                    g.add_attached(sp.at.joint, &sp.at.local, pg);
                }
            }

            let kp = self.model.keypoints_world(&state);
            let (e3, kg, kassign) = separation_energy(&kp, c.alpha4, c.delta2, frozen.map(|f| &f[i].keypoints));
            terms.e3 = e3;
            for (f, row) in kg.iter().enumerate() {
                for (k, v) in row.iter().enumerate() {
                    let a = &self.model.keypoints[f][k];
                    g.add_attached(a.joint, &a.local, v);
                }
            }
            let assign = FrameAssignment { object_to_hand: col.object_to_hand, hand_to_object: col.hand_to_object, keypoints: kassign };
            Ok((state, g, terms, assign))
        });

        let mut states = Vec::with_capacity(window.len());
        let mut fgrads = Vec::with_capacity(window.len());
        let mut assignments = Vec::with_capacity(window.len());
        let mut terms = EnergyTerms::default();
        for r in per_frame {
            let (s, g, t, a) = r?;
            terms.e1 += t.e1;
            terms.e2 += t.e2;
            terms.e3 += t.e3;
            states.push(s);
            fgrads.push(g);
            assignments.push(a);
        }

        if c.alpha5 != 0.0 {
            let joints: Vec<Vec<Vector3<f64>>> =
                states.iter().map(|s| self.hand_joints.iter().map(|&j| s.positions[j]).collect()).collect();
            for i in 1..window.len() {
                let (e4, gp, gc) = deviation_energy(&joints[i - 1], &joints[i], &self.reference[i - 1], &self.reference[i], c.alpha5, c.flip_deviation);
                terms.e4 += e4;
                for (k, &j) in self.hand_joints.iter().enumerate() {
                    fgrads[i - 1].positions[j] += gp[k];
                    fgrads[i].positions[j] += gc[k];
                }
            }
        }

        if !terms.is_finite() {
            return Err(Error::NonFinite(format!("hand energy is not finite: {terms}")));
        }
        let mut grads = Vec::with_capacity(window.len());
        for ((pose, state), g) in window.iter().zip(&states).zip(fgrads) {
            grads.push(fk_backward(self.skel, pose, state, g)?);
        }
        Ok(Evaluation { terms, grads, assignments })
    }
}

/// Compares the analytic gradient of `model` at `window` against central
/// differences with step `h` on the 6D coordinates of `joints`, keeping
/// the assignments of the unperturbed window fixed. Returns
/// `|g - g_fd| / max(|g|, |g_fd|)` over all checked coordinates.
pub fn gradient_check(model: &EnergyModel, window: &[Pose], joints: &[usize], h: f64) -> Result<f64> {
    let base = model.evaluate(window, None)?;
    let frozen = Some(&base.assignments[..]);
    let (mut diff, mut na, mut nf) = (0.0, 0.0, 0.0);
    let mut x = window.to_vec();
    for f in 0..window.len() {
        for &j in joints {
            for k in crate::kinematics::pose::rot_range(j) {
                let v = x[f].params()[k];
                x[f].params_mut()[k] = v + h;
                let up = model.evaluate(&x, frozen)?.terms.total();
                x[f].params_mut()[k] = v - h;
                let down = model.evaluate(&x, frozen)?.terms.total();
                x[f].params_mut()[k] = v;
                let fd = (up - down) / (2.0 * h);
                let a = base.grads[f][k];
                diff += (a - fd) * (a - fd);
                na += a * a;
                nf += fd * fd;
            }
        }
    }
    let scale = na.max(nf).sqrt();
    Ok(if scale == 0.0 { 0.0 } else { diff.sqrt() / scale })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_fingers_cost_nothing() {
        let kp: Keypoints = std::array::from_fn(|g| std::array::from_fn(|k| Vector3::new(0.02 * g as f64, 0.01 * k as f64, 0.0)));
        let (e, grad, _) = separation_energy(&kp, 100.0, 0.012, None);
        assert_eq!(e, 0.0);
        assert!(grad.iter().flatten().all(|v| *v == Vector3::zeros()));
    }

    #[test]
    fn one_close_finger() {
        // fingers 0 and 1 are 8 mm apart, the rest 5 cm further out
        let kp: Keypoints = std::array::from_fn(|g| {
            let x = match g {
                0 => 0.0,
                1 => 0.008,
                _ => 0.05 * g as f64,
            };
            std::array::from_fn(|k| Vector3::new(x, 0.01 * k as f64, 0.0))
        });
        let (e, _, _) = separation_energy(&kp, 100.0, 0.012, None);
        // both fingers 0 and 1 see a mean gap of 8 mm
        assert!((e - 2.0 * 100.0 * 0.004).abs() < 1e-12);
    }

    #[test]
    fn separation_is_label_symmetric() {
        let kp: Keypoints = std::array::from_fn(|g| std::array::from_fn(|k| Vector3::new(0.007 * g as f64 + 0.001 * k as f64, 0.01 * k as f64, 0.002 * (g * g) as f64)));
        let perm = [3, 0, 4, 1, 2];
        let permuted: Keypoints = std::array::from_fn(|g| kp[perm[g]]);
        let (a, _, _) = separation_energy(&kp, 100.0, 0.012, None);
        let (b, _, _) = separation_energy(&permuted, 100.0, 0.012, None);
        assert!(a > 0.0);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn deviation_examples() {
        let prev = vec![Vector3::zeros(); 2];
        let cur = vec![Vector3::new(0.004, 0.0, 0.0), Vector3::new(0.0, 0.010, 0.0)];
        let (same, _, _) = deviation_energy(&prev, &cur, &prev, &cur, 10.0, false);
        assert_eq!(same, 0.0);
        let slower = vec![Vector3::new(0.003, 0.0, 0.0), Vector3::new(0.0, 0.012, 0.0)];
        let (e, _, _) = deviation_energy(&prev, &slower, &prev, &cur, 10.0, false);
        assert!((e - 0.01).abs() < 1e-12);
        let (flipped, _, _) = deviation_energy(&prev, &slower, &prev, &cur, 10.0, true);
        assert!((flipped - 0.02).abs() < 1e-12);
    }

    #[test]
    fn contact_energy_mean_distance() {
        let object = vec![Vector3::zeros()];
        let hand = vec![Vector3::new(0.005, 0.0, 0.0), Vector3::new(0.0, -0.005, 0.0), Vector3::new(5.0, 0.0, 0.0)];
        // the far point is not in any contact finger
        let (e, g) = contact_energy(&hand, &[vec![0, 1]], &object, &[0, 0, 0], 50.0);
        assert!((e - 0.25).abs() < 1e-12);
        assert_eq!(g[2], Vector3::zeros());
    }

    fn perturbed_scene(seed: u64) -> (Skeleton, HandModel, ObjectCloud, Vec<Pose>, Vec<Pose>) {
        use rand::{Rng, SeedableRng};
        let skel = Skeleton::default();
        let model = HandModel::new(&skel);
        let scene = crate::synth::hand_sphere_scene(&skel, seed, 0.04, 0.01).unwrap();
        let n = scene.sequence.len();
        let original = scene.sequence.frames[n - 3..].to_vec();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut window = original.clone();
        for p in &mut window {
            for j in skel.roles().fingers.iter().flatten() {
                for k in crate::kinematics::pose::rot_range(*j) {
                    p.params_mut()[k] += rng.random_range(-0.05..0.05);
                }
            }
        }
        (skel, model, scene.object, original, window)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let weights = [[1.0, 1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 50.0, 0.0, 0.0], [0.0, 0.0, 0.0, 100.0, 0.0], [0.0, 0.0, 0.0, 0.0, 10.0]];
        for seed in 0..2 {
            let (skel, model, object, original, window) = perturbed_scene(seed);
            let joints: Vec<usize> = skel.roles().fingers.iter().flatten().copied().collect();
            for (t, w) in weights.iter().enumerate() {
                let config = RefineConfig {
                    alpha1: w[0],
                    alpha2: w[1],
                    alpha3: w[2],
                    alpha4: w[3],
                    alpha5: w[4],
                    delta2: 0.03,
                    ..RefineConfig::default()
                };
                let m = EnergyModel::new(&skel, &model, &object, &config, &original).unwrap();
                let terms = m.evaluate(&window, None).unwrap().terms;
                assert!(terms.total() > 0.0, "term {t} inactive: {terms}");
                let err = gradient_check(&m, &window, &joints, 1e-5).unwrap();
                assert!(err < 1e-4, "term {} seed {seed}: {err:.3e}", t + 1);
            }
        }
    }
}
