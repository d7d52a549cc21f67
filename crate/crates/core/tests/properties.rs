use grasp_core::foot_refine::{blend_airborne, build_groups, refine_feet, retarget_foot, threshold_contacts};
use grasp_core::generator::{generate, loss, GeneratorConfig, LossWeights, Target, Weights};
use grasp_core::hand_refine::{refine_hand, wrist_cone_correct, RefineConfig};
use grasp_core::io;
use grasp_core::kinematics::pose::rot_range;
use grasp_core::kinematics::rotation::{axis_angle, matrix_to_rot6d, rot6d_to_matrix};
use grasp_core::kinematics::{joint_positions, random_pose, wrist_local_finger_positions, HandModel, Pose, POSE_DIM};
use grasp_core::metrics::{inter_volume, joint_trajectory, pskl_j, skating, SkatingAggregate};
use grasp_core::sequence::{mean_filter3, seed_between};
use grasp_core::synth::{hand_sphere_scene, inject_drift, synth_corpus, SynthOptions};
use grasp_core::{MotionSequence, Skeleton};
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_axis(r: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))
}

/// Applies `x -> rot * x + shift` to the whole body.
fn rigid(pose: &Pose, rot: &Matrix3<f64>, shift: &Vector3<f64>) -> Pose {
    let mut p = *pose;
    p.set_translation(&(rot * pose.translation() + shift));
    p.set_rotation(0, &(rot * pose.rotation(0).unwrap()));
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bones_stay_rigid(seed in any::<u64>(), angle in 0.0f64..3.1) {
        let skel = Skeleton::default();
        let pose = random_pose(&mut rng(seed), angle);
        let p = joint_positions(&skel, &pose).unwrap();
        for j in 1..skel.num_joints() {
            let parent = skel.parent(j).unwrap();
            prop_assert!(((p[j] - p[parent]).norm() - skel.bone_length(j)).abs() < 1e-6);
        }
    }

    #[test]
    fn rot6d_round_trip(seed in any::<u64>(), angle in -3.1f64..3.1) {
        let r = axis_angle(&random_axis(&mut rng(seed)), angle);
        let back = rot6d_to_matrix(&matrix_to_rot6d(&r).unwrap()).unwrap();
        prop_assert!((back - r).abs().max() < 1e-9);
    }

    #[test]
    fn wrist_local_fingers_ignore_rigid_motion(seed in any::<u64>(), angle in -3.1f64..3.1) {
        let skel = Skeleton::default();
        let mut r = rng(seed);
        let pose = random_pose(&mut r, 0.8);
        let moved = rigid(&pose, &axis_angle(&random_axis(&mut r), angle), &(random_axis(&mut r) * 3.0));
        let a = wrist_local_finger_positions(&skel, &pose).unwrap();
        let b = wrist_local_finger_positions(&skel, &moved).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).norm() < 1e-9);
        }
    }

    #[test]
    fn seeding_keeps_endpoints_bit_exact(seed in any::<u64>(), t in 2usize..40) {
        let skel = Skeleton::default();
        let mut r = rng(seed);
        let (a, b) = (random_pose(&mut r, 1.0), random_pose(&mut r, 1.0));
        let s = seed_between(&skel, &a, &b, t).unwrap();
        prop_assert_eq!(s.len(), t + 1);
        prop_assert_eq!(s[0].pose(), a);
        prop_assert_eq!(s[t].pose(), b);
        prop_assert!(s.iter().enumerate().all(|(i, f)| f.is_endpoint() == (i == 0 || i == t)));
    }

    #[test]
    fn mean_filter_is_linear(seed in any::<u64>(), n in 2usize..20, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut r = rng(seed);
        let x: Vec<[f64; 2]> = (0..n).map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]).collect();
        let y: Vec<[f64; 2]> = (0..n).map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]).collect();
        let mix: Vec<[f64; 2]> = x.iter().zip(&y).map(|(u, v)| [a * u[0] + b * v[0], a * u[1] + b * v[1]]).collect();
        let (fx, fy, fm) = (mean_filter3(&x), mean_filter3(&y), mean_filter3(&mix));
        for i in 0..n {
            for k in 0..2 {
                prop_assert!((fm[i][k] - (a * fx[i][k] + b * fy[i][k])).abs() < 1e-12);
            }
        }
        prop_assert_eq!(fx[0], x[0]);
        prop_assert_eq!(fx[n - 1], x[n - 1]);
    }

    #[test]
    fn losses_are_non_negative_and_vanish_at_truth(seed in any::<u64>()) {
        let skel = Skeleton::default();
        let mut r = rng(seed);
        let truth: Vec<Pose> = (0..4).map(|_| random_pose(&mut r, 0.7)).collect();
        let c: Vec<[f64; 2]> = (0..4).map(|_| [r.random_range(0.0..1.0), r.random_range(0.0..1.0)]).collect();
        let target = Target::new(&skel, &truth, &c).unwrap();
        let w = LossWeights::default();
        let at_truth = loss::total_loss(&skel, &truth, &c, &target, &w).unwrap().terms;
        prop_assert_eq!(at_truth.total, 0.0);
        let pred: Vec<Pose> = (0..4).map(|_| random_pose(&mut r, 0.7)).collect();
        let t = loss::total_loss(&skel, &pred, &c, &target, &w).unwrap().terms;
        prop_assert!(t.l1 >= 0.0 && t.l2 >= 0.0 && t.l3 >= 0.0 && t.l4 >= 0.0 && t.total > 0.0);
    }

    #[test]
    fn cone_keeps_wrist_distances(seed in any::<u64>(), half in 0.05f64..1.5, radius in 0.1f64..1.0) {
        let mut r = rng(seed);
        let o = random_axis(&mut r);
        let wrists: Vec<Vector3<f64>> = (0..20).map(|i| o + random_axis(&mut r) * (1.2 - i as f64 / 20.0)).collect();
        let c = wrist_cone_correct(&wrists, &o, radius, half);
        for (a, b) in wrists.iter().zip(&c.positions) {
            prop_assert!(((a - o).norm() - (b - o).norm()).abs() < 1e-9);
        }
        if let Some(s) = c.start {
            prop_assert!(wrists[..s].iter().zip(&c.positions).all(|(a, b)| a == b));
            let oa = wrists[s] - o;
            for p in &c.positions[s..] {
                prop_assert!((p - o).angle(&oa) <= half.max(c.max_angle) + 1e-9);
            }
        }
    }

    #[test]
    fn blend_is_affine_in_endpoint_corrections(seed in any::<u64>(), k in 2usize..12, s in -2.0f64..2.0) {
        let mut r = rng(seed);
        let mut v = || [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
        let old: Vec<[f64; 2]> = (0..k).map(|_| v()).collect();
        let (f0, l0, f1, l1) = (v(), v(), v(), v());
        let mixf = [f0[0] + s * (f1[0] - f0[0]), f0[1] + s * (f1[1] - f0[1])];
        let mixl = [l0[0] + s * (l1[0] - l0[0]), l0[1] + s * (l1[1] - l0[1])];
        let (a, b, m) = (blend_airborne(&old, &f0, &l0), blend_airborne(&old, &f1, &l1), blend_airborne(&old, &mixf, &mixl));
        for i in 0..k {
            for d in 0..2 {
                prop_assert!((m[i][d] - (a[i][d] + s * (b[i][d] - a[i][d]))).abs() < 1e-12);
            }
        }
        prop_assert_eq!(m[0], mixf);
        prop_assert_eq!(m[k - 1], mixl);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generate_keeps_endpoints_and_bounds_contacts(seed in any::<u64>(), noise in 0.0f64..1.0) {
        let skel = Skeleton::default();
        let cfg = GeneratorConfig { model_dim: 16, heads: 2, horizon: 8, ..GeneratorConfig::toy() };
        let mut r = rng(seed);
        let mut w = Weights::init(&cfg, &mut r).unwrap();
        for x in &mut w.data {
            *x += r.random_range(-noise..=noise);
        }
        let (a, b) = (random_pose(&mut r, 0.5), random_pose(&mut r, 0.5));
        let g = generate(&w, &seed_between(&skel, &a, &b, cfg.horizon).unwrap(), &skel, 30.0).unwrap();
        prop_assert_eq!(g.sequence.first(), &a);
        prop_assert_eq!(g.sequence.last(), &b);
        prop_assert!(g.output.contact.iter().flatten().all(|c| (0.0..=1.0).contains(c)));
        prop_assert_eq!(g.output.contact.len(), cfg.horizon + 1);
    }

    #[test]
    fn foot_refinement_touches_only_hips_and_knees(seed in 0u64..1000, drift in 0.0f64..0.02) {
        let skel = Skeleton::default();
        let s = synth_corpus(&skel, &SynthOptions::default(), seed, 1).unwrap().remove(0);
        let seq = inject_drift(&skel, &s.sequence, drift, &Vector3::new(0.3, 1.0, 0.0)).unwrap();
        let out = refine_feet(&seq, &skel, 0.5).unwrap();
        let roles = skel.roles();
        let legs = [roles.left_leg, roles.right_leg];
        let moved: Vec<_> = legs.iter().flat_map(|l| [rot_range(l.hip), rot_range(l.knee)]).collect();
        for (p, q) in seq.frames.iter().zip(&out.frames) {
            for k in (0..POSE_DIM).filter(|k| !moved.iter().any(|m| m.contains(k))) {
                prop_assert_eq!(p.params()[k].to_bits(), q.params()[k].to_bits());
            }
        }
        // every contact frame sits on its group's target
        let flags = threshold_contacts(seq.contact_probs.as_ref().unwrap(), 0.5);
        let before: Vec<Vec<Vector3<f64>>> = seq.frames.iter().map(|p| joint_positions(&skel, p).unwrap()).collect();
        let after: Vec<Vec<Vector3<f64>>> = out.frames.iter().map(|p| joint_positions(&skel, p).unwrap()).collect();
        let (mut checked, mut total) = (0, 0);
        for (side, leg) in legs.iter().enumerate() {
            let feet: Vec<Vector3<f64>> = before.iter().map(|j| j[leg.foot]).collect();
            for g in build_groups(&flags[side], &feet) {
                for i in g.frames() {
                    total += 1;
                    if retarget_foot(&skel, &seq.frames[i], leg, &g.target).unwrap().reached {
                        checked += 1;
                        prop_assert!((after[i][leg.foot] - g.target).norm() < 1e-5, "frame {} side {}", i, side);
                    }
                }
            }
        }
        prop_assert!(2 * checked >= total, "{}/{} contact frames reachable", checked, total);
    }

    #[test]
    fn skating_ignores_rigid_motion_about_vertical(seed in 0u64..1000, yaw in -3.1f64..3.1, dx in -5.0f64..5.0, dy in -5.0f64..5.0, dz in -1.0f64..1.0) {
        let skel = Skeleton::default();
        let s = synth_corpus(&skel, &SynthOptions::default(), seed, 1).unwrap().remove(0).sequence;
        let rot = axis_angle(&Vector3::z(), yaw);
        let frames = s.frames.iter().map(|p| rigid(p, &rot, &Vector3::new(dx, dy, dz))).collect();
        let moved = MotionSequence::new(frames, s.fps).unwrap();
        let (a, b) = (skating(&s, &skel, SkatingAggregate::Mean).unwrap(), skating(&moved, &skel, SkatingAggregate::Mean).unwrap());
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        let sum = skating(&s, &skel, SkatingAggregate::Sum).unwrap();
        prop_assert!((sum / (s.len() - 1) as f64 - a).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn motion_files_round_trip_bitwise(seed in any::<u64>(), n in 2usize..6, fps in 1.0f64..120.0, with_contact in any::<bool>()) {
        let mut r = rng(seed);
        let frames: Vec<Pose> = (0..n).map(|_| random_pose(&mut r, 2.0)).collect();
        let mut seq = MotionSequence::new(frames, fps).unwrap();
        if with_contact {
            seq = seq.with_contacts((0..n).map(|_| [r.random_range(0.0..1.0), r.random_range(0.0..1.0)]).collect()).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        io::save_motion(&p, &seq, None).unwrap();
        let (back, _) = io::load_motion(&p).unwrap();
        prop_assert_eq!(back.fps.to_bits(), fps.to_bits());
        prop_assert_eq!(back.frames, seq.frames);
        prop_assert_eq!(back.contact_probs, seq.contact_probs);
    }
}

#[test]
fn points_on_one_bone_keep_their_distance() {
    let skel = Skeleton::default();
    let model = HandModel::new(&skel);
    // two surface points attached to the same finger joint
    let j = skel.roles().fingers[1][1];
    let on_bone: Vec<usize> = model.points.iter().enumerate().filter(|(_, p)| p.at.joint == j).map(|(i, _)| i).collect();
    let (a, b) = (on_bone[0], on_bone[on_bone.len() / 2]);
    let mut r = rng(91);
    let mut dist = None;
    for _ in 0..50 {
        let pose = random_pose(&mut r, 1.2);
        let s = grasp_core::kinematics::hand_surface_points(&skel, &pose, &model).unwrap();
        let d = (s.points[a] - s.points[b]).norm();
        let d0 = *dist.get_or_insert(d);
        assert!((d - d0).abs() < 1e-9);
    }
}

#[test]
fn self_pskl_is_zero_and_volumes_nest() {
    let skel = Skeleton::default();
    let corpus = synth_corpus(&skel, &SynthOptions::default(), 12, 3).unwrap();
    let traj: Vec<_> = corpus.iter().map(|s| joint_trajectory(&skel, &s.sequence).unwrap()).collect();
    assert_eq!(pskl_j(&traj, &traj, 30.0).unwrap(), (0.0, 0.0));
    let vols = [0.3, 0.0, 2.0, 1.5, 0.2, 0.1, 0.4, 0.0, 0.0, 0.9, 0.2];
    let v: Vec<f64> = [1, 5, 10].iter().map(|&n| inter_volume(&vols, n)).collect();
    assert!(v[0] <= v[1] && v[1] <= v[2]);
}

#[test]
fn hand_refinement_is_confined_to_arm_and_fingers() {
    let skel = Skeleton::default();
    let model = HandModel::new(&skel);
    let scene = hand_sphere_scene(&skel, 2, 0.04, 0.01).unwrap();
    let cfg = RefineConfig { iterations: 5, ..RefineConfig::default() };
    let out = refine_hand(&scene.sequence, &scene.object, &skel, &model, &cfg).unwrap();
    let roles = skel.roles();
    let arm = roles.right_arm;
    let mut allowed: Vec<usize> = vec![arm.shoulder, arm.elbow, arm.wrist];
    allowed.extend(roles.fingers[..4].iter().flatten());
    for (p, q) in scene.sequence.frames.iter().zip(&out.sequence.frames) {
        for k in (0..POSE_DIM).filter(|k| !allowed.iter().any(|&j| rot_range(j).contains(k))) {
            assert_eq!(p.params()[k].to_bits(), q.params()[k].to_bits(), "param {k}");
        }
    }
    let n = scene.sequence.len();
    let untouched_fingers = n - cfg.window;
    let finger_params: Vec<usize> = roles.fingers[..4].iter().flatten().flat_map(|&j| rot_range(j)).collect();
    for i in 0..untouched_fingers {
        for &k in &finger_params {
            assert_eq!(scene.sequence.frames[i].params()[k], out.sequence.frames[i].params()[k]);
        }
    }
}
