//! Browser bindings for a few of the core operations. Everything works in
//! 2D or returns flat `f64` arrays so the page needs no glue beyond
//! `wasm-bindgen`.

use grasp_core::foot_refine::{refine_feet, two_bone_ik};
use grasp_core::hand_refine::wrist_cone_correct;
use grasp_core::kinematics::joint_positions;
use grasp_core::metrics::{skating, SkatingAggregate};
use grasp_core::synth::{inject_drift, synth_corpus, SynthOptions};
use grasp_core::{MotionSequence, Skeleton};
use nalgebra::Vector3;
use wasm_bindgen::prelude::*;

fn v2(x: f64, y: f64) -> Vector3<f64> {
    Vector3::new(x, y, 0.0)
}

fn js_err(e: grasp_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Planar chain rooted at the origin. The current pose is bent by
/// `bend` radians at the mid joint and points along +x; returns
/// `[mid_x, mid_y, end_x, end_y, reached]` after solving onto the target.
#[wasm_bindgen]
pub fn solve_two_bone(l1: f64, l2: f64, bend: f64, tx: f64, ty: f64) -> Vec<f64> {
    let base = v2(0.0, 0.0);
    let mid = v2(l1, 0.0);
    let end = mid + v2(bend.cos(), bend.sin()) * l2;
    let s = two_bone_ik(&base, &mid, &end, &v2(tx, ty), &Vector3::z());
    vec![s.mid.x, s.mid.y, s.end.x, s.end.y, if s.reached { 1.0 } else { 0.0 }]
}

/// Cone correction of a planar wrist path given as `[x0, y0, x1, y1, ...]`.
/// Returns the corrected path followed by `start` (or -1), the widest
/// angle and whether anything moved.
#[wasm_bindgen]
pub fn cone_correct(path: &[f64], ox: f64, oy: f64, radius: f64, half_angle: f64) -> Vec<f64> {
    let wrists: Vec<Vector3<f64>> = path.chunks_exact(2).map(|c| v2(c[0], c[1])).collect();
    let c = wrist_cone_correct(&wrists, &v2(ox, oy), radius, half_angle);
    let mut out: Vec<f64> = c.positions.iter().flat_map(|p| [p.x, p.y]).collect();
    out.push(c.start.map_or(-1.0, |s| s as f64));
    out.push(c.max_angle);
    out.push(if c.applied { 1.0 } else { 0.0 });
    out
}

/// A synthetic walk with injected sliding, before and after foot cleanup.
#[wasm_bindgen]
pub struct FootDemo {
    before: Vec<f64>,
    after: Vec<f64>,
    contact: Vec<f64>,
    skating_before: f64,
    skating_after: f64,
}

fn foot_tracks(skel: &Skeleton, seq: &MotionSequence) -> Result<Vec<f64>, JsError> {
    let roles = skel.roles();
    let mut out = Vec::with_capacity(seq.len() * 4);
    for p in &seq.frames {
        let j = joint_positions(skel, p).map_err(js_err)?;
        let (l, r) = (j[roles.left_leg.foot], j[roles.right_leg.foot]);
        out.extend([l.x, l.y, r.x, r.y]);
    }
    Ok(out)
}

#[wasm_bindgen]
impl FootDemo {
    /// `drift` is the injected slide in metres per contact frame.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, drift: f64, threshold: f64) -> Result<FootDemo, JsError> {
        let skel = Skeleton::default();
        let opts = SynthOptions { walk: [0.6, 0.9], ..SynthOptions::default() };
        let sample = synth_corpus(&skel, &opts, seed as u64, 1).map_err(js_err)?.remove(0);
        let seq = inject_drift(&skel, &sample.sequence, drift, &Vector3::new(1.0, 0.6, 0.0)).map_err(js_err)?;
        let fixed = refine_feet(&seq, &skel, threshold).map_err(js_err)?;
        let contact = seq.contact_probs.clone().unwrap_or_default().into_iter().flatten().collect();
        Ok(FootDemo {
            before: foot_tracks(&skel, &seq)?,
            after: foot_tracks(&skel, &fixed)?,
            contact,
            skating_before: skating(&seq, &skel, SkatingAggregate::Mean).map_err(js_err)?,
            skating_after: skating(&fixed, &skel, SkatingAggregate::Mean).map_err(js_err)?,
        })
    }

    /// Per frame `[lx, ly, rx, ry]` of the drifted input.
    pub fn before(&self) -> Vec<f64> {
        self.before.clone()
    }

    pub fn after(&self) -> Vec<f64> {
        self.after.clone()
    }

    /// Per frame `[left, right]` contact probabilities.
    pub fn contact(&self) -> Vec<f64> {
        self.contact.clone()
    }

    /// cm/s
    #[wasm_bindgen(getter)]
    pub fn skating_before(&self) -> f64 {
        self.skating_before
    }

    #[wasm_bindgen(getter)]
    pub fn skating_after(&self) -> f64 {
        self.skating_after
    }
}
