//! Versioned JSON motion files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{load_skeleton, parse_error, read_text};
use crate::error::{Error, Result};
use crate::kinematics::skeleton::{NUM_BODY_JOINTS, NUM_HAND_JOINTS};
use crate::kinematics::{Pose, Skeleton, SkeletonConfig, POSE_DIM};
use crate::sequence::MotionSequence;

pub const MOTION_FORMAT: &str = "graspgen-motion";
pub const MOTION_VERSION: u32 = 1;

/// Where the character comes from: a skeleton file (relative paths are
/// resolved against the motion file's directory) or an inline definition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum SkeletonRef {
    Path(String),
    Inline(SkeletonConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub t: [f64; 3],
    pub phi: [f64; 6],
    pub body: [[f64; 6]; NUM_BODY_JOINTS - 1],
    pub rhand: [[f64; 6]; NUM_HAND_JOINTS],
}

impl FrameRecord {
    pub fn from_pose(p: &Pose) -> Self {
        let x = p.params();
        let block = |j: usize| -> [f64; 6] { std::array::from_fn(|k| x[3 + 6 * j + k]) };
        Self {
            t: [x[0], x[1], x[2]],
            phi: block(0),
            body: std::array::from_fn(|j| block(1 + j)),
            rhand: std::array::from_fn(|j| block(NUM_BODY_JOINTS + j)),
        }
    }

    pub fn to_pose(&self) -> Pose {
        let mut x = [0.0; POSE_DIM];
        x[..3].copy_from_slice(&self.t);
        let blocks = std::iter::once(&self.phi).chain(&self.body).chain(&self.rhand);
        for (j, b) in blocks.enumerate() {
            x[3 + 6 * j..9 + 6 * j].copy_from_slice(b);
        }
        Pose::from_params(x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionFile {
    pub format: String,
    pub version: u32,
    pub fps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skeleton: Option<SkeletonRef>,
    pub frames: Vec<FrameRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contact: Option<Vec<[f64; 2]>>,
}

#[derive(Deserialize)]
struct Header {
    format: Option<String>,
    version: Option<u32>,
}

impl MotionFile {
    pub fn from_sequence(seq: &MotionSequence, skeleton: Option<SkeletonRef>) -> Self {
        Self {
            format: MOTION_FORMAT.into(),
            version: MOTION_VERSION,
            fps: seq.fps,
            skeleton,
            frames: seq.frames.iter().map(FrameRecord::from_pose).collect(),
            contact: seq.contact_probs.clone(),
        }
    }

    pub fn to_sequence(&self) -> Result<MotionSequence> {
        let seq = MotionSequence { frames: self.frames.iter().map(FrameRecord::to_pose).collect(), fps: self.fps, contact_probs: self.contact.clone() };
        seq.validate()?;
        Ok(seq)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let header: Header = serde_json::from_str(text).map_err(|e| parse_error(path, e.line(), e.to_string()))?;
        if header.format.as_deref() != Some(MOTION_FORMAT) {
            return Err(parse_error(path, 1, format!("not a motion file (format must be `{MOTION_FORMAT}`)")));
        }
        match header.version {
            Some(MOTION_VERSION) => {}
            other => {
                return Err(Error::Version { found: other.map_or("none".into(), |v| v.to_string()), expected: MOTION_VERSION.to_string() })
            }
        }
        serde_json::from_str(text).map_err(|e| parse_error(path, e.line(), e.to_string()))
    }

    /// Resolves the skeleton reference; `None` when the file has none.
    pub fn skeleton(&self, base: &Path) -> Result<Option<Skeleton>> {
        match &self.skeleton {
            None => Ok(None),
            Some(SkeletonRef::Inline(cfg)) => Skeleton::from_config(cfg).map(Some),
            Some(SkeletonRef::Path(p)) => load_skeleton(&base.join(p)).map(Some),
        }
    }
}

/// Reads a motion file and its skeleton, falling back to the default
/// character when the file names none.
pub fn load_motion(path: &Path) -> Result<(MotionSequence, Skeleton)> {
    let text = read_text(path)?;
    let file = MotionFile::parse(&text, path)?;
    let seq = file.to_sequence().map_err(|e| parse_error(path, 0, e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let skel = file.skeleton(base)?.unwrap_or_default();
    Ok((seq, skel))
}

pub fn save_motion(path: &Path, seq: &MotionSequence, skeleton: Option<SkeletonRef>) -> Result<()> {
    let file = MotionFile::from_sequence(seq, skeleton);
    let text = serde_json::to_string_pretty(&file).expect("motion serialises");
    std::fs::write(path, text + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::random_pose;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> MotionSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let frames = (0..5).map(|_| random_pose(&mut rng, 1.0)).collect();
        MotionSequence::new(frames, 30.0).unwrap().with_contacts(vec![[0.25, 1.0 / 3.0]; 5]).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let seq = sample();
        save_motion(&p, &seq, None).unwrap();
        let (back, skel) = load_motion(&p).unwrap();
        assert_eq!(back, seq);
        assert_eq!(skel, Skeleton::default());
    }

    #[test]
    fn skeleton_by_path() {
        let dir = tempfile::tempdir().unwrap();
        super::super::save_skeleton(&dir.path().join("s.json"), &Skeleton::default()).unwrap();
        let p = dir.path().join("m.json");
        save_motion(&p, &sample(), Some(SkeletonRef::Path("s.json".into()))).unwrap();
        assert!(load_motion(&p).is_ok());
    }

    #[test]
    fn bad_files_report_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        save_motion(&p, &sample(), None).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();

        let v2 = text.replacen("\"version\": 1", "\"version\": 2", 1);
        std::fs::write(&p, v2).unwrap();
        assert!(matches!(load_motion(&p), Err(Error::Version { .. })));

        let extra = text.replacen("\"fps\": 30.0", "\"fps\": 30.0,\n  \"speed\": 1", 1);
        std::fs::write(&p, extra).unwrap();
        match load_motion(&p) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 5);
                assert!(msg.contains("speed"), "{msg}");
            }
            other => panic!("{other:?}"),
        }

        // drop one 6D block from the first hand list
        let short = text.replacen("\"rhand\": [\n        [", "\"rhand\": [\n        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0]],\n        \"x\": [[", 1);
        std::fs::write(&p, short).unwrap();
        assert!(matches!(load_motion(&p), Err(Error::Parse { line, .. }) if line > 1));
    }
}
