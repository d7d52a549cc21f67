//! On-disk formats: motion and skeleton JSON, object point clouds as text,
//! the pipeline configuration as TOML, binary weight checkpoints and the
//! loss trace as CSV.

pub mod checkpoint;
pub mod cloud;
pub mod config;
pub mod motion;

use std::path::Path;

pub use checkpoint::{load_weights, read_trace, save_weights, write_trace};
pub use cloud::{load_cloud, parse_cloud, save_cloud, write_cloud};
pub use config::{FootConfig, PipelineConfig};
pub use motion::{load_motion, save_motion, MotionFile, SkeletonRef};

use crate::error::{Error, Result};
use crate::kinematics::{Skeleton, SkeletonConfig};

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Parse { path: path.display().to_string(), line: 0, msg: e.to_string() })
}

pub(crate) fn parse_error(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), line, msg: msg.into() }
}

/// 1-based line of a byte offset.
pub(crate) fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

pub fn load_skeleton(path: &Path) -> Result<Skeleton> {
    let text = read_text(path)?;
    let cfg: SkeletonConfig = serde_json::from_str(&text).map_err(|e| parse_error(path, e.line(), e.to_string()))?;
    Skeleton::from_config(&cfg).map_err(|e| parse_error(path, 0, e.to_string()))
}

pub fn save_skeleton(path: &Path, skel: &Skeleton) -> Result<()> {
    let text = serde_json::to_string_pretty(&skel.to_config()).expect("skeleton serialises");
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn save_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Shape(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| parse_error(path, e.line(), e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skeleton_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("skel.json");
        let skel = Skeleton::default();
        save_skeleton(&p, &skel).unwrap();
        assert_eq!(load_skeleton(&p).unwrap(), skel);
    }
}
